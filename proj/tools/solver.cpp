#include "pide/cli.hpp"

int main(int argc, char** argv) { return pide::solver_main(argc, argv); }

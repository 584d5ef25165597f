#include "pide/cli.hpp"
#include "support.hpp"

#include <fstream>

using namespace pide;
using nlohmann::json;
using pide::testing::raises;
using pide::testing::TempDir;

namespace {

json heat_config(const std::filesystem::path& out) {
  return {{"task", "solve"},
          {"seed", 7},
          {"output", out.string()},
          {"model", {{"preset", "heat"}}},
          {"terminal", {{"kind", "square"}}},
          {"numerics", {{"M", 5000}}}};
}

json read_json(const std::filesystem::path& file) {
  std::ifstream is(file);
  return json::parse(is);
}

void write_text(const std::filesystem::path& file, const std::string& text) {
  std::ofstream os(file);
  os << text;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "solver");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return solver_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(ValidateConfig, DefaultsInjected) {
  const auto cfg = validate_config(R"({"seed": 1, "terminal": {"kind": "square"}})");
  EXPECT_EQ(cfg.task, Task::Solve);
  EXPECT_EQ(cfg.N, 50);
  EXPECT_EQ(cfg.M, 100000);
  EXPECT_EQ(cfg.basis.kind, BasisKind::Polynomial);
  EXPECT_EQ(cfg.basis.degree, 4);
  EXPECT_EQ(cfg.normalized["numerics"]["basis"]["degree"], 4);
  EXPECT_EQ(cfg.normalized["model"]["preset"], "heat");
}

TEST(ValidateConfig, UnknownKeyPath) {
  try {
    validate_config(R"({"seed": 1, "modle": {}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    EXPECT_NE(std::string(e.what()).find("modle"), std::string::npos);
  }
  try {
    validate_config(R"({"seed": 1, "model": {"preset": "merton", "rte": 0.1}, "terminal": {"kind": "call"}})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    EXPECT_NE(std::string(e.what()).find("model.rte"), std::string::npos);
  }
}

TEST(ValidateConfig, TypeMismatch) {
  EXPECT_TRUE(raises([] { validate_config(R"({"seed": 1, "numerics": {"N": "50"}, "terminal": {"kind": "square"}})"); },
                     ErrorCode::Schema));
  EXPECT_TRUE(raises([] { validate_config(R"({"seed": 1.5})"); }, ErrorCode::Schema));
  EXPECT_TRUE(raises([] { validate_config("not json"); }, ErrorCode::Schema));
}

TEST(ValidateConfig, SeedRequired) {
  EXPECT_TRUE(raises([] { validate_config(R"({"terminal": {"kind": "square"}})"); }, ErrorCode::Config));
}

TEST(ValidateConfig, WeightExponentRule) {
  const std::string base = R"({"task": "solve-obstacle", "seed": 1, "model": {"preset": "black_scholes"},
    "terminal": {"kind": "put"}, "obstacle": {"kind": "put"}, "weight": {"p": P}})";
  auto with_p = [&](const std::string& p) { return std::string(base).replace(base.find("P}"), 1, p); };
  try {
    validate_config(with_p("2.5"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    EXPECT_NE(std::string(e.what()).find("kappa + d + 1"), std::string::npos);
  }
  const auto ok = validate_config(with_p("3"));
  EXPECT_EQ(ok.basis.kind, BasisKind::Local);
}

TEST(ConfigHash, IgnoresLayoutTracksContent) {
  const auto a = validate_config(R"({"seed": 1, "terminal": {"kind": "square"}, "model": {"preset": "heat"}})");
  const auto b = validate_config("{\n  \"model\" : {\"preset\":\"heat\"},\n\"terminal\":{\"kind\":\"square\"},  \"seed\":1}");
  const auto c = validate_config(R"({"seed": 2, "terminal": {"kind": "square"}, "model": {"preset": "heat"}})");
  const auto d = validate_config(R"({"seed": 1, "terminal": {"kind": "square"}, "numerics": {"N": 50}})");
  const auto e = validate_config(R"({"seed": 1, "terminal": {"kind": "square"}, "numerics": {"N": 51}})");
  const auto f = validate_config(R"({"seed": 1, "terminal": {"kind": "square"}, "output": "elsewhere"})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a), config_hash(d));
  EXPECT_NE(config_hash(a), config_hash(e));
  EXPECT_EQ(config_hash(a), config_hash(f));
  EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(CompareReport, IdenticalFiles) {
  TempDir dir("cmp_same");
  write_xu_csv({-1, 0, 1}, {2, 1, 2}, dir.path() / "a.csv");
  const auto t = compare_report(dir.path() / "a.csv", dir.path() / "a.csv", 0.01, {-1, 1});
  EXPECT_TRUE(t.pass);
  EXPECT_EQ(t.sup, 0.0);
  EXPECT_EQ(t.l2_rho, 0.0);
  for (const auto& r : t.rows) EXPECT_EQ(r.error, 0.0);
}

TEST(CompareReport, ShiftedOracleFails) {
  TempDir dir("cmp_shift");
  write_xu_csv({-1, 0, 1}, {2, 1, 2}, dir.path() / "s.csv");
  write_xu_csv({-1, 0, 1}, {2.2, 1.1, 2.2}, dir.path() / "o.csv");
  const auto t = compare_report(dir.path() / "s.csv", dir.path() / "o.csv", 0.05, {-1, 1});
  EXPECT_FALSE(t.pass);
  EXPECT_NEAR(t.sup, 0.1 / 1.1, 1e-12);
  write_xu_csv({-1, 0, 1}, {2, 1, 2}, dir.path() / "o.csv");
  write_xu_csv({-1, 0, 1}, {1.8, 0.9, 1.8}, dir.path() / "s.csv");
  EXPECT_NEAR(compare_report(dir.path() / "s.csv", dir.path() / "o.csv", 0.05, {-1, 1}).sup, 0.1, 1e-12);
}

TEST(CompareReport, GridMismatch) {
  TempDir dir("cmp_grid");
  write_xu_csv({-1, 0, 1}, {2, 1, 2}, dir.path() / "s.csv");
  write_xu_csv({-1, 0.5, 1}, {2, 1, 2}, dir.path() / "o.csv");
  EXPECT_TRUE(raises([&] { compare_report(dir.path() / "s.csv", dir.path() / "o.csv", 0.05, {-1, 1}); },
                     ErrorCode::GridMismatch));
  // points outside the region do not count
  write_xu_csv({-5, -1, 0, 1}, {9, 2, 1, 2}, dir.path() / "o.csv");
  EXPECT_TRUE(compare_report(dir.path() / "s.csv", dir.path() / "o.csv", 0.05, {-1, 1}).pass);
}

TEST(RunExperiment, DeterministicBody) {
  TempDir dir("run_det");
  const auto a = run_experiment(validate_config(heat_config(dir.path() / "a")), {.deterministic = true});
  const auto b = run_experiment(validate_config(heat_config(dir.path() / "b")), {.deterministic = true});
  EXPECT_EQ(a.exit_code, 0);
  EXPECT_EQ(a.body.dump(), b.body.dump());
  EXPECT_EQ(read_json(dir.path() / "a" / "report.json")["body"].dump(),
            read_json(dir.path() / "b" / "report.json")["body"].dump());
  EXPECT_FALSE(std::filesystem::exists(dir.path() / "a" / ".lock"));
}

TEST(RunExperiment, ArtifactsListed) {
  TempDir dir("run_art");
  const auto r = run_experiment(validate_config(heat_config(dir.path())));
  std::set<std::string> listed;
  for (const auto& a : r.body["artifacts"]) listed.insert(a.get<std::string>());
  for (const auto& entry : std::filesystem::directory_iterator(dir.path()))
    EXPECT_TRUE(listed.count(entry.path().filename().string())) << entry.path();
  for (const auto& name : listed) EXPECT_TRUE(std::filesystem::exists(dir.path() / name)) << name;
}

TEST(RunExperiment, LockedDirectory) {
  TempDir dir("run_lock");
  write_text(dir.path() / ".lock", "1\n");
  EXPECT_TRUE(raises([&] { run_experiment(validate_config(heat_config(dir.path()))); }, ErrorCode::Io));
}

TEST(RunExperiment, NormcheckZeroModel) {
  TempDir dir("run_norm");
  const json cfg = {{"task", "normcheck"}, {"seed", 3}, {"output", dir.path().string()},
                    {"model", {{"preset", "zero"}}}, {"numerics", {{"M", 500}}}};
  const auto r = run_experiment(validate_config(cfg));
  EXPECT_EQ(r.exit_code, 0);
  EXPECT_EQ(r.body["headline"]["min"], 1.0);
  EXPECT_EQ(r.body["headline"]["max"], 1.0);
}

TEST(RunExperiment, HeatAgainstAnalytic) {
  TempDir dir("run_heat_cmp");
  json cfg = heat_config(dir.path());
  cfg["task"] = "compare";
  cfg["numerics"]["M"] = 20000;
  cfg["compare"] = {{"tol_rel", 0.01}, {"region", {0.0, 0.0}}};
  const auto r = run_experiment(validate_config(cfg));
  EXPECT_EQ(r.exit_code, 0) << r.body.dump();
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli_exit");
  json good = heat_config(dir.path() / "good");
  good["expect"] = {{"value", 1.0}, {"tol_abs", 0.05}};
  write_text(dir.path() / "good.json", good.dump());
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "good.json").string()}), 0);

  json failing = heat_config(dir.path() / "fail");
  failing["expect"] = {{"value", 5.0}, {"tol_abs", 0.05}};
  write_text(dir.path() / "fail.json", failing.dump());
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "fail.json").string()}), 2);
  EXPECT_EQ(read_json(dir.path() / "fail" / "report.json")["body"]["status"], "fail");

  write_text(dir.path() / "bad.json", R"({"seed": 1, "modle": {}})");
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "bad.json").string()}), 1);
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "missing.json").string()}), 1);
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "good.json").string(), "--out",
                     (dir.path() / "flags").string(), "--seed", "9", "--threads", "2", "--deterministic"}),
            0);
  const json report = read_json(dir.path() / "flags" / "report.json");
  EXPECT_EQ(report["meta"]["flags"]["seed"], 9);
  EXPECT_EQ(report["meta"]["flags"]["threads"], 2);
  EXPECT_EQ(report["meta"]["flags"]["deterministic"], true);
  EXPECT_EQ(report["body"]["config"]["seed"], 9);
}

TEST(Cli, ModuleErrorsReachReport) {
  TempDir dir("cli_err");
  json cfg = heat_config(dir.path());
  cfg["driver"] = {{"kind", "discount"}, {"rate", 60.0}};
  write_text(dir.path() / "c.json", cfg.dump());
  EXPECT_EQ(run_cli({"solve", "--config", (dir.path() / "c.json").string()}), 1);
  const json report = read_json(dir.path() / "report.json");
  EXPECT_EQ(report["body"]["status"], "error");
  EXPECT_EQ(report["body"]["error"]["code"], "E_CONTRACTION");
}

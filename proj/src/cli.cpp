#include "pide/cli.hpp"

#include "pide/forward.hpp"
#include "pide/normcheck.hpp"
#include "pide/oracle.hpp"
#include "pide/parallel.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace pide {

using nlohmann::json;

std::string to_string(Task task) {
  switch (task) {
    case Task::Simulate: return "simulate";
    case Task::Solve: return "solve";
    case Task::SolveObstacle: return "solve-obstacle";
    case Task::Oracle: return "oracle";
    case Task::Normcheck: return "normcheck";
    case Task::Compare: return "compare";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  for (Task t : {Task::Simulate, Task::Solve, Task::SolveObstacle, Task::Oracle, Task::Normcheck, Task::Compare})
    if (to_string(t) == name) return t;
  throw Error(ErrorCode::Config, "task: unknown task '" + name + "'");
}

// -- schema ----------------------------------------------------------------------------------

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads one JSON object, records the normalized values and rejects keys nobody asked for.
class Block {
 public:
  Block(const json& raw, std::string path) : raw_(raw), path_(std::move(path)) {
    if (!raw_.is_object()) throw Error(ErrorCode::Schema, (path_.empty() ? "config" : path_) + ": expected an object");
  }

  bool has(const std::string& key) const { return raw_.contains(key); }

  /// Early rejection of keys outside `known`, before any rule reads the block.
  void allow(const std::set<std::string>& known) const {
    for (auto it = raw_.begin(); it != raw_.end(); ++it)
      if (!known.count(it.key())) throw Error(ErrorCode::Config, join(path_, it.key()) + ": unknown key");
  }

  double number(const std::string& key, double fallback) {
    const json* v = fetch(key);
    if (!v) return out_[key] = fallback;
    if (!v->is_number()) throw mismatch(key, "number");
    return out_[key] = v->get<double>();
  }
  long integer(const std::string& key, long fallback) {
    const json* v = fetch(key);
    if (!v) return out_[key] = fallback;
    if (!v->is_number_integer()) throw mismatch(key, "integer");
    return out_[key] = v->get<long>();
  }
  bool boolean(const std::string& key, bool fallback) {
    const json* v = fetch(key);
    if (!v) return out_[key] = fallback;
    if (!v->is_boolean()) throw mismatch(key, "boolean");
    return out_[key] = v->get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = fetch(key);
    if (!v) return out_[key] = fallback;
    if (!v->is_string()) throw mismatch(key, "string");
    return out_[key] = v->get<std::string>();
  }
  std::string choice(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed) {
    std::string value = string(key, fallback);
    if (std::find(allowed.begin(), allowed.end(), value) == allowed.end())
      throw Error(ErrorCode::Config, join(path_, key) + ": unknown value '" + value + "'");
    return value;
  }
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) {
    const json* v = fetch(key);
    if (!v) {
      out_[key] = fallback;
      return fallback;
    }
    if (!v->is_array()) throw mismatch(key, "array of numbers");
    std::vector<double> values;
    for (const auto& e : *v) {
      if (!e.is_number()) throw mismatch(key, "array of numbers");
      values.push_back(e.get<double>());
    }
    out_[key] = values;
    return values;
  }
  /// Sub-block; an absent key reads as an empty object.
  Block child(const std::string& key) {
    const json* v = fetch(key);
    static const json empty = json::object();
    return Block(v ? *v : empty, join(path_, key));
  }
  void store(const std::string& key, json value) { out_[key] = std::move(value); }
  const std::string& path() const { return path_; }

  json finish() const {
    for (auto it = raw_.begin(); it != raw_.end(); ++it)
      if (!seen_.count(it.key())) throw Error(ErrorCode::Config, join(path_, it.key()) + ": unknown key");
    return out_;
  }

 private:
  const json* fetch(const std::string& key) {
    seen_.insert(key);
    auto it = raw_.find(key);
    return it == raw_.end() ? nullptr : &*it;
  }
  Error mismatch(const std::string& key, const std::string& expected) const {
    return Error(ErrorCode::Schema, join(path_, key) + ": expected " + expected);
  }

  const json& raw_;
  std::string path_;
  std::set<std::string> seen_;
  json out_ = json::object();
};

bool market_preset(const std::string& preset) {
  return preset == "black_scholes" || preset == "merton" || preset == "kou";
}

json read_model(Block b) {
  const std::string preset =
      b.choice("preset", "heat", {"zero", "heat", "toy_uniform", "black_scholes", "merton", "kou", "explicit"});
  if (preset == "zero" || preset == "heat") {
    if (b.integer("dim", 1) < 1 || b.integer("dim", 1) > kMaxDim)
      throw Error(ErrorCode::Config, join(b.path(), "dim") + ": must lie in [1, " + std::to_string(kMaxDim) + "]");
  }
  if (market_preset(preset)) {
    b.number("rate", 0.05);
    if (!(b.number("vol", 0.2) > 0.0)) throw Error(ErrorCode::Config, join(b.path(), "vol") + ": must be positive");
    if (!(b.number("strike", 100.0) > 0.0))
      throw Error(ErrorCode::Config, join(b.path(), "strike") + ": must be positive");
  }
  if (preset == "merton") {
    b.number("intensity", 1.0);
    b.number("mark_mean", -0.1);
    b.number("mark_sd", 0.15);
  }
  if (preset == "kou") {
    b.number("intensity", 1.0);
    b.number("up", 0.1);
    b.number("down", -0.15);
    b.number("p_up", 0.4);
  }
  if (preset == "explicit") {
    b.number("drift", 0.0);
    b.number("vol", 1.0);
    Block j = b.child("jump");
    const std::string measure = j.choice("measure", "none", {"none", "uniform", "normal", "two_point"});
    if (measure != "none") {
      j.number("intensity", 1.0);
      j.number("scale", 1.0);
    }
    if (measure == "uniform") {
      j.number("lo", -1.0);
      j.number("hi", 1.0);
    } else if (measure == "normal") {
      j.number("mean", 0.0);
      j.number("sd", 0.1);
    } else if (measure == "two_point") {
      j.number("up", 0.1);
      j.number("down", -0.1);
      j.number("p_up", 0.5);
    }
    b.store("jump", j.finish());
  }
  return b.finish();
}

double model_rate(const json& model) { return model.contains("rate") ? model["rate"].get<double>() : 0.0; }
double model_strike(const json& model) { return model.contains("strike") ? model["strike"].get<double>() : 100.0; }
int model_dim(const json& model) { return model.contains("dim") ? model["dim"].get<int>() : 1; }

json read_payoff(Block b, const json& model, const std::vector<std::string>& kinds, const std::string& fallback) {
  const std::string kind = b.choice("kind", fallback, kinds);
  if (kind == "call" || kind == "put") b.number("strike", model_strike(model));
  if (kind == "constant") b.number("value", 0.0);
  return b.finish();
}

}  // namespace

ExperimentConfig validate_config(const std::string& raw) {
  json parsed;
  try {
    parsed = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Schema, std::string("config is not valid JSON: ") + e.what());
  }
  return validate_config(parsed);
}

ExperimentConfig validate_config(const json& raw) {
  Block top(raw, "");
  top.allow({"task", "seed", "output", "model", "driver", "terminal", "obstacle", "numerics", "weight", "oracle",
             "normcheck", "compare", "expect"});
  ExperimentConfig cfg;

  if (top.has("task")) cfg.task = parse_task(top.string("task", ""));
  else top.store("task", to_string(cfg.task));
  if (!top.has("seed")) throw Error(ErrorCode::Config, "seed: required");
  const long seed = top.integer("seed", 0);
  if (seed < 0) throw Error(ErrorCode::Config, "seed: must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.output = top.string("output", "out");

  const json model = read_model(top.child("model"));
  top.store("model", model);
  const std::string preset = model["preset"];
  const int dim = model_dim(model);

  {
    Block d = top.child("driver");
    const std::string kind = d.choice("kind", "zero", {"zero", "discount", "borrowing", "linear"});
    if (kind == "discount" || kind == "borrowing") d.number("rate", model_rate(model));
    if (kind == "borrowing") {
      d.number("borrow_rate", model_rate(model) + 0.05);
      d.number("vol", model.contains("vol") ? model["vol"].get<double>() : 1.0);
    }
    if (kind == "linear") {
      d.number("a", 0.0);
      d.number("b", 0.0);
      d.number("f0", 0.0);
    }
    top.store("driver", d.finish());
  }

  const bool needs_terminal = cfg.task != Task::Simulate && cfg.task != Task::Normcheck;
  if (top.has("terminal") || needs_terminal) {
    if (needs_terminal && !top.has("terminal")) throw Error(ErrorCode::Config, "terminal: required for this task");
    top.store("terminal", read_payoff(top.child("terminal"), model, {"square", "constant", "call", "put"}, "square"));
  }
  const bool has_obstacle = top.has("obstacle");
  json top_obstacle;
  if (has_obstacle) {
    top_obstacle = read_payoff(top.child("obstacle"), model, {"put", "constant"}, "put");
    top.store("obstacle", top_obstacle);
  }
  if (cfg.task == Task::SolveObstacle && !has_obstacle)
    throw Error(ErrorCode::Config, "obstacle: required for solve-obstacle");

  {
    Block n = top.child("numerics");
    cfg.N = static_cast<int>(n.integer("N", 50));
    cfg.M = static_cast<int>(n.integer("M", 100000));
    cfg.T = n.number("T", 1.0);
    cfg.x0 = n.number("x0", 0.0);
    if (cfg.N < 1) throw Error(ErrorCode::Config, "numerics.N: must be positive");
    if (cfg.M < 2) throw Error(ErrorCode::Config, "numerics.M: must be at least 2");
    if (!(cfg.T > 0.0)) throw Error(ErrorCode::Config, "numerics.T: must be positive");
    if (n.number("spread", 0.0) < 0.0) throw Error(ErrorCode::Config, "numerics.spread: must be non-negative");
    if (n.integer("picard_iters", 3) < 1) throw Error(ErrorCode::Config, "numerics.picard_iters: must be positive");
    n.choice("target", "multistep", {"multistep", "onestep"});
    n.boolean("martingale_control", true);
    n.numbers("eval_x", {});
    n.boolean("write_paths_csv", false);
    n.numbers("schedule", {});
    n.number("tol", -1.0);
    n.boolean("stop_early", true);
    Block basis = n.child("basis");
    const std::string kind = basis.choice("kind", has_obstacle ? "local" : "polynomial", {"polynomial", "local"});
    const long degree = basis.integer("degree", 4);
    const long cells = basis.integer("cells", 16);
    if (degree < 0 || cells < 1) throw Error(ErrorCode::Config, "numerics.basis: degree >= 0 and cells >= 1");
    cfg.basis = kind == "local" ? RegressionBasis::local(static_cast<int>(cells))
                                : RegressionBasis::polynomial(static_cast<int>(degree));
    n.store("basis", basis.finish());
    top.store("numerics", n.finish());
  }

  {
    Block w = top.child("weight");
    cfg.p = w.number("p", 4.0);
    if (!(cfg.p > 0.0)) throw Error(ErrorCode::Config, "weight.p: must be positive");
    top.store("weight", w.finish());
  }
  if (has_obstacle) {
    ExperimentConfig probe;
    probe.normalized = {{"obstacle", top_obstacle}};
    const double kappa = build_obstacle(probe)->kappa;
    const double needed = min_weight_exponent(kappa, dim);
    if (cfg.p < needed) {
      std::ostringstream msg;
      msg << "weight.p: obstacle growth kappa = " << kappa << " in dimension " << dim << " needs p >= kappa + d + 1 = "
          << needed << ", got " << cfg.p;
      throw Error(ErrorCode::Config, msg.str());
    }
  }

  if (top.has("oracle") || cfg.task == Task::Oracle || cfg.task == Task::Compare) {
    Block o = top.child("oracle");
    std::string fallback = "fd";
    if (preset == "merton" && !has_obstacle) fallback = "merton";
    if (preset == "black_scholes") fallback = has_obstacle ? "binomial" : "black_scholes";
    if ((preset == "heat" || preset == "zero" || preset == "toy_uniform") && !has_obstacle) fallback = "analytic";
    const std::string kind = o.choice("kind", fallback, {"fd", "merton", "binomial", "black_scholes", "analytic"});
    if (kind == "fd") {
      const double lo = o.number("x_lo", -5.0), hi = o.number("x_hi", 5.0);
      if (!(hi > lo)) throw Error(ErrorCode::Config, "oracle.x_lo: must lie below oracle.x_hi");
      if (o.integer("J", 401) < 3) throw Error(ErrorCode::Config, "oracle.J: needs at least 3 nodes");
      if (o.integer("steps", 400) < 1) throw Error(ErrorCode::Config, "oracle.steps: must be positive");
      o.choice("boundary", "dirichlet", {"dirichlet", "linear"});
    }
    if (kind == "binomial" && o.integer("steps", 2000) < 1)
      throw Error(ErrorCode::Config, "oracle.steps: must be positive");
    if ((kind == "merton" && preset != "merton") || ((kind == "binomial" || kind == "black_scholes") && preset != "black_scholes"))
      throw Error(ErrorCode::Config, "oracle.kind: '" + kind + "' does not apply to model preset '" + preset + "'");
    if (kind == "analytic" && (preset == "black_scholes" || preset == "merton" || preset == "kou" || preset == "explicit"))
      throw Error(ErrorCode::Config, "oracle.kind: analytic values exist for zero, heat and toy_uniform only");
    top.store("oracle", o.finish());
  }

  if (top.has("normcheck") || cfg.task == Task::Normcheck) {
    Block nc = top.child("normcheck");
    nc.number("t", 0.0);
    nc.numbers("s", {0.1, 0.5, 1.0});
    if (nc.integer("R", 8) < 1) throw Error(ErrorCode::Config, "normcheck.R: must be positive");
    nc.integer("per_panel", 8);
    nc.integer("steps", 10);
    nc.boolean("spacetime", true);
    const auto bracket = nc.numbers("bracket", {});
    if (!bracket.empty() && bracket.size() != 2) throw Error(ErrorCode::Config, "normcheck.bracket: needs [lo, hi]");
    top.store("normcheck", nc.finish());
  }

  if (top.has("compare") || cfg.task == Task::Compare) {
    Block c = top.child("compare");
    c.string("solver_csv", "");
    c.string("oracle_csv", "");
    if (!(c.number("tol_rel", 0.02) > 0.0)) throw Error(ErrorCode::Config, "compare.tol_rel: must be positive");
    const auto region = c.numbers("region", {-0.5, 0.5});
    if (region.size() != 2 || !(region[1] >= region[0]))
      throw Error(ErrorCode::Config, "compare.region: needs [lo, hi] with lo <= hi");
    c.numbers("points", {});
    top.store("compare", c.finish());
  }

  if (top.has("expect")) {
    Block e = top.child("expect");
    if (!e.has("value")) throw Error(ErrorCode::Config, "expect.value: required");
    e.number("value", 0.0);
    e.number("tol_abs", 0.0);
    e.number("tol_rel", 0.0);
    e.number("stderr_mult", 0.0);
    top.store("expect", e.finish());
  }

  cfg.normalized = top.finish();
  cfg.normalized["seed"] = cfg.seed;
  return cfg;
}

// -- builders --------------------------------------------------------------------------------

ModelSpec build_model(const ExperimentConfig& config) {
  const json& m = config.normalized.at("model");
  const std::string preset = m.at("preset");
  if (preset == "zero") return zero_model(m.at("dim").get<int>());
  if (preset == "heat") return heat_model(m.at("dim").get<int>());
  if (preset == "toy_uniform") return toy_uniform_model();
  MarketParams market;
  if (market_preset(preset)) {
    market.rate = m.at("rate");
    market.vol = m.at("vol");
    market.strike = m.at("strike");
  }
  if (preset == "black_scholes") return black_scholes_model(market);
  if (preset == "merton") return merton_model(market, {m.at("intensity"), m.at("mark_mean"), m.at("mark_sd")});
  if (preset == "kou") return kou_model(market, {m.at("intensity"), m.at("up"), m.at("down"), m.at("p_up")});

  const double b = m.at("drift"), s = m.at("vol");
  ModelSpec model = zero_model(1);
  model.name = "explicit";
  model.drift = [b](const Point&) { return Point::Constant(1, b); };
  model.diffusion = [s](const Point&) { return SquareMatrix::Constant(1, 1, s); };
  model.coef_bound = std::max({1.0, std::abs(b), std::abs(s)});
  const json& j = m.at("jump");
  const std::string measure = j.at("measure");
  if (measure == "none") return model;
  const double intensity = j.at("intensity"), scale = j.at("scale");
  if (measure == "uniform") model.jumps = JumpMeasure::uniform(j.at("lo"), j.at("hi"), intensity);
  if (measure == "normal") model.jumps = JumpMeasure::normal(j.at("mean"), j.at("sd"), intensity);
  if (measure == "two_point") model.jumps = JumpMeasure::two_point(j.at("up"), j.at("down"), j.at("p_up"), intensity);
  model.jump = [scale](const Point&, const Mark& e) { return Point(scale * e); };
  model.jump_jacobian = [](const Point&, const Mark&) { return SquareMatrix::Zero(1, 1); };
  const double comp = model.jumps.integrate([scale](const Mark& e) { return scale * e(0); });
  model.compensator = [comp](const Point&) { return Point::Constant(1, comp); };
  model.jump_bound = std::max(1.0, std::abs(scale));
  return model;
}

DriverSpec build_driver(const ExperimentConfig& config) {
  const json& d = config.normalized.at("driver");
  const std::string kind = d.at("kind");
  if (kind == "discount") return discount_driver(d.at("rate"));
  if (kind == "borrowing") return borrowing_driver(d.at("rate"), d.at("borrow_rate"), d.at("vol"));
  if (kind == "linear") {
    const int dim = model_dim(config.normalized.at("model"));
    return linear_driver(d.at("a"), Point::Constant(dim, d.at("b").get<double>()), Functionals(0), d.at("f0"), {});
  }
  return zero_driver();
}

TerminalSpec build_terminal(const ExperimentConfig& config) {
  if (!config.normalized.contains("terminal")) throw Error(ErrorCode::Config, "terminal: missing");
  const json& t = config.normalized.at("terminal");
  const std::string kind = t.at("kind");
  if (kind == "constant") return constant_terminal(t.at("value"));
  if (kind == "call") return call_terminal(t.at("strike"));
  if (kind == "put") return put_terminal(t.at("strike"));
  return square_terminal();
}

std::optional<ObstacleSpec> build_obstacle(const ExperimentConfig& config) {
  if (!config.normalized.contains("obstacle")) return std::nullopt;
  const json& o = config.normalized.at("obstacle");
  if (o.at("kind") == "constant") return constant_obstacle(o.at("value"));
  return put_obstacle(o.at("strike"));
}

// -- hashing ---------------------------------------------------------------------------------

namespace {

std::string sha256_hex(const std::string& text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::Numeric, "SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < length; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

json hashed_config(const ExperimentConfig& config) {
  json body = config.normalized;
  body.erase("output");
  return body;
}

}  // namespace

std::string config_hash(const ExperimentConfig& config) { return sha256_hex(hashed_config(config).dump()); }

// -- compare ---------------------------------------------------------------------------------

namespace {

std::vector<std::pair<double, double>> read_xu_csv(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + file.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::Io, file.string() + " is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  const auto col = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::Io, file.string() + " lacks a column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t cx = col("x"), cu = col("u");
  std::vector<std::pair<double, double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < header.size()) throw Error(ErrorCode::Io, file.string() + ": short row '" + line + "'");
    try {
      rows.emplace_back(std::stod(cells[cx]), std::stod(cells[cu]));
    } catch (const std::exception&) {
      throw Error(ErrorCode::Io, file.string() + ": unreadable row '" + line + "'");
    }
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

bool same_x(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)}); }

}  // namespace

CompareTable compare_report(const std::filesystem::path& solver_csv, const std::filesystem::path& oracle_csv,
                            double tol_rel, std::pair<double, double> region, const WeightFunction& rho) {
  const auto inside = [&](double x) { return x >= region.first - 1e-12 && x <= region.second + 1e-12; };
  std::vector<std::pair<double, double>> solver, oracle;
  for (const auto& r : read_xu_csv(solver_csv))
    if (inside(r.first)) solver.push_back(r);
  for (const auto& r : read_xu_csv(oracle_csv))
    if (inside(r.first)) oracle.push_back(r);
  if (solver.size() != oracle.size() || solver.empty())
    throw Error(ErrorCode::GridMismatch, "solver has " + std::to_string(solver.size()) + " points in the region, oracle " +
                                             std::to_string(oracle.size()));
  CompareTable table;
  table.tol = tol_rel;
  for (std::size_t i = 0; i < solver.size(); ++i) {
    if (!same_x(solver[i].first, oracle[i].first)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "solver x = " << solver[i].first << " against oracle x = " << oracle[i].first;
      throw Error(ErrorCode::GridMismatch, msg.str());
    }
    CompareRow row{oracle[i].first, solver[i].second, oracle[i].second, 0.0};
    const double diff = std::abs(row.solver - row.oracle);
    row.error = row.oracle == 0.0 ? diff : diff / std::abs(row.oracle);
    table.sup = std::max(table.sup, row.error);
    table.rows.push_back(row);
  }
  double num = 0.0, den = 0.0;
  const std::size_t n = table.rows.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double left = i > 0 ? table.rows[i].x - table.rows[i - 1].x : 0.0;
    const double right = i + 1 < n ? table.rows[i + 1].x - table.rows[i].x : 0.0;
    double w = 0.5 * (left + right) * rho(table.rows[i].x);
    if (n == 1) w = 1.0;
    num += w * table.rows[i].error * table.rows[i].error;
    den += w;
  }
  table.l2_rho = den > 0.0 ? std::sqrt(num / den) : 0.0;
  table.pass = table.sup <= tol_rel;
  return table;
}

void write_compare_csv(const CompareTable& table, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "x,solver,oracle,error\n";
  for (const auto& r : table.rows) os << r.x << ',' << r.solver << ',' << r.oracle << ',' << r.error << '\n';
}

void write_xu_csv(const std::vector<double>& x, const std::vector<double>& u, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + file.string());
  os.precision(17);
  os << "x,u\n";
  for (std::size_t i = 0; i < x.size(); ++i) os << x[i] << ',' << u[i] << '\n';
}

// -- runner ----------------------------------------------------------------------------------

namespace {

class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : file_(dir / ".lock") {
    fd_ = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw Error(ErrorCode::Io, "output directory is locked by another run: " + file_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto written = ::write(fd_, pid.data(), pid.size());
  }
  ~DirectoryLock() {
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(file_, ec);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path file_;
  int fd_ = -1;
};

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string host_name() {
  char buf[256] = {};
  if (::gethostname(buf, sizeof buf - 1) != 0) return "unknown";
  return buf;
}

struct Context {
  const ExperimentConfig& cfg;
  std::filesystem::path out;
  json headline = json::object();
  json criteria = json::array();
  json artifacts = json::array();

  std::filesystem::path artifact(const std::string& name) {
    artifacts.push_back(name);
    return out / name;
  }
  void criterion(const std::string& name, bool pass, double value, double threshold) {
    criteria.push_back({{"name", name}, {"pass", pass}, {"value", value}, {"threshold", threshold}});
  }
  const json& block(const std::string& name) const { return cfg.normalized.at(name); }
  WeightFunction rho() const { return WeightFunction{cfg.p}; }
};

std::vector<double> eval_points(const Context& ctx) {
  auto xs = ctx.block("numerics").at("eval_x").get<std::vector<double>>();
  if (xs.empty()) xs.push_back(ctx.cfg.x0);
  return xs;
}

BsdeOptions bsde_options(const Context& ctx) {
  const json& n = ctx.block("numerics");
  BsdeOptions o;
  o.picard_iters = n.at("picard_iters");
  o.target = n.at("target") == "onestep" ? RegressionTarget::OneStep : RegressionTarget::MultiStep;
  o.martingale_control = n.at("martingale_control");
  return o;
}

PathBundle simulate(const Context& ctx, const ModelSpec& model, double x0) {
  SimulationOptions so;
  so.initial_spread = ctx.block("numerics").at("spread");
  return simulate_paths(model, TimeGrid(0.0, ctx.cfg.T, ctx.cfg.N), Point::Constant(model.dim, x0), ctx.cfg.M,
                        ctx.cfg.seed, so);
}

void check_expectation(Context& ctx, double value, double stderr_value) {
  if (!ctx.cfg.normalized.contains("expect")) return;
  const json& e = ctx.block("expect");
  const double target = e.at("value"), tol_abs = e.at("tol_abs"), tol_rel = e.at("tol_rel"), mult = e.at("stderr_mult");
  const double err = std::abs(value - target);
  if (tol_abs > 0.0) ctx.criterion("expect_abs", err <= tol_abs, err, tol_abs);
  if (tol_rel > 0.0) {
    const double rel = target != 0.0 ? err / std::abs(target) : err;
    ctx.criterion("expect_rel", rel <= tol_rel, rel, tol_rel);
  }
  if (mult > 0.0) ctx.criterion("expect_stderr", err <= mult * stderr_value, err, mult * stderr_value);
}

std::vector<Point> as_points(const std::vector<double>& xs, int dim) {
  std::vector<Point> pts;
  for (double x : xs) pts.push_back(Point::Constant(dim, x));
  return pts;
}

void run_simulate(Context& ctx) {
  const ModelSpec model = build_model(ctx.cfg);
  const PathBundle paths = simulate(ctx, model, ctx.cfg.x0);
  write_paths_binary(paths, ctx.artifact("paths.bin"));
  if (ctx.block("numerics").at("write_paths_csv").get<bool>()) write_paths_csv(paths, ctx.artifact("paths.csv"));
  const Point x0 = Point::Constant(model.dim, ctx.cfg.x0);
  const MomentReport moments = moment_report(paths, x0, 2.0);
  ctx.headline["moment_ratio_p2"] = moments.ratio;
  ctx.headline["moment_ratio_stderr"] = moments.standard_error;
  ctx.headline["mean_terminal"] = paths.states.back().row(0).mean();
  ctx.criterion("paths_finite", all_finite(paths.states.back()), 0.0, 0.0);
  if (ctx.cfg.N >= 2) {
    const double s = paths.grid.time(ctx.cfg.N / 2);
    const double flow = check_flow_property(model, 0.0, s, ctx.cfg.T, ctx.cfg.N, x0, std::min(ctx.cfg.M, 1000),
                                            ctx.cfg.seed);
    ctx.headline["flow_discrepancy"] = flow;
    ctx.criterion("flow_property", flow < 1e-12, flow, 1e-12);
  }
}

void run_solve(Context& ctx) {
  const ModelSpec model = build_model(ctx.cfg);
  const PathBundle paths = simulate(ctx, model, ctx.cfg.x0);
  const BsdeSolution sol =
      solve_bsde(model, build_driver(ctx.cfg), build_terminal(ctx.cfg), paths, ctx.cfg.basis, bsde_options(ctx));
  write_solution_csv(sol, as_points(eval_points(ctx), model.dim), ctx.artifact("solution.csv"));
  write_diagnostics_json(sol, ctx.artifact("diagnostics.json"));
  ctx.headline["y0"] = sol.y0;
  ctx.headline["y0_stderr"] = sol.y0_stderr;
  ctx.headline["clamped"] = sol.diagnostics.clamp_total;
  ctx.criterion("finite", std::isfinite(sol.y0) && std::isfinite(sol.y0_stderr), sol.y0, 0.0);
  check_expectation(ctx, sol.y0, sol.y0_stderr);
}

ReflectedOptions reflected_options(const Context& ctx) {
  const json& n = ctx.block("numerics");
  ReflectedOptions o;
  o.schedule = n.at("schedule").get<std::vector<double>>();
  o.tol = n.at("tol");
  o.stop_early = n.at("stop_early");
  o.rho = ctx.rho();
  o.bsde = bsde_options(ctx);
  return o;
}

json trace_json(const std::vector<PenaltyLevel>& trace) {
  json levels = json::array();
  for (const auto& l : trace)
    levels.push_back({{"n", l.n},
                      {"penalty_norm", l.penalty.value},
                      {"penalty_stderr", l.penalty.standard_error},
                      {"skorokhod_normalized", l.skorokhod.normalized},
                      {"y0", l.y0},
                      {"mass", l.mass}});
  return levels;
}

void run_solve_obstacle(Context& ctx) {
  const ModelSpec model = build_model(ctx.cfg);
  const ObstacleSpec obstacle = *build_obstacle(ctx.cfg);
  const PathBundle paths = simulate(ctx, model, ctx.cfg.x0);
  ReflectedSolution sol;
  try {
    sol = solve_reflected(model, build_driver(ctx.cfg), build_terminal(ctx.cfg), obstacle, paths, ctx.cfg.basis,
                          reflected_options(ctx));
  } catch (const NoConvergenceError& e) {
    ctx.headline["levels"] = trace_json(e.trace());
    ctx.headline["message"] = e.what();
    const double last = e.trace().empty() ? 0.0 : e.trace().back().penalty.value;
    ctx.criterion("penalty_converged", false, last, 0.0);
    return;
  }
  const auto pts = as_points(eval_points(ctx), model.dim);
  write_solution_csv(sol.solution, pts, ctx.artifact("solution.csv"));
  write_diagnostics_json(sol.solution, ctx.artifact("diagnostics.json"));
  write_trace_json(sol, ctx.artifact("trace.json"));
  write_measure_csv(sol.measure, ctx.artifact("measure.csv"));
  write_level_grids(sol, pts, ctx.out);
  for (std::size_t i = 0; i < sol.trace.size(); ++i) ctx.artifacts.push_back("u_level_" + std::to_string(i) + ".csv");

  const PenaltyLevel& last = sol.trace.back();
  ctx.headline["y0"] = last.y0;
  ctx.headline["y0_stderr"] = last.y0_stderr;
  ctx.headline["reflected_y0"] = sol.reflected_y0;
  ctx.headline["reflected_y0_stderr"] = sol.reflected_y0_stderr;
  ctx.headline["levels"] = trace_json(sol.trace);
  const SupportReport support = support_check(sol.measure, ctx.rho(), 0.005 * obstacle.iota);
  ctx.headline["support_off_fraction"] = support.fraction;
  ctx.criterion("penalty_converged", sol.converged, last.penalty.value, sol.tol);
  ctx.criterion("skorokhod_normalized", last.skorokhod.normalized <= 0.02, last.skorokhod.normalized, 0.02);
  ctx.criterion("measure_support", support.trivial || support.fraction <= 0.05, support.fraction, 0.05);
  check_expectation(ctx, last.y0, last.y0_stderr);
}

// Oracle values at `xs` (log-moneyness or raw state), plus the price at x0.
std::vector<double> oracle_values(Context& ctx, const std::vector<double>& xs, bool write_grid) {
  const json& o = ctx.block("oracle");
  const json& m = ctx.block("model");
  const std::string kind = o.at("kind");
  const TerminalSpec terminal = build_terminal(ctx.cfg);
  const auto obstacle = build_obstacle(ctx.cfg);
  const std::string payoff = ctx.block("terminal").at("kind");
  const double T = ctx.cfg.T;
  std::vector<double> values;

  const auto option_kind = [&] {
    if (payoff == "call") return OptionKind::Call;
    if (payoff == "put") return OptionKind::Put;
    throw Error(ErrorCode::Config, "oracle.kind: '" + kind + "' prices calls and puts only");
  };
  const double strike = ctx.block("terminal").contains("strike") ? ctx.block("terminal").at("strike").get<double>()
                                                                   : model_strike(m);
  const auto check_discount = [&] {
    const json& d = ctx.block("driver");
    if (d.at("kind") != "discount" || std::abs(d.at("rate").get<double>() - m.at("rate").get<double>()) > 0.0)
      throw Error(ErrorCode::Config, "oracle.kind: closed forms assume driver.kind = discount at the model rate");
  };

  if (kind == "fd") {
    FdGrid grid;
    grid.x_lo = o.at("x_lo");
    grid.x_hi = o.at("x_hi");
    grid.J = o.at("J");
    grid.N = o.at("steps");
    grid.T = T;
    grid.boundary = o.at("boundary") == "linear" ? BoundaryKind::Linear : BoundaryKind::Dirichlet;
    const FdSolution fd = fd_solve_pide(build_model(ctx.cfg), build_driver(ctx.cfg), terminal, obstacle, grid);
    if (write_grid) write_fd_csv(fd, grid, ctx.artifact("fd.csv"));
    ctx.headline["fd_explicit_bound"] = fd.explicit_bound;
    for (double x : xs) {
      if (x < grid.x_lo || x > grid.x_hi) throw Error(ErrorCode::Domain, "oracle point outside the FD grid");
      values.push_back(fd.value(x));
    }
    return values;
  }
  if (kind == "analytic") {
    if (payoff != "square" || ctx.block("driver").at("kind") != "zero")
      throw Error(ErrorCode::Config, "oracle.kind: analytic values cover g = |x|^2 with a zero driver");
    const ModelSpec model = build_model(ctx.cfg);
    // u = |x|^2 + T (trace sigma sigma^* + int |e|^2 lambda(de)) for these additive models
    double rate = (model.sigma(Point::Zero(model.dim)).squaredNorm());
    if (model.has_jumps()) rate += model.jumps.integrate([](const Mark& e) { return e.squaredNorm(); });
    for (double x : xs) values.push_back(model.dim * x * x + T * rate);
    return values;
  }
  check_discount();
  const double r = m.at("rate"), vol = m.at("vol");
  for (double x : xs) {
    const double S = strike * std::exp(x);
    if (kind == "merton") {
      MertonParams p{S, strike, r, vol, T, m.at("intensity"), m.at("mark_mean"), m.at("mark_sd")};
      values.push_back(option_kind() == OptionKind::Call ? merton_price(p) : merton_put(p));
    } else if (kind == "binomial") {
      values.push_back(binomial_price(S, strike, r, vol, T, o.at("steps"), option_kind(), obstacle.has_value()));
    } else {
      values.push_back(black_scholes(S, strike, r, vol, T, option_kind()));
    }
  }
  return values;
}

void run_oracle(Context& ctx) {
  auto xs = eval_points(ctx);
  xs.push_back(ctx.cfg.x0);
  auto values = oracle_values(ctx, xs, true);
  const double price = values.back();
  xs.pop_back();
  values.pop_back();
  write_xu_csv(xs, values, ctx.artifact("oracle.csv"));
  write_price_json({price, 0.0}, ctx.artifact("price.json"));
  ctx.headline["price"] = price;
  ctx.criterion("finite", std::isfinite(price), price, 0.0);
  check_expectation(ctx, price, 0.0);
}

void run_normcheck(Context& ctx) {
  const json& nc = ctx.block("normcheck");
  const ModelSpec model = build_model(ctx.cfg);
  NormcheckOptions opts;
  opts.M = ctx.cfg.M;
  opts.seed = ctx.cfg.seed;
  opts.steps = nc.at("steps");
  const auto rule = unit_panel_rule(nc.at("R"), nc.at("per_panel"));
  const double t = nc.at("t");
  const auto s = nc.at("s").get<std::vector<double>>();
  const NormRatioReport report = norm_ratio(model, ctx.rho(), shipped_family(), t, s, rule, opts);
  write_norm_csv(report, ctx.artifact("norm.csv"));
  write_norm_summary(report, ctx.artifact("norm_summary.json"));
  ctx.headline["min"] = report.min;
  ctx.headline["max"] = report.max;
  ctx.headline["max_stderr"] = report.max_stderr;
  ctx.criterion("ratios_positive_finite", report.min > 0.0 && std::isfinite(report.max), report.min, 0.0);
  if (model.name == "zero") {
    const bool exact = report.min == 1.0 && report.max == 1.0;
    ctx.criterion("unit_ratios", exact, std::max(std::abs(report.min - 1.0), std::abs(report.max - 1.0)), 0.0);
  }
  const auto bracket = nc.at("bracket").get<std::vector<double>>();
  if (bracket.size() == 2) {
    ctx.criterion("bracket_lo", report.min >= bracket[0], report.min, bracket[0]);
    ctx.criterion("bracket_hi", report.max <= bracket[1], report.max, bracket[1]);
  }
  if (nc.at("spacetime").get<bool>()) {
    const double T = *std::max_element(s.begin(), s.end());
    std::vector<SpaceTimeFunction> psi{
        {"one", [](double, const Point&) { return 1.0; }},
        {"exp(-x^2)", [](double, const Point& x) { return std::exp(-x.squaredNorm()); }},
    };
    const NormRatioReport st = spacetime_norm_ratio(model, ctx.rho(), psi, t, T, rule, opts);
    write_norm_csv(st, ctx.artifact("spacetime.csv"));
    ctx.headline["spacetime_min"] = st.min;
    ctx.headline["spacetime_max"] = st.max;
  }
}

std::vector<double> solver_values(Context& ctx, const std::vector<double>& xs) {
  const ModelSpec model = build_model(ctx.cfg);
  const DriverSpec driver = build_driver(ctx.cfg);
  const TerminalSpec terminal = build_terminal(ctx.cfg);
  const auto obstacle = build_obstacle(ctx.cfg);
  std::vector<double> values;
  for (double x : xs) {
    const PathBundle paths = simulate(ctx, model, x);
    if (obstacle) {
      ReflectedOptions o = reflected_options(ctx);
      values.push_back(solve_reflected(model, driver, terminal, *obstacle, paths, ctx.cfg.basis, o).trace.back().y0);
    } else {
      values.push_back(solve_bsde(model, driver, terminal, paths, ctx.cfg.basis, bsde_options(ctx)).y0);
    }
  }
  return values;
}

void run_compare(Context& ctx) {
  const json& c = ctx.block("compare");
  const auto region = c.at("region").get<std::vector<double>>();
  std::filesystem::path solver_csv = c.at("solver_csv").get<std::string>();
  std::filesystem::path oracle_csv = c.at("oracle_csv").get<std::string>();
  if (solver_csv.empty() || oracle_csv.empty()) {
    auto xs = c.at("points").get<std::vector<double>>();
    if (xs.empty()) {
      for (int i = 0; i <= 10; ++i) xs.push_back(region[0] + (region[1] - region[0]) * i / 10.0);
    }
    if (solver_csv.empty()) {
      solver_csv = ctx.artifact("solver.csv");
      write_xu_csv(xs, solver_values(ctx, xs), solver_csv);
    }
    if (oracle_csv.empty()) {
      oracle_csv = ctx.artifact("oracle.csv");
      write_xu_csv(xs, oracle_values(ctx, xs, false), oracle_csv);
    }
  }
  const CompareTable table = compare_report(solver_csv, oracle_csv, c.at("tol_rel"), {region[0], region[1]}, ctx.rho());
  write_compare_csv(table, ctx.artifact("compare.csv"));
  json rows = json::array();
  for (const auto& r : table.rows)
    rows.push_back({{"x", r.x}, {"solver", r.solver}, {"oracle", r.oracle}, {"error", r.error}});
  ctx.headline["rows"] = rows;
  ctx.headline["sup"] = table.sup;
  ctx.headline["l2_rho"] = table.l2_rho;
  ctx.criterion("sup_relative_error", table.pass, table.sup, table.tol);
}

}  // namespace

Report run_experiment(const ExperimentConfig& input, const RunFlags& flags) {
  ExperimentConfig cfg = input;
  if (flags.seed) {
    cfg.seed = *flags.seed;
    cfg.normalized["seed"] = cfg.seed;
  }
  if (flags.out) {
    cfg.output = *flags.out;
    cfg.normalized["output"] = cfg.output.string();
  }
  if (flags.threads) set_default_threads(*flags.threads);

  const auto started = std::chrono::steady_clock::now();
  Report report;
  report.meta["started"] = utc_now();
  report.meta["host"] = host_name();
  json echoed = {{"deterministic", flags.deterministic}, {"threads", default_threads()}, {"out", cfg.output.string()}};
  if (flags.seed) echoed["seed"] = *flags.seed;
  report.meta["flags"] = echoed;

  std::filesystem::create_directories(cfg.output);
  DirectoryLock lock(cfg.output);

  Context ctx{cfg, cfg.output};
  json& body = report.body;
  body["task"] = to_string(cfg.task);
  body["config"] = hashed_config(cfg);
  body["config_hash"] = config_hash(cfg);
  try {
    switch (cfg.task) {
      case Task::Simulate: run_simulate(ctx); break;
      case Task::Solve: run_solve(ctx); break;
      case Task::SolveObstacle: run_solve_obstacle(ctx); break;
      case Task::Oracle: run_oracle(ctx); break;
      case Task::Normcheck: run_normcheck(ctx); break;
      case Task::Compare: run_compare(ctx); break;
    }
    bool all_pass = true;
    for (const auto& c : ctx.criteria) all_pass = all_pass && c.at("pass").get<bool>();
    body["status"] = all_pass ? "pass" : "fail";
    report.exit_code = all_pass ? 0 : 2;
  } catch (const Error& e) {
    body["status"] = "error";
    body["error"] = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    report.exit_code = 1;
  } catch (const std::exception& e) {
    body["status"] = "error";
    body["error"] = {{"code", "E_RUNTIME"}, {"message", e.what()}};
    report.exit_code = 1;
  }
  body["headline"] = ctx.headline;
  body["criteria"] = ctx.criteria;
  json listed = json::array();
  for (const auto& a : ctx.artifacts)
    if (std::filesystem::exists(cfg.output / a.get<std::string>())) listed.push_back(a);
  listed.push_back("report.json");
  body["artifacts"] = listed;

  report.meta["finished"] = utc_now();
  report.meta["elapsed_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  report.meta["body_sha256"] = sha256_hex(body.dump());

  std::ofstream os(cfg.output / "report.json");
  if (!os) throw Error(ErrorCode::Io, "cannot write " + (cfg.output / "report.json").string());
  os << json{{"body", report.body}, {"meta", report.meta}}.dump(2) << '\n';
  return report;
}

int solver_main(int argc, char** argv) {
  CLI::App app{"Monte Carlo BSDE solver for PIDEs with jumps and obstacles"};
  std::string task_name, config_path;
  RunFlags flags;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string out;
  app.add_option("task", task_name, "simulate | solve | solve-obstacle | oracle | normcheck | compare")->required();
  app.add_option("--config", config_path, "JSON experiment config")->required();
  auto* seed_opt = app.add_option("--seed", seed, "overrides the config seed");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads (fallback: SOLVER_THREADS)");
  app.add_flag("--deterministic", flags.deterministic, "fixed-order reductions (always on; echoed)");
  auto* out_opt = app.add_option("--out", out, "output directory (overrides the config)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (*seed_opt) flags.seed = seed;
  if (*threads_opt) flags.threads = threads;
  if (*out_opt) flags.out = out;

  try {
    const Task task = parse_task(task_name);
    std::ifstream is(config_path);
    if (!is) throw Error(ErrorCode::Io, "cannot read " + config_path);
    std::stringstream text;
    text << is.rdbuf();
    json raw;
    try {
      raw = json::parse(text.str());
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::Schema, std::string("config is not valid JSON: ") + e.what());
    }
    if (!raw.is_object()) throw Error(ErrorCode::Schema, "config: expected an object");
    if (raw.contains("task") && raw["task"] != task_name)
      throw Error(ErrorCode::Config, "task: config says '" + raw["task"].dump() + "', command line says '" + task_name + "'");
    if (flags.seed && !raw.contains("seed")) raw["seed"] = *flags.seed;
    raw["task"] = to_string(task);
    const ExperimentConfig cfg = validate_config(raw);
    const Report report = run_experiment(cfg, flags);
    std::cout << report.body.at("task").get<std::string>() << ' ' << report.body.at("status").get<std::string>()
              << " exit=" << report.exit_code << " report="
              << (std::filesystem::path(flags.out ? *flags.out : cfg.output) / "report.json").string() << '\n';
    if (report.body.contains("error")) std::cerr << report.body["error"]["message"].get<std::string>() << '\n';
    return report.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace pide

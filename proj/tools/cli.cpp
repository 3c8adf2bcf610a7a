#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lyapnet/dual.hpp"
#include "lyapnet/scenarios.hpp"
#include "lyapnet/sim.hpp"
#include "svg.hpp"

namespace lyapnet::cli {

namespace {

// Bad flag values detected after parsing; mapped to exit code 2.
class FlagError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw FlagError(fmt::format("{}: '{}' is not a number", flag, item));
    }
  }
  if (out.empty()) throw FlagError(flag + ": empty list");
  return out;
}

Vector parse_vector(const std::string& text, int r, const std::string& flag) {
  const auto v = parse_list(text, flag);
  if (static_cast<int>(v.size()) != r) throw FlagError(fmt::format("{}: expected {} values", flag, r));
  return Eigen::Map<const Vector>(v.data(), r);
}

std::string show(const Vector& v) {
  std::string s = "(";
  for (Eigen::Index j = 0; j < v.size(); ++j) s += (j ? ", " : "") + format_number(v(j));
  return s + ")";
}

std::uint64_t default_seed() {
  const char* env = std::getenv("LYAPNET_SEED");
  if (!env || !*env) return 1;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw FlagError(fmt::format("LYAPNET_SEED='{}' is not an unsigned integer", env));
  }
}

struct ScenarioFlags {
  std::string name;
  std::string file;

  void add(CLI::App* cmd) {
    cmd->add_option("--scenario", name, "Built-in scenario name");
    cmd->add_option("--file", file, "Scenario JSON file");
  }

  ScenarioHandle load() const {
    if (name.empty() == file.empty()) throw FlagError("give exactly one of --scenario and --file");
    if (!file.empty()) return load_from_file(file);
    const auto& names = builtin_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
      std::string all;
      for (const auto& n : names) all += (all.empty() ? "" : ", ") + n;
      throw FlagError(fmt::format("unknown scenario '{}' (built-ins: {})", name, all));
    }
    return builtin(name);
  }
};

// U*_V for deviation statistics and fqla-ideal; numeric fallbacks are announced.
std::optional<Vector> reference(const ScenarioHandle& h, double V, std::ostream& err) {
  try {
    auto m = h.multiplier(V);
    if (m.method == MultiplierResult::Method::NumericSearch) {
      err << "warning: no closed-form U*_V for '" << h.name << "', using numeric search";
      if (!m.warning.empty()) err << " (" << m.warning << ")";
      err << '\n';
    }
    return m.u_star;
  } catch (const ConvergenceError& e) {
    err << "warning: optimal multiplier unavailable: " << e.what() << '\n';
    return std::nullopt;
  }
}

Geometry geometry_of(const ScenarioHandle& h, std::ostream& err) {
  if (h.geometry) return *h.geometry;
  const auto u1 = h.multiplier(1.0).u_star;
  Rng rng(1, 3);
  const double radius = 0.2 * std::max(1.0, u1.cwiseAbs().maxCoeff());
  const auto est = estimate_geometry(h.spec, u1, radius, 32, rng);
  err << "note: estimated geometry " << (est.kind == Geometry::Polyhedral ? "polyhedral" : "smooth")
      << " (L = " << format_number(est.L) << ")\n";
  return est.kind;
}

struct RunFlags {
  ScenarioFlags scenario;
  std::string alg;
  double V = 0.0;
  std::uint64_t slots = 0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> burn_in;
  std::string placeholders;
  std::uint64_t T = 0;
  int K = 1;

  void add(CLI::App* cmd, bool single) {
    scenario.add(cmd);
    cmd->add_option("--alg", alg, "qla | fqla-ideal | fqla-general | fqla-bisect")->required();
    if (single) cmd->add_option("--V", V, "Cost weight V >= 1")->required();
    cmd->add_option("--slots", slots, "Number of slots")->required();
    cmd->add_option("--burn-in", burn_in, "Slots excluded from averages");
    cmd->add_option("--placeholders", placeholders, "Explicit place-holders, comma separated");
    cmd->add_option("--T", T, "fqla-general estimation horizon (default 50V)");
    cmd->add_option("--K", K, "fqla-general repetitions")->default_val(1);
  }

  RunConfig config(const ScenarioHandle& h, double v, std::uint64_t s, std::ostream& err) const {
    RunConfig c;
    c.V = v;
    c.slots = slots;
    c.seed = s;
    c.burn_in = burn_in;
    c.algorithm = parse_algorithm(alg);
    c.estimate_T = T;
    c.estimate_K = K;
    if (!placeholders.empty()) c.placeholders = parse_vector(placeholders, h.spec.r(), "--placeholders");
    c.deviation_reference = reference(h, v, err);
    if (c.algorithm == Algorithm::FqlaIdeal && !c.placeholders) {
      if (!c.deviation_reference) throw std::runtime_error("fqla-ideal needs U*_V, which could not be resolved");
      c.geometry = geometry_of(h, err);
    }
    return c;
  }

  void validate() const {
    try {
      parse_algorithm(alg);
    } catch (const ContractError& e) {
      throw FlagError(e.what());
    }
    if (slots == 0) throw FlagError("--slots must be positive");
    if (K < 1) throw FlagError("--K must be at least 1");
  }
};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

int cmd_run(const RunFlags& f, const std::string& trace_path, const std::string& report_path, std::ostream& out,
            std::ostream& err) {
  f.validate();
  if (!(f.V >= 1.0)) throw FlagError("--V must be >= 1");
  const auto h = f.scenario.load();
  const RunConfig cfg = f.config(h, f.V, f.seed, err);
  const int r = h.spec.r();

  std::ofstream trace;
  SlotObserver obs;
  if (!trace_path.empty()) {
    trace.open(trace_path);
    if (!trace) throw std::runtime_error("cannot write " + trace_path);
    write_trace_header(trace, r);
    obs = [&](const SlotRecord& rec) { write_trace_row(trace, rec, r); };
  }
  const auto res = run(h.spec, cfg, obs);
  const auto& rep = res.report;
  if (!report_path.empty()) {
    std::ostringstream csv;
    write_report_header(csv, r);
    write_report_row(csv, rep, h.name, r);
    write_file(report_path, csv.str());
  }
  out << fmt::format("{} {} V={} seed={} slots={} avg_cost={} avg_backlog={} drop_fraction={}\n", h.name,
                     rep.algorithm, format_number(rep.V), rep.seed, rep.slots, format_number(rep.avg_cost),
                     format_number(rep.avg_total_backlog), format_number(rep.drop_fraction));
  return 0;
}

int cmd_sweep(const RunFlags& f, const std::string& v_list, const std::string& seed_list, int jobs,
              const std::string& report_path, const std::string& svg_prefix, std::ostream& out, std::ostream& err) {
  f.validate();
  const auto Vs = parse_list(v_list, "--V-list");
  for (double v : Vs) {
    if (!(v >= 1.0)) throw FlagError("--V-list entries must be >= 1");
  }
  std::vector<std::uint64_t> seeds;
  if (seed_list.empty()) {
    seeds.push_back(f.seed);
  } else {
    for (double s : parse_list(seed_list, "--seeds")) {
      if (s < 0 || s != std::floor(s)) throw FlagError("--seeds entries must be nonnegative integers");
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (jobs < 1) throw FlagError("--jobs must be at least 1");
  const auto h = f.scenario.load();
  const int r = h.spec.r();

  struct Cell {
    RunConfig cfg;
    std::optional<SimReport> report;
    std::string error;
  };
  std::vector<Cell> cells;
  for (double v : Vs) {
    for (auto s : seeds) cells.push_back(Cell{f.config(h, v, s, err), std::nullopt, {}});
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        cells[i].report = run(h.spec, cells[i].cfg).report;
      } catch (const std::exception& e) {
        cells[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), cells.size());
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream csv;
  write_report_header(csv, r);
  bool failed = false;
  for (const auto& c : cells) {
    if (c.report) {
      write_report_row(csv, *c.report, h.name, r);
    } else {
      failed = true;
      err << fmt::format("cell V={} seed={} failed: {}\n", format_number(c.cfg.V), c.cfg.seed, c.error);
    }
  }
  if (report_path.empty()) {
    out << csv.str();
  } else {
    write_file(report_path, csv.str());
  }

  if (!svg_prefix.empty()) {
    std::map<double, std::pair<double, double>> backlog;  // V -> (sum, count)
    std::map<double, std::pair<double, double>> drops;
    for (const auto& c : cells) {
      if (!c.report) continue;
      auto& b = backlog[c.report->V];
      b.first += c.report->avg_total_backlog;
      b.second += 1;
      auto& d = drops[c.report->V];
      d.first += c.report->drop_fraction;
      d.second += 1;
    }
    svg::Series sb{"avg total backlog", {}, {}};
    svg::Series sd{"drop fraction", {}, {}};
    for (const auto& [v, acc] : backlog) {
      sb.x.push_back(v);
      sb.y.push_back(acc.first / acc.second);
    }
    for (const auto& [v, acc] : drops) {
      sd.x.push_back(v);
      sd.y.push_back(acc.first / acc.second);
    }
    std::string seeds_text;
    for (auto s : seeds) seeds_text += (seeds_text.empty() ? "" : ",") + std::to_string(s);
    const std::string caption = fmt::format("{}, {}, V = {}..{}, seeds {}", h.name, f.alg, format_number(Vs.front()),
                                            format_number(Vs.back()), seeds_text);
    write_file(svg_prefix + "_backlog.svg",
               svg::render_chart({sb}, {"Average backlog vs V", caption, "V", "average total backlog"}));
    svg::ChartOptions dopt{"Drop fraction vs V", caption, "V", "drop fraction"};
    dopt.log_y = true;
    write_file(svg_prefix + "_drops.svg", svg::render_chart({sd}, dopt));
  }
  return failed ? 1 : 0;
}

int cmd_dual(const ScenarioFlags& sf, double V, const std::string& at, bool find_opt, const std::string& scan,
             const std::string& out_path, std::ostream& out, std::ostream& err) {
  const int modes = (at.empty() ? 0 : 1) + (find_opt ? 1 : 0) + (scan.empty() ? 0 : 1);
  if (modes != 1) throw FlagError("give exactly one of --at, --find-opt, --scan");
  if (!(V >= 1.0)) throw FlagError("--V must be >= 1");
  const auto h = sf.load();
  const int r = h.spec.r();

  if (!at.empty()) {
    const Vector u = parse_vector(at, r, "--at");
    if ((u.array() < 0.0).any()) throw FlagError("--at must be nonnegative");
    const auto ev = evaluate_dual(h.spec, V, u);
    out << "q = " << format_number(ev.value) << '\n';
    out << "subgradient = " << show(ev.subgradient) << '\n';
    out << "argmin =";
    for (const auto& c : ev.argmin_actions) {
      out << ' ' << (c.index >= 0 ? std::to_string(c.index) : "x=" + format_number(c.x));
    }
    out << '\n';
    return 0;
  }
  if (find_opt) {
    const auto m = h.multiplier(V);
    out << "U*_V = " << show(m.u_star) << '\n';
    out << "q* = " << format_number(m.q_star) << '\n';
    out << "method = " << (m.method == MultiplierResult::Method::ClosedForm ? "closed-form" : "numeric") << '\n';
    if (!m.warning.empty()) err << "warning: " << m.warning << '\n';
    return 0;
  }

  if (r > 2) throw FlagError("scan limited to r <= 2");
  const auto g = parse_list(scan, "--scan");
  if (g.size() != 3 || g[2] < 2 || g[2] != std::floor(g[2]) || g[0] < 0 || !(g[1] > g[0])) {
    throw FlagError("--scan expects lo,hi,n with 0 <= lo < hi and integer n >= 2");
  }
  const int n = static_cast<int>(g[2]);
  auto grid = [&](int i) { return g[0] + (g[1] - g[0]) * i / (n - 1); };
  std::ostringstream csv;
  for (int j = 1; j <= r; ++j) csv << "U_" << j << ',';
  csv << 'q';
  for (int j = 1; j <= r; ++j) csv << ",G_" << j;
  csv << '\n';
  auto emit = [&](const Vector& u) {
    const auto ev = evaluate_dual(h.spec, V, u);
    for (int j = 0; j < r; ++j) csv << format_number(u(j)) << ',';
    csv << format_number(ev.value);
    for (int j = 0; j < r; ++j) csv << ',' << format_number(ev.subgradient(j));
    csv << '\n';
  };
  Vector u(r);
  for (int i = 0; i < n; ++i) {
    u(0) = grid(i);
    if (r == 1) {
      emit(u);
      continue;
    }
    for (int k = 0; k < n; ++k) {
      u(1) = grid(k);
      emit(u);
    }
  }
  if (out_path.empty()) {
    out << csv.str();
  } else {
    write_file(out_path, csv.str());
  }
  return 0;
}

struct AnalyzeFlags {
  ScenarioFlags scenario;
  std::string trace;
  double V = 0.0;
  std::string mode;
  double D = 0.0;
  std::string kind = "norm";
  std::optional<std::uint64_t> burn_in;
  std::string out_path;
  std::string svg_path;
  std::string placeholders;
};

int cmd_analyze(const AnalyzeFlags& f, std::ostream& out, std::ostream& err) {
  if (f.mode != "tail" && f.mode != "absorption" && f.mode != "sandwich") {
    throw FlagError("--mode must be tail, absorption or sandwich");
  }
  if (f.kind != "norm" && f.kind != "coord") throw FlagError("--kind must be norm or coord");
  if (!(f.V >= 1.0)) throw FlagError("--V must be >= 1");
  const auto h = f.scenario.load();
  std::ifstream in(f.trace);
  if (!in) throw std::runtime_error("cannot read " + f.trace);
  const Trace tr = read_trace_csv(in);
  if (tr.r != h.spec.r()) throw FlagError(fmt::format("trace has r = {}, scenario has r = {}", tr.r, h.spec.r()));

  if (f.mode == "absorption") {
    if (tr.r != 1) throw FlagError("absorption mode needs a single-queue trace");
    std::vector<double> u(tr.u.data(), tr.u.data() + tr.u.size());
    const auto rep = absorption_check(h.spec, f.V, u);
    out << "interval = [" << format_number(rep.lo) << ", " << format_number(rep.hi) << "]\n";
    if (!rep.entered) {
      out << "never entered\n";
    } else if (rep.violation) {
      out << "entered at t0=" << rep.t0 << ", left at t=" << *rep.violation << '\n';
      return 1;
    } else {
      out << "entered at t0=" << rep.t0 << ", never left\n";
    }
    return 0;
  }

  if (f.mode == "sandwich") {
    if (!tr.has_virtual) throw FlagError("sandwich mode needs an FQLA trace (W columns)");
    Vector p;
    if (!f.placeholders.empty()) {
      p = parse_vector(f.placeholders, tr.r, "--placeholders");
    } else {
      const auto ref = reference(h, f.V, err);
      if (!ref) throw std::runtime_error("no --placeholders given and U*_V could not be resolved");
      p = fqla_placeholder_ideal(*ref, f.V, geometry_of(h, err));
    }
    const auto bad = count_sandwich_violations(tr, p, h.spec.delta_max());
    out << "violations: " << bad << '\n';
    return bad == 0 ? 0 : 1;
  }

  const auto ref = reference(h, f.V, err);
  if (!ref) throw std::runtime_error("tail mode needs U*_V, which could not be resolved");
  const Matrix& X = tr.has_virtual ? tr.w : tr.u;
  const auto T = static_cast<std::uint64_t>(X.cols());
  const std::uint64_t burn =
      f.burn_in ? *f.burn_in : std::min(static_cast<std::uint64_t>(100.0 * f.V), T / 10);
  if (burn >= T) throw FlagError("--burn-in must be smaller than the trace length");
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(T - burn));
  for (auto t = static_cast<Eigen::Index>(burn); t < X.cols(); ++t) {
    const Vector d = X.col(t) - *ref;
    samples.push_back(f.kind == "norm" ? d.norm() : d.cwiseAbs().maxCoeff());
  }
  std::sort(samples.begin(), samples.end());
  const auto curve = deviation_statistics(samples, f.D);

  std::ostringstream csv;
  csv << "m,prob,exceed_count\n";
  for (std::size_t m = 0; m < curve.prob.size(); ++m) {
    csv << m << ',' << format_number(curve.prob[m]) << ',' << curve.exceed_count[m] << '\n';
  }
  if (f.out_path.empty()) {
    out << csv.str();
  } else {
    write_file(f.out_path, csv.str());
  }
  const auto fit = fit_tail(curve);
  out << fmt::format("c_hat={} beta_hat={} r2={} m=[{},{}] {}\n", format_number(fit.c_hat),
                     format_number(fit.beta_hat), format_number(fit.r_squared), fit.m_lo, fit.m_hi,
                     fit.exponential ? "exponential" : "not exponential");
  if (!f.svg_path.empty()) {
    svg::Series emp{"empirical P(D,m)", {}, {}, true};
    svg::Series line{fmt::format("fit beta={:.3g}, r2={:.3f}", fit.beta_hat, fit.r_squared), {}, {}};
    line.dashed = true;
    for (std::size_t m = 0; m < curve.prob.size(); ++m) {
      emp.x.push_back(static_cast<double>(m));
      emp.y.push_back(curve.prob[m]);
      line.x.push_back(static_cast<double>(m));
      line.y.push_back(fit.c_hat * std::exp(-fit.beta_hat * static_cast<double>(m)));
    }
    svg::ChartOptions opt{"Deviation tail", fmt::format("{}, trace {}, V = {}, D = {}", h.name, f.trace,
                                                        format_number(f.V), format_number(f.D)),
                          "m", "P(D, m)"};
    opt.log_y = true;
    write_file(f.svg_path, svg::render_chart({emp, line}, opt));
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Lyapunov scheduling simulator: QLA, FQLA and dual tools", "lyapnet"};
  app.require_subcommand(1);

  RunFlags run_f;
  std::string trace_path, report_path;
  auto* run_cmd = app.add_subcommand("run", "Simulate one (scenario, algorithm, V, seed)");
  run_f.add(run_cmd, true);
  run_cmd->add_option("--seed", run_f.seed, "Random seed (default $LYAPNET_SEED or 1)");
  run_cmd->add_option("--trace", trace_path, "Write the per-slot trace CSV here");
  run_cmd->add_option("--report", report_path, "Write the report CSV here");

  RunFlags sweep_f;
  std::string v_list, seed_list, sweep_report, svg_prefix;
  int jobs = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a grid of (V, seed) cells");
  sweep_f.add(sweep_cmd, false);
  sweep_cmd->add_option("--V-list", v_list, "Comma-separated V values")->required();
  sweep_cmd->add_option("--seeds", seed_list, "Comma-separated seeds (default $LYAPNET_SEED or 1)");
  sweep_cmd->add_option("--jobs", jobs, "Worker threads")->default_val(1);
  sweep_cmd->add_option("--report", sweep_report, "Report CSV path (default stdout)");
  sweep_cmd->add_option("--svg", svg_prefix, "Write <prefix>_backlog.svg and <prefix>_drops.svg");

  ScenarioFlags dual_s;
  double dual_V = 0.0;
  std::string at, scan, dual_out;
  bool find_opt = false;
  auto* dual_cmd = app.add_subcommand("dual", "Evaluate the dual function");
  dual_s.add(dual_cmd);
  dual_cmd->add_option("--V", dual_V, "Cost weight V >= 1")->required();
  dual_cmd->add_option("--at", at, "Evaluate q at this comma-separated multiplier");
  dual_cmd->add_flag("--find-opt", find_opt, "Find the optimal multiplier");
  dual_cmd->add_option("--scan", scan, "Grid lo,hi,n per coordinate (r <= 2)");
  dual_cmd->add_option("--out", dual_out, "Scan CSV path (default stdout)");

  AnalyzeFlags an;
  auto* an_cmd = app.add_subcommand("analyze", "Analyze a recorded trace");
  an.scenario.add(an_cmd);
  an_cmd->add_option("--trace", an.trace, "Trace CSV")->required();
  an_cmd->add_option("--V", an.V, "Cost weight the trace was run with")->required();
  an_cmd->add_option("--mode", an.mode, "tail | absorption | sandwich")->required();
  an_cmd->add_option("--D", an.D, "Deviation offset D for tail mode")->default_val(0.0);
  an_cmd->add_option("--kind", an.kind, "norm | coord")->default_val("norm");
  an_cmd->add_option("--burn-in", an.burn_in, "Slots skipped in tail mode");
  an_cmd->add_option("--out", an.out_path, "Curve CSV path (default stdout)");
  an_cmd->add_option("--svg", an.svg_path, "Tail chart path");
  an_cmd->add_option("--placeholders", an.placeholders, "Place-holders used by the run (sandwich mode)");

  ScenarioFlags ex_s;
  std::string ex_out;
  auto* ex_cmd = app.add_subcommand("export-scenario", "Write a scenario as JSON");
  ex_s.add(ex_cmd);
  ex_cmd->add_option("--out", ex_out, "Output path (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    const std::uint64_t env_seed = default_seed();
    if (run_cmd->parsed()) {
      if (run_cmd->count("--seed") == 0) run_f.seed = env_seed;
      return cmd_run(run_f, trace_path, report_path, out, err);
    }
    if (sweep_cmd->parsed()) {
      sweep_f.seed = env_seed;
      return cmd_sweep(sweep_f, v_list, seed_list, jobs, sweep_report, svg_prefix, out, err);
    }
    if (dual_cmd->parsed()) return cmd_dual(dual_s, dual_V, at, find_opt, scan, dual_out, out, err);
    if (an_cmd->parsed()) return cmd_analyze(an, out, err);
    if (ex_cmd->parsed()) {
      const std::string text = spec_to_json_text(ex_s.load().spec);
      if (ex_out.empty()) {
        out << text;
      } else {
        write_file(ex_out, text);
      }
      return 0;
    }
  } catch (const FlagError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace lyapnet::cli

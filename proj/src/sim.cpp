#include "lyapnet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace lyapnet {

namespace {

// Stream assignment for one run: slots draw from stream 0, FQLA-General's
// Step I from stream 1 (one substream per repetition), bisection from stream 2.
constexpr std::uint64_t kSlotStream = 0;
constexpr std::uint64_t kEstimateStream = 1;
constexpr std::uint64_t kBisectStream = 2;

std::string dump(const Vector& v) {
  std::ostringstream os;
  os << '(';
  for (Eigen::Index j = 0; j < v.size(); ++j) os << (j ? ", " : "") << v(j);
  os << ')';
  return os.str();
}

}  // namespace

Algorithm parse_algorithm(std::string_view name) {
  if (name == "qla") return Algorithm::Qla;
  if (name == "fqla-ideal") return Algorithm::FqlaIdeal;
  if (name == "fqla-general") return Algorithm::FqlaGeneral;
  if (name == "fqla-bisect") return Algorithm::FqlaBisect;
  throw ContractError(fmt::format("unknown algorithm '{}'", name));
}

std::string_view algorithm_name(Algorithm alg) {
  switch (alg) {
    case Algorithm::Qla: return "qla";
    case Algorithm::FqlaIdeal: return "fqla-ideal";
    case Algorithm::FqlaGeneral: return "fqla-general";
    case Algorithm::FqlaBisect: return "fqla-bisect";
  }
  return "?";
}

std::uint64_t RunConfig::effective_burn_in() const {
  if (burn_in) return *burn_in;
  const auto by_v = static_cast<std::uint64_t>(100.0 * V);
  return std::min(by_v, slots / 10);
}

Vector resolve_placeholders(const NetworkSpec& spec, const RunConfig& cfg) {
  if (cfg.placeholders) {
    if (cfg.placeholders->size() != spec.r()) throw ContractError("run: placeholders have wrong length");
    return *cfg.placeholders;
  }
  switch (cfg.algorithm) {
    case Algorithm::Qla:
      return Vector::Zero(spec.r());
    case Algorithm::FqlaIdeal:
      if (!cfg.deviation_reference) throw ContractError("run: fqla-ideal needs U*_V (deviation_reference)");
      return fqla_placeholder_ideal(*cfg.deviation_reference, cfg.V, cfg.geometry);
    case Algorithm::FqlaGeneral: {
      const std::uint64_t T = cfg.estimate_T > 0 ? cfg.estimate_T : static_cast<std::uint64_t>(50.0 * cfg.V);
      return fqla_general_estimate(spec, cfg.V, T, cfg.estimate_K, Rng(cfg.seed, kEstimateStream));
    }
    case Algorithm::FqlaBisect: {
      Vector guess = cfg.bisect_guess ? *cfg.bisect_guess
                     : cfg.deviation_reference ? Vector(2.0 * *cfg.deviation_reference)
                                               : Vector::Constant(spec.r(), 20.0 * cfg.V);
      return bisection_placeholder(spec, cfg.V, guess, Rng(cfg.seed, kBisectStream), cfg.bisect).placeholders;
    }
  }
  return Vector::Zero(spec.r());
}

RunResult run(const NetworkSpec& spec, const RunConfig& cfg, const SlotObserver& observer) {
  const int r = spec.r();
  if (!(cfg.V >= 1.0)) throw ContractError("run: V must be >= 1");
  if (cfg.slots == 0) throw ContractError("run: slots must be positive");
  const std::uint64_t burn_in = cfg.effective_burn_in();
  if (burn_in >= cfg.slots) throw ContractError("run: burn_in must be smaller than slots");
  if (cfg.deviation_reference && cfg.deviation_reference->size() != r) {
    throw ContractError("run: deviation_reference has wrong length");
  }
  const bool fqla = is_fqla(cfg.algorithm);
  const bool has_ref = cfg.deviation_reference.has_value();
  const Vector ref = has_ref ? *cfg.deviation_reference : Vector::Zero(r);
  const double B = spec.bound_B();
  const double delta = spec.delta_max();

  RunResult out;
  SimReport& rep = out.report;
  rep.algorithm = std::string(algorithm_name(cfg.algorithm));
  rep.V = cfg.V;
  rep.seed = cfg.seed;
  rep.slots = cfg.slots;
  rep.burn_in = burn_in;
  rep.has_reference = has_ref;
  if (has_ref) rep.reference = ref;

  FqlaState st = FqlaState::initial(fqla ? resolve_placeholders(spec, cfg) : Vector::Zero(r));
  if (fqla) rep.placeholders = st.placeholders;

  if (cfg.record_trace) {
    Trace tr;
    tr.r = r;
    tr.has_virtual = fqla;
    const auto n = static_cast<std::size_t>(cfg.slots);
    tr.slot.reserve(n);
    tr.state.reserve(n);
    tr.cost.reserve(n);
    tr.dropped.reserve(n);
    tr.u.resize(r, static_cast<Eigen::Index>(cfg.slots));
    if (fqla) tr.w.resize(r, static_cast<Eigen::Index>(cfg.slots));
    out.trace = std::move(tr);
  }

  const std::uint64_t kept = cfg.slots - burn_in;
  double cost_sum = 0.0;
  Vector u_sum = Vector::Zero(r);
  Vector w_sum = Vector::Zero(r);
  rep.min_virtual_backlog = Vector::Constant(r, std::numeric_limits<double>::infinity());
  if (has_ref) {
    rep.deviation_samples.reserve(static_cast<std::size_t>(kept));
    rep.per_coord_samples.reserve(static_cast<std::size_t>(kept));
  }

  Rng rng(cfg.seed, kSlotStream);
  SlotRecord rec;
  for (std::uint64_t t = 0; t < cfg.slots; ++t) {
    const int s = sample_state(spec, rng);
    const Vector& driver = fqla ? st.w : st.u;
    const Decision d = qla_decide(spec, cfg.V, s, driver);

    const bool counted = t >= burn_in;
    if (counted) {
      cost_sum += d.cost;
      u_sum += st.u;
      if (fqla) {
        w_sum += st.w;
        rep.min_virtual_backlog = rep.min_virtual_backlog.cwiseMin(st.w);
      }
      if (has_ref) {
        const Vector diff = driver - ref;
        rep.deviation_samples.push_back(diff.norm());
        rep.per_coord_samples.push_back(diff.cwiseAbs().maxCoeff());
      }
      for (int j = 0; j < r; ++j) {
        if (spec.exogenous()[static_cast<std::size_t>(j)]) rep.offered_exogenous += d.arrivals(j);
      }
    }

    const Vector u_prev = st.u;
    const Vector w_prev = st.w;
    double dropped_now = 0.0;
    if (fqla) {
      const double before = st.dropped.sum();
      fqla_step_inplace(st, d);
      dropped_now = st.dropped.sum() - before;
    } else {
      st.u = queue_update(st.u, d.services, d.arrivals);
    }
    if (counted) rep.dropped_total += dropped_now;

    if (cfg.record_trace || observer) {
      rec.slot = t;
      rec.state = s;
      rec.cost = d.cost;
      rec.u = u_prev;
      rec.w = fqla ? w_prev : Vector();
      rec.dropped = dropped_now;
      if (observer) observer(rec);
      if (out.trace) {
        auto& tr = *out.trace;
        const auto col = static_cast<Eigen::Index>(t);
        tr.slot.push_back(t);
        tr.state.push_back(s);
        tr.cost.push_back(d.cost);
        tr.dropped.push_back(dropped_now);
        tr.u.col(col) = u_prev;
        if (fqla) tr.w.col(col) = w_prev;
      }
    }

    if (cfg.check_invariants) {
      ++rep.invariant_checks;
      if ((st.u.array() < 0.0).any() || (st.w.array() < 0.0).any()) {
        throw InvariantViolation(t, fmt::format("slot {}: negative backlog U={} W={}", t, dump(st.u), dump(st.w)));
      }
      if ((st.u - u_prev).norm() > B + 1e-9) {
        throw InvariantViolation(t, fmt::format("slot {}: backlog change exceeds B, U={} -> {}", t, dump(u_prev),
                                                dump(st.u)));
      }
      if (fqla) {
        for (int j = 0; j < r; ++j) {
          const double base = std::max(st.w(j) - st.placeholders(j), 0.0);
          if (st.u(j) < base - 1e-9 || st.u(j) > base + delta + 1e-9) {
            throw InvariantViolation(t, fmt::format("slot {}: sandwich violated at queue {}: W={} U={} P={}", t,
                                                    j + 1, dump(st.w), dump(st.u), dump(st.placeholders)));
          }
        }
      }
      // W (FQLA) or U (QLA) follows the plain queueing law, so the bound applies to it.
      if (has_ref && !one_step_distance_contract_check(fqla ? w_prev : u_prev, d.services, d.arrivals, ref, B)) {
        throw InvariantViolation(t, fmt::format("slot {}: one-step distance bound violated", t));
      }
    }
  }

  const double n = static_cast<double>(kept);
  rep.avg_cost = cost_sum / n;
  rep.avg_backlog = u_sum / n;
  rep.avg_total_backlog = rep.avg_backlog.sum();
  rep.avg_virtual_backlog = w_sum / n;
  rep.avg_total_virtual_backlog = rep.avg_virtual_backlog.sum();
  if (!fqla) rep.min_virtual_backlog = Vector::Zero(r);
  rep.drop_fraction = rep.offered_exogenous > 0.0 ? std::min(1.0, rep.dropped_total / rep.offered_exogenous) : 0.0;

  if (has_ref) {
    auto histogram = [](const std::vector<double>& samples) {
      std::vector<std::uint64_t> h;
      for (double x : samples) {
        const auto bin = static_cast<std::size_t>(std::floor(x));
        if (bin >= h.size()) h.resize(bin + 1, 0);
        ++h[bin];
      }
      return h;
    };
    rep.deviation_hist = histogram(rep.deviation_samples);
    rep.per_coord_deviation_hist = histogram(rep.per_coord_samples);
    std::sort(rep.deviation_samples.begin(), rep.deviation_samples.end());
    std::sort(rep.per_coord_samples.begin(), rep.per_coord_samples.end());
  }
  return out;
}

DeviationCurve deviation_statistics(std::span<const double> sorted, double D) {
  DeviationCurve c;
  c.D = D;
  c.total = sorted.size();
  for (int m = 0;; ++m) {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), D + m);
    const auto count = static_cast<std::uint64_t>(sorted.end() - it);
    c.exceed_count.push_back(count);
    c.prob.push_back(c.total > 0 ? static_cast<double>(count) / static_cast<double>(c.total) : 0.0);
    if (count == 0) break;
  }
  return c;
}

DeviationCurve deviation_statistics(const SimReport& report, double D, DeviationKind kind) {
  if (!report.has_reference) throw ContractError("deviation_statistics: run had no U*_V reference");
  return deviation_statistics(kind == DeviationKind::Norm ? report.deviation_samples : report.per_coord_samples, D);
}

TailFit fit_tail(const DeviationCurve& curve, const TailFitOptions& opt) {
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t m = 0; m < curve.prob.size(); ++m) {
    if (curve.prob[m] > opt.head_cutoff || curve.prob[m] <= 0.0) continue;
    if (curve.exceed_count[m] < opt.min_samples) continue;
    xs.push_back(static_cast<double>(m));
    ys.push_back(std::log(curve.prob[m]));
  }
  if (static_cast<int>(xs.size()) < opt.min_bins) {
    throw InsufficientTailMass(fmt::format("fit_tail: insufficient tail mass ({} qualifying bins)", xs.size()));
  }
  const auto n = static_cast<Eigen::Index>(xs.size());
  const Eigen::Map<const Vector> x(xs.data(), n);
  const Eigen::Map<const Vector> y(ys.data(), n);
  const double xbar = x.mean();
  const double ybar = y.mean();
  const Vector dx = x.array() - xbar;
  const Vector dy = y.array() - ybar;
  const double slope = dx.dot(dy) / dx.squaredNorm();
  const double intercept = ybar - slope * xbar;
  const double ss_tot = dy.squaredNorm();
  const double ss_res = (dy - slope * dx).squaredNorm();

  TailFit fit;
  fit.c_hat = std::exp(intercept);
  fit.beta_hat = -slope;
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  fit.m_lo = static_cast<int>(xs.front());
  fit.m_hi = static_cast<int>(xs.back());
  fit.exponential = fit.beta_hat > 0.0 && fit.r_squared >= 0.9;
  return fit;
}

AbsorptionReport absorption_check(const NetworkSpec& spec, double V, std::span<const double> trace) {
  if (spec.r() != 1) throw ContractError("absorption_check: requires a single-queue spec (r = 1)");
  AbsorptionReport rep;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int i = 0; i < spec.num_states(); ++i) {
    if (spec.state(i).prob <= 0.0) continue;
    const double opt = per_state_optimum(spec, V, i);
    rep.per_state_optima.push_back(opt);
    lo = std::min(lo, opt);
    hi = std::max(hi, opt);
  }
  rep.lo = lo - spec.bound_B();
  rep.hi = hi + spec.bound_B();
  constexpr double tol = 1e-9;
  auto inside = [&](double u) { return u >= rep.lo - tol && u <= rep.hi + tol; };
  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (!rep.entered) {
      if (inside(trace[t])) {
        rep.entered = true;
        rep.t0 = t;
      }
    } else if (!inside(trace[t])) {
      rep.violation = t;
      break;
    }
  }
  return rep;
}

std::uint64_t count_sandwich_violations(const Trace& trace, const Vector& placeholders, double delta_max,
                                        double tol) {
  if (!trace.has_virtual) throw ContractError("sandwich check needs a trace with virtual backlogs");
  if (placeholders.size() != trace.r) throw ContractError("sandwich check: placeholders have wrong length");
  std::uint64_t bad = 0;
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(trace.size()); ++t) {
    for (int j = 0; j < trace.r; ++j) {
      const double base = std::max(trace.w(j, t) - placeholders(j), 0.0);
      const double u = trace.u(j, t);
      if (u < base - tol || u > base + delta_max + tol) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

}  // namespace lyapnet

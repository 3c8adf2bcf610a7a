#include "lyapnet/dual.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "lyapnet/lp.hpp"

namespace lyapnet {

namespace {

void require_nonnegative(const Vector& u, const char* what) {
  if ((u.array() < 0.0).any() || !u.allFinite()) {
    throw DomainError(fmt::format("{}: multiplier entries must be finite and nonnegative", what));
  }
}

void require_dim(const NetworkSpec& spec, const Vector& u, const char* what) {
  if (u.size() != spec.r()) {
    throw ContractError(fmt::format("{}: vector has length {}, expected r = {}", what, u.size(), spec.r()));
  }
}

}  // namespace

Choice best_action(const StateSpec& state, double V, const Vector& u) {
  if (state.is_finite()) {
    const auto& t = state.table();
    const Vector obj = V * t.cost + t.net.transpose() * u;
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < obj.size(); ++k) {
      if (obj(k) < obj(best)) best = k;
    }
    return Choice{static_cast<int>(best), 0.0};
  }
  return Choice{-1, state.family().minimizer(V, u(0))};
}

double lagrangian_term(const StateSpec& state, double V, const Vector& u, const Choice& choice) {
  if (state.is_finite()) {
    const auto& t = state.table();
    return V * t.cost(choice.index) + t.net.col(choice.index).dot(u);
  }
  const auto& fam = state.family();
  return V * fam.cost(choice.x) + u(0) * (fam.arrival - choice.x);
}

ActionRecord realize(const StateSpec& state, int r, const Choice& choice) {
  if (state.is_finite()) return state.table().action(choice.index);
  const auto& fam = state.family();
  ActionRecord rec;
  rec.cost = fam.cost(choice.x);
  rec.arrivals = Vector::Constant(r, fam.arrival);
  rec.services = Vector::Constant(r, choice.x);
  return rec;
}

namespace {

void accumulate_net(const StateSpec& state, const Choice& choice, double weight, Vector& g) {
  if (state.is_finite()) {
    g.noalias() += weight * state.table().net.col(choice.index);
  } else {
    g(0) += weight * (state.family().arrival - choice.x);
  }
}

}  // namespace

DualEval evaluate_dual(const NetworkSpec& spec, double V, const Vector& u) {
  require_dim(spec, u, "evaluate_dual");
  require_nonnegative(u, "evaluate_dual");
  DualEval out;
  out.subgradient = Vector::Zero(spec.r());
  out.argmin_actions.reserve(static_cast<std::size_t>(spec.num_states()));
  for (const auto& st : spec.states()) {
    const Choice c = best_action(st, V, u);
    out.value += st.prob * lagrangian_term(st, V, u, c);
    accumulate_net(st, c, st.prob, out.subgradient);
    out.argmin_actions.push_back(c);
  }
  return out;
}

double dual_value(const NetworkSpec& spec, double V, const Vector& u) {
  require_dim(spec, u, "dual_value");
  require_nonnegative(u, "dual_value");
  double value = 0.0;
  for (const auto& st : spec.states()) value += st.prob * lagrangian_term(st, V, u, best_action(st, V, u));
  return value;
}

std::pair<double, Choice> per_state_dual(const NetworkSpec& spec, double V, int state, double u) {
  if (spec.r() != 1) throw ContractError("per_state_dual: requires a single-queue spec (r = 1)");
  if (!(u >= 0.0)) throw DomainError("per_state_dual: multiplier must be nonnegative");
  const Vector uv = Vector::Constant(1, u);
  const auto& st = spec.state(state);
  const Choice c = best_action(st, V, uv);
  return {lagrangian_term(st, V, uv, c), c};
}

double per_state_optimum(const NetworkSpec& spec, double V, int state) {
  if (spec.r() != 1) throw ContractError("per_state_optimum: requires a single-queue spec (r = 1)");
  const auto& st = spec.state(state);
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (!st.is_finite()) {
    const auto& fam = st.family();
    if (fam.arrival <= fam.lo) return 0.0;
    if (fam.arrival > fam.hi) return inf;
    return V * std::exp(fam.arrival);
  }
  // q_s(U) = min_k (V f_k + U n_k) is concave piecewise linear; its smallest
  // maximizer is 0 or a breakpoint between two lines.
  const auto& t = st.table();
  const Vector intercept = V * t.cost;
  const Vector slope = t.net.row(0).transpose();
  if (slope.minCoeff() > 0.0) return inf;
  auto q = [&](double u) { return (intercept + u * slope).minCoeff(); };
  std::vector<double> candidates{0.0};
  for (Eigen::Index a = 0; a < slope.size(); ++a) {
    for (Eigen::Index b = a + 1; b < slope.size(); ++b) {
      const double ds = slope(a) - slope(b);
      if (ds == 0.0) continue;
      const double u = (intercept(b) - intercept(a)) / ds;
      if (u > 0.0 && std::isfinite(u)) candidates.push_back(u);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  double best = -inf;
  for (double c : candidates) best = std::max(best, q(c));
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  for (double c : candidates) {
    if (q(c) >= best - tol) return c;
  }
  return candidates.back();
}

Vector osm_step(const NetworkSpec& spec, double V, const Vector& u, double alpha) {
  const DualEval d = evaluate_dual(spec, V, u);
  return (u + alpha * d.subgradient).cwiseMax(0.0);
}

Vector rism_step(const NetworkSpec& spec, double V, const Vector& u, int state, double alpha) {
  require_dim(spec, u, "rism_step");
  require_nonnegative(u, "rism_step");
  if (state < 0 || state >= spec.num_states()) throw ContractError("rism_step: state index out of range");
  const auto& st = spec.state(state);
  const ActionRecord rec = realize(st, spec.r(), best_action(st, V, u));
  return (u - alpha * rec.services).cwiseMax(0.0) + alpha * rec.arrivals;
}

bool local_optimality_probe(const NetworkSpec& spec, double V, const Vector& u_star,
                            int points, double radius, std::uint64_t seed) {
  const double q_star = dual_value(spec, V, u_star);
  const double tol = 1e-9 * std::max(1.0, std::abs(q_star));
  Rng rng(seed);
  for (int p = 0; p < points; ++p) {
    Vector dir(spec.r());
    for (Eigen::Index j = 0; j < dir.size(); ++j) dir(j) = 2.0 * rng.uniform() - 1.0;
    if (dir.norm() == 0.0) continue;
    const double rho = radius * (0.5 + 0.5 * rng.uniform());
    const Vector probe = (u_star + rho * dir.normalized()).cwiseMax(0.0);
    if (dual_value(spec, V, probe) > q_star + tol) return false;
  }
  return true;
}

namespace {

double probe_radius_for(const Vector& u) { return 1e-2 * std::max(1.0, u.cwiseAbs().maxCoeff()); }

Vector lp_multiplier(const NetworkSpec& spec, double V) {
  const int r = spec.r();
  Eigen::Index n = 0;
  for (const auto& st : spec.states()) n += st.table().size();
  LinearProgram lp;
  lp.c.resize(n);
  lp.A_ub = Matrix::Zero(r, n);
  lp.b_ub = Vector::Zero(r);
  lp.A_eq = Matrix::Zero(spec.num_states(), n);
  lp.b_eq = Vector::Ones(spec.num_states());
  Eigen::Index col = 0;
  for (int i = 0; i < spec.num_states(); ++i) {
    const auto& st = spec.state(i);
    const auto& t = st.table();
    const auto k = t.size();
    lp.c.segment(col, k) = V * st.prob * t.cost;
    lp.A_ub.block(0, col, r, k) = st.prob * t.net;
    lp.A_eq.block(i, col, 1, k).setOnes();
    col += k;
  }
  const LpSolution sol = solve_lp(lp);
  if (sol.status != LpSolution::Status::Optimal) {
    throw ConvergenceError("find_optimal_multiplier: no stabilizing randomized policy, dual is unbounded",
                           Vector::Zero(r));
  }
  return (-sol.dual_ub).cwiseMax(0.0);
}

Vector scalar_bisection(const NetworkSpec& spec, double V) {
  auto slope = [&](double u) { return evaluate_dual(spec, V, Vector::Constant(1, u)).subgradient(0); };
  if (slope(0.0) <= 0.0) return Vector::Zero(1);
  double lo = 0.0;
  double hi = std::max(1.0, V);
  while (slope(hi) > 0.0) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e300) throw ConvergenceError("find_optimal_multiplier: dual increases without bound", Vector::Constant(1, lo));
  }
  for (int it = 0; it < 2000 && hi - lo > 4 * std::numeric_limits<double>::epsilon() * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (slope(mid) > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  // Both endpoints bracket the maximizer; pick the better one.
  const Vector a = Vector::Constant(1, lo);
  const Vector b = Vector::Constant(1, hi);
  return dual_value(spec, V, a) >= dual_value(spec, V, b) ? a : b;
}

Vector osm_search(const NetworkSpec& spec, double V, const MultiplierOptions& opt) {
  Vector u = Vector::Zero(spec.r());
  Vector best = u;
  double best_q = dual_value(spec, V, u);
  for (int t = 0; t < opt.osm_iterations; ++t) {
    const double alpha = opt.step_a * V / (1.0 + t / opt.step_b);
    const DualEval d = evaluate_dual(spec, V, u);
    if (d.value > best_q) {
      best_q = d.value;
      best = u;
    }
    u = (u + alpha * d.subgradient).cwiseMax(0.0);
  }
  return best;
}

}  // namespace

MultiplierResult find_optimal_multiplier(const NetworkSpec& spec, double V, const MultiplierOptions& options) {
  if (!(V >= 1.0)) throw DomainError("find_optimal_multiplier: V must be >= 1");
  MultiplierResult res;
  if (options.closed_form) {
    res.u_star = options.closed_form(V);
    res.method = MultiplierResult::Method::ClosedForm;
    res.q_star = dual_value(spec, V, res.u_star);
    return res;
  }
  res.method = MultiplierResult::Method::NumericSearch;
  if (spec.all_finite()) {
    res.u_star = lp_multiplier(spec, V);
  } else if (spec.r() == 1) {
    res.u_star = scalar_bisection(spec, V);
  } else {
    res.u_star = osm_search(spec, V, options);
  }
  res.q_star = dual_value(spec, V, res.u_star);
  if (!local_optimality_probe(spec, V, res.u_star, options.probe_points, probe_radius_for(res.u_star),
                              options.probe_seed)) {
    throw ConvergenceError("find_optimal_multiplier: local-optimality probe failed at the best iterate",
                           res.u_star);
  }
  res.warning = "uniqueness of the optimal multiplier is assumed, not certified";
  return res;
}

ScalingReport check_scaling(const NetworkSpec& spec, std::span<const double> V_list,
                            const MultiplierOptions& options, double tol) {
  ScalingReport rep;
  const Vector base = find_optimal_multiplier(spec, 1.0, options).u_star;
  for (double V : V_list) {
    const Vector u = find_optimal_multiplier(spec, V, options).u_star;
    const double residual = (u - V * base).cwiseAbs().maxCoeff();
    rep.V.push_back(V);
    rep.residual.push_back(residual);
    if (residual > tol * V) rep.passed = false;
  }
  return rep;
}

bool check_subgradient_inequality(const NetworkSpec& spec, double V, const Vector& u, const Vector& u_hat,
                                  double tol) {
  const DualEval at_u = evaluate_dual(spec, V, u);
  const double q_hat = dual_value(spec, V, u_hat);
  const double lhs = (u_hat - u).dot(at_u.subgradient);
  return lhs >= (q_hat - at_u.value) - tol;
}

SlacknessResult check_slackness(const NetworkSpec& spec, double epsilon) {
  if (!spec.all_finite()) throw ContractError("check_slackness: needs finite action tables");
  const int r = spec.r();
  Eigen::Index n = 0;
  for (const auto& st : spec.states()) n += st.table().size();
  LinearProgram lp;
  lp.c = Vector::Zero(n);
  lp.A_ub = Matrix::Zero(r, n);
  lp.b_ub = Vector::Constant(r, -epsilon);
  lp.A_eq = Matrix::Zero(spec.num_states(), n);
  lp.b_eq = Vector::Ones(spec.num_states());
  Eigen::Index col = 0;
  for (int i = 0; i < spec.num_states(); ++i) {
    const auto& st = spec.state(i);
    const auto k = st.table().size();
    lp.A_ub.block(0, col, r, k) = st.prob * st.table().net;
    lp.A_eq.block(i, col, 1, k).setOnes();
    col += k;
  }
  const LpSolution sol = solve_lp(lp);
  SlacknessResult res;
  res.feasible = sol.status == LpSolution::Status::Optimal;
  if (!res.feasible) return res;
  res.drift = Vector::Zero(r);
  col = 0;
  for (const auto& st : spec.states()) {
    const auto k = st.table().size();
    Vector theta = sol.x.segment(col, k);
    const double mass = theta.sum();
    if (mass > 0.0) theta /= mass;
    res.drift += st.prob * st.table().net * theta;
    res.witness.push_back(std::move(theta));
    col += k;
  }
  return res;
}

GeometryEstimate estimate_geometry(const NetworkSpec& spec, const Vector& u_star0, double probe_radius,
                                   int n_directions, Rng& rng) {
  if (!(probe_radius > 0.0)) throw ContractError("estimate_geometry: probe radius must be positive");
  if (n_directions < 1) throw ContractError("estimate_geometry: need at least one direction");
  require_dim(spec, u_star0, "estimate_geometry");
  const double q_star = dual_value(spec, 1.0, u_star0);
  const double half = 0.5 * probe_radius;

  double lin_outer = std::numeric_limits<double>::infinity();
  double lin_inner = lin_outer;
  double quad_inner = lin_outer;
  int used = 0;
  for (int d = 0; d < n_directions; ++d) {
    Vector dir(spec.r());
    for (Eigen::Index j = 0; j < dir.size(); ++j) {
      // Box-Muller keeps directions isotropic.
      const double u1 = 1.0 - rng.uniform();
      const double u2 = rng.uniform();
      dir(j) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      if (u_star0(j) < probe_radius) dir(j) = std::abs(dir(j));
    }
    if (dir.norm() == 0.0) continue;
    dir.normalize();
    const Vector outer = u_star0 + probe_radius * dir;
    const Vector inner = u_star0 + half * dir;
    if ((outer.array() < 0.0).any() || (inner.array() < 0.0).any()) continue;
    const double drop_outer = q_star - dual_value(spec, 1.0, outer);
    const double drop_inner = q_star - dual_value(spec, 1.0, inner);
    lin_outer = std::min(lin_outer, drop_outer / probe_radius);
    lin_inner = std::min(lin_inner, drop_inner / half);
    quad_inner = std::min(quad_inner, drop_inner / (half * half));
    ++used;
  }
  if (used == 0) {
    throw ConvergenceError("estimate_geometry: no feasible probe direction around U*_0", u_star0);
  }
  GeometryEstimate est;
  est.probe_radius = probe_radius;
  const double scale = std::max(lin_outer, lin_inner);
  if (scale > 0.0 && std::abs(lin_outer - lin_inner) < kPolyhedralRatioTolerance * scale) {
    est.kind = Geometry::Polyhedral;
    est.L = std::min(lin_outer, lin_inner);
  } else {
    est.kind = Geometry::Smooth;
    est.L = quad_inner;
  }
  if (!(est.L > 0.0)) {
    throw ConvergenceError("estimate_geometry: dual does not decrease away from U*_0", u_star0);
  }
  return est;
}

TheoremConstants theorem2_constants(double B, double L) {
  if (!(L > 0.0) || L > B) throw ContractError("theorem2_constants: requires 0 < L <= B");
  TheoremConstants c;
  const double core = B * B + B * L / 6.0;
  c.D1 = 2.0 * B * B / L + L / 4.0;
  c.K1 = core / (L / 2.0);
  c.c1_star = 8.0 * core * std::exp(L / (B + L / 6.0)) / (L * L);
  c.beta_star = 1.0 / c.K1;
  return c;
}

TheoremConstants theorem2_constants(double B, double L, double V) {
  if (!(V >= 1.0)) throw DomainError("theorem2_constants: V must be >= 1");
  TheoremConstants c = theorem2_constants(B, L);
  c.D_smooth = (std::sqrt(V) + std::sqrt(V + 4.0 * B * B * L * V)) / (2.0 * L);
  return c;
}

}  // namespace lyapnet

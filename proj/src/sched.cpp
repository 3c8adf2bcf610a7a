#include "lyapnet/sched.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace lyapnet {

Decision qla_decide(const NetworkSpec& spec, double V, int state, const Vector& u) {
  const auto& st = spec.state(state);
  const Choice c = best_action(st, V, u);
  ActionRecord rec = realize(st, spec.r(), c);
  return Decision{c, rec.cost, std::move(rec.arrivals), std::move(rec.services)};
}

Vector fqla_placeholder_ideal(const Vector& u_star, double V, Geometry regime) {
  if (!(V >= 1.0)) throw DomainError("fqla_placeholder_ideal: V must be >= 1");
  if ((u_star.array() < 0.0).any()) throw DomainError("fqla_placeholder_ideal: U* must be nonnegative");
  const double lnv = std::log(V);
  double margin = lnv * lnv;
  if (regime == Geometry::Smooth) margin *= std::sqrt(V);
  return (u_star.array() - margin).cwiseMax(0.0).matrix();
}

FqlaState FqlaState::initial(const Vector& placeholders) {
  const auto r = placeholders.size();
  return FqlaState{placeholders, Vector::Zero(r), placeholders, Vector::Zero(r), Vector::Zero(r)};
}

void fqla_step_inplace(FqlaState& st, const Decision& d) {
  for (Eigen::Index j = 0; j < st.w.size(); ++j) {
    const double a = d.arrivals(j);
    const double mu = d.services(j);
    double admit = a;
    if (st.w(j) < st.placeholders(j)) admit = std::max(a - st.placeholders(j) + st.w(j), 0.0);
    st.u(j) = std::max(st.u(j) - mu, 0.0) + admit;
    st.dropped(j) += a - admit;
    st.admitted(j) += admit;
    st.w(j) = std::max(st.w(j) - mu, 0.0) + a;
  }
}

FqlaState fqla_step(const FqlaState& st, const Decision& decision) {
  FqlaState next = st;
  fqla_step_inplace(next, decision);
  return next;
}

Vector fqla_general_estimate(const NetworkSpec& spec, double V, std::uint64_t T, int K, const Rng& rng) {
  if (T < 1 || K < 1) throw ContractError("fqla_general_estimate: needs T >= 1 and K >= 1");
  Vector sum = Vector::Zero(spec.r());
  for (int k = 0; k < K; ++k) {
    Rng local = rng.substream(static_cast<std::uint64_t>(k));
    Vector w = Vector::Zero(spec.r());
    for (std::uint64_t t = 0; t < T; ++t) {
      const Decision d = qla_decide(spec, V, sample_state(spec, local), w);
      w = queue_update(w, d.services, d.arrivals);
    }
    sum += w;
  }
  const double lnv = std::log(V);
  return (sum.array() / K - lnv * lnv).cwiseMax(0.0).matrix();
}

Trend classify_trend(std::span<const double> series, double B) {
  const auto n = series.size();
  if (n < 2) return Trend::Fluctuating;
  const double xbar = 0.5 * static_cast<double>(n - 1);
  double ybar = 0.0;
  for (double y : series) ybar += y;
  ybar /= static_cast<double>(n);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (series[i] - ybar);
    sxx += dx * dx;
  }
  const double slope = sxy / sxx;
  if (std::abs(slope) < B / std::sqrt(static_cast<double>(n))) return Trend::Fluctuating;
  return slope > 0.0 ? Trend::Increasing : Trend::Decreasing;
}

BisectionResult bisection_placeholder(const NetworkSpec& spec, double V, const Vector& guess, const Rng& rng,
                                      const BisectionOptions& options) {
  const int r = spec.r();
  if (guess.size() != r) throw ContractError("bisection_placeholder: guess has wrong length");
  if ((guess.array() < 0.0).any()) throw DomainError("bisection_placeholder: guess must be nonnegative");
  const std::uint64_t T1 =
      options.T1 > 0 ? options.T1 : static_cast<std::uint64_t>(std::max(std::sqrt(V), 10.0 * V));
  constexpr double inf = std::numeric_limits<double>::infinity();

  BisectionResult res;
  res.levels = guess;
  Vector lo = Vector::Zero(r);
  Vector hi = Vector::Constant(r, inf);
  std::vector<std::vector<double>> series(static_cast<std::size_t>(r));

  // Queues are coupled, so every queue is re-tested each round; a queue that
  // fluctuates keeps its level and bracket until it drifts again.
  for (res.depth = 0; res.depth <= options.max_depth; ++res.depth) {
    Rng local = rng.substream(static_cast<std::uint64_t>(res.depth));
    Vector w = res.levels;
    for (auto& s : series) {
      s.clear();
      s.reserve(T1 + 1);
    }
    for (std::uint64_t t = 0; t <= T1; ++t) {
      for (int j = 0; j < r; ++j) series[static_cast<std::size_t>(j)].push_back(w(j));
      if (t == T1) break;
      const Decision d = qla_decide(spec, V, sample_state(spec, local), w);
      w = queue_update(w, d.services, d.arrivals);
    }
    bool all_flat = true;
    Vector next = res.levels;
    for (int j = 0; j < r; ++j) {
      switch (classify_trend(series[static_cast<std::size_t>(j)], spec.bound_B())) {
        case Trend::Fluctuating:
          break;
        case Trend::Increasing:
          all_flat = false;
          lo(j) = res.levels(j);
          if (hi(j) <= lo(j)) hi(j) = inf;
          next(j) = std::isinf(hi(j)) ? std::max(2.0 * res.levels(j), 1.0) : 0.5 * (lo(j) + hi(j));
          break;
        case Trend::Decreasing:
          all_flat = false;
          hi(j) = res.levels(j);
          if (lo(j) >= hi(j)) lo(j) = 0.0;
          next(j) = 0.5 * (lo(j) + hi(j));
          break;
      }
    }
    if (all_flat) {
      res.converged = true;
      break;
    }
    res.levels = next;
  }
  if (res.depth > options.max_depth) res.depth = options.max_depth;
  const double lnv = std::log(V);
  res.placeholders = (res.levels.array() - lnv * lnv).cwiseMax(0.0).matrix();
  return res;
}

}  // namespace lyapnet

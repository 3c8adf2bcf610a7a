#pragma once

// Online controllers. QLA picks, every slot, the action maximizing
// -V f + sum_j U_j (b_j - g_j). FQLA runs QLA on a virtual backlog W(t) that
// starts at the place-holder level and admits arrivals into the actual
// backlog U(t) only once W(t) has climbed back above that level.

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>

#include "lyapnet/dual.hpp"
#include "lyapnet/model.hpp"

namespace lyapnet {

struct Decision {
  Choice choice;
  double cost = 0.0;
  Vector arrivals;
  Vector services;
};

Decision qla_decide(const NetworkSpec& spec, double V, int state, const Vector& u);

/// max[U*_j - ln^2(V), 0] (polyhedral) or max[U*_j - ln^2(V) sqrt(V), 0] (smooth).
Vector fqla_placeholder_ideal(const Vector& u_star, double V, Geometry regime);

struct FqlaState {
  Vector w;             // virtual backlog
  Vector u;             // actual backlog
  Vector placeholders;  // place-holder bits per queue
  Vector dropped;       // cumulative
  Vector admitted;      // cumulative

  /// U(0) = 0, W(0) = placeholders.
  static FqlaState initial(const Vector& placeholders);
};

/// Advances one slot with QLA's decision (made on st.w). Queue j admits A_j
/// when W_j >= placeholder_j, otherwise max[A_j - placeholder_j + W_j, 0] and
/// drops the rest; W always follows the plain queueing law.
FqlaState fqla_step(const FqlaState& st, const Decision& decision);
void fqla_step_inplace(FqlaState& st, const Decision& decision);

/// Average of K terminal QLA virtual backlogs after T slots from W(0) = 0,
/// minus ln^2(V), floored at 0. Repetition k draws from rng.substream(k).
Vector fqla_general_estimate(const NetworkSpec& spec, double V, std::uint64_t T, int K, const Rng& rng);

struct BisectionOptions {
  std::uint64_t T1 = 0;     // 0 picks max(sqrt(V), 10 V)
  int max_depth = 60;
};

struct BisectionResult {
  Vector placeholders;
  Vector levels;            // starting levels classified as fluctuating
  int depth = 0;
  bool converged = false;   // false: max depth hit, best levels returned
};

enum class Trend { Increasing, Decreasing, Fluctuating };

/// OLS slope of `series`, classified fluctuating iff |slope| < B / sqrt(n).
Trend classify_trend(std::span<const double> series, double B);

/// Per-queue bisection on the QLA starting level until the virtual backlog
/// fluctuates around it; returns max[level - ln^2(V), 0].
BisectionResult bisection_placeholder(const NetworkSpec& spec, double V, const Vector& guess, const Rng& rng,
                                      const BisectionOptions& options = {});

}  // namespace lyapnet

#pragma once

// Dual of the deterministic problem
//
//   q(U) = sum_i p_i min_{x in X_i} { V f(s_i, x) + U^T [g(s_i, x) - b(s_i, x)] },
//
// its subgradient G_U = sum_i p_i [g - b](s_i, x_U), ordinary and randomized
// incremental subgradient steps, optimal-multiplier search, and the
// diagnostics built on top of it (scaling, slackness, local geometry).

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lyapnet/model.hpp"

namespace lyapnet {

/// A chosen action: an index into a finite table, or the scalar decision of a
/// continuous family (index == -1).
struct Choice {
  int index = -1;
  double x = 0.0;

  friend bool operator==(const Choice&, const Choice&) = default;
};

/// Minimizer of V f + u^T (g - b) over one state's action set. Ties go to the
/// lowest action index. QLA, OSM and RISM all select through this function.
Choice best_action(const StateSpec& state, double V, const Vector& u);

/// V f + u^T (g - b) evaluated at `choice`.
double lagrangian_term(const StateSpec& state, double V, const Vector& u, const Choice& choice);

/// Cost, arrival and service vectors produced by `choice` in `state`.
ActionRecord realize(const StateSpec& state, int r, const Choice& choice);

struct DualEval {
  double value = 0.0;
  Vector subgradient;
  std::vector<Choice> argmin_actions;
};

DualEval evaluate_dual(const NetworkSpec& spec, double V, const Vector& u);

/// Dual value alone (same argmin rule, no allocation of the action list).
double dual_value(const NetworkSpec& spec, double V, const Vector& u);

/// Single-queue dual of state i taken as the only state:
/// min_x { V f(s_i, x) + u [g_1 - b_1](s_i, x) }.
std::pair<double, Choice> per_state_dual(const NetworkSpec& spec, double V, int state, double u);

/// Smallest maximizer over u >= 0 of the per-state dual of state i, or +inf
/// when that dual keeps increasing.
double per_state_optimum(const NetworkSpec& spec, double V, int state);

Vector osm_step(const NetworkSpec& spec, double V, const Vector& u, double alpha = 1.0);
Vector rism_step(const NetworkSpec& spec, double V, const Vector& u, int state, double alpha = 1.0);

struct MultiplierOptions {
  /// Registered closed form U*_V, if the scenario has one.
  std::function<Vector(double)> closed_form;
  /// Diminishing-step OSM, alpha_t = step_a / (1 + t / step_b); used for
  /// continuous families with r > 1, where no exact method applies.
  int osm_iterations = 20000;
  double step_a = 1.0;
  double step_b = 100.0;
  int probe_points = 100;
  std::uint64_t probe_seed = 7;
};

struct MultiplierResult {
  enum class Method { ClosedForm, NumericSearch };
  Vector u_star;
  double q_star = 0.0;
  Method method = Method::NumericSearch;
  /// Set when the local-optimality probe could not confirm the maximizer, or
  /// when uniqueness cannot be certified.
  std::string warning;
};

/// Thrown when the dual is unbounded (no stabilizing policy) or a search
/// fails its local-optimality probe. Carries the best iterate found.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, Vector best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const Vector& best() const noexcept { return best_; }

 private:
  Vector best_;
};

MultiplierResult find_optimal_multiplier(const NetworkSpec& spec, double V,
                                         const MultiplierOptions& options = {});

/// q(U*) >= q(U* + delta) for `points` random perturbations of radius up to
/// `radius`, clipped to the nonnegative orthant.
bool local_optimality_probe(const NetworkSpec& spec, double V, const Vector& u_star,
                            int points, double radius, std::uint64_t seed);

struct ScalingReport {
  std::vector<double> V;
  std::vector<double> residual;  // ||U*_V - V U*_1||_inf
  bool passed = true;
};

/// Checks U*_V = V U*_1 at each V, within tol * V.
ScalingReport check_scaling(const NetworkSpec& spec, std::span<const double> V_list,
                            const MultiplierOptions& options = {}, double tol = 1e-9);

/// (u_hat - u)^T G_u >= q(u_hat) - q(u) - tol.
bool check_subgradient_inequality(const NetworkSpec& spec, double V, const Vector& u,
                                  const Vector& u_hat, double tol = 1e-9);

struct SlacknessResult {
  bool feasible = false;
  /// Per-state action distributions achieving sum_i p_i E[g - b] <= -eps.
  std::vector<Vector> witness;
  /// Componentwise sum_i p_i E_witness[g - b].
  Vector drift;
};

SlacknessResult check_slackness(const NetworkSpec& spec, double epsilon);

enum class Geometry { Polyhedral, Smooth };

struct GeometryEstimate {
  Geometry kind = Geometry::Polyhedral;
  double L = 0.0;
  double probe_radius = 0.0;
};

/// Ratio (q0(U*_0) - q0(U)) / ||U - U*_0|| must agree within this fraction at
/// the two probe radii for the dual to count as locally polyhedral.
inline constexpr double kPolyhedralRatioTolerance = 0.2;

/// Probes q_0 (V = 1) on rings of radius `probe_radius` and `probe_radius/2`
/// around U*_0 along random directions that stay in the nonnegative orthant.
GeometryEstimate estimate_geometry(const NetworkSpec& spec, const Vector& u_star0,
                                   double probe_radius, int n_directions, Rng& rng);

struct TheoremConstants {
  double D1 = 0.0;
  double K1 = 0.0;
  double c1_star = 0.0;
  double beta_star = 0.0;
  std::optional<double> D_smooth;
};

/// Attraction constants for i.i.d. states with eta = L/2:
///   D1 = 2B^2/L + L/4,  K1 = (B^2 + BL/6)/(L/2),
///   c1* = 8(B^2 + BL/6) e^{L/(B + L/6)} / L^2,  beta* = 1/K1.
TheoremConstants theorem2_constants(double B, double L);

/// Same, plus the smooth-case drift radius (sqrt(V) + sqrt(V + 4B^2 L V)) / (2L).
TheoremConstants theorem2_constants(double B, double L, double V);

}  // namespace lyapnet

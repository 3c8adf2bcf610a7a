#pragma once

// Network model: states, per-state action sets, i.i.d. state sampling and the
// slotted queueing law U(t+1) = max[U(t) - mu(t), 0] + A(t).

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace lyapnet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// A caller broke an operation's precondition (wrong dimension, r != 1, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An argument is outside the mathematical domain (e.g. a negative multiplier).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Scenario data violates a NetworkSpec invariant. `path()` names the offending
/// field in JSON-path style, e.g. "states[3].actions[0].services[1]".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct ActionRecord {
  double cost = 0.0;
  Vector arrivals;
  Vector services;
};

/// Finite action set of one state. Column k of the matrices is action k.
struct ActionTable {
  Vector cost;       // K
  Matrix arrivals;   // r x K
  Matrix services;   // r x K
  Matrix net;        // arrivals - services, filled by NetworkSpec

  static ActionTable from_records(const std::vector<ActionRecord>& records);
  int size() const { return static_cast<int>(cost.size()); }
  ActionRecord action(int k) const;
};

/// Scalar rate decision x in [lo, hi] on a single queue: cost e^x - 1,
/// service x, and a state-dependent constant arrival. Only built-in scenarios
/// use this; config files carry finite tables.
struct ExpRateFamily {
  double lo = 0.0;
  double hi = 0.0;
  double arrival = 0.0;

  double cost(double x) const;
  /// argmin over [lo, hi] of V(e^x - 1) - u x, i.e. clamp(log(u / V)).
  double minimizer(double V, double u) const;
};

struct StateSpec {
  double prob = 0.0;
  std::variant<ActionTable, ExpRateFamily> actions;

  bool is_finite() const { return std::holds_alternative<ActionTable>(actions); }
  const ActionTable& table() const { return std::get<ActionTable>(actions); }
  const ExpRateFamily& family() const { return std::get<ExpRateFamily>(actions); }
};

/// Immutable description of a network: r queues, M i.i.d. states with their
/// probabilities and action sets, and the packet bound delta_max.
class NetworkSpec {
 public:
  /// `exogenous` marks queues whose arrivals come from outside the network
  /// (used for the drop fraction); empty means every queue is exogenous.
  NetworkSpec(std::string name, int r, double delta_max,
              std::vector<StateSpec> states, std::vector<bool> exogenous = {});

  const std::string& name() const { return name_; }
  int r() const { return r_; }
  int num_states() const { return static_cast<int>(states_.size()); }
  const StateSpec& state(int i) const { return states_.at(static_cast<std::size_t>(i)); }
  const std::vector<StateSpec>& states() const { return states_; }
  double delta_max() const { return delta_max_; }
  /// sqrt(r) * delta_max, the per-slot bound on ||A(t) - mu(t)||.
  double bound_B() const { return bound_B_; }
  const std::vector<bool>& exogenous() const { return exogenous_; }
  bool all_finite() const;
  const std::vector<double>& cumulative() const { return cumulative_; }

 private:
  std::string name_;
  int r_;
  double delta_max_;
  double bound_B_;
  std::vector<StateSpec> states_;
  std::vector<bool> exogenous_;
  std::vector<double> cumulative_;
};

bool operator==(const NetworkSpec& a, const NetworkSpec& b);

/// Seedable generator with a fixed stream-splitting rule: the engine is an
/// mt19937_64 seeded through std::seed_seq{seed_lo, seed_hi, stream_lo,
/// stream_hi}. Run k of a sweep, or repetition k of an estimate, uses stream
/// k (via substream()). Uniforms are built from the top 53 bits so draws are
/// identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Independent child stream; deterministic in (seed, stream, k).
  Rng substream(std::uint64_t k) const;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

int sample_state(const NetworkSpec& spec, Rng& rng);

/// U' = max[U - mu, 0] + A, entrywise.
template <typename DerivedU, typename DerivedMu, typename DerivedA>
Eigen::Matrix<typename DerivedU::Scalar, Eigen::Dynamic, 1> queue_update(
    const Eigen::MatrixBase<DerivedU>& u, const Eigen::MatrixBase<DerivedMu>& mu,
    const Eigen::MatrixBase<DerivedA>& a) {
  using Scalar = typename DerivedU::Scalar;
  return (u - mu).cwiseMax(Scalar(0)) + a;
}

/// One-step squared-distance bound of the queueing law:
/// ||U' - U*||^2 <= ||U - U*||^2 + 2B^2 - 2 (U* - U)^T (A - mu).
/// `tol` is relative to the magnitude of the right-hand side.
template <typename DerivedU, typename DerivedMu, typename DerivedA, typename DerivedT>
bool one_step_distance_contract_check(const Eigen::MatrixBase<DerivedU>& u,
                                      const Eigen::MatrixBase<DerivedMu>& mu,
                                      const Eigen::MatrixBase<DerivedA>& a,
                                      const Eigen::MatrixBase<DerivedT>& target,
                                      typename DerivedU::Scalar B,
                                      typename DerivedU::Scalar tol = 1e-9) {
  const auto next = queue_update(u, mu, a);
  const auto lhs = (next - target).squaredNorm();
  const auto rhs = (u - target).squaredNorm() + 2 * B * B - 2 * (target - u).dot(a - mu);
  return lhs <= rhs + tol * (1 + std::abs(rhs));
}

}  // namespace lyapnet

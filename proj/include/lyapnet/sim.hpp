#pragma once

// Slot-by-slot simulation engine and the statistics computed from its runs:
// time averages, deviation curves P(D, m), exponential tail fits and the
// single-queue absorbing-interval check.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lyapnet/dual.hpp"
#include "lyapnet/model.hpp"
#include "lyapnet/sched.hpp"

namespace lyapnet {

enum class Algorithm { Qla, FqlaIdeal, FqlaGeneral, FqlaBisect };

/// "qla", "fqla-ideal", "fqla-general", "fqla-bisect".
Algorithm parse_algorithm(std::string_view name);
std::string_view algorithm_name(Algorithm alg);
inline bool is_fqla(Algorithm alg) { return alg != Algorithm::Qla; }

struct RunConfig {
  double V = 1.0;
  std::uint64_t slots = 0;
  std::uint64_t seed = 1;
  /// Defaults to min(100 V, slots / 10).
  std::optional<std::uint64_t> burn_in;
  Algorithm algorithm = Algorithm::Qla;
  bool record_trace = false;
  /// U*_V. Required by fqla-ideal (place-holders) and by the deviation
  /// statistics; optional otherwise.
  std::optional<Vector> deviation_reference;
  Geometry geometry = Geometry::Polyhedral;
  /// Explicit place-holders override the algorithm's own Step I.
  std::optional<Vector> placeholders;
  /// fqla-general Step I: horizon T (0 means 50 V) and repetitions K.
  std::uint64_t estimate_T = 0;
  int estimate_K = 1;
  /// fqla-bisect: starting guess (defaults to 2 U*_V or 20 V per queue).
  std::optional<Vector> bisect_guess;
  BisectionOptions bisect;
  /// Per-slot invariant assertions (nonnegativity, change bound B, the
  /// sandwich, one-step distance bound against the reference).
  bool check_invariants = true;

  std::uint64_t effective_burn_in() const;
};

/// One simulated slot, as written to the trace CSV.
struct SlotRecord {
  std::uint64_t slot = 0;
  int state = 0;
  double cost = 0.0;
  Vector u;
  Vector w;  // empty for QLA
  double dropped = 0.0;
};

struct Trace {
  int r = 0;
  bool has_virtual = false;
  std::vector<std::uint64_t> slot;
  std::vector<int> state;
  std::vector<double> cost;
  Matrix u;  // r x T
  Matrix w;  // r x T (empty for QLA)
  std::vector<double> dropped;

  std::size_t size() const { return slot.size(); }
};

struct SimReport {
  std::string algorithm;
  double V = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t slots = 0;
  std::uint64_t burn_in = 0;

  double avg_cost = 0.0;
  Vector avg_backlog;
  double avg_total_backlog = 0.0;
  Vector avg_virtual_backlog;  // zeros for QLA
  double avg_total_virtual_backlog = 0.0;
  Vector min_virtual_backlog;  // post burn-in minimum of W (FQLA)
  double drop_fraction = 0.0;
  double dropped_total = 0.0;
  double offered_exogenous = 0.0;
  Vector placeholders;  // empty for QLA

  bool has_reference = false;
  Vector reference;
  /// Sorted post-burn-in samples of ||X - U*_V|| and max_j |X_j - U*_Vj|,
  /// X = W for FQLA runs and U for QLA runs.
  std::vector<double> deviation_samples;
  std::vector<double> per_coord_samples;
  /// Counts per 1-packet bin of the two deviation statistics.
  std::vector<std::uint64_t> deviation_hist;
  std::vector<std::uint64_t> per_coord_deviation_hist;

  std::uint64_t invariant_checks = 0;
};

class InvariantViolation : public std::runtime_error {
 public:
  InvariantViolation(std::uint64_t slot, const std::string& what)
      : std::runtime_error(what), slot_(slot) {}
  std::uint64_t slot() const noexcept { return slot_; }

 private:
  std::uint64_t slot_;
};

using SlotObserver = std::function<void(const SlotRecord&)>;

struct RunResult {
  SimReport report;
  std::optional<Trace> trace;
};

RunResult run(const NetworkSpec& spec, const RunConfig& config, const SlotObserver& observer = {});

/// Place-holders an FQLA run would use under `config` (Step I only).
Vector resolve_placeholders(const NetworkSpec& spec, const RunConfig& config);

struct DeviationCurve {
  double D = 0.0;
  std::vector<double> prob;                 // P(D, m), m = 0, 1, ...
  std::vector<std::uint64_t> exceed_count;  // slots with deviation > D + m
  std::uint64_t total = 0;
};

enum class DeviationKind { Norm, PerCoordinate };

/// Empirical P(D, m) for m = 0 .. last m with a nonzero count (at least one
/// point). Throws ContractError if the run had no reference.
DeviationCurve deviation_statistics(const SimReport& report, double D, DeviationKind kind = DeviationKind::Norm);
DeviationCurve deviation_statistics(std::span<const double> sorted_samples, double D);

struct TailFit {
  double c_hat = 0.0;
  double beta_hat = 0.0;
  double r_squared = 0.0;
  int m_lo = 0;
  int m_hi = 0;
  bool exponential = false;  // beta_hat > 0 and r^2 >= 0.9
};

struct TailFitOptions {
  std::uint64_t min_samples = 30;
  /// Bins with P above this are the body of the distribution, not its tail.
  double head_cutoff = 0.5;
  int min_bins = 4;
};

class InsufficientTailMass : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least squares of ln P on m over bins in the tail (P <= head_cutoff) with
/// at least min_samples exceedances.
TailFit fit_tail(const DeviationCurve& curve, const TailFitOptions& options = {});

struct AbsorptionReport {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> per_state_optima;
  bool entered = false;
  std::uint64_t t0 = 0;
  std::optional<std::uint64_t> violation;
};

/// Interval [min_i U*_i - B, max_i U*_i + B] from the per-state duals (U*_i is
/// the smallest per-state maximizer), first entry slot and first exit after it.
AbsorptionReport absorption_check(const NetworkSpec& spec, double V, std::span<const double> trace);

/// Sandwich check of a recorded FQLA trace: returns the number of slots where
/// max[W - P, 0] <= U <= max[W - P, 0] + delta_max fails (tolerance tol).
std::uint64_t count_sandwich_violations(const Trace& trace, const Vector& placeholders, double delta_max,
                                        double tol = 1e-9);

// CSV formats (12 significant digits).
void write_trace_header(std::ostream& os, int r);
void write_trace_row(std::ostream& os, const SlotRecord& rec, int r);
Trace read_trace_csv(std::istream& is);
void write_report_header(std::ostream& os, int r);
void write_report_row(std::ostream& os, const SimReport& rep, std::string_view scenario, int r);
std::string format_number(double v);

}  // namespace lyapnet

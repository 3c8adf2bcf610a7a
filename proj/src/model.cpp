#include "lyapnet/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace lyapnet {

ActionTable ActionTable::from_records(const std::vector<ActionRecord>& records) {
  ActionTable t;
  const auto k = static_cast<Eigen::Index>(records.size());
  const Eigen::Index r = records.empty() ? 0 : records.front().arrivals.size();
  t.cost.resize(k);
  t.arrivals.resize(r, k);
  t.services.resize(r, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& rec = records[static_cast<std::size_t>(i)];
    if (rec.arrivals.size() != r || rec.services.size() != r) {
      throw ValidationError(fmt::format("actions[{}]", i), "arrival/service vectors differ in length");
    }
    t.cost(i) = rec.cost;
    t.arrivals.col(i) = rec.arrivals;
    t.services.col(i) = rec.services;
  }
  t.net = t.arrivals - t.services;
  return t;
}

ActionRecord ActionTable::action(int k) const {
  return ActionRecord{cost(k), arrivals.col(k), services.col(k)};
}

double ExpRateFamily::cost(double x) const { return std::expm1(x); }

double ExpRateFamily::minimizer(double V, double u) const {
  if (u <= 0.0) return lo;
  return std::clamp(std::log(u / V), lo, hi);
}

namespace {

void check_entry(double v, double delta_max, const std::string& path) {
  if (!std::isfinite(v)) throw ValidationError(path, "not finite");
  if (v < 0.0) throw ValidationError(path, fmt::format("negative value {}", v));
  if (v > delta_max) throw ValidationError(path, fmt::format("{} exceeds delta_max {}", v, delta_max));
}

}  // namespace

NetworkSpec::NetworkSpec(std::string name, int r, double delta_max,
                         std::vector<StateSpec> states, std::vector<bool> exogenous)
    : name_(std::move(name)),
      r_(r),
      delta_max_(delta_max),
      bound_B_(std::sqrt(static_cast<double>(r)) * delta_max),
      states_(std::move(states)),
      exogenous_(std::move(exogenous)) {
  if (r_ <= 0) throw ValidationError("r", "must be a positive integer");
  if (!(delta_max_ > 0.0) || !std::isfinite(delta_max_)) {
    throw ValidationError("delta_max", "must be positive and finite");
  }
  if (states_.empty()) throw ValidationError("states", "at least one state required");
  if (exogenous_.empty()) exogenous_.assign(static_cast<std::size_t>(r_), true);
  if (static_cast<int>(exogenous_.size()) != r_) {
    throw ValidationError("exogenous_queues", "length must equal r");
  }

  double total = 0.0;
  cumulative_.reserve(states_.size());
  for (std::size_t i = 0; i < states_.size(); ++i) {
    auto& st = states_[i];
    const std::string base = fmt::format("states[{}]", i);
    if (!std::isfinite(st.prob) || st.prob < 0.0) {
      throw ValidationError(base + ".prob", "probability must be nonnegative");
    }
    total += st.prob;
    cumulative_.push_back(total);

    if (auto* table = std::get_if<ActionTable>(&st.actions)) {
      if (table->size() == 0) throw ValidationError(base + ".actions", "at least one action required");
      if (table->arrivals.rows() != r_ || table->services.rows() != r_ ||
          table->arrivals.cols() != table->size() || table->services.cols() != table->size()) {
        throw ValidationError(base + ".actions", fmt::format("arrival/service vectors must have length {}", r_));
      }
      for (int k = 0; k < table->size(); ++k) {
        const std::string apath = fmt::format("{}.actions[{}]", base, k);
        if (!std::isfinite(table->cost(k))) throw ValidationError(apath + ".cost", "not finite");
        for (int j = 0; j < r_; ++j) {
          check_entry(table->arrivals(j, k), delta_max_, fmt::format("{}.arrivals[{}]", apath, j));
          check_entry(table->services(j, k), delta_max_, fmt::format("{}.services[{}]", apath, j));
        }
      }
      table->net = table->arrivals - table->services;
    } else {
      const auto& fam = std::get<ExpRateFamily>(st.actions);
      if (r_ != 1) throw ValidationError(base + ".actions", "continuous families need r = 1");
      if (!(fam.lo <= fam.hi) || !std::isfinite(fam.lo) || !std::isfinite(fam.hi)) {
        throw ValidationError(base + ".actions", "interval needs finite lo <= hi");
      }
      check_entry(fam.lo, delta_max_, base + ".actions.lo");
      check_entry(fam.hi, delta_max_, base + ".actions.hi");
      check_entry(fam.arrival, delta_max_, base + ".actions.arrival");
    }
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ValidationError("states[*].prob", fmt::format("probabilities sum to {} instead of 1", total));
  }
  cumulative_.back() = 1.0;
}

bool NetworkSpec::all_finite() const {
  return std::all_of(states_.begin(), states_.end(), [](const StateSpec& s) { return s.is_finite(); });
}

bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
  if (a.name() != b.name() || a.r() != b.r() || a.delta_max() != b.delta_max() ||
      a.num_states() != b.num_states() || a.exogenous() != b.exogenous()) {
    return false;
  }
  for (int i = 0; i < a.num_states(); ++i) {
    const auto& sa = a.state(i);
    const auto& sb = b.state(i);
    if (sa.prob != sb.prob || sa.is_finite() != sb.is_finite()) return false;
    if (sa.is_finite()) {
      const auto& ta = sa.table();
      const auto& tb = sb.table();
      if (ta.size() != tb.size() || ta.cost != tb.cost || ta.arrivals != tb.arrivals ||
          ta.services != tb.services) {
        return false;
      }
    } else {
      const auto& fa = sa.family();
      const auto& fb = sb.family();
      if (fa.lo != fb.lo || fa.hi != fb.hi || fa.arrival != fb.arrival) return false;
    }
  }
  return true;
}

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(seeded_engine(seed, stream)) {}

Rng Rng::substream(std::uint64_t k) const {
  return Rng(seed_, splitmix64(stream_ ^ splitmix64(k + 1)));
}

int sample_state(const NetworkSpec& spec, Rng& rng) {
  const auto& cum = spec.cumulative();
  const double u = rng.uniform();
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  const auto idx = std::min<std::ptrdiff_t>(it - cum.begin(), static_cast<std::ptrdiff_t>(cum.size()) - 1);
  return static_cast<int>(idx);
}

}  // namespace lyapnet

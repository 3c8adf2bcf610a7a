#include "lyapnet/scenarios.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace lyapnet {

using nlohmann::json;

MultiplierResult ScenarioHandle::multiplier(double V) const {
  MultiplierOptions opt;
  opt.closed_form = closed_form;
  return find_optimal_multiplier(spec, V, opt);
}

namespace {

// Tandem chain of n queues: bit j of the action index powers queue j, which
// then serves 2 packets on a good channel and 1 on a bad one. Queue 1 receives
// R, queue j > 1 receives queue j-1's service. Cost is the number of powered queues.
NetworkSpec tandem_chain(const std::string& name, int n) {
  const int channel_states = 1 << n;
  const int actions = 1 << n;
  std::vector<StateSpec> states;
  states.reserve(static_cast<std::size_t>(2 * channel_states));
  for (int rbit = 0; rbit < 2; ++rbit) {
    const double R = rbit ? 2.0 : 0.0;
    const double p_r = rbit ? 5.0 / 8.0 : 3.0 / 8.0;
    for (int ch = 0; ch < channel_states; ++ch) {
      ActionTable t;
      t.cost.resize(actions);
      t.arrivals.resize(n, actions);
      t.services.resize(n, actions);
      for (int a = 0; a < actions; ++a) {
        t.cost(a) = 0.0;
        for (int j = 0; j < n; ++j) {
          const bool on = (a >> j) & 1;
          const double rate = ((ch >> j) & 1) ? 2.0 : 1.0;
          t.services(j, a) = on ? rate : 0.0;
          t.cost(a) += on ? 1.0 : 0.0;
        }
        t.arrivals(0, a) = R;
        for (int j = 1; j < n; ++j) t.arrivals(j, a) = t.services(j - 1, a);
      }
      states.push_back(StateSpec{p_r / channel_states, std::move(t)});
    }
  }
  std::vector<bool> exogenous(static_cast<std::size_t>(n), false);
  exogenous[0] = true;
  return NetworkSpec(name, n, 2.0, std::move(states), std::move(exogenous));
}

// U*_V = V (n, n-1, ..., 1): each link's backlog difference equals V.
std::function<Vector(double)> tandem_multiplier(int n) {
  return [n](double V) {
    Vector u(n);
    for (int j = 0; j < n; ++j) u(j) = V * (n - j);
    return u;
  };
}

}  // namespace

ScenarioHandle two_queue() {
  return ScenarioHandle{
      "two-queue", tandem_chain("two-queue", 2), tandem_multiplier(2), 1.5, Geometry::Polyhedral,
      "Action table reconstructed from the textual description: states are (R, channel 1, channel 2), "
      "power in {0,1} per queue, good channel serves 2, bad serves 1."};
}

ScenarioHandle five_queue_chain() {
  return ScenarioHandle{"five-queue", tandem_chain("five-queue", 5), tandem_multiplier(5), 3.75,
                        Geometry::Polyhedral, "All 32 power combinations are allowed in every state."};
}

ScenarioHandle single_queue_continuous() {
  std::vector<StateSpec> states;
  for (double a : {0.0, 1.0}) states.push_back(StateSpec{0.5, ExpRateFamily{0.0, 2.0, a}});
  NetworkSpec spec("single-queue-continuous", 1, 2.0, std::move(states));
  const double e_half = std::exp(0.5);
  return ScenarioHandle{"single-queue-continuous", std::move(spec),
                        [e_half](double V) { return Vector::Constant(1, V * e_half); }, e_half - 1.0,
                        Geometry::Smooth, "Rate interval capped at mu_max = 2."};
}

ScenarioHandle single_queue_discrete() {
  const std::vector<double> rates{0.0, 0.25, 0.75, 1.0};
  std::vector<StateSpec> states;
  for (double a : {0.0, 1.0}) {
    std::vector<ActionRecord> recs;
    for (double mu : rates) {
      recs.push_back(ActionRecord{std::expm1(mu), Vector::Constant(1, a), Vector::Constant(1, mu)});
    }
    states.push_back(StateSpec{0.5, ActionTable::from_records(recs)});
  }
  NetworkSpec spec("single-queue-discrete", 1, 1.0, std::move(states));
  const double lo = std::exp(0.25);
  const double hi = std::exp(0.75);
  return ScenarioHandle{"single-queue-discrete", std::move(spec),
                        [lo, hi](double V) { return Vector::Constant(1, 2.0 * V * (hi - lo)); },
                        0.5 * (hi + lo) - 1.0, Geometry::Polyhedral,
                        "Optimal policy time-shares the rates 1/4 and 3/4 equally."};
}

const std::vector<std::string>& builtin_names() {
  static const std::vector<std::string> names{"two-queue", "single-queue-continuous", "single-queue-discrete",
                                              "five-queue"};
  return names;
}

ScenarioHandle builtin(const std::string& name) {
  if (name == "two-queue") return two_queue();
  if (name == "single-queue-continuous") return single_queue_continuous();
  if (name == "single-queue-discrete") return single_queue_discrete();
  if (name == "five-queue") return five_queue_chain();
  throw ContractError(fmt::format("unknown scenario '{}'", name));
}

namespace {

const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(path.empty() ? key : path + "." + key, "missing field");
  return *it;
}

double number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ValidationError(path, "expected a number");
  return v.get<double>();
}

Vector number_array(const json& v, int r, const std::string& path) {
  if (!v.is_array()) throw ValidationError(path, "expected an array");
  if (static_cast<int>(v.size()) != r) throw ValidationError(path, fmt::format("expected {} entries", r));
  Vector out(r);
  for (int j = 0; j < r; ++j) out(j) = number(v[static_cast<std::size_t>(j)], fmt::format("{}[{}]", path, j));
  return out;
}

}  // namespace

NetworkSpec spec_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("$", fmt::format("JSON parse error: {}", e.what()));
  }
  const auto& name_v = field(doc, "name", "");
  if (!name_v.is_string()) throw ValidationError("name", "expected a string");
  const auto& r_v = field(doc, "r", "");
  if (!r_v.is_number_integer() || r_v.get<long long>() <= 0) throw ValidationError("r", "expected a positive integer");
  const int r = r_v.get<int>();
  const double delta_max = number(field(doc, "delta_max", ""), "delta_max");

  const auto& states_v = field(doc, "states", "");
  if (!states_v.is_array()) throw ValidationError("states", "expected an array");
  std::vector<StateSpec> states;
  for (std::size_t i = 0; i < states_v.size(); ++i) {
    const std::string sp = fmt::format("states[{}]", i);
    const auto& sv = states_v[i];
    const double prob = number(field(sv, "prob", sp), sp + ".prob");
    const auto& acts = field(sv, "actions", sp);
    if (!acts.is_array()) throw ValidationError(sp + ".actions", "expected an array");
    std::vector<ActionRecord> recs;
    for (std::size_t k = 0; k < acts.size(); ++k) {
      const std::string ap = fmt::format("{}.actions[{}]", sp, k);
      ActionRecord rec;
      rec.cost = number(field(acts[k], "cost", ap), ap + ".cost");
      rec.arrivals = number_array(field(acts[k], "arrivals", ap), r, ap + ".arrivals");
      rec.services = number_array(field(acts[k], "services", ap), r, ap + ".services");
      recs.push_back(std::move(rec));
    }
    ActionTable table = recs.empty() ? ActionTable{} : ActionTable::from_records(recs);
    if (recs.empty()) {
      table.arrivals.resize(r, 0);
      table.services.resize(r, 0);
    }
    states.push_back(StateSpec{prob, std::move(table)});
  }

  std::vector<bool> exogenous;
  if (const auto it = doc.find("exogenous_queues"); it != doc.end()) {
    if (!it->is_array()) throw ValidationError("exogenous_queues", "expected an array of booleans");
    for (std::size_t j = 0; j < it->size(); ++j) {
      if (!(*it)[j].is_boolean()) throw ValidationError(fmt::format("exogenous_queues[{}]", j), "expected a boolean");
      exogenous.push_back((*it)[j].get<bool>());
    }
    if (static_cast<int>(exogenous.size()) != r) throw ValidationError("exogenous_queues", "length must equal r");
  }
  return NetworkSpec(name_v.get<std::string>(), r, delta_max, std::move(states), std::move(exogenous));
}

std::string spec_to_json_text(const NetworkSpec& spec) {
  if (!spec.all_finite()) {
    throw ContractError(fmt::format("scenario '{}' has continuous action sets, which the file format cannot hold",
                                    spec.name()));
  }
  json doc;
  doc["name"] = spec.name();
  doc["r"] = spec.r();
  doc["delta_max"] = spec.delta_max();
  json states = json::array();
  for (const auto& st : spec.states()) {
    const auto& t = st.table();
    json acts = json::array();
    for (int k = 0; k < t.size(); ++k) {
      const Vector a = t.arrivals.col(k);
      const Vector s = t.services.col(k);
      acts.push_back({{"cost", t.cost(k)},
                      {"arrivals", std::vector<double>(a.data(), a.data() + a.size())},
                      {"services", std::vector<double>(s.data(), s.data() + s.size())}});
    }
    states.push_back({{"prob", st.prob}, {"actions", std::move(acts)}});
  }
  doc["states"] = std::move(states);
  doc["exogenous_queues"] = spec.exogenous();
  return doc.dump(2) + "\n";
}

ScenarioHandle load_from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string(), "cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  NetworkSpec spec = spec_from_json_text(buf.str());
  std::string name = spec.name();
  return ScenarioHandle{std::move(name), std::move(spec), {}, std::nullopt, std::nullopt, "loaded from " + path.string()};
}

void save_to_file(const NetworkSpec& spec, const std::filesystem::path& path) {
  const std::string text = spec_to_json_text(spec);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace lyapnet

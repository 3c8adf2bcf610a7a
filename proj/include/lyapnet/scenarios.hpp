#pragma once

// Built-in networks and the JSON scenario format.
//
// File schema:
//   { "name": str, "r": int, "delta_max": num,
//     "states": [ { "prob": num,
//                   "actions": [ { "cost": num, "arrivals": [r], "services": [r] } ] } ],
//     "exogenous_queues": [bool] (optional, defaults to all true) }

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lyapnet/dual.hpp"
#include "lyapnet/model.hpp"

namespace lyapnet {

struct ScenarioHandle {
  std::string name;
  NetworkSpec spec;
  /// U*_V as a function of V, when known in closed form.
  std::function<Vector(double)> closed_form;
  std::optional<double> optimal_cost;
  /// Known geometry of q_0 around U*_0; file scenarios leave this empty.
  std::optional<Geometry> geometry;
  std::string notes;

  /// Closed form if registered, otherwise find_optimal_multiplier.
  MultiplierResult multiplier(double V) const;
};

/// Two tandem queues: R in {2, 0} w.p. 5/8, 3/8 into queue 1, independent
/// good/bad channels, power in {0, 1} per queue, queue 2 fed by queue 1's service.
ScenarioHandle two_queue();
/// One queue, Bernoulli(1/2) arrivals, rate mu in [0, 2] at power e^mu - 1.
ScenarioHandle single_queue_continuous();
/// Same queue restricted to mu in {0, 1/4, 3/4, 1}.
ScenarioHandle single_queue_discrete();
/// Five tandem queues fed by R in {0, 2}, 64 states and 32 power combinations.
ScenarioHandle five_queue_chain();

/// "two-queue", "single-queue-continuous", "single-queue-discrete", "five-queue".
ScenarioHandle builtin(const std::string& name);
const std::vector<std::string>& builtin_names();

/// Parses the file schema. Errors are ValidationError with a JSON path.
NetworkSpec spec_from_json_text(const std::string& text);
/// Finite-table specs only; continuous families have no file form.
std::string spec_to_json_text(const NetworkSpec& spec);

ScenarioHandle load_from_file(const std::filesystem::path& path);
void save_to_file(const NetworkSpec& spec, const std::filesystem::path& path);

}  // namespace lyapnet

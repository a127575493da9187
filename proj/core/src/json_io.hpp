#pragma once

// Internal JSON helpers shared by dataset and harness persistence. Insertion
// order is preserved so the on-disk field order stays fixed.

#include <nlohmann/json.hpp>

#include "evowarn/evodyn.hpp"
#include "evowarn/graph.hpp"

namespace evowarn::detail {

using Json = nlohmann::ordered_json;

inline Json network_to_json(const NetworkSpec& s) {
  return Json{{"kind", to_string(s.kind)},
              {"n", s.n},
              {"degree_param", s.degree_param},
              {"rewire_beta", s.rewire_beta},
              {"seed", s.seed}};
}

inline NetworkSpec network_from_json(const Json& j) {
  NetworkSpec s;
  s.kind = network_kind_from_string(j.at("kind").get<std::string>());
  s.n = j.at("n").get<int>();
  s.degree_param = j.at("degree_param").get<int>();
  s.rewire_beta = j.at("rewire_beta").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline Json sim_params_to_json(const SimParams& p) {
  return Json{{"R", p.game.reward},
              {"S", p.game.sucker},
              {"T", p.game.temptation},
              {"P", p.game.punishment},
              {"w", p.selection_strength},
              {"eta", p.initial_defector_fraction},
              {"max_steps", p.max_steps},
              {"seed", p.seed},
              {"network", network_to_json(p.network)}};
}

inline SimParams sim_params_from_json(const Json& j) {
  SimParams p;
  p.game.reward = j.at("R").get<double>();
  p.game.sucker = j.at("S").get<double>();
  p.game.temptation = j.at("T").get<double>();
  p.game.punishment = j.at("P").get<double>();
  p.selection_strength = j.at("w").get<double>();
  p.initial_defector_fraction = j.at("eta").get<double>();
  p.max_steps = j.at("max_steps").get<long>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.network = network_from_json(j.at("network"));
  return p;
}

}  // namespace evowarn::detail

#include "evowarn/evodyn.hpp"

#include <algorithm>
#include <cmath>

#include "evowarn/util.hpp"

namespace evowarn {

int PopulationState::count(Strategy s) const {
  return static_cast<int>(std::count(strategies.begin(), strategies.end(), s));
}

bool PopulationState::frozen() const {
  if (strategies.empty()) return true;
  return std::all_of(strategies.begin(), strategies.end(),
                     [first = strategies[0]](Strategy s) { return s == first; });
}

double pair_payoff(Strategy sx, Strategy sy, const GameMatrix& game) {
  if (sx == Strategy::Cooperate)
    return sy == Strategy::Cooperate ? game.reward : game.sucker;
  return sy == Strategy::Cooperate ? game.temptation : game.punishment;
}

double node_payoff(const Graph& g, const PopulationState& state, int x, const GameMatrix& game) {
  double total = 0.0;
  for (int y : g.neighbors(x)) total += pair_payoff(state.strategies[x], state.strategies[y], game);
  return total;
}

double fitness(double payoff, double selection_strength) {
  return std::max(0.0, 1.0 + selection_strength * (payoff - 1.0));
}

double replacement_prob_cooperate(const Graph& g, const PopulationState& state, int x,
                                  const SimParams& params) {
  double coop_fitness = 0.0;
  double total_fitness = 0.0;
  int coop_neighbors = 0;
  const auto& nbrs = g.neighbors(x);
  for (int y : nbrs) {
    double f = fitness(node_payoff(g, state, y, params.game), params.selection_strength);
    total_fitness += f;
    if (state.strategies[y] == Strategy::Cooperate) {
      coop_fitness += f;
      ++coop_neighbors;
    }
  }
  if (total_fitness == 0.0)
    return static_cast<double>(coop_neighbors) / static_cast<double>(nbrs.size());
  return coop_fitness / total_fitness;
}

namespace {

// One death-birth event on a mutable strategy vector; returns the vacated
// node and its new strategy.
std::pair<int, Strategy> sample_update(const Graph& g, const PopulationState& state,
                                       const SimParams& params, std::mt19937_64& rng) {
  int x = static_cast<int>(uniform_below(rng, g.node_count()));
  double p_coop = replacement_prob_cooperate(g, state, x, params);
  Strategy next = uniform_real01(rng) < p_coop ? Strategy::Cooperate : Strategy::Defect;
  return {x, next};
}

}  // namespace

PopulationState step(const Graph& g, const PopulationState& state, const SimParams& params,
                     std::mt19937_64& rng) {
  if (static_cast<int>(state.strategies.size()) != g.node_count())
    throw std::invalid_argument("step: state size does not match graph");
  if (state.frozen()) throw std::invalid_argument("step: state is frozen");
  PopulationState next = state;
  auto [x, strat] = sample_update(g, state, params, rng);
  next.strategies[x] = strat;
  next.step = state.step + 1;
  return next;
}

FeatureFrame extract_frame(const Graph& g, const PopulationState& state) {
  FeatureFrame f;
  for (Strategy s : state.strategies)
    s == Strategy::Cooperate ? ++f.cooperators : ++f.defectors;
  for (int u = 0; u < g.node_count(); ++u) {
    for (int v : g.neighbors(u)) {
      if (u >= v) continue;
      bool uc = state.strategies[u] == Strategy::Cooperate;
      bool vc = state.strategies[v] == Strategy::Cooperate;
      if (uc && vc)
        ++f.cc_edges;
      else if (!uc && !vc)
        ++f.dd_edges;
      else
        ++f.cd_edges;
    }
  }
  return f;
}

Trajectory run(const Graph& g, const SimParams& params) {
  const int n = g.node_count();
  if (!g.is_connected()) throw std::invalid_argument("run: graph must be connected");
  if (params.initial_defector_fraction < 0.0 || params.initial_defector_fraction > 1.0)
    throw std::invalid_argument("run: eta must be in [0,1]");
  if (params.max_steps < 1) throw std::invalid_argument("run: max_steps must be >= 1");

  std::mt19937_64 rng(params.seed);

  // floor(eta*n), nudged so exact products are not lost to rounding noise.
  int defector_count =
      static_cast<int>(std::floor(params.initial_defector_fraction * n + 1e-9));
  defector_count = std::clamp(defector_count, 0, n);

  PopulationState state;
  state.strategies.assign(n, Strategy::Cooperate);
  std::vector<int> ids(n);
  for (int i = 0; i < n; ++i) ids[i] = i;
  for (int i = 0; i < defector_count; ++i) {
    int j = i + static_cast<int>(uniform_below(rng, n - i));
    std::swap(ids[i], ids[j]);
    state.strategies[ids[i]] = Strategy::Defect;
  }

  Trajectory traj;
  FeatureFrame frame = extract_frame(g, state);
  traj.frames.push_back(frame);

  int defectors = defector_count;
  long steps = 0;
  while (defectors != 0 && defectors != n) {
    if (steps >= params.max_steps) throw UnabsorbedError(steps);
    auto [x, next] = sample_update(g, state, params, rng);
    Strategy prev = state.strategies[x];
    if (next != prev) {
      // Incremental channel update: only edges at x change class.
      if (next == Strategy::Cooperate) {
        --defectors;
        --frame.defectors;
        ++frame.cooperators;
      } else {
        ++defectors;
        ++frame.defectors;
        --frame.cooperators;
      }
      for (int y : g.neighbors(x)) {
        bool yc = state.strategies[y] == Strategy::Cooperate;
        if (prev == Strategy::Cooperate)
          yc ? --frame.cc_edges : --frame.cd_edges;
        else
          yc ? --frame.cd_edges : --frame.dd_edges;
        if (next == Strategy::Cooperate)
          yc ? ++frame.cc_edges : ++frame.cd_edges;
        else
          yc ? ++frame.cd_edges : ++frame.dd_edges;
      }
      state.strategies[x] = next;
    }
    ++steps;
    state.step = steps;
    traj.frames.push_back(frame);
  }

  traj.outcome = defectors == 0 ? Outcome::AllC : Outcome::AllD;
  traj.absorption_step = steps;
  return traj;
}

Trajectory run(const SimParams& params) {
  Graph g = generate_network(params.network);
  return run(g, params);
}

OutcomeStats aggregate_outcomes(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("aggregate_outcomes: empty input");
  long collapses = 0;
  double recovery_sum = 0.0, collapse_sum = 0.0;
  long recoveries = 0;
  for (const Trajectory& t : trajectories) {
    if (t.outcome == Outcome::AllD) {
      ++collapses;
      collapse_sum += static_cast<double>(t.absorption_step);
    } else {
      ++recoveries;
      recovery_sum += static_cast<double>(t.absorption_step);
    }
  }
  OutcomeStats stats;
  stats.p_collapse = static_cast<double>(collapses) / static_cast<double>(trajectories.size());
  if (recoveries > 0) stats.mean_recovery_time = recovery_sum / static_cast<double>(recoveries);
  if (collapses > 0) stats.mean_collapse_time = collapse_sum / static_cast<double>(collapses);
  return stats;
}

}  // namespace evowarn

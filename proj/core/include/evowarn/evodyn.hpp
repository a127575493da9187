#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "evowarn/feature_frame.hpp"
#include "evowarn/graph.hpp"

namespace evowarn {

enum class Strategy : std::uint8_t { Cooperate, Defect };

// Prisoner's Dilemma payoffs; a valid dilemma has T > R > P > S.
struct GameMatrix {
  double reward = 1.0;      // R, mutual cooperation
  double sucker = -1.0;     // S, sole cooperator
  double temptation = 2.0;  // T, sole defector
  double punishment = 0.0;  // P, mutual defection

  bool valid_dilemma() const {
    return temptation > reward && reward > punishment && punishment > sucker;
  }
};

struct SimParams {
  GameMatrix game;
  double selection_strength = 0.1;         // w
  double initial_defector_fraction = 0.1;  // eta
  NetworkSpec network;
  long max_steps = 1000000;
  std::uint64_t seed = 0;
};

struct PopulationState {
  std::vector<Strategy> strategies;
  long step = 0;

  int count(Strategy s) const;
  bool frozen() const;  // all cooperators or all defectors
};

enum class Outcome : std::uint8_t { AllC, AllD };

// Full recorded run: frames[t] is the snapshot after t update steps, so the
// initial state is frames[0] and frames[absorption_step] is the first frozen
// frame (also the last one).
struct Trajectory {
  std::vector<FeatureFrame> frames;
  Outcome outcome = Outcome::AllC;
  long absorption_step = 0;
};

struct OutcomeStats {
  double p_collapse = 0.0;
  std::optional<double> mean_recovery_time;
  std::optional<double> mean_collapse_time;
};

// A run that hit max_steps without reaching AllC or AllD. Callers count
// these; they are never silently labeled.
class UnabsorbedError : public std::runtime_error {
 public:
  explicit UnabsorbedError(long steps)
      : std::runtime_error("run not absorbed after " + std::to_string(steps) + " steps"),
        steps(steps) {}
  long steps;
};

double pair_payoff(Strategy sx, Strategy sy, const GameMatrix& game);

// pi_t(x): payoff aggregated over the whole neighborhood.
double node_payoff(const Graph& g, const PopulationState& state, int x, const GameMatrix& game);

// f = 1 + w*(payoff - 1), clamped at zero so replacement weights stay valid.
double fitness(double payoff, double selection_strength);

// Probability that node x adopts cooperation when vacated: total fitness of
// its cooperating neighbors over total fitness of all neighbors. Falls back
// to the plain cooperator fraction when every neighbor fitness clamps to 0.
double replacement_prob_cooperate(const Graph& g, const PopulationState& state, int x,
                                  const SimParams& params);

// One death-birth event. Throws std::invalid_argument on a frozen state.
PopulationState step(const Graph& g, const PopulationState& state, const SimParams& params,
                     std::mt19937_64& rng);

FeatureFrame extract_frame(const Graph& g, const PopulationState& state);

// Places floor(eta*n) defectors uniformly at random, then iterates
// death-birth steps until AllC or AllD, recording a frame per step.
// Throws UnabsorbedError when max_steps is exceeded.
Trajectory run(const Graph& g, const SimParams& params);
Trajectory run(const SimParams& params);  // generates the network from params.network

OutcomeStats aggregate_outcomes(std::span<const Trajectory> trajectories);

}  // namespace evowarn

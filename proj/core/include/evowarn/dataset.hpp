#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evowarn/evodyn.hpp"
#include "evowarn/tensor.hpp"

namespace evowarn {

// Fixed project-wide encoding: 0 = Recovery (AllC), 1 = Collapse (AllD).
enum class Label : std::uint8_t { Recovery = 0, Collapse = 1 };

Label label_from_outcome(Outcome o);
std::string to_string(Label label);  // wire names "AllC" / "AllD"
Label label_from_string(const std::string& s);

// One training sample: a ws-step window of channel counts plus the outcome.
struct FeatureSequence {
  std::uint64_t run_id = 0;
  Label label = Label::Recovery;
  std::vector<FeatureFrame> frames;
};

// Shared header for dataset and raw-trajectory files. population and
// edge_count are the normalization constants; ws is 0 for raw files.
struct DatasetHeader {
  int schema_version = 1;
  int ws = 0;
  int population = 0;
  long edge_count = 0;
  SimParams params;
};

struct DatasetFile {
  DatasetHeader header;
  std::vector<FeatureSequence> records;
};

// Full-length trajectory record as emitted by the simulate CLI; frames run
// from t=0 through the first frozen frame.
struct TrajectoryRecord {
  std::uint64_t run_id = 0;
  Label label = Label::Recovery;
  long absorption_step = 0;
  std::vector<FeatureFrame> frames;
};

struct TrajectoryFile {
  DatasetHeader header;  // ws stays 0
  std::vector<TrajectoryRecord> records;
};

// First ws frames; runs absorbed inside the window continue with their
// frozen frame (the chain really does keep producing those values).
std::vector<FeatureFrame> window(const Trajectory& traj, int ws);

// Node channels divided by population, edge channels by edge_count;
// result is a (ws x 5) matrix with entries in [0,1].
Tensor normalize(std::span<const FeatureFrame> frames, int population, long edge_count);

void write_jsonl(const std::filesystem::path& path, const DatasetFile& dataset);
DatasetFile read_jsonl(const std::filesystem::path& path);

void write_trajectories_jsonl(const std::filesystem::path& path, const TrajectoryFile& file);
TrajectoryFile read_trajectories_jsonl(const std::filesystem::path& path);

// Builds a fixed-ws dataset from raw trajectories. With
// include_early_absorbed=false, runs absorbed before ws steps are dropped.
DatasetFile window_trajectories(const TrajectoryFile& file, int ws,
                                bool include_early_absorbed = true);

// Disjoint, exhaustive (train, test) partition; deterministic per seed.
// Stratified keeps per-label test proportions within one record.
std::pair<DatasetFile, DatasetFile> split(const DatasetFile& dataset, double test_fraction,
                                          std::uint64_t seed, bool stratified);

}  // namespace evowarn

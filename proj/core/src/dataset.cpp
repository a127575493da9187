#include "evowarn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "evowarn/util.hpp"
#include "json_io.hpp"

namespace evowarn {

using detail::Json;

Label label_from_outcome(Outcome o) {
  return o == Outcome::AllC ? Label::Recovery : Label::Collapse;
}

std::string to_string(Label label) { return label == Label::Recovery ? "AllC" : "AllD"; }

Label label_from_string(const std::string& s) {
  if (s == "AllC") return Label::Recovery;
  if (s == "AllD") return Label::Collapse;
  throw std::invalid_argument("unknown label: " + s);
}

namespace {

std::vector<FeatureFrame> window_frames(std::span<const FeatureFrame> frames, int ws) {
  if (ws < 1) throw std::invalid_argument("window: ws must be >= 1");
  if (frames.empty()) throw std::invalid_argument("window: no frames");
  std::vector<FeatureFrame> out;
  out.reserve(ws);
  for (int t = 0; t < ws; ++t)
    out.push_back(t < static_cast<int>(frames.size()) ? frames[t] : frames.back());
  return out;
}

Json frames_to_json(std::span<const FeatureFrame> frames) {
  Json arr = Json::array();
  for (const FeatureFrame& f : frames)
    arr.push_back({f.cooperators, f.defectors, f.cc_edges, f.cd_edges, f.dd_edges});
  return arr;
}

std::vector<FeatureFrame> frames_from_json(const Json& arr) {
  std::vector<FeatureFrame> frames;
  frames.reserve(arr.size());
  for (const Json& row : arr) {
    if (!row.is_array() || row.size() != 5)
      throw std::runtime_error("frame row must have 5 entries");
    FeatureFrame f;
    f.cooperators = row[0].get<std::uint32_t>();
    f.defectors = row[1].get<std::uint32_t>();
    f.cc_edges = row[2].get<std::uint32_t>();
    f.cd_edges = row[3].get<std::uint32_t>();
    f.dd_edges = row[4].get<std::uint32_t>();
    frames.push_back(f);
  }
  return frames;
}

Json header_to_json(const DatasetHeader& h, const char* kind) {
  return Json{{"schema_version", h.schema_version}, {"kind", kind},
              {"ws", h.ws},                         {"n", h.population},
              {"edge_count", h.edge_count},         {"params", detail::sim_params_to_json(h.params)}};
}

DatasetHeader header_from_json(const Json& j, const char* expected_kind) {
  if (j.at("schema_version").get<int>() != 1)
    throw std::runtime_error("unsupported schema_version");
  if (j.at("kind").get<std::string>() != expected_kind)
    throw std::runtime_error("file kind is not '" + std::string(expected_kind) + "'");
  DatasetHeader h;
  h.schema_version = 1;
  h.ws = j.at("ws").get<int>();
  h.population = j.at("n").get<int>();
  h.edge_count = j.at("edge_count").get<long>();
  h.params = detail::sim_params_from_json(j.at("params"));
  return h;
}

Json parse_line(const std::string& line, long lineno) {
  try {
    return Json::parse(line);
  } catch (const std::exception& e) {
    throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  return in;
}

}  // namespace

std::vector<FeatureFrame> window(const Trajectory& traj, int ws) {
  return window_frames(traj.frames, ws);
}

Tensor normalize(std::span<const FeatureFrame> frames, int population, long edge_count) {
  if (population < 1) throw std::invalid_argument("normalize: population must be >= 1");
  if (edge_count < 1) throw std::invalid_argument("normalize: edge_count must be >= 1");
  Tensor out({static_cast<int>(frames.size()), 5});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const FeatureFrame& f = frames[t];
    out.at(static_cast<int>(t), 0) = static_cast<double>(f.cooperators) / population;
    out.at(static_cast<int>(t), 1) = static_cast<double>(f.defectors) / population;
    out.at(static_cast<int>(t), 2) = static_cast<double>(f.cc_edges) / edge_count;
    out.at(static_cast<int>(t), 3) = static_cast<double>(f.cd_edges) / edge_count;
    out.at(static_cast<int>(t), 4) = static_cast<double>(f.dd_edges) / edge_count;
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const DatasetFile& dataset) {
  auto out = open_out(path);
  out << header_to_json(dataset.header, "dataset").dump() << "\n";
  for (const FeatureSequence& rec : dataset.records) {
    Json j{{"run_id", rec.run_id}, {"label", to_string(rec.label)},
           {"frames", frames_to_json(rec.frames)}};
    out << j.dump() << "\n";
  }
}

DatasetFile read_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset file: " + path.string());
  DatasetFile dataset;
  try {
    dataset.header = header_from_json(parse_line(line, 1), "dataset");
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      Json j = parse_line(line, lineno);
      FeatureSequence rec;
      rec.run_id = j.at("run_id").get<std::uint64_t>();
      rec.label = label_from_string(j.at("label").get<std::string>());
      rec.frames = frames_from_json(j.at("frames"));
      if (static_cast<int>(rec.frames.size()) != dataset.header.ws)
        throw std::runtime_error("record ws " + std::to_string(rec.frames.size()) +
                                 " does not match header ws " + std::to_string(dataset.header.ws));
      dataset.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      std::string what = e.what();
      if (what.rfind("line ", 0) == 0) throw std::runtime_error(path.string() + ": " + what);
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": " + what);
    }
  }
  return dataset;
}

void write_trajectories_jsonl(const std::filesystem::path& path, const TrajectoryFile& file) {
  auto out = open_out(path);
  out << header_to_json(file.header, "trajectories").dump() << "\n";
  for (const TrajectoryRecord& rec : file.records) {
    Json j{{"run_id", rec.run_id},
           {"label", to_string(rec.label)},
           {"absorption_step", rec.absorption_step},
           {"frames", frames_to_json(rec.frames)}};
    out << j.dump() << "\n";
  }
}

TrajectoryFile read_trajectories_jsonl(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty trajectory file: " + path.string());
  TrajectoryFile file;
  try {
    file.header = header_from_json(parse_line(line, 1), "trajectories");
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      Json j = parse_line(line, lineno);
      TrajectoryRecord rec;
      rec.run_id = j.at("run_id").get<std::uint64_t>();
      rec.label = label_from_string(j.at("label").get<std::string>());
      rec.absorption_step = j.at("absorption_step").get<long>();
      rec.frames = frames_from_json(j.at("frames"));
      file.records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      std::string what = e.what();
      if (what.rfind("line ", 0) == 0) throw std::runtime_error(path.string() + ": " + what);
      throw std::runtime_error(path.string() + ": line " + std::to_string(lineno) + ": " + what);
    }
  }
  return file;
}

DatasetFile window_trajectories(const TrajectoryFile& file, int ws, bool include_early_absorbed) {
  if (ws < 1) throw std::invalid_argument("window_trajectories: ws must be >= 1");
  DatasetFile dataset;
  dataset.header = file.header;
  dataset.header.ws = ws;
  for (const TrajectoryRecord& rec : file.records) {
    if (!include_early_absorbed && rec.absorption_step < ws) continue;
    FeatureSequence seq;
    seq.run_id = rec.run_id;
    seq.label = rec.label;
    seq.frames = window_frames(rec.frames, ws);
    dataset.records.push_back(std::move(seq));
  }
  return dataset;
}

std::pair<DatasetFile, DatasetFile> split(const DatasetFile& dataset, double test_fraction,
                                          std::uint64_t seed, bool stratified) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must be in (0,1)");
  const std::size_t count = dataset.records.size();
  std::mt19937_64 rng(seed);
  std::vector<char> in_test(count, 0);

  auto mark_test = [&](std::vector<std::size_t>& pool, std::size_t take) {
    for (std::size_t i = 0; i < take; ++i) {
      std::size_t j = i + uniform_below(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      in_test[pool[i]] = 1;
    }
  };

  if (stratified) {
    std::vector<std::size_t> recovery, collapse;
    for (std::size_t i = 0; i < count; ++i)
      (dataset.records[i].label == Label::Recovery ? recovery : collapse).push_back(i);
    if (recovery.empty() || collapse.empty())
      throw std::invalid_argument("split: stratification needs records of both labels");
    mark_test(recovery, static_cast<std::size_t>(std::llround(test_fraction * recovery.size())));
    mark_test(collapse, static_cast<std::size_t>(std::llround(test_fraction * collapse.size())));
  } else {
    if (count == 0) throw std::invalid_argument("split: empty dataset");
    std::vector<std::size_t> all(count);
    for (std::size_t i = 0; i < count; ++i) all[i] = i;
    mark_test(all, static_cast<std::size_t>(std::llround(test_fraction * count)));
  }

  DatasetFile train, test;
  train.header = dataset.header;
  test.header = dataset.header;
  for (std::size_t i = 0; i < count; ++i)
    (in_test[i] ? test : train).records.push_back(dataset.records[i]);
  return {std::move(train), std::move(test)};
}

}  // namespace evowarn

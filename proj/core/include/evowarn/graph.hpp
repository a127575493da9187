#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace evowarn {

enum class NetworkKind { SmallWorld, Random, ScaleFree };

std::string to_string(NetworkKind kind);
NetworkKind network_kind_from_string(const std::string& name);

// Topology family plus its parameters. degree_param is the ring degree k
// (small-world), the target mean degree (random) or the attachment count m
// (scale-free).
struct NetworkSpec {
  NetworkKind kind = NetworkKind::Random;
  int n = 100;
  int degree_param = 4;
  double rewire_beta = 0.1;  // small-world only
  std::uint64_t seed = 0;
};

// Undirected simple graph with sorted neighbor lists. Node ids are 0..n-1.
class Graph {
 public:
  // Builds from an edge list; rejects self-loops, duplicates and
  // out-of-range endpoints.
  Graph(int n, const std::vector<std::pair<int, int>>& edges);

  int node_count() const { return static_cast<int>(adjacency_.size()); }
  long edge_count() const { return edge_count_; }
  int degree(int x) const { return static_cast<int>(adjacency_[x].size()); }
  const std::vector<int>& neighbors(int x) const { return adjacency_[x]; }
  bool has_edge(int u, int v) const;
  bool is_connected() const;

 private:
  std::vector<std::vector<int>> adjacency_;
  long edge_count_ = 0;
};

// Erdos-Renyi G(n, p) with p = mean_degree/(n-1), resampled until connected.
Graph gen_random(int n, double mean_degree, std::uint64_t seed);

// Watts-Strogatz ring lattice (k nearest neighbors, k even) with per-edge
// rewiring probability beta, resampled until connected.
Graph gen_small_world(int n, int k, double beta, std::uint64_t seed);

// Barabasi-Albert preferential attachment: initial clique of m+1 nodes, each
// later node attaches m distinct edges. Connected by construction.
Graph gen_scale_free(int n, int m, std::uint64_t seed);

Graph generate_network(const NetworkSpec& spec);

// Edge-list text format: header line "n=<n>", then one "u v" pair per line.
void write_edge_list(std::ostream& out, const Graph& g);
Graph read_edge_list(std::istream& in);

}  // namespace evowarn

#include "evowarn/graph.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "evowarn/util.hpp"

namespace evowarn {

namespace {

constexpr int kMaxConnectivityAttempts = 1000;

bool edge_set_connected(int n, const std::set<std::pair<int, int>>& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (const auto& [u, v] : edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    int x = stack.back();
    stack.pop_back();
    for (int y : adj[x]) {
      if (!seen[y]) {
        seen[y] = 1;
        ++visited;
        stack.push_back(y);
      }
    }
  }
  return visited == n;
}

Graph from_edge_set(int n, const std::set<std::pair<int, int>>& edges) {
  return Graph(n, std::vector<std::pair<int, int>>(edges.begin(), edges.end()));
}

}  // namespace

std::string to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::SmallWorld: return "small-world";
    case NetworkKind::Random: return "random";
    case NetworkKind::ScaleFree: return "scale-free";
  }
  throw std::logic_error("unknown network kind");
}

NetworkKind network_kind_from_string(const std::string& name) {
  if (name == "small-world" || name == "smallworld") return NetworkKind::SmallWorld;
  if (name == "random") return NetworkKind::Random;
  if (name == "scale-free" || name == "scalefree") return NetworkKind::ScaleFree;
  throw std::invalid_argument("unknown network kind: " + name);
}

Graph::Graph(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n < 1) throw std::invalid_argument("graph needs at least one node");
  adjacency_.resize(n);
  for (auto [u, v] : edges) {
    if (u < 0 || u >= n || v < 0 || v >= n) throw std::invalid_argument("edge endpoint out of range");
    if (u == v) throw std::invalid_argument("self-loop rejected");
    adjacency_[u].push_back(v);
    adjacency_[v].push_back(u);
    ++edge_count_;
  }
  for (auto& nbrs : adjacency_) {
    std::sort(nbrs.begin(), nbrs.end());
    if (std::adjacent_find(nbrs.begin(), nbrs.end()) != nbrs.end())
      throw std::invalid_argument("duplicate edge rejected");
  }
}

bool Graph::has_edge(int u, int v) const {
  const auto& nbrs = adjacency_[u];
  return std::binary_search(nbrs.begin(), nbrs.end(), v);
}

bool Graph::is_connected() const {
  int n = node_count();
  if (n <= 1) return true;
  std::vector<char> seen(n, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int visited = 1;
  while (!stack.empty()) {
    int x = stack.back();
    stack.pop_back();
    for (int y : adjacency_[x]) {
      if (!seen[y]) {
        seen[y] = 1;
        ++visited;
        stack.push_back(y);
      }
    }
  }
  return visited == n;
}

Graph gen_random(int n, double mean_degree, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_random: n must be >= 2");
  if (mean_degree < 1.0 || mean_degree >= n)
    throw std::invalid_argument("gen_random: need 1 <= mean_degree < n");
  const double p = mean_degree / (n - 1);
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kMaxConnectivityAttempts; ++attempt) {
    std::set<std::pair<int, int>> edges;
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v)
        if (uniform_real01(rng) < p) edges.insert({u, v});
    if (edge_set_connected(n, edges)) return from_edge_set(n, edges);
  }
  throw std::runtime_error("gen_random: no connected sample after 1000 attempts (mean_degree too small)");
}

Graph gen_small_world(int n, int k, double beta, std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("gen_small_world: n must be >= 3");
  if (k < 2 || k % 2 != 0 || k >= n)
    throw std::invalid_argument("gen_small_world: k must be even, 2 <= k < n");
  if (beta < 0.0 || beta > 1.0) throw std::invalid_argument("gen_small_world: beta must be in [0,1]");
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kMaxConnectivityAttempts; ++attempt) {
    std::set<std::pair<int, int>> edges;
    auto insert_edge = [&edges](int u, int v) {
      if (u > v) std::swap(u, v);
      edges.insert({u, v});
    };
    auto contains = [&edges](int u, int v) {
      if (u > v) std::swap(u, v);
      return edges.count({u, v}) > 0;
    };
    for (int j = 1; j <= k / 2; ++j)
      for (int u = 0; u < n; ++u) insert_edge(u, (u + j) % n);
    // Rewire the clockwise edges of each node in ring order.
    for (int j = 1; j <= k / 2; ++j) {
      for (int u = 0; u < n; ++u) {
        int v = (u + j) % n;
        if (!contains(u, v)) continue;  // already rewired away
        if (uniform_real01(rng) >= beta) continue;
        int t = -1;
        for (int tries = 0; tries < 4 * n; ++tries) {
          int cand = static_cast<int>(uniform_below(rng, n));
          if (cand != u && !contains(u, cand)) {
            t = cand;
            break;
          }
        }
        if (t < 0) continue;  // node nearly saturated; keep the ring edge
        int a = std::min(u, v), b = std::max(u, v);
        edges.erase({a, b});
        insert_edge(u, t);
      }
    }
    if (edge_set_connected(n, edges)) return from_edge_set(n, edges);
  }
  throw std::runtime_error("gen_small_world: no connected sample after 1000 attempts");
}

Graph gen_scale_free(int n, int m, std::uint64_t seed) {
  if (m < 1) throw std::invalid_argument("gen_scale_free: m must be >= 1");
  if (n < m + 1) throw std::invalid_argument("gen_scale_free: need n >= m+1");
  std::mt19937_64 rng(seed);
  std::set<std::pair<int, int>> edges;
  // One endpoint entry per half-edge; sampling from it is degree-proportional.
  std::vector<int> endpoints;
  for (int u = 0; u <= m; ++u)
    for (int v = u + 1; v <= m; ++v) {
      edges.insert({u, v});
      endpoints.push_back(u);
      endpoints.push_back(v);
    }
  for (int v = m + 1; v < n; ++v) {
    std::vector<int> targets;
    while (static_cast<int>(targets.size()) < m) {
      int t = endpoints[uniform_below(rng, endpoints.size())];
      if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
    }
    for (int t : targets) {
      edges.insert({std::min(v, t), std::max(v, t)});
      endpoints.push_back(v);
      endpoints.push_back(t);
    }
  }
  return from_edge_set(n, edges);
}

Graph generate_network(const NetworkSpec& spec) {
  if (spec.n < 3) throw std::invalid_argument("NetworkSpec: n must be >= 3");
  if (spec.degree_param < 1) throw std::invalid_argument("NetworkSpec: degree_param must be >= 1");
  switch (spec.kind) {
    case NetworkKind::SmallWorld:
      return gen_small_world(spec.n, spec.degree_param, spec.rewire_beta, spec.seed);
    case NetworkKind::Random:
      return gen_random(spec.n, spec.degree_param, spec.seed);
    case NetworkKind::ScaleFree:
      return gen_scale_free(spec.n, spec.degree_param, spec.seed);
  }
  throw std::logic_error("unknown network kind");
}

void write_edge_list(std::ostream& out, const Graph& g) {
  out << "n=" << g.node_count() << "\n";
  for (int u = 0; u < g.node_count(); ++u)
    for (int v : g.neighbors(u))
      if (u < v) out << u << " " << v << "\n";
}

Graph read_edge_list(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("n=", 0) != 0)
    throw std::runtime_error("edge list: missing n=<count> header");
  int n = std::stoi(line.substr(2));
  std::vector<std::pair<int, int>> edges;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int u, v;
    if (!(ls >> u >> v))
      throw std::runtime_error("edge list: malformed line " + std::to_string(lineno));
    edges.emplace_back(u, v);
  }
  return Graph(n, edges);
}

}  // namespace evowarn

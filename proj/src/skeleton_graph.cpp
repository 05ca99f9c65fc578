#include "mdr/skeleton_graph.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>

#include "mdr/error.hpp"

namespace mdr::graph {

namespace {

std::vector<std::vector<std::size_t>> neighbour_lists(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

std::vector<int> bfs(const std::vector<std::vector<std::size_t>>& adj, std::size_t source) {
  std::vector<int> dist(adj.size(), -1);
  std::queue<std::size_t> frontier;
  dist[source] = 0;
  frontier.push(source);
  while (!frontier.empty()) {
    auto u = frontier.front();
    frontier.pop();
    for (auto v : adj[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        frontier.push(v);
      }
    }
  }
  return dist;
}

}  // namespace

const Tensor& SkeletonGraph::subset(std::size_t k) const {
  if (k >= subsets_.size()) {
    throw ConfigError("adjacency subset " + std::to_string(k) + " out of range");
  }
  return subsets_[k];
}

SkeletonGraph build_graph(std::size_t num_joints, std::vector<Edge> edges, std::size_t center,
                          PartitionStrategy strategy) {
  if (num_joints == 0) throw ConfigError("graph needs at least one joint");
  if (center >= num_joints) {
    throw ConfigError("center joint " + std::to_string(center) + " out of range for V=" +
                      std::to_string(num_joints));
  }
  std::set<Edge> seen;
  for (auto [a, b] : edges) {
    if (a >= num_joints || b >= num_joints) {
      throw ConfigError("edge " + std::to_string(a) + "-" + std::to_string(b) +
                        " references a joint outside V=" + std::to_string(num_joints));
    }
    if (a == b) throw ConfigError("self edge on joint " + std::to_string(a));
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw ConfigError("duplicate edge " + std::to_string(a) + "-" + std::to_string(b));
    }
  }
  const auto adj = neighbour_lists(num_joints, edges);
  const auto from_center = bfs(adj, center);
  if (std::any_of(from_center.begin(), from_center.end(), [](int d) { return d < 0; })) {
    throw ConfigError("skeleton graph is disconnected");
  }

  const std::size_t n = num_joints;
  std::vector<double> degree(n, 1.0);  // self loop
  for (std::size_t i = 0; i < n; ++i) degree[i] += static_cast<double>(adj[i].size());

  const std::size_t k_subsets = strategy == PartitionStrategy::spatial ? 3 : 1;
  std::vector<std::vector<double>> mats(k_subsets, std::vector<double>(n * n, 0.0));
  auto place = [&](std::size_t i, std::size_t j) {
    std::size_t k = 0;
    if (strategy == PartitionStrategy::spatial) {
      if (from_center[j] < from_center[i]) {
        k = 1;  // centripetal
      } else if (from_center[j] > from_center[i]) {
        k = 2;  // centrifugal
      }
    }
    mats[k][i * n + j] = 1.0 / degree[i];
  };
  for (std::size_t i = 0; i < n; ++i) {
    place(i, i);
    for (auto j : adj[i]) place(i, j);
  }

  SkeletonGraph g;
  g.num_joints_ = n;
  g.center_ = center;
  g.edges_ = std::move(edges);
  g.strategy_ = strategy;
  for (auto& m : mats) g.subsets_.emplace_back(Shape{n, n}, std::move(m));
  return g;
}

std::vector<int> hop_distances(const SkeletonGraph& g, std::size_t source) {
  if (source >= g.num_joints()) throw ConfigError("source joint out of range");
  return bfs(neighbour_lists(g.num_joints(), g.edges()), source);
}

SkeletonGraph toy_skeleton(PartitionStrategy strategy) {
  return build_graph(9, {{0, 1}, {1, 2}, {1, 3}, {3, 4}, {1, 5}, {5, 6}, {2, 7}, {2, 8}}, 1,
                     strategy);
}

PartitionStrategy parse_strategy(const std::string& name) {
  if (name == "spatial") return PartitionStrategy::spatial;
  if (name == "uniform") return PartitionStrategy::uniform;
  throw ConfigError("unknown partition strategy '" + name + "'");
}

SkeletonGraph parse_graph_spec(std::istream& is, PartitionStrategy strategy) {
  std::size_t joints = 0, center = 0;
  bool have_joints = false, have_center = false;
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw FormatError("graph spec line " + std::to_string(line_no) + ": " + why);
  };
  auto parse_count = [&](const std::string& text) -> std::size_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(text, &pos);
    } catch (const std::exception&) {
      fail("expected a non-negative integer, got '" + text + "'");
    }
    if (pos != text.size() || text.find('-') != std::string::npos) fail("malformed integer '" + text + "'");
    return static_cast<std::size_t>(v);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line.rfind("V=", 0) == 0) {
      joints = parse_count(line.substr(2));
      have_joints = true;
    } else if (line.rfind("center=", 0) == 0) {
      center = parse_count(line.substr(7));
      have_center = true;
    } else if (line.rfind("edge", 0) == 0) {
      std::istringstream fields(line.substr(4));
      std::string a, b, extra;
      if (!(fields >> a >> b) || (fields >> extra)) fail("expected 'edge i j'");
      edges.emplace_back(parse_count(a), parse_count(b));
    } else {
      fail("unrecognized entry '" + line + "'");
    }
  }
  if (!have_joints) throw FormatError("graph spec is missing 'V=<n>'");
  if (!have_center) throw FormatError("graph spec is missing 'center=<i>'");
  return build_graph(joints, std::move(edges), center, strategy);
}

SkeletonGraph load_graph_file(const std::filesystem::path& path, PartitionStrategy strategy) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open graph file " + path.string());
  return parse_graph_spec(is, strategy);
}

void write_graph_spec(std::ostream& os, const SkeletonGraph& g) {
  os << "V=" << g.num_joints() << "\n";
  os << "center=" << g.center() << "\n";
  for (auto [a, b] : g.edges()) os << "edge " << a << " " << b << "\n";
}

}  // namespace mdr::graph

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mdr/tensor.hpp"

namespace mdr::graph {

enum class PartitionStrategy {
  /// Self / centripetal / centrifugal neighbours relative to the center joint (3 subsets).
  spatial,
  /// Single normalized adjacency with self loops.
  uniform,
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Skeleton topology plus its partitioned, row-normalized adjacency matrices.
/// Immutable after construction.
class SkeletonGraph {
 public:
  std::size_t num_joints() const { return num_joints_; }
  std::size_t center() const { return center_; }
  const std::vector<Edge>& edges() const { return edges_; }
  PartitionStrategy strategy() const { return strategy_; }
  std::size_t num_subsets() const { return subsets_.size(); }

  /// V x V matrix of subset k; entry (i, j) weights joint i's contribution to joint j.
  const Tensor& subset(std::size_t k) const;
  const std::vector<Tensor>& subsets() const { return subsets_; }

  friend SkeletonGraph build_graph(std::size_t, std::vector<Edge>, std::size_t, PartitionStrategy);

 private:
  std::size_t num_joints_ = 0;
  std::size_t center_ = 0;
  std::vector<Edge> edges_;
  PartitionStrategy strategy_ = PartitionStrategy::spatial;
  std::vector<Tensor> subsets_;
};

/// Validates the topology and builds the adjacency subsets. Throws ConfigError
/// on out-of-range joints, self edges, duplicate edges or a disconnected graph.
SkeletonGraph build_graph(std::size_t num_joints, std::vector<Edge> edges, std::size_t center,
                          PartitionStrategy strategy = PartitionStrategy::spatial);

/// BFS hop counts from `source` to every joint.
std::vector<int> hop_distances(const SkeletonGraph& g, std::size_t source);

/// Nine-joint toy body used by the synthetic data and the tests:
/// 0 head, 1 chest (center), 2 pelvis, 3/4 left elbow/hand, 5/6 right elbow/hand,
/// 7 left foot, 8 right foot.
SkeletonGraph toy_skeleton(PartitionStrategy strategy = PartitionStrategy::spatial);

/// Graph spec text: "V=<n>", "center=<i>", then one "edge i j" per line.
/// Blank lines and lines starting with '#' are ignored.
SkeletonGraph parse_graph_spec(std::istream& is, PartitionStrategy strategy = PartitionStrategy::spatial);
SkeletonGraph load_graph_file(const std::filesystem::path& path,
                              PartitionStrategy strategy = PartitionStrategy::spatial);
void write_graph_spec(std::ostream& os, const SkeletonGraph& g);

PartitionStrategy parse_strategy(const std::string& name);

}  // namespace mdr::graph

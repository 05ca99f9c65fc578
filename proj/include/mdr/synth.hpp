#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mdr/kv_config.hpp"
#include "mdr/skeleton_graph.hpp"
#include "mdr/tensor.hpp"

namespace mdr::data {

using Vec3 = std::array<double, 3>;

/// Sinusoidal displacement of one joint around its base position:
/// amplitude * sin(2*pi*frequency*t/T + phase).
struct JointMotion {
  Vec3 amplitude{0.0, 0.0, 0.0};
  double frequency = 1.0;  // cycles per clip
  double phase = 0.0;      // radians

  bool moving() const;
};

struct ClassMotion {
  std::vector<JointMotion> joints;  // one per skeleton joint
};

struct SynthSpec {
  std::vector<Vec3> base_pose;         // one per joint
  std::vector<ClassMotion> classes;    // M entries
  std::size_t samples_per_class = 200;
  std::size_t frames = 32;
  double jitter = 0.03;                // per-coordinate gaussian std
  double amplitude_spread = 0.15;      // per-sample amplitude scale in 1 +- spread
  double pose_spread = 0.05;           // per-sample base-pose perturbation std
  bool random_time_shift = true;       // per-sample phase shift of the whole clip
  double class_distance_floor = 0.1;
  std::uint64_t seed = 7;

  std::size_t num_classes() const { return classes.size(); }
  std::size_t num_joints() const { return base_pose.size(); }

  /// Throws ConfigError on inconsistent sizes, non-positive frequencies,
  /// an all-still class or two classes closer than the distance floor.
  void validate() const;

  void write_to(KeyValues& kv, const std::string& prefix = "synth.") const;
  /// Reads scalar settings over `base`; motion tables are not configurable from text.
  static SynthSpec read_from(const KeyValues& kv, const SynthSpec& base,
                             const std::string& prefix = "synth.");
};

/// Parameter distance between two classes: amplitude and frequency gaps plus
/// the circular gap of phases measured relative to each class's first moving joint.
double class_distance(const ClassMotion& a, const ClassMotion& b);

/// Five arm-swing classes on the toy body that differ only in relative phase,
/// frequency, amplitude or whether the legs join in.
SynthSpec default_spec();

enum class Split : std::uint8_t { train, test };

struct SkeletonSample {
  Tensor x;  // (3, T, V)
  std::size_t label = 0;
  std::string id;
  Split split = Split::train;
};

struct Dataset {
  std::size_t num_classes = 0;
  std::vector<SkeletonSample> samples;
  KeyValues info;  // generator settings

  std::size_t frames() const;
  std::size_t joints() const;
  Dataset subset(Split split) const;
  std::size_t count(Split split) const;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);
/// 20% of ids land in the test split, decided by the id hash alone.
Split split_for_id(const std::string& id, unsigned test_percent = 20);

Dataset generate(const SynthSpec& spec, const graph::SkeletonGraph& graph);

enum class NoiseMode { joint, axis };

/// Zeroes round(fraction * count) uniformly chosen (sample, frame, joint)
/// sites, all three coordinates at once; `axis` mode zeroes single coordinates.
Dataset inject_noise(const Dataset& ds, double fraction, std::uint64_t seed,
                     NoiseMode mode = NoiseMode::joint);
NoiseMode parse_noise_mode(const std::string& name);

inline constexpr const char* kDatasetMagic = "MDRDATA";
inline constexpr int kDatasetVersion = 1;

/// Directory layout: manifest.txt plus samples/<id>.mdrt.
/// Manifest: "MDRDATA 1", "classes <M>", "info <key>=<value>" lines, then
/// "sample <id> <label> <train|test>" lines.
void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

/// Frame-major CSV, one row per frame with V*3 columns x0,y0,z0,x1,...
/// A header row is skipped if its first field is not numeric.
SkeletonSample import_csv_sample(const std::filesystem::path& path, std::size_t joints,
                                 std::size_t label, const std::string& id);

}  // namespace mdr::data

#include "mdr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "mdr/error.hpp"
#include "mdr/serialize.hpp"

namespace mdr::data {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double norm3(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double circular_gap(double a, double b) {
  double d = std::fmod(std::abs(a - b), kTwoPi);
  return std::min(d, kTwoPi - d);
}

std::ptrdiff_t first_moving(const ClassMotion& c) {
  for (std::size_t v = 0; v < c.joints.size(); ++v)
    if (c.joints[v].moving()) return static_cast<std::ptrdiff_t>(v);
  return -1;
}

std::string split_name(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw FormatError("dataset manifest: unknown split '" + s + "'");
}

void check_id(const std::string& id) {
  if (id.empty()) throw FormatError("dataset: empty sample id");
  for (char ch : id) {
    if (ch == '/' || ch == '\\' || std::isspace(static_cast<unsigned char>(ch))) {
      throw FormatError("dataset: sample id '" + id + "' contains a separator or space");
    }
  }
}

}  // namespace

bool JointMotion::moving() const { return norm3(amplitude) > 0.0; }

double class_distance(const ClassMotion& a, const ClassMotion& b) {
  if (a.joints.size() != b.joints.size()) {
    throw ConfigError("class_distance: joint counts differ");
  }
  const auto ra = first_moving(a), rb = first_moving(b);
  const double pa = ra < 0 ? 0.0 : a.joints[static_cast<std::size_t>(ra)].phase;
  const double pb = rb < 0 ? 0.0 : b.joints[static_cast<std::size_t>(rb)].phase;
  double d = 0.0;
  for (std::size_t v = 0; v < a.joints.size(); ++v) {
    const auto& ja = a.joints[v];
    const auto& jb = b.joints[v];
    if (!ja.moving() && !jb.moving()) continue;
    d += norm3({ja.amplitude[0] - jb.amplitude[0], ja.amplitude[1] - jb.amplitude[1],
                ja.amplitude[2] - jb.amplitude[2]});
    if (ja.moving() && jb.moving()) {
      d += std::abs(ja.frequency - jb.frequency);
      d += circular_gap(ja.phase - pa, jb.phase - pb);
    }
  }
  return d;
}

void SynthSpec::validate() const {
  const std::size_t v = num_joints();
  if (v == 0) throw ConfigError("synth: base pose is empty");
  if (classes.size() < 2) throw ConfigError("synth: need at least two classes");
  if (frames < 2) throw ConfigError("synth: need at least two frames");
  if (samples_per_class == 0) throw ConfigError("synth: samples_per_class must be positive");
  if (jitter < 0.0 || amplitude_spread < 0.0 || amplitude_spread >= 1.0 || pose_spread < 0.0) {
    throw ConfigError("synth: jitter and spreads must be non-negative, amplitude spread below 1");
  }
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& c = classes[k];
    if (c.joints.size() != v) {
      throw ConfigError("synth: class " + std::to_string(k) + " has " +
                        std::to_string(c.joints.size()) + " joint motions for " +
                        std::to_string(v) + " joints");
    }
    if (first_moving(c) < 0) {
      throw ConfigError("synth: class " + std::to_string(k) + " has zero amplitude everywhere");
    }
    for (const auto& j : c.joints) {
      if (j.moving() && !(j.frequency > 0.0)) {
        throw ConfigError("synth: class " + std::to_string(k) + " has a non-positive frequency");
      }
    }
  }
  for (std::size_t a = 0; a < classes.size(); ++a) {
    for (std::size_t b = a + 1; b < classes.size(); ++b) {
      const double d = class_distance(classes[a], classes[b]);
      if (d < class_distance_floor) {
        throw ConfigError("synth: classes " + std::to_string(a) + " and " + std::to_string(b) +
                          " are too similar (distance " + format_double(d) + " < floor " +
                          format_double(class_distance_floor) + ")");
      }
    }
  }
}

void SynthSpec::write_to(KeyValues& kv, const std::string& prefix) const {
  kv.set(prefix + "classes", std::to_string(num_classes()));
  kv.set(prefix + "joints", std::to_string(num_joints()));
  kv.set(prefix + "samples_per_class", std::to_string(samples_per_class));
  kv.set(prefix + "frames", std::to_string(frames));
  kv.set(prefix + "jitter", format_double(jitter));
  kv.set(prefix + "amplitude_spread", format_double(amplitude_spread));
  kv.set(prefix + "pose_spread", format_double(pose_spread));
  kv.set(prefix + "random_time_shift", random_time_shift ? "true" : "false");
  kv.set(prefix + "class_distance_floor", format_double(class_distance_floor));
  kv.set(prefix + "seed", std::to_string(seed));
}

SynthSpec SynthSpec::read_from(const KeyValues& kv, const SynthSpec& base, const std::string& prefix) {
  SynthSpec s = base;
  if (kv.has(prefix + "classes") && kv.get_size(prefix + "classes", 0) != s.num_classes()) {
    throw ConfigError("synth: class motions are fixed at " + std::to_string(s.num_classes()) +
                      " classes");
  }
  s.samples_per_class = kv.get_size(prefix + "samples_per_class", s.samples_per_class);
  s.frames = kv.get_size(prefix + "frames", s.frames);
  s.jitter = kv.get_double(prefix + "jitter", s.jitter);
  s.amplitude_spread = kv.get_double(prefix + "amplitude_spread", s.amplitude_spread);
  s.pose_spread = kv.get_double(prefix + "pose_spread", s.pose_spread);
  s.random_time_shift = kv.get_bool(prefix + "random_time_shift", s.random_time_shift);
  s.class_distance_floor = kv.get_double(prefix + "class_distance_floor", s.class_distance_floor);
  s.seed = static_cast<std::uint64_t>(kv.get_size(prefix + "seed", s.seed));
  return s;
}

SynthSpec default_spec() {
  SynthSpec s;
  // x lateral, y up, z depth; joint order follows toy_skeleton().
  s.base_pose = {{0.0, 1.6, 0.0},   {0.0, 1.3, 0.0},  {0.0, 0.9, 0.0},
                 {-0.35, 1.1, 0.0}, {-0.45, 0.8, 0.0}, {0.35, 1.1, 0.0},
                 {0.45, 0.8, 0.0},  {-0.2, 0.0, 0.0},  {0.2, 0.0, 0.0}};
  struct Limb {
    double amp, freq, phase;
  };
  // Elbow moves by the limb amplitude, the hand twice as far; feet swing forward.
  auto make = [](Limb left, Limb right, double legs) {
    ClassMotion c;
    c.joints.resize(9);
    auto arm = [&](std::size_t elbow, std::size_t hand, Limb l, double side) {
      c.joints[elbow] = {{side * 0.10 * l.amp, 0.15 * l.amp, 0.10 * l.amp}, l.freq, l.phase};
      c.joints[hand] = {{side * 0.20 * l.amp, 0.30 * l.amp, 0.20 * l.amp}, l.freq, l.phase};
    };
    arm(3, 4, left, -1.0);
    arm(5, 6, right, 1.0);
    if (legs > 0.0) {
      c.joints[7] = {{0.0, 0.05 * legs, 0.3 * legs}, left.freq, left.phase};
      c.joints[8] = {{0.0, 0.05 * legs, 0.3 * legs}, left.freq, left.phase + std::numbers::pi};
    }
    return c;
  };
  const double pi = std::numbers::pi;
  s.classes = {
      make({1.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, 0.0),         // both arms in phase
      make({1.0, 1.0, 0.0}, {1.0, 1.0, pi}, 0.0),          // alternating arms
      make({1.0, 1.0, 0.0}, {1.0, 1.0, 0.5 * pi}, 0.0),    // quarter-cycle lag
      make({1.0, 2.0, 0.0}, {1.0, 2.0, 0.0}, 0.0),         // double tempo
      make({1.0, 1.0, 0.0}, {1.0, 1.0, 0.0}, 1.0),         // in phase with stepping
  };
  return s;
}

std::size_t Dataset::frames() const { return samples.empty() ? 0 : samples.front().x.dim(1); }
std::size_t Dataset::joints() const { return samples.empty() ? 0 : samples.front().x.dim(2); }

Dataset Dataset::subset(Split split) const {
  Dataset out;
  out.num_classes = num_classes;
  out.info = info;
  for (const auto& s : samples)
    if (s.split == split) out.samples.push_back(s);
  return out;
}

std::size_t Dataset::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [&](const auto& s) { return s.split == split; }));
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

Split split_for_id(const std::string& id, unsigned test_percent) {
  return fnv1a(id) % 100 < test_percent ? Split::test : Split::train;
}

Dataset generate(const SynthSpec& spec, const graph::SkeletonGraph& graph) {
  spec.validate();
  const std::size_t v_count = spec.num_joints();
  if (graph.num_joints() != v_count) {
    throw ConfigError("synth: spec has " + std::to_string(v_count) + " joints, graph has " +
                      std::to_string(graph.num_joints()));
  }
  const std::size_t t_count = spec.frames;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Dataset ds;
  ds.num_classes = spec.num_classes();
  spec.write_to(ds.info, "synth.");
  char id[32];
  for (std::size_t label = 0; label < spec.num_classes(); ++label) {
    const auto& motion = spec.classes[label];
    for (std::size_t k = 0; k < spec.samples_per_class; ++k) {
      const double shift = spec.random_time_shift ? unit(rng) * static_cast<double>(t_count) : 0.0;
      const double scale = 1.0 + spec.amplitude_spread * (2.0 * unit(rng) - 1.0);
      std::vector<double> pose(3 * v_count);
      for (auto& p : pose) p = spec.pose_spread * gauss(rng);

      std::vector<double> x(3 * t_count * v_count);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t t = 0; t < t_count; ++t) {
          for (std::size_t v = 0; v < v_count; ++v) {
            const auto& jm = motion.joints[v];
            double value = spec.base_pose[v][c] + pose[c * v_count + v];
            if (jm.moving()) {
              const double angle =
                  kTwoPi * jm.frequency * (static_cast<double>(t) + shift) / static_cast<double>(t_count) +
                  jm.phase;
              value += scale * jm.amplitude[c] * std::sin(angle);
            }
            if (spec.jitter > 0.0) value += spec.jitter * gauss(rng);
            x[(c * t_count + t) * v_count + v] = value;
          }
        }
      }
      std::snprintf(id, sizeof id, "c%zu-%05zu", label, k);
      SkeletonSample s{Tensor({3, t_count, v_count}, std::move(x)), label, id, split_for_id(id)};
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

NoiseMode parse_noise_mode(const std::string& name) {
  if (name == "joint") return NoiseMode::joint;
  if (name == "axis") return NoiseMode::axis;
  throw ConfigError("unknown noise mode '" + name + "' (expected joint or axis)");
}

Dataset inject_noise(const Dataset& ds, double fraction, std::uint64_t seed, NoiseMode mode) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw ConfigError("inject_noise: fraction must lie in [0, 1]");
  }
  Dataset out = ds;
  if (out.samples.empty()) return out;
  const std::size_t t_count = out.frames(), v_count = out.joints();
  const std::size_t per_sample = t_count * v_count * (mode == NoiseMode::axis ? 3 : 1);
  const std::size_t total = per_sample * out.samples.size();
  const auto picks = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));

  // Partial Fisher-Yates: the first `picks` entries are a uniform subset.
  std::vector<std::size_t> sites(total);
  for (std::size_t i = 0; i < total; ++i) sites[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < picks; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(sites[i], sites[pick(rng)]);
  }

  std::vector<std::vector<double>> data(out.samples.size());
  for (std::size_t s = 0; s < out.samples.size(); ++s) data[s].assign(out.samples[s].x.data().begin(), out.samples[s].x.data().end());
  for (std::size_t i = 0; i < picks; ++i) {
    const std::size_t s = sites[i] / per_sample;
    std::size_t local = sites[i] % per_sample;
    if (mode == NoiseMode::axis) {
      data[s][local] = 0.0;  // local already indexes (c, t, v)
    } else {
      for (std::size_t c = 0; c < 3; ++c) data[s][c * t_count * v_count + local] = 0.0;
    }
  }
  for (std::size_t s = 0; s < out.samples.size(); ++s) {
    out.samples[s].x = Tensor(out.samples[s].x.shape(), std::move(data[s]));
  }
  out.info.set("noise.fraction", format_double(fraction));
  out.info.set("noise.seed", std::to_string(seed));
  out.info.set("noise.mode", mode == NoiseMode::axis ? "axis" : "joint");
  return out;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  manifest << kDatasetMagic << ' ' << kDatasetVersion << '\n';
  manifest << "classes " << ds.num_classes << '\n';
  for (const auto& [k, v] : ds.info.entries()) manifest << "info " << k << '=' << v << '\n';
  for (const auto& s : ds.samples) {
    check_id(s.id);
    manifest << "sample " << s.id << ' ' << s.label << ' ' << split_name(s.split) << '\n';
    save_tensor(dir / "samples" / (s.id + ".mdrt"), s.x);
  }
  if (!manifest.flush()) throw FormatError("failed writing " + (dir / "manifest.txt").string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.txt";
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open dataset manifest " + path.string());
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kDatasetMagic) {
    throw FormatError(path.string() + ": not a dataset manifest");
  }
  if (version != kDatasetVersion) {
    throw FormatError(path.string() + ": unsupported dataset version " + std::to_string(version));
  }
  Dataset ds;
  bool have_classes = false;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "classes") {
      if (!(ls >> ds.num_classes)) throw FormatError(path.string() + ": bad classes line");
      have_classes = true;
    } else if (kind == "info") {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      ds.info.apply_override(rest);
    } else if (kind == "sample") {
      SkeletonSample s;
      std::string split;
      if (!(ls >> s.id >> s.label >> split)) throw FormatError(path.string() + ": bad sample line '" + line + "'");
      check_id(s.id);
      s.split = parse_split(split);
      s.x = load_tensor(dir / "samples" / (s.id + ".mdrt"));
      if (s.x.rank() != 3 || s.x.dim(0) != 3) {
        throw FormatError("sample " + s.id + " has shape " + shape_str(s.x.shape()) +
                          ", expected (3, T, V)");
      }
      if (!ds.samples.empty() && s.x.shape() != ds.samples.front().x.shape()) {
        throw FormatError("sample " + s.id + " shape differs from the first sample");
      }
      ds.samples.push_back(std::move(s));
    } else {
      throw FormatError(path.string() + ": unknown manifest entry '" + kind + "'");
    }
  }
  if (!have_classes) throw FormatError(path.string() + ": missing classes line");
  for (const auto& s : ds.samples) {
    if (s.label >= ds.num_classes) {
      throw FormatError("sample " + s.id + " label " + std::to_string(s.label) + " out of range");
    }
  }
  return ds;
}

SkeletonSample import_csv_sample(const std::filesystem::path& path, std::size_t joints,
                                 std::size_t label, const std::string& id) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  check_id(id);
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string field;
    bool numeric = true;
    while (std::getline(ls, field, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(field, &used));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError(path.string() + ": non-numeric field in row " + std::to_string(rows.size() + 1));
    }
    first = false;
    if (row.size() != joints * 3) {
      throw FormatError(path.string() + ": expected " + std::to_string(joints * 3) + " columns, got " +
                        std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw FormatError(path.string() + ": no frames");
  const std::size_t t_count = rows.size();
  std::vector<double> x(3 * t_count * joints);
  for (std::size_t t = 0; t < t_count; ++t)
    for (std::size_t v = 0; v < joints; ++v)
      for (std::size_t c = 0; c < 3; ++c) x[(c * t_count + t) * joints + v] = rows[t][v * 3 + c];
  Tensor tx({3, t_count, joints}, std::move(x));
  for (double d : tx.data())
    if (!std::isfinite(d)) throw FormatError(path.string() + ": non-finite coordinate");
  return {std::move(tx), label, id, split_for_id(id)};
}

}  // namespace mdr::data

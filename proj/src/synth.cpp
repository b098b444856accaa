// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/synth.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "ivt/errors.hpp"
#include "ivt/rng.hpp"

namespace ivt::synth {

namespace {

// Pelvis, neck, head, right arm (shoulder, elbow, wrist), left arm, right leg
// (hip, knee, ankle), left leg. Multiples of 1/4 so that every rendered
// position is exact in binary.
const std::vector<std::array<double, 3>> kSkeleton = {
    {0.0, 0.0, 0.0},      {0.0, -2.5, 0.25},    {0.0, -3.5, 0.25},  {-1.0, -2.25, 0.0},
    {-1.75, -1.25, 0.25}, {-2.0, -0.25, 0.5},   {1.0, -2.25, 0.0},  {1.75, -1.25, -0.25},
    {2.0, -0.25, -0.5},   {-0.75, 0.25, 0.0},   {-0.75, 1.75, 0.25}, {-0.75, 3.25, 0.0},
    {0.75, 0.25, 0.0},    {0.75, 1.75, -0.25},  {0.75, 3.25, 0.0}};

double signature(std::size_t joint, std::size_t channel) {
  return 0.5 + 0.5 * std::cos(2.399963229728653 * static_cast<double>((joint + 1) * (channel + 1)));
}

struct Extent {
  double min_x = 0, max_x = 0, min_y = 0, max_y = 0;
};

Extent extent(std::size_t joints) {
  Extent e;
  for (std::size_t j = 0; j < joints; ++j) {
    e.min_x = std::min(e.min_x, kSkeleton[j][0]);
    e.max_x = std::max(e.max_x, kSkeleton[j][0]);
    e.min_y = std::min(e.min_y, kSkeleton[j][1]);
    e.max_y = std::max(e.max_y, kSkeleton[j][1]);
  }
  return e;
}

struct Trajectory {
  long base_x = 0, base_y = 0;
  double z0 = 0, depth_scale = 1;
  double omega = 0, phase_x = 0, phase_y = 0, phase_z = 0;
};

double blob(const SceneSpec& spec, double dx, double dy) {
  const double r2 = dx * dx + dy * dy;
  if (r2 > spec.blob_radius * spec.blob_radius) return 0.0;
  return std::exp(-r2 / (2.0 * spec.blob_sigma * spec.blob_sigma));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

const std::vector<std::array<double, 3>>& skeleton_template() { return kSkeleton; }

void SceneSpec::validate() const {
  if (joints == 0 || joints > kMaxJoints)
    throw ConfigError("joints must be in [1, " + std::to_string(kMaxJoints) + "], got " +
                      std::to_string(joints));
  if (frames == 0) throw ConfigError("a scene needs at least one frame");
  if (height == 0 || width == 0 || channels == 0) throw ConfigError("empty feature grid");
  if (!(amplitude >= 0.0) || !(depth_motion >= 0.0)) throw ConfigError("negative amplitude");
  if (!(depth_min > 0.0) || !(depth_max >= depth_min)) throw ConfigError("bad depth range");
  if (!(sigma > 0.0) || !(blob_sigma > 0.0) || !(blob_radius > 0.0))
    throw ConfigError("blob and heatmap widths must be positive");
}

std::vector<double> render(const SceneSpec& spec, const std::vector<pose::Pose3D>& poses,
                           std::optional<std::size_t> only_joint) {
  const std::size_t hw = spec.height * spec.width, c_count = spec.channels;
  std::vector<double> out(c_count * hw, 0.0);
  const long reach = static_cast<long>(std::ceil(spec.blob_radius));
  for (const auto& p : poses)
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (only_joint && *only_joint != j) continue;
      const double jx = p.joints[j][0], jy = p.joints[j][1], jz = p.joints[j][2];
      const long cx = std::lround(jx), cy = std::lround(jy);
      for (long y = cy - reach; y <= cy + reach; ++y)
        for (long x = cx - reach; x <= cx + reach; ++x) {
          if (y < 0 || x < 0 || y >= static_cast<long>(spec.height) ||
              x >= static_cast<long>(spec.width))
            continue;
          const double g = blob(spec, static_cast<double>(x) - jx, static_cast<double>(y) - jy);
          if (g == 0.0) continue;
          const std::size_t pix = static_cast<std::size_t>(y) * spec.width +
                                  static_cast<std::size_t>(x);
          // The last channel carries depth; the others carry joint signatures.
          for (std::size_t c = 0; c + 1 < c_count; ++c) out[c * hw + pix] += signature(j, c) * g;
          const double depth = c_count == 1 ? 1.0 : jz / spec.depth_max;
          out[(c_count - 1) * hw + pix] += depth * g;
        }
    }
  return out;
}

Scene generate(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const Extent e = extent(spec.joints);
  const long amp = static_cast<long>(std::ceil(spec.amplitude));
  const long lo_x = static_cast<long>(std::ceil(-e.min_x)) + amp;
  const long hi_x = static_cast<long>(spec.width) - 1 - static_cast<long>(std::ceil(e.max_x)) - amp;
  const long lo_y = static_cast<long>(std::ceil(-e.min_y)) + amp;
  const long hi_y =
      static_cast<long>(spec.height) - 1 - static_cast<long>(std::ceil(e.max_y)) - amp;
  if (spec.persons > 0 && (lo_x > hi_x || lo_y > hi_y))
    throw ConfigError("a skeleton moving by " + std::to_string(spec.amplitude) +
                      " cells does not fit the " + std::to_string(spec.height) + "x" +
                      std::to_string(spec.width) + " grid");

  std::vector<Trajectory> paths;
  for (std::size_t p = 0; p < spec.persons; ++p) {
    Trajectory tr;
    // Distinct resting roots where possible.
    for (int attempt = 0; attempt < 64; ++attempt) {
      tr.base_x = lo_x + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi_x - lo_x + 1)));
      tr.base_y = lo_y + static_cast<long>(rng.below(static_cast<std::uint64_t>(hi_y - lo_y + 1)));
      bool clash = false;
      for (const auto& o : paths) clash |= o.base_x == tr.base_x && o.base_y == tr.base_y;
      if (!clash) break;
    }
    tr.z0 = rng.uniform(spec.depth_min, spec.depth_max);
    tr.depth_scale = rng.uniform(0.5, 1.5);
    tr.omega = rng.uniform(0.3, 0.8);
    tr.phase_x = rng.uniform(0.0, 2.0 * M_PI);
    tr.phase_y = rng.uniform(0.0, 2.0 * M_PI);
    tr.phase_z = rng.uniform(0.0, 2.0 * M_PI);
    paths.push_back(tr);
  }

  Scene scene;
  scene.spec = spec;
  const std::size_t t_count = spec.frames, hw = spec.height * spec.width;
  std::vector<std::vector<std::array<long, 2>>> roots(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::vector<pose::Pose3D> frame;
    const double tt = static_cast<double>(t);
    for (const auto& tr : paths) {
      const long rx = tr.base_x + std::lround(spec.amplitude * std::sin(tr.omega * tt + tr.phase_x));
      const long ry = tr.base_y + std::lround(spec.amplitude * std::sin(tr.omega * tt + tr.phase_y));
      const double rz = tr.z0 + spec.depth_motion * std::sin(tr.omega * tt + tr.phase_z);
      roots[t].push_back({rx, ry});
      pose::Pose3D p;
      for (std::size_t j = 0; j < spec.joints; ++j)
        p.joints.push_back({static_cast<double>(rx) + kSkeleton[j][0],
                            static_cast<double>(ry) + kSkeleton[j][1],
                            rz + tr.depth_scale * kSkeleton[j][2]});
      frame.push_back(std::move(p));
    }
    scene.poses.push_back(std::move(frame));
  }

  std::vector<double> features;
  features.reserve(t_count * spec.channels * hw);
  for (std::size_t t = 0; t < t_count; ++t) {
    const auto map = render(spec, scene.poses[t]);
    features.insert(features.end(), map.begin(), map.end());
    scene.targets.push_back(
        pose::encode_targets(scene.poses[t], spec.joints, spec.height, spec.width, spec.sigma));

    // Ownership: strongest total blob weight, lowest index on ties.
    std::vector<std::optional<std::size_t>> owner(hw);
    std::vector<double> best(hw, 0.0);
    for (std::size_t p = 0; p < scene.poses[t].size(); ++p) {
      SceneSpec mono = spec;
      mono.channels = 1;
      const auto weight = render(mono, {scene.poses[t][p]});
      for (std::size_t i = 0; i < hw; ++i)
        if (weight[i] > best[i]) {
          best[i] = weight[i];
          owner[i] = p;
        }
    }
    scene.owner.push_back(std::move(owner));
  }
  scene.features = Tensor::from({t_count, spec.channels, spec.height, spec.width},
                                std::move(features));

  scene.flow = video::FlowField::zero(t_count, spec.height, spec.width);
  for (std::size_t t = 0; t + 1 < t_count; ++t)
    for (std::size_t i = 0; i < hw; ++i)
      if (const auto p = scene.owner[t][i]) {
        scene.flow.pairs[t][i] = static_cast<double>(roots[t + 1][*p][0] - roots[t][*p][0]);
        scene.flow.pairs[t][hw + i] = static_cast<double>(roots[t + 1][*p][1] - roots[t][*p][1]);
      }
  return scene;
}

namespace {

Tensor stack(const Scene& scene, std::size_t channels,
             const std::vector<double> pose::Targets::*member) {
  const auto& s = scene.spec;
  std::vector<double> out;
  out.reserve(scene.targets.size() * channels * s.height * s.width);
  for (const auto& t : scene.targets) out.insert(out.end(), (t.*member).begin(), (t.*member).end());
  return Tensor::from({scene.targets.size(), channels, s.height, s.width}, std::move(out));
}

}  // namespace

Tensor stack_heatmaps(const Scene& scene) { return stack(scene, 1, &pose::Targets::heatmap); }
Tensor stack_offsets3d(const Scene& scene) {
  return stack(scene, 3 * scene.spec.joints, &pose::Targets::offsets3d);
}
Tensor stack_offsets2d(const Scene& scene) {
  return stack(scene, 2 * scene.spec.joints, &pose::Targets::offsets2d);
}

void write_manifest(std::ostream& os, const Scene& scene) {
  const auto& s = scene.spec;
  using pose::format_double;
  os << "# synthetic scene\n"
     << "seed = " << s.seed << '\n'
     << "persons = " << s.persons << '\n'
     << "joints = " << s.joints << '\n'
     << "frames = " << s.frames << '\n'
     << "height = " << s.height << '\n'
     << "width = " << s.width << '\n'
     << "channels = " << s.channels << '\n'
     << "amplitude = " << format_double(s.amplitude) << '\n'
     << "depth_min = " << format_double(s.depth_min) << '\n'
     << "depth_max = " << format_double(s.depth_max) << '\n'
     << "depth_motion = " << format_double(s.depth_motion) << '\n'
     << "sigma = " << format_double(s.sigma) << '\n'
     << "blob_sigma = " << format_double(s.blob_sigma) << '\n'
     << "blob_radius = " << format_double(s.blob_radius) << '\n';
  for (std::size_t t = 0; t < scene.poses.size(); ++t)
    for (std::size_t p = 0; p < scene.poses[t].size(); ++p)
      os << "pose " << pose::format_pose_line(t, p, scene.poses[t][p]) << '\n';
}

Scene read_manifest(std::istream& is) {
  std::map<std::string, std::string> fields;
  std::vector<pose::PoseRecord> recorded;
  std::string line;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "scene manifest line " + std::to_string(no) + ": ";
    if (line.rfind("pose ", 0) == 0) {
      try {
        recorded.push_back(pose::parse_pose_line(line.substr(5)));
      } catch (const FormatError& e) {
        throw FormatError(where + e.what());
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!fields.emplace(key, trim(line.substr(eq + 1))).second)
      throw FormatError(where + "duplicate key '" + key + "'");
  }

  SceneSpec s;
  const auto take_field = [&](const std::string& key) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw FormatError("scene manifest is missing '" + key + "'");
    const std::string v = it->second;
    fields.erase(it);
    return v;
  };
  const auto count = [&](const std::string& key) {
    const std::string v = take_field(key);
    const double d = pose::parse_double(v);
    if (d < 0 || d != std::floor(d)) throw FormatError("'" + key + "' must be a count: " + v);
    return static_cast<std::size_t>(d);
  };
  const auto real = [&](const std::string& key) { return pose::parse_double(take_field(key)); };
  {
    const std::string seed = take_field("seed");
    std::istringstream ss(seed);
    if (!(ss >> s.seed) || !ss.eof()) throw FormatError("bad seed '" + seed + "'");
  }
  s.persons = count("persons");
  s.joints = count("joints");
  s.frames = count("frames");
  s.height = count("height");
  s.width = count("width");
  s.channels = count("channels");
  s.amplitude = real("amplitude");
  s.depth_min = real("depth_min");
  s.depth_max = real("depth_max");
  s.depth_motion = real("depth_motion");
  s.sigma = real("sigma");
  s.blob_sigma = real("blob_sigma");
  s.blob_radius = real("blob_radius");
  if (!fields.empty()) throw FormatError("unknown scene key '" + fields.begin()->first + "'");

  Scene scene;
  try {
    scene = generate(s);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("scene manifest describes an invalid scene: ") + e.what());
  }
  std::size_t expected = 0;
  for (const auto& f : scene.poses) expected += f.size();
  if (recorded.size() != expected)
    throw FormatError("scene manifest lists " + std::to_string(recorded.size()) +
                      " poses, the generator produced " + std::to_string(expected));
  for (const auto& r : recorded) {
    if (r.frame >= scene.poses.size() || r.person >= scene.poses[r.frame].size())
      throw FormatError("pose record for frame " + std::to_string(r.frame) + " person " +
                        std::to_string(r.person) + " does not exist");
    const auto& g = scene.poses[r.frame][r.person];
    if (r.pose.joints != g.joints)
      throw FormatError("pose of frame " + std::to_string(r.frame) + " person " +
                        std::to_string(r.person) + " differs from the regenerated scene");
  }
  return scene;
}

void save_manifest(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  write_manifest(os, scene);
  if (!os) throw FormatError("failed writing " + path.string());
}

Scene load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return read_manifest(is);
}

}  // namespace ivt::synth

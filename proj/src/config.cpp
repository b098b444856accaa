// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "ivt/pose.hpp"

namespace ivt::config {

namespace pt = boost::property_tree;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Line of every "section.key" in the raw text, for diagnostics.
std::map<std::string, std::size_t> key_lines(const std::string& text) {
  std::map<std::string, std::size_t> lines;
  std::istringstream is(text);
  std::string line, section;
  for (std::size_t no = 1; std::getline(is, line); ++no) {
    line = trim(line);
    if (line.empty() || line[0] == ';' || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq != std::string::npos) lines.emplace(section + "." + trim(line.substr(0, eq)), no);
  }
  return lines;
}

class Reader {
 public:
  Reader(const pt::ptree& tree, std::string source, std::map<std::string, std::size_t> lines)
      : tree_(tree), source_(std::move(source)), lines_(std::move(lines)) {}

  template <typename F>
  void field(const std::string& path, F&& apply) {
    known_.insert(path);
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(path, '.'));
    if (!node) return;
    try {
      apply(trim(*node));
    } catch (const std::exception& e) {
      fail(path, e.what());
    }
  }

  void count(const std::string& path, std::size_t& out) {
    field(path, [&](const std::string& v) {
      std::size_t parsed = 0;
      std::size_t used = 0;
      if (v.empty() || v[0] == '-') throw std::invalid_argument("expected a count, got '" + v + "'");
      parsed = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument("expected a count, got '" + v + "'");
      out = parsed;
    });
  }
  void seed(const std::string& path, std::uint64_t& out) {
    std::size_t v = out;
    count(path, v);
    out = v;
  }
  void real(const std::string& path, double& out) {
    field(path, [&](const std::string& v) {
      try {
        out = pose::parse_double(v);
      } catch (const FormatError&) {
        throw std::invalid_argument("expected a number, got '" + v + "'");
      }
    });
  }
  void flag(const std::string& path, bool& out) {
    field(path, [&](const std::string& v) {
      if (v == "true" || v == "1" || v == "on" || v == "yes") out = true;
      else if (v == "false" || v == "0" || v == "off" || v == "no") out = false;
      else throw std::invalid_argument("expected true or false, got '" + v + "'");
    });
  }
  template <typename T, typename Parse>
  void list(const std::string& path, std::vector<T>& out, Parse parse) {
    field(path, [&](const std::string& v) {
      std::vector<T> items;
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) items.push_back(parse(trim(item)));
      if (items.empty()) throw std::invalid_argument("empty list");
      out = std::move(items);
    });
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty())
        fail(section, "key outside of any section");
      for (const auto& [key, value] : body) {
        const std::string path = section + "." + key;
        if (!known_.count(path)) fail(path, "unknown key");
      }
    }
  }

  [[noreturn]] void fail(const std::string& path, const std::string& why) const {
    const auto it = lines_.find(path);
    throw ParseError(source_, it == lines_.end() ? 0 : it->second, path + ": " + why);
  }

 private:
  const pt::ptree& tree_;
  std::string source_;
  std::map<std::string, std::size_t> lines_;
  std::set<std::string> known_;
};

std::string join_counts(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + pose::format_double(v[i]);
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  scene.height = scene.width = input_size / stride;
  model.height = model.width = scene.height;
  model.channels = scene.channels;
  model.joints = scene.joints;
  model.layers = 3;
}

ParseError::ParseError(const std::string& source, std::size_t line, const std::string& message)
    : ConfigError(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + message),
      line_(line) {}

RunConfig parse_config(const std::string& text, const std::string& source) {
  pt::ptree tree;
  try {
    std::istringstream is(text);
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, e.line(), e.message());
  }
  Reader r(tree, source, key_lines(text));
  RunConfig c;

  auto& s = c.scene;
  r.seed("scene.seed", s.seed);
  r.count("scene.persons", s.persons);
  r.count("scene.joints", s.joints);
  r.count("scene.frames", s.frames);
  r.count("scene.input_size", c.input_size);
  r.count("scene.stride", c.stride);
  r.count("scene.channels", s.channels);
  r.real("scene.amplitude", s.amplitude);
  r.real("scene.depth_min", s.depth_min);
  r.real("scene.depth_max", s.depth_max);
  r.real("scene.depth_motion", s.depth_motion);
  r.real("scene.sigma", s.sigma);
  r.real("scene.blob_sigma", s.blob_sigma);
  r.real("scene.blob_radius", s.blob_radius);

  auto& m = c.model;
  r.seed("model.seed", c.model_seed);
  r.count("model.layers", m.layers);
  r.list("model.blocks", m.scales.blocks, [](const std::string& v) {
    std::size_t used = 0;
    const auto k = std::stoull(v, &used);
    if (used != v.size() || k == 0) throw std::invalid_argument("bad block size '" + v + "'");
    return static_cast<std::size_t>(k);
  });
  r.count("model.d_common", m.scales.d_common);
  r.count("model.heads", m.scales.heads);
  r.count("model.ffn_mult", m.scales.ffn_mult);
  r.flag("model.causal", m.scales.causal);
  r.count("model.tokenizer_heads", m.tokenizer_heads);
  r.count("model.offset_hidden", m.offset_hidden);

  auto& t = c.train;
  r.count("train.steps", t.steps);
  r.real("train.lr", t.lr);
  r.list("train.milestones", t.milestones, [](const std::string& v) { return pose::parse_double(v); });
  r.seed("train.seed", t.seed);
  r.real("train.clip_norm", t.clip_norm);
  r.real("train.alpha", t.alpha);
  r.flag("train.teacher_forcing", t.teacher_forcing);

  auto& e = c.eval;
  r.real("eval.threshold", e.threshold);
  r.count("eval.max_people", e.max_people);
  r.flag("eval.teacher_forcing", e.teacher_forcing);
  r.flag("eval.root_align", e.metrics.root_align);
  r.field("eval.procrustes", [&](const std::string& v) {
    if (v == "similarity") e.metrics.alignment = metrics::Alignment::similarity;
    else if (v == "rigid") e.metrics.alignment = metrics::Alignment::rigid;
    else throw std::invalid_argument("expected similarity or rigid, got '" + v + "'");
  });
  r.reject_unknown();

  // Cross-field checks.
  if (c.stride == 0 || c.input_size % c.stride != 0)
    r.fail("scene.stride", "must divide input_size " + std::to_string(c.input_size));
  s.height = s.width = c.input_size / c.stride;
  const auto check = [&](const std::string& path, auto&& validate) {
    try {
      validate();
    } catch (const ConfigError& err) {
      r.fail(path, err.what());
    }
  };
  check("scene", [&] { s.validate(); });
  check("train", [&] { t.validate(); });
  if (!(e.threshold > 0.0 && e.threshold < 1.0)) r.fail("eval.threshold", "must lie in (0, 1)");
  if (e.max_people == 0) r.fail("eval.max_people", "must be at least 1");
  c.model = model_for_scene(c, s);
  check("model", [&] { c.model.validate(); });
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ParseError(path.string(), 0, "cannot read file");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string dump_config(const RunConfig& c) {
  using pose::format_double;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  std::ostringstream os;
  const auto& s = c.scene;
  os << "[scene]\n"
     << "seed = " << s.seed << "\npersons = " << s.persons << "\njoints = " << s.joints
     << "\nframes = " << s.frames << "\ninput_size = " << c.input_size
     << "\nstride = " << c.stride << "\nchannels = " << s.channels
     << "\namplitude = " << format_double(s.amplitude)
     << "\ndepth_min = " << format_double(s.depth_min)
     << "\ndepth_max = " << format_double(s.depth_max)
     << "\ndepth_motion = " << format_double(s.depth_motion)
     << "\nsigma = " << format_double(s.sigma) << "\nblob_sigma = " << format_double(s.blob_sigma)
     << "\nblob_radius = " << format_double(s.blob_radius) << "\n\n";
  const auto& m = c.model;
  os << "[model]\n"
     << "seed = " << c.model_seed << "\nlayers = " << m.layers
     << "\nblocks = " << join_counts(m.scales.blocks) << "\nd_common = " << m.scales.d_common
     << "\nheads = " << m.scales.heads << "\nffn_mult = " << m.scales.ffn_mult
     << "\ncausal = " << b(m.scales.causal) << "\ntokenizer_heads = " << m.tokenizer_heads
     << "\noffset_hidden = " << m.offset_hidden << "\n\n";
  const auto& t = c.train;
  os << "[train]\n"
     << "steps = " << t.steps << "\nlr = " << format_double(t.lr)
     << "\nmilestones = " << join_reals(t.milestones) << "\nseed = " << t.seed
     << "\nclip_norm = " << format_double(t.clip_norm) << "\nalpha = " << format_double(t.alpha)
     << "\nteacher_forcing = " << b(t.teacher_forcing) << "\n\n";
  const auto& e = c.eval;
  os << "[eval]\n"
     << "threshold = " << format_double(e.threshold) << "\nmax_people = " << e.max_people
     << "\nteacher_forcing = " << b(e.teacher_forcing)
     << "\nroot_align = " << b(e.metrics.root_align) << "\nprocrustes = "
     << (e.metrics.alignment == metrics::Alignment::rigid ? "rigid" : "similarity") << '\n';
  return os.str();
}

model::ModelConfig model_for_scene(const RunConfig& cfg, const synth::SceneSpec& scene) {
  model::ModelConfig m = cfg.model;
  m.joints = scene.joints;
  m.channels = scene.channels;
  m.height = scene.height;
  m.width = scene.width;
  return m;
}

}  // namespace ivt::config

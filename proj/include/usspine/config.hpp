#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "usspine/annotations.hpp"
#include "usspine/metrics.hpp"
#include "usspine/nn/classifier_net.hpp"
#include "usspine/nn/detector_net.hpp"
#include "usspine/nn/optimizer.hpp"
#include "usspine/patcher.hpp"
#include "usspine/phantom.hpp"
#include "usspine/pipeline.hpp"
#include "usspine/projection.hpp"
#include "usspine/ssl_classifier.hpp"
#include "usspine/ssl_detector.hpp"

namespace usspine {

struct DataConfig {
  int labeled_subjects = 1;
  int unlabeled_subjects = 2;
  int test_subjects = 2;
  int slices_per_subject = 200;
  int labeled_slices = 10;
  double subject_variation = 1.0;  // 0 = every subject shares the base texture
};

struct TrainSchedule {
  int epochs = 500;
  int warmup_epochs = 0;  // supervised-only epochs before the unlabeled loss is switched on
};

struct EvalConfig {
  double t_real = kPckRealThreshold;
  double t_fake = kPckFakeThreshold;
};

// Everything a run needs. Defaults are the reference hyperparameters at
// full resolution; desk-scale runs override them from the config file.
struct RunConfig {
  std::uint64_t seed = 7;
  double epoch_scale = 1.0;
  DataConfig data;
  PhantomSpec phantom;
  bool fit_prior = false;

  nn::DetectorArch detector_arch;
  DetectorSslConfig detector;
  nn::OptimizerConfig detector_opt = nn::OptimizerConfig::detector_default();
  TrainSchedule detector_schedule;

  nn::ClassifierArch classifier_arch;
  ClassifierSslConfig classifier;
  nn::OptimizerConfig classifier_opt = nn::OptimizerConfig::classifier_default();
  TrainSchedule classifier_schedule;
  bool per_type_classifier = false;

  PipelineConfig pipeline;
  EvalConfig eval;
  SpaConfig spa;
  ProjectionConfig projection;

  int scaled(int epochs) const { return std::max(0, static_cast<int>(std::lround(epochs * epoch_scale))); }
  nn::OptimizerConfig scaled(const nn::OptimizerConfig& o) const {
    auto c = o;
    c.schedule = o.schedule.scaled(epoch_scale);
    return c;
  }

  // Derived fields that must track others.
  void sync() {
    detector_arch.in_width = phantom.width;
    detector_arch.in_height = phantom.height;
    const auto in = pipeline.patches.input();
    classifier_arch.in_width = in.width;
    classifier_arch.in_height = in.height;
    phantom.n_slices = data.slices_per_subject;
  }

  void validate() const {
    phantom.validate();
    if (data.labeled_subjects < 1) throw ConfigError("data.labeled_subjects must be >= 1");
    if (data.unlabeled_subjects < 0 || data.test_subjects < 0) throw ConfigError("data subject counts must be >= 0");
    if (data.slices_per_subject < 3) throw ConfigError("data.slices_per_subject must be >= 3");
    if (data.labeled_slices < 1 || data.labeled_slices > data.labeled_subjects * data.slices_per_subject)
      throw ConfigError("data.labeled_slices must be in [1, labeled_subjects * slices_per_subject]");
    if (!(data.subject_variation >= 0.0)) throw ConfigError("data.subject_variation must be >= 0");
    if (!(epoch_scale > 0.0)) throw ConfigError("train.epoch_scale must be positive");
    detector_arch.validate();
    detector.validate();
    classifier_arch.validate();
    classifier.validate();
    pipeline.patches.validate(phantom.width, phantom.height);
    for (const auto* s : {&detector_schedule, &classifier_schedule})
      if (s->epochs < 0 || s->warmup_epochs < 0 || s->warmup_epochs > s->epochs)
        throw ConfigError("schedule needs 0 <= warmup_epochs <= epochs");
    for (const auto* o : {&detector_opt, &classifier_opt}) {
      if (!(o->schedule.initial > 0.0)) throw ConfigError("optimizer lr must be positive");
      if (!(o->schedule.decay > 0.0 && o->schedule.decay <= 1.0)) throw ConfigError("optimizer lr_decay must be in (0,1]");
      if (o->schedule.warmup_steps < 0) throw ConfigError("optimizer lr_warmup_steps must be >= 0");
      if (!(o->momentum >= 0.0 && o->momentum < 1.0)) throw ConfigError("optimizer momentum must be in [0,1)");
      if (!(o->weight_decay >= 0.0)) throw ConfigError("optimizer weight_decay must be >= 0");
    }
    if (!(pipeline.decision_threshold >= 0.0 && pipeline.decision_threshold <= 1.0))
      throw ConfigError("eval.decision_threshold must be in [0,1]");
    if (!(eval.t_real > 0.0 && eval.t_fake > 0.0)) throw ConfigError("eval thresholds must be positive");
    if (spa.min_points < 3 || spa.min_vertebrae < 1 || !(spa.min_swing_deg > 0.0) || spa.samples_per_slice < 1)
      throw ConfigError("spa settings out of range");
    if (projection.band_margin < 0) throw ConfigError("spa.band_margin must be >= 0");
  }
};

namespace detail {

inline std::string trim_copy(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n"), e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string part;
  std::istringstream is(s);
  while (std::getline(is, part, ',')) out.push_back(trim_copy(part));
  return out;
}

template <typename T>
T parse_scalar(const std::string& text, const std::string& field) {
  const auto s = trim_copy(text);
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) throw ConfigError(field + ": expected a number, got '" + s + "'");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw ConfigError(field + ": value must be finite");
  return v;
}

inline bool parse_bool(const std::string& text, const std::string& field) {
  const auto s = trim_copy(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(field + ": expected true/false, got '" + s + "'");
}

// Applies one visitor to every (section, key, field) binding; used both to
// read and to write configs.
template <typename V>
void visit_config(RunConfig& c, V&& v) {
  v("train", "seed", c.seed);
  v("train", "epoch_scale", c.epoch_scale);

  auto& d = c.data;
  v("data", "labeled_subjects", d.labeled_subjects);
  v("data", "unlabeled_subjects", d.unlabeled_subjects);
  v("data", "test_subjects", d.test_subjects);
  v("data", "slices_per_subject", d.slices_per_subject);
  v("data", "labeled_slices", d.labeled_slices);
  v("data", "subject_variation", d.subject_variation);

  auto& p = c.phantom;
  v("phantom", "width", p.width);
  v("phantom", "height", p.height);
  v("phantom", "spacing_z", p.spacing_z_mm);
  v("phantom", "spacing_xy", p.spacing_xy_mm);
  v("phantom", "vertebra_period", p.vertebra_period);
  v("phantom", "junction_gap", p.junction_gap);
  v("phantom", "phase", p.phase);
  v("phantom", "lamina_length", p.lamina_length_range);
  v("phantom", "sp_depth", p.sp_depth_range);
  v("phantom", "lamina_half_sep", p.lamina_half_sep_range);
  v("phantom", "sp_y", p.sp_y_range);
  v("phantom", "rotation_max", p.rotation_max);
  v("phantom", "lamina_tilt_max", p.lamina_tilt_max);
  v("phantom", "thickness", p.structure_thickness);
  v("phantom", "curve", p.curve);
  v("phantom", "curve_amplitude", p.curve_amplitude);
  v("phantom", "curve_period", p.curve_period);
  v("phantom", "curve_angle", p.curve_angle_deg);
  v("phantom", "curve_angle2", p.curve_angle2_deg);
  v("phantom", "background", p.texture.background);
  v("phantom", "depth_falloff", p.texture.depth_falloff);
  v("phantom", "speckle", p.texture.speckle);
  v("phantom", "speckle_blur", p.texture.speckle_blur);
  v("phantom", "layer_contrast", p.texture.layer_contrast);
  v("phantom", "structure_gain", p.texture.structure_gain);
  v("phantom", "p_missing", p.p_random_missing);
  v("phantom", "distractors", p.distractors);
  v("phantom", "distractor_strength", p.distractor_strength);
  v("phantom", "confuser_probability", p.confuser_probability);
  v("phantom", "echo_probability", p.echo_probability);

  auto& pr = c.detector.prior;
  v("prior", "max_angle", pr.max_angle_deg);
  v("prior", "iso_ratio_tol", pr.iso_ratio_tol);
  v("prior", "D_range", pr.D_range);
  v("prior", "d_lam_range", pr.d_lam_range);
  v("prior", "orientation", pr.orientation);
  v("prior", "fit", c.fit_prior);

  v("augment", "noise_sigma", c.detector.weak.noise_sigma);
  v("augment", "flip_probability", c.classifier.weak.flip_probability);
  v("augment", "strong_ops", c.detector.strong.op_count);
  v("augment", "strong_magnitude", c.detector.strong.magnitude);

  auto& da = c.detector_arch;
  auto& ds = c.detector;
  v("detector", "d_ds", da.d_ds);
  v("detector", "stem", da.stem);
  v("detector", "widths", da.widths);
  v("detector", "head", da.head);
  v("detector", "sigma", ds.heatmap_sigma);
  v("detector", "batch", ds.labeled_batch);
  v("detector", "mu", ds.mu);
  v("detector", "lambda_u", ds.lambda_u);
  v("detector", "lambda_ramp_steps", ds.lambda_ramp_steps);
  v("detector", "tau", ds.tau);
  v("detector", "stride", ds.stride);
  v("detector", "use_prior", ds.use_prior);
  v("detector", "use_consistency", ds.use_consistency);
  v("detector", "optimizer", c.detector_opt.kind);
  v("detector", "lr", c.detector_opt.schedule.initial);
  v("detector", "lr_decay", c.detector_opt.schedule.decay);
  v("detector", "milestones", c.detector_opt.schedule.milestones);
  v("detector", "lr_warmup_steps", c.detector_opt.schedule.warmup_steps);
  v("detector", "momentum", c.detector_opt.momentum);
  v("detector", "weight_decay", c.detector_opt.weight_decay);
  v("detector", "epochs", c.detector_schedule.epochs);
  v("detector", "warmup_epochs", c.detector_schedule.warmup_epochs);

  auto& ca = c.classifier_arch;
  auto& cs = c.classifier;
  auto& ps = c.pipeline.patches;
  v("classifier", "pre_pool", ca.pre_pool);
  v("classifier", "widths", ca.widths);
  v("classifier", "sp_patch", ps.sp);
  v("classifier", "lamina_patch", ps.lamina);
  v("classifier", "jitter", ps.jitter_radius);
  v("classifier", "batch", cs.labeled_batch);
  v("classifier", "mu", cs.mu);
  v("classifier", "lambda_u", cs.lambda_u);
  v("classifier", "tau", cs.tau);
  v("classifier", "rebalance", cs.rebalance);
  v("classifier", "mask_from_strong", cs.mask_from_strong);
  v("classifier", "per_type", c.per_type_classifier);
  v("classifier", "optimizer", c.classifier_opt.kind);
  v("classifier", "lr", c.classifier_opt.schedule.initial);
  v("classifier", "lr_decay", c.classifier_opt.schedule.decay);
  v("classifier", "milestones", c.classifier_opt.schedule.milestones);
  v("classifier", "lr_warmup_steps", c.classifier_opt.schedule.warmup_steps);
  v("classifier", "momentum", c.classifier_opt.momentum);
  v("classifier", "weight_decay", c.classifier_opt.weight_decay);
  v("classifier", "epochs", c.classifier_schedule.epochs);
  v("classifier", "warmup_epochs", c.classifier_schedule.warmup_epochs);

  v("eval", "t_real", c.eval.t_real);
  v("eval", "t_fake", c.eval.t_fake);
  v("eval", "decision_threshold", c.pipeline.decision_threshold);

  v("spa", "min_points", c.spa.min_points);
  v("spa", "min_vertebrae", c.spa.min_vertebrae);
  v("spa", "min_swing", c.spa.min_swing_deg);
  v("spa", "samples_per_slice", c.spa.samples_per_slice);
  v("spa", "band_margin", c.projection.band_margin);
}

inline const char* enum_text(CurveShape s) {
  switch (s) {
    case CurveShape::Straight: return "straight";
    case CurveShape::Sine: return "sine";
    case CurveShape::SingleArc: return "arc";
    case CurveShape::SCurve: return "s";
  }
  return "?";
}
inline const char* enum_text(Orientation o) { return o == Orientation::Clockwise ? "clockwise" : "counterclockwise"; }
inline const char* enum_text(nn::OptimizerKind k) { return k == nn::OptimizerKind::Adam ? "adam" : "sgd"; }

struct Reader {
  const boost::property_tree::ptree& tree;
  std::set<std::string> known;

  template <typename T>
  void operator()(const char* section, const char* key, T& field) {
    const std::string name = std::string(section) + "." + key;
    known.insert(name);
    const auto node = tree.get_child_optional(boost::property_tree::ptree::path_type(name, '.'));
    if (!node) return;
    set(node->get_value<std::string>(), name, field);
  }

  static void set(const std::string& s, const std::string& n, int& f) { f = parse_scalar<int>(s, n); }
  static void set(const std::string& s, const std::string& n, std::uint64_t& f) { f = parse_scalar<std::uint64_t>(s, n); }
  static void set(const std::string& s, const std::string& n, double& f) { f = parse_scalar<double>(s, n); }
  static void set(const std::string& s, const std::string& n, float& f) { f = static_cast<float>(parse_scalar<double>(s, n)); }
  static void set(const std::string& s, const std::string& n, bool& f) { f = parse_bool(s, n); }
  static void set(const std::string& s, const std::string& n, std::vector<int>& f) {
    f.clear();
    if (trim_copy(s).empty()) return;
    for (const auto& part : split_list(s)) f.push_back(parse_scalar<int>(part, n));
  }
  static void set(const std::string& s, const std::string& n, Range& f) {
    const auto parts = split_list(s);
    if (parts.size() != 2) throw ConfigError(n + ": expected 'min,max'");
    f = {parse_scalar<double>(parts[0], n), parse_scalar<double>(parts[1], n)};
    if (!(f.min >= 0.0 && f.max >= f.min)) throw ConfigError(n + ": needs 0 <= min <= max");
  }
  static void set(const std::string& s, const std::string& n, PatchSize& f) {
    const auto parts = split_list(s);
    if (parts.size() != 2) throw ConfigError(n + ": expected 'width,height'");
    f = {parse_scalar<int>(parts[0], n), parse_scalar<int>(parts[1], n)};
  }
  static void set(const std::string& s, const std::string& n, std::array<double, 3>& f) {
    const auto parts = split_list(s);
    if (parts.size() == 1) {
      f.fill(parse_scalar<double>(parts[0], n));
      return;
    }
    if (parts.size() != 3) throw ConfigError(n + ": expected one value or 'sp,left,right'");
    for (int i = 0; i < 3; ++i) f[i] = parse_scalar<double>(parts[i], n);
  }
  static void set(const std::string& s, const std::string& n, CurveShape& f) {
    for (auto c : {CurveShape::Straight, CurveShape::Sine, CurveShape::SingleArc, CurveShape::SCurve})
      if (trim_copy(s) == enum_text(c)) return void(f = c);
    throw ConfigError(n + ": expected straight, sine, arc or s");
  }
  static void set(const std::string& s, const std::string& n, Orientation& f) {
    for (auto o : {Orientation::Clockwise, Orientation::CounterClockwise})
      if (trim_copy(s) == enum_text(o)) return void(f = o);
    throw ConfigError(n + ": expected clockwise or counterclockwise");
  }
  static void set(const std::string& s, const std::string& n, nn::OptimizerKind& f) {
    for (auto k : {nn::OptimizerKind::Adam, nn::OptimizerKind::SgdMomentum})
      if (trim_copy(s) == enum_text(k)) return void(f = k);
    throw ConfigError(n + ": expected adam or sgd");
  }
};

struct Writer {
  std::ostringstream out;
  std::string current;

  template <typename T>
  void operator()(const char* section, const char* key, T& field) {
    if (current != section) {
      if (!current.empty()) out << '\n';
      out << '[' << section << "]\n";
      current = section;
    }
    out << key << " = " << text(field) << '\n';
  }

  static std::string text(int v) { return std::to_string(v); }
  static std::string text(std::uint64_t v) { return std::to_string(v); }
  static std::string text(double v) { return format_number(v); }
  static std::string text(float v) { return format_number(v); }
  static std::string text(bool v) { return v ? "true" : "false"; }
  static std::string text(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  }
  static std::string text(const Range& r) { return format_number(r.min) + "," + format_number(r.max); }
  static std::string text(const PatchSize& p) { return std::to_string(p.width) + "," + std::to_string(p.height); }
  static std::string text(const std::array<double, 3>& a) {
    return format_number(a[0]) + "," + format_number(a[1]) + "," + format_number(a[2]);
  }
  template <typename E>
    requires std::is_enum_v<E>
  static std::string text(E e) { return enum_text(e); }
};

}  // namespace detail

inline RunConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  detail::Reader reader{tree, {}};
  detail::visit_config(c, reader);
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty()) throw ConfigError("config key '" + section + "' outside any section");
    for (const auto& kv : keys)
      if (!reader.known.count(section + "." + kv.first)) throw ConfigError("unknown config key " + section + "." + kv.first);
  }
  c.classifier.strong.op_count = c.detector.strong.op_count;
  c.classifier.strong.magnitude = c.detector.strong.magnitude;
  c.sync();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  return parse_config(in);
}

inline std::string format_config(RunConfig c) {
  detail::Writer w;
  detail::visit_config(c, w);
  return w.out.str();
}

}  // namespace usspine

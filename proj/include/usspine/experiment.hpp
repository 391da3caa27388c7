#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "usspine/config.hpp"
#include "usspine/metrics.hpp"
#include "usspine/nn/checkpoint.hpp"

// Dataset assembly, training schedules and the ablation/benchmark runners
// shared by the command-line tool and the acceptance tests.
namespace usspine {

enum class SubjectRole { Labeled, Unlabeled, Test };

inline const char* role_name(SubjectRole r) {
  switch (r) {
    case SubjectRole::Labeled: return "labeled";
    case SubjectRole::Unlabeled: return "unlabeled";
    case SubjectRole::Test: return "test";
  }
  return "?";
}

inline SubjectRole parse_role(const std::string& s) {
  for (auto r : {SubjectRole::Labeled, SubjectRole::Unlabeled, SubjectRole::Test})
    if (s == role_name(r)) return r;
  throw ValidationError("unknown subject role '" + s + "'");
}

// Labeled subjects carry annotations for their labeled slices only;
// unlabeled subjects keep their hidden truth (never used for training);
// test subjects carry full truth.
struct Subject {
  std::string name;
  SubjectRole role = SubjectRole::Test;
  Volume volume;
  AnnotationMap annotations;
  std::vector<double> reference_spa;
};

struct Dataset {
  std::vector<Subject> labeled, unlabeled, test;
};

// Each subject gets its own seed, texture, curve period and vertebra phase.
inline PhantomSpec subject_spec(const RunConfig& c, SubjectRole role, int index) {
  PhantomSpec s = c.phantom;
  s.n_slices = c.data.slices_per_subject;
  s.seed = derive_seed(c.seed, 0x5b1ULL, static_cast<std::uint64_t>(role), static_cast<std::uint64_t>(index));
  const double v = c.data.subject_variation;
  if (v > 0.0) {
    Rng r(derive_seed(s.seed, 0x7e47ULL));
    auto jitter = [&](double x, double rel) { return x * (1.0 + v * r.uniform(-rel, rel)); };
    s.texture.background = jitter(s.texture.background, 0.25);
    s.texture.speckle = jitter(s.texture.speckle, 0.3);
    s.texture.layer_contrast = jitter(s.texture.layer_contrast, 0.5);
    s.texture.structure_gain = jitter(s.texture.structure_gain, 0.2);
    s.texture.depth_falloff = jitter(s.texture.depth_falloff, 0.4);
    s.texture.speckle_blur = jitter(s.texture.speckle_blur, 0.35);
    s.curve_period = jitter(s.curve_period, 0.3);
    s.phase = static_cast<int>(r.uniform_int(0, s.vertebra_period - 1));
  }
  return s;
}

inline Dataset build_dataset(const RunConfig& c) {
  Dataset ds;
  auto make = [&](SubjectRole role, int i) {
    const auto spec = subject_spec(c, role, i);
    auto ph = generate_phantom(spec);
    Subject s;
    s.name = std::string(role_name(role)) + "_" + std::to_string(i);
    s.role = role;
    s.volume = std::move(ph.volume);
    s.annotations = std::move(ph.annotations);
    s.reference_spa = analytic_spa(spec);
    return s;
  };
  for (int i = 0; i < c.data.labeled_subjects; ++i) ds.labeled.push_back(make(SubjectRole::Labeled, i));
  for (int i = 0; i < c.data.unlabeled_subjects; ++i) ds.unlabeled.push_back(make(SubjectRole::Unlabeled, i));
  for (int i = 0; i < c.data.test_subjects; ++i) ds.test.push_back(make(SubjectRole::Test, i));

  // Keep annotations only for the randomly chosen labeled slices.
  std::vector<std::pair<std::size_t, int>> pool;
  for (std::size_t i = 0; i < ds.labeled.size(); ++i)
    for (int k = 0; k < ds.labeled[i].volume.size(); ++k) pool.emplace_back(i, k);
  Rng r(derive_seed(c.seed, 0x1abe1ULL));
  r.shuffle(pool);
  std::vector<AnnotationMap> kept(ds.labeled.size());
  for (int j = 0; j < c.data.labeled_slices; ++j) {
    const auto [i, k] = pool[static_cast<std::size_t>(j)];
    kept[i][k] = ds.labeled[i].annotations.at(k);
  }
  for (std::size_t i = 0; i < ds.labeled.size(); ++i) ds.labeled[i].annotations = std::move(kept[i]);
  return ds;
}

inline constexpr std::string_view kManifestHeader = "role,name,volume,annotations,reference_spa";

inline std::string format_angles(const std::vector<double>& a) {
  std::string s;
  for (std::size_t i = 0; i < a.size(); ++i) s += (i ? ";" : "") + format_number(a[i]);
  return s;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (const auto* group : {&ds.labeled, &ds.unlabeled, &ds.test})
    for (const auto& s : *group) {
      const auto vol = s.name + ".vol", csv = s.name + ".csv";
      write_volume(s.volume, dir / vol);
      write_annotations(s.annotations, dir / csv);
      manifest << role_name(s.role) << ',' << s.name << ',' << vol << ',' << csv << ',' << format_angles(s.reference_spa)
               << '\n';
    }
  const auto text = manifest.str();
  detail::write_file(dir / "manifest.csv", std::vector<char>(text.begin(), text.end()));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw IoError("cannot open " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) != kManifestHeader) throw ValidationError("manifest.csv: unexpected header");
  Dataset ds;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 5) throw ValidationError("manifest.csv line " + std::to_string(lineno) + ": expected 5 fields");
    Subject s;
    s.role = parse_role(std::string(detail::trim(f[0])));
    s.name = std::string(detail::trim(f[1]));
    s.volume = read_volume(dir / std::string(detail::trim(f[2])));
    s.annotations = read_annotations(dir / std::string(detail::trim(f[3])), s.volume.width(), s.volume.height());
    std::string angles(detail::trim(f[4]));
    std::istringstream as(angles);
    for (std::string a; std::getline(as, a, ';');)
      s.reference_spa.push_back(detail::parse_double(a, lineno, "reference_spa"));
    (s.role == SubjectRole::Labeled ? ds.labeled : s.role == SubjectRole::Unlabeled ? ds.unlabeled : ds.test)
        .push_back(std::move(s));
  }
  if (ds.labeled.empty()) throw ValidationError("dataset has no labeled subjects");
  return ds;
}

inline std::vector<LabeledSlice> labeled_slices(const Dataset& ds) {
  std::vector<LabeledSlice> out;
  for (const auto& s : ds.labeled)
    for (const auto& [k, a] : s.annotations) out.push_back({&s.volume[k], a});
  return out;
}

// Configured ranges, or ranges fitted on the all-real labeled annotations.
inline PriorConfig effective_prior(const RunConfig& c, const Dataset& ds) {
  if (!c.fit_prior) return c.detector.prior;
  std::vector<SliceAnnotation> sample;
  for (const auto& l : labeled_slices(ds)) sample.push_back(l.annotation);
  return fit_prior_ranges(sample, c.detector.prior);
}

// ---- detector ------------------------------------------------------------

struct DetectorVariant {
  bool ssl = true;
  bool use_prior = true;
  bool use_consistency = true;
};

inline nn::DetectorNet<float> make_detector(const RunConfig& c, std::uint64_t seed) {
  nn::DetectorNet<float> net(c.detector_arch);
  net.init(derive_seed(seed, 0xde1ULL));
  return net;
}

inline nn::OptimizerState make_detector_optimizer(const RunConfig& c, const nn::DetectorNet<float>& net) {
  return nn::OptimizerState(c.scaled(c.detector_opt), net.param_count());
}

// Trains from opt.epoch up to `until_epoch`: supervised epochs before the
// warm-up boundary, then semi-supervised ones when the variant asks for it.
// Splitting a run at the boundary gives the same result as one call.
inline void train_detector_until(const RunConfig& c, const Dataset& ds, const PriorConfig& prior,
                                 nn::DetectorNet<float>& net, nn::OptimizerState& opt, const DetectorVariant& variant,
                                 std::uint64_t seed, int until_epoch, std::ostream* log = nullptr) {
  const int warm = c.scaled(c.detector_schedule.warmup_epochs);
  std::vector<const Volume*> unlabeled;
  for (const auto& s : ds.unlabeled) unlabeled.push_back(&s.volume);
  const auto labeled = labeled_slices(ds);
  auto phase = [&](bool ssl, int end, std::uint64_t tag) {
    if (opt.epoch >= end) return;
    DetectorSslConfig cfg = c.detector;
    cfg.prior = prior;
    cfg.use_prior = variant.use_prior;
    cfg.use_consistency = variant.use_consistency;
    if (!ssl || unlabeled.empty()) cfg.mu = 0;
    DetectorSampler sampler(labeled, cfg.mu > 0 ? unlabeled : std::vector<const Volume*>{}, cfg, c.phantom.width,
                            c.phantom.height, c.detector_arch.d_ds, derive_seed(seed, tag, opt.epoch));
    train_detector(net, opt, sampler, cfg, end - opt.epoch, derive_seed(seed, tag), log);
  };
  phase(false, std::min(until_epoch, warm), 0x5a9ULL);
  phase(variant.ssl, until_epoch, 0x551ULL);
}

inline std::vector<LandmarkSet> detect_landmarks(const nn::DetectorNet<float>& net, const Volume& v) {
  std::vector<LandmarkSet> out;
  out.reserve(static_cast<std::size_t>(v.size()));
  for (const auto& s : v.slices()) out.push_back(decode_argmax(net.forward(s)));
  return out;
}

inline std::vector<SliceAnnotation> truth_list(const Subject& s) {
  std::vector<SliceAnnotation> t;
  for (int k = 0; k < s.volume.size(); ++k) {
    const auto it = s.annotations.find(k);
    if (it == s.annotations.end()) throw ValidationError(s.name + ": slice " + std::to_string(k) + " has no truth");
    t.push_back(it->second);
  }
  return t;
}

inline double evaluate_pck(const nn::DetectorNet<float>& net, const std::vector<Subject>& test, const EvalConfig& e) {
  std::vector<LandmarkSet> pred;
  std::vector<SliceAnnotation> truth;
  for (const auto& s : test) {
    const auto p = detect_landmarks(net, s.volume);
    const auto t = truth_list(s);
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), t.begin(), t.end());
  }
  return compute_pck(pred, truth, e.t_real, e.t_fake);
}

// ---- classifier ----------------------------------------------------------

inline std::vector<PatchSource> labeled_patch_sources(const Dataset& ds) {
  std::vector<PatchSource> out;
  for (const auto& l : labeled_slices(ds))
    for (int s = 0; s < kNumStructures; ++s)
      out.push_back({l.slice, l.annotation.landmarks, static_cast<Structure>(s), l.annotation.labels[s] ? 1 : 0});
  return out;
}

// Unlabeled patches centered where the detector puts the landmarks.
inline std::vector<PatchSource> detected_patch_sources(const std::vector<Subject>& subjects,
                                                       const nn::DetectorNet<float>& net) {
  std::vector<PatchSource> out;
  for (const auto& sub : subjects) {
    const auto marks = detect_landmarks(net, sub.volume);
    for (int k = 0; k < sub.volume.size(); ++k)
      for (int s = 0; s < kNumStructures; ++s) out.push_back({&sub.volume[k], marks[k], static_cast<Structure>(s), -1});
  }
  return out;
}

// Unlabeled patches at true positions with a controlled class mix: every
// fake structure is kept and real ones are subsampled so that a fraction
// `fake_fraction` of the stream is fake. Labels are dropped.
inline std::vector<PatchSource> skewed_patch_sources(const std::vector<Subject>& subjects, double fake_fraction,
                                                     std::uint64_t seed) {
  if (!(fake_fraction > 0.0 && fake_fraction < 1.0)) throw ConfigError("fake_fraction must be in (0,1)");
  std::vector<PatchSource> fake, real;
  for (const auto& sub : subjects)
    for (const auto& [k, a] : sub.annotations)
      for (int s = 0; s < kNumStructures; ++s)
        (a.labels[s] ? real : fake).push_back({&sub.volume[k], a.landmarks, static_cast<Structure>(s), -1});
  Rng r(seed);
  r.shuffle(real);
  const auto keep = static_cast<std::size_t>(std::lround(fake.size() * (1.0 - fake_fraction) / fake_fraction));
  if (keep < real.size()) real.resize(keep);
  fake.insert(fake.end(), real.begin(), real.end());
  return fake;
}

inline std::vector<PatchSource> of_structure(const std::vector<PatchSource>& v, int s) {
  std::vector<PatchSource> out;
  for (const auto& p : v)
    if (static_cast<int>(p.structure) == s) out.push_back(p);
  return out;
}

// One shared network, or one per structure type when configured.
inline ClassifierBank train_classifier_bank(const RunConfig& c, const std::vector<PatchSource>& labeled,
                                            const std::vector<PatchSource>& unlabeled, bool ssl, std::uint64_t seed,
                                            std::ostream* log = nullptr,
                                            std::vector<nn::OptimizerState>* states = nullptr) {
  ClassifierBank bank;
  const int n_nets = c.per_type_classifier ? kNumStructures : 1;
  const int total = c.scaled(c.classifier_schedule.epochs);
  const int warm = std::min(total, c.scaled(c.classifier_schedule.warmup_epochs));
  for (int i = 0; i < n_nets; ++i) {
    const auto lab = n_nets == 1 ? labeled : of_structure(labeled, i);
    const auto unl = n_nets == 1 ? unlabeled : of_structure(unlabeled, i);
    nn::ClassifierNet<float> net(c.classifier_arch);
    net.init(derive_seed(seed, 0xc1eULL, static_cast<std::uint64_t>(i)));
    nn::OptimizerState opt(c.scaled(c.classifier_opt), net.param_count());
    auto phase = [&](bool use_unlabeled, int end, std::uint64_t tag) {
      if (opt.epoch >= end) return;
      ClassifierSslConfig cfg = c.classifier;
      if (!use_unlabeled || unl.empty()) cfg.mu = 0;
      ClassifierSampler sampler(lab, cfg.mu > 0 ? unl : std::vector<PatchSource>{}, c.pipeline.patches, cfg,
                                derive_seed(seed, tag, static_cast<std::uint64_t>(i)));
      train_classifier(net, opt, sampler, cfg, end - opt.epoch, derive_seed(seed, tag, static_cast<std::uint64_t>(i), 1),
                       log);
    };
    phase(false, warm, 0xc5aULL);
    phase(ssl, total, 0xc55ULL);
    bank.nets.push_back(std::move(net));
    if (states) states->push_back(std::move(opt));
  }
  return bank;
}

// Classification alone: patches at the true positions of every test slice.
inline DetectionMetrics evaluate_classifier(const ClassifierBank& bank, const std::vector<Subject>& test,
                                            const RunConfig& c) {
  std::vector<DetectionResult> results;
  std::vector<SliceAnnotation> truth;
  for (const auto& sub : test)
    for (const auto& [k, a] : sub.annotations) {
      DetectionResult r;
      r.landmarks = a.landmarks;
      for (int s = 0; s < kNumStructures; ++s) {
        const auto patch = structure_patch(sub.volume[k], a.landmarks, static_cast<Structure>(s), c.pipeline.patches, 0, false);
        const auto p = bank.for_structure(s).forward(patch);
        r.confidences[s] = p[1];
        r.predicted_labels[s] = p[1] >= c.pipeline.decision_threshold;
      }
      results.push_back(r);
      truth.push_back(a);
    }
  return compute_detection_metrics(results, truth, c.eval.t_real);
}

inline DetectionMetrics evaluate_pipeline(const nn::DetectorNet<float>& det, const ClassifierBank& bank,
                                          const std::vector<Subject>& test, const RunConfig& c) {
  std::vector<DetectionResult> results;
  std::vector<SliceAnnotation> truth;
  for (const auto& sub : test) {
    const auto r = detect_volume(det, bank, sub.volume, c.pipeline);
    const auto t = truth_list(sub);
    results.insert(results.end(), r.begin(), r.end());
    truth.insert(truth.end(), t.begin(), t.end());
  }
  return compute_detection_metrics(results, truth, c.eval.t_real);
}

// Mean F1 over the three structure types, in percent.
inline double mean_f1(const DetectionMetrics& m) {
  double s = 0.0;
  for (const auto& c : m.per_structure) s += c.f1();
  return 100.0 * s / kNumStructures;
}

inline double pooled_recall(const DetectionMetrics& m) {
  ConfusionCounts all;
  for (const auto& c : m.per_structure) all += c;
  return 100.0 * all.recall();
}

// ---- ablations -----------------------------------------------------------

struct NamedVariant {
  std::string name;
  DetectorVariant variant;
};

inline std::vector<NamedVariant> detector_variants(const std::string& component) {
  const NamedVariant none{"neither", {true, false, false}}, prior{"prior", {true, true, false}},
      cons{"consistency", {true, false, true}}, both{"prior+consistency", {true, true, true}};
  if (component == "prior") return {{"prior_off", cons.variant}, {"prior_on", both.variant}};
  if (component == "consistency") return {{"consistency_off", prior.variant}, {"consistency_on", both.variant}};
  if (component == "detector") return {none, prior, cons, both};
  throw ConfigError("unknown detector ablation component '" + component + "'");
}

struct AblationRow {
  std::string variant;
  int rep = 0;
  double value = 0.0;
};

// The supervised warm-up is trained once per repetition and shared by every
// variant; each variant then continues from a copy of it.
inline std::vector<AblationRow> run_detector_ablation(const RunConfig& c, const Dataset& ds,
                                                      const std::vector<NamedVariant>& variants, int reps,
                                                      std::ostream* progress = nullptr) {
  const auto prior = effective_prior(c, ds);
  const int total = c.scaled(c.detector_schedule.epochs);
  const int warm = std::min(total, c.scaled(c.detector_schedule.warmup_epochs));
  std::vector<AblationRow> rows;
  for (int rep = 0; rep < reps; ++rep) {
    const auto seed = derive_seed(c.seed, 0xab1ULL, static_cast<std::uint64_t>(rep));
    auto net = make_detector(c, seed);
    auto opt = make_detector_optimizer(c, net);
    train_detector_until(c, ds, prior, net, opt, {false, false, false}, seed, warm);
    if (progress) *progress << "rep " << rep << " warm-up pck " << evaluate_pck(net, ds.test, c.eval) << std::endl;
    for (const auto& v : variants) {
      auto n2 = net;
      auto o2 = opt;
      train_detector_until(c, ds, prior, n2, o2, v.variant, seed, total);
      rows.push_back({v.name, rep, evaluate_pck(n2, ds.test, c.eval)});
      if (progress) *progress << "rep " << rep << ' ' << v.name << " pck " << rows.back().value << std::endl;
    }
  }
  return rows;
}

inline std::vector<AblationRow> run_rebalance_ablation(const RunConfig& c, const Dataset& ds, double fake_fraction,
                                                       int reps, std::vector<DetectionMetrics>* metrics = nullptr,
                                                       std::ostream* progress = nullptr) {
  const auto labeled = labeled_patch_sources(ds);
  std::vector<AblationRow> rows;
  for (int rep = 0; rep < reps; ++rep) {
    const auto seed = derive_seed(c.seed, 0xab2ULL, static_cast<std::uint64_t>(rep));
    const auto stream = skewed_patch_sources(ds.unlabeled, fake_fraction, derive_seed(seed, 0x5c3ULL));
    for (bool rebalance : {false, true}) {
      RunConfig rc = c;
      rc.classifier.rebalance = rebalance;
      const auto bank = train_classifier_bank(rc, labeled, stream, true, seed);
      const auto m = evaluate_classifier(bank, ds.test, rc);
      rows.push_back({rebalance ? "rebalance_on" : "rebalance_off", rep, pooled_recall(m)});
      if (metrics) metrics->push_back(m);
      if (progress) *progress << "rep " << rep << ' ' << rows.back().variant << " recall " << rows.back().value << std::endl;
    }
  }
  return rows;
}

// Full pipeline (detector + classifier) with and without the unlabeled data,
// same labeled slices, same number of epochs.
inline std::vector<AblationRow> run_ssl_benefit(const RunConfig& c, const Dataset& ds, int reps,
                                                std::vector<DetectionMetrics>* metrics = nullptr,
                                                std::ostream* progress = nullptr) {
  const auto prior = effective_prior(c, ds);
  const int total = c.scaled(c.detector_schedule.epochs);
  const int warm = std::min(total, c.scaled(c.detector_schedule.warmup_epochs));
  const auto labeled = labeled_patch_sources(ds);
  std::vector<AblationRow> rows;
  for (int rep = 0; rep < reps; ++rep) {
    const auto seed = derive_seed(c.seed, 0xab3ULL, static_cast<std::uint64_t>(rep));
    auto net = make_detector(c, seed);
    auto opt = make_detector_optimizer(c, net);
    train_detector_until(c, ds, prior, net, opt, {false, false, false}, seed, warm);
    for (bool ssl : {false, true}) {
      auto n2 = net;
      auto o2 = opt;
      train_detector_until(c, ds, prior, n2, o2, {ssl, true, true}, seed, total);
      const auto unl = ssl ? detected_patch_sources(ds.unlabeled, n2) : std::vector<PatchSource>{};
      const auto bank = train_classifier_bank(c, labeled, unl, ssl, seed);
      const auto m = evaluate_pipeline(n2, bank, ds.test, c);
      rows.push_back({ssl ? "ssl" : "supervised", rep, mean_f1(m)});
      if (metrics) metrics->push_back(m);
      if (progress)
        *progress << "rep " << rep << ' ' << rows.back().variant << " pck " << evaluate_pck(n2, ds.test, c.eval)
                  << " mean_f1 " << rows.back().value << std::endl;
    }
  }
  return rows;
}

inline double variant_mean(const std::vector<AblationRow>& rows, const std::string& variant) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.variant == variant) s += r.value, ++n;
  if (n == 0) throw ValidationError("no rows for variant " + variant);
  return s / n;
}

inline std::string format_ablation_csv(const std::vector<AblationRow>& rows, const std::string& metric) {
  std::ostringstream os;
  os << "variant,rep," << metric << '\n';
  for (const auto& r : rows) os << r.variant << ',' << r.rep << ',' << format_number(r.value) << '\n';
  return os.str();
}

inline std::string format_ablation_summary(const std::vector<AblationRow>& rows, const std::string& metric) {
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  std::ostringstream os;
  os << "variant,mean_" << metric << '\n';
  for (const auto& v : order) os << v << ',' << detail::percent(variant_mean(rows, v) / 100.0) << '\n';
  return os.str();
}

}  // namespace usspine

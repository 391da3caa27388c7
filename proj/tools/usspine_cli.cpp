#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "usspine/usspine.hpp"

namespace fs = std::filesystem;
using namespace usspine;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  detail::write_file(path, std::vector<char>(text.begin(), text.end()));
}

std::string read_text(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

RunConfig config_or_default(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

std::vector<DetectionResult> aligned_detections(const DetectionMap& m, int n_slices) {
  std::vector<DetectionResult> out;
  for (int k = 0; k < n_slices; ++k) {
    const auto it = m.find(k);
    if (it == m.end()) throw ValidationError("detections are missing slice " + std::to_string(k));
    out.push_back(it->second);
  }
  if (static_cast<int>(m.size()) != n_slices) throw ValidationError("detections list slices outside the volume");
  return out;
}

DetectorVariant parse_variant(const std::string& v) {
  if (v == "supervised") return {false, false, false};
  if (v == "neither") return {true, false, false};
  if (v == "prior") return {true, true, false};
  if (v == "consistency") return {true, false, true};
  if (v == "full") return {true, true, true};
  throw ConfigError("--variant must be one of supervised, neither, prior, consistency, full");
}

std::vector<double> read_angles(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::vector<double> out;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t == "curve,angle_deg") continue;
    const auto f = detail::split_csv(t);
    if (f.size() != 2) throw ParseError(lineno, "expected 'curve,angle_deg'");
    out.push_back(detail::parse_double(f[1], lineno, "angle_deg"));
  }
  return out;
}

ClassifierBank load_bank(const fs::path& dir) {
  ClassifierBank bank;
  for (int i = 0; i < kNumStructures; ++i) {
    const auto p = dir / ("classifier_" + std::to_string(i) + ".ckpt");
    if (!fs::exists(p)) break;
    bank.nets.push_back(nn::classifier_from_checkpoint(nn::load_checkpoint(p)));
  }
  if (bank.nets.size() != 1 && bank.nets.size() != static_cast<std::size_t>(kNumStructures))
    throw ValidationError(dir.string() + ": expected classifier_0.ckpt (shared) or classifier_0..2.ckpt");
  return bank;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised vertebral landmark detection and classification on ultrasound volumes"};
  app.require_subcommand(1, 1);

  std::string config, out, data, detector_path, models, volume_path, pred, truth, reference, variant = "full",
                                                                                 component;
  int reps = 3;
  double fake_fraction = 0.95;
  bool supervised = false;

  auto* phantom = app.add_subcommand("phantom", "Generate a phantom dataset");
  phantom->add_option("--config", config, "Run configuration (INI)")->required();
  phantom->add_option("--out", out, "Output directory")->required();

  auto* train_det = app.add_subcommand("train-detector", "Train the landmark detector");
  train_det->add_option("--config", config)->required();
  train_det->add_option("--data", data, "Dataset directory written by 'phantom'")->required();
  train_det->add_option("--out", out)->required();
  train_det->add_option("--variant", variant, "supervised, neither, prior, consistency or full");

  auto* train_cls = app.add_subcommand("train-classifier", "Train the real/fake classifier");
  train_cls->add_option("--config", config)->required();
  train_cls->add_option("--data", data)->required();
  train_cls->add_option("--detector", detector_path, "Detector checkpoint used to place unlabeled patches")->required();
  train_cls->add_option("--out", out)->required();
  train_cls->add_flag("--supervised", supervised, "Ignore the unlabeled subjects");

  auto* infer = app.add_subcommand("infer", "Detect and classify every slice of a volume");
  infer->add_option("--config", config)->required();
  infer->add_option("--models", models, "Directory holding detector.ckpt and classifier_*.ckpt")->required();
  infer->add_option("--volume", volume_path)->required();
  infer->add_option("--out", out, "Detections CSV")->required();

  auto* eval = app.add_subcommand("eval", "Score detections against ground truth");
  eval->add_option("--config", config);
  eval->add_option("--pred", pred)->required();
  eval->add_option("--truth", truth)->required();
  eval->add_option("--out", out, "Metrics CSV");

  auto* spa = app.add_subcommand("spa", "Coronal projection and spinous process angle");
  spa->add_option("--config", config);
  spa->add_option("--volume", volume_path)->required();
  spa->add_option("--pred", pred)->required();
  spa->add_option("--out", out, "Output directory")->required();
  spa->add_option("--reference", reference, "Reference angles CSV (curve,angle_deg)");

  auto* ablate = app.add_subcommand("ablate", "Compare training variants");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--data", data, "Dataset directory; generated from the config when omitted");
  ablate->add_option("--component", component, "prior, consistency, detector, rebalance or ssl")->required();
  ablate->add_option("--out", out)->required();
  ablate->add_option("--reps", reps)->check(CLI::PositiveNumber);
  ablate->add_option("--fake-fraction", fake_fraction, "Fake share of the unlabeled stream (rebalance)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*phantom) {
      const auto cfg = load_config(config);
      const auto ds = build_dataset(cfg);
      save_dataset(ds, out);
      write_text(fs::path(out) / "config.ini", format_config(cfg));
    } else if (*train_det) {
      const auto cfg = load_config(config);
      const auto ds = load_dataset(data);
      auto net = make_detector(cfg, cfg.seed);
      auto opt = make_detector_optimizer(cfg, net);
      std::ostringstream log;
      log << kDetectorLogHeader << '\n';
      train_detector_until(cfg, ds, effective_prior(cfg, ds), net, opt, parse_variant(variant), cfg.seed,
                           cfg.scaled(cfg.detector_schedule.epochs), &log);
      fs::create_directories(out);
      nn::save_checkpoint(nn::make_checkpoint(net, opt), fs::path(out) / "detector.ckpt");
      write_text(fs::path(out) / "detector_log.csv", log.str());
      if (!ds.test.empty())
        write_text(fs::path(out) / "detector_pck.csv",
                   "pck\n" + detail::percent(evaluate_pck(net, ds.test, cfg.eval) / 100.0) + "\n");
    } else if (*train_cls) {
      const auto cfg = load_config(config);
      const auto ds = load_dataset(data);
      const auto det = nn::detector_from_checkpoint(nn::load_checkpoint(detector_path));
      const auto unl = supervised ? std::vector<PatchSource>{} : detected_patch_sources(ds.unlabeled, det);
      std::ostringstream log;
      log << kClassifierLogHeader << '\n';
      std::vector<nn::OptimizerState> states;
      const auto bank = train_classifier_bank(cfg, labeled_patch_sources(ds), unl, !supervised, cfg.seed, &log, &states);
      fs::create_directories(out);
      for (std::size_t i = 0; i < bank.nets.size(); ++i)
        nn::save_checkpoint(nn::make_checkpoint(bank.nets[i], states[i]),
                            fs::path(out) / ("classifier_" + std::to_string(i) + ".ckpt"));
      write_text(fs::path(out) / "classifier_log.csv", log.str());
    } else if (*infer) {
      const auto cfg = load_config(config);
      const auto det = nn::detector_from_checkpoint(nn::load_checkpoint(fs::path(models) / "detector.ckpt"));
      const auto bank = load_bank(models);
      const auto vol = read_volume(volume_path);
      if (vol.width() != det.arch().in_width || vol.height() != det.arch().in_height)
        throw ValidationError("volume slice size does not match the detector input");
      write_text(out, format_detections(detect_volume(det, bank, vol, cfg.pipeline)));
    } else if (*eval) {
      const auto cfg = config_or_default(config);
      const auto p = read_detections(pred);
      const auto t = read_annotations(truth);
      std::vector<DetectionResult> results;
      std::vector<SliceAnnotation> truths;
      std::vector<LandmarkSet> marks;
      for (const auto& [k, a] : t) {
        const auto it = p.find(k);
        if (it == p.end()) throw ValidationError("predictions are missing slice " + std::to_string(k));
        results.push_back(it->second);
        marks.push_back(it->second.landmarks);
        truths.push_back(a);
      }
      const auto m = compute_detection_metrics(results, truths, cfg.eval.t_real);
      const double pck = compute_pck(marks, truths, cfg.eval.t_real, cfg.eval.t_fake);
      std::cout << format_metrics_table(m) << "PCK " << detail::percent(pck / 100.0) << '\n';
      if (!out.empty()) write_text(out, format_metrics_csv(m) + "pck," + detail::percent(pck / 100.0) + "\n");
    } else if (*spa) {
      const auto cfg = config_or_default(config);
      const auto vol = read_volume(volume_path);
      const auto dets = aligned_detections(read_detections(pred), vol.size());
      const fs::path dir(out);
      fs::create_directories(dir);
      write_pgm(project_coronal(vol, dets, cfg.projection), dir / "projection.pgm");
      const auto angles = measure_spa(sp_curve(dets, vol.spacing_z(), vol.spacing_xy()), cfg.spa);
      write_text(dir / "spa.csv", format_spa_csv(angles));
      if (!reference.empty()) {
        const auto c = compare_spa(angles, read_angles(reference));
        write_text(dir / "spa_comparison.csv", "count,mean_abs_diff,sd_abs_diff,correlation\n" + std::to_string(c.count) +
                                                   ',' + format_number(c.mean_abs_diff) + ',' +
                                                   format_number(c.sd_abs_diff) + ',' + format_number(c.correlation) + '\n');
      }
    } else if (*ablate) {
      const auto cfg = load_config(config);
      const auto ds = data.empty() ? build_dataset(cfg) : load_dataset(data);
      const fs::path dir(out);
      fs::create_directories(dir);
      std::vector<AblationRow> rows;
      std::string metric;
      if (component == "rebalance" || component == "ssl") {
        std::vector<DetectionMetrics> ms;
        rows = component == "rebalance" ? run_rebalance_ablation(cfg, ds, fake_fraction, reps, &ms, &std::cerr)
                                        : run_ssl_benefit(cfg, ds, reps, &ms, &std::cerr);
        metric = component == "rebalance" ? "real_recall" : "mean_f1";
        // Pool counts over repetitions, one metric table per variant.
        std::map<std::string, DetectionMetrics> pooled;
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (int s = 0; s < kNumStructures; ++s) pooled[rows[i].variant].per_structure[s] += ms[i].per_structure[s];
        for (const auto& [name, m] : pooled) write_text(dir / ("metrics_" + name + ".csv"), format_metrics_csv(m));
      } else {
        rows = run_detector_ablation(cfg, ds, detector_variants(component), reps, &std::cerr);
        metric = "pck";
      }
      write_text(dir / "ablation.csv", format_ablation_csv(rows, metric));
      const auto summary = format_ablation_summary(rows, metric);
      write_text(dir / "summary.csv", summary);
      std::cout << summary;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

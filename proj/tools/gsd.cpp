// gsd: command-line harness for the disentangled-head calibration library.
//
//   gsd gen        --config FILE [--seed N] --out DIR
//   gsd train      --config FILE --data FILE [--seed N] --out DIR
//   gsd calibrate  --model FILE --data FILE [--method grid|optimize] [--error E] --out DIR
//   gsd evaluate   --model FILE [--calib FILE] --data FILE... [--out DIR]
//   gsd experiment --config FILE [--seed N] --out DIR
//
// Exit status: 0 success, 1 runtime failure, 2 usage error or missing input file.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gsd/calibration.hpp"
#include "gsd/checkpoint.hpp"
#include "gsd/data.hpp"
#include "gsd/experiment.hpp"
#include "gsd/metrics.hpp"
#include "gsd/model.hpp"
#include "gsd/train.hpp"

namespace fs = std::filesystem;
using namespace gsd;

namespace {

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw MissingInput("no such file: " + path);
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> bins;
  std::optional<std::string> method;
  std::optional<double> error;
  std::optional<std::size_t> beta_epochs;
};

ExperimentSpec load_spec(const Common& c) {
  ExperimentSpec s;
  if (!c.config.empty()) {
    require_file(c.config);
    s = parse_experiment_spec(io::read_text(c.config));
  }
  if (c.seed) s.seed = *c.seed;
  if (c.bins) s.bins.num_bins = *c.bins;
  if (c.method) s.method = parse_calibration_method(*c.method);
  if (c.error) s.error = *c.error;
  if (c.beta_epochs) s.descent.epochs = *c.beta_epochs;
  s.validate();
  return s;
}

std::string out_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw Error("--out is required");
  fs::create_directories(dir);
}

// Every writer re-reads its output so a zero exit status means the file parses.
void write_batch(const EmbeddingBatch& b, const std::string& path) {
  write_embeddings(b, path);
  if (!bitwise_equal(read_embeddings(path), b)) throw Error("read-back mismatch: " + path);
}

void write_checkpoint(const Model& m, const std::string& path) {
  write_model(m, path);
  if (!(read_model(path) == m)) throw Error("read-back mismatch: " + path);
}

void write_calibration(const CalibrationConfig& c, const std::string& path) {
  write_calibration_config(c, path);
  if (!(read_calibration_config(path) == c)) throw Error("read-back mismatch: " + path);
}

void write_metrics(const MetricsReport& r, const std::string& path) {
  io::write_text(path, to_tsv(r));
  parse_metrics_tsv(io::read_text(path));
}

void write_table(const std::string& text, const std::string& path) {
  io::write_text(path, text);
  if (io::read_text(path) != text) throw Error("read-back mismatch: " + path);
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

// ---------------------------------------------------------------------------

int cmd_gen(const Common& c) {
  const auto s = load_spec(c);
  ensure_dir(c.out);
  const auto d = make_experiment_data(s, s.seed);
  write_batch(d.train, out_path(c.out, "train.gsde"));
  write_batch(d.val, out_path(c.out, "val.gsde"));
  write_batch(d.test, out_path(c.out, "test.gsde"));
  for (std::size_t l = 0; l < d.shifted.size(); ++l) write_batch(d.shifted[l], out_path(c.out, "test_" + d.names[l + 1] + ".gsde"));
  std::cout << "wrote " << 3 + d.shifted.size() << " datasets to " << c.out << '\n';
  return 0;
}

TrainingTable train_one(const ExperimentSpec& s, HeadKind head, const EmbeddingBatch& data,
                        const std::vector<EmbeddingBatch>& tracked, const std::vector<std::string>& names, Model& out) {
  auto shape = s.model_shape(head);
  shape.input_dim = data.dim;
  shape.num_classes = data.num_classes;
  auto r = train(init_model(shape, s.seed), data, s.train_config(s.seed), tracked, s.bins);
  if (r.beta_went_negative) std::cerr << "note: beta became negative during training\n";
  out = r.model;
  return track_training_statistics(r.history, names);
}

int cmd_train(const Common& c, const std::string& data_path) {
  require_file(data_path);
  const auto s = load_spec(c);
  const auto data = load_embeddings(data_path);
  if (data.empty()) throw Error("training data is empty: " + data_path);
  ensure_dir(c.out);

  // statistics are tracked on the training data and a noise-shifted copy at the top severity
  ShiftSpec shift = s.shift_spec(s.seed);
  std::vector<EmbeddingBatch> tracked{data};
  std::vector<std::string> names{"data"};
  if (!shift.severity_levels.empty()) {
    tracked.push_back(apply_shift(data, shift, shift.severity_levels.size() - 1));
    names.push_back(severity_name(shift.family, shift.severity_levels.back()));
  }
  Model van, gsd;
  const auto tv = train_one(s, HeadKind::vanilla, data, tracked, names, van);
  const auto tg = train_one(s, HeadKind::gsd, data, tracked, names, gsd);
  write_checkpoint(van, out_path(c.out, "vanilla.gsdm"));
  write_checkpoint(gsd, out_path(c.out, "gsd.gsdm"));
  write_table(history_to_tsv(tv), out_path(c.out, "history_vanilla.tsv"));
  write_table(history_to_tsv(tg), out_path(c.out, "history_gsd.tsv"));
  write_table(std::string(kCorrelationHeader) + correlations_to_tsv(tv, "vanilla") + correlations_to_tsv(tg, "gsd"),
              out_path(c.out, "correlations.tsv"));
  std::cout << "trained vanilla and gsd heads for " << s.train.epochs << " epochs; alpha=" << io::format_double(gsd.head.alpha)
            << " beta=" << io::format_double(gsd.head.beta) << '\n';
  return 0;
}

std::string stage_row(const std::string& stage, const MetricsReport& r) {
  using io::format_double;
  return stage + '\t' + format_double(r.accuracy) + '\t' + format_double(r.ece) + '\t' + format_double(r.nll) + '\t' +
         format_double(r.brier) + '\t' + format_double(r.mean_entropy) + '\n';
}

int cmd_calibrate(const Common& c, const std::string& model_path, const std::string& data_path) {
  require_file(model_path);
  require_file(data_path);
  const auto s = load_spec(c);
  const auto m = read_model(model_path);
  const auto val = load_embeddings(data_path);
  ensure_dir(c.out);
  const std::string header = "stage\taccuracy\tece\tnll\tbrier\tmean_entropy\n";
  const auto before = evaluate_probabilities(predict_probabilities(m, val), val.labels, s.bins);
  std::string table = header + stage_row("uncalibrated", before);

  if (m.head_kind == HeadKind::vanilla) {
    auto t = calibrate_temperature(m, val, s.temperature);
    t.error = s.error;
    write_calibration(t, out_path(c.out, "calib_temperature.cfg"));
    table += stage_row("temperature", evaluate_probabilities(calibrated_probabilities(m, val, t), val.labels, s.bins));
    std::cout << "T=" << io::format_double(t.temperature) << '\n';
  } else {
    TwoStepOptions opt;
    opt.method = s.method;
    opt.error = s.error;
    opt.bins = s.bins;
    opt.descent = s.descent;
    opt.descent.seed = s.seed;
    const auto two = calibrate_two_step(m, val, opt);
    if (two.excluded_candidates > 0)
      std::cerr << "note: " << two.excluded_candidates << " beta' candidates excluded (nonpositive effective norm)\n";
    write_calibration(two.affine, out_path(c.out, "calib_affine.cfg"));
    write_calibration(two.nonlinear, out_path(c.out, "calib_nonlinear.cfg"));
    table += stage_row("affine", evaluate_probabilities(calibrated_probabilities(m, val, two.affine), val.labels, s.bins));
    table += stage_row("nonlinear", evaluate_probabilities(calibrated_probabilities(m, val, two.nonlinear), val.labels, s.bins));
    std::cout << "beta'=" << io::format_double(two.nonlinear.beta_prime) << " c=" << io::format_double(two.nonlinear.c)
              << " mu_x=" << io::format_double(two.nonlinear.mu_x) << " sigma_x=" << io::format_double(two.nonlinear.sigma_x)
              << '\n';
  }
  write_table(table, out_path(c.out, "calibration.tsv"));
  std::cout << table;
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_path, const std::string& calib_path,
                 const std::vector<std::string>& data_paths) {
  require_file(model_path);
  if (!calib_path.empty()) require_file(calib_path);
  for (const auto& p : data_paths) require_file(p);
  BinningSpec bins;
  if (c.bins) bins.num_bins = *c.bins;
  const auto m = read_model(model_path);
  std::optional<CalibrationConfig> calib;
  if (!calib_path.empty()) calib = read_calibration_config(calib_path);
  if (!c.out.empty()) ensure_dir(c.out);

  std::vector<Vector> norms;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < data_paths.size(); ++i) {
    const auto b = load_embeddings(data_paths[i]);
    const Matrix enc = encode_batch(m, b);
    const Matrix logits = calib ? calibrated_logits(m, enc, *calib) : logits_matrix(m, enc);
    const auto rep = evaluate_probabilities(softmax_rows(logits), b.labels, bins);
    norms.push_back(row_norms(enc));
    names.push_back(stem_of(data_paths[i]));
    if (c.out.empty()) std::cout << "# " << data_paths[i] << '\n' << to_tsv(rep) << '\n';
    else write_metrics(rep, out_path(c.out, "metrics_" + std::to_string(i) + "_" + names.back() + ".tsv"));
  }
  if (data_paths.size() >= 2) {
    // first dataset is in-distribution, the rest are scored against it
    std::string det = "ind\tdataset\tauroc_norm\tmean_norm_ind\tmean_norm_dataset\n";
    for (std::size_t i = 1; i < norms.size(); ++i) {
      det += names[0] + '\t' + names[i] + '\t' + io::format_double(auroc(norms[0], norms[i])) + '\t' +
             io::format_double(detail::mean_of(norms[0])) + '\t' + io::format_double(detail::mean_of(norms[i])) + '\n';
      const auto hist = norm_histogram_tsv(norms[0], norms[i]);
      if (c.out.empty()) std::cout << "# norm histogram " << names[0] << " vs " << names[i] << '\n' << hist << '\n';
      else write_table(hist, out_path(c.out, "norm_histogram_" + std::to_string(i) + "_" + names[i] + ".tsv"));
    }
    if (c.out.empty()) std::cout << "# detection\n" << det;
    else write_table(det, out_path(c.out, "detection.tsv"));
  }
  return 0;
}

int cmd_experiment(const Common& c) {
  const auto s = load_spec(c);
  ensure_dir(c.out);
  write_table(to_text(s), out_path(c.out, "spec.cfg"));
  const auto r = run_trial(s, s.seed);

  write_checkpoint(r.vanilla.model, out_path(c.out, "vanilla.gsdm"));
  write_checkpoint(r.gsd.model, out_path(c.out, "gsd.gsdm"));
  write_calibration(r.temperature, out_path(c.out, "calib_temperature.cfg"));
  write_calibration(r.affine, out_path(c.out, "calib_affine.cfg"));
  write_calibration(r.nonlinear, out_path(c.out, "calib_nonlinear.cfg"));

  if (s.track_statistics) {
    std::vector<std::string> tracked{r.dataset_names.front()};
    if (r.dataset_names.size() > 1) tracked.push_back(r.dataset_names.back());
    const auto tv = track_training_statistics(r.vanilla.history, tracked);
    const auto tg = track_training_statistics(r.gsd.history, tracked);
    write_table(history_to_tsv(tv), out_path(c.out, "history_vanilla.tsv"));
    write_table(history_to_tsv(tg), out_path(c.out, "history_gsd.tsv"));
    write_table(std::string(kCorrelationHeader) + correlations_to_tsv(tv, "vanilla") + correlations_to_tsv(tg, "gsd"),
                out_path(c.out, "correlations.tsv"));
  }

  const fs::path metrics_dir = fs::path(c.out) / "metrics";
  fs::create_directories(metrics_dir);
  for (std::size_t m = 0; m < kNumMethods; ++m)
    for (std::size_t d = 0; d < r.dataset_names.size(); ++d)
      write_metrics(r.reports[m][d], (metrics_dir / (std::string(kMethodNames[m]) + "_" + r.dataset_names[d] + ".tsv")).string());
  for (std::size_t d = 0; d < r.dataset_names.size(); ++d)
    write_metrics(r.gsd_uncalibrated[d], (metrics_dir / ("gsd_uncalibrated_" + r.dataset_names[d] + ".tsv")).string());

  const auto summary = summary_to_tsv(r);
  write_table(summary, out_path(c.out, "summary.tsv"));
  write_table(detection_to_tsv(r, s.resolved_severities()), out_path(c.out, "detection.tsv"));
  write_table(preservation_to_tsv(r), out_path(c.out, "preservation.tsv"));
  if (!r.gsd_worst_norms.empty()) write_table(norm_histogram_tsv(r.gsd_clean_norms, r.gsd_worst_norms), out_path(c.out, "norm_histogram.tsv"));

  if (s.sweep.enabled) {
    const auto sw = run_sweep(s, s.seed);
    write_table(sweep_points_to_tsv(sw), out_path(c.out, "sweep.tsv"));
    write_table(sweep_fits_to_tsv(sw), out_path(c.out, "sweep_fits.tsv"));
  }
  std::cout << summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Geometric sensitivity decomposition: training, calibration and evaluation on synthetic shifted data"};
  app.require_subcommand(1);
  Common c;
  std::string data_path, model_path, calib_path;
  std::vector<std::string> data_paths;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", c.config, "key=value experiment config (see CONFIG.md)");
    sub->add_option("--seed", c.seed, "override the config seed");
    sub->add_option("--bins", c.bins, "number of equal-width ECE bins (default 15)");
  };

  auto* gen = app.add_subcommand("gen", "generate train/val/test/shifted GSDE datasets");
  add_common(gen, true);
  gen->add_option("--out", c.out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train vanilla and disentangled heads on one dataset");
  add_common(tr, true);
  tr->add_option("--data", data_path, "training data (.gsde or .csv)")->required();
  tr->add_option("--out", c.out, "output directory")->required();

  auto* cal = app.add_subcommand("calibrate", "two-step calibration (gsd head) or temperature scaling (vanilla head)");
  add_common(cal, true);
  cal->add_option("--model", model_path, "checkpoint (.gsdm)")->required();
  cal->add_option("--data", data_path, "in-distribution validation data")->required();
  cal->add_option("--method", c.method, "beta' tuning: grid (ECE grid search, default) or optimize (NLL descent)")
      ->check(CLI::IsMember({"grid", "optimize"}));
  cal->add_option("--error", c.error, "nonlinear-map error at mu_x - sigma_x (default 0.1)");
  cal->add_option("--beta-epochs", c.beta_epochs, "epochs of NLL descent for --method optimize (default 10)");
  cal->add_option("--out", c.out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "metrics per dataset; norm AUROC and histograms against the first dataset");
  ev->add_option("--bins", c.bins, "number of equal-width ECE bins (default 15)");
  ev->add_option("--model", model_path, "checkpoint (.gsdm)")->required();
  ev->add_option("--calib", calib_path, "calibration config; omitted: trained head as is");
  ev->add_option("--data", data_paths, "datasets; the first is treated as in-distribution")->required();
  ev->add_option("--out", c.out, "output directory (default: print to stdout)");

  auto* ex = app.add_subcommand("experiment", "full run: train, calibrate, evaluate all severities, alpha/beta sweep");
  add_common(ex, true);
  ex->add_option("--method", c.method, "beta' tuning: grid or optimize")->check(CLI::IsMember({"grid", "optimize"}));
  ex->add_option("--error", c.error, "nonlinear-map error at mu_x - sigma_x (default 0.1)");
  ex->add_option("--out", c.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen(c);
    if (*tr) return cmd_train(c, data_path);
    if (*cal) return cmd_calibrate(c, model_path, data_path);
    if (*ev) return cmd_evaluate(c, model_path, calib_path, data_paths);
    if (*ex) return cmd_experiment(c);
  } catch (const MissingInput& e) {
    std::cerr << "gsd: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "gsd: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>
#include <vector>

#include "gsd/experiment.hpp"

using namespace gsd;

namespace {

ExperimentSpec small_spec() {
  ExperimentSpec s;
  s.seed = 3;
  s.train_per_class = 100;
  s.val_per_class = 50;
  s.test_per_class = 50;
  s.shape.hidden_dim = 8;
  s.train.epochs = 4;
  s.sweep.alphas = {1, 2};
  s.sweep.betas = {0, 1, 2};
  s.sweep.epochs = 2;
  s.sweep.train_per_class = 20;
  return s;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(ExperimentConfig, TextRoundTrip) {
  auto s = small_spec();
  s.severities = {0.25, 1.0};
  s.method = CalibrationMethod::optimize;
  s.train.schedule = Schedule::step;
  s.track_statistics = false;
  const auto text = to_text(s);
  const auto back = parse_experiment_spec(text);
  EXPECT_EQ(to_text(back), text);
  EXPECT_EQ(back.severities, s.severities);
  EXPECT_EQ(back.method, CalibrationMethod::optimize);
}

TEST(ExperimentConfig, DefaultsAndOverrides) {
  const auto s = parse_experiment_spec("# comment\n\nepochs = 7\nsweep=false\nepochs=9\n");
  EXPECT_EQ(s.train.epochs, 9u);
  EXPECT_FALSE(s.sweep.enabled);
  EXPECT_EQ(s.num_classes, 4u);
  EXPECT_EQ(s.resolved_severities(), (Vector{0.5, 1.0, 1.5, 2.0, 2.5}));
}

TEST(ExperimentConfig, Errors) {
  auto offset_of = [](const std::string& text) -> std::size_t {
    try {
      parse_experiment_spec(text);
    } catch (const ParseError& e) {
      return e.offset();
    }
    ADD_FAILURE() << "no error for " << text;
    return 0;
  };
  EXPECT_EQ(offset_of("seed=1\nbogus=2\n"), 7u);
  EXPECT_EQ(offset_of("seed=1\nepochs=-3\n"), 7u);
  EXPECT_EQ(offset_of("encoder=mlp7\n"), 0u);
  EXPECT_EQ(offset_of("seed=1\njust text\n"), 7u);
  EXPECT_EQ(offset_of("sweep=maybe\n"), 0u);

  auto s = small_spec();
  s.sweep.alphas = {0.5};
  EXPECT_THROW(s.validate(), InvalidParameterError);
  s = small_spec();
  s.dim = 2;
  EXPECT_THROW(s.validate(), InvalidParameterError);
  s = small_spec();
  s.severities = {2, 1};
  EXPECT_THROW(s.validate(), InvalidParameterError);
}

TEST(ExperimentData, DeterministicAndNamed) {
  const auto s = small_spec();
  const auto a = make_experiment_data(s, 5), b = make_experiment_data(s, 5);
  EXPECT_TRUE(bitwise_equal(a.train, b.train));
  EXPECT_TRUE(bitwise_equal(a.shifted[4], b.shifted[4]));
  EXPECT_FALSE(bitwise_equal(a.train, a.test));
  EXPECT_FALSE(bitwise_equal(a.train, make_experiment_data(s, 6).train));
  ASSERT_EQ(a.names.size(), 6u);
  EXPECT_EQ(a.names[0], "clean");
  EXPECT_EQ(a.names[5], "gaussian_noise_2.5");
  EXPECT_EQ(a.test.labels, a.shifted[0].labels);
}

TEST(Trial, ReportsAndPreservation) {
  const auto s = small_spec();
  const auto r = run_trial(s, 1);
  ASSERT_EQ(r.reports.size(), kNumMethods);
  for (const auto& m : r.reports) EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(r.auroc_norm_gsd.size(), 5u);
  EXPECT_EQ(r.gsd_clean_norms.size(), 200u);
  EXPECT_EQ(r.vanilla.history.size(), 4u);
  EXPECT_EQ(r.vanilla.history[0].eval.size(), 2u);
  // temperature and affine rescale all logits of a sample by one positive factor
  EXPECT_EQ(r.preservation[0].mismatches, 0u);
  EXPECT_EQ(r.preservation[1].mismatches, 0u);
  EXPECT_EQ(r.preservation[2].mismatches, 0u);
  EXPECT_EQ(r.preservation[0].compared, 6u * 200u);
  // accuracy of the vanilla model is unchanged by temperature scaling
  for (std::size_t d = 0; d < 6; ++d) EXPECT_EQ(r.reports[0][d].accuracy, r.reports[1][d].accuracy);

  const auto summary = summary_to_tsv(r);
  EXPECT_EQ(count_lines(summary), 1u + 5u * 4u);
  EXPECT_EQ(summary.rfind("metric\tmethod\tclean\tgaussian_noise_0.5", 0), 0u);
  EXPECT_EQ(count_lines(detection_to_tsv(r, s.resolved_severities())), 7u);
  EXPECT_EQ(count_lines(preservation_to_tsv(r)), 4u);
  const double mean_ece = mean_ece_from_level(r, 2, 3);
  EXPECT_NEAR(mean_ece, (r.reports[2][3].ece + r.reports[2][4].ece + r.reports[2][5].ece) / 3.0, 1e-15);
  EXPECT_THROW(mean_ece_from_level(r, 2, 6), DomainError);

  const auto again = run_trial(s, 1);
  EXPECT_EQ(summary_to_tsv(again), summary);
}

TEST(Sweep, GridAndFits) {
  const auto s = small_spec();
  const auto r = run_sweep(s, 2);
  ASSERT_EQ(r.points.size(), 6u);
  EXPECT_EQ(r.points[0].relaxation, 0.0);
  EXPECT_NEAR(r.points[3].relaxation, std::acos(0.5), 1e-15);
  EXPECT_EQ(r.fits.size(), 2u + 3u);
  EXPECT_EQ(count_lines(sweep_points_to_tsv(r)), 7u);
  EXPECT_EQ(count_lines(sweep_fits_to_tsv(r)), 6u);
  for (const auto& f : r.fits) {
    EXPECT_GE(f.fit.r_squared, 0.0);
    EXPECT_LE(f.fit.r_squared, 1.0);
  }
}

TEST(NormHistogram, CountsAddUp) {
  const std::vector<double> a{1, 2, 3, 4}, b{2.5, 10};
  const auto t = norm_histogram_tsv(a, b, 3);
  std::istringstream is(t);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "bin\tlower\tupper\tind_count\tshifted_count");
  std::size_t ni = 0, ns = 0;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::size_t bin = 0, ci = 0, cs = 0;
    double lo = 0, hi = 0;
    ls >> bin >> lo >> hi >> ci >> cs;
    ni += ci;
    ns += cs;
  }
  EXPECT_EQ(ni, 4u);
  EXPECT_EQ(ns, 2u);
  EXPECT_THROW(norm_histogram_tsv(std::vector<double>{}, b), DomainError);
}

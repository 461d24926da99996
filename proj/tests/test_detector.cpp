#include "iblab/detector.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <sstream>

using namespace iblab;

namespace {

std::vector<Vec> gaussian_draws(int n, const Vec& mean, const Chol& chol, Rng& rng) {
  std::vector<Vec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample_gaussian(mean, chol, rng));
  return out;
}

std::vector<Vec> std_normal_draws(int n, int k, Rng& rng) {
  return gaussian_draws(n, Vec::Zero(k), cholesky(Mat::Identity(k, k)), rng);
}

}  // namespace

TEST(FitSftStats, UnfilteredIsPlainFit) {
  Rng rng(1);
  const auto z = std_normal_draws(500, 3, rng);
  FitOptions opts;
  opts.filter_quantile = 1.0;
  const LatentStats s = fit_sft_stats(z, opts);
  EXPECT_FALSE(s.filtered);
  EXPECT_EQ(s.n_samples, 500);
  const auto plain = empirical_mean_cov<double>(z, opts.shrinkage);
  EXPECT_EQ(s.mean, plain.mean);
  EXPECT_EQ(s.cov, plain.cov);
}

TEST(FitSftStats, FilterDropsTheTail) {
  Rng rng(2);
  const auto z = std_normal_draws(5000, 4, rng);
  const LatentStats s = fit_sft_stats(z);
  EXPECT_TRUE(s.filtered);
  const double dropped = 1.0 - s.n_samples / 5000.0;
  EXPECT_NEAR(dropped, 0.025, 0.01);
  EXPECT_LT(s.mean.cwiseAbs().maxCoeff(), 0.05);
  // The consistency correction restores unit variance.
  EXPECT_NEAR(s.cov.diagonal().mean(), 1.0, 0.05);

  FitOptions raw;
  raw.consistency_correction = false;
  EXPECT_LT(fit_sft_stats(z, raw).cov.diagonal().mean(), 0.97);
}

TEST(FitSftStats, Errors) {
  std::vector<Vec> same(20, Vec::Constant(3, 1.5));
  EXPECT_THROW(fit_sft_stats(same), NonPositiveDefinite);
  Rng rng(3);
  EXPECT_THROW(fit_sft_stats(std_normal_draws(3, 3, rng)), std::invalid_argument);
  FitOptions bad;
  bad.filter_quantile = 0.0;
  EXPECT_THROW(fit_sft_stats(std_normal_draws(30, 3, rng), bad), std::invalid_argument);
}

TEST(PValue, Examples) {
  EXPECT_EQ(p_value(0.0, 4), 1.0);
  EXPECT_NEAR(p_value(2.0 * std::log(2.0), 2), 0.5, 1e-15);
  EXPECT_NEAR(p_value(1.0, 1), 0.3173105078629141, 1e-9);
  EXPECT_THROW(p_value(-0.1, 2), std::invalid_argument);
  double prev = 1.0;
  for (int i = 1; i < 100; ++i) {
    const double p = p_value(0.5 * i, 6);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Detect, SelfCalibration) {
  Rng rng(4);
  const auto z = std_normal_draws(5000, 8, rng);
  const LatentStats s = fit_sft_stats(z);
  const DetectionReport r = detect(z, s, 0.01);
  EXPECT_GE(r.mop, 0.0);
  EXPECT_LE(r.mop, 0.03);
}

TEST(Detect, MeanPointIsNotFlagged) {
  Rng rng(5);
  const LatentStats s = fit_sft_stats(std_normal_draws(200, 3, rng));
  const DetectionReport r = detect({s.mean}, s);
  EXPECT_EQ(r.p_values[0], 1.0);
  EXPECT_FALSE(r.flags[0]);
  EXPECT_EQ(r.mop, 0.0);
}

TEST(Detect, FarShiftIsFlagged) {
  Rng rng(6);
  const auto z = std_normal_draws(5000, 8, rng);
  const LatentStats s = fit_sft_stats(z);
  std::vector<Vec> shifted = std_normal_draws(2000, 8, rng);
  for (auto& v : shifted) v(2) += 10.0;
  EXPECT_GT(detect(shifted, s).mop, 0.95);
}

TEST(Detect, FreshDrawsStayInBinomialBand) {
  Rng rng(7);
  Mat sigma = Mat::Identity(4, 4);
  sigma(0, 1) = sigma(1, 0) = 0.6;
  const Chol c = cholesky(sigma);
  const Vec mu = Vec::LinSpaced(4, -1, 1);
  const LatentStats s = fit_sft_stats(gaussian_draws(5000, mu, c, rng));
  // Sample from the fitted Gaussian itself.
  const auto fresh = gaussian_draws(10000, s.mean, s.chol, rng);
  const double band = 3 * std::sqrt(0.01 * 0.99 / 10000);
  EXPECT_NEAR(detect(fresh, s, 0.01).mop, 0.01, band);
}

TEST(Detect, ScalingDeviationsIsMonotone) {
  Rng rng(8);
  const LatentStats s = fit_sft_stats(std_normal_draws(1000, 5, rng));
  const auto z = std_normal_draws(500, 5, rng);
  const DetectionReport base = detect(z, s);
  for (double c : {1.2, 2.0, 3.5}) {
    std::vector<Vec> scaled;
    for (const auto& v : z) scaled.push_back(s.mean + c * (v - s.mean));
    const DetectionReport r = detect(scaled, s);
    for (std::size_t i = 0; i < z.size(); ++i) {
      EXPECT_GE(r.d2[i], base.d2[i]);
      EXPECT_LE(r.p_values[i], base.p_values[i]);
    }
    EXPECT_GE(r.mop, base.mop);
  }
}

TEST(Detect, ReportConsistencyAndErrors) {
  Rng rng(9);
  const LatentStats s = fit_sft_stats(std_normal_draws(300, 3, rng));
  DetectionReport r = detect(std_normal_draws(100, 3, rng), s, 0.2);
  EXPECT_NO_THROW(r.check());
  r.mop += 0.01;
  EXPECT_THROW(r.check(), std::logic_error);
  EXPECT_THROW(detect({}, s), std::invalid_argument);
  EXPECT_THROW(detect({Vec::Zero(4)}, s), DimensionError);
  EXPECT_THROW(detect({Vec::Zero(3)}, s, 1.0), std::invalid_argument);

  const nlohmann::json j = to_json(detect(std_normal_draws(10, 3, rng), s, 0.05));
  EXPECT_EQ(j.at("d2").size(), 10u);
  EXPECT_EQ(j.at("summary").at("alpha").get<double>(), 0.05);
}

TEST(LatentDump, BinaryAndCsvRoundTrip) {
  Rng rng(10);
  const auto z = std_normal_draws(37, 5, rng);
  std::stringstream bin;
  write_latents_binary(bin, z);
  EXPECT_EQ(bin.str().substr(0, 6), std::string("IBLAT\0", 6));
  EXPECT_EQ(bin.str().size(), 6u + 12u + 37u * 5u * 8u);
  const auto back = read_latents_binary(bin);
  ASSERT_EQ(back.size(), z.size());
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(back[i], z[i]);

  std::stringstream csv;
  write_latents_csv(csv, z);
  const auto back_csv = read_latents_csv(csv);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_EQ(back_csv[i], z[i]);

  std::stringstream junk("IBLAX\0garbage");
  EXPECT_THROW(read_latents_binary(junk), std::runtime_error);
  std::stringstream bad_csv("1.0,abc\n");
  EXPECT_THROW(read_latents_csv(bad_csv), std::runtime_error);
}

TEST(LatentDump, FileFormatFollowsExtension) {
  const auto dir = std::filesystem::temp_directory_path() / "iblab_latent_test";
  std::filesystem::create_directories(dir);
  Rng rng(11);
  const auto z = std_normal_draws(4, 2, rng);
  save_latents(dir / "z.csv", z);
  save_latents(dir / "z.bin", z);
  EXPECT_EQ(load_latents(dir / "z.csv")[3], z[3]);
  EXPECT_EQ(load_latents(dir / "z.bin")[3], z[3]);
  std::filesystem::remove_all(dir);
}

#pragma once

#include "iblab/numkit.hpp"

#include <filesystem>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <vector>

namespace iblab {

/// Reference Gaussian of SFT-induced latents.
struct LatentStats {
  Vec mean;
  Mat cov;
  Chol chol;
  int n_samples = 0;
  double shrinkage = 0;
  bool filtered = false;

  int dim() const { return static_cast<int>(mean.size()); }
};

struct FitOptions {
  double shrinkage = 1e-3;
  /// Samples beyond this chi-squared quantile are dropped before one refit.
  /// 1 disables the filter.
  double filter_quantile = 0.975;
  /// Rescale the refit covariance by q / F_{k+2}(F_k^{-1}(q)), which undoes
  /// the shrinkage of a Gaussian covariance estimated from its central q-mass.
  bool consistency_correction = true;
};

LatentStats fit_sft_stats(const std::vector<Vec>& latents, const FitOptions& opts = {});

/// Right-tail chi-squared probability of a squared distance.
double p_value(double d2, int k);

struct DetectionReport {
  std::vector<double> d2;
  std::vector<double> p_values;
  std::vector<bool> flags;
  double alpha = 0.01;
  double mop = 0;

  /// Asserts the flag/mop relations; throws std::logic_error on violation.
  void check() const;
};

DetectionReport detect(const std::vector<Vec>& latents, const LatentStats& stats,
                       double alpha = 0.01);

/// Fraction of latents with p < alpha, without building a report.
double mop(const std::vector<Vec>& latents, const LatentStats& stats, double alpha = 0.01);

nlohmann::json to_json(const DetectionReport& r);
nlohmann::json to_json(const LatentStats& s);

// Latent dumps. Binary: magic "IBLAT\0", u32 version, u32 rows, u32 dim, then
// row-major little-endian f64. CSV: one row per latent, no header.
void write_latents_binary(std::ostream& out, const std::vector<Vec>& rows);
std::vector<Vec> read_latents_binary(std::istream& in);
void write_latents_csv(std::ostream& out, const std::vector<Vec>& rows);
std::vector<Vec> read_latents_csv(std::istream& in);
/// Picks the format from the extension: ".csv" or anything else for binary.
void save_latents(const std::filesystem::path& path, const std::vector<Vec>& rows);
std::vector<Vec> load_latents(const std::filesystem::path& path);

}  // namespace iblab

#pragma once

#include "iblab/numkit.hpp"

#include <nlohmann/json_fwd.hpp>
#include <vector>

namespace iblab {

/// Ellipsoid {θ : ‖θ − θ̂‖_Σ ≤ √B} around a linear reward estimate.
struct ConfidenceSet {
  Vec theta_hat;
  Mat sigma_sft;
  Chol chol;
  double B = 1.0;

  static ConfidenceSet make(Vec theta_hat, Mat sigma_sft, double B);
  Index dim() const { return theta_hat.size(); }
};

/// min over the set of θᵀh, in closed form: θ̂ᵀh − √B ‖h‖_{Σ⁻¹}.
double pessimistic_reward_closed(const ConfidenceSet& cs, const Vec& h);

struct NumericMinimum {
  double value = 0;
  Vec theta;
  int iterations = 0;
  /// False when the last ten iterations still improved by more than 1e-9.
  bool converged = true;
};

/// Projected gradient over the unit direction u, with θ = θ̂ + √B L⁻ᵀu,
/// from a fixed pseudo-random start. Each step moves u by 1/√t along the
/// normalized gradient and renormalizes. Returns the best value visited.
NumericMinimum pessimistic_reward_numeric(const ConfidenceSet& cs, const Vec& h,
                                          int n_iters = 500);

/// θ̂ᵀh − eta ‖h − v‖_{Σ⁻¹}.
double penalized_objective(const ConfidenceSet& cs, const Vec& h, double eta, const Vec& v);

struct SigmaComparison {
  Mat sigma_rm;
  Mat sigma_sft;
  /// ‖Σ_rm − 2Σ_sft‖_F / ‖2Σ_sft‖_F
  double rel_error = 0;
};

/// Draws n_pairs i.i.d. pairs N(mean·1, I) in dimension d. Σ_rm sums the
/// pair-difference outer products; Σ_sft sums hhᵀ over all 2·n_pairs samples
/// and halves the result.
SigmaComparison sigma_rm_vs_sft(int d, int n_pairs, Rng& rng, double feature_mean = 0.0);

struct PessimismCheckConfig {
  int max_dim = 16;
  double B = 1.0;
  int instances = 50;
  int n_iters = 500;
  int sigma_pairs = 100000;
  int sigma_dim = 4;
  std::uint64_t seed = 0;
};

struct PessimismInstance {
  int dim = 0;
  double closed = 0;
  double numeric = 0;
  bool converged = true;
  /// |penalized_objective penalty − mahalanobis(h, v)| on the same inputs.
  double kernel_gap = 0;
};

struct PessimismReport {
  PessimismCheckConfig config;
  std::vector<PessimismInstance> instances;
  double max_deviation = 0;
  double max_kernel_gap = 0;
  double zero_h_value = 0;
  double sigma_error_zero_mean = 0;
  double sigma_error_mean_two = 0;
};

/// Random confidence sets: d uniform in [2, max_dim], Σ = AAᵀ/d + 0.1·I with
/// A standard normal, θ̂ and h standard normal.
PessimismReport run_pessimism_check(const PessimismCheckConfig& cfg);
nlohmann::json to_json(const PessimismReport& r);

}  // namespace iblab

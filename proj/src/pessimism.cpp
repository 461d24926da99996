#include "iblab/pessimism.hpp"

#include <cmath>
#include <nlohmann/json.hpp>

namespace iblab {
namespace {

constexpr std::uint64_t kStartSeed = 0x9e3779b97f4a7c15ull;

}  // namespace

ConfidenceSet ConfidenceSet::make(Vec theta_hat, Mat sigma_sft, double B) {
  if (!(B > 0) || !std::isfinite(B)) throw std::invalid_argument("ConfidenceSet: B must be > 0");
  require_same_dim(theta_hat.size(), sigma_sft.rows(), "ConfidenceSet");
  Chol chol = cholesky(sigma_sft);
  return {std::move(theta_hat), std::move(sigma_sft), std::move(chol), B};
}

double pessimistic_reward_closed(const ConfidenceSet& cs, const Vec& h) {
  require_same_dim(h.size(), cs.dim(), "pessimistic_reward_closed");
  return cs.theta_hat.dot(h) - std::sqrt(cs.B) * mahalanobis(h, Vec::Zero(h.size()), cs.chol);
}

NumericMinimum pessimistic_reward_numeric(const ConfidenceSet& cs, const Vec& h, int n_iters) {
  require_same_dim(h.size(), cs.dim(), "pessimistic_reward_numeric");
  if (n_iters < 1) throw std::invalid_argument("pessimistic_reward_numeric: n_iters must be >= 1");
  const Index d = cs.dim();
  const double root_b = std::sqrt(cs.B);
  const auto upper = cs.chol.lower().transpose().triangularView<Eigen::Upper>();
  auto theta_of = [&](const Vec& u) -> Vec { return cs.theta_hat + root_b * upper.solve(u); };

  // f(u) = θ̂ᵀh + √B uᵀ L⁻¹h, so the gradient in u is constant.
  const Vec grad = root_b * cs.chol.solve_lower(h);
  NumericMinimum best;
  best.theta = cs.theta_hat;
  best.value = cs.theta_hat.dot(h);
  const double gnorm = grad.norm();
  if (gnorm == 0) return best;
  const Vec dir = grad / gnorm;

  Rng start_rng(kStartSeed);
  Vec u = standard_normal<double>(d, start_rng).normalized();
  best.theta = theta_of(u);
  best.value = best.theta.dot(h);
  std::vector<double> history{best.value};
  for (int t = 1; t <= n_iters; ++t) {
    const Vec stepped = u - dir / std::sqrt(double(t));
    const double norm = stepped.norm();
    if (norm > 0) u = stepped / norm;
    const Vec theta = theta_of(u);
    const double value = theta.dot(h);
    if (value < best.value) {
      best.value = value;
      best.theta = theta;
    }
    history.push_back(best.value);
  }
  best.iterations = n_iters;
  const std::size_t back = std::min<std::size_t>(10, history.size() - 1);
  best.converged = history[history.size() - 1 - back] - history.back() <= 1e-9;
  return best;
}

double penalized_objective(const ConfidenceSet& cs, const Vec& h, double eta, const Vec& v) {
  require_same_dim(h.size(), cs.dim(), "penalized_objective");
  require_same_dim(v.size(), cs.dim(), "penalized_objective");
  return cs.theta_hat.dot(h) - eta * mahalanobis(h, v, cs.chol);
}

SigmaComparison sigma_rm_vs_sft(int d, int n_pairs, Rng& rng, double feature_mean) {
  if (d < 1) throw std::invalid_argument("sigma_rm_vs_sft: d must be >= 1");
  if (n_pairs < d + 1) throw std::invalid_argument("sigma_rm_vs_sft: need n_pairs >= d+1");
  SigmaComparison out{Mat::Zero(d, d), Mat::Zero(d, d), 0.0};
  for (int i = 0; i < n_pairs; ++i) {
    const Vec hw = standard_normal<double>(d, rng).array() + feature_mean;
    const Vec hl = standard_normal<double>(d, rng).array() + feature_mean;
    const Vec diff = hw - hl;
    out.sigma_rm.noalias() += diff * diff.transpose();
    out.sigma_sft.noalias() += hw * hw.transpose() + hl * hl.transpose();
  }
  out.sigma_sft *= 0.5;
  const Mat twice = 2.0 * out.sigma_sft;
  out.rel_error = (out.sigma_rm - twice).norm() / twice.norm();
  return out;
}

PessimismReport run_pessimism_check(const PessimismCheckConfig& cfg) {
  if (cfg.max_dim < 2) throw std::invalid_argument("pessimism check: max_dim must be >= 2");
  if (cfg.instances < 1) throw std::invalid_argument("pessimism check: instances must be >= 1");
  PessimismReport rep;
  rep.config = cfg;
  Rng rng(cfg.seed);
  std::uniform_int_distribution<int> pick_dim(2, cfg.max_dim);
  for (int i = 0; i < cfg.instances; ++i) {
    const int d = pick_dim(rng);
    Mat a(d, d);
    for (Index c = 0; c < d; ++c) a.col(c) = standard_normal<double>(d, rng);
    Mat sigma = a * a.transpose() / double(d) + 0.1 * Mat::Identity(d, d);
    sigma = 0.5 * (sigma + sigma.transpose());
    Vec theta = standard_normal<double>(d, rng);
    const Vec h = standard_normal<double>(d, rng);
    const Vec v = standard_normal<double>(d, rng);
    const ConfidenceSet cs = ConfidenceSet::make(std::move(theta), std::move(sigma), cfg.B);

    PessimismInstance inst;
    inst.dim = d;
    inst.closed = pessimistic_reward_closed(cs, h);
    const NumericMinimum num = pessimistic_reward_numeric(cs, h, cfg.n_iters);
    inst.numeric = num.value;
    inst.converged = num.converged;
    const double penalty = cs.theta_hat.dot(h) - penalized_objective(cs, h, 1.0, v);
    inst.kernel_gap = std::abs(penalty - mahalanobis(h, v, cs.chol));
    rep.max_deviation = std::max(rep.max_deviation, std::abs(inst.closed - inst.numeric));
    rep.max_kernel_gap = std::max(rep.max_kernel_gap, inst.kernel_gap);
    rep.instances.push_back(inst);
  }
  const ConfidenceSet probe = ConfidenceSet::make(Vec::Ones(3), Mat::Identity(3, 3), cfg.B);
  rep.zero_h_value = pessimistic_reward_numeric(probe, Vec::Zero(3), cfg.n_iters).value;

  Rng sigma_rng(mix_seed(cfg.seed, 1));
  rep.sigma_error_zero_mean = sigma_rm_vs_sft(cfg.sigma_dim, cfg.sigma_pairs, sigma_rng).rel_error;
  rep.sigma_error_mean_two =
      sigma_rm_vs_sft(cfg.sigma_dim, cfg.sigma_pairs, sigma_rng, 2.0).rel_error;
  return rep;
}

nlohmann::json to_json(const PessimismReport& r) {
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& i : r.instances) {
    inst.push_back({{"dim", i.dim},
                    {"closed", i.closed},
                    {"numeric", i.numeric},
                    {"deviation", std::abs(i.closed - i.numeric)},
                    {"converged", i.converged},
                    {"kernel_gap", i.kernel_gap}});
  }
  const auto& c = r.config;
  return {{"config",
           {{"max_dim", c.max_dim},
            {"B", c.B},
            {"instances", c.instances},
            {"n_iters", c.n_iters},
            {"sigma_pairs", c.sigma_pairs},
            {"sigma_dim", c.sigma_dim},
            {"seed", c.seed}}},
          {"instances", inst},
          {"max_deviation", r.max_deviation},
          {"max_kernel_gap", r.max_kernel_gap},
          {"zero_h_value", r.zero_h_value},
          {"sigma_error_zero_mean", r.sigma_error_zero_mean},
          {"sigma_error_mean_two", r.sigma_error_mean_two}};
}

}  // namespace iblab

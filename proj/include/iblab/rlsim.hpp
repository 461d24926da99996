#pragma once

#include "iblab/detector.hpp"
#include "iblab/rewardmodels.hpp"
#include "iblab/synthworld.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace iblab {

/// Softmax policy over each prompt's response pool.
struct PolicyParams {
  std::vector<Vec> logits;

  /// Logits equal to log-probabilities of the given rows.
  static PolicyParams from_probs(const std::vector<Vec>& probs);
  std::vector<Vec> probs() const;
  void validate() const;
};

/// Initial policy: logits ln π_sft per pool.
PolicyParams sft_policy_params(const WorldConfig& world, const std::vector<ResponsePool>& pools);

enum class Regularizer { None, Kl, Ibl };
const char* to_string(Regularizer r);
Regularizer regularizer_from_string(const std::string& s);

struct RlConfig {
  Regularizer regularizer = Regularizer::None;
  double gamma = 0.1;
  double kl_coef = 0.05;
  int steps = 2000;
  double lr = 200.0;
  int eval_every = 100;
  int eval_samples = 512;
  double mop_alpha = 0.01;
  std::optional<double> early_stop_mop;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Run files are `key = value` lines; `#` starts a comment. Unknown keys and
/// malformed values throw std::invalid_argument naming the key.
RlConfig parse_rl_config(std::istream& in);
RlConfig parse_rl_config(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> parse_key_values(std::istream& in);
void write_rl_config(std::ostream& out, const RlConfig& cfg);
nlohmann::json to_json(const RlConfig& cfg);

enum class StopReason { Completed, EarlyStopMop, Diverged };
const char* to_string(StopReason s);

struct RlRunRecord {
  std::vector<int> step;
  std::vector<double> proxy_reward;
  std::vector<double> gold_reward;
  std::vector<double> mop;
  std::vector<double> regularizer_mean;
  StopReason stop_reason = StopReason::Completed;
  /// Row whose policy run_rl returned.
  std::size_t returned_row = 0;

  std::size_t size() const { return step.size(); }
  void check() const;
  bool operator==(const RlRunRecord&) const = default;
};

void write_record_csv(std::ostream& out, const RlRunRecord& rec);
nlohmann::json to_json(const RlRunRecord& rec);

/// Mahalanobis distance of the InfoRM latent mean of x from the SFT latents.
double ibl_penalty(const Vec& x, const InfoRm& m, const LatentStats& stats);

/// Proxy reward minus the configured penalty. `pi` and `pi_sft` are the
/// current and SFT probabilities of the candidate; only kl reads them.
double shaped_reward(double proxy, const RlConfig& cfg, double penalty, double pi, double pi_sft);

struct Objective {
  double value = 0;
  std::vector<Vec> grad;
};

/// Mean over prompts of E_π[R], with its exact gradient in the logits.
Objective exact_objective_and_grad(const PolicyParams& policy, const std::vector<Vec>& rewards);

using RewardFn = std::function<double(const Vec&)>;
RewardFn reward_fn(const StandardRm& m);
RewardFn reward_fn(const InfoRm& m);

/// Per-candidate quantities of one RL problem, computed once before the loop.
struct RlProblem {
  std::vector<Vec> proxy;
  std::vector<Vec> gold;
  std::vector<Vec> penalty;
  std::vector<Vec> sft_probs;
  /// Chi-squared p-values of the detection latents.
  std::vector<Vec> p_values;

  std::size_t n_prompts() const { return proxy.size(); }
};

RlProblem tabulate(const WorldConfig& world, const std::vector<ResponsePool>& pools,
                   const RewardFn& proxy, const InfoRm& detector, const LatentStats& stats);

struct RlResult {
  PolicyParams policy;
  RlRunRecord record;
};

RlResult run_rl(const PolicyParams& policy0, const RlProblem& problem, const RlConfig& cfg);

RlResult run_rl(const PolicyParams& policy0, const WorldConfig& world,
                const std::vector<ResponsePool>& pools, const RewardFn& proxy,
                const RlConfig& cfg, const InfoRm& detector, const LatentStats& stats);

}  // namespace iblab

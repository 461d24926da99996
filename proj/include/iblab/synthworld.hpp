#pragma once

#include "iblab/numkit.hpp"

#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <string>
#include <vector>

namespace iblab {

/// Parameters of the synthetic preference world. Feature vectors have
/// `dim_relevant` gold-relevant coordinates followed by `dim_spurious`
/// spurious ones.
struct WorldConfig {
  int n_prompts = 200;
  int n_eval_prompts = 100;
  int pool_size = 16;
  int dim_relevant = 6;
  int dim_spurious = 2;
  /// Empty means the default: every relevant weight 1/sqrt(dim_relevant).
  Vec gold_weights;
  double annotator_bias = 1.0;
  double sft_temperature = 1.0;
  /// Empty means the default: +1.5 on every spurious dim.
  Vec ood_shift;
  /// Probability that a candidate is an exploit: its first spurious dim is
  /// moved by `exploit_spurious_shift` and every relevant dim by
  /// `exploit_relevant_shift`.
  double exploit_rate = 0.0;
  double exploit_spurious_shift = 8.0;
  double exploit_relevant_shift = -1.0;
  std::uint64_t seed = 0;

  int feature_dim() const { return dim_relevant + dim_spurious; }
  Vec resolved_gold_weights() const;
  Vec resolved_ood_shift() const;
  void validate() const;

  /// World used by the reward-hacking experiments: the defaults above with
  /// exploit candidates switched on.
  static WorldConfig hacking_preset();
};

nlohmann::json to_json(const WorldConfig& cfg);
WorldConfig world_config_from_json(const nlohmann::json& j);
/// SHA-256 of the canonical JSON form, hex encoded.
std::string config_hash(const WorldConfig& cfg);

struct ResponsePool {
  int prompt_id = 0;
  std::vector<Vec> features;
};

struct PreferencePair {
  Vec chosen;
  Vec rejected;
  int prompt_id = 0;
};

enum class PoolSplit { Train, Eval, Ood };

const char* to_string(PoolSplit s);

double gold_reward(const WorldConfig& cfg, const Vec& x);

/// Standard-normal candidates per prompt. Ood pools replay the Eval stream and
/// add the ood shift, so with a zero shift they equal the Eval pools.
std::vector<ResponsePool> make_pools(const WorldConfig& cfg, PoolSplit split);

/// Softmax of gold reward over the pool at temperature cfg.sft_temperature.
Vec sft_policy(const WorldConfig& cfg, const ResponsePool& pool);

/// Annotator utility gold + b·(first spurious coordinate).
double annotator_utility(const WorldConfig& cfg, const Vec& x);

std::vector<PreferencePair> gen_preferences(const WorldConfig& cfg,
                                            const std::vector<ResponsePool>& pools,
                                            int n_pairs, Rng& rng);

/// Index drawn from a probability vector by inverse CDF.
Index sample_index(const Vec& probs, Rng& rng);

// Preference JSONL: first line {"world_config": {...}}, then one
// {"prompt_id", "chosen", "rejected"} object per line.
void write_preferences_jsonl(std::ostream& out, const WorldConfig& cfg,
                             const std::vector<PreferencePair>& pairs);
struct PreferenceFile {
  WorldConfig world;
  std::vector<PreferencePair> pairs;
};
PreferenceFile read_preferences_jsonl(std::istream& in);

nlohmann::json pools_to_json(const WorldConfig& cfg, PoolSplit split,
                             const std::vector<ResponsePool>& pools);
std::vector<ResponsePool> pools_from_json(const nlohmann::json& j);

}  // namespace iblab

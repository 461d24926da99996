#pragma once

#include "iblab/detector.hpp"
#include "iblab/rewardmodels.hpp"
#include "iblab/rlsim.hpp"
#include "iblab/synthworld.hpp"

#include <optional>
#include <vector>

namespace iblab {

/// Tags mixed into a run seed with mix_seed, one per random stream.
namespace streams {
inline constexpr std::uint64_t kTrainPairs = 10;
inline constexpr std::uint64_t kStandardInit = 11;
inline constexpr std::uint64_t kInformInit = 12;
inline constexpr std::uint64_t kSftSamples = 13;
inline constexpr std::uint64_t kEvalPairs = 20;
inline constexpr std::uint64_t kOodPairs = 21;
inline constexpr std::uint64_t kPolicySamples = 30;
}  // namespace streams

/// One seeded RLHF pipeline: preference data, reward models, detector fit
/// and RL against a chosen proxy.
struct ExperimentConfig {
  WorldConfig world = WorldConfig::hacking_preset();
  int n_train_pairs = 20000;
  TrainConfig train;
  int latent_dim = 8;
  double beta = 0.1;
  int n_sft_samples = 2000;
  FitOptions fit{.shrinkage = 1e-2};
  RlConfig rl;

  void validate() const;
};

enum class ProxyKind { Standard, Inform };
const char* to_string(ProxyKind k);

struct SeedModels {
  WorldConfig world;
  /// RL runs on the eval split so the policy optimizes on prompts the RMs
  /// never saw.
  std::vector<ResponsePool> rl_pools;
  std::optional<StandardRm> standard;
  InfoRm inform;
  LatentStats stats;
};

/// World, data, both reward models and the detector for one seed. The seed
/// replaces world.seed; every other stream derives from it.
SeedModels prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                        bool with_standard = true);

/// Draws n responses: a uniform prompt, then a candidate from that prompt's
/// row of `probs`.
std::vector<Vec> sample_responses(const std::vector<ResponsePool>& pools,
                                  const std::vector<Vec>& probs, int n, Rng& rng);

/// Posterior-mean latents of responses sampled from the SFT policy.
std::vector<Vec> sample_sft_latents(const WorldConfig& world,
                                    const std::vector<ResponsePool>& pools, const InfoRm& m,
                                    int n, Rng& rng);

RlResult run_arm(const SeedModels& models, ProxyKind proxy, const RlConfig& rl);

}  // namespace iblab

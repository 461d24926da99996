#include "iblab/experiment.hpp"

namespace iblab {

void ExperimentConfig::validate() const {
  world.validate();
  if (n_train_pairs < 1) throw std::invalid_argument("ExperimentConfig: n_train_pairs must be >= 1");
  if (latent_dim < 1) throw std::invalid_argument("ExperimentConfig: latent_dim must be >= 1");
  if (!(beta >= 0)) throw std::invalid_argument("ExperimentConfig: beta must be >= 0");
  if (n_sft_samples <= latent_dim) {
    throw std::invalid_argument("ExperimentConfig: n_sft_samples must exceed latent_dim");
  }
  rl.validate();
}

const char* to_string(ProxyKind k) { return k == ProxyKind::Standard ? "standard" : "inform"; }

std::vector<Vec> sample_responses(const std::vector<ResponsePool>& pools,
                                  const std::vector<Vec>& probs, int n, Rng& rng) {
  if (pools.empty() || probs.size() != pools.size()) {
    throw std::invalid_argument("sample_responses: need one probability row per pool");
  }
  std::uniform_int_distribution<std::size_t> pick(0, pools.size() - 1);
  std::vector<Vec> out;
  out.reserve(n);
  for (int s = 0; s < n; ++s) {
    const std::size_t q = pick(rng);
    out.push_back(pools[q].features[sample_index(probs[q], rng)]);
  }
  return out;
}

std::vector<Vec> sample_sft_latents(const WorldConfig& world,
                                    const std::vector<ResponsePool>& pools, const InfoRm& m,
                                    int n, Rng& rng) {
  std::vector<Vec> probs;
  probs.reserve(pools.size());
  for (const auto& p : pools) probs.push_back(sft_policy(world, p));
  return extract_latents(m, sample_responses(pools, probs, n, rng));
}

SeedModels prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, bool with_standard) {
  cfg.validate();
  WorldConfig world = cfg.world;
  world.seed = seed;
  const int m = world.feature_dim();

  const auto train_pools = make_pools(world, PoolSplit::Train);
  Rng pair_rng(mix_seed(seed, streams::kTrainPairs));
  const auto pairs = gen_preferences(world, train_pools, cfg.n_train_pairs, pair_rng);

  std::optional<StandardRm> standard;
  if (with_standard) {
    Rng init(mix_seed(seed, streams::kStandardInit));
    TrainConfig tc = cfg.train;
    tc.seed = mix_seed(seed, streams::kStandardInit);
    standard = train_rm(StandardRm::init(m, init), pairs, tc).model;
  }
  Rng init(mix_seed(seed, streams::kInformInit));
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(seed, streams::kInformInit);
  InfoRm inform = train_rm(InfoRm::init(m, cfg.latent_dim, cfg.beta, init), pairs, tc).model;

  auto rl_pools = make_pools(world, PoolSplit::Eval);
  Rng sft_rng(mix_seed(seed, streams::kSftSamples));
  const auto latents = sample_sft_latents(world, rl_pools, inform, cfg.n_sft_samples, sft_rng);
  LatentStats stats = fit_sft_stats(latents, cfg.fit);
  return {std::move(world), std::move(rl_pools), std::move(standard), std::move(inform),
          std::move(stats)};
}

RlResult run_arm(const SeedModels& models, ProxyKind proxy, const RlConfig& rl) {
  RewardFn fn;
  if (proxy == ProxyKind::Standard) {
    if (!models.standard) throw std::invalid_argument("run_arm: no standard RM was trained");
    fn = reward_fn(*models.standard);
  } else {
    fn = reward_fn(models.inform);
  }
  return run_rl(sft_policy_params(models.world, models.rl_pools), models.world, models.rl_pools,
                fn, rl, models.inform, models.stats);
}

}  // namespace iblab

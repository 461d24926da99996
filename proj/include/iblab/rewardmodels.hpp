#pragma once

#include "iblab/nnkit.hpp"
#include "iblab/synthworld.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace iblab {

/// Scalar-head Bradley–Terry reward model.
struct StandardRm {
  ParamSet net;

  /// [m, 32, 32, 1] tanh network with Glorot weights.
  static StandardRm init(int feature_dim, Rng& rng);
  double reward(const Vec& x) const { return mlp_forward(net, x)(0); }
};

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 2.0;

struct LatentGaussian {
  Vec mu;
  Vec sigma;
};

/// Information-bottleneck reward model: a Gaussian encoder emitting
/// (mu, log sigma) and a decoder from the latent to a scalar reward.
struct InfoRm {
  ParamSet encoder;
  ParamSet decoder;
  int latent_dim = 8;
  double beta = 0.1;

  /// Encoder [m, 32, 2k] and decoder [k, 32, 1], tanh hidden layers.
  static InfoRm init(int feature_dim, int latent_dim, double beta, Rng& rng);
  void validate() const;
};

LatentGaussian encode(const InfoRm& m, const Vec& x);
Vec reparameterize(const LatentGaussian& g, const Vec& eps);
double kl_to_std_normal(const LatentGaussian& g);

/// Reward of the latent sample mu + sigma ⊙ eps.
double inform_reward(const InfoRm& m, const Vec& x, const Vec& eps);
/// Reward of the posterior mean (eps = 0).
double inform_reward(const InfoRm& m, const Vec& x);

struct InfoLoss {
  double loss = 0;
  GradSet encoder;
  GradSet decoder;
};

/// -log sigmoid(r_w - r_l) + beta (KL_w + KL_l) with exact gradients.
InfoLoss inform_loss(const InfoRm& m, const PreferencePair& pair, const Vec& eps_w,
                     const Vec& eps_l);

struct StandardLoss {
  double loss = 0;
  GradSet grad;
};

StandardLoss standard_loss(const StandardRm& m, const PreferencePair& pair);

/// Merges the encoder's mean head into the decoder's first layer, giving a
/// StandardRm whose reward equals the InfoRm posterior-mean reward.
StandardRm compose_mean_path(const InfoRm& m);

struct TrainConfig {
  int epochs = 5;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

class TrainingDiverged : public NumericError {
 public:
  explicit TrainingDiverged(long step)
      : NumericError("training diverged (non-finite loss) at step " + std::to_string(step)),
        step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

template <typename Model>
struct Trained {
  Model model;
  std::vector<double> loss_curve;  // mean loss per batch
};

Trained<StandardRm> train_rm(StandardRm model, const std::vector<PreferencePair>& data,
                             const TrainConfig& cfg);
/// One fresh eps per example per step.
Trained<InfoRm> train_rm(InfoRm model, const std::vector<PreferencePair>& data,
                         const TrainConfig& cfg);

/// Fraction of pairs with r(chosen) strictly above r(rejected). InfoRm is
/// scored at the posterior mean.
double pairwise_accuracy(const StandardRm& m, const std::vector<PreferencePair>& pairs);
double pairwise_accuracy(const InfoRm& m, const std::vector<PreferencePair>& pairs);

/// Posterior means mu(x).
std::vector<Vec> extract_latents(const InfoRm& m, const std::vector<Vec>& xs);

// Checkpoints: `<path>` holds nnkit parameter records (one for a standard RM,
// encoder then decoder for InfoRM) and `<path>.json` the sidecar with kind,
// latent dim, beta and the world config hash.
struct CheckpointInfo {
  std::string kind;  // "standard" or "inform"
  int latent_dim = 0;
  double beta = 0;
  std::string world_hash;
};

void save_checkpoint(const std::filesystem::path& path, const StandardRm& m,
                     const std::string& world_hash);
void save_checkpoint(const std::filesystem::path& path, const InfoRm& m,
                     const std::string& world_hash);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
StandardRm load_standard_rm(const std::filesystem::path& path);
InfoRm load_inform(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace iblab

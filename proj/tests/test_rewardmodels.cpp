#include "iblab/rewardmodels.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace iblab;

namespace {

double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
}

Vec vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

void jitter(ParamSet& p, Rng& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  for (Index i = 0; i < p.flat.size(); ++i) p.flat(i) += n(rng);
}

PreferencePair random_pair(int m, Rng& rng) {
  return {standard_normal(m, rng), standard_normal(m, rng), 0};
}

std::vector<PreferencePair> default_dataset(std::uint64_t seed, int n) {
  WorldConfig cfg;
  cfg.seed = seed;
  Rng rng(mix_seed(seed, 77));
  return gen_preferences(cfg, make_pools(cfg, PoolSplit::Train), n, rng);
}

}  // namespace

TEST(Encode, ZeroEncoderIsStandardNormal) {
  InfoRm m;
  m.latent_dim = 3;
  m.encoder = ParamSet::zeros({{5, 4, 6}, Activation::Tanh});
  m.decoder = ParamSet::zeros({{3, 4, 1}, Activation::Tanh});
  const LatentGaussian g = encode(m, Vec::Ones(5));
  EXPECT_EQ(g.mu, Vec::Zero(3));
  EXPECT_EQ(g.sigma, Vec::Ones(3));
  EXPECT_EQ(inform_reward(m, Vec::Ones(5)), 0.0);
  EXPECT_EQ(extract_latents(m, {Vec::Ones(5), Vec::Zero(5)})[1], Vec::Zero(3));
}

TEST(Encode, SigmaRespectsClamp) {
  Rng rng(3);
  InfoRm m = InfoRm::init(8, 8, 0.1, rng);
  jitter(m.encoder, rng, 5.0);
  for (int i = 0; i < 50; ++i) {
    const LatentGaussian g = encode(m, standard_normal(8, rng) * 4.0);
    EXPECT_GE(g.sigma.minCoeff(), std::exp(kLogSigmaMin));
    EXPECT_LE(g.sigma.maxCoeff(), std::exp(kLogSigmaMax));
  }
}

TEST(Reparameterize, Examples) {
  LatentGaussian g{vec({1, 2}), vec({2, 1})};
  EXPECT_EQ(reparameterize(g, vec({1, -1})), vec({3, 1}));
  EXPECT_EQ(reparameterize(g, Vec::Zero(2)), g.mu);
  LatentGaussian unit{Vec::Zero(2), Vec::Ones(2)};
  EXPECT_EQ(reparameterize(unit, vec({0.3, -2})), vec({0.3, -2}));
  EXPECT_THROW(reparameterize(g, Vec::Zero(3)), DimensionError);
}

TEST(Kl, Examples) {
  EXPECT_EQ(kl_to_std_normal({Vec::Zero(4), Vec::Ones(4)}), 0.0);
  EXPECT_NEAR(kl_to_std_normal({vec({1, 0}), vec({1, 1})}), 0.5, 1e-15);
  EXPECT_NEAR(kl_to_std_normal({vec({0}), vec({std::sqrt(2.0)})}),
              0.5 * (2 - std::log(2.0) - 1), 1e-15);
  EXPECT_NEAR(kl_to_std_normal({vec({0}), vec({std::sqrt(2.0)})}), 0.15343, 1e-5);
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(21);
  std::uniform_real_distribution<double> mu(-1.5, 1.5), ls(-1.0, 0.7);
  for (int t = 0; t < 10; ++t) {
    const int k = 1 + t % 4;
    LatentGaussian g{Vec(k), Vec(k)};
    for (int j = 0; j < k; ++j) {
      g.mu(j) = mu(rng);
      g.sigma(j) = std::exp(ls(rng));
    }
    // KL = E_q[log q(s) - log p(s)] with s ~ q, 100k draws in antithetic
    // pairs (z, -z).
    auto log_ratio = [&](const Vec& z) {
      const Vec s = reparameterize(g, z);
      return -0.5 * z.squaredNorm() - g.sigma.array().log().sum() + 0.5 * s.squaredNorm();
    };
    double acc = 0;
    const int n = 100000;
    for (int i = 0; i < n / 2; ++i) {
      const Vec z = standard_normal(k, rng);
      acc += log_ratio(z) + log_ratio(-z);
    }
    EXPECT_NEAR(acc / n, kl_to_std_normal(g), 1e-2) << "trial " << t;
  }
}

TEST(InformReward, DeterministicAndNoisyPaths) {
  Rng rng(4);
  InfoRm m = InfoRm::init(8, 8, 0.1, rng);
  const Vec x = standard_normal(8, rng);
  EXPECT_EQ(inform_reward(m, x), inform_reward(m, x));
  EXPECT_EQ(inform_reward(m, x), inform_reward(m, x, Vec::Zero(8)));
  Rng a(1), b(2);
  EXPECT_NE(inform_reward(m, x, standard_normal(8, a)), inform_reward(m, x, standard_normal(8, b)));
  m.decoder.flat.setZero();
  EXPECT_EQ(inform_reward(m, x, standard_normal(8, a)), 0.0);
}

TEST(StandardLoss, Examples) {
  StandardRm zero{ParamSet::zeros({{3, 4, 4, 1}, Activation::Tanh})};
  const PreferencePair p{vec({1, 2, 3}), vec({0, 0, 1}), 0};
  EXPECT_NEAR(standard_loss(zero, p).loss, std::log(2.0), 1e-15);

  StandardRm lin{ParamSet::zeros({{1, 1}, Activation::Tanh})};
  lin.net.flat << 1, 0;
  double prev = std::numeric_limits<double>::infinity();
  for (double gap : {0.0, 1.0, 5.0, 20.0, 60.0}) {
    const double l = standard_loss(lin, {vec({gap}), vec({0}), 0}).loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-20);
}

TEST(StandardLoss, GradientMatchesFiniteDifferences) {
  Rng rng(100);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    StandardRm m = StandardRm::init(8, rng);
    jitter(m.net, rng, 0.2);
    const PreferencePair pair = random_pair(8, rng);
    const StandardLoss res = standard_loss(m, pair);
    for (Index i = 0; i < m.net.flat.size(); ++i) {
      const double keep = m.net.flat(i);
      m.net.flat(i) = keep + h;
      const double fp = standard_loss(m, pair).loss;
      m.net.flat(i) = keep - h;
      const double fm = standard_loss(m, pair).loss;
      m.net.flat(i) = keep;
      ASSERT_LT(rel_err(res.grad.flat(i), (fp - fm) / (2 * h)), 1e-4) << i;
    }
  }
}

TEST(InformLoss, TieWithoutKlIsLog2) {
  Rng rng(5);
  InfoRm m = InfoRm::init(4, 2, 0.0, rng);
  m.decoder.flat.setZero();
  const PreferencePair p = random_pair(4, rng);
  EXPECT_NEAR(inform_loss(m, p, Vec::Zero(2), Vec::Zero(2)).loss, std::log(2.0), 1e-15);
}

TEST(InformLoss, BetaZeroMatchesComposedStandardLoss) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    InfoRm m = InfoRm::init(8, 8, 0.0, rng);
    jitter(m.encoder, rng, 0.2);
    jitter(m.decoder, rng, 0.2);
    const PreferencePair p = random_pair(8, rng);
    const StandardRm composed = compose_mean_path(m);
    EXPECT_NEAR(inform_loss(m, p, Vec::Zero(8), Vec::Zero(8)).loss,
                standard_loss(composed, p).loss, 1e-12);
    EXPECT_NEAR(composed.reward(p.chosen), inform_reward(m, p.chosen), 1e-12);
  }
}

TEST(InformLoss, BetaZeroOnSampledLatentsIsBradleyTerry) {
  Rng rng(7);
  InfoRm m = InfoRm::init(8, 8, 0.0, rng);
  const PreferencePair p = random_pair(8, rng);
  const Vec ew = standard_normal(8, rng), el = standard_normal(8, rng);
  const double margin = inform_reward(m, p.chosen, ew) - inform_reward(m, p.rejected, el);
  EXPECT_NEAR(inform_loss(m, p, ew, el).loss, softplus(-margin), 1e-12);
}

TEST(InformLoss, GradientMatchesFiniteDifferences) {
  Rng rng(200);
  const double h = 1e-5;
  for (int t = 0; t < 20; ++t) {
    InfoRm m = InfoRm::init(8, 8, 0.1 + 0.05 * t, rng);
    jitter(m.encoder, rng, 0.2);
    jitter(m.decoder, rng, 0.2);
    const PreferencePair pair = random_pair(8, rng);
    const Vec ew = standard_normal(8, rng), el = standard_normal(8, rng);
    const InfoLoss res = inform_loss(m, pair, ew, el);
    auto check = [&](ParamSet& ps, const GradSet& g, const char* which) {
      for (Index i = 0; i < ps.flat.size(); ++i) {
        const double keep = ps.flat(i);
        ps.flat(i) = keep + h;
        const double fp = inform_loss(m, pair, ew, el).loss;
        ps.flat(i) = keep - h;
        const double fm = inform_loss(m, pair, ew, el).loss;
        ps.flat(i) = keep;
        ASSERT_LT(rel_err(g.flat(i), (fp - fm) / (2 * h)), 1e-4) << which << ' ' << i;
      }
    };
    check(m.encoder, res.encoder, "encoder");
    check(m.decoder, res.decoder, "decoder");
  }
}

TEST(TrainRm, ZeroEpochsIsIdentity) {
  Rng rng(8);
  const StandardRm m = StandardRm::init(8, rng);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto out = train_rm(m, default_dataset(1, 100), cfg);
  EXPECT_EQ(out.model.net.flat, m.net.flat);
  EXPECT_TRUE(out.loss_curve.empty());
  EXPECT_THROW(train_rm(m, {}, cfg), std::invalid_argument);
}

TEST(TrainRm, StandardBeatsChanceAndIsReproducible) {
  const auto data = default_dataset(2, 4000);
  Rng a(9), b(9);
  TrainConfig cfg;
  cfg.seed = 4;
  const auto ra = train_rm(StandardRm::init(8, a), data, cfg);
  const auto rb = train_rm(StandardRm::init(8, b), data, cfg);
  EXPECT_EQ(ra.model.net.flat, rb.model.net.flat);
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
  double tail = 0;
  for (std::size_t i = ra.loss_curve.size() - 50; i < ra.loss_curve.size(); ++i) {
    tail += ra.loss_curve[i];
  }
  EXPECT_LT(tail / 50, std::log(2.0));
  EXPECT_GT(pairwise_accuracy(ra.model, data), 0.6);
}

TEST(TrainRm, InformBeatsChanceAndIsReproducible) {
  const auto data = default_dataset(3, 4000);
  Rng a(10), b(10);
  TrainConfig cfg;
  cfg.seed = 5;
  const auto ra = train_rm(InfoRm::init(8, 8, 0.1, a), data, cfg);
  const auto rb = train_rm(InfoRm::init(8, 8, 0.1, b), data, cfg);
  EXPECT_EQ(ra.model.encoder.flat, rb.model.encoder.flat);
  EXPECT_EQ(ra.loss_curve, rb.loss_curve);
  EXPECT_GT(pairwise_accuracy(ra.model, data), 0.6);
}

TEST(PairwiseAccuracy, ConventionsAndOracle) {
  const auto data = default_dataset(4, 2000);
  StandardRm constant{ParamSet::zeros({{8, 4, 1}, Activation::Tanh})};
  constant.net.flat.tail(1).setConstant(3.0);
  EXPECT_EQ(pairwise_accuracy(constant, data), 0.0);

  Rng rng(11);
  const double acc = pairwise_accuracy(StandardRm::init(8, rng), data);
  EXPECT_GE(acc, 0.35);
  EXPECT_LE(acc, 0.65);
  EXPECT_THROW(pairwise_accuracy(constant, {}), std::invalid_argument);
}

TEST(PairwiseAccuracy, GoldOracleMatchesBayesRate) {
  WorldConfig cfg;
  cfg.annotator_bias = 0.0;
  cfg.seed = 5;
  Rng rng(12);
  const auto data = gen_preferences(cfg, make_pools(cfg, PoolSplit::Train), 4000, rng);
  // A one-layer net carrying exactly the gold weights.
  StandardRm gold{ParamSet::zeros({{8, 1}, Activation::Tanh})};
  gold.net.flat.head(6) = cfg.resolved_gold_weights();
  double bayes = 0;
  for (const auto& p : data) {
    const double gap = std::fabs(gold_reward(cfg, p.chosen) - gold_reward(cfg, p.rejected));
    bayes += sigmoid(gap);
  }
  bayes /= double(data.size());
  const double acc = pairwise_accuracy(gold, data);
  EXPECT_GT(acc, 0.5);
  // Binomial 4-sigma band around the Bayes rate.
  EXPECT_NEAR(acc, bayes, 4 * std::sqrt(0.25 / double(data.size())));
}

TEST(Checkpoint, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "iblab_ckpt_test";
  std::filesystem::create_directories(dir);
  Rng rng(13);
  const InfoRm m = InfoRm::init(8, 4, 0.01, rng);
  save_checkpoint(dir / "inform.bin", m, "abc");
  const InfoRm back = load_inform(dir / "inform.bin");
  EXPECT_EQ(back.encoder.flat, m.encoder.flat);
  EXPECT_EQ(back.decoder.flat, m.decoder.flat);
  EXPECT_EQ(back.latent_dim, 4);
  EXPECT_EQ(back.beta, 0.01);
  EXPECT_EQ(read_checkpoint_info(dir / "inform.bin").world_hash, "abc");
  EXPECT_THROW(load_standard_rm(dir / "inform.bin"), std::runtime_error);

  const StandardRm s = StandardRm::init(8, rng);
  save_checkpoint(dir / "std.bin", s, "abc");
  EXPECT_EQ(load_standard_rm(dir / "std.bin").net.flat, s.net.flat);
  std::filesystem::remove_all(dir);
}

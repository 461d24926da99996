#include "iblab/config.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace iblab;

TEST(WorldConfigFile, PresetThenOverrides) {
  const WorldConfig w = parse_world_config(
      {{"preset", "hacking"}, {"seed", "7"}, {"pool_size", "8"}, {"ood_shift", "0,0,0,0,0,0, 1, -2"}});
  const WorldConfig h = WorldConfig::hacking_preset();
  EXPECT_EQ(w.seed, 7u);
  EXPECT_EQ(w.pool_size, 8);
  EXPECT_DOUBLE_EQ(w.exploit_rate, h.exploit_rate);
  ASSERT_EQ(w.ood_shift.size(), 8);
  EXPECT_DOUBLE_EQ(w.ood_shift(7), -2.0);

  EXPECT_DOUBLE_EQ(parse_world_config({}).exploit_rate, WorldConfig{}.exploit_rate);
}

TEST(WorldConfigFile, RoundTripKeepsHash) {
  WorldConfig w = WorldConfig::hacking_preset();
  w.seed = 123;
  w.gold_weights = Vec::Constant(w.dim_relevant, 0.25);
  w.annotator_bias = 0.3;
  std::stringstream ss;
  write_world_config(ss, w);
  KeyValues kv;
  for (std::string line; std::getline(ss, line);) {
    const auto eq = line.find('=');
    if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
    auto strip = [](std::string s) {
      s.erase(0, s.find_first_not_of(' '));
      s.erase(s.find_last_not_of(' ') + 1);
      return s;
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  EXPECT_EQ(config_hash(parse_world_config(kv)), config_hash(w));
}

TEST(WorldConfigFile, Errors) {
  EXPECT_THROW(parse_world_config({{"bogus", "1"}}), std::invalid_argument);
  EXPECT_THROW(parse_world_config({{"preset", "nope"}}), std::invalid_argument);
  EXPECT_THROW(parse_world_config({{"schema", "99"}}), std::invalid_argument);
  EXPECT_THROW(parse_world_config({{"pool_size", "x"}}), std::invalid_argument);
  EXPECT_THROW(parse_world_config({{"ood_shift", "1,,2"}}), std::invalid_argument);
  EXPECT_THROW(parse_world_config({{"dim_relevant", "0"}}), std::invalid_argument);
}

TEST(ExperimentConfigFile, RoutesPrefixes) {
  const ExperimentConfig c = parse_experiment_config({{"world.seed", "5"},
                                                      {"world.pool_size", "12"},
                                                      {"rl.steps", "40"},
                                                      {"rl.regularizer", "kl"},
                                                      {"beta", "0.3"},
                                                      {"latent_dim", "4"},
                                                      {"shrinkage", "0.05"},
                                                      {"epochs", "2"}});
  EXPECT_EQ(c.world.seed, 5u);
  EXPECT_EQ(c.world.pool_size, 12);
  EXPECT_DOUBLE_EQ(c.world.exploit_rate, WorldConfig::hacking_preset().exploit_rate);
  EXPECT_EQ(c.rl.steps, 40);
  EXPECT_EQ(c.rl.regularizer, Regularizer::Kl);
  EXPECT_DOUBLE_EQ(c.beta, 0.3);
  EXPECT_EQ(c.latent_dim, 4);
  EXPECT_DOUBLE_EQ(c.fit.shrinkage, 0.05);
  EXPECT_EQ(c.train.epochs, 2);

  const ExperimentConfig d = parse_experiment_config({});
  EXPECT_EQ(d.n_train_pairs, ExperimentConfig{}.n_train_pairs);
  EXPECT_DOUBLE_EQ(d.fit.shrinkage, 1e-2);
}

TEST(ExperimentConfigFile, Errors) {
  EXPECT_THROW(parse_experiment_config({{"steps", "4"}}), std::invalid_argument);
  EXPECT_THROW(parse_experiment_config({{"rl.bogus", "4"}}), std::invalid_argument);
  EXPECT_THROW(parse_experiment_config({{"beta", "-1"}}), std::invalid_argument);
  EXPECT_THROW(parse_experiment_config({{"n_sft_samples", "8"}}), std::invalid_argument);
}

TEST(KeyValueFile, MissingFileThrows) {
  EXPECT_THROW(read_key_values("/nonexistent/iblab.cfg"), std::runtime_error);
}

#include "iblab/synthworld.hpp"

#include "iblab/hashing.hpp"
#include "iblab/json_util.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <istream>
#include <ostream>

namespace iblab {
namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kEvalStream = 2;

}  // namespace

Vec WorldConfig::resolved_gold_weights() const {
  if (gold_weights.size() > 0) return gold_weights;
  return Vec::Constant(dim_relevant, 1.0 / std::sqrt(double(dim_relevant)));
}

Vec WorldConfig::resolved_ood_shift() const {
  if (ood_shift.size() > 0) return ood_shift;
  Vec s = Vec::Zero(feature_dim());
  s.tail(dim_spurious).setConstant(1.5);
  return s;
}

void WorldConfig::validate() const {
  if (n_prompts < 1 || n_eval_prompts < 1) {
    throw std::invalid_argument("world: prompt counts must be >= 1");
  }
  if (pool_size < 1) throw std::invalid_argument("world: pool_size must be >= 1");
  if (dim_relevant < 1 || dim_spurious < 1) {
    throw std::invalid_argument("world: dim_relevant and dim_spurious must be >= 1");
  }
  if (gold_weights.size() > 0) require_same_dim(gold_weights.size(), dim_relevant, "world gold_weights");
  if (ood_shift.size() > 0) require_same_dim(ood_shift.size(), feature_dim(), "world ood_shift");
  if (!(sft_temperature > 0) || !std::isfinite(sft_temperature)) {
    throw std::invalid_argument("world: sft_temperature must be > 0");
  }
  if (!(exploit_rate >= 0 && exploit_rate <= 1)) {
    throw std::invalid_argument("world: exploit_rate must be in [0,1]");
  }
  if (!std::isfinite(annotator_bias) || !std::isfinite(exploit_spurious_shift) ||
      !std::isfinite(exploit_relevant_shift) || !gold_weights.allFinite() ||
      !ood_shift.allFinite()) {
    throw std::invalid_argument("world: non-finite parameter");
  }
}

WorldConfig WorldConfig::hacking_preset() {
  WorldConfig cfg;
  cfg.exploit_rate = 0.1;
  return cfg;
}

nlohmann::json to_json(const WorldConfig& cfg) {
  return {
      {"n_prompts", cfg.n_prompts},
      {"n_eval_prompts", cfg.n_eval_prompts},
      {"pool_size", cfg.pool_size},
      {"dim_relevant", cfg.dim_relevant},
      {"dim_spurious", cfg.dim_spurious},
      {"gold_weights", vec_to_json(cfg.resolved_gold_weights())},
      {"annotator_bias", cfg.annotator_bias},
      {"sft_temperature", cfg.sft_temperature},
      {"ood_shift", vec_to_json(cfg.resolved_ood_shift())},
      {"exploit_rate", cfg.exploit_rate},
      {"exploit_spurious_shift", cfg.exploit_spurious_shift},
      {"exploit_relevant_shift", cfg.exploit_relevant_shift},
      {"seed", cfg.seed},
  };
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  WorldConfig cfg;
  cfg.n_prompts = j.at("n_prompts").get<int>();
  cfg.n_eval_prompts = j.at("n_eval_prompts").get<int>();
  cfg.pool_size = j.at("pool_size").get<int>();
  cfg.dim_relevant = j.at("dim_relevant").get<int>();
  cfg.dim_spurious = j.at("dim_spurious").get<int>();
  cfg.gold_weights = vec_from_json(j.at("gold_weights"));
  cfg.annotator_bias = j.at("annotator_bias").get<double>();
  cfg.sft_temperature = j.at("sft_temperature").get<double>();
  cfg.ood_shift = vec_from_json(j.at("ood_shift"));
  cfg.exploit_rate = j.at("exploit_rate").get<double>();
  cfg.exploit_spurious_shift = j.at("exploit_spurious_shift").get<double>();
  cfg.exploit_relevant_shift = j.at("exploit_relevant_shift").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

std::string config_hash(const WorldConfig& cfg) {
  return sha256_hex(to_json(cfg).dump());
}

const char* to_string(PoolSplit s) {
  switch (s) {
    case PoolSplit::Train:
      return "train";
    case PoolSplit::Eval:
      return "eval";
    case PoolSplit::Ood:
      return "ood";
  }
  return "?";
}

double gold_reward(const WorldConfig& cfg, const Vec& x) {
  require_same_dim(x.size(), cfg.feature_dim(), "gold_reward");
  return cfg.resolved_gold_weights().dot(x.head(cfg.dim_relevant));
}

double annotator_utility(const WorldConfig& cfg, const Vec& x) {
  return gold_reward(cfg, x) + cfg.annotator_bias * x(cfg.dim_relevant);
}

std::vector<ResponsePool> make_pools(const WorldConfig& cfg, PoolSplit split) {
  cfg.validate();
  const bool train = split == PoolSplit::Train;
  const int n = train ? cfg.n_prompts : cfg.n_eval_prompts;
  Rng rng(mix_seed(cfg.seed, train ? kTrainStream : kEvalStream));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Vec shift = cfg.resolved_ood_shift();
  std::vector<ResponsePool> pools(n);
  for (int p = 0; p < n; ++p) {
    pools[p].prompt_id = p;
    pools[p].features.reserve(cfg.pool_size);
    for (int i = 0; i < cfg.pool_size; ++i) {
      Vec x = standard_normal(cfg.feature_dim(), rng);
      if (cfg.exploit_rate > 0 && uni(rng) < cfg.exploit_rate) {
        x.head(cfg.dim_relevant).array() += cfg.exploit_relevant_shift;
        x(cfg.dim_relevant) += cfg.exploit_spurious_shift;
      }
      if (split == PoolSplit::Ood) x += shift;
      pools[p].features.push_back(std::move(x));
    }
  }
  return pools;
}

Vec sft_policy(const WorldConfig& cfg, const ResponsePool& pool) {
  if (!(cfg.sft_temperature > 0)) {
    throw std::invalid_argument("sft_policy: temperature must be > 0");
  }
  if (pool.features.empty()) throw std::invalid_argument("sft_policy: empty pool");
  Vec logits(pool.features.size());
  for (std::size_t i = 0; i < pool.features.size(); ++i) {
    logits(Index(i)) = gold_reward(cfg, pool.features[i]) / cfg.sft_temperature;
  }
  return softmax(logits);
}

Index sample_index(const Vec& probs, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u = uni(rng) * probs.sum();
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  // Rounding left u at the very top; return the last index with mass.
  for (Index i = probs.size(); i-- > 0;) {
    if (probs(i) > 0) return i;
  }
  throw std::invalid_argument("sample_index: no probability mass");
}

std::vector<PreferencePair> gen_preferences(const WorldConfig& cfg,
                                            const std::vector<ResponsePool>& pools,
                                            int n_pairs, Rng& rng) {
  if (pools.empty()) throw std::invalid_argument("gen_preferences: no pools");
  if (cfg.pool_size < 2) {
    throw std::invalid_argument("gen_preferences: pool_size must be >= 2");
  }
  if (n_pairs < 0) throw std::invalid_argument("gen_preferences: negative n_pairs");
  std::vector<Vec> policies;
  policies.reserve(pools.size());
  for (const auto& pool : pools) policies.push_back(sft_policy(cfg, pool));

  std::uniform_int_distribution<std::size_t> pick(0, pools.size() - 1);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<PreferencePair> pairs;
  pairs.reserve(n_pairs);
  for (int n = 0; n < n_pairs; ++n) {
    const std::size_t q = pick(rng);
    const Index a = sample_index(policies[q], rng);
    // Second draw from the same policy conditioned on differing from a.
    Vec rest = policies[q];
    rest(a) = 0.0;
    const Index b = rest.sum() > 0 ? sample_index(rest, rng) : (a + 1) % rest.size();
    const Vec& xa = pools[q].features[a];
    const Vec& xb = pools[q].features[b];
    const double gap = annotator_utility(cfg, xa) - annotator_utility(cfg, xb);
    const bool a_wins = uni(rng) < sigmoid(gap);
    pairs.push_back({a_wins ? xa : xb, a_wins ? xb : xa, pools[q].prompt_id});
  }
  return pairs;
}

void write_preferences_jsonl(std::ostream& out, const WorldConfig& cfg,
                             const std::vector<PreferencePair>& pairs) {
  out << nlohmann::json{{"world_config", to_json(cfg)}}.dump() << '\n';
  for (const auto& p : pairs) {
    out << nlohmann::json{{"prompt_id", p.prompt_id},
                          {"chosen", vec_to_json(p.chosen)},
                          {"rejected", vec_to_json(p.rejected)}}
               .dump()
        << '\n';
  }
  if (!out) throw std::runtime_error("write_preferences_jsonl: stream error");
}

PreferenceFile read_preferences_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("preference file: missing header line");
  }
  PreferenceFile file;
  const auto header = nlohmann::json::parse(line);
  if (!header.contains("world_config")) {
    throw std::runtime_error("preference file: header lacks world_config");
  }
  file.world = world_config_from_json(header.at("world_config"));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PreferencePair p{vec_from_json(j.at("chosen")), vec_from_json(j.at("rejected")),
                       j.at("prompt_id").get<int>()};
      require_same_dim(p.chosen.size(), file.world.feature_dim(), "preference pair");
      require_same_dim(p.rejected.size(), file.world.feature_dim(), "preference pair");
      file.pairs.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw std::runtime_error("preference file line " + std::to_string(lineno) + ": " +
                               e.what());
    }
  }
  return file;
}

nlohmann::json pools_to_json(const WorldConfig& cfg, PoolSplit split,
                             const std::vector<ResponsePool>& pools) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& pool : pools) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& x : pool.features) feats.push_back(vec_to_json(x));
    arr.push_back({{"prompt_id", pool.prompt_id}, {"features", feats}});
  }
  return {{"world_config", to_json(cfg)}, {"split", to_string(split)}, {"pools", arr}};
}

std::vector<ResponsePool> pools_from_json(const nlohmann::json& j) {
  std::vector<ResponsePool> pools;
  for (const auto& p : j.at("pools")) {
    ResponsePool pool;
    pool.prompt_id = p.at("prompt_id").get<int>();
    for (const auto& x : p.at("features")) pool.features.push_back(vec_from_json(x));
    pools.push_back(std::move(pool));
  }
  return pools;
}

}  // namespace iblab

#include "iblab/rlsim.hpp"

#include "iblab/text_util.hpp"

#include <cmath>
#include <istream>
#include <nlohmann/json.hpp>
#include <ostream>

namespace iblab {
namespace {

constexpr int kRlSchemaVersion = 1;

bool all_finite(const std::vector<Vec>& rows) {
  for (const auto& r : rows) {
    if (!r.allFinite()) return false;
  }
  return true;
}

template <typename T>
T parse_field(const std::string& key, const std::string& value) {
  const auto v = parse_number<T>(value);
  if (!v) throw std::invalid_argument("config key '" + key + "': bad value '" + value + "'");
  return *v;
}

struct EvalRow {
  double proxy = 0;
  double gold = 0;
  double mop = 0;
  double regularizer = 0;
};

Vec log_softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  return logits.array() - (m + std::log((logits.array() - m).exp().sum()));
}

double regularizer_term(const RlConfig& cfg, double penalty, double log_pi, double log_pi_sft) {
  switch (cfg.regularizer) {
    case Regularizer::None:
      return 0.0;
    case Regularizer::Ibl:
      return cfg.gamma * penalty;
    case Regularizer::Kl:
      if (!std::isfinite(log_pi_sft)) {
        throw std::invalid_argument("shaped_reward: kl needs a positive SFT probability");
      }
      return cfg.kl_coef * (log_pi - log_pi_sft);
  }
  throw std::logic_error("unknown regularizer");
}

EvalRow evaluate(const PolicyParams& policy, const std::vector<Vec>& probs,
                 const RlProblem& prob, const RlConfig& cfg, int step) {
  EvalRow row;
  const std::size_t n = prob.n_prompts();
  for (std::size_t q = 0; q < n; ++q) {
    const Vec& p = probs[q];
    if (std::abs(p.sum() - 1.0) > 1e-12) throw std::logic_error("policy row does not sum to 1");
    row.proxy += p.dot(prob.proxy[q]);
    row.gold += p.dot(prob.gold[q]);
    if (cfg.regularizer == Regularizer::None) continue;
    const Vec log_p = log_softmax(policy.logits[q]);
    for (Index i = 0; i < p.size(); ++i) {
      row.regularizer += p(i) * regularizer_term(cfg, prob.penalty[q](i), log_p(i),
                                                 std::log(prob.sft_probs[q](i)));
    }
  }
  row.proxy /= double(n);
  row.gold /= double(n);
  row.regularizer /= double(n);

  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  int flagged = 0;
  for (int s = 0; s < cfg.eval_samples; ++s) {
    const std::size_t q = pick(rng);
    const Index i = sample_index(probs[q], rng);
    flagged += prob.p_values[q](i) < cfg.mop_alpha;
  }
  row.mop = double(flagged) / double(cfg.eval_samples);
  return row;
}

}  // namespace

PolicyParams PolicyParams::from_probs(const std::vector<Vec>& probs) {
  PolicyParams p;
  p.logits.reserve(probs.size());
  for (const auto& r : probs) p.logits.push_back(r.array().log().matrix());
  return p;
}

std::vector<Vec> PolicyParams::probs() const {
  std::vector<Vec> out;
  out.reserve(logits.size());
  for (const auto& l : logits) out.push_back(softmax(l));
  return out;
}

void PolicyParams::validate() const {
  if (logits.empty()) throw std::invalid_argument("PolicyParams: no prompts");
  for (const auto& l : logits) {
    if (l.size() == 0) throw std::invalid_argument("PolicyParams: empty pool");
    if (!l.allFinite()) throw NumericError("PolicyParams: non-finite logits");
  }
}

PolicyParams sft_policy_params(const WorldConfig& world, const std::vector<ResponsePool>& pools) {
  std::vector<Vec> probs;
  probs.reserve(pools.size());
  for (const auto& pool : pools) probs.push_back(sft_policy(world, pool));
  return PolicyParams::from_probs(probs);
}

const char* to_string(Regularizer r) {
  switch (r) {
    case Regularizer::None: return "none";
    case Regularizer::Kl: return "kl";
    case Regularizer::Ibl: return "ibl";
  }
  return "?";
}

Regularizer regularizer_from_string(const std::string& s) {
  if (s == "none") return Regularizer::None;
  if (s == "kl") return Regularizer::Kl;
  if (s == "ibl") return Regularizer::Ibl;
  throw std::invalid_argument("unknown regularizer '" + s + "'");
}

const char* to_string(StopReason s) {
  switch (s) {
    case StopReason::Completed: return "completed";
    case StopReason::EarlyStopMop: return "early_stop_mop";
    case StopReason::Diverged: return "diverged";
  }
  return "?";
}

void RlConfig::validate() const {
  if (!(gamma >= 0)) throw std::invalid_argument("RlConfig: gamma must be >= 0");
  if (!(kl_coef >= 0)) throw std::invalid_argument("RlConfig: kl_coef must be >= 0");
  if (steps < 0) throw std::invalid_argument("RlConfig: steps must be >= 0");
  if (!std::isfinite(lr)) throw std::invalid_argument("RlConfig: lr must be finite");
  if (eval_every < 1) throw std::invalid_argument("RlConfig: eval_every must be >= 1");
  if (eval_samples < 1) throw std::invalid_argument("RlConfig: eval_samples must be >= 1");
  if (!(mop_alpha > 0 && mop_alpha < 1)) {
    throw std::invalid_argument("RlConfig: mop_alpha must be in (0,1)");
  }
  if (early_stop_mop && !(*early_stop_mop >= 0 && *early_stop_mop <= 1)) {
    throw std::invalid_argument("RlConfig: early_stop_mop must be in [0,1]");
  }
}

std::map<std::string, std::string> parse_key_values(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s(line);
    s = trim(s.substr(0, s.find('#')));
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key(trim(s.substr(0, eq)));
    const std::string value(trim(s.substr(eq + 1)));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    if (!kv.emplace(key, value).second) throw std::invalid_argument("config key '" + key + "': duplicate");
  }
  return kv;
}

RlConfig parse_rl_config(const std::map<std::string, std::string>& kv) {
  RlConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "schema") {
      if (parse_field<int>(key, value) != kRlSchemaVersion) {
        throw std::invalid_argument("config key 'schema': unsupported version " + value);
      }
    } else if (key == "regularizer") {
      cfg.regularizer = regularizer_from_string(value);
    } else if (key == "gamma") {
      cfg.gamma = parse_field<double>(key, value);
    } else if (key == "kl_coef") {
      cfg.kl_coef = parse_field<double>(key, value);
    } else if (key == "steps") {
      cfg.steps = parse_field<int>(key, value);
    } else if (key == "lr") {
      cfg.lr = parse_field<double>(key, value);
    } else if (key == "eval_every") {
      cfg.eval_every = parse_field<int>(key, value);
    } else if (key == "eval_samples") {
      cfg.eval_samples = parse_field<int>(key, value);
    } else if (key == "mop_alpha") {
      cfg.mop_alpha = parse_field<double>(key, value);
    } else if (key == "early_stop_mop") {
      if (value == "none" || value.empty()) {
        cfg.early_stop_mop.reset();
      } else {
        cfg.early_stop_mop = parse_field<double>(key, value);
      }
    } else if (key == "seed") {
      cfg.seed = parse_field<std::uint64_t>(key, value);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

RlConfig parse_rl_config(std::istream& in) { return parse_rl_config(parse_key_values(in)); }

void write_rl_config(std::ostream& out, const RlConfig& cfg) {
  out << "schema = " << kRlSchemaVersion << '\n'
      << "regularizer = " << to_string(cfg.regularizer) << '\n'
      << "gamma = " << format_double(cfg.gamma) << '\n'
      << "kl_coef = " << format_double(cfg.kl_coef) << '\n'
      << "steps = " << cfg.steps << '\n'
      << "lr = " << format_double(cfg.lr) << '\n'
      << "eval_every = " << cfg.eval_every << '\n'
      << "eval_samples = " << cfg.eval_samples << '\n'
      << "mop_alpha = " << format_double(cfg.mop_alpha) << '\n'
      << "early_stop_mop = "
      << (cfg.early_stop_mop ? format_double(*cfg.early_stop_mop) : std::string("none")) << '\n'
      << "seed = " << cfg.seed << '\n';
}

nlohmann::json to_json(const RlConfig& cfg) {
  nlohmann::json j = {{"schema", kRlSchemaVersion},
                      {"regularizer", to_string(cfg.regularizer)},
                      {"gamma", cfg.gamma},
                      {"kl_coef", cfg.kl_coef},
                      {"steps", cfg.steps},
                      {"lr", cfg.lr},
                      {"eval_every", cfg.eval_every},
                      {"eval_samples", cfg.eval_samples},
                      {"mop_alpha", cfg.mop_alpha},
                      {"seed", cfg.seed}};
  j["early_stop_mop"] = cfg.early_stop_mop ? nlohmann::json(*cfg.early_stop_mop) : nlohmann::json();
  return j;
}

void RlRunRecord::check() const {
  const std::size_t n = step.size();
  if (proxy_reward.size() != n || gold_reward.size() != n || mop.size() != n ||
      regularizer_mean.size() != n) {
    throw std::logic_error("RlRunRecord: series lengths differ");
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (step[i] <= step[i - 1]) throw std::logic_error("RlRunRecord: steps not increasing");
  }
  if (n > 0 && returned_row >= n) throw std::logic_error("RlRunRecord: returned_row out of range");
}

void write_record_csv(std::ostream& out, const RlRunRecord& rec) {
  out << "step,proxy_reward,gold_reward,mop,regularizer_mean\n";
  for (std::size_t i = 0; i < rec.size(); ++i) {
    out << rec.step[i] << ',' << format_double(rec.proxy_reward[i]) << ','
        << format_double(rec.gold_reward[i]) << ',' << format_double(rec.mop[i]) << ','
        << format_double(rec.regularizer_mean[i]) << '\n';
  }
}

nlohmann::json to_json(const RlRunRecord& rec) {
  return {{"step", rec.step},
          {"proxy_reward", rec.proxy_reward},
          {"gold_reward", rec.gold_reward},
          {"mop", rec.mop},
          {"regularizer_mean", rec.regularizer_mean},
          {"stop_reason", to_string(rec.stop_reason)},
          {"returned_row", rec.returned_row}};
}

double ibl_penalty(const Vec& x, const InfoRm& m, const LatentStats& stats) {
  return mahalanobis(encode(m, x).mu, stats.mean, stats.chol);
}

double shaped_reward(double proxy, const RlConfig& cfg, double penalty, double pi, double pi_sft) {
  if (cfg.regularizer != Regularizer::Kl) return proxy - regularizer_term(cfg, penalty, 0, 0);
  if (!(pi > 0)) throw std::invalid_argument("shaped_reward: kl needs pi > 0");
  return proxy - regularizer_term(cfg, penalty, std::log(pi), std::log(pi_sft));
}

Objective exact_objective_and_grad(const PolicyParams& policy, const std::vector<Vec>& rewards) {
  if (rewards.size() != policy.logits.size()) {
    throw DimensionError("exact_objective_and_grad: prompt count mismatch");
  }
  if (!all_finite(rewards)) throw NumericError("exact_objective_and_grad: non-finite rewards");
  const double n = double(rewards.size());
  Objective out;
  out.grad.reserve(rewards.size());
  for (std::size_t q = 0; q < rewards.size(); ++q) {
    require_same_dim(rewards[q].size(), policy.logits[q].size(), "exact_objective_and_grad");
    const Vec p = softmax(policy.logits[q]);
    const double ref = rewards[q](0);
    const Vec centered = rewards[q].array() - ref;
    const double excess = p.dot(centered);
    out.value += (ref + excess) / n;
    out.grad.push_back((p.array() * (centered.array() - excess)).matrix() / n);
  }
  return out;
}

RewardFn reward_fn(const StandardRm& m) {
  return [m](const Vec& x) { return m.reward(x); };
}

RewardFn reward_fn(const InfoRm& m) {
  return [m](const Vec& x) { return inform_reward(m, x); };
}

RlProblem tabulate(const WorldConfig& world, const std::vector<ResponsePool>& pools,
                   const RewardFn& proxy, const InfoRm& detector, const LatentStats& stats) {
  if (pools.empty()) throw std::invalid_argument("tabulate: no pools");
  RlProblem prob;
  for (const auto& pool : pools) {
    const Index n = static_cast<Index>(pool.features.size());
    Vec r(n), g(n), pen(n), pv(n);
    for (Index i = 0; i < n; ++i) {
      const Vec& x = pool.features[i];
      r(i) = proxy(x);
      g(i) = gold_reward(world, x);
      const double d2 = mahalanobis_squared(encode(detector, x).mu, stats.mean, stats.chol);
      pen(i) = std::sqrt(d2);
      pv(i) = p_value(d2, stats.dim());
    }
    if (!r.allFinite()) throw NumericError("tabulate: non-finite proxy reward");
    prob.proxy.push_back(std::move(r));
    prob.gold.push_back(std::move(g));
    prob.penalty.push_back(std::move(pen));
    prob.p_values.push_back(std::move(pv));
    prob.sft_probs.push_back(sft_policy(world, pool));
  }
  return prob;
}

RlResult run_rl(const PolicyParams& policy0, const RlProblem& problem, const RlConfig& cfg) {
  cfg.validate();
  policy0.validate();
  if (policy0.logits.size() != problem.n_prompts()) {
    throw DimensionError("run_rl: policy and problem prompt counts differ");
  }
  PolicyParams policy = policy0;
  PolicyParams last_ok = policy0;
  RlRunRecord rec;
  const std::size_t n = problem.n_prompts();
  std::vector<Vec> shaped(n);

  for (int t = 0;; ++t) {
    const std::vector<Vec> probs = policy.probs();
    if (t % cfg.eval_every == 0 || t == cfg.steps) {
      const EvalRow row = evaluate(policy, probs, problem, cfg, t);
      rec.step.push_back(t);
      rec.proxy_reward.push_back(row.proxy);
      rec.gold_reward.push_back(row.gold);
      rec.mop.push_back(row.mop);
      rec.regularizer_mean.push_back(row.regularizer);
      if (cfg.early_stop_mop && row.mop > *cfg.early_stop_mop) {
        rec.stop_reason = StopReason::EarlyStopMop;
        rec.check();
        return {std::move(last_ok), std::move(rec)};
      }
      last_ok = policy;
      rec.returned_row = rec.size() - 1;
    }
    if (t == cfg.steps) break;

    for (std::size_t q = 0; q < n; ++q) {
      const Vec log_p = cfg.regularizer == Regularizer::Kl ? log_softmax(policy.logits[q]) : Vec();
      Vec r(probs[q].size());
      for (Index i = 0; i < r.size(); ++i) {
        const double lp = log_p.size() ? log_p(i) : 0.0;
        const double lsft = log_p.size() ? std::log(problem.sft_probs[q](i)) : 0.0;
        r(i) = problem.proxy[q](i) - regularizer_term(cfg, problem.penalty[q](i), lp, lsft);
      }
      shaped[q] = std::move(r);
    }
    if (!all_finite(shaped)) {
      rec.stop_reason = StopReason::Diverged;
      break;
    }
    const Objective obj = exact_objective_and_grad(policy, shaped);
    for (std::size_t q = 0; q < n; ++q) policy.logits[q] += cfg.lr * obj.grad[q];
    if (!all_finite(policy.logits)) {
      rec.stop_reason = StopReason::Diverged;
      break;
    }
  }
  rec.check();
  return {rec.stop_reason == StopReason::Diverged ? std::move(last_ok) : std::move(policy),
          std::move(rec)};
}

RlResult run_rl(const PolicyParams& policy0, const WorldConfig& world,
                const std::vector<ResponsePool>& pools, const RewardFn& proxy,
                const RlConfig& cfg, const InfoRm& detector, const LatentStats& stats) {
  return run_rl(policy0, tabulate(world, pools, proxy, detector, stats), cfg);
}

}  // namespace iblab

#include "commands.hpp"

#include "iblab/config.hpp"
#include "iblab/detector.hpp"
#include "iblab/experiment.hpp"
#include "iblab/pessimism.hpp"
#include "iblab/rewardmodels.hpp"
#include "iblab/rlsim.hpp"
#include "iblab/synthworld.hpp"
#include "iblab/text_util.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace iblab::cli {
namespace {

std::ifstream open_input(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return in;
}

PreferenceFile load_pairs(const fs::path& p) {
  auto in = open_input(p);
  return read_preferences_jsonl(in);
}

nlohmann::json load_json(const fs::path& p) {
  auto in = open_input(p);
  return nlohmann::json::parse(in);
}

int take_count(KeyValues& kv, const std::string& key, int fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = parse_number<int>(it->second);
  if (!v || *v < 0) throw std::invalid_argument("config key '" + key + "': bad value '" + it->second + "'");
  kv.erase(it);
  return *v;
}

std::string pairs_jsonl(const WorldConfig& w, const std::vector<PreferencePair>& pairs) {
  std::ostringstream ss;
  write_preferences_jsonl(ss, w, pairs);
  return ss.str();
}

std::string latents_binary(const std::vector<Vec>& rows) {
  std::ostringstream ss(std::ios::binary);
  write_latents_binary(ss, rows);
  return ss.str();
}

std::string record_csv(const RlRunRecord& rec) {
  std::ostringstream ss;
  write_record_csv(ss, rec);
  return ss.str();
}

double peak(const std::vector<double>& v) { return *std::max_element(v.begin(), v.end()); }

void check_kind(const CheckpointInfo& info, const std::string& want, const fs::path& p) {
  if (info.kind != want) {
    throw std::invalid_argument(p.string() + " holds a " + info.kind + " model, need " + want);
  }
}

RewardFn load_reward_fn(const fs::path& p) {
  const CheckpointInfo info = read_checkpoint_info(p);
  if (info.kind == "standard") return reward_fn(load_standard_rm(p));
  return reward_fn(load_inform(p));
}

}  // namespace

void Context::add_input(const fs::path& p) { inputs.push_back(fs::absolute(p)); }

fs::path Context::output(const std::string& name) {
  const fs::path p = out_dir / name;
  fs::create_directories(p.parent_path());
  outputs.push_back(p);
  return p;
}

void Context::write_text(const std::string& name, const std::string& text) {
  const fs::path p = output(name);
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

void Context::write_json(const std::string& name, const nlohmann::json& j) {
  write_text(name, j.dump(2) + "\n");
}

void gen_data(const GenDataOptions& o, Context& ctx) {
  ctx.add_input(o.config);
  KeyValues kv = read_key_values(o.config);
  const int n_train = take_count(kv, "n_train_pairs", 20000);
  const int n_eval = take_count(kv, "n_eval_pairs", 2000);
  const int n_ood = take_count(kv, "n_ood_pairs", 2000);
  const WorldConfig w = parse_world_config(kv);
  ctx.seed = w.seed;
  ctx.config = {{"world", to_json(w)},
                {"n_train_pairs", n_train},
                {"n_eval_pairs", n_eval},
                {"n_ood_pairs", n_ood}};

  nlohmann::json pools_doc;
  const struct {
    PoolSplit split;
    int n;
    std::uint64_t stream;
  } splits[] = {{PoolSplit::Train, n_train, streams::kTrainPairs},
                {PoolSplit::Eval, n_eval, streams::kEvalPairs},
                {PoolSplit::Ood, n_ood, streams::kOodPairs}};
  for (const auto& s : splits) {
    const auto pools = make_pools(w, s.split);
    Rng rng(mix_seed(w.seed, s.stream));
    const auto pairs = gen_preferences(w, pools, s.n, rng);
    ctx.write_text(std::string(to_string(s.split)) + ".jsonl", pairs_jsonl(w, pairs));
    pools_doc[to_string(s.split)] = pools_to_json(w, s.split, pools);
  }
  ctx.write_json("pools.json", pools_doc);
  std::ostringstream cfg;
  write_world_config(cfg, w);
  ctx.write_text("world.cfg", cfg.str());
  *ctx.log << "gen-data: " << n_train << "/" << n_eval << "/" << n_ood
           << " train/eval/ood pairs, world hash " << config_hash(w).substr(0, 12) << '\n';
}

void train_rm(const TrainRmOptions& o, Context& ctx) {
  if (o.kind != "standard" && o.kind != "inform") {
    throw std::invalid_argument("--kind must be standard or inform");
  }
  ctx.add_input(o.data);
  const PreferenceFile data = load_pairs(o.data);
  const std::uint64_t seed = o.seed.value_or(data.world.seed);
  const bool standard = o.kind == "standard";
  const std::uint64_t tag = mix_seed(seed, standard ? streams::kStandardInit : streams::kInformInit);
  const TrainConfig tc{o.epochs, o.batch, o.lr, tag};
  ctx.seed = seed;
  ctx.config = {{"kind", o.kind}, {"epochs", o.epochs}, {"batch", o.batch}, {"lr", o.lr}};
  if (!standard) {
    ctx.config["beta"] = o.beta;
    ctx.config["latent_dim"] = o.latent_dim;
  }

  const int m = data.world.feature_dim();
  const std::string hash = config_hash(data.world);
  const std::string ckpt = o.kind + ".ckpt";
  Rng init(tag);
  std::vector<double> curve;
  double accuracy = 0;
  try {
    if (standard) {
      const auto t = iblab::train_rm(StandardRm::init(m, init), data.pairs, tc);
      save_checkpoint(ctx.output(ckpt), t.model, hash);
      curve = t.loss_curve;
      accuracy = pairwise_accuracy(t.model, data.pairs);
    } else {
      const auto t = iblab::train_rm(InfoRm::init(m, o.latent_dim, o.beta, init), data.pairs, tc);
      save_checkpoint(ctx.output(ckpt), t.model, hash);
      curve = t.loss_curve;
      accuracy = pairwise_accuracy(t.model, data.pairs);
    }
  } catch (const TrainingDiverged& e) {
    throw Diverged(e.what());
  }
  ctx.output(ckpt + ".json");

  std::string csv = "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(curve[i]) + "\n";
  }
  ctx.write_text(o.kind + "_loss.csv", csv);
  const double final_loss = curve.empty() ? 0.0 : curve.back();
  ctx.write_json(o.kind + "_loss.json", {{"kind", o.kind},
                                         {"steps", curve.size()},
                                         {"final_loss", final_loss},
                                         {"train_accuracy", accuracy},
                                         {"loss_curve", curve}});
  *ctx.log << "train-rm: " << o.kind << " final batch loss " << final_loss << ", train accuracy "
           << accuracy << '\n';
}

void eval_rm(const EvalRmOptions& o, Context& ctx) {
  ctx.add_input(o.checkpoint);
  ctx.add_input(o.pairs);
  const CheckpointInfo info = read_checkpoint_info(o.checkpoint);
  const PreferenceFile data = load_pairs(o.pairs);
  const double acc = info.kind == "standard"
                         ? pairwise_accuracy(load_standard_rm(o.checkpoint), data.pairs)
                         : pairwise_accuracy(load_inform(o.checkpoint), data.pairs);
  const bool same_world = info.world_hash == config_hash(data.world);
  ctx.config = {{"kind", info.kind}};
  const std::string stem = "eval_" + o.pairs.stem().string();
  ctx.write_json(stem + ".json", {{"kind", info.kind},
                                  {"pairs", o.pairs.filename().string()},
                                  {"n", data.pairs.size()},
                                  {"accuracy", acc},
                                  {"same_world", same_world}});
  ctx.write_text(stem + ".csv", "kind,n,accuracy\n" + info.kind + "," +
                                    std::to_string(data.pairs.size()) + "," + format_double(acc) +
                                    "\n");
  *ctx.log << "eval-rm: " << info.kind << " accuracy " << acc << " on " << data.pairs.size()
           << " pairs\n";
}

void detect(const DetectOptions& o, Context& ctx) {
  if (o.sft.has_value() == o.sft_pools.has_value()) {
    throw std::invalid_argument("give exactly one of --sft and --sft-pools");
  }
  ctx.add_input(o.checkpoint);
  check_kind(read_checkpoint_info(o.checkpoint), "inform", o.checkpoint);
  const InfoRm m = load_inform(o.checkpoint);

  std::vector<Vec> sft_latents;
  if (o.sft) {
    ctx.add_input(*o.sft);
    sft_latents = extract_latents(m, load_latents(*o.sft));
  } else {
    ctx.add_input(*o.sft_pools);
    const nlohmann::json split = load_json(*o.sft_pools).at("eval");
    const WorldConfig world = world_config_from_json(split.at("world_config"));
    Rng rng(mix_seed(o.seed.value_or(world.seed), streams::kSftSamples));
    sft_latents = sample_sft_latents(world, pools_from_json(split), m, o.n_sft, rng);
    ctx.seed = o.seed.value_or(world.seed);
  }
  ctx.add_input(o.rlhf);
  const std::vector<Vec> rlhf_latents = extract_latents(m, load_latents(o.rlhf));

  const FitOptions fit{o.shrinkage, o.filter_quantile, true};
  const LatentStats stats = fit_sft_stats(sft_latents, fit);
  const DetectionReport rep = iblab::detect(rlhf_latents, stats, o.alpha);
  ctx.config = {{"alpha", o.alpha},
                {"shrinkage", o.shrinkage},
                {"filter_quantile", o.filter_quantile},
                {"n_sft", sft_latents.size()}};

  nlohmann::json doc = to_json(rep);
  doc["stats"] = to_json(stats);
  ctx.write_json("detection.json", doc);
  std::string csv = "index,d2,p_value,flag\n";
  for (std::size_t i = 0; i < rep.d2.size(); ++i) {
    csv += std::to_string(i) + "," + format_double(rep.d2[i]) + "," +
           format_double(rep.p_values[i]) + "," + (rep.flags[i] ? "1" : "0") + "\n";
  }
  ctx.write_text("detection.csv", csv);
  ctx.write_text("sft_latents.bin", latents_binary(sft_latents));
  ctx.write_text("rlhf_latents.bin", latents_binary(rlhf_latents));
  *ctx.log << "detect: MOP " << rep.mop << " (" << rep.d2.size() << " samples, alpha "
           << o.alpha << ")\n";
}

void rl_run(const RlRunOptions& o, Context& ctx) {
  ctx.add_input(o.rm);
  ctx.add_input(o.detector);
  ctx.add_input(o.pools);
  RlConfig cfg;
  if (o.config) {
    ctx.add_input(*o.config);
    cfg = parse_rl_config(read_key_values(*o.config));
  }
  const nlohmann::json split = load_json(o.pools).at(o.split);
  const WorldConfig world = world_config_from_json(split.at("world_config"));
  const auto pools = pools_from_json(split);
  const RewardFn proxy = load_reward_fn(o.rm);
  check_kind(read_checkpoint_info(o.detector), "inform", o.detector);
  const InfoRm detector = load_inform(o.detector);

  std::vector<Vec> sft_probs;
  for (const auto& p : pools) sft_probs.push_back(sft_policy(world, p));
  Rng sft_rng(mix_seed(world.seed, streams::kSftSamples));
  const auto sft_samples = sample_responses(pools, sft_probs, o.n_sft, sft_rng);
  const LatentStats stats =
      fit_sft_stats(extract_latents(detector, sft_samples), {o.shrinkage, o.filter_quantile, true});

  const RlResult res = run_rl(PolicyParams::from_probs(sft_probs), world, pools, proxy, cfg,
                              detector, stats);
  ctx.seed = cfg.seed;
  ctx.config = {{"rl", to_json(cfg)},
                {"split", o.split},
                {"n_sft", o.n_sft},
                {"shrinkage", o.shrinkage},
                {"filter_quantile", o.filter_quantile},
                {"n_policy_samples", o.n_policy_samples}};

  ctx.write_text("record.csv", record_csv(res.record));
  nlohmann::json doc = to_json(res.record);
  doc["config"] = to_json(cfg);
  ctx.write_json("record.json", doc);
  Rng policy_rng(mix_seed(cfg.seed, streams::kPolicySamples));
  ctx.write_text("sft_samples.bin", latents_binary(sft_samples));
  ctx.write_text("policy_samples.bin",
                 latents_binary(sample_responses(pools, res.policy.probs(), o.n_policy_samples,
                                                 policy_rng)));
  const RlRunRecord& r = res.record;
  *ctx.log << "rl-run: " << to_string(r.stop_reason) << " after step " << r.step.back()
           << "; gold " << r.gold_reward.front() << " -> " << r.gold_reward[r.returned_row]
           << ", MOP " << r.mop.front() << " -> " << r.mop[r.returned_row] << '\n';
  if (r.stop_reason == StopReason::Diverged) {
    throw Diverged("policy logits became non-finite after step " + std::to_string(r.step.back()));
  }
}

void pessimism_check(const PessimismOptions& o, Context& ctx) {
  if (o.seeds.empty()) throw std::invalid_argument("--seeds must not be empty");
  nlohmann::json reports = nlohmann::json::array();
  std::string csv = "seed,instance,dim,closed,numeric,deviation,kernel_gap\n";
  double worst = 0;
  for (std::uint64_t seed : o.seeds) {
    PessimismCheckConfig cfg;
    cfg.max_dim = o.dim;
    cfg.B = o.B;
    cfg.instances = o.instances;
    cfg.n_iters = o.iters;
    cfg.sigma_pairs = o.pairs;
    cfg.seed = seed;
    const PessimismReport rep = run_pessimism_check(cfg);
    worst = std::max(worst, rep.max_deviation);
    for (std::size_t i = 0; i < rep.instances.size(); ++i) {
      const auto& in = rep.instances[i];
      csv += std::to_string(seed) + "," + std::to_string(i) + "," + std::to_string(in.dim) + "," +
             format_double(in.closed) + "," + format_double(in.numeric) + "," +
             format_double(std::abs(in.closed - in.numeric)) + "," +
             format_double(in.kernel_gap) + "\n";
    }
    reports.push_back(to_json(rep));
  }
  ctx.seed = o.seeds.front();
  ctx.config = {{"dim", o.dim},     {"B", o.B},          {"seeds", o.seeds},
                {"instances", o.instances}, {"iters", o.iters}, {"pairs", o.pairs}};
  ctx.write_json("pessimism.json", {{"max_deviation", worst}, {"reports", reports}});
  ctx.write_text("pessimism.csv", csv);
  *ctx.log << "pessimism-check: max |closed - numeric| = " << worst << '\n';
}

void sweep(const SweepOptions& o, Context& ctx) {
  if (o.param != "beta" && o.param != "gamma") {
    throw std::invalid_argument("--param must be beta or gamma");
  }
  if (o.grid.empty()) throw std::invalid_argument("--grid must not be empty");
  if (o.seeds < 1) throw std::invalid_argument("--seeds must be >= 1");
  ExperimentConfig base;
  if (o.config) {
    ctx.add_input(*o.config);
    base = parse_experiment_config(read_key_values(*o.config));
  }
  ctx.config = {{"param", o.param}, {"grid", o.grid}, {"seeds", o.seeds}, {"base", to_json(base)}};

  const bool gamma = o.param == "gamma";
  std::vector<std::optional<SeedModels>> shared(o.seeds);
  if (gamma) {
    for (int s = 0; s < o.seeds; ++s) shared[s] = prepare_seed(base, s, false);
  }
  std::string csv = "param,value,final_gold,final_mop,peak_mop\n";
  nlohmann::json rows = nlohmann::json::array();
  bool diverged = false;
  for (std::size_t i = 0; i < o.grid.size(); ++i) {
    const double value = o.grid[i];
    double gold = 0, mop = 0, peak_mop = 0;
    nlohmann::json per_seed = nlohmann::json::array();
    for (int s = 0; s < o.seeds; ++s) {
      RlConfig rl = base.rl;
      rl.seed = s;
      RlRunRecord rec;
      try {
        if (gamma) {
          rl.regularizer = Regularizer::Ibl;
          rl.gamma = value;
          rec = run_arm(*shared[s], ProxyKind::Inform, rl).record;
        } else {
          ExperimentConfig cfg = base;
          cfg.beta = value;
          rec = run_arm(prepare_seed(cfg, s, false), ProxyKind::Inform, rl).record;
        }
      } catch (const std::exception& e) {
        throw std::runtime_error("grid index " + std::to_string(i) + " (" + o.param + " = " +
                                 format_double(value) + "), seed " + std::to_string(s) + ": " +
                                 e.what());
      }
      diverged = diverged || rec.stop_reason == StopReason::Diverged;
      const std::size_t last = rec.returned_row;
      gold += rec.gold_reward[last] / o.seeds;
      mop += rec.mop[last] / o.seeds;
      peak_mop += peak(rec.mop) / o.seeds;
      per_seed.push_back({{"seed", s},
                          {"final_gold", rec.gold_reward[last]},
                          {"final_mop", rec.mop[last]},
                          {"peak_mop", peak(rec.mop)},
                          {"stop_reason", to_string(rec.stop_reason)}});
      ctx.write_text("runs/" + o.param + "_" + std::to_string(i) + "_seed_" + std::to_string(s) +
                         ".csv",
                     record_csv(rec));
    }
    csv += o.param + "," + format_double(value) + "," + format_double(gold) + "," +
           format_double(mop) + "," + format_double(peak_mop) + "\n";
    rows.push_back({{"value", value},
                    {"final_gold", gold},
                    {"final_mop", mop},
                    {"peak_mop", peak_mop},
                    {"seeds", per_seed}});
    *ctx.log << "sweep: " << o.param << " = " << value << ": gold " << gold << ", final MOP "
             << mop << '\n';
  }
  ctx.write_text("sweep.csv", csv);
  ctx.write_json("sweep.json", {{"param", o.param}, {"rows", rows}});
  if (diverged) throw Diverged("at least one sweep run diverged");
}

}  // namespace iblab::cli

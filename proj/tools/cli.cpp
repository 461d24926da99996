#include "cli.hpp"

#include "commands.hpp"

#include "iblab/hashing.hpp"
#include "iblab/numkit.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>

namespace iblab::cli {
namespace {

constexpr int kManifestSchema = 1;

std::string absolute_path(const std::string& s) { return fs::absolute(s).lexically_normal().string(); }

CLI::Option* add_path(CLI::App* app, const std::string& name, fs::path& target,
                      const std::string& desc) {
  return app->add_option(name, target, desc)->transform(absolute_path);
}

CLI::Option* add_path(CLI::App* app, const std::string& name, std::optional<fs::path>& target,
                      const std::string& desc) {
  return app->add_option(name, target, desc)->transform(absolute_path);
}

/// The chosen subcommand's options as flags with their (absolutized) values,
/// leaving out --out so a replay can redirect it.
std::vector<std::string> canonical_args(const CLI::App* sub) {
  std::vector<std::string> args;
  for (const CLI::Option* opt : sub->get_options()) {
    if (opt->count() == 0 || opt->get_single_name() == "out" || opt->get_single_name() == "help") {
      continue;
    }
    args.push_back("--" + opt->get_single_name());
    for (const auto& r : opt->results()) args.push_back(r);
  }
  return args;
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv(kOutputRootEnv);
  return fs::path(root && *root ? root : "iblab-out") / command;
}

void write_manifest(const Context& ctx, const std::vector<std::string>& args, double seconds) {
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& p : ctx.inputs) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& p : ctx.outputs) {
    outputs.push_back({{"path", fs::relative(p, ctx.out_dir).generic_string()},
                       {"sha256", sha256_file(p)}});
  }
  const nlohmann::json m = {{"schema", kManifestSchema},
                            {"command", ctx.command},
                            {"args", args},
                            {"config", ctx.config},
                            {"seed", ctx.seed},
                            {"output_dir", fs::absolute(ctx.out_dir).string()},
                            {"inputs", inputs},
                            {"outputs", outputs},
                            {"wall_clock_seconds", seconds}};
  std::ofstream out(ctx.out_dir / (ctx.command + ".manifest.json"));
  out << m.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write manifest in " + ctx.out_dir.string());
}

int replay(const fs::path& manifest_path, const std::optional<fs::path>& out_dir,
           std::ostream& out, std::ostream& err) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  const nlohmann::json m = nlohmann::json::parse(in);
  if (m.at("schema").get<int>() != kManifestSchema) {
    throw std::invalid_argument("unsupported manifest schema");
  }
  for (const auto& input : m.at("inputs")) {
    const fs::path p = input.at("path").get<std::string>();
    if (!fs::exists(p)) throw std::runtime_error("replay input missing: " + p.string());
    if (sha256_file(p) != input.at("sha256").get<std::string>()) {
      throw std::invalid_argument("replay input changed since the manifest was written: " + p.string());
    }
  }
  const std::string command = m.at("command").get<std::string>();
  const fs::path target = out_dir.value_or(manifest_path.parent_path() / ("replay-" + command));
  std::vector<std::string> args{command};
  for (const auto& a : m.at("args")) args.push_back(a.get<std::string>());
  args.push_back("--out");
  args.push_back(target.string());
  const int code = run(args, out, err);
  if (code != kOk && code != kDiverged) return code;

  int differing = 0;
  for (const auto& o : m.at("outputs")) {
    const std::string rel = o.at("path").get<std::string>();
    const fs::path p = target / rel;
    const bool same = fs::exists(p) && sha256_file(p) == o.at("sha256").get<std::string>();
    out << (same ? "identical " : "DIFFERS   ") << rel << '\n';
    differing += !same;
  }
  out << "replay: " << m.at("outputs").size() - differing << "/" << m.at("outputs").size()
      << " outputs bit-identical\n";
  return differing == 0 ? kOk : kFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Information-bottleneck reward model laboratory", "iblab"};
  app.require_subcommand(1);
  std::optional<fs::path> out_dir;
  std::function<void(Context&)> action;

  auto sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    add_path(s, "--out", out_dir, "Output directory (default $IBLAB_OUTPUT_ROOT/<command>)");
    return s;
  };

  GenDataOptions gen;
  CLI::App* gen_cmd = sub("gen-data", "Generate preference data and response pools");
  add_path(gen_cmd, "--config", gen.config, "World config (key = value)")->required();
  gen_cmd->callback([&] { action = [&](Context& c) { gen_data(gen, c); }; });

  TrainRmOptions tr;
  CLI::App* tr_cmd = sub("train-rm", "Train a standard or InfoRM reward model");
  tr_cmd->add_option("--kind", tr.kind, "standard or inform")
      ->required()
      ->check(CLI::IsMember({"standard", "inform"}));
  add_path(tr_cmd, "--data", tr.data, "Training preference JSONL")->required();
  tr_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  tr_cmd->add_option("--batch", tr.batch)->capture_default_str();
  tr_cmd->add_option("--lr", tr.lr)->capture_default_str();
  tr_cmd->add_option("--beta", tr.beta, "KL weight (inform)")->capture_default_str();
  tr_cmd->add_option("--latent-dim", tr.latent_dim)->capture_default_str();
  tr_cmd->add_option("--seed", tr.seed, "Default: the data's world seed");
  tr_cmd->callback([&] { action = [&](Context& c) { train_rm(tr, c); }; });

  EvalRmOptions ev;
  CLI::App* ev_cmd = sub("eval-rm", "Pairwise accuracy of a checkpoint");
  add_path(ev_cmd, "--checkpoint", ev.checkpoint, "Reward model checkpoint")->required();
  add_path(ev_cmd, "--pairs", ev.pairs, "Preference JSONL (eval or ood)")->required();
  ev_cmd->callback([&] { action = [&](Context& c) { eval_rm(ev, c); }; });

  DetectOptions det;
  CLI::App* det_cmd = sub("detect", "Mahalanobis outlier detection in the InfoRM latent space");
  add_path(det_cmd, "--checkpoint", det.checkpoint, "InfoRM checkpoint")->required();
  add_path(det_cmd, "--sft", det.sft, "SFT response features (latent-dump format)");
  add_path(det_cmd, "--sft-pools", det.sft_pools, "pools.json to sample SFT responses from");
  add_path(det_cmd, "--rlhf", det.rlhf, "RLHF response features (latent-dump format)")->required();
  det_cmd->add_option("--n-sft", det.n_sft)->capture_default_str();
  det_cmd->add_option("--seed", det.seed, "SFT sampling seed (default: world seed)");
  det_cmd->add_option("--alpha", det.alpha)->capture_default_str();
  det_cmd->add_option("--shrinkage", det.shrinkage)->capture_default_str();
  det_cmd->add_option("--filter-quantile", det.filter_quantile)->capture_default_str();
  det_cmd->callback([&] { action = [&](Context& c) { detect(det, c); }; });

  RlRunOptions rl;
  CLI::App* rl_cmd = sub("rl-run", "Policy optimization against a reward model");
  add_path(rl_cmd, "--rm", rl.rm, "Proxy reward model checkpoint")->required();
  add_path(rl_cmd, "--detector", rl.detector, "InfoRM checkpoint used for MOP")->required();
  add_path(rl_cmd, "--pools", rl.pools, "pools.json from gen-data")->required();
  add_path(rl_cmd, "--config", rl.config, "RL run file (key = value)");
  rl_cmd->add_option("--split", rl.split)->check(CLI::IsMember({"train", "eval", "ood"}))->capture_default_str();
  rl_cmd->add_option("--n-sft", rl.n_sft)->capture_default_str();
  rl_cmd->add_option("--shrinkage", rl.shrinkage)->capture_default_str();
  rl_cmd->add_option("--filter-quantile", rl.filter_quantile)->capture_default_str();
  rl_cmd->add_option("--policy-samples", rl.n_policy_samples)->capture_default_str();
  rl_cmd->callback([&] { action = [&](Context& c) { rl_run(rl, c); }; });

  PessimismOptions pes;
  CLI::App* pes_cmd = sub("pessimism-check", "Closed-form vs numeric pessimistic reward");
  pes_cmd->add_option("--dim", pes.dim, "Largest dimension")->capture_default_str();
  pes_cmd->add_option("--B", pes.B, "Confidence radius squared")->capture_default_str();
  pes_cmd->add_option("--seeds", pes.seeds)->delimiter(',')->capture_default_str();
  pes_cmd->add_option("--instances", pes.instances)->capture_default_str();
  pes_cmd->add_option("--iters", pes.iters)->capture_default_str();
  pes_cmd->add_option("--pairs", pes.pairs)->capture_default_str();
  pes_cmd->callback([&] { action = [&](Context& c) { pessimism_check(pes, c); }; });

  SweepOptions sw;
  CLI::App* sw_cmd = sub("sweep", "Sweep beta or gamma over a grid of RL runs");
  sw_cmd->add_option("--param", sw.param)->required()->check(CLI::IsMember({"beta", "gamma"}));
  sw_cmd->add_option("--grid", sw.grid)->required()->delimiter(',');
  add_path(sw_cmd, "--config", sw.config, "Experiment config (key = value)");
  sw_cmd->add_option("--seeds", sw.seeds, "Number of seeds, 0..n-1")->capture_default_str();
  sw_cmd->callback([&] { action = [&](Context& c) { sweep(sw, c); }; });

  fs::path manifest;
  CLI::App* rp_cmd = app.add_subcommand("replay", "Rerun a command from its manifest and compare hashes");
  add_path(rp_cmd, "--manifest", manifest, "A <command>.manifest.json")->required();
  add_path(rp_cmd, "--out", out_dir, "Replay output directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::stringstream ss_out, ss_err;
    const int code = app.exit(e, ss_out, ss_err);
    out << ss_out.str();
    err << ss_err.str();
    return code == 0 ? kOk : kInputError;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  try {
    if (chosen == rp_cmd) return replay(manifest, out_dir, out, err);

    Context ctx;
    ctx.command = chosen->get_name();
    ctx.out_dir = out_dir.value_or(default_out(ctx.command));
    ctx.log = &out;
    fs::create_directories(ctx.out_dir);
    const auto start = std::chrono::steady_clock::now();
    int code = kOk;
    try {
      action(ctx);
    } catch (const Diverged& e) {
      err << ctx.command << ": diverged: " << e.what() << '\n';
      code = kDiverged;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(ctx, canonical_args(chosen), seconds);
    return code;
  } catch (const NonPositiveDefinite& e) {
    err << chosen->get_name() << ": " << e.what() << '\n';
    return kInputError;
  } catch (const NumericError& e) {
    err << chosen->get_name() << ": numeric failure: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    err << chosen->get_name() << ": " << e.what() << '\n';
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << chosen->get_name() << ": malformed JSON input: " << e.what() << '\n';
    return kInputError;
  } catch (const std::runtime_error& e) {
    err << chosen->get_name() << ": " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << chosen->get_name() << ": internal error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace iblab::cli

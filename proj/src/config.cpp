#include "iblab/config.hpp"

#include "iblab/json_util.hpp"
#include "iblab/text_util.hpp"

#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <ostream>

namespace iblab {
namespace {

constexpr int kSchemaVersion = 1;

template <typename T>
T number(const std::string& key, const std::string& value) {
  const auto v = parse_number<T>(value);
  if (!v) throw std::invalid_argument("config key '" + key + "': bad value '" + value + "'");
  return *v;
}

Vec number_list(const std::string& key, const std::string& value) {
  std::vector<double> vals;
  std::string_view rest(value);
  while (true) {
    const auto comma = rest.find(',');
    vals.push_back(number<double>(key, std::string(trim(rest.substr(0, comma)))));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return Eigen::Map<Vec>(vals.data(), Index(vals.size()));
}

std::string join(const Vec& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v(i));
  }
  return out;
}

void check_schema(const std::string& value) {
  if (number<int>("schema", value) != kSchemaVersion) {
    throw std::invalid_argument("config key 'schema': unsupported version " + value);
  }
}

}  // namespace

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return parse_key_values(in);
}

KeyValues take_prefixed(KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (auto it = kv.begin(); it != kv.end();) {
    if (it->first.starts_with(prefix)) {
      out.emplace(it->first.substr(prefix.size()), it->second);
      it = kv.erase(it);
    } else {
      ++it;
    }
  }
  return out;
}

WorldConfig parse_world_config(const KeyValues& kv) {
  WorldConfig cfg;
  if (const auto it = kv.find("preset"); it != kv.end()) {
    if (it->second == "hacking") {
      cfg = WorldConfig::hacking_preset();
    } else if (it->second != "default") {
      throw std::invalid_argument("config key 'preset': unknown preset '" + it->second + "'");
    }
  }
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"schema", [](auto&, auto& v) { check_schema(v); }},
      {"preset", [](auto&, auto&) {}},
      {"n_prompts", [&](auto& k, auto& v) { cfg.n_prompts = number<int>(k, v); }},
      {"n_eval_prompts", [&](auto& k, auto& v) { cfg.n_eval_prompts = number<int>(k, v); }},
      {"pool_size", [&](auto& k, auto& v) { cfg.pool_size = number<int>(k, v); }},
      {"dim_relevant", [&](auto& k, auto& v) { cfg.dim_relevant = number<int>(k, v); }},
      {"dim_spurious", [&](auto& k, auto& v) { cfg.dim_spurious = number<int>(k, v); }},
      {"gold_weights", [&](auto& k, auto& v) { cfg.gold_weights = number_list(k, v); }},
      {"annotator_bias", [&](auto& k, auto& v) { cfg.annotator_bias = number<double>(k, v); }},
      {"sft_temperature", [&](auto& k, auto& v) { cfg.sft_temperature = number<double>(k, v); }},
      {"ood_shift", [&](auto& k, auto& v) { cfg.ood_shift = number_list(k, v); }},
      {"exploit_rate", [&](auto& k, auto& v) { cfg.exploit_rate = number<double>(k, v); }},
      {"exploit_spurious_shift",
       [&](auto& k, auto& v) { cfg.exploit_spurious_shift = number<double>(k, v); }},
      {"exploit_relevant_shift",
       [&](auto& k, auto& v) { cfg.exploit_relevant_shift = number<double>(k, v); }},
      {"seed", [&](auto& k, auto& v) { cfg.seed = number<std::uint64_t>(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second(key, value);
  }
  cfg.validate();
  return cfg;
}

void write_world_config(std::ostream& out, const WorldConfig& cfg) {
  out << "schema = " << kSchemaVersion << '\n'
      << "n_prompts = " << cfg.n_prompts << '\n'
      << "n_eval_prompts = " << cfg.n_eval_prompts << '\n'
      << "pool_size = " << cfg.pool_size << '\n'
      << "dim_relevant = " << cfg.dim_relevant << '\n'
      << "dim_spurious = " << cfg.dim_spurious << '\n'
      << "gold_weights = " << join(cfg.resolved_gold_weights()) << '\n'
      << "annotator_bias = " << format_double(cfg.annotator_bias) << '\n'
      << "sft_temperature = " << format_double(cfg.sft_temperature) << '\n'
      << "ood_shift = " << join(cfg.resolved_ood_shift()) << '\n'
      << "exploit_rate = " << format_double(cfg.exploit_rate) << '\n'
      << "exploit_spurious_shift = " << format_double(cfg.exploit_spurious_shift) << '\n'
      << "exploit_relevant_shift = " << format_double(cfg.exploit_relevant_shift) << '\n'
      << "seed = " << cfg.seed << '\n';
}

ExperimentConfig parse_experiment_config(const KeyValues& kv) {
  KeyValues rest = kv;
  KeyValues world = take_prefixed(rest, "world.");
  if (!world.contains("preset")) world.emplace("preset", "hacking");
  const KeyValues rl = take_prefixed(rest, "rl.");

  ExperimentConfig cfg;
  cfg.world = parse_world_config(world);
  cfg.rl = parse_rl_config(rl);
  for (const auto& [key, value] : rest) {
    if (key == "schema") {
      check_schema(value);
    } else if (key == "n_train_pairs") {
      cfg.n_train_pairs = number<int>(key, value);
    } else if (key == "latent_dim") {
      cfg.latent_dim = number<int>(key, value);
    } else if (key == "beta") {
      cfg.beta = number<double>(key, value);
    } else if (key == "n_sft_samples") {
      cfg.n_sft_samples = number<int>(key, value);
    } else if (key == "shrinkage") {
      cfg.fit.shrinkage = number<double>(key, value);
    } else if (key == "filter_quantile") {
      cfg.fit.filter_quantile = number<double>(key, value);
    } else if (key == "epochs") {
      cfg.train.epochs = number<int>(key, value);
    } else if (key == "batch") {
      cfg.train.batch = number<int>(key, value);
    } else if (key == "lr") {
      cfg.train.lr = number<double>(key, value);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  return {{"schema", kSchemaVersion},
          {"world", to_json(cfg.world)},
          {"n_train_pairs", cfg.n_train_pairs},
          {"latent_dim", cfg.latent_dim},
          {"beta", cfg.beta},
          {"n_sft_samples", cfg.n_sft_samples},
          {"shrinkage", cfg.fit.shrinkage},
          {"filter_quantile", cfg.fit.filter_quantile},
          {"consistency_correction", cfg.fit.consistency_correction},
          {"epochs", cfg.train.epochs},
          {"batch", cfg.train.batch},
          {"lr", cfg.train.lr},
          {"rl", to_json(cfg.rl)}};
}

}  // namespace iblab

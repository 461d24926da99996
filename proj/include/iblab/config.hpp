#pragma once

#include "iblab/experiment.hpp"
#include "iblab/synthworld.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

namespace iblab {

using KeyValues = std::map<std::string, std::string>;

KeyValues read_key_values(const std::filesystem::path& path);

/// Removes and returns the entries whose key starts with `prefix`, with the
/// prefix stripped.
KeyValues take_prefixed(KeyValues& kv, const std::string& prefix);

/// World keys are the WorldConfig field names plus `schema` and `preset`
/// (`default` or `hacking`, applied before the other keys). Vector fields take
/// comma-separated reals. Unknown keys throw std::invalid_argument.
WorldConfig parse_world_config(const KeyValues& kv);
void write_world_config(std::ostream& out, const WorldConfig& cfg);

/// Top-level keys n_train_pairs, latent_dim, beta, n_sft_samples, shrinkage,
/// filter_quantile, epochs, batch, lr; `world.`-prefixed keys go
/// to parse_world_config and `rl.`-prefixed keys to parse_rl_config. The
/// world defaults to the hacking preset.
ExperimentConfig parse_experiment_config(const KeyValues& kv);
nlohmann::json to_json(const ExperimentConfig& cfg);

}  // namespace iblab

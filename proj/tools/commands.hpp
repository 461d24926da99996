#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace iblab::cli {

namespace fs = std::filesystem;

/// Bookkeeping shared by every command: where outputs go and what the
/// manifest should record.
struct Context {
  std::string command;
  fs::path out_dir;
  std::ostream* log = nullptr;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;

  void add_input(const fs::path& p);
  /// Absolute path of an output file inside out_dir, recorded for the manifest.
  fs::path output(const std::string& name);
  void write_text(const std::string& name, const std::string& text);
  void write_json(const std::string& name, const nlohmann::json& j);
};

/// Thrown when a command finished but its numerics diverged; outputs written
/// so far stay valid and are listed in the manifest.
struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDataOptions {
  fs::path config;
};

struct TrainRmOptions {
  std::string kind;
  fs::path data;
  int epochs = 5;
  int batch = 32;
  double lr = 1e-3;
  double beta = 0.1;
  int latent_dim = 8;
  std::optional<std::uint64_t> seed;
};

struct EvalRmOptions {
  fs::path checkpoint;
  fs::path pairs;
};

struct DetectOptions {
  fs::path checkpoint;
  std::optional<fs::path> sft;
  std::optional<fs::path> sft_pools;
  fs::path rlhf;
  int n_sft = 2000;
  std::optional<std::uint64_t> seed;
  double alpha = 0.01;
  double shrinkage = 1e-2;
  double filter_quantile = 0.975;
};

struct RlRunOptions {
  fs::path rm;
  fs::path detector;
  fs::path pools;
  std::optional<fs::path> config;
  std::string split = "eval";
  int n_sft = 2000;
  double shrinkage = 1e-2;
  double filter_quantile = 0.975;
  int n_policy_samples = 512;
};

struct PessimismOptions {
  int dim = 16;
  double B = 1.0;
  std::vector<std::uint64_t> seeds{0};
  int instances = 50;
  int iters = 500;
  int pairs = 100000;
};

struct SweepOptions {
  std::string param;
  std::vector<double> grid;
  std::optional<fs::path> config;
  int seeds = 5;
};

void gen_data(const GenDataOptions& o, Context& ctx);
void train_rm(const TrainRmOptions& o, Context& ctx);
void eval_rm(const EvalRmOptions& o, Context& ctx);
void detect(const DetectOptions& o, Context& ctx);
void rl_run(const RlRunOptions& o, Context& ctx);
void pessimism_check(const PessimismOptions& o, Context& ctx);
void sweep(const SweepOptions& o, Context& ctx);

}  // namespace iblab::cli

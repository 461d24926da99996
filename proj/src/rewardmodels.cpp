#include "iblab/rewardmodels.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace iblab {
namespace {

constexpr int kHidden = 32;

// d loss / d (r_w - r_l) for loss = softplus(-(r_w - r_l)).
double bt_slope(double margin) { return -sigmoid(-margin); }

LatentGaussian latent_from_output(const Vec& out, int k) {
  return {out.head(k),
          out.tail(k).cwiseMax(kLogSigmaMin).cwiseMin(kLogSigmaMax).array().exp().matrix()};
}

struct SideGrad {
  Vec dmu;
  Vec dlog_sigma;
};

// Gradient of beta * KL plus an upstream latent gradient with respect to the
// encoder outputs (mu, raw log sigma).
SideGrad latent_side_grad(const LatentGaussian& g, const Vec& raw_log_sigma,
                          const Vec& ds, const Vec& eps, double beta) {
  SideGrad out;
  out.dmu = ds + beta * g.mu;
  out.dlog_sigma = Vec(g.sigma.size());
  for (Index j = 0; j < g.sigma.size(); ++j) {
    const double raw = raw_log_sigma(j);
    if (raw <= kLogSigmaMin || raw >= kLogSigmaMax) {
      out.dlog_sigma(j) = 0.0;
      continue;
    }
    const double s = g.sigma(j);
    // d/dlogσ of [ds·σ ε + β ½(σ² − 2 logσ − 1)] = ds ε σ + β (σ² − 1)
    out.dlog_sigma(j) = ds(j) * eps(j) * s + beta * (s * s - 1.0);
  }
  return out;
}

template <typename Model, typename Step>
Trained<Model> train_loop(Model model, const std::vector<PreferencePair>& data,
                          const TrainConfig& cfg, Step&& step_fn) {
  if (data.empty()) throw std::invalid_argument("train_rm: empty dataset");
  if (cfg.epochs < 0 || cfg.batch < 1) {
    throw std::invalid_argument("train_rm: epochs must be >= 0 and batch >= 1");
  }
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Trained<Model> out{std::move(model), {}};
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch));
      const double loss = step_fn(out.model, order, start, end, rng);
      if (!std::isfinite(loss)) throw TrainingDiverged(step);
      out.loss_curve.push_back(loss);
      ++step;
    }
  }
  return out;
}

void write_sidecar(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(sidecar_path(path));
  if (!out) throw std::runtime_error("cannot write " + sidecar_path(path).string());
  out << j.dump(2) << '\n';
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace

StandardRm StandardRm::init(int feature_dim, Rng& rng) {
  return {ParamSet::glorot({{feature_dim, kHidden, kHidden, 1}, Activation::Tanh}, rng)};
}

InfoRm InfoRm::init(int feature_dim, int latent_dim, double beta, Rng& rng) {
  InfoRm m;
  m.latent_dim = latent_dim;
  m.beta = beta;
  m.encoder = ParamSet::glorot({{feature_dim, kHidden, 2 * latent_dim}, Activation::Tanh}, rng);
  m.decoder = ParamSet::glorot({{latent_dim, kHidden, 1}, Activation::Tanh}, rng);
  m.validate();
  return m;
}

void InfoRm::validate() const {
  if (latent_dim < 1) throw std::invalid_argument("InfoRm: latent_dim must be >= 1");
  if (!(beta >= 0) || !std::isfinite(beta)) throw std::invalid_argument("InfoRm: beta must be >= 0");
  require_same_dim(encoder.spec.output_dim(), 2 * latent_dim, "InfoRm encoder output");
  require_same_dim(decoder.spec.input_dim(), latent_dim, "InfoRm decoder input");
  require_same_dim(decoder.spec.output_dim(), 1, "InfoRm decoder output");
}

LatentGaussian encode(const InfoRm& m, const Vec& x) {
  return latent_from_output(mlp_forward(m.encoder, x), m.latent_dim);
}

Vec reparameterize(const LatentGaussian& g, const Vec& eps) {
  require_same_dim(eps.size(), g.mu.size(), "reparameterize");
  require_same_dim(g.sigma.size(), g.mu.size(), "reparameterize");
  return g.mu + g.sigma.cwiseProduct(eps);
}

double kl_to_std_normal(const LatentGaussian& g) {
  const auto s2 = g.sigma.array().square();
  return 0.5 * (g.mu.array().square() + s2 - s2.log() - 1.0).sum();
}

double inform_reward(const InfoRm& m, const Vec& x, const Vec& eps) {
  return mlp_forward(m.decoder, reparameterize(encode(m, x), eps))(0);
}

double inform_reward(const InfoRm& m, const Vec& x) {
  return mlp_forward(m.decoder, encode(m, x).mu)(0);
}

InfoLoss inform_loss(const InfoRm& m, const PreferencePair& pair, const Vec& eps_w,
                     const Vec& eps_l) {
  const int k = m.latent_dim;
  const Vec out_w = mlp_forward(m.encoder, pair.chosen);
  const Vec out_l = mlp_forward(m.encoder, pair.rejected);
  const LatentGaussian gw = latent_from_output(out_w, k);
  const LatentGaussian gl = latent_from_output(out_l, k);
  const Vec sw = reparameterize(gw, eps_w);
  const Vec sl = reparameterize(gl, eps_l);
  const double rw = mlp_forward(m.decoder, sw)(0);
  const double rl = mlp_forward(m.decoder, sl)(0);
  const double margin = rw - rl;

  InfoLoss res;
  res.loss = softplus(-margin) + m.beta * (kl_to_std_normal(gw) + kl_to_std_normal(gl));
  if (!std::isfinite(res.loss)) throw NumericError("inform_loss: non-finite loss");

  const double slope = bt_slope(margin);
  const MlpGradient dec_w = mlp_backward(m.decoder, sw, Vec::Constant(1, slope));
  const MlpGradient dec_l = mlp_backward(m.decoder, sl, Vec::Constant(1, -slope));
  res.decoder.flat = dec_w.params.flat + dec_l.params.flat;

  const SideGrad side_w = latent_side_grad(gw, out_w.tail(k), dec_w.input, eps_w, m.beta);
  const SideGrad side_l = latent_side_grad(gl, out_l.tail(k), dec_l.input, eps_l, m.beta);
  Vec up_w(2 * k), up_l(2 * k);
  up_w << side_w.dmu, side_w.dlog_sigma;
  up_l << side_l.dmu, side_l.dlog_sigma;
  res.encoder.flat = mlp_backward(m.encoder, pair.chosen, up_w).params.flat +
                     mlp_backward(m.encoder, pair.rejected, up_l).params.flat;
  return res;
}

StandardLoss standard_loss(const StandardRm& m, const PreferencePair& pair) {
  const double margin = m.reward(pair.chosen) - m.reward(pair.rejected);
  StandardLoss res;
  res.loss = softplus(-margin);
  if (!std::isfinite(res.loss)) throw NumericError("standard_loss: non-finite loss");
  const double slope = bt_slope(margin);
  res.grad.flat = mlp_backward(m.net, pair.chosen, Vec::Constant(1, slope)).params.flat +
                  mlp_backward(m.net, pair.rejected, Vec::Constant(1, -slope)).params.flat;
  return res;
}

StandardRm compose_mean_path(const InfoRm& m) {
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const MlpSpec& es = m.encoder.spec;
  const MlpSpec& ds = m.decoder.spec;
  if (es.num_layers() != 2 || ds.num_layers() != 2) {
    throw std::invalid_argument("compose_mean_path: expects one hidden layer on each side");
  }
  const int in = es.layer_dims[0], h1 = es.layer_dims[1], k = m.latent_dim, h2 = ds.layer_dims[1];
  const double* e = m.encoder.flat.data();
  const double* d = m.decoder.flat.data();
  Eigen::Map<const RowMajor> w1(e, h1, in);
  Eigen::Map<const Vec> b1(e + h1 * in, h1);
  Eigen::Map<const RowMajor> w2(e + h1 * (in + 1), 2 * k, h1);
  Eigen::Map<const Vec> b2(e + h1 * (in + 1) + 2 * k * h1, 2 * k);
  Eigen::Map<const RowMajor> w3(d, h2, k);
  Eigen::Map<const Vec> b3(d + h2 * k, h2);
  const Index dec_tail = h2 * (k + 1);

  StandardRm out{ParamSet::zeros({{in, h1, h2, 1}, Activation::Tanh})};
  double* o = out.net.flat.data();
  Eigen::Map<RowMajor>(o, h1, in) = w1;
  Eigen::Map<Vec>(o + h1 * in, h1) = b1;
  Eigen::Map<RowMajor>(o + h1 * (in + 1), h2, h1) = w3 * w2.topRows(k);
  Eigen::Map<Vec>(o + h1 * (in + 1) + h2 * h1, h2) = w3 * b2.head(k) + b3;
  out.net.flat.tail(h2 + 1) = m.decoder.flat.segment(dec_tail, h2 + 1);
  return out;
}

Trained<StandardRm> train_rm(StandardRm model, const std::vector<PreferencePair>& data,
                             const TrainConfig& cfg) {
  AdamState adam = AdamState::for_params(model.net);
  const AdamConfig acfg{cfg.lr};
  return train_loop(std::move(model), data, cfg,
                    [&](StandardRm& m, const std::vector<std::size_t>& order,
                        std::size_t start, std::size_t end, Rng&) {
                      GradSet g = GradSet::zeros_like(m.net);
                      double loss = 0;
                      for (std::size_t i = start; i < end; ++i) {
                        const StandardLoss l = standard_loss(m, data[order[i]]);
                        loss += l.loss;
                        g.flat += l.grad.flat;
                      }
                      const double n = double(end - start);
                      g.flat /= n;
                      adam_step(m.net, g, adam, acfg);
                      return loss / n;
                    });
}

Trained<InfoRm> train_rm(InfoRm model, const std::vector<PreferencePair>& data,
                         const TrainConfig& cfg) {
  model.validate();
  AdamState adam_enc = AdamState::for_params(model.encoder);
  AdamState adam_dec = AdamState::for_params(model.decoder);
  const AdamConfig acfg{cfg.lr};
  return train_loop(std::move(model), data, cfg,
                    [&](InfoRm& m, const std::vector<std::size_t>& order,
                        std::size_t start, std::size_t end, Rng& rng) {
                      GradSet ge = GradSet::zeros_like(m.encoder);
                      GradSet gd = GradSet::zeros_like(m.decoder);
                      double loss = 0;
                      for (std::size_t i = start; i < end; ++i) {
                        const Vec eps_w = standard_normal(m.latent_dim, rng);
                        const Vec eps_l = standard_normal(m.latent_dim, rng);
                        const InfoLoss l = inform_loss(m, data[order[i]], eps_w, eps_l);
                        loss += l.loss;
                        ge.flat += l.encoder.flat;
                        gd.flat += l.decoder.flat;
                      }
                      const double n = double(end - start);
                      ge.flat /= n;
                      gd.flat /= n;
                      adam_step(m.encoder, ge, adam_enc, acfg);
                      adam_step(m.decoder, gd, adam_dec, acfg);
                      return loss / n;
                    });
}

namespace {

template <typename RewardFn>
double accuracy_of(const std::vector<PreferencePair>& pairs, RewardFn&& r) {
  if (pairs.empty()) throw std::invalid_argument("pairwise_accuracy: no pairs");
  std::size_t correct = 0;
  for (const auto& p : pairs) correct += r(p.chosen) > r(p.rejected);
  return double(correct) / double(pairs.size());
}

}  // namespace

double pairwise_accuracy(const StandardRm& m, const std::vector<PreferencePair>& pairs) {
  return accuracy_of(pairs, [&](const Vec& x) { return m.reward(x); });
}

double pairwise_accuracy(const InfoRm& m, const std::vector<PreferencePair>& pairs) {
  return accuracy_of(pairs, [&](const Vec& x) { return inform_reward(m, x); });
}

std::vector<Vec> extract_latents(const InfoRm& m, const std::vector<Vec>& xs) {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(encode(m, x).mu);
  return out;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const StandardRm& m,
                     const std::string& world_hash) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_params(out, m.net);
  }
  write_sidecar(path, {{"kind", "standard"}, {"world_config_hash", world_hash}});
}

void save_checkpoint(const std::filesystem::path& path, const InfoRm& m,
                     const std::string& world_hash) {
  m.validate();
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_params(out, m.encoder);
    write_params(out, m.decoder);
  }
  write_sidecar(path, {{"kind", "inform"},
                       {"latent_dim", m.latent_dim},
                       {"beta", m.beta},
                       {"world_config_hash", world_hash}});
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(sidecar_path(path));
  if (!in) throw std::runtime_error("cannot open " + sidecar_path(path).string());
  const auto j = nlohmann::json::parse(in);
  CheckpointInfo info;
  info.kind = j.at("kind").get<std::string>();
  info.world_hash = j.at("world_config_hash").get<std::string>();
  if (info.kind == "inform") {
    info.latent_dim = j.at("latent_dim").get<int>();
    info.beta = j.at("beta").get<double>();
  } else if (info.kind != "standard") {
    throw std::runtime_error("checkpoint sidecar: unknown kind '" + info.kind + "'");
  }
  return info;
}

StandardRm load_standard_rm(const std::filesystem::path& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (info.kind != "standard") {
    throw std::runtime_error(path.string() + " is not a standard reward model checkpoint");
  }
  std::ifstream in = open_binary(path);
  StandardRm m{read_params(in)};
  require_same_dim(m.net.spec.output_dim(), 1, "standard checkpoint output");
  return m;
}

InfoRm load_inform(const std::filesystem::path& path) {
  const CheckpointInfo info = read_checkpoint_info(path);
  if (info.kind != "inform") {
    throw std::runtime_error(path.string() + " is not an InfoRM checkpoint");
  }
  std::ifstream in = open_binary(path);
  InfoRm m;
  m.encoder = read_params(in);
  m.decoder = read_params(in);
  m.latent_dim = info.latent_dim;
  m.beta = info.beta;
  m.validate();
  return m;
}

}  // namespace iblab

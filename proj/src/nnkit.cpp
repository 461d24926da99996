#include "iblab/nnkit.hpp"

#include "iblab/binary_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace iblab {
namespace {

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::array<char, 8> kParamMagic = {'I', 'B', 'N', 'N', 'P', 'A', 'R', '\0'};
constexpr std::uint8_t kParamVersion = 1;

void activate(Vec& z, Activation a) {
  switch (a) {
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::Relu:
      z = z.cwiseMax(0.0);
      break;
  }
}

// Derivative of the activation expressed in terms of its output h.
Vec activation_grad(const Vec& h, Activation a) {
  switch (a) {
    case Activation::Tanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::Relu:
      return (h.array() > 0.0).cast<double>().matrix();
  }
  return Vec();
}

struct LayerView {
  Eigen::Map<const RowMajorMat> w;
  Eigen::Map<const Vec> b;
};

LayerView layer(const ParamSet& p, std::size_t l, Index& offset) {
  const int in = p.spec.layer_dims[l];
  const int out = p.spec.layer_dims[l + 1];
  LayerView v{Eigen::Map<const RowMajorMat>(p.flat.data() + offset, out, in),
              Eigen::Map<const Vec>(p.flat.data() + offset + Index(out) * in, out)};
  offset += Index(out) * in + out;
  return v;
}

// Forward pass that keeps every layer's post-activation output.
std::vector<Vec> forward_trace(const ParamSet& p, const Vec& x) {
  require_same_dim(x.size(), p.spec.input_dim(), "mlp_forward");
  if (!x.allFinite()) throw NumericError("mlp_forward: non-finite input");
  std::vector<Vec> acts;
  acts.reserve(p.spec.layer_dims.size());
  acts.push_back(x);
  Index offset = 0;
  const std::size_t n = p.spec.num_layers();
  for (std::size_t l = 0; l < n; ++l) {
    const LayerView v = layer(p, l, offset);
    Vec z = v.w * acts.back() + v.b;
    if (l + 1 < n) activate(z, p.spec.activation);
    if (!z.allFinite()) {
      throw NumericError("mlp_forward: non-finite activation in layer " +
                         std::to_string(l));
    }
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

const char* to_string(Activation a) {
  return a == Activation::Tanh ? "tanh" : "relu";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

void MlpSpec::validate() const {
  if (layer_dims.size() < 2) {
    throw std::invalid_argument("MlpSpec: need at least input and output dims");
  }
  for (int d : layer_dims) {
    if (d < 1) throw std::invalid_argument("MlpSpec: layer dims must be >= 1");
  }
}

Index MlpSpec::param_count() const {
  Index n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    n += Index(layer_dims[l + 1]) * (layer_dims[l] + 1);
  }
  return n;
}

ParamSet ParamSet::zeros(const MlpSpec& spec) {
  spec.validate();
  return {spec, Vec::Zero(spec.param_count())};
}

ParamSet ParamSet::glorot(const MlpSpec& spec, Rng& rng) {
  ParamSet p = zeros(spec);
  Index offset = 0;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const int in = spec.layer_dims[l];
    const int out = spec.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> uni(-bound, bound);
    for (Index i = 0; i < Index(out) * in; ++i) p.flat(offset + i) = uni(rng);
    offset += Index(out) * in + out;
  }
  return p;
}

void ParamSet::validate() const {
  spec.validate();
  if (flat.size() != spec.param_count()) {
    throw DimensionError("ParamSet: flat length does not match spec");
  }
  if (!flat.allFinite()) throw NumericError("ParamSet: non-finite parameter");
}

Vec mlp_forward(const ParamSet& p, const Vec& x) {
  return std::move(forward_trace(p, x).back());
}

MlpGradient mlp_backward(const ParamSet& p, const Vec& x, const Vec& upstream) {
  require_same_dim(upstream.size(), p.spec.output_dim(), "mlp_backward");
  const std::vector<Vec> acts = forward_trace(p, x);
  const std::size_t n = p.spec.num_layers();

  std::vector<Index> offsets(n);
  Index offset = 0;
  for (std::size_t l = 0; l < n; ++l) {
    offsets[l] = offset;
    offset += Index(p.spec.layer_dims[l + 1]) * (p.spec.layer_dims[l] + 1);
  }

  MlpGradient grad{GradSet::zeros_like(p), Vec()};
  Vec delta = upstream;  // gradient w.r.t. the pre-activation of layer l
  for (std::size_t l = n; l-- > 0;) {
    const int in = p.spec.layer_dims[l];
    const int out = p.spec.layer_dims[l + 1];
    Eigen::Map<RowMajorMat> gw(grad.params.flat.data() + offsets[l], out, in);
    Eigen::Map<Vec> gb(grad.params.flat.data() + offsets[l] + Index(out) * in, out);
    gw.noalias() = delta * acts[l].transpose();
    gb = delta;
    Eigen::Map<const RowMajorMat> w(p.flat.data() + offsets[l], out, in);
    Vec back = w.transpose() * delta;
    if (l > 0) {
      delta = back.cwiseProduct(activation_grad(acts[l], p.spec.activation));
    } else {
      grad.input = std::move(back);
    }
  }
  return grad;
}

void adam_step(ParamSet& p, const GradSet& g, AdamState& state,
               const AdamConfig& cfg) {
  require_same_dim(g.flat.size(), p.flat.size(), "adam_step");
  require_same_dim(state.m.size(), p.flat.size(), "adam_step");
  if (!(cfg.lr > 0)) throw std::invalid_argument("adam_step: lr must be > 0");
  if (!g.flat.allFinite()) throw NumericError("adam_step: non-finite gradient");
  state.step += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g.flat;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g.flat.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  p.flat.array() -= cfg.lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + cfg.eps);
}

void write_params(std::ostream& out, const ParamSet& p) {
  p.validate();
  out.write(kParamMagic.data(), kParamMagic.size());
  binio::write_u8(out, kParamVersion);
  binio::write_u8(out, static_cast<std::uint8_t>(p.spec.activation));
  binio::write_u32(out, static_cast<std::uint32_t>(p.spec.layer_dims.size()));
  for (int d : p.spec.layer_dims) binio::write_u32(out, static_cast<std::uint32_t>(d));
  binio::write_u64(out, static_cast<std::uint64_t>(p.flat.size()));
  for (Index i = 0; i < p.flat.size(); ++i) binio::write_f64(out, p.flat(i));
  if (!out) throw std::runtime_error("write_params: stream error");
}

ParamSet read_params(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kParamMagic) {
    throw std::runtime_error("read_params: bad magic tag");
  }
  if (binio::read_u8(in) != kParamVersion) {
    throw std::runtime_error("read_params: unsupported version");
  }
  const std::uint8_t act = binio::read_u8(in);
  if (act > 1) throw std::runtime_error("read_params: unknown activation");
  MlpSpec spec;
  spec.activation = static_cast<Activation>(act);
  const std::uint32_t layers = binio::read_u32(in);
  if (layers < 2 || layers > 1024) throw std::runtime_error("read_params: bad layer count");
  for (std::uint32_t i = 0; i < layers; ++i) {
    spec.layer_dims.push_back(static_cast<int>(binio::read_u32(in)));
  }
  spec.validate();
  const std::uint64_t count = binio::read_u64(in);
  if (count != static_cast<std::uint64_t>(spec.param_count())) {
    throw std::runtime_error("read_params: parameter count does not match spec");
  }
  ParamSet p{spec, Vec(static_cast<Index>(count))};
  for (Index i = 0; i < p.flat.size(); ++i) p.flat(i) = binio::read_f64(in);
  p.validate();
  return p;
}

}  // namespace iblab

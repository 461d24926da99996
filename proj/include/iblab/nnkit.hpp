#pragma once

#include "iblab/numkit.hpp"

#include <iosfwd>
#include <vector>

namespace iblab {

enum class Activation : std::uint8_t { Tanh = 0, Relu = 1 };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Layer widths from input to output. Hidden layers use `activation`; the
/// output layer is linear.
struct MlpSpec {
  std::vector<int> layer_dims;
  Activation activation = Activation::Tanh;

  void validate() const;
  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }
  Index param_count() const;

  bool operator==(const MlpSpec&) const = default;
};

/// All weights and biases in one flat vector. Layer by layer, each layer
/// stores its weight matrix row-major (out x in) followed by its bias (out).
struct ParamSet {
  MlpSpec spec;
  Vec flat;

  /// Zero-valued parameters for `spec`.
  static ParamSet zeros(const MlpSpec& spec);
  /// Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)), zero biases.
  static ParamSet glorot(const MlpSpec& spec, Rng& rng);

  void validate() const;
};

/// Gradient aligned index-by-index with a ParamSet's flat vector.
struct GradSet {
  Vec flat;

  static GradSet zeros_like(const ParamSet& p) {
    return {Vec::Zero(p.flat.size())};
  }
};

Vec mlp_forward(const ParamSet& p, const Vec& x);

struct MlpGradient {
  GradSet params;
  Vec input;
};

/// Gradient of upstreamᵀ · mlp_forward(p, x) with respect to the parameters
/// and the input.
MlpGradient mlp_backward(const ParamSet& p, const Vec& x, const Vec& upstream);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vec m;
  Vec v;
  long step = 0;

  static AdamState for_params(const ParamSet& p) {
    return {Vec::Zero(p.flat.size()), Vec::Zero(p.flat.size()), 0};
  }
};

/// One bias-corrected adaptive-moment descent step, in place.
void adam_step(ParamSet& p, const GradSet& g, AdamState& state,
               const AdamConfig& cfg);

// Binary format: 8-byte magic "IBNNPAR\0", u8 version, u8 activation,
// u32 layer count, u32 dims[count], u64 param count, f64 params[count].
// All integers and floats little-endian.
void write_params(std::ostream& out, const ParamSet& p);
ParamSet read_params(std::istream& in);

}  // namespace iblab

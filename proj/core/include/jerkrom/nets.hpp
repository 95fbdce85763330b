// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "jerkrom/datastore.hpp"
#include "jerkrom/field.hpp"
#include "jerkrom/params.hpp"

namespace jerkrom::nets {

enum class Activation { relu, silu, sine };
enum class BlockType { basic, bottleneck };
enum class Pooling { flatten, average };
enum class Embedding { affine, fourier };

std::string to_string(Activation a);
std::string to_string(BlockType b);
std::string to_string(Pooling p);
std::string to_string(Embedding e);

/// Residual CNN encoder. Stage s holds blocks[s] residual blocks of width
/// widths[s] (bottleneck blocks output widths[s] * bottleneck_expansion
/// channels); every stage after the first halves the resolution. Convolutions
/// pad circularly because the domain is periodic.
struct EncoderConfig {
  int nx = 32;
  int ndim = 2;
  int stem_width = 16;
  int stem_kernel = 3;
  int stem_stride = 1;
  std::vector<int> widths{16, 32, 64, 128};
  std::vector<int> blocks{1, 1, 1, 1};
  BlockType block = BlockType::basic;
  int bottleneck_expansion = 4;
  Pooling pooling = Pooling::flatten;
  int latent_dim = 10;

  /// Bottleneck [3,4,6,3] layout with a 2048-wide feature vector, 7x7 stride-2
  /// stem and global average pooling.
  static EncoderConfig resnet50(int nx, int latent_dim);

  int output_channels() const;
  /// Spatial extent (rows, cols) of the final feature map.
  std::pair<int, int> output_extent() const;
  /// Length of the vector fed to the final linear layer.
  int feature_dim() const;
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Conditional implicit neural representation: an MLP over
/// [z, embed(x)] -> scalar.
struct DecoderConfig {
  int hidden_layers = 7;
  int width = 512;
  Activation activation = Activation::silu;
  Embedding embedding = Embedding::affine;
  int fourier_frequencies = 4;  ///< only used by Embedding::fourier
  double sine_omega0 = 30.0;    ///< only used by Activation::sine
  int latent_dim = 10;
  int ndim = 2;

  int embedding_dim() const;
  void validate() const;
  bool operator==(const DecoderConfig&) const = default;
};

struct OdeFuncConfig {
  int hidden_layers = 5;
  int width = 512;
  Activation activation = Activation::silu;
  int latent_dim = 10;
  bool zero_init_output = false;

  void validate() const;
  bool operator==(const OdeFuncConfig&) const = default;
};

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  OdeFuncConfig odefunc;

  int latent_dim() const { return encoder.latent_dim; }
  /// Validates each part and their agreement on d_z and ndim.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------

template <typename T>
class Encoder {
public:
  /// Activations kept for the backward pass.
  struct Cache {
    struct ConvTape {
      Mat<T> cols;     ///< im2col matrix of the convolution input
      int h = 0, w = 0;  ///< input extent
    };
    int batch = 0;
    std::vector<ConvTape> conv;
    Mat<T> stem_out;
    std::vector<Mat<T>> h1, h2, out;  ///< per residual block
    std::vector<std::pair<int, int>> block_out_extent;
  };

  Encoder() = default;
  explicit Encoder(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  void init(std::mt19937_64& rng);

  /// `fields` is P x B (one normalised snapshot per column); returns d_z x B.
  Mat<T> forward(const Mat<T>& fields, Cache* cache = nullptr) const;
  /// Accumulates dL/dparams into `grad` given dL/dz (d_z x B).
  void backward(const Mat<T>& dz, const Cache& cache, std::vector<T>& grad) const;

  template <typename U>
  Encoder<U> cast() const;

private:
  template <typename>
  friend class Encoder;

  struct Conv {
    int in_c, out_c, k, stride, w, b;
  };
  struct Block {
    int c1 = -1, c2 = -1, c3 = -1, shortcut = -1;
  };

  int add_conv(const std::string& name, int in_c, int out_c, int k, int stride);

  EncoderConfig cfg_;
  ParamSet<T> params_;
  std::vector<Conv> convs_;
  int stem_ = -1;
  std::vector<Block> blocks_;
  std::vector<int> block_stride_;
  int head_w_ = -1, head_b_ = -1;
};

/// Plain fully connected network with activations between layers and a linear
/// output layer.
template <typename T>
class Mlp {
public:
  struct Cache {
    std::vector<Mat<T>> inputs;  ///< input to each layer
    std::vector<Mat<T>> pre;     ///< pre-activation of each hidden layer
  };

  Mlp() = default;
  Mlp(ParamSet<T>& params, const std::string& prefix, std::vector<int> dims, Activation act,
      double omega0 = 30.0);

  Mat<T> forward(const ParamSet<T>& p, const Mat<T>& x, Cache* cache = nullptr) const;
  /// Returns dL/dx and accumulates parameter gradients.
  Mat<T> backward(const ParamSet<T>& p, const Mat<T>& dy, const Cache& cache,
                  std::vector<T>& grad) const;
  void init(ParamSet<T>& p, std::mt19937_64& rng, bool first_layer_is_input,
            bool zero_output) const;

  int layers() const { return static_cast<int>(w_.size()); }
  int weight_block(int l) const { return w_[static_cast<std::size_t>(l)]; }
  int bias_block(int l) const { return b_[static_cast<std::size_t>(l)]; }

private:
  std::vector<int> dims_;
  std::vector<int> w_, b_;
  Activation act_ = Activation::silu;
  double omega0_ = 30.0;
};

template <typename T>
class Decoder {
public:
  struct Cache {
    Mat<T> latents;    ///< d_z x S
    Mat<T> embedding;  ///< E x P
    Mat<T> pre_in;     ///< width x (S*P)
    typename Mlp<T>::Cache tail;
    int points = 0;
  };

  Decoder() = default;
  explicit Decoder(const DecoderConfig& cfg);

  const DecoderConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  void init(std::mt19937_64& rng);

  /// Coordinate embedding of ndim x P coordinates (wrapped into [0,1)).
  Mat<T> embed(const Eigen::MatrixXd& coords) const;

  /// Decodes every latent column of `z` (d_z x S) at every query column of
  /// `coords` (ndim x P). Returns P x S.
  Mat<T> forward(const Mat<T>& z, const Eigen::MatrixXd& coords, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; returns dL/dz (d_z x S).
  Mat<T> backward(const Mat<T>& du, const Cache& cache, std::vector<T>& grad) const;

  /// Inference path: one latent, any number of queries. Queries are processed
  /// in fixed-size chunks so each point's value does not depend on how many
  /// other points are queried alongside it.
  std::vector<T> decode_points(const Vec<T>& z, const Eigen::MatrixXd& coords) const;

  static constexpr int kChunk = 256;

  template <typename U>
  Decoder<U> cast() const;

private:
  template <typename>
  friend class Decoder;

  Mat<T> activate(const Mat<T>& pre) const;
  DecoderConfig cfg_;
  ParamSet<T> params_;
  int wz_ = -1, we_ = -1, b_ = -1;
  Mlp<T> tail_;
};

/// Latent vector field h(z). Inputs are standardised by a fixed per-coordinate
/// shift and a scalar scale (both non-trainable): h(z) = scale * mlp((z - shift) / scale).
template <typename T>
class OdeFunc {
public:
  struct Cache {
    typename Mlp<T>::Cache mlp;
  };

  OdeFunc() = default;
  explicit OdeFunc(const OdeFuncConfig& cfg);

  const OdeFuncConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  void init(std::mt19937_64& rng);

  void set_standardization(const Vec<T>& shift, T scale);
  const Vec<T>& shift() const { return shift_; }
  T scale() const { return scale_; }

  /// z is d_z x B; returns dz/dt (d_z x B).
  Mat<T> forward(const Mat<T>& z, Cache* cache = nullptr) const;
  Mat<T> backward(const Mat<T>& dy, const Cache& cache, std::vector<T>& grad) const;

  template <typename U>
  OdeFunc<U> cast() const;

private:
  template <typename>
  friend class OdeFunc;

  OdeFuncConfig cfg_;
  ParamSet<T> params_;
  Mlp<T> mlp_;
  Vec<T> shift_;
  T scale_ = T(1);
};

/// All learnable components plus their architecture config.
template <typename T>
struct ModelState {
  ModelConfig config;
  Encoder<T> encoder;
  Decoder<T> decoder;
  OdeFunc<T> odefunc;

  template <typename U>
  ModelState<U> cast() const {
    return ModelState<U>{config, encoder.template cast<U>(), decoder.template cast<U>(),
                         odefunc.template cast<U>()};
  }
  std::size_t parameter_count() const {
    return encoder.params().size() + decoder.params().size() + odefunc.params().size();
  }
};

template <typename T>
struct ModelGrads {
  std::vector<T> encoder, decoder, odefunc;

  explicit ModelGrads(const ModelState<T>& m)
      : encoder(m.encoder.params().size(), T(0)),
        decoder(m.decoder.params().size(), T(0)),
        odefunc(m.odefunc.params().size(), T(0)) {}
  void zero();
};

/// Builds all three networks; encoder weights Kaiming-normal, decoder and ODE
/// weights fan-in scaled (SIREN scheme for sine activations). Deterministic in `seed`.
template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Encodes one snapshot (already normalised) into a latent vector.
template <typename T>
Vec<T> encode(const ModelState<T>& state, const std::vector<float>& field);

/// Decodes latent `z` at `queries` (ndim values per point, packed).
template <typename T>
std::vector<T> decode(const ModelState<T>& state, const Vec<T>& z, const std::vector<double>& queries);

template <typename T>
Vec<T> ode_rhs(const ModelState<T>& state, const Vec<T>& z);

/// Query coordinates of a uniform M-point-per-axis grid, ndim x M^ndim.
Eigen::MatrixXd grid_coordinates(int ndim, int m);

// Checkpoint conversion ------------------------------------------------------

std::string model_config_to_json(const ModelConfig& cfg);
/// Parses a model config; unknown keys raise ConfigError naming the key.
ModelConfig model_config_from_json(const std::string& text);

Checkpoint to_checkpoint(const ModelState<float>& model, const std::string& stage,
                         const std::string& config_fingerprint,
                         const std::string& train_config_json = {});
/// Restores a model. If `expected` is given, the stored architecture must match
/// it; a d_z or layer-shape disagreement raises ShapeError.
ModelState<float> model_from_checkpoint(const Checkpoint& ckpt, const ModelConfig* expected = nullptr);

// Precision casts --------------------------------------------------------------

template <typename T>
template <typename U>
Encoder<U> Encoder<T>::cast() const {
  Encoder<U> e(cfg_);
  e.params_ = params_.template cast<U>();
  return e;
}

template <typename T>
template <typename U>
Decoder<U> Decoder<T>::cast() const {
  Decoder<U> d(cfg_);
  d.params_ = params_.template cast<U>();
  return d;
}

template <typename T>
template <typename U>
OdeFunc<U> OdeFunc<T>::cast() const {
  OdeFunc<U> f(cfg_);
  f.params_ = params_.template cast<U>();
  f.shift_ = shift_.template cast<U>();
  f.scale_ = static_cast<U>(scale_);
  return f;
}

} // namespace jerkrom::nets

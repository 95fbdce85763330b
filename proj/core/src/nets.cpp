// SPDX-License-Identifier: Apache-2.0
#include "jerkrom/nets.hpp"

#include <cmath>
#include <numbers>

#include "jerkrom/error.hpp"

namespace jerkrom::nets {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
    case Activation::sine: return "sine";
  }
  return "?";
}
std::string to_string(BlockType b) { return b == BlockType::basic ? "basic" : "bottleneck"; }
std::string to_string(Pooling p) { return p == Pooling::flatten ? "flatten" : "average"; }
std::string to_string(Embedding e) { return e == Embedding::affine ? "affine" : "fourier"; }

// --- configs ----------------------------------------------------------------

EncoderConfig EncoderConfig::resnet50(int nx, int latent_dim) {
  EncoderConfig c;
  c.nx = nx;
  c.ndim = 2;
  c.stem_width = 64;
  c.stem_kernel = 7;
  c.stem_stride = 2;
  c.widths = {64, 128, 256, 512};
  c.blocks = {3, 4, 6, 3};
  c.block = BlockType::bottleneck;
  c.bottleneck_expansion = 4;
  c.pooling = Pooling::average;
  c.latent_dim = latent_dim;
  return c;
}

int EncoderConfig::output_channels() const {
  const int w = widths.empty() ? stem_width : widths.back();
  return block == BlockType::bottleneck ? w * bottleneck_expansion : w;
}

namespace {
int strided(int n, int s) { return (n + s - 1) / s; }
} // namespace

std::pair<int, int> EncoderConfig::output_extent() const {
  int h = ndim == 2 ? nx : 1;
  int w = nx;
  h = strided(h, stem_stride);
  w = strided(w, stem_stride);
  for (std::size_t s = 1; s < widths.size(); ++s) {
    if (blocks[s] > 0) {
      h = strided(h, 2);
      w = strided(w, 2);
    }
  }
  return {h, w};
}

int EncoderConfig::feature_dim() const {
  if (pooling == Pooling::average) return output_channels();
  const auto [h, w] = output_extent();
  return output_channels() * h * w;
}

void EncoderConfig::validate() const {
  GridSpec{nx, ndim}.validate();
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1", "latent_dim");
  if (stem_width < 1) throw ConfigError("stem_width must be >= 1", "encoder.stem_width");
  if (stem_kernel < 1 || stem_kernel % 2 == 0) {
    throw ConfigError("stem_kernel must be odd and positive", "encoder.stem_kernel");
  }
  if (stem_stride < 1) throw ConfigError("stem_stride must be >= 1", "encoder.stem_stride");
  if (widths.size() != blocks.size()) {
    throw ConfigError("encoder widths and blocks must have the same length", "encoder.blocks");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("encoder widths must be positive", "encoder.widths");
  }
  for (int b : blocks) {
    if (b < 0) throw ConfigError("encoder block counts must be non-negative", "encoder.blocks");
  }
  if (block == BlockType::bottleneck && bottleneck_expansion < 1) {
    throw ConfigError("bottleneck_expansion must be >= 1", "encoder.bottleneck_expansion");
  }
}

int DecoderConfig::embedding_dim() const {
  return embedding == Embedding::affine ? ndim : 2 * fourier_frequencies * ndim;
}

void DecoderConfig::validate() const {
  if (ndim != 1 && ndim != 2) throw ConfigError("decoder ndim must be 1 or 2", "decoder.ndim");
  if (hidden_layers < 1) throw ConfigError("decoder needs at least one hidden layer", "decoder.hidden_layers");
  if (width < 1) throw ConfigError("decoder width must be positive", "decoder.width");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1", "latent_dim");
  if (activation == Activation::relu) {
    throw ConfigError("decoder activation must be smooth (silu or sine)", "decoder.activation");
  }
  if (embedding == Embedding::fourier && fourier_frequencies < 1) {
    throw ConfigError("fourier embedding needs at least one frequency", "decoder.fourier_frequencies");
  }
  if (!(sine_omega0 > 0.0)) throw ConfigError("sine_omega0 must be positive", "decoder.sine_omega0");
}

void OdeFuncConfig::validate() const {
  if (hidden_layers < 1) throw ConfigError("odefunc needs at least one hidden layer", "odefunc.hidden_layers");
  if (width < 1) throw ConfigError("odefunc width must be positive", "odefunc.width");
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1", "latent_dim");
}

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  odefunc.validate();
  if (encoder.latent_dim != decoder.latent_dim || encoder.latent_dim != odefunc.latent_dim) {
    throw ConfigError("inconsistent latent_dim across encoder (" + std::to_string(encoder.latent_dim) +
                          "), decoder (" + std::to_string(decoder.latent_dim) + ") and odefunc (" +
                          std::to_string(odefunc.latent_dim) + ")",
                      "latent_dim");
  }
  if (encoder.ndim != decoder.ndim) {
    throw ConfigError("encoder and decoder disagree on ndim", "ndim");
  }
}

// --- elementwise helpers ---------------------------------------------------

namespace {

template <typename T>
Mat<T> act_forward(const Mat<T>& pre, Activation a, double omega0) {
  switch (a) {
    case Activation::relu: return pre.cwiseMax(T(0));
    case Activation::silu: {
      const auto x = pre.array();
      return (x / (T(1) + (-x).exp())).matrix();
    }
    case Activation::sine: return (pre.array() * static_cast<T>(omega0)).sin().matrix();
  }
  return pre;
}

// d <- d * act'(pre)
template <typename T>
void act_backward_inplace(Mat<T>& d, const Mat<T>& pre, Activation a, double omega0) {
  switch (a) {
    case Activation::relu:
      d.array() *= (pre.array() > T(0)).template cast<T>();
      return;
    case Activation::silu: {
      const auto x = pre.array();
      const Mat<T> s = (T(1) / (T(1) + (-x).exp())).matrix();
      d.array() *= s.array() * (T(1) + x * (T(1) - s.array()));
      return;
    }
    case Activation::sine: {
      const T w = static_cast<T>(omega0);
      d.array() *= (pre.array() * w).cos() * w;
      return;
    }
  }
}

template <typename T>
void fill_normal(T* p, std::size_t n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(dist(rng));
}

template <typename T>
void fill_uniform(T* p, std::size_t n, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(dist(rng));
}

inline int wrap_index(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// Gathers k x k circularly padded patches. Row r = (dy*k + dx)*C + c,
// column (b*Ho + oy)*Wo + ox.
template <typename T>
void im2col(const Mat<T>& x, int C, int B, int H, int W, int k, int s, Mat<T>& cols) {
  const int Ho = strided(H, s), Wo = strided(W, s), p = k / 2;
  const Eigen::Index rows = static_cast<Eigen::Index>(k) * k * C;
  cols.resize(rows, static_cast<Eigen::Index>(B) * Ho * Wo);
  const T* xp = x.data();
  T* cp = cols.data();
  for (int b = 0; b < B; ++b) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        T* colp = cp + (static_cast<Eigen::Index>(b * Ho + oy) * Wo + ox) * rows;
        for (int dy = 0; dy < k; ++dy) {
          const int iy = wrap_index(oy * s + dy - p, H);
          for (int dx = 0; dx < k; ++dx) {
            const int ix = wrap_index(ox * s + dx - p, W);
            const T* src = xp + (static_cast<Eigen::Index>(b * H + iy) * W + ix) * C;
            std::copy(src, src + C, colp + (dy * k + dx) * C);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Mat<T>& cols, int C, int B, int H, int W, int k, int s, Mat<T>& dx) {
  const int Ho = strided(H, s), Wo = strided(W, s), p = k / 2;
  const Eigen::Index rows = cols.rows();
  dx.setZero(C, static_cast<Eigen::Index>(B) * H * W);
  const T* cp = cols.data();
  T* xp = dx.data();
  for (int b = 0; b < B; ++b) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const T* colp = cp + (static_cast<Eigen::Index>(b * Ho + oy) * Wo + ox) * rows;
        for (int dy = 0; dy < k; ++dy) {
          const int iy = wrap_index(oy * s + dy - p, H);
          for (int dxk = 0; dxk < k; ++dxk) {
            const int ix = wrap_index(ox * s + dxk - p, W);
            T* dst = xp + (static_cast<Eigen::Index>(b * H + iy) * W + ix) * C;
            const T* src = colp + (dy * k + dxk) * C;
            for (int c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

} // namespace

// --- encoder ------------------------------------------------------------------

template <typename T>
int Encoder<T>::add_conv(const std::string& name, int in_c, int out_c, int k, int stride) {
  Conv c{in_c, out_c, k, stride, -1, -1};
  c.w = params_.add(name + ".weight", {out_c, static_cast<std::int64_t>(k) * k * in_c});
  c.b = params_.add(name + ".bias", {out_c});
  convs_.push_back(c);
  return static_cast<int>(convs_.size()) - 1;
}

template <typename T>
Encoder<T>::Encoder(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = add_conv("encoder.stem", 1, cfg_.stem_width, cfg_.stem_kernel, cfg_.stem_stride);
  int in = cfg_.stem_width;
  for (std::size_t s = 0; s < cfg_.widths.size(); ++s) {
    for (int b = 0; b < cfg_.blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string name = "encoder.stage" + std::to_string(s) + ".block" + std::to_string(b);
      Block blk;
      int out;
      if (cfg_.block == BlockType::basic) {
        out = cfg_.widths[s];
        blk.c1 = add_conv(name + ".conv1", in, out, 3, stride);
        blk.c2 = add_conv(name + ".conv2", out, out, 3, 1);
      } else {
        const int mid = cfg_.widths[s];
        out = mid * cfg_.bottleneck_expansion;
        blk.c1 = add_conv(name + ".conv1", in, mid, 1, 1);
        blk.c2 = add_conv(name + ".conv2", mid, mid, 3, stride);
        blk.c3 = add_conv(name + ".conv3", mid, out, 1, 1);
      }
      if (stride != 1 || in != out) blk.shortcut = add_conv(name + ".shortcut", in, out, 1, stride);
      blocks_.push_back(blk);
      block_stride_.push_back(stride);
      in = out;
    }
  }
  head_w_ = params_.add("encoder.head.weight", {cfg_.latent_dim, cfg_.feature_dim()});
  head_b_ = params_.add("encoder.head.bias", {cfg_.latent_dim});
}

template <typename T>
void Encoder<T>::init(std::mt19937_64& rng) {
  // Kaiming normal (fan-in, ReLU gain) for convolutions; unit gain for the
  // linear head. Biases start at zero.
  for (const Conv& c : convs_) {
    const double fan_in = static_cast<double>(c.k) * c.k * c.in_c;
    fill_normal(params_.data(c.w), params_.block(c.w).size, std::sqrt(2.0 / fan_in), rng);
    params_.vector(c.b).setZero();
  }
  fill_normal(params_.data(head_w_), params_.block(head_w_).size,
              std::sqrt(1.0 / cfg_.feature_dim()), rng);
  params_.vector(head_b_).setZero();
}

namespace {

template <typename T, typename ConvT, typename TapeT>
Mat<T> conv_apply(const ParamSet<T>& P, const ConvT& c, const Mat<T>& x, int B, int H, int W,
                  TapeT* tape) {
  Mat<T> local;
  Mat<T>& cols = tape ? tape->cols : local;
  if (tape) {
    tape->h = H;
    tape->w = W;
  }
  if (c.k == 1 && c.stride == 1) {
    cols = x;
  } else {
    im2col(x, c.in_c, B, H, W, c.k, c.stride, cols);
  }
  Mat<T> y = P.matrix(c.w) * cols;
  y.colwise() += P.vector(c.b);
  return y;
}

template <typename T, typename ConvT, typename TapeT>
Mat<T> conv_backprop(const ParamSet<T>& P, const ConvT& c, const Mat<T>& dy, const TapeT& tape, int B,
                     std::vector<T>& grad, bool need_dx) {
  grad_matrix(grad, P, c.w).noalias() += dy * tape.cols.transpose();
  grad_vector(grad, P, c.b) += dy.rowwise().sum();
  if (!need_dx) return {};
  Mat<T> dcols = P.matrix(c.w).transpose() * dy;
  if (c.k == 1 && c.stride == 1) return dcols;
  Mat<T> dx;
  col2im(dcols, c.in_c, B, tape.h, tape.w, c.k, c.stride, dx);
  return dx;
}

} // namespace

template <typename T>
Mat<T> Encoder<T>::forward(const Mat<T>& fields, Cache* cache) const {
  const int H0 = cfg_.ndim == 2 ? cfg_.nx : 1;
  const int W0 = cfg_.nx;
  if (fields.rows() != static_cast<Eigen::Index>(H0) * W0) {
    throw ShapeError("encoder expects " + std::to_string(H0 * W0) + " values per snapshot (nx=" +
                     std::to_string(cfg_.nx) + "), got " + std::to_string(fields.rows()));
  }
  const int B = static_cast<int>(fields.cols());
  Cache local;
  Cache& c = cache ? *cache : local;
  const bool keep = cache != nullptr;
  c.batch = B;
  c.conv.assign(convs_.size(), {});
  c.h1.assign(blocks_.size(), {});
  c.h2.assign(blocks_.size(), {});
  c.out.assign(blocks_.size(), {});
  c.block_out_extent.assign(blocks_.size(), {});

  auto tape = [&](int idx) { return keep ? &c.conv[static_cast<std::size_t>(idx)] : nullptr; };

  const Mat<T> x0 = Eigen::Map<const Mat<T>>(fields.data(), 1, fields.size());
  const Conv& stem = convs_[static_cast<std::size_t>(stem_)];
  Mat<T> x = conv_apply(params_, stem, x0, B, H0, W0, tape(stem_)).cwiseMax(T(0));
  int H = strided(H0, stem.stride), W = strided(W0, stem.stride);
  if (keep) c.stem_out = x;

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    const Conv& c1 = convs_[static_cast<std::size_t>(blk.c1)];
    const Conv& c2 = convs_[static_cast<std::size_t>(blk.c2)];
    const int s = block_stride_[i];
    const int Ho = strided(H, s), Wo = strided(W, s);

    Mat<T> h1 = conv_apply(params_, c1, x, B, H, W, tape(blk.c1)).cwiseMax(T(0));
    const int H1 = strided(H, c1.stride), W1 = strided(W, c1.stride);
    Mat<T> y;
    if (blk.c3 < 0) {
      y = conv_apply(params_, c2, h1, B, H1, W1, tape(blk.c2));
    } else {
      Mat<T> h2 = conv_apply(params_, c2, h1, B, H1, W1, tape(blk.c2)).cwiseMax(T(0));
      y = conv_apply(params_, convs_[static_cast<std::size_t>(blk.c3)], h2, B, Ho, Wo, tape(blk.c3));
      if (keep) c.h2[i] = std::move(h2);
    }
    if (blk.shortcut >= 0) {
      y += conv_apply(params_, convs_[static_cast<std::size_t>(blk.shortcut)], x, B, H, W,
                      tape(blk.shortcut));
    } else {
      y += x;
    }
    x = y.cwiseMax(T(0));
    H = Ho;
    W = Wo;
    if (keep) {
      c.h1[i] = std::move(h1);
      c.out[i] = x;
      c.block_out_extent[i] = {H, W};
    }
  }

  const int C = static_cast<int>(x.rows());
  Mat<T> features;
  if (cfg_.pooling == Pooling::flatten) {
    features = Eigen::Map<const Mat<T>>(x.data(), static_cast<Eigen::Index>(C) * H * W, B);
  } else {
    features.resize(C, B);
    for (int b = 0; b < B; ++b) {
      features.col(b) = x.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W).rowwise().mean();
    }
  }
  if (keep && blocks_.empty()) c.stem_out = x;
  Mat<T> z = params_.matrix(head_w_) * features;
  z.colwise() += params_.vector(head_b_);
  return z;
}

template <typename T>
void Encoder<T>::backward(const Mat<T>& dz, const Cache& c, std::vector<T>& grad) const {
  const int B = c.batch;
  const Mat<T>& last = blocks_.empty() ? c.stem_out : c.out.back();
  const auto [H, W] = blocks_.empty()
                          ? std::pair<int, int>{strided(cfg_.ndim == 2 ? cfg_.nx : 1, cfg_.stem_stride),
                                                strided(cfg_.nx, cfg_.stem_stride)}
                          : c.block_out_extent.back();
  const int C = static_cast<int>(last.rows());

  Mat<T> features;
  if (cfg_.pooling == Pooling::flatten) {
    features = Eigen::Map<const Mat<T>>(last.data(), static_cast<Eigen::Index>(C) * H * W, B);
  } else {
    features.resize(C, B);
    for (int b = 0; b < B; ++b) {
      features.col(b) = last.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W).rowwise().mean();
    }
  }
  grad_matrix(grad, params_, head_w_).noalias() += dz * features.transpose();
  grad_vector(grad, params_, head_b_) += dz.rowwise().sum();
  const Mat<T> dfeat = params_.matrix(head_w_).transpose() * dz;

  Mat<T> dx;
  if (cfg_.pooling == Pooling::flatten) {
    dx = Eigen::Map<const Mat<T>>(dfeat.data(), C, static_cast<Eigen::Index>(B) * H * W);
  } else {
    dx.resize(C, static_cast<Eigen::Index>(B) * H * W);
    const T inv = T(1) / static_cast<T>(H * W);
    for (int b = 0; b < B; ++b) {
      dx.middleCols(static_cast<Eigen::Index>(b) * H * W, H * W) =
          (dfeat.col(b) * inv).replicate(1, H * W);
    }
  }

  for (std::size_t ii = blocks_.size(); ii-- > 0;) {
    const Block& blk = blocks_[ii];
    Mat<T> d = dx.cwiseProduct((c.out[ii].array() > T(0)).template cast<T>().matrix());
    Mat<T> dh1;
    if (blk.c3 < 0) {
      dh1 = conv_backprop(params_, convs_[static_cast<std::size_t>(blk.c2)], d,
                          c.conv[static_cast<std::size_t>(blk.c2)], B, grad, true);
    } else {
      Mat<T> dh2 = conv_backprop(params_, convs_[static_cast<std::size_t>(blk.c3)], d,
                                 c.conv[static_cast<std::size_t>(blk.c3)], B, grad, true);
      dh2.array() *= (c.h2[ii].array() > T(0)).template cast<T>();
      dh1 = conv_backprop(params_, convs_[static_cast<std::size_t>(blk.c2)], dh2,
                          c.conv[static_cast<std::size_t>(blk.c2)], B, grad, true);
    }
    dh1.array() *= (c.h1[ii].array() > T(0)).template cast<T>();
    Mat<T> dprev = conv_backprop(params_, convs_[static_cast<std::size_t>(blk.c1)], dh1,
                                 c.conv[static_cast<std::size_t>(blk.c1)], B, grad, true);
    if (blk.shortcut >= 0) {
      dprev += conv_backprop(params_, convs_[static_cast<std::size_t>(blk.shortcut)], d,
                             c.conv[static_cast<std::size_t>(blk.shortcut)], B, grad, true);
    } else {
      dprev += d;
    }
    dx = std::move(dprev);
  }
  dx.array() *= (c.stem_out.array() > T(0)).template cast<T>();
  conv_backprop(params_, convs_[static_cast<std::size_t>(stem_)], dx,
                c.conv[static_cast<std::size_t>(stem_)], B, grad, false);
}

// --- MLP ------------------------------------------------------------------------

template <typename T>
Mlp<T>::Mlp(ParamSet<T>& params, const std::string& prefix, std::vector<int> dims, Activation act,
            double omega0)
    : dims_(std::move(dims)), act_(act), omega0_(omega0) {
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::string name = prefix + ".layer" + std::to_string(l);
    w_.push_back(params.add(name + ".weight", {dims_[l + 1], dims_[l]}));
    b_.push_back(params.add(name + ".bias", {dims_[l + 1]}));
  }
}

template <typename T>
void Mlp<T>::init(ParamSet<T>& p, std::mt19937_64& rng, bool first_layer_is_input,
                  bool zero_output) const {
  for (std::size_t l = 0; l < w_.size(); ++l) {
    const double fan_in = dims_[l];
    double wbound = 1.0 / std::sqrt(fan_in);
    if (act_ == Activation::sine) {
      wbound = (l == 0 && first_layer_is_input) ? 1.0 / fan_in : std::sqrt(6.0 / fan_in) / omega0_;
    }
    fill_uniform(p.data(w_[l]), p.block(w_[l]).size, wbound, rng);
    fill_uniform(p.data(b_[l]), p.block(b_[l]).size, 1.0 / std::sqrt(fan_in), rng);
  }
  if (zero_output && !w_.empty()) {
    p.vector(w_.back()).setZero();
    p.vector(b_.back()).setZero();
  }
}

template <typename T>
Mat<T> Mlp<T>::forward(const ParamSet<T>& p, const Mat<T>& x, Cache* cache) const {
  if (cache) {
    cache->inputs.resize(w_.size());
    cache->pre.resize(w_.size() > 0 ? w_.size() - 1 : 0);
  }
  Mat<T> h = x;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    Mat<T> pre = p.matrix(w_[l]) * h;
    pre.colwise() += p.vector(b_[l]);
    if (cache) cache->inputs[l] = std::move(h);
    if (l + 1 == w_.size()) return pre;
    h = act_forward(pre, act_, omega0_);
    if (cache) cache->pre[l] = std::move(pre);
  }
  return h;
}

template <typename T>
Mat<T> Mlp<T>::backward(const ParamSet<T>& p, const Mat<T>& dy, const Cache& cache,
                        std::vector<T>& grad) const {
  Mat<T> d = dy;
  for (std::size_t l = w_.size(); l-- > 0;) {
    grad_matrix(grad, p, w_[l]).noalias() += d * cache.inputs[l].transpose();
    grad_vector(grad, p, b_[l]) += d.rowwise().sum();
    Mat<T> din = p.matrix(w_[l]).transpose() * d;
    if (l == 0) return din;
    act_backward_inplace(din, cache.pre[l - 1], act_, omega0_);
    d = std::move(din);
  }
  return d;
}

// --- decoder ---------------------------------------------------------------------

template <typename T>
Decoder<T>::Decoder(const DecoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  wz_ = params_.add("decoder.input.latent_weight", {cfg_.width, cfg_.latent_dim});
  we_ = params_.add("decoder.input.coord_weight", {cfg_.width, cfg_.embedding_dim()});
  b_ = params_.add("decoder.input.bias", {cfg_.width});
  std::vector<int> dims(static_cast<std::size_t>(cfg_.hidden_layers), cfg_.width);
  dims.push_back(1);
  tail_ = Mlp<T>(params_, "decoder.tail", dims, cfg_.activation, cfg_.sine_omega0);
}

template <typename T>
void Decoder<T>::init(std::mt19937_64& rng) {
  const double fan_in = cfg_.latent_dim + cfg_.embedding_dim();
  const double wbound = cfg_.activation == Activation::sine ? 1.0 / fan_in : 1.0 / std::sqrt(fan_in);
  fill_uniform(params_.data(wz_), params_.block(wz_).size, wbound, rng);
  fill_uniform(params_.data(we_), params_.block(we_).size, wbound, rng);
  fill_uniform(params_.data(b_), params_.block(b_).size, 1.0 / std::sqrt(fan_in), rng);
  tail_.init(params_, rng, false, false);
}

template <typename T>
Mat<T> Decoder<T>::activate(const Mat<T>& pre) const {
  return act_forward(pre, cfg_.activation, cfg_.sine_omega0);
}

template <typename T>
Mat<T> Decoder<T>::embed(const Eigen::MatrixXd& coords) const {
  if (coords.rows() != cfg_.ndim) {
    throw ShapeError("decoder expects " + std::to_string(cfg_.ndim) + "-D coordinates, got " +
                     std::to_string(coords.rows()));
  }
  const Eigen::Index P = coords.cols();
  Mat<T> e(cfg_.embedding_dim(), P);
  for (Eigen::Index p = 0; p < P; ++p) {
    for (int d = 0; d < cfg_.ndim; ++d) {
      const double x = coords(d, p) - std::floor(coords(d, p));
      if (cfg_.embedding == Embedding::affine) {
        e(d, p) = static_cast<T>(2.0 * x - 1.0);
      } else {
        for (int f = 0; f < cfg_.fourier_frequencies; ++f) {
          const double a = 2.0 * std::numbers::pi * (f + 1) * x;
          const int row = (d * cfg_.fourier_frequencies + f) * 2;
          e(row, p) = static_cast<T>(std::sin(a));
          e(row + 1, p) = static_cast<T>(std::cos(a));
        }
      }
    }
  }
  return e;
}

template <typename T>
Mat<T> Decoder<T>::forward(const Mat<T>& z, const Eigen::MatrixXd& coords, Cache* cache) const {
  if (z.rows() != cfg_.latent_dim) {
    throw ShapeError("decoder expects latent dimension " + std::to_string(cfg_.latent_dim) +
                     ", got " + std::to_string(z.rows()));
  }
  const Eigen::Index S = z.cols();
  const Eigen::Index P = coords.cols();
  Mat<T> e = embed(coords);
  const Mat<T> a = params_.matrix(wz_) * z;
  Mat<T> bm = params_.matrix(we_) * e;
  bm.colwise() += params_.vector(b_);
  Mat<T> pre(cfg_.width, S * P);
  for (Eigen::Index s = 0; s < S; ++s) pre.middleCols(s * P, P) = bm.colwise() + a.col(s);
  Mat<T> h = activate(pre);
  Mat<T> out = tail_.forward(params_, h, cache ? &cache->tail : nullptr);
  if (cache) {
    cache->latents = z;
    cache->embedding = std::move(e);
    cache->pre_in = std::move(pre);
    cache->points = static_cast<int>(P);
  }
  return Eigen::Map<const Mat<T>>(out.data(), P, S);
}

template <typename T>
Mat<T> Decoder<T>::backward(const Mat<T>& du, const Cache& cache, std::vector<T>& grad) const {
  const Eigen::Index P = cache.points;
  const Eigen::Index S = cache.latents.cols();
  const Mat<T> dout = Eigen::Map<const Mat<T>>(du.data(), 1, P * S);
  Mat<T> dpre = tail_.backward(params_, dout, cache.tail, grad);
  act_backward_inplace(dpre, cache.pre_in, cfg_.activation, cfg_.sine_omega0);
  Mat<T> da(cfg_.width, S);
  Mat<T> dbm = Mat<T>::Zero(cfg_.width, P);
  for (Eigen::Index s = 0; s < S; ++s) {
    const auto block = dpre.middleCols(s * P, P);
    da.col(s) = block.rowwise().sum();
    dbm += block;
  }
  grad_matrix(grad, params_, wz_).noalias() += da * cache.latents.transpose();
  grad_matrix(grad, params_, we_).noalias() += dbm * cache.embedding.transpose();
  grad_vector(grad, params_, b_) += dbm.rowwise().sum();
  return params_.matrix(wz_).transpose() * da;
}

template <typename T>
std::vector<T> Decoder<T>::decode_points(const Vec<T>& z, const Eigen::MatrixXd& coords) const {
  if (z.size() != cfg_.latent_dim) {
    throw ShapeError("decoder expects latent dimension " + std::to_string(cfg_.latent_dim) +
                     ", got " + std::to_string(z.size()));
  }
  if (coords.rows() != cfg_.ndim) {
    throw ShapeError("decoder expects " + std::to_string(cfg_.ndim) + "-D coordinates, got " +
                     std::to_string(coords.rows()));
  }
  const Eigen::Index P = coords.cols();
  const Vec<T> offset = params_.matrix(wz_) * z + params_.vector(b_);
  std::vector<T> out(static_cast<std::size_t>(P));
  Eigen::MatrixXd chunk(cfg_.ndim, kChunk);
  for (Eigen::Index start = 0; start < P; start += kChunk) {
    const Eigen::Index n = std::min<Eigen::Index>(kChunk, P - start);
    chunk.setZero();
    chunk.leftCols(n) = coords.middleCols(start, n);
    Mat<T> pre = params_.matrix(we_) * embed(chunk);
    pre.colwise() += offset;
    const Mat<T> y = tail_.forward(params_, activate(pre));
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(start + i)] = y(0, i);
  }
  return out;
}

// --- ODE function ---------------------------------------------------------------

template <typename T>
OdeFunc<T>::OdeFunc(const OdeFuncConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::vector<int> dims{cfg_.latent_dim};
  for (int l = 0; l < cfg_.hidden_layers; ++l) dims.push_back(cfg_.width);
  dims.push_back(cfg_.latent_dim);
  mlp_ = Mlp<T>(params_, "odefunc", dims, cfg_.activation);
  shift_ = Vec<T>::Zero(cfg_.latent_dim);
}

template <typename T>
void OdeFunc<T>::init(std::mt19937_64& rng) {
  mlp_.init(params_, rng, true, cfg_.zero_init_output);
}

template <typename T>
void OdeFunc<T>::set_standardization(const Vec<T>& shift, T scale) {
  if (shift.size() != cfg_.latent_dim) throw ShapeError("standardisation shift has wrong length");
  if (!(scale > T(0))) throw ConfigError("standardisation scale must be positive", "odefunc.scale");
  shift_ = shift;
  scale_ = scale;
}

template <typename T>
Mat<T> OdeFunc<T>::forward(const Mat<T>& z, Cache* cache) const {
  if (z.rows() != cfg_.latent_dim) {
    throw ShapeError("odefunc expects latent dimension " + std::to_string(cfg_.latent_dim) +
                     ", got " + std::to_string(z.rows()));
  }
  const Mat<T> x = (z.colwise() - shift_) / scale_;
  return mlp_.forward(params_, x, cache ? &cache->mlp : nullptr) * scale_;
}

template <typename T>
Mat<T> OdeFunc<T>::backward(const Mat<T>& dy, const Cache& cache, std::vector<T>& grad) const {
  // d/dz [scale * g((z - shift)/scale)] = J_g, so the input gradient needs no rescaling.
  return mlp_.backward(params_, dy * scale_, cache.mlp, grad) / scale_;
}

// --- model-level helpers ---------------------------------------------------------

template <typename T>
void ModelGrads<T>::zero() {
  std::fill(encoder.begin(), encoder.end(), T(0));
  std::fill(decoder.begin(), decoder.end(), T(0));
  std::fill(odefunc.begin(), odefunc.end(), T(0));
}

template <typename T>
ModelState<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelState<T> m{cfg, Encoder<T>(cfg.encoder), Decoder<T>(cfg.decoder), OdeFunc<T>(cfg.odefunc)};
  std::mt19937_64 enc_rng(derive_seed(seed, 0));
  std::mt19937_64 dec_rng(derive_seed(seed, 1));
  std::mt19937_64 ode_rng(derive_seed(seed, 2));
  m.encoder.init(enc_rng);
  m.decoder.init(dec_rng);
  m.odefunc.init(ode_rng);
  return m;
}

template <typename T>
Vec<T> encode(const ModelState<T>& state, const std::vector<float>& field) {
  Mat<T> x(static_cast<Eigen::Index>(field.size()), 1);
  for (std::size_t i = 0; i < field.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<T>(field[i]);
  return state.encoder.forward(x).col(0);
}

template <typename T>
std::vector<T> decode(const ModelState<T>& state, const Vec<T>& z, const std::vector<double>& queries) {
  const int nd = state.config.decoder.ndim;
  if (queries.size() % static_cast<std::size_t>(nd) != 0) {
    throw ShapeError("query list length is not a multiple of ndim");
  }
  const Eigen::Map<const Eigen::MatrixXd> coords(queries.data(), nd,
                                                 static_cast<Eigen::Index>(queries.size()) / nd);
  return state.decoder.decode_points(z, coords);
}

template <typename T>
Vec<T> ode_rhs(const ModelState<T>& state, const Vec<T>& z) {
  return state.odefunc.forward(z).col(0);
}

Eigen::MatrixXd grid_coordinates(int ndim, int m) {
  const GridSpec g{m, ndim};
  const std::vector<double> c = g.coordinates();
  return Eigen::Map<const Eigen::MatrixXd>(c.data(), ndim, static_cast<Eigen::Index>(g.points()));
}

#define JERKROM_INSTANTIATE(T)                                                              \
  template class Encoder<T>;                                                                \
  template class Mlp<T>;                                                                    \
  template class Decoder<T>;                                                                \
  template class OdeFunc<T>;                                                                \
  template struct ModelGrads<T>;                                                            \
  template ModelState<T> init_model<T>(const ModelConfig&, std::uint64_t);                   \
  template Vec<T> encode<T>(const ModelState<T>&, const std::vector<float>&);                \
  template std::vector<T> decode<T>(const ModelState<T>&, const Vec<T>&, const std::vector<double>&); \
  template Vec<T> ode_rhs<T>(const ModelState<T>&, const Vec<T>&);

JERKROM_INSTANTIATE(float)
JERKROM_INSTANTIATE(double)

} // namespace jerkrom::nets

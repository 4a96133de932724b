#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pgecap/conditioning.hpp"
#include "pgecap/schedule.hpp"

namespace pgecap {

/// One denoiser evaluation: noise estimate plus the cross-attention maps of
/// every attention layer, in layer order.
struct NoisePrediction {
  ad::Var eps;
  std::vector<ad::Var> attention;
};

/// eps_theta(z_t, t, C). Implementations must be deterministic and
/// differentiable with respect to z_t.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual NoisePrediction predict(ad::Var z, int t, ad::Var text) const = 0;
  virtual std::size_t attention_layers() const = 0;
  virtual Shape latent_shape() const = 0;
};

namespace detail {

inline Tensor random_weights(Rng& rng, Shape shape, double fan_in, double gain) {
  return rng.normal_tensor(shape, gain / std::sqrt(fan_in));
}

}  // namespace detail

/// Desk-scale stand-in for a text-conditioned U-Net on (4, 8, 8) latents.
///
/// eps = prior(t) * z + residual_scale * r(z, t, C), where prior(t) * z is the
/// exact noise predictor for latents distributed N(0, prior_std^2) and r is a
/// small convolutional network with two cross-attention blocks. Weights are
/// drawn once from the seed.
class ReferenceDenoiser final : public Denoiser {
 public:
  struct Options {
    std::size_t channels = 4;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t hidden = 16;
    std::size_t text_dim = 16;
    std::size_t attention_dim = 16;
    std::size_t attention_blocks = 2;
    double prior_std = 2.0;
    double residual_scale = 0.02;
  };

  ReferenceDenoiser(const NoiseSchedule& schedule, std::uint64_t seed)
      : ReferenceDenoiser(schedule, seed, Options{}) {}

  ReferenceDenoiser(const NoiseSchedule& schedule, std::uint64_t seed, Options opt)
      : opt_(opt), alpha_bars_(schedule.alpha_bars) {
    if (opt_.attention_blocks < 2) throw ConfigError("denoiser needs >= 2 attention layers");
    Rng rng(derive_seed(seed, {0xde}));
    const double c = static_cast<double>(opt_.channels);
    const double h = static_cast<double>(opt_.hidden);
    conv_in_w_ = detail::random_weights(rng, {opt_.hidden, opt_.channels, 3, 3}, 9 * c, 1.0);
    conv_in_b_ = Tensor({opt_.hidden});
    time_proj_ = detail::random_weights(rng, {opt_.hidden, kTimeFeatures}, kTimeFeatures, 0.5);
    for (std::size_t j = 0; j < opt_.attention_blocks; ++j) {
      Block b;
      b.attn.d = opt_.attention_dim;
      b.attn.w_q = detail::random_weights(rng, {opt_.hidden, opt_.attention_dim}, h, 1.0);
      b.attn.w_k = detail::random_weights(rng, {opt_.text_dim, opt_.attention_dim},
                                          static_cast<double>(opt_.text_dim), 1.0);
      b.attn.w_v = detail::random_weights(rng, {opt_.text_dim, opt_.attention_dim},
                                          static_cast<double>(opt_.text_dim), 1.0);
      b.w_out = detail::random_weights(rng, {opt_.attention_dim, opt_.hidden},
                                       static_cast<double>(opt_.attention_dim), 1.0);
      b.conv_w = detail::random_weights(rng, {opt_.hidden, opt_.hidden, 3, 3}, 9 * h, 1.0);
      b.conv_b = Tensor({opt_.hidden});
      blocks_.push_back(std::move(b));
    }
    conv_out_w_ = detail::random_weights(rng, {opt_.channels, opt_.hidden, 3, 3}, 9 * h, 1.0);
    conv_out_b_ = Tensor({opt_.channels});
  }

  std::size_t attention_layers() const override { return blocks_.size(); }
  Shape latent_shape() const override { return {opt_.channels, opt_.height, opt_.width}; }
  const Options& options() const { return opt_; }

  NoisePrediction predict(ad::Var z, int t, ad::Var text) const override {
    require_same_shape(z.shape(), latent_shape(), "denoiser latent");
    if (text.shape().size() != 2 || text.shape()[1] != opt_.text_dim) {
      throw ShapeError("denoiser text embedding must be (L, " + std::to_string(opt_.text_dim) + ")");
    }
    if (t < 1 || t > static_cast<int>(alpha_bars_.size())) {
      throw std::invalid_argument("denoiser timestep out of range");
    }
    const std::size_t hw = opt_.height * opt_.width;
    const double abar = alpha_bars_[t - 1];

    auto h = ad::conv2d(z, conv_in_w_, conv_in_b_, 1);
    h = ad::tanh(ad::add_channel_bias(h, time_bias(t)));

    NoisePrediction out;
    for (const Block& b : blocks_) {
      auto features = ad::transpose(ad::reshape(h, {opt_.hidden, hw}));  // (hw, hidden)
      auto attn = cross_attention(features, text, b.attn);
      out.attention.push_back(attn.map);
      auto proj = ad::matmul(attn.output, z.tape().constant(b.w_out));  // (hw, hidden)
      h = ad::add(h, ad::reshape(ad::transpose(proj), {opt_.hidden, opt_.height, opt_.width}));
      h = ad::tanh(ad::conv2d(h, b.conv_w, b.conv_b, 1));
    }
    auto residual = ad::tanh(ad::conv2d(h, conv_out_w_, conv_out_b_, 1));

    const double s2 = opt_.prior_std * opt_.prior_std;
    const double prior = std::sqrt(1.0 - abar) / (abar * s2 + 1.0 - abar);
    out.eps = ad::axpby(prior, z, opt_.residual_scale, residual);
    return out;
  }

 private:
  static constexpr std::size_t kTimeFeatures = 8;

  struct Block {
    AttentionWeights attn;
    Tensor w_out;
    Tensor conv_w;
    Tensor conv_b;
  };

  // Sinusoidal timestep features projected to one bias per hidden channel.
  Tensor time_bias(int t) const {
    std::vector<double> feats(kTimeFeatures);
    for (std::size_t k = 0; k < kTimeFeatures / 2; ++k) {
      const double freq = std::pow(1000.0, -static_cast<double>(k) / (kTimeFeatures / 2));
      feats[2 * k] = std::sin(t * freq);
      feats[2 * k + 1] = std::cos(t * freq);
    }
    Tensor bias({opt_.hidden});
    for (std::size_t c = 0; c < opt_.hidden; ++c) {
      for (std::size_t k = 0; k < kTimeFeatures; ++k) bias[c] += time_proj_[c * kTimeFeatures + k] * feats[k];
    }
    return bias;
  }

  Options opt_;
  std::vector<double> alpha_bars_;
  Tensor conv_in_w_, conv_in_b_, time_proj_;
  std::vector<Block> blocks_;
  Tensor conv_out_w_, conv_out_b_;
};

}  // namespace pgecap

#pragma once

#include <cstdint>

#include "pgecap/schedule.hpp"

namespace pgecap {

/// Fixed transpose-convolution stack mapping a (4, 8, 8) latent to a
/// (3, 64, 64) image. Each stage doubles the resolution (kernel 4, stride 2,
/// padding 1); the last stage ends in a sigmoid followed by a [0, 1] clamp.
///
/// Kernels are a bilinear upsampling stencil times a channel-mixing matrix,
/// plus a small random detail term. Intermediate stages keep the 4 latent
/// channels; the last stage mixes them to RGB with a latent-to-RGB preview
/// matrix, so latents act as smooth colour fields.
class Decoder {
 public:
  struct Options {
    std::size_t latent_channels = 4;
    std::size_t stages = 3;
    double gain = 14.0;
    double detail = 0.1;
  };

  explicit Decoder(std::uint64_t seed) : Decoder(seed, Options{}) {}

  Decoder(std::uint64_t seed, Options opt) : opt_(opt) {
    if (opt_.stages < 1) throw ConfigError("decoder needs at least one stage");
    if (opt_.latent_channels != 4) throw ConfigError("decoder expects 4 latent channels");
    Rng rng(derive_seed(seed, {0xdec}));
    const std::size_t c = opt_.latent_channels;
    for (std::size_t s = 0; s < opt_.stages; ++s) {
      const bool last = s + 1 == opt_.stages;
      const std::size_t out = last ? 3 : c;
      Tensor mix({c, out});
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t o = 0; o < out; ++o)
          mix[i * out + o] = last ? opt_.gain * kLatentToRgb[i][o] : (i == o ? 1.0 : 0.0);
      Tensor w = rng.normal_tensor({c, out, 4, 4}, opt_.detail / std::sqrt(4.0 * static_cast<double>(c)));
      constexpr double stencil[4] = {0.25, 0.75, 0.75, 0.25};
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t o = 0; o < out; ++o)
          for (std::size_t ky = 0; ky < 4; ++ky)
            for (std::size_t kx = 0; kx < 4; ++kx)
              w.data[((i * out + o) * 4 + ky) * 4 + kx] += mix[i * out + o] * stencil[ky] * stencil[kx];
      weights_.push_back(std::move(w));
      biases_.push_back(Tensor({out}));
    }
  }

  std::size_t upscale() const { return std::size_t{1} << opt_.stages; }

  ad::Var decode(ad::Var z0) const {
    const Shape& s = z0.shape();
    if (s.size() != 3 || s[0] != opt_.latent_channels) {
      throw ShapeError("decoder expects (" + std::to_string(opt_.latent_channels) +
                       ", H, W) latents, got " + to_string(s));
    }
    ad::Var h = z0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = ad::conv_transpose2d(h, weights_[i], biases_[i], 2, 1);
      h = i + 1 == weights_.size() ? ad::sigmoid(h) : ad::tanh(h);
    }
    return ad::clamp(h, 0.0, 1.0);
  }

  Tensor decode(const LatentState& z0) const {
    if (z0.timestep != 0) throw std::invalid_argument("decode expects a final (t = 0) latent");
    ad::Tape tape;
    return decode(tape.constant(z0.values)).value();
  }

 private:
  // Widely used linear preview of Stable Diffusion latents as RGB; channel 0
  // carries luminance.
  static constexpr double kLatentToRgb[4][3] = {{0.298, 0.207, 0.208},
                                                {0.187, 0.286, 0.173},
                                                {-0.158, 0.189, 0.264},
                                                {-0.184, -0.271, -0.473}};

  Options opt_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

}  // namespace pgecap

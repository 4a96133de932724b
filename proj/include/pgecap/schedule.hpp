#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pgecap/ops.hpp"
#include "pgecap/random.hpp"

namespace pgecap {

/// Linear-beta noise schedule over timesteps 1..T plus the sampler's
/// descending timestep subsequence.
struct NoiseSchedule {
  std::vector<double> betas;       // betas[t - 1] = beta_t
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // cumulative product of alphas
  std::vector<int> timesteps;      // strictly decreasing, starts at T

  int horizon() const { return static_cast<int>(betas.size()); }
  double beta(int t) const { return betas.at(t - 1); }
  double alpha(int t) const { return alphas.at(t - 1); }
  /// alpha_bar_0 = 1 by convention.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars.at(t - 1); }
  /// Timestep following timesteps[i] in the sampling order (0 after the last).
  int previous(std::size_t i) const {
    return i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
  }
};

inline NoiseSchedule build_schedule(int horizon, double beta_start, double beta_end,
                                    int num_steps) {
  if (horizon < 1) throw ConfigError("schedule horizon T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("need 0 < beta_start <= beta_end < 1");
  }
  if (num_steps < 1 || num_steps > horizon) {
    throw ConfigError("sampler steps must lie in [1, T], got " + std::to_string(num_steps));
  }
  NoiseSchedule s;
  s.betas.resize(horizon);
  for (int t = 0; t < horizon; ++t) {
    const double frac = horizon == 1 ? 0.0 : static_cast<double>(t) / (horizon - 1);
    s.betas[t] = beta_start + frac * (beta_end - beta_start);
  }
  double prod = 1.0;
  for (double b : s.betas) {
    s.alphas.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bars.push_back(prod);
  }
  // Evenly spaced from T down to 1; a single step uses T alone.
  if (num_steps == 1) {
    s.timesteps = {horizon};
  } else {
    for (int k = 0; k < num_steps; ++k) {
      const double pos = static_cast<double>(k) * (horizon - 1) / (num_steps - 1);
      s.timesteps.push_back(horizon - static_cast<int>(std::lround(pos)));
    }
  }
  return s;
}

/// Latent array with its diffusion timestep.
struct LatentState {
  Tensor values;  // (channels, height, width)
  int timestep = 0;
};

enum class SigmaMode { deterministic, stochastic };

struct SamplerConfig {
  int num_steps = 7;
  double guidance_scale = 7.5;
  SigmaMode sigma_mode = SigmaMode::deterministic;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_steps < 1) throw ConfigError("sampler steps must be >= 1");
    if (!(guidance_scale >= 0.0)) throw ConfigError("guidance scale must be >= 0");
  }
};

/// Ancestral DDPM update: mean of the learned posterior plus sigma_t * noise.
/// Reference path only; decrements t by one.
inline LatentState ddpm_step(const LatentState& z, const Tensor& eps,
                             const NoiseSchedule& schedule, const Tensor& noise,
                             double sigma_t) {
  const int t = z.timestep;
  if (t < 1) throw std::invalid_argument("ddpm_step: cannot step from t = 0");
  if (t > schedule.horizon()) throw std::invalid_argument("ddpm_step: t beyond schedule");
  require_same_shape(z.values.shape, eps.shape, "ddpm_step eps");
  require_same_shape(z.values.shape, noise.shape, "ddpm_step noise");
  const double inv_sqrt_alpha = std::sqrt(1.0 / schedule.alpha(t));
  const double eps_coeff = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
  LatentState out{Tensor(z.values.shape), t - 1};
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = inv_sqrt_alpha * (z.values[i] - eps_coeff * eps[i]) + sigma_t * noise[i];
  }
  return out;
}

namespace detail {
inline void check_ddim_args(double abar_t, double abar_prev, double sigma_t) {
  if (!(abar_t > 0.0 && abar_t <= 1.0 && abar_prev > 0.0 && abar_prev <= 1.0)) {
    throw std::invalid_argument("ddim_step: alpha_bar values must lie in (0, 1]");
  }
  if (!(sigma_t >= 0.0)) throw std::invalid_argument("ddim_step: sigma_t must be >= 0");
  if (sigma_t * sigma_t > 1.0 - abar_prev) {
    throw std::invalid_argument("ddim_step: sigma_t^2 exceeds 1 - alpha_bar_prev");
  }
}
}  // namespace detail

/// Non-Markovian DDIM update from alpha_bar_t to alpha_bar_prev:
///   sqrt(abar_prev) * (z - sqrt(1 - abar_t) eps) / sqrt(abar_t)
///   + sqrt(1 - abar_prev - sigma^2) eps + sigma xi
inline Tensor ddim_step(const Tensor& z, const Tensor& eps, double abar_t, double abar_prev,
                        double sigma_t, const Tensor& xi) {
  detail::check_ddim_args(abar_t, abar_prev, sigma_t);
  require_same_shape(z.shape, eps.shape, "ddim_step eps");
  const bool has_noise = sigma_t != 0.0;
  if (has_noise) require_same_shape(z.shape, xi.shape, "ddim_step xi");
  const double sa_prev = std::sqrt(abar_prev);
  const double sa_t = std::sqrt(abar_t);
  const double s1_t = std::sqrt(1.0 - abar_t);
  const double dir = std::sqrt(1.0 - abar_prev - sigma_t * sigma_t);
  Tensor out(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = sa_prev * ((z[i] - s1_t * eps[i]) / sa_t) + dir * eps[i];
    if (has_noise) out[i] += sigma_t * xi[i];
  }
  return out;
}

/// Differentiable DDIM update (z and eps on the tape).
inline ad::Var ddim_step(ad::Var z, ad::Var eps, double abar_t, double abar_prev, double sigma_t,
                         const Tensor& xi) {
  detail::check_ddim_args(abar_t, abar_prev, sigma_t);
  const double sa_t = std::sqrt(abar_t);
  auto x0 = ad::axpby(1.0 / sa_t, z, -std::sqrt(1.0 - abar_t) / sa_t, eps);
  auto out = ad::axpby(std::sqrt(abar_prev), x0,
                       std::sqrt(1.0 - abar_prev - sigma_t * sigma_t), eps);
  if (sigma_t != 0.0) {
    Tensor noise = xi;
    for (double& v : noise.data) v *= sigma_t;
    out = ad::add_constant(out, noise);
  }
  return out;
}

/// Classifier-free guidance: eps_uncond + s * (eps_cond - eps_uncond), evaluated
/// as (1 - s) * eps_uncond + s * eps_cond so s = 0 and s = 1 are exact.
inline Tensor cfg_combine(const Tensor& eps_uncond, const Tensor& eps_cond, double s) {
  require_same_shape(eps_uncond.shape, eps_cond.shape, "cfg_combine");
  if (!(s >= 0.0)) throw ConfigError("guidance scale must be >= 0");
  Tensor out(eps_uncond.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (1.0 - s) * eps_uncond[i] + s * eps_cond[i];
  }
  return out;
}

inline ad::Var cfg_combine(ad::Var eps_uncond, ad::Var eps_cond, double s) {
  require_same_shape(eps_uncond.shape(), eps_cond.shape(), "cfg_combine");
  if (!(s >= 0.0)) throw ConfigError("guidance scale must be >= 0");
  return ad::axpby(1.0 - s, eps_uncond, s, eps_cond);
}

/// DDIM sigma for eta = 1 (used by SigmaMode::stochastic).
inline double ddim_sigma(double abar_t, double abar_prev) {
  return std::sqrt((1.0 - abar_prev) / (1.0 - abar_t) * (1.0 - abar_t / abar_prev));
}

}  // namespace pgecap

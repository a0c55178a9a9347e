#pragma once

// Discrete-time denoising diffusion: noise schedules, the closed-form forward
// process, the epsilon-prediction loss, classifier-free guidance and two
// reverse samplers (deterministic DDIM-style and ancestral).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mirrorfusion/raster.hpp"

namespace mf {

enum class ScheduleKind { linear, cosine };
enum class SamplerKind { deterministic, ancestral };

inline constexpr int kTrainTimesteps = 1000;
inline constexpr int kDefaultSamplingSteps = 50;
inline constexpr double kDefaultCfgScale = 7.5;

inline ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw InvalidArgument("unknown schedule kind '" + s + "'");
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "deterministic" || s == "ddim") return SamplerKind::deterministic;
  if (s == "ancestral") return SamplerKind::ancestral;
  throw InvalidArgument("unknown sampler '" + s + "'");
}

struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  double snr(int t) const { return alpha_bar.at(t) / (1.0 - alpha_bar.at(t)); }
};

/// Linear schedule spans beta in [1e-4, 0.02]; cosine follows the squared-cosine
/// alpha-bar curve with offset s = 0.008 and betas capped at 0.999.
inline NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear) {
  if (T < 2) throw InvalidArgument("make_schedule: T must be >= 2, got " + std::to_string(T));
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  if (kind == ScheduleKind::linear) {
    constexpr double lo = 1e-4, hi = 0.02;
    for (int t = 0; t < T; ++t) s.beta[t] = lo + (hi - lo) * t / (T - 1);
  } else {
    constexpr double off = 0.008;
    auto f = [&](double t) {
      const double a = std::cos((t / T + off) / (1.0 + off) * std::numbers::pi / 2.0);
      return a * a;
    };
    for (int t = 0; t < T; ++t) s.beta[t] = std::min(1.0 - f(t + 1) / f(t), 0.999);
  }
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    prod *= 1.0 - s.beta[t];
    s.alpha_bar[t] = prod;
  }
  return s;
}

/// Fills a raster with i.i.d. standard normal samples.
template <typename T>
void fill_gaussian(Raster<T>& r, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (T& v : r.values()) v = static_cast<T>(n01(rng));
}

template <typename T>
Raster<T> gaussian_like(int h, int w, int c, std::mt19937_64& rng) {
  Raster<T> r(h, w, c);
  fill_gaussian(r, rng);
  return r;
}

/// z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <typename T>
Raster<T> q_sample(const Raster<T>& x0, const Raster<T>& eps, double alpha_bar) {
  require_same_shape(x0, eps, "q_sample");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  Raster<T> z(x0.height(), x0.width(), x0.channels());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.values()[i] = static_cast<T>(a * x0.values()[i] + b * eps.values()[i]);
  }
  return z;
}

template <typename T>
Raster<T> q_sample(const Raster<T>& x0, const Raster<T>& eps, int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) {
    throw InvalidArgument("q_sample: timestep " + std::to_string(t) + " outside [0," +
                          std::to_string(sched.T) + ")");
  }
  return q_sample(x0, eps, sched.alpha_bar[t]);
}

/// Mean squared error between predicted and true noise.
template <typename T>
double denoise_loss(const Raster<T>& model_out, const Raster<T>& eps) {
  require_same_shape(model_out, eps, "denoise_loss");
  if (eps.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = static_cast<double>(model_out.values()[i]) - eps.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

/// eps_uncond + scale * (eps_cond - eps_uncond); scale == 1 returns eps_cond bit-exactly.
template <typename T>
Raster<T> cfg_combine(const Raster<T>& eps_cond, const Raster<T>& eps_uncond, double scale) {
  require_same_shape(eps_cond, eps_uncond, "cfg_combine");
  if (!(scale >= 0.0)) throw InvalidArgument("cfg_combine: scale must be >= 0");
  if (scale == 1.0) return eps_cond;
  Raster<T> out(eps_cond.height(), eps_cond.width(), eps_cond.channels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = eps_uncond.values()[i];
    out.values()[i] = static_cast<T>(u + scale * (eps_cond.values()[i] - u));
  }
  return out;
}

/// Descending timesteps for `steps` uniformly spaced inference steps
/// ("trailing" spacing: the first step is always T-1).
inline std::vector<int> inference_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw InvalidArgument("inference_timesteps: steps must be in [1," + std::to_string(T) + "]");
  }
  std::vector<int> ts(steps);
  for (int k = 0; k < steps; ++k) {
    ts[k] = static_cast<int>(std::lround(T - static_cast<double>(k) * T / steps)) - 1;
  }
  return ts;
}

/// Output of a noise predictor for one step. `uncond` is only required when
/// the sampler asked for it (guidance scale != 1).
template <typename T>
struct GuidedPrediction {
  Raster<T> cond;
  std::optional<Raster<T>> uncond;
};

struct SamplerOptions {
  int steps = kDefaultSamplingSteps;
  double cfg_scale = kDefaultCfgScale;
  SamplerKind kind = SamplerKind::deterministic;
  std::uint64_t seed = 0;
  /// When positive, x0 estimates are clamped to [-clip_x0, clip_x0] and the
  /// noise estimate is re-derived from the clamped value.
  double clip_x0 = 0.0;
  /// Fraction of the schedule to run. Below 1 the sampler starts from the
  /// forward-noised `init` latent at the corresponding step instead of from
  /// pure noise; the last round(steps * strength) steps are kept.
  double strength = 1.0;
};

/// Runs the reverse process from pure noise and returns the final x0 estimate.
///
/// `predictor(z_t, t, want_uncond)` must return a GuidedPrediction. Each step
/// forms x0_hat = (z_t - sqrt(1-abar_t) eps) / sqrt(abar_t) and moves to the
/// previous subsampled timestep; the deterministic kind uses eta = 0, the
/// ancestral kind eta = 1.
/// Called after every update with the new latent and the timestep it now
/// represents, or -1 with the final x0 estimate.
template <typename T>
using StepHook = std::function<void(Raster<T>&, int)>;

template <typename T, typename Predictor>
Raster<T> sample(Predictor&& predictor, int h, int w, int c, const NoiseSchedule& sched,
                 const SamplerOptions& opt, const StepHook<T>& hook = {}, const Raster<T>* init = nullptr) {
  if (opt.steps < 1) throw InvalidArgument("sample: steps must be >= 1");
  if (!(opt.strength > 0.0 && opt.strength <= 1.0)) throw InvalidArgument("sample: strength must be in (0,1]");
  std::mt19937_64 rng(opt.seed);
  Raster<T> z = gaussian_like<T>(h, w, c, rng);
  std::vector<int> ts = inference_timesteps(sched.T, opt.steps);
  if (opt.strength < 1.0) {
    if (init == nullptr || init->height() != h || init->width() != w || init->channels() != c) {
      throw InvalidArgument("sample: strength below 1 needs an initial latent of the sampled shape");
    }
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(opt.steps * opt.strength)));
    ts.erase(ts.begin(), ts.end() - static_cast<std::ptrdiff_t>(std::min(keep, ts.size())));
    z = q_sample(*init, z, ts.front(), sched);
  }
  const bool guided = opt.cfg_scale != 1.0;
  const double eta = opt.kind == SamplerKind::ancestral ? 1.0 : 0.0;

  Raster<T> x0_hat;
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    GuidedPrediction<T> pred = predictor(std::as_const(z), t, guided);
    Raster<T> eps = guided ? cfg_combine(pred.cond, pred.uncond.value(), opt.cfg_scale)
                           : std::move(pred.cond);
    const double ab = sched.alpha_bar[t];
    const double ab_prev = k + 1 < ts.size() ? sched.alpha_bar[ts[k + 1]] : 1.0;
    const double sa = std::sqrt(ab), s1a = std::sqrt(1.0 - ab);
    x0_hat = Raster<T>(h, w, c);
    for (std::size_t i = 0; i < z.size(); ++i) {
      x0_hat.values()[i] = static_cast<T>((z.values()[i] - s1a * eps.values()[i]) / sa);
    }
    if (opt.clip_x0 > 0.0) {
      for (std::size_t i = 0; i < z.size(); ++i) {
        const double x = std::clamp<double>(x0_hat.values()[i], -opt.clip_x0, opt.clip_x0);
        x0_hat.values()[i] = static_cast<T>(x);
        eps.values()[i] = static_cast<T>((z.values()[i] - sa * x) / s1a);
      }
    }
    if (k + 1 == ts.size()) {
      if (hook) hook(x0_hat, -1);
      break;
    }

    const double sigma =
        eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const double sp = std::sqrt(ab_prev);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
      double v = sp * x0_hat.values()[i] + dir * eps.values()[i];
      if (sigma > 0.0) v += sigma * n01(rng);
      z.values()[i] = static_cast<T>(v);
    }
    if (hook) hook(z, ts[k + 1]);
  }
  return x0_hat;
}

}  // namespace mf

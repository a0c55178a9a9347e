#pragma once

// Mirror inpainting with a trained dual-branch model: the conditioning branch
// sees the masked image latent, mask and normalized depth; the generation
// branch is guided by the prompt with classifier-free guidance.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mirrorfusion/depth_conditioning.hpp"
#include "mirrorfusion/diffusion.hpp"
#include "mirrorfusion/dual_branch.hpp"
#include "mirrorfusion/latent_codec.hpp"

namespace mf {

inline SamplerOptions default_inpaint_sampler() {
  SamplerOptions s;
  s.clip_x0 = 1.0;
  return s;
}

struct InpaintOptions {
  SamplerOptions sampler = default_inpaint_sampler();
  ScheduleKind schedule = ScheduleKind::linear;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  ConditionOptions condition;
  /// Latent cells entirely outside the mask follow the forward-noised input
  /// latent at every step and end equal to it.
  bool blend_known = true;
  /// Copy the unmasked input pixels over the result.
  bool paste_unmasked = false;
};

/// One sample per seed, in seed order.
template <typename T>
std::vector<PixelImage> inpaint(DualBranchModel<T>& model, const PixelImage& rgb, const MirrorMask& mask,
                                const DepthMap& depth, const std::string& prompt, const InpaintOptions& opt = {}) {
  if (opt.seeds.empty()) throw InvalidArgument("inpaint: at least one seed is required");
  const ConditionBundle cond = build_condition(rgb, mask, depth, opt.condition);
  const NoiseSchedule sched = make_schedule(kTrainTimesteps, opt.schedule);
  const TextEmbedding text = model.embed_prompt(prompt, false);
  const TextEmbedding null_text = model.text_encoder().null_embedding();
  const int h = cond.z_m.height(), w = cond.z_m.width(), c = cond.z_m.channels();

  auto predictor = [&](const LatentTensor& z, int t, bool want_uncond) {
    const auto res = model.conditioning_residuals(z, cond, t);
    GuidedPrediction<float> p;
    p.cond = model.forward_with_residuals(z, t, text, res);
    if (want_uncond) p.uncond = model.forward_with_residuals(z, t, null_text, res);
    return p;
  };

  const LatentTensor z_known = encode(rgb, opt.condition.patch_factor);
  std::vector<std::size_t> known;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (cond.x_m(y, x) != 0.0f) continue;
      for (int ch = 0; ch < c; ++ch) known.push_back((static_cast<std::size_t>(y) * w + x) * c + ch);
    }
  }

  std::vector<PixelImage> out;
  for (std::uint64_t seed : opt.seeds) {
    SamplerOptions so = opt.sampler;
    so.seed = seed;
    // Separate stream for the re-noised known region.
    std::mt19937_64 blend_rng(seed ^ 0xb1e2dULL);
    StepHook<float> hook;
    if (opt.blend_known) {
      hook = [&](LatentTensor& z, int t) {
        if (t < 0) {
          for (std::size_t i : known) z.values()[i] = z_known.values()[i];
          return;
        }
        const LatentTensor eps = gaussian_like<float>(h, w, c, blend_rng);
        const double sa = std::sqrt(sched.alpha_bar[t]), s1a = std::sqrt(1.0 - sched.alpha_bar[t]);
        for (std::size_t i : known) z.values()[i] = static_cast<float>(sa * z_known.values()[i] + s1a * eps.values()[i]);
      };
    }
    PixelImage img =
        decode(sample<float>(predictor, h, w, c, sched, so, hook, &cond.z_m), opt.condition.patch_factor);
    if (opt.paste_unmasked) {
      for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
          if (mask(y, x)) continue;
          for (int ch = 0; ch < img.channels(); ++ch) img(y, x, ch) = rgb(y, x, ch);
        }
      }
    }
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace mf

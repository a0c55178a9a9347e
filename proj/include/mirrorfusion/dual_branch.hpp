#pragma once

// Dual-branch inpainting network: a text-conditioned generation U-Net and a
// conditioning U-Net (same topology, no cross-attention) whose features at
// every injection point are added to the generation branch through
// zero-initialized 1x1 convolutions, scaled by the preservation scale w.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mirrorfusion/depth_conditioning.hpp"
#include "mirrorfusion/diffusion.hpp"
#include "mirrorfusion/latent_codec.hpp"
#include "mirrorfusion/nn/unet.hpp"

namespace mf {

struct UNetConfig {
  int latent_channels = mf::latent_channels(kDefaultPatchFactor);
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2};
  std::set<int> attention_levels{1};  // lowest resolution
  int time_freq_dim = 32;
  int time_embed_dim = 128;
  int text_embed_dim = 32;
  int text_max_tokens = 8;
  int text_vocab_size = 4096;
  double preservation_scale = 1.0;
  bool freeze_generation = true;
  /// When positive, the generation head predicts the noise as the linear
  /// least-squares estimate from z_t (for data of this standard deviation)
  /// plus a learned correction whose scale shrinks where that estimate is
  /// already good. At large t the estimate is nearly exact, which a narrow
  /// network cannot reproduce by itself.
  double skip_data_std = 0.0;
  /// Replaces the fixed skip coefficient by one learned from the time
  /// embedding, starting at zero. The output scale above still applies.
  bool learned_skip = false;
  /// Schedule the skip gains are derived from; must match training.
  ScheduleKind schedule = ScheduleKind::linear;

  int num_levels() const { return static_cast<int>(channel_multipliers.size()); }
  int in_channels_generation() const { return latent_channels; }
  int in_channels_conditioning() const { return 2 * latent_channels + 2; }

  void validate() const {
    if (num_levels() < 2) throw InvalidArgument("UNetConfig: num_levels must be >= 2");
    if (latent_channels < 1 || base_channels < 1 || time_embed_dim < 1 || text_embed_dim < 1 ||
        text_max_tokens < 1 || text_vocab_size < 2) {
      throw InvalidArgument("UNetConfig: sizes must be positive");
    }
    if (time_freq_dim < 2 || time_freq_dim % 2 != 0) {
      throw InvalidArgument("UNetConfig: time_freq_dim must be even and >= 2");
    }
    for (int m : channel_multipliers) {
      if (m < 1) throw InvalidArgument("UNetConfig: channel multipliers must be >= 1");
    }
    for (int l : attention_levels) {
      if (l < 0 || l >= num_levels()) throw InvalidArgument("UNetConfig: attention level out of range");
    }
    if (!(preservation_scale >= 0.0)) throw InvalidArgument("UNetConfig: preservation scale must be >= 0");
    if (!(skip_data_std >= 0.0)) throw InvalidArgument("UNetConfig: skip_data_std must be >= 0");
  }
};

NLOHMANN_JSON_SERIALIZE_ENUM(ScheduleKind, {{ScheduleKind::linear, "linear"}, {ScheduleKind::cosine, "cosine"}})

inline void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = nlohmann::json{{"latent_channels", c.latent_channels},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"attention_levels", c.attention_levels},
                     {"time_freq_dim", c.time_freq_dim},
                     {"time_embed_dim", c.time_embed_dim},
                     {"text_embed_dim", c.text_embed_dim},
                     {"text_max_tokens", c.text_max_tokens},
                     {"text_vocab_size", c.text_vocab_size},
                     {"preservation_scale", c.preservation_scale},
                     {"freeze_generation", c.freeze_generation},
                     {"skip_data_std", c.skip_data_std},
                     {"learned_skip", c.learned_skip},
                     {"schedule", c.schedule}};
}

inline void from_json(const nlohmann::json& j, UNetConfig& c) {
  UNetConfig d;
  c.latent_channels = j.value("latent_channels", d.latent_channels);
  c.base_channels = j.value("base_channels", d.base_channels);
  c.channel_multipliers = j.value("channel_multipliers", d.channel_multipliers);
  c.attention_levels = j.value("attention_levels", d.attention_levels);
  c.time_freq_dim = j.value("time_freq_dim", d.time_freq_dim);
  c.time_embed_dim = j.value("time_embed_dim", d.time_embed_dim);
  c.text_embed_dim = j.value("text_embed_dim", d.text_embed_dim);
  c.text_max_tokens = j.value("text_max_tokens", d.text_max_tokens);
  c.text_vocab_size = j.value("text_vocab_size", d.text_vocab_size);
  c.preservation_scale = j.value("preservation_scale", d.preservation_scale);
  c.freeze_generation = j.value("freeze_generation", d.freeze_generation);
  c.skip_data_std = j.value("skip_data_std", d.skip_data_std);
  c.learned_skip = j.value("learned_skip", d.learned_skip);
  c.schedule = j.value("schedule", d.schedule);
}

// ---------------------------------------------------------------------------
// Text pathway

struct TextEmbedding {
  std::vector<int> tokens;
  nn::Mat<double> vectors;  // max_tokens x dim; unused rows are zero

  bool is_null() const { return tokens.empty(); }
};

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Frozen hashed-token text encoder. Words (lower-cased alphanumeric runs) map
/// to ids in [1, vocab); each id owns a fixed pseudo-random embedding row. The
/// null embedding (empty prompt or dropped prompt) is all zeros.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(int vocab_size, int dim, int max_tokens) : vocab_(vocab_size), dim_(dim), max_tokens_(max_tokens) {}

  std::vector<int> tokenize(std::string_view text) const {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
      if (!word.empty() && static_cast<int>(ids.size()) < max_tokens_) {
        ids.push_back(1 + static_cast<int>(fnv1a(word) % static_cast<std::uint64_t>(vocab_ - 1)));
      }
      word.clear();
    };
    for (char ch : text) {
      const auto uc = static_cast<unsigned char>(ch);
      if (std::isalnum(uc)) {
        word.push_back(static_cast<char>(std::tolower(uc)));
      } else {
        flush();
      }
    }
    flush();
    return ids;
  }

  TextEmbedding null_embedding() const {
    return TextEmbedding{{}, nn::Mat<double>::Zero(max_tokens_, dim_)};
  }

  TextEmbedding embed(std::string_view text, bool drop) const {
    if (drop) return null_embedding();
    TextEmbedding e = null_embedding();
    e.tokens = tokenize(text);
    for (std::size_t r = 0; r < e.tokens.size(); ++r) {
      std::mt19937_64 rng(splitmix64(static_cast<std::uint64_t>(e.tokens[r])));
      std::normal_distribution<double> n01(0.0, 1.0);
      for (int c = 0; c < dim_; ++c) e.vectors(static_cast<Eigen::Index>(r), c) = n01(rng) / std::sqrt(dim_);
    }
    return e;
  }

  int dim() const { return dim_; }
  int max_tokens() const { return max_tokens_; }

 private:
  int vocab_ = 4096;
  int dim_ = 32;
  int max_tokens_ = 8;
};

// ---------------------------------------------------------------------------

template <typename T>
class DualBranchModel {
 public:
  using Feature = nn::Feature<T>;
  using Mat = nn::Mat<T>;

  DualBranchModel() = default;

  /// Builds both branches. The conditioning branch starts as a clone of the
  /// generation branch; its first convolution copies the generation weights
  /// for the noisy-latent channels, draws fresh weights for the masked-image
  /// latent channels and zeros the mask and depth channels. Injectors start
  /// at exactly zero.
  static DualBranchModel build(const UNetConfig& config, std::uint64_t seed) {
    config.validate();
    DualBranchModel m;
    m.config_ = config;
    m.text_ = TextEncoder(config.text_vocab_size, config.text_embed_dim, config.text_max_tokens);

    nn::UNetTopology gen;
    gen.in_channels = config.in_channels_generation();
    gen.out_channels = config.latent_channels;
    gen.base_channels = config.base_channels;
    gen.channel_multipliers = config.channel_multipliers;
    gen.attention_levels = config.attention_levels;
    gen.time_freq_dim = config.time_freq_dim;
    gen.time_embed_dim = config.time_embed_dim;
    gen.context_dim = config.text_embed_dim;
    nn::UNetTopology cond = gen;
    if (config.skip_data_std > 0.0) {
      const NoiseSchedule s = make_schedule(kTrainTimesteps, config.schedule);
      const double var = config.skip_data_std * config.skip_data_std;
      for (int t = 0; t < s.T; ++t) {
        const double ab = s.alpha_bar[t], s1a = std::sqrt(1.0 - ab);
        const double skip = s1a / (ab * var + 1.0 - ab);
        gen.skip_gain.push_back(config.learned_skip ? 0.0 : skip);
        gen.out_gain.push_back(std::sqrt(std::max(0.0, 1.0 - skip * s1a)));
      }
    }
    gen.learned_skip = config.learned_skip;
    cond.in_channels = config.in_channels_conditioning();
    cond.out_channels = 0;
    cond.context_dim = 0;

    m.generation_ = nn::UNet<T>("generation", gen);
    m.conditioning_ = nn::UNet<T>("conditioning", cond);
    std::mt19937_64 rng(seed);
    m.generation_.init(rng);

    std::unordered_map<std::string, const nn::Param<T>*> by_suffix;
    m.generation_.visit([&](nn::Param<T>& p) { by_suffix[p.name.substr(p.name.find('.'))] = &p; });
    m.conditioning_.visit([&](nn::Param<T>& p) {
      const auto it = by_suffix.find(p.name.substr(p.name.find('.')));
      if (it != by_suffix.end() && it->second->value.rows() == p.value.rows() &&
          it->second->value.cols() == p.value.cols()) {
        p.value = it->second->value;
      }
    });

    // First convolution rows are ordered (ky*3 + kx) * C_in + c_in.
    const int L = config.latent_channels;
    const int cin = config.in_channels_conditioning();
    auto& w = m.conditioning_.conv_in.weight.value;
    const auto& gw = m.generation_.conv_in.weight.value;
    const double bound = 1.0 / std::sqrt(9.0 * cin);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (int k = 0; k < 9; ++k) {
      for (int c = 0; c < cin; ++c) {
        for (int o = 0; o < w.cols(); ++o) {
          T v;
          if (c < L) {
            v = gw(k * L + c, o);
          } else if (c < 2 * L) {
            v = static_cast<T>(u(rng));
          } else {
            v = T(0);
          }
          w(k * cin + c, o) = v;
        }
      }
    }
    m.conditioning_.conv_in.bias.value = m.generation_.conv_in.bias.value;

    const int P = m.conditioning_.num_points();
    for (int i = 0; i < P; ++i) {
      const int ch = m.conditioning_.point_channels(i);
      m.injectors_.emplace_back("injectors." + std::to_string(i), ch, ch, 1);
    }
    m.set_freeze_generation(config.freeze_generation);
    return m;
  }

  const UNetConfig& config() const { return config_; }
  const TextEncoder& text_encoder() const { return text_; }
  nn::UNet<T>& generation() { return generation_; }
  nn::UNet<T>& conditioning() { return conditioning_; }
  std::vector<nn::Conv2d<T>>& injectors() { return injectors_; }

  double preservation_scale() const { return config_.preservation_scale; }
  void set_preservation_scale(double w) {
    if (!(w >= 0.0)) throw InvalidArgument("preservation scale must be >= 0");
    config_.preservation_scale = w;
  }

  void set_freeze_generation(bool freeze) {
    config_.freeze_generation = freeze;
    generation_.visit([&](nn::Param<T>& p) { p.frozen = freeze; });
  }

  TextEmbedding embed_prompt(std::string_view text, bool drop) const { return text_.embed(text, drop); }

  /// Visits every parameter; names are stable path strings.
  void visit(const nn::ParamVisitor<T>& f) {
    generation_.visit(f);
    conditioning_.visit(f);
    for (auto& z : injectors_) z.visit(f);
  }
  void visit_generation(const nn::ParamVisitor<T>& f) { generation_.visit(f); }
  void visit_conditioning(const nn::ParamVisitor<T>& f) {
    conditioning_.visit(f);
    for (auto& z : injectors_) z.visit(f);
  }

  void zero_grad() {
    visit([](nn::Param<T>& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](nn::Param<T>& p) { n += static_cast<std::size_t>(p.value.size()); });
    return n;
  }

  /// Noise prediction of the generation branch alone.
  LatentTensor forward_generation(const LatentTensor& z_t, int t, const TextEmbedding& text) {
    const Mat ctx = text.vectors.template cast<T>();
    return nn::to_raster<float>(generation_.forward(nn::to_feature<T>(z_t), t, &ctx));
  }

  /// Runs the conditioning branch and the injectors; returns the scaled
  /// residuals w * Z_i(features_i) for every injection point.
  std::vector<Feature> conditioning_residuals(const LatentTensor& z_t, const ConditionBundle& cond, int t) {
    check_condition(z_t, cond);
    conditioning_.forward(conditioning_input(z_t, cond), t, nullptr);
    const auto& pts = conditioning_.points();
    std::vector<Feature> res(pts.size());
    const T w = static_cast<T>(config_.preservation_scale);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      res[i] = injectors_[i].forward(pts[i]);
      res[i].x *= w;
    }
    return res;
  }

  /// Generation branch with injected residuals added at every point.
  LatentTensor forward_with_residuals(const LatentTensor& z_t, int t, const TextEmbedding& text,
                                      const std::vector<Feature>& residuals) {
    const Mat ctx = text.vectors.template cast<T>();
    return nn::to_raster<float>(generation_.forward(nn::to_feature<T>(z_t), t, &ctx, &residuals));
  }

  /// Joint noise prediction.
  LatentTensor forward_joint(const LatentTensor& z_t, const ConditionBundle& cond, int t,
                             const TextEmbedding& text) {
    const auto res = conditioning_residuals(z_t, cond, t);
    return forward_with_residuals(z_t, t, text, res);
  }

  /// Joint forward kept in the model's scalar type (used by gradient checks).
  Feature forward_joint_feature(const Feature& z_t, const Feature& cond_input, int t, const TextEmbedding& text) {
    conditioning_.forward(cond_input, t, nullptr);
    const auto& pts = conditioning_.points();
    std::vector<Feature> res(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
      res[i] = injectors_[i].forward(pts[i]);
      res[i].x *= static_cast<T>(config_.preservation_scale);
    }
    const Mat ctx = text.vectors.template cast<T>();
    return generation_.forward(z_t, t, &ctx, &res);
  }

  /// Accumulates parameter gradients for the most recent forward_joint call
  /// given dLoss/dOutput.
  void backward_joint(const Feature& g_out) {
    std::vector<Mat> g_points;
    generation_.backward(&g_out, nullptr, &g_points);
    std::vector<Mat> g_cond(g_points.size());
    const T w = static_cast<T>(config_.preservation_scale);
    for (std::size_t i = 0; i < g_points.size(); ++i) {
      Feature g{0, 0, g_points[i] * w};
      const auto& pt = conditioning_.points()[i];
      g.h = pt.h;
      g.w = pt.w;
      g_cond[i] = injectors_[i].backward(g).x;
    }
    conditioning_.backward(nullptr, &g_cond, nullptr);
  }

  /// [z_t, z_m, x_m, x_d] concatenated along channels.
  static Feature conditioning_input(const LatentTensor& z_t, const ConditionBundle& cond) {
    const int h = z_t.height(), w = z_t.width(), c = z_t.channels();
    Feature f;
    f.h = h;
    f.w = w;
    f.x.resize(static_cast<Eigen::Index>(h) * w, 2 * c + 2);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Eigen::Index r = static_cast<Eigen::Index>(y) * w + x;
        for (int k = 0; k < c; ++k) {
          f.x(r, k) = static_cast<T>(z_t(y, x, k));
          f.x(r, c + k) = static_cast<T>(cond.z_m(y, x, k));
        }
        f.x(r, 2 * c) = static_cast<T>(cond.x_m(y, x));
        f.x(r, 2 * c + 1) = static_cast<T>(cond.x_d(y, x));
      }
    }
    return f;
  }

 private:
  void check_condition(const LatentTensor& z_t, const ConditionBundle& cond) const {
    if (z_t.channels() != config_.latent_channels) {
      throw ShapeError("forward_joint: latent has " + std::to_string(z_t.channels()) + " channels, model expects " +
                       std::to_string(config_.latent_channels));
    }
    if (cond.z_m.empty() || cond.x_m.empty() || cond.x_d.empty()) {
      throw InvalidArgument("forward_joint: condition bundle is missing fields");
    }
    if (!cond.z_m.same_shape(z_t) || cond.x_m.height() != z_t.height() || cond.x_m.width() != z_t.width() ||
        cond.x_d.height() != z_t.height() || cond.x_d.width() != z_t.width() || cond.x_m.channels() != 1 ||
        cond.x_d.channels() != 1) {
      throw ShapeError("forward_joint: condition bundle does not match latent " + z_t.shape_string());
    }
    const int down = 1 << (config_.num_levels() - 1);
    if (z_t.height() % down != 0 || z_t.width() % down != 0) {
      throw ShapeError("forward_joint: latent size must be divisible by " + std::to_string(down));
    }
  }

  UNetConfig config_;
  TextEncoder text_;
  nn::UNet<T> generation_;
  nn::UNet<T> conditioning_;
  std::vector<nn::Conv2d<T>> injectors_;
};

}  // namespace mf

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mirrorfusion/nn/layers.hpp"

namespace mf::nn {

/// Topology of one U-Net branch.
struct UNetTopology {
  int in_channels = 48;
  int out_channels = 0;  // 0: no output head (features only)
  int base_channels = 32;
  std::vector<int> channel_multipliers{1, 2};
  std::set<int> attention_levels{1};
  int time_freq_dim = 32;
  int time_embed_dim = 128;
  int context_dim = 0;  // 0: no cross-attention
  /// Optional per-timestep preconditioning of the output head:
  /// out = out_gain[t] * head(x) + skip_gain[t] * x. Empty disables it; when
  /// set, input and output channel counts must agree.
  std::vector<double> skip_gain;
  std::vector<double> out_gain;
  /// Adds a per-channel skip coefficient predicted from the time embedding
  /// (zero at init) on top of skip_gain.
  bool learned_skip = false;

  int num_levels() const { return static_cast<int>(channel_multipliers.size()); }
  int level_channels(int level) const { return base_channels * channel_multipliers.at(level); }
};

/// Injection points are enumerated in execution order: one per down level,
/// the middle block, then one per up level (deepest first).
inline int injection_point_count(int num_levels) { return 2 * num_levels + 1; }

/// One U-Net branch with a down path, a middle block and an up path with skip
/// concatenation. Feature maps at the injection points are kept after every
/// forward pass; the generation branch receives residuals there, the
/// conditioning branch exposes them.
template <typename T>
class UNet {
 public:
  UNet() = default;
  UNet(const std::string& name, const UNetTopology& topo) : topo_(topo) {
    const int L = topo.num_levels();
    if (L < 2) throw InvalidArgument("UNet " + name + ": need at least 2 levels");
    const int E = topo.time_embed_dim;
    time = TimeEmbedding<T>(name + ".time_embedding", topo.time_freq_dim, E);
    conv_in = Conv2d<T>(name + ".conv_in", topo.in_channels, topo.level_channels(0), 3);

    int ch = topo.level_channels(0);
    for (int l = 0; l < L; ++l) {
      const std::string p = name + ".down." + std::to_string(l);
      const int out = topo.level_channels(l);
      Level lv;
      lv.res = ResBlock<T>(p + ".res", ch, out, E);
      add_attention(lv, p, out, l);
      if (l + 1 < L) {
        lv.has_resample = true;
        lv.down = Conv2d<T>(p + ".downsample", out, out, 3, 2);
      }
      down.push_back(std::move(lv));
      ch = out;
    }

    const std::string m = name + ".mid";
    mid_res1 = ResBlock<T>(m + ".res1", ch, ch, E);
    mid_attn = Attention<T>(m + ".self_attn", ch, 0);
    if (topo.context_dim > 0) {
      has_mid_cross_ = true;
      mid_cross = Attention<T>(m + ".cross_attn", ch, topo.context_dim);
    }
    mid_res2 = ResBlock<T>(m + ".res2", ch, ch, E);

    for (int l = L - 1; l >= 0; --l) {
      const std::string p = name + ".up." + std::to_string(l);
      const int out = topo.level_channels(l);
      Level lv;
      lv.res = ResBlock<T>(p + ".res", ch + out, out, E);
      add_attention(lv, p, out, l);
      if (l > 0) {
        lv.has_resample = true;
        lv.up = Upsample<T>(p + ".upsample", out);
      }
      up.push_back(std::move(lv));
      ch = out;
    }

    if (topo.skip_gain.size() != topo.out_gain.size() ||
        ((!topo.skip_gain.empty() || topo.learned_skip) && topo.in_channels != topo.out_channels)) {
      throw InvalidArgument("UNet " + name + ": output skip needs matching gains and channel counts");
    }
    if (topo.out_channels > 0) {
      out_norm = GroupNorm<T>(name + ".out_norm", ch);
      conv_out = Conv2d<T>(name + ".conv_out", ch, topo.out_channels, 3);
      if (topo.learned_skip) skip_gate = Linear<T>(name + ".skip_gate", topo.time_embed_dim, topo.out_channels);
    }
  }

  const UNetTopology& topology() const { return topo_; }
  bool has_output() const { return topo_.out_channels > 0; }
  int num_points() const { return injection_point_count(topo_.num_levels()); }

  int point_channels(int i) const {
    const int L = topo_.num_levels();
    if (i < L) return topo_.level_channels(i);
    if (i == L) return topo_.level_channels(L - 1);
    return topo_.level_channels(2 * L - i);
  }

  void init(std::mt19937_64& rng) {
    time.init(rng);
    conv_in.init(rng);
    for (auto& lv : down) init_level(lv, rng);
    mid_res1.init(rng);
    mid_attn.init(rng);
    if (has_mid_cross_) mid_cross.init(rng);
    mid_res2.init(rng);
    for (auto& lv : up) init_level(lv, rng);
    if (has_output()) conv_out.init(rng);
    if (has_gate()) {
      skip_gate.weight.value.setZero();
      skip_gate.bias.value.setZero();
    }
  }

  /// `residuals`, when given, holds one feature map per injection point that is
  /// added in place at that point. Returns the output head (empty when the
  /// branch has none).
  Feature<T> forward(const Feature<T>& x, double t, const Mat<T>* context,
                     const std::vector<Feature<T>>* residuals = nullptr) {
    const int L = topo_.num_levels();
    if (residuals != nullptr && static_cast<int>(residuals->size()) != num_points()) {
      throw ShapeError("UNet: expected " + std::to_string(num_points()) + " residuals");
    }
    points_.assign(num_points(), Feature<T>{});
    temb_ = time.forward(t);
    int pi = 0;
    auto inject = [&](Feature<T>& h) {
      if (residuals != nullptr) {
        const Feature<T>& r = (*residuals)[pi];
        if (r.x.rows() != h.x.rows() || r.x.cols() != h.x.cols()) {
          throw ShapeError("UNet: residual shape mismatch at injection point " + std::to_string(pi));
        }
        h.x += r.x;
      }
      points_[pi++] = h;
    };

    Feature<T> h = conv_in.forward(x);
    for (int l = 0; l < L; ++l) {
      Level& lv = down[l];
      h = lv.res.forward(h, temb_);
      apply_attention(lv, h, context);
      inject(h);
      if (lv.has_resample) h = lv.down.forward(h);
    }
    h = mid_res1.forward(h, temb_);
    h.x = mid_attn.forward(h.x);
    if (has_mid_cross_) h.x = mid_cross.forward(h.x, context);
    h = mid_res2.forward(h, temb_);
    inject(h);
    for (int j = 0; j < L; ++j) {
      const int l = L - 1 - j;
      Level& lv = up[j];
      const Feature<T>& skip = points_[l];
      Feature<T> cat{h.h, h.w, Mat<T>(h.x.rows(), h.channels() + skip.channels())};
      cat.x << h.x, skip.x;
      h = lv.res.forward(cat, temb_);
      apply_attention(lv, h, context);
      inject(h);
      if (lv.has_resample) h = lv.up.forward(h);
    }
    if (!has_output()) return {};
    Feature<T> a{h.h, h.w, out_act_.forward(out_norm.forward(h.x))};
    Feature<T> out = conv_out.forward(a);
    if (!topo_.out_gain.empty()) {
      const auto k = static_cast<std::size_t>(std::clamp<long>(std::lround(t), 0, static_cast<long>(topo_.out_gain.size()) - 1));
      out_scale_ = static_cast<T>(topo_.out_gain[k]);
      out.x *= out_scale_;
      out.x += static_cast<T>(topo_.skip_gain[k]) * x.x;
    }
    if (has_gate()) {
      skip_x_ = x.x;
      const Mat<T> gate = skip_gate.forward(temb_);
      out.x += x.x * gate.row(0).asDiagonal();
    }
    return out;
  }

  /// Feature maps (after injection) from the latest forward pass.
  const std::vector<Feature<T>>& points() const { return points_; }

  /// Back-propagates through the most recent forward pass.
  ///
  /// `g_out` is the gradient of the output head (nullptr for feature-only
  /// branches). `extra` adds external gradients at the injection points.
  /// `record`, when given, receives the total gradient at each injection point.
  void backward(const Feature<T>* g_out, const std::vector<Mat<T>>* extra,
                std::vector<Mat<T>>* record) {
    const int L = topo_.num_levels();
    const int P = num_points();
    if (record != nullptr) record->assign(P, Mat<T>{});
    Mat<T> g_temb = Mat<T>::Zero(1, topo_.time_embed_dim);
    std::vector<Mat<T>> g_skip(L);

    int pi = P - 1;
    auto at_point = [&](Feature<T>& g) {
      if (extra != nullptr && (*extra)[pi].size() != 0) g.x += (*extra)[pi];
      if (record != nullptr) (*record)[pi] = g.x;
      --pi;
    };

    Feature<T> g;
    const Feature<T>& last = points_[P - 1];
    if (has_output()) {
      if (g_out == nullptr) throw InvalidArgument("UNet::backward: output gradient required");
      if (has_gate()) {
        const Mat<T> g_gate = (g_out->x.array() * skip_x_.array()).colwise().sum();
        g_temb += skip_gate.backward(g_gate);
      }
      Feature<T> ga = topo_.out_gain.empty() ? conv_out.backward(*g_out)
                                             : conv_out.backward(Feature<T>{g_out->h, g_out->w, g_out->x * out_scale_});
      g = Feature<T>{ga.h, ga.w, out_norm.backward(out_act_.backward(ga.x))};
    } else {
      g = Feature<T>{last.h, last.w, Mat<T>::Zero(last.x.rows(), last.x.cols())};
    }

    for (int j = L - 1; j >= 0; --j) {
      const int l = L - 1 - j;
      Level& lv = up[j];
      if (lv.has_resample) g = lv.up.backward(g);
      at_point(g);
      backprop_attention(lv, g);
      Feature<T> gcat = lv.res.backward(g, g_temb);
      const int skip_ch = points_[l].channels();
      const int h_ch = gcat.channels() - skip_ch;
      g_skip[l] = gcat.x.rightCols(skip_ch);
      g = Feature<T>{gcat.h, gcat.w, gcat.x.leftCols(h_ch)};
    }
    at_point(g);
    g = mid_res2.backward(g, g_temb);
    if (has_mid_cross_) g.x = mid_cross.backward(g.x);
    g.x = mid_attn.backward(g.x);
    g = mid_res1.backward(g, g_temb);
    for (int l = L - 1; l >= 0; --l) {
      Level& lv = down[l];
      if (lv.has_resample) g = lv.down.backward(g);
      g.x += g_skip[l];
      at_point(g);
      backprop_attention(lv, g);
      g = lv.res.backward(g, g_temb);
    }
    conv_in.backward(g, false);
    time.backward(g_temb);
  }

  void visit(const ParamVisitor<T>& f) {
    time.visit(f);
    conv_in.visit(f);
    for (auto& lv : down) visit_level(lv, f);
    mid_res1.visit(f);
    mid_attn.visit(f);
    if (has_mid_cross_) mid_cross.visit(f);
    mid_res2.visit(f);
    for (auto& lv : up) visit_level(lv, f);
    if (has_output()) {
      out_norm.visit(f);
      conv_out.visit(f);
      if (has_gate()) skip_gate.visit(f);
    }
  }

  struct Level {
    ResBlock<T> res;
    bool has_self = false;
    bool has_cross = false;
    Attention<T> self_attn;
    Attention<T> cross_attn;
    bool has_resample = false;
    Conv2d<T> down;
    Upsample<T> up;
  };

  TimeEmbedding<T> time;
  Conv2d<T> conv_in;
  std::vector<Level> down;
  ResBlock<T> mid_res1;
  Attention<T> mid_attn;
  Attention<T> mid_cross;
  ResBlock<T> mid_res2;
  std::vector<Level> up;
  GroupNorm<T> out_norm;
  Conv2d<T> conv_out;
  Linear<T> skip_gate;

 private:
  void add_attention(Level& lv, const std::string& prefix, int ch, int level) {
    if (!topo_.attention_levels.contains(level)) return;
    lv.has_self = true;
    lv.self_attn = Attention<T>(prefix + ".self_attn", ch, 0);
    if (topo_.context_dim > 0) {
      lv.has_cross = true;
      lv.cross_attn = Attention<T>(prefix + ".cross_attn", ch, topo_.context_dim);
    }
  }

  static void apply_attention(Level& lv, Feature<T>& h, const Mat<T>* context) {
    if (lv.has_self) h.x = lv.self_attn.forward(h.x);
    if (lv.has_cross) h.x = lv.cross_attn.forward(h.x, context);
  }

  static void backprop_attention(Level& lv, Feature<T>& g) {
    if (lv.has_cross) g.x = lv.cross_attn.backward(g.x);
    if (lv.has_self) g.x = lv.self_attn.backward(g.x);
  }

  static void init_level(Level& lv, std::mt19937_64& rng) {
    lv.res.init(rng);
    if (lv.has_self) lv.self_attn.init(rng);
    if (lv.has_cross) lv.cross_attn.init(rng);
    if (lv.has_resample) {
      if (lv.down.weight.value.size() != 0) {
        lv.down.init(rng);
      } else {
        lv.up.init(rng);
      }
    }
  }

  static void visit_level(Level& lv, const ParamVisitor<T>& f) {
    lv.res.visit(f);
    if (lv.has_self) lv.self_attn.visit(f);
    if (lv.has_cross) lv.cross_attn.visit(f);
    if (lv.has_resample) {
      if (lv.down.weight.value.size() != 0) {
        lv.down.visit(f);
      } else {
        lv.up.visit(f);
      }
    }
  }

  UNetTopology topo_;
  bool has_mid_cross_ = false;
  Mat<T> temb_;
  std::vector<Feature<T>> points_;
  SiLU<T> out_act_;
  T out_scale_ = T(1);
  Mat<T> skip_x_;

  bool has_gate() const { return has_output() && topo_.learned_skip; }
};

}  // namespace mf::nn

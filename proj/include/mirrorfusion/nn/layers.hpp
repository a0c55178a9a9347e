#pragma once

// Minimal layer library with explicit forward/backward passes.
//
// Feature maps are stored channels-last as an (H*W) x C row-major matrix so
// that convolutions become im2col + GEMM and attention operates on rows.
// Every layer caches what its backward pass needs from the most recent
// forward call; a layer instance therefore serves one sample at a time.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mirrorfusion/error.hpp"
#include "mirrorfusion/raster.hpp"

namespace mf::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
struct Feature {
  int h = 0;
  int w = 0;
  Mat<T> x;  // (h*w) x channels

  int channels() const { return static_cast<int>(x.cols()); }
  bool empty() const { return x.size() == 0; }
};

template <typename T, typename U>
Feature<T> to_feature(const Raster<U>& r) {
  Feature<T> f;
  f.h = r.height();
  f.w = r.width();
  f.x.resize(static_cast<Eigen::Index>(r.height()) * r.width(), r.channels());
  for (std::size_t i = 0; i < r.size(); ++i) f.x.data()[i] = static_cast<T>(r.values()[i]);
  return f;
}

template <typename U, typename T>
Raster<U> to_raster(const Feature<T>& f) {
  Raster<U> r(f.h, f.w, f.channels());
  for (std::size_t i = 0; i < r.size(); ++i) r.values()[i] = static_cast<U>(f.x.data()[i]);
  return r;
}

/// Named trainable tensor. `frozen` parameters skip gradient accumulation.
template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool frozen = false;

  void init(std::string n, int rows, int cols) {
    name = std::move(n);
    value = Mat<T>::Zero(rows, cols);
    grad = Mat<T>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  bool accumulates() const { return !frozen; }
};

template <typename T>
using ParamVisitor = std::function<void(Param<T>&)>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the common default for conv/linear.
template <typename T>
void init_uniform(Param<T>& p, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1)));
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(u(rng));
}

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch, int out_ch, int kernel, int stride = 1)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(kernel / 2) {
    if (in_ch < 1 || out_ch < 1 || kernel < 1 || kernel % 2 == 0 || stride < 1) {
      throw InvalidArgument("Conv2d " + name + ": invalid geometry");
    }
    weight.init(name + ".weight", k_ * k_ * in_ch_, out_ch_);
    bias.init(name + ".bias", 1, out_ch_);
  }

  void init(std::mt19937_64& rng) {
    init_uniform(weight, k_ * k_ * in_ch_, rng);
    init_uniform(bias, k_ * k_ * in_ch_, rng);
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }

  Feature<T> forward(const Feature<T>& in) {
    if (in.channels() != in_ch_) {
      throw ShapeError(weight.name + ": expected " + std::to_string(in_ch_) + " input channels, got " +
                       std::to_string(in.channels()));
    }
    in_h_ = in.h;
    in_w_ = in.w;
    Feature<T> out;
    out.h = (in.h + 2 * pad_ - k_) / stride_ + 1;
    out.w = (in.w + 2 * pad_ - k_) / stride_ + 1;
    if (is_pointwise()) {
      cols_ = in.x;
    } else {
      im2col(in, out.h, out.w);
    }
    out.x.noalias() = cols_ * weight.value;
    out.x.rowwise() += bias.value.row(0);
    return out;
  }

  /// Accumulates parameter gradients and returns the input gradient (empty when
  /// `need_input_grad` is false).
  Feature<T> backward(const Feature<T>& g, bool need_input_grad = true) {
    if (weight.accumulates()) {
      weight.grad.noalias() += cols_.transpose() * g.x;
      bias.grad.row(0) += g.x.colwise().sum();
    }
    Feature<T> gin;
    if (!need_input_grad) return gin;
    gin.h = in_h_;
    gin.w = in_w_;
    if (is_pointwise()) {
      gin.x.noalias() = g.x * weight.value.transpose();
      return gin;
    }
    Mat<T> gcols;
    gcols.noalias() = g.x * weight.value.transpose();
    gin.x = Mat<T>::Zero(static_cast<Eigen::Index>(in_h_) * in_w_, in_ch_);
    col2im(gcols, g.h, g.w, gin);
    return gin;
  }

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  bool is_pointwise() const { return k_ == 1 && stride_ == 1; }

  void im2col(const Feature<T>& in, int out_h, int out_w) {
    cols_ = Mat<T>::Zero(static_cast<Eigen::Index>(out_h) * out_w, k_ * k_ * in_ch_);
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        T* row = cols_.data() + (static_cast<Eigen::Index>(oy) * out_w + ox) * cols_.cols();
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= in.w) continue;
            const T* src = in.x.data() + (static_cast<Eigen::Index>(iy) * in.w + ix) * in_ch_;
            std::copy(src, src + in_ch_, row + (ky * k_ + kx) * in_ch_);
          }
        }
      }
    }
  }

  void col2im(const Mat<T>& gcols, int out_h, int out_w, Feature<T>& gin) const {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const T* row = gcols.data() + (static_cast<Eigen::Index>(oy) * out_w + ox) * gcols.cols();
        for (int ky = 0; ky < k_; ++ky) {
          const int iy = oy * stride_ - pad_ + ky;
          if (iy < 0 || iy >= in_h_) continue;
          for (int kx = 0; kx < k_; ++kx) {
            const int ix = ox * stride_ - pad_ + kx;
            if (ix < 0 || ix >= in_w_) continue;
            T* dst = gin.x.data() + (static_cast<Eigen::Index>(iy) * in_w_ + ix) * in_ch_;
            const T* src = row + (ky * k_ + kx) * in_ch_;
            for (int c = 0; c < in_ch_; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }

  int in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  int in_h_ = 0, in_w_ = 0;
  Mat<T> cols_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out) : in_(in), out_(out) {
    weight.init(name + ".weight", in, out);
    bias.init(name + ".bias", 1, out);
  }

  void init(std::mt19937_64& rng) {
    init_uniform(weight, in_, rng);
    init_uniform(bias, in_, rng);
  }

  Mat<T> forward(const Mat<T>& x) {
    x_ = x;
    Mat<T> y;
    y.noalias() = x * weight.value;
    y.rowwise() += bias.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& g, bool need_input_grad = true) {
    if (weight.accumulates()) {
      weight.grad.noalias() += x_.transpose() * g;
      bias.grad.row(0) += g.colwise().sum();
    }
    if (!need_input_grad) return {};
    Mat<T> gx;
    gx.noalias() = g * weight.value.transpose();
    return gx;
  }

  void visit(const ParamVisitor<T>& f) {
    f(weight);
    f(bias);
  }

  Param<T> weight;
  Param<T> bias;

 private:
  int in_ = 0, out_ = 0;
  Mat<T> x_;
};

// ---------------------------------------------------------------------------

template <typename T>
class SiLU {
 public:
  Mat<T> forward(const Mat<T>& x) {
    x_ = x;
    return x.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  }
  Mat<T> backward(const Mat<T>& g) const {
    return g.binaryExpr(x_, [](T gv, T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return gv * s * (T(1) + v * (T(1) - s));
    });
  }

 private:
  Mat<T> x_;
};

// ---------------------------------------------------------------------------

/// Largest group count in {8,4,2,1} dividing `channels`.
inline int default_groups(int channels) {
  for (int g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups = 0)
      : c_(channels), g_(groups > 0 ? groups : default_groups(channels)) {
    if (c_ % g_ != 0) throw InvalidArgument("GroupNorm " + name + ": groups must divide channels");
    gamma.init(name + ".gamma", 1, c_);
    beta.init(name + ".beta", 1, c_);
    gamma.value.setOnes();
  }

  Mat<T> forward(const Mat<T>& x) {
    const Eigen::Index n = x.rows();
    const int cg = c_ / g_;
    xhat_.resize(n, c_);
    inv_std_.assign(g_, T(0));
    for (int g = 0; g < g_; ++g) {
      auto blk = x.middleCols(g * cg, cg);
      const double cnt = static_cast<double>(n) * cg;
      const double mean = static_cast<double>(blk.sum()) / cnt;
      const double var = static_cast<double>((blk.array() - T(mean)).square().sum()) / cnt;
      const T inv = T(1.0 / std::sqrt(var + kEps));
      inv_std_[g] = inv;
      xhat_.middleCols(g * cg, cg) = (blk.array() - T(mean)) * inv;
    }
    Mat<T> y = xhat_;
    y.array().rowwise() *= gamma.value.row(0).array();
    y.rowwise() += beta.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& gy) {
    if (gamma.accumulates()) {
      gamma.grad.row(0) += (gy.array() * xhat_.array()).colwise().sum().matrix();
      beta.grad.row(0) += gy.colwise().sum();
    }
    Mat<T> dxhat = gy;
    dxhat.array().rowwise() *= gamma.value.row(0).array();
    const Eigen::Index n = gy.rows();
    const int cg = c_ / g_;
    Mat<T> gx(n, c_);
    for (int g = 0; g < g_; ++g) {
      auto d = dxhat.middleCols(g * cg, cg);
      auto xh = xhat_.middleCols(g * cg, cg);
      const T cnt = T(static_cast<double>(n) * cg);
      const T m1 = d.sum() / cnt;
      const T m2 = (d.array() * xh.array()).sum() / cnt;
      gx.middleCols(g * cg, cg) = inv_std_[g] * (d.array() - m1 - xh.array() * m2);
    }
    return gx;
  }

  void visit(const ParamVisitor<T>& f) {
    f(gamma);
    f(beta);
  }

  Param<T> gamma;
  Param<T> beta;

 private:
  static constexpr double kEps = 1e-5;
  int c_ = 0, g_ = 1;
  Mat<T> xhat_;
  std::vector<T> inv_std_;
};

// ---------------------------------------------------------------------------

/// Row-wise softmax with max subtraction.
template <typename T>
Mat<T> softmax_rows(const Mat<T>& s) {
  Mat<T> p(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T m = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

/// Single-head attention with residual: y = x + Wo * softmax(q k^T / sqrt(C)) v.
/// Queries come from the normalized feature map; keys and values either from
/// the same map (self-attention) or from an external context (cross-attention).
template <typename T>
class Attention {
 public:
  Attention() = default;
  Attention(const std::string& name, int channels, int context_dim)
      : c_(channels), ctx_dim_(context_dim), cross_(context_dim > 0), norm(name + ".norm", channels) {
    const int kv_in = cross_ ? context_dim : channels;
    q = Linear<T>(name + ".to_q", channels, channels);
    k = Linear<T>(name + ".to_k", kv_in, channels);
    v = Linear<T>(name + ".to_v", kv_in, channels);
    o = Linear<T>(name + ".to_out", channels, channels);
  }

  void init(std::mt19937_64& rng) {
    q.init(rng);
    k.init(rng);
    v.init(rng);
    o.init(rng);
  }

  bool is_cross() const { return cross_; }

  /// `context` is required (L x context_dim) for cross-attention and ignored otherwise.
  Mat<T> forward(const Mat<T>& x, const Mat<T>* context = nullptr) {
    const Mat<T> xn = norm.forward(x);
    if (cross_) {
      if (context == nullptr || context->cols() != ctx_dim_) {
        throw ShapeError("Attention: cross-attention requires a context with " +
                         std::to_string(ctx_dim_) + " columns");
      }
    }
    const Mat<T>& kv_src = cross_ ? *context : xn;
    q_ = q.forward(xn);
    k_ = k.forward(kv_src);
    v_ = v.forward(kv_src);
    const T scale = T(1.0 / std::sqrt(static_cast<double>(c_)));
    Mat<T> s;
    s.noalias() = (q_ * k_.transpose()) * scale;
    p_ = softmax_rows(s);
    Mat<T> att;
    att.noalias() = p_ * v_;
    Mat<T> y = x + o.forward(att);
    return y;
  }

  Mat<T> backward(const Mat<T>& gy) {
    const T scale = T(1.0 / std::sqrt(static_cast<double>(c_)));
    const Mat<T> gatt = o.backward(gy);
    Mat<T> gp;
    gp.noalias() = gatt * v_.transpose();
    Mat<T> gv;
    gv.noalias() = p_.transpose() * gatt;
    Mat<T> gs = p_.array() * (gp.array().colwise() - (gp.array() * p_.array()).rowwise().sum());
    Mat<T> gq;
    gq.noalias() = (gs * k_) * scale;
    Mat<T> gk;
    gk.noalias() = (gs.transpose() * q_) * scale;
    Mat<T> gxn = q.backward(gq);
    if (cross_) {
      k.backward(gk, false);
      v.backward(gv, false);
    } else {
      gxn += k.backward(gk);
      gxn += v.backward(gv);
    }
    return gy + norm.backward(gxn);
  }

  void visit(const ParamVisitor<T>& f) {
    norm.visit(f);
    q.visit(f);
    k.visit(f);
    v.visit(f);
    o.visit(f);
  }

 private:
  int c_ = 0, ctx_dim_ = 0;
  bool cross_ = false;

 public:
  GroupNorm<T> norm;
  Linear<T> q, k, v, o;

 private:
  Mat<T> q_, k_, v_, p_;
};

// ---------------------------------------------------------------------------

/// GN -> SiLU -> conv3x3 (+ time projection) -> GN -> SiLU -> conv3x3, plus a
/// skip path (1x1 conv when the channel count changes).
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const std::string& name, int in_ch, int out_ch, int temb_dim)
      : norm1(name + ".norm1", in_ch),
        conv1(name + ".conv1", in_ch, out_ch, 3),
        temb_proj(name + ".time_emb_proj", temb_dim, out_ch),
        norm2(name + ".norm2", out_ch),
        conv2(name + ".conv2", out_ch, out_ch, 3),
        has_skip_(in_ch != out_ch) {
    if (has_skip_) skip = Conv2d<T>(name + ".skip", in_ch, out_ch, 1);
  }

  void init(std::mt19937_64& rng) {
    conv1.init(rng);
    temb_proj.init(rng);
    conv2.init(rng);
    if (has_skip_) skip.init(rng);
  }

  Feature<T> forward(const Feature<T>& x, const Mat<T>& temb) {
    Feature<T> a{x.h, x.w, act1_.forward(norm1.forward(x.x))};
    Feature<T> h = conv1.forward(a);
    const Mat<T> tp = temb_proj.forward(act_t_.forward(temb));
    h.x.rowwise() += tp.row(0);
    Feature<T> b{h.h, h.w, act2_.forward(norm2.forward(h.x))};
    Feature<T> out = conv2.forward(b);
    if (has_skip_) {
      out.x += skip.forward(x).x;
    } else {
      out.x += x.x;
    }
    return out;
  }

  /// Returns the input gradient; adds the time-embedding gradient to `g_temb`.
  Feature<T> backward(const Feature<T>& g, Mat<T>& g_temb) {
    Feature<T> gb = conv2.backward(g);
    Feature<T> gh{gb.h, gb.w, norm2.backward(act2_.backward(gb.x))};
    const Mat<T> gtp = gh.x.colwise().sum();
    g_temb += act_t_.backward(temb_proj.backward(gtp));
    Feature<T> ga = conv1.backward(gh);
    Feature<T> gx{ga.h, ga.w, norm1.backward(act1_.backward(ga.x))};
    if (has_skip_) {
      gx.x += skip.backward(g).x;
    } else {
      gx.x += g.x;
    }
    return gx;
  }

  void visit(const ParamVisitor<T>& f) {
    norm1.visit(f);
    conv1.visit(f);
    temb_proj.visit(f);
    norm2.visit(f);
    conv2.visit(f);
    if (has_skip_) skip.visit(f);
  }

  GroupNorm<T> norm1;
  Conv2d<T> conv1;
  Linear<T> temb_proj;
  GroupNorm<T> norm2;
  Conv2d<T> conv2;
  Conv2d<T> skip;

 private:
  bool has_skip_ = false;
  SiLU<T> act1_, act_t_, act2_;
};

// ---------------------------------------------------------------------------

/// Nearest-neighbour 2x upsampling followed by a 3x3 convolution.
template <typename T>
class Upsample {
 public:
  Upsample() = default;
  Upsample(const std::string& name, int ch) : conv(name + ".conv", ch, ch, 3) {}

  void init(std::mt19937_64& rng) { conv.init(rng); }

  Feature<T> forward(const Feature<T>& x) {
    Feature<T> up;
    up.h = x.h * 2;
    up.w = x.w * 2;
    up.x.resize(static_cast<Eigen::Index>(up.h) * up.w, x.channels());
    for (int y = 0; y < up.h; ++y) {
      for (int xx = 0; xx < up.w; ++xx) {
        up.x.row(static_cast<Eigen::Index>(y) * up.w + xx) = x.x.row(static_cast<Eigen::Index>(y / 2) * x.w + xx / 2);
      }
    }
    return conv.forward(up);
  }

  Feature<T> backward(const Feature<T>& g) {
    Feature<T> gup = conv.backward(g);
    Feature<T> gx;
    gx.h = gup.h / 2;
    gx.w = gup.w / 2;
    gx.x = Mat<T>::Zero(static_cast<Eigen::Index>(gx.h) * gx.w, gup.channels());
    for (int y = 0; y < gup.h; ++y) {
      for (int xx = 0; xx < gup.w; ++xx) {
        gx.x.row(static_cast<Eigen::Index>(y / 2) * gx.w + xx / 2) += gup.x.row(static_cast<Eigen::Index>(y) * gup.w + xx);
      }
    }
    return gx;
  }

  void visit(const ParamVisitor<T>& f) { conv.visit(f); }

  Conv2d<T> conv;
};

// ---------------------------------------------------------------------------

/// Sinusoidal timestep features followed by a two-layer MLP.
template <typename T>
class TimeEmbedding {
 public:
  TimeEmbedding() = default;
  TimeEmbedding(const std::string& name, int freq_dim, int embed_dim)
      : freq_dim_(freq_dim), fc1(name + ".linear_1", freq_dim, embed_dim), fc2(name + ".linear_2", embed_dim, embed_dim) {
    if (freq_dim < 2 || freq_dim % 2 != 0) throw InvalidArgument("TimeEmbedding: freq_dim must be even");
  }

  void init(std::mt19937_64& rng) {
    fc1.init(rng);
    fc2.init(rng);
  }

  static Mat<T> sinusoidal(double t, int dim) {
    Mat<T> e(1, dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      e(0, i) = static_cast<T>(std::sin(t * freq));
      e(0, half + i) = static_cast<T>(std::cos(t * freq));
    }
    return e;
  }

  Mat<T> forward(double t) { return fc2.forward(act_.forward(fc1.forward(sinusoidal(t, freq_dim_)))); }

  void backward(const Mat<T>& g) { fc1.backward(act_.backward(fc2.backward(g)), false); }

  void visit(const ParamVisitor<T>& f) {
    fc1.visit(f);
    fc2.visit(f);
  }

 private:
  int freq_dim_ = 0;

 public:
  Linear<T> fc1, fc2;

 private:
  SiLU<T> act_;
};

}  // namespace mf::nn

#pragma once

// AdamW with decoupled weight decay.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "mirrorfusion/nn/layers.hpp"

namespace mf {

struct AdamWOptions {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

template <typename T>
struct AdamState {
  nn::Mat<T> m;
  nn::Mat<T> v;
  long step = 0;
};

/// One update of a single tensor:
///   p <- p - lr * wd * p
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^k)) / (sqrt(v / (1-b2^k)) + eps)
template <typename T>
void adamw_update(nn::Mat<T>& p, const nn::Mat<T>& g, AdamState<T>& s, const AdamWOptions& o) {
  if (p.rows() != g.rows() || p.cols() != g.cols()) {
    throw ShapeError("adamw_update: parameter " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                     " vs gradient " + std::to_string(g.rows()) + "x" + std::to_string(g.cols()));
  }
  if (s.step == 0) {
    s.m = nn::Mat<T>::Zero(p.rows(), p.cols());
    s.v = nn::Mat<T>::Zero(p.rows(), p.cols());
  } else if (s.m.rows() != p.rows() || s.m.cols() != p.cols()) {
    throw ShapeError("adamw_update: optimizer state does not match parameter shape");
  }
  ++s.step;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.step));
  const double decay = 1.0 - o.lr * o.weight_decay;
  const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const T gi = g.data()[i];
    T& m = s.m.data()[i];
    T& v = s.v.data()[i];
    m = b1 * m + (T(1) - b1) * gi;
    v = b2 * v + (T(1) - b2) * gi * gi;
    const double mh = m / bc1, vh = v / bc2;
    p.data()[i] = static_cast<T>(p.data()[i] * decay - o.lr * mh / (std::sqrt(vh) + o.eps));
  }
}

/// AdamW over named parameters. Frozen parameters are neither decayed nor
/// updated.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions o = {}) : opt_(o) {}

  const AdamWOptions& options() const { return opt_; }
  void set_lr(double lr) { opt_.lr = lr; }

  void step(const std::vector<nn::Param<T>*>& params) {
    for (nn::Param<T>* p : params) {
      if (p->frozen) continue;
      adamw_update(p->value, p->grad, state_[p->name], opt_);
    }
  }

  const AdamState<T>* state(const std::string& name) const {
    const auto it = state_.find(name);
    return it == state_.end() ? nullptr : &it->second;
  }

 private:
  AdamWOptions opt_;
  std::unordered_map<std::string, AdamState<T>> state_;
};

}  // namespace mf

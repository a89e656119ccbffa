#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "bafpn/errors.hpp"
#include "bafpn/params.hpp"

namespace bafpn {

namespace detail {

template <typename T>
std::vector<Parameter<T>*> all_params(ParamRegistry<T>& params) {
  std::vector<Parameter<T>*> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(&p);
  return out;
}

}  // namespace detail

// Updates are applied in list order and gradients are zeroed afterward.
template <typename T>
class Sgd {
 public:
  explicit Sgd(T lr, T momentum = T(0)) : lr_(lr), momentum_(momentum) {}

  void step(const std::vector<Parameter<T>*>& params) {
    for (Parameter<T>* p : params) {
      if (!p->value.has_grad()) {
        throw ContractError("sgd step: parameter '" + p->name + "' has no gradient");
      }
      auto& w = p->value.data();
      auto& g = p->value.grad();
      if (momentum_ != T(0)) {
        auto& v = velocity_[p->value.impl()];
        if (v.empty()) v.assign(w.size(), T(0));
        for (std::size_t i = 0; i < w.size(); ++i) {
          v[i] = momentum_ * v[i] + g[i];
          w[i] -= lr_ * v[i];
        }
      } else {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
      }
      p->value.zero_grad();
    }
  }

  void step(ParamRegistry<T>& params) {
    auto list = detail::all_params(params);
    step(list);
  }

 private:
  T lr_, momentum_;
  std::unordered_map<TensorImpl<T>*, std::vector<T>> velocity_;
};

template <typename T>
class Adam {
 public:
  explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Parameter<T>*>& params) {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (Parameter<T>* p : params) {
      if (!p->value.has_grad()) {
        throw ContractError("adam step: parameter '" + p->name + "' has no gradient");
      }
      auto& w = p->value.data();
      auto& g = p->value.grad();
      auto& st = state_[p->value.impl()];
      if (st.m.empty()) {
        st.m.assign(w.size(), T(0));
        st.v.assign(w.size(), T(0));
      }
      for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = beta1_ * st.m[i] + (T(1) - beta1_) * g[i];
        st.v[i] = beta2_ * st.v[i] + (T(1) - beta2_) * g[i] * g[i];
        const T mhat = st.m[i] / bc1;
        const T vhat = st.v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      p->value.zero_grad();
    }
  }

  void step(ParamRegistry<T>& params) {
    auto list = detail::all_params(params);
    step(list);
  }

 private:
  struct State {
    std::vector<T> m, v;
  };
  T lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::unordered_map<TensorImpl<T>*, State> state_;
};

}  // namespace bafpn

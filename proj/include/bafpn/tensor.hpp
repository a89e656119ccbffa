#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bafpn/errors.hpp"

namespace bafpn {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Minimum element count before a kernel bothers spawning an OpenMP team.
inline constexpr std::int64_t kOmpGrain = 1 << 14;

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(TensorImpl<T>&)> backward_fn;
};

// Value-semantic handle onto a graph node. Tensors produced by ops are
// write-once; leaves (inputs, parameters) may be mutated between passes.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return filled(shape, T(0), requires_grad);
  }

  static Tensor filled(const Shape& shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  static Tensor from_vector(const Shape& shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw ShapeError("from_vector: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return shape_numel(impl_->shape); }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::vector<T>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  const std::vector<T>& grad() const { return impl_->grad; }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  T item() const {
    if (numel() != 1) throw ContractError("item: tensor has shape " + shape_str(shape()));
    return impl_->data[0];
  }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
std::vector<T>& ensure_grad(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
  return impl.grad;
}

template <typename T, typename F>
Tensor<T> make_node(Shape shape, std::vector<T> data, const char* op,
                    std::vector<Tensor<T>> parents, F&& backward_fn) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  impl->requires_grad = needs;
  if (needs) {
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.impl_ptr());
    impl->backward_fn = std::forward<F>(backward_fn);
  }
  return Tensor<T>(std::move(impl));
}

inline void require_4d(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected a 4-d tensor, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Reverse-mode sweep from a scalar loss. Nodes are processed in reverse
// topological order (DFS post-order over parents, parent order fixed at op
// construction), so accumulation order is reproducible run to run.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  TensorImpl<T>* root = loss.impl();
  if (shape_numel(root->shape) != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl<T>* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  detail::ensure_grad(*root);
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (!node->backward_fn) continue;
    for (auto& p : node->parents) {
      if (p->requires_grad) detail::ensure_grad(*p);
    }
    node->backward_fn(*node);
  }
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* in = x.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) {
    T v = in[i];
    out[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return detail::make_node(
      x.shape(), std::move(out), "sigmoid", {x}, [n](TensorImpl<T>& node) {
        auto& px = *node.parents[0];
        if (!px.requires_grad) return;
        T* gx = px.grad.data();
        const T* g = node.grad.data();
        const T* y = node.data.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
      });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  const T* in = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    if (in[i] < T(0)) {
      throw DomainError("sqrt: negative input " + std::to_string(static_cast<double>(in[i])) +
                        " at index " + std::to_string(i));
    }
  }
  std::vector<T> out(static_cast<std::size_t>(n));
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::sqrt(in[i]);
  return detail::make_node(
      x.shape(), std::move(out), "sqrt", {x}, [n](TensorImpl<T>& node) {
        auto& px = *node.parents[0];
        if (!px.requires_grad) return;
        T* gx = px.grad.data();
        const T* g = node.grad.data();
        const T* y = node.data.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) {
          if (y[i] > T(0)) gx[i] += g[i] / (T(2) * y[i]);
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* in = x.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
  return detail::make_node(
      x.shape(), std::move(out), "relu", {x}, [n](TensorImpl<T>& node) {
        auto& px = *node.parents[0];
        if (!px.requires_grad) return;
        T* gx = px.grad.data();
        const T* g = node.grad.data();
        const T* in = px.data.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) {
          if (in[i] > T(0)) gx[i] += g[i];
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise binary with limited broadcasting
// ---------------------------------------------------------------------------

namespace detail {

enum class Broadcast { kSame, kScalar, kPerChannel, kPerPixel };

// Supported right-hand shapes against a [B,C,H,W] left: equal, single scalar,
// [B,C,1,1] (per-channel vector) and [B,1,H,W] (per-pixel map).
inline Broadcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::kSame;
  if (shape_numel(b) == 1) return Broadcast::kScalar;
  if (a.size() == 4 && b.size() == 4 && b[0] == a[0]) {
    if (b[1] == a[1] && b[2] == 1 && b[3] == 1) return Broadcast::kPerChannel;
    if (b[1] == 1 && b[2] == a[2] && b[3] == a[3]) return Broadcast::kPerPixel;
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
}

// Accumulates g (shaped like a) into gb (shaped like b under `mode`), summing
// over broadcast axes with a fixed reduction order. `scale_by` optionally
// multiplies by a companion buffer shaped like a (used for mul's b-gradient).
template <typename T>
void reduce_into_broadcast(const T* g, const T* scale_by, T* gb, const Shape& a, Broadcast mode,
                           T sign) {
  const std::int64_t n = shape_numel(a);
  switch (mode) {
    case Broadcast::kSame: {
#pragma omp parallel for if (n >= kOmpGrain)
      for (std::int64_t i = 0; i < n; ++i) gb[i] += sign * g[i] * (scale_by ? scale_by[i] : T(1));
      break;
    }
    case Broadcast::kScalar: {
      T acc = 0;
      for (std::int64_t i = 0; i < n; ++i) acc += g[i] * (scale_by ? scale_by[i] : T(1));
      gb[0] += sign * acc;
      break;
    }
    case Broadcast::kPerChannel: {
      const std::int64_t hw = a[2] * a[3];
      const std::int64_t bc = a[0] * a[1];
#pragma omp parallel for if (n >= kOmpGrain)
      for (std::int64_t j = 0; j < bc; ++j) {
        T acc = 0;
        const std::int64_t base = j * hw;
        for (std::int64_t s = 0; s < hw; ++s) acc += g[base + s] * (scale_by ? scale_by[base + s] : T(1));
        gb[j] += sign * acc;
      }
      break;
    }
    case Broadcast::kPerPixel: {
      const std::int64_t B = a[0], C = a[1], hw = a[2] * a[3];
#pragma omp parallel for collapse(2) if (n >= kOmpGrain)
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t s = 0; s < hw; ++s) {
          T acc = 0;
          for (std::int64_t c = 0; c < C; ++c) {
            const std::int64_t i = (b * C + c) * hw + s;
            acc += g[i] * (scale_by ? scale_by[i] : T(1));
          }
          gb[b * hw + s] += sign * acc;
        }
      }
      break;
    }
  }
}

template <typename T>
inline std::int64_t broadcast_index(std::int64_t i, const Shape& a, Broadcast mode) {
  switch (mode) {
    case Broadcast::kSame: return i;
    case Broadcast::kScalar: return 0;
    case Broadcast::kPerChannel: return i / (a[2] * a[3]);
    case Broadcast::kPerPixel: {
      const std::int64_t hw = a[2] * a[3];
      return (i / (a[1] * hw)) * hw + i % hw;
    }
  }
  return 0;
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto mode = detail::broadcast_mode(a.shape(), b.shape(), "add");
  const Shape ash = a.shape();
  const std::int64_t n = a.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[detail::broadcast_index<T>(i, ash, mode)];
  return detail::make_node(
      a.shape(), std::move(out), "add", {a, b}, [mode, ash, n](TensorImpl<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const T* g = node.grad.data();
        if (pa.requires_grad) {
          T* ga = pa.grad.data();
#pragma omp parallel for if (n >= kOmpGrain)
          for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (pb.requires_grad) {
          detail::reduce_into_broadcast<T>(g, nullptr, pb.grad.data(), ash, mode, T(1));
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto mode = detail::broadcast_mode(a.shape(), b.shape(), "sub");
  const Shape ash = a.shape();
  const std::int64_t n = a.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[detail::broadcast_index<T>(i, ash, mode)];
  return detail::make_node(
      a.shape(), std::move(out), "sub", {a, b}, [mode, ash, n](TensorImpl<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const T* g = node.grad.data();
        if (pa.requires_grad) {
          T* ga = pa.grad.data();
#pragma omp parallel for if (n >= kOmpGrain)
          for (std::int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (pb.requires_grad) {
          detail::reduce_into_broadcast<T>(g, nullptr, pb.grad.data(), ash, mode, T(-1));
        }
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto mode = detail::broadcast_mode(a.shape(), b.shape(), "mul");
  const Shape ash = a.shape();
  const std::int64_t n = a.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[detail::broadcast_index<T>(i, ash, mode)];
  return detail::make_node(
      a.shape(), std::move(out), "mul", {a, b}, [mode, ash, n](TensorImpl<T>& node) {
        auto& pa = *node.parents[0];
        auto& pb = *node.parents[1];
        const T* g = node.grad.data();
        if (pa.requires_grad) {
          T* ga = pa.grad.data();
          const T* vb = pb.data.data();
#pragma omp parallel for if (n >= kOmpGrain)
          for (std::int64_t i = 0; i < n; ++i)
            ga[i] += g[i] * vb[detail::broadcast_index<T>(i, ash, mode)];
        }
        if (pb.requires_grad) {
          detail::reduce_into_broadcast<T>(g, pa.data.data(), pb.grad.data(), ash, mode, T(1));
        }
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  const std::int64_t n = x.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T* in = x.data().data();
#pragma omp parallel for if (n >= kOmpGrain)
  for (std::int64_t i = 0; i < n; ++i) out[i] = c * in[i];
  return detail::make_node(
      x.shape(), std::move(out), "scale", {x}, [c, n](TensorImpl<T>& node) {
        auto& px = *node.parents[0];
        if (!px.requires_grad) return;
        T* gx = px.grad.data();
        const T* g = node.grad.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) gx[i] += c * g[i];
      });
}

// ---------------------------------------------------------------------------
// channel combine / slice / grid pack
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  detail::require_4d(xs[0].shape(), "concat");
  const std::int64_t B = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::int64_t C = 0;
  for (const auto& x : xs) {
    detail::require_4d(x.shape(), "concat");
    if (x.dim(0) != B || x.dim(2) != H || x.dim(3) != W) {
      throw ShapeError("concat: mismatched dims " + shape_str(xs[0].shape()) + " vs " +
                       shape_str(x.shape()));
    }
    C += x.dim(1);
  }
  const std::int64_t hw = H * W;
  std::vector<T> out(static_cast<std::size_t>(B * C * hw));
  std::int64_t c0 = 0;
  for (const auto& x : xs) {
    const std::int64_t xc = x.dim(1);
    const T* in = x.data().data();
#pragma omp parallel for if (B * xc * hw >= kOmpGrain)
    for (std::int64_t b = 0; b < B; ++b) {
      std::copy(in + b * xc * hw, in + (b + 1) * xc * hw, out.data() + (b * C + c0) * hw);
    }
    c0 += xc;
  }
  return detail::make_node(
      Shape{B, C, H, W}, std::move(out), "concat", xs, [B, C, hw](TensorImpl<T>& node) {
        const T* g = node.grad.data();
        std::int64_t c0 = 0;
        for (auto& pp : node.parents) {
          auto& p = *pp;
          const std::int64_t xc = p.shape[1];
          if (p.requires_grad) {
            T* gx = p.grad.data();
#pragma omp parallel for collapse(2) if (B * xc * hw >= kOmpGrain)
            for (std::int64_t b = 0; b < B; ++b) {
              for (std::int64_t c = 0; c < xc; ++c) {
                const T* gs = g + ((b * C + c0 + c) * hw);
                T* gd = gx + ((b * xc + c) * hw);
                for (std::int64_t s = 0; s < hw; ++s) gd[s] += gs[s];
              }
            }
          }
          c0 += xc;
        }
      });
}

// Interleaves two equal-shape inputs along channels: [a1,b1,a2,b2,...].
template <typename T>
Tensor<T> interleave_channels(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_4d(a.shape(), "interleave");
  if (a.shape() != b.shape()) {
    throw ShapeError("interleave: shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::int64_t B = a.dim(0), C = a.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(B * 2 * C * hw));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
#pragma omp parallel for collapse(2) if (B * C * hw >= kOmpGrain)
  for (std::int64_t bi = 0; bi < B; ++bi) {
    for (std::int64_t c = 0; c < C; ++c) {
      const T* sa = pa + (bi * C + c) * hw;
      const T* sb = pb + (bi * C + c) * hw;
      T* da = out.data() + (bi * 2 * C + 2 * c) * hw;
      T* db = out.data() + (bi * 2 * C + 2 * c + 1) * hw;
      for (std::int64_t s = 0; s < hw; ++s) {
        da[s] = sa[s];
        db[s] = sb[s];
      }
    }
  }
  return detail::make_node(
      Shape{B, 2 * C, a.dim(2), a.dim(3)}, std::move(out), "interleave", {a, b},
      [B, C, hw](TensorImpl<T>& node) {
        const T* g = node.grad.data();
        for (int side = 0; side < 2; ++side) {
          auto& p = *node.parents[side];
          if (!p.requires_grad) continue;
          T* gx = p.grad.data();
#pragma omp parallel for collapse(2) if (B * C * hw >= kOmpGrain)
          for (std::int64_t bi = 0; bi < B; ++bi) {
            for (std::int64_t c = 0; c < C; ++c) {
              const T* gs = g + (bi * 2 * C + 2 * c + side) * hw;
              T* gd = gx + (bi * C + c) * hw;
              for (std::int64_t s = 0; s < hw; ++s) gd[s] += gs[s];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::int64_t c0, std::int64_t c1) {
  detail::require_4d(x.shape(), "channel_slice");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (c0 < 0 || c1 > C || c0 >= c1) {
    throw ShapeError("channel_slice: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") on " + shape_str(x.shape()));
  }
  const std::int64_t nc = c1 - c0;
  std::vector<T> out(static_cast<std::size_t>(B * nc * hw));
  const T* in = x.data().data();
#pragma omp parallel for if (B * nc * hw >= kOmpGrain)
  for (std::int64_t b = 0; b < B; ++b) {
    std::copy(in + (b * C + c0) * hw, in + (b * C + c1) * hw, out.data() + b * nc * hw);
  }
  return detail::make_node(
      Shape{B, nc, x.dim(2), x.dim(3)}, std::move(out), "channel_slice", {x},
      [B, C, c0, nc, hw](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * nc * hw >= kOmpGrain)
        for (std::int64_t b = 0; b < B; ++b) {
          const T* gs = g + b * nc * hw;
          T* gd = gx + (b * C + c0) * hw;
          for (std::int64_t s = 0; s < nc * hw; ++s) gd[s] += gs[s];
        }
      });
}

// Packs four [B,C,1,1] vectors into a [B,C,2,2] grid (row-major tl,tr,bl,br).
template <typename T>
Tensor<T> grid2x2_pack(const Tensor<T>& tl, const Tensor<T>& tr, const Tensor<T>& bl,
                       const Tensor<T>& br) {
  for (const Tensor<T>* t : {&tl, &tr, &bl, &br}) {
    detail::require_4d(t->shape(), "grid2x2_pack");
    if (t->shape() != tl.shape() || t->dim(2) != 1 || t->dim(3) != 1) {
      throw ShapeError("grid2x2_pack: inputs must share shape [B,C,1,1], got " +
                       shape_str(t->shape()));
    }
  }
  const std::int64_t B = tl.dim(0), C = tl.dim(1);
  const std::int64_t bc = B * C;
  std::vector<T> out(static_cast<std::size_t>(bc * 4));
  const T* src[4] = {tl.data().data(), tr.data().data(), bl.data().data(), br.data().data()};
  for (int q = 0; q < 4; ++q) {
    for (std::int64_t j = 0; j < bc; ++j) out[j * 4 + q] = src[q][j];
  }
  return detail::make_node(
      Shape{B, C, 2, 2}, std::move(out), "grid2x2_pack", {tl, tr, bl, br},
      [bc](TensorImpl<T>& node) {
        const T* g = node.grad.data();
        for (int q = 0; q < 4; ++q) {
          auto& p = *node.parents[q];
          if (!p.requires_grad) continue;
          T* gx = p.grad.data();
          for (std::int64_t j = 0; j < bc; ++j) gx[j] += g[j * 4 + q];
        }
      });
}

// Copies data into a new shape with the same element count.
template <typename T>
Tensor<T> reshape_copy(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out = x.data();
  const std::int64_t n = x.numel();
  return detail::make_node(
      std::move(shape), std::move(out), "reshape", {x}, [n](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g[i];
      });
}

// ---------------------------------------------------------------------------
// strided subsample (one phase of the space-to-depth split)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> strided_subsample(const Tensor<T>& x, int row_phase, int col_phase) {
  detail::require_4d(x.shape(), "strided_subsample");
  if (row_phase < 0 || row_phase > 1 || col_phase < 0 || col_phase > 1) {
    throw ContractError("strided_subsample: phases must be 0 or 1");
  }
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ShapeError("strided_subsample: H and W must be even, got " + shape_str(x.shape()));
  }
  const std::int64_t OH = H / 2, OW = W / 2;
  std::vector<T> out(static_cast<std::size_t>(B * C * OH * OW));
  const T* in = x.data().data();
#pragma omp parallel for if (B * C * OH * OW >= kOmpGrain)
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* plane = in + bc * H * W;
    T* dst = out.data() + bc * OH * OW;
    for (std::int64_t i = 0; i < OH; ++i) {
      const T* row = plane + (2 * i + row_phase) * W + col_phase;
      for (std::int64_t j = 0; j < OW; ++j) dst[i * OW + j] = row[2 * j];
    }
  }
  return detail::make_node(
      Shape{B, C, OH, OW}, std::move(out), "strided_subsample", {x},
      [B, C, H, W, OH, OW, row_phase, col_phase](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * C * OH * OW >= kOmpGrain)
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          const T* gs = g + bc * OH * OW;
          T* plane = gx + bc * H * W;
          for (std::int64_t i = 0; i < OH; ++i) {
            T* row = plane + (2 * i + row_phase) * W + col_phase;
            for (std::int64_t j = 0; j < OW; ++j) row[2 * j] += gs[i * OW + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mean_over_channels(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "mean_over_channels");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (C == 0) throw ShapeError("mean_over_channels: empty channel axis");
  std::vector<T> out(static_cast<std::size_t>(B * hw));
  const T* in = x.data().data();
#pragma omp parallel for collapse(2) if (B * hw >= kOmpGrain)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t s = 0; s < hw; ++s) {
      T acc = 0;
      for (std::int64_t c = 0; c < C; ++c) acc += in[(b * C + c) * hw + s];
      out[b * hw + s] = acc / static_cast<T>(C);
    }
  }
  return detail::make_node(
      Shape{B, 1, x.dim(2), x.dim(3)}, std::move(out), "mean_over_channels", {x},
      [B, C, hw](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
        const T inv = T(1) / static_cast<T>(C);
#pragma omp parallel for collapse(2) if (B * C * hw >= kOmpGrain)
        for (std::int64_t b = 0; b < B; ++b) {
          for (std::int64_t c = 0; c < C; ++c) {
            const T* gs = g + b * hw;
            T* gd = gx + (b * C + c) * hw;
            for (std::int64_t s = 0; s < hw; ++s) gd[s] += inv * gs[s];
          }
        }
      });
}

template <typename T>
Tensor<T> max_over_channels(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "max_over_channels");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (C == 0) throw ShapeError("max_over_channels: empty channel axis");
  std::vector<T> out(static_cast<std::size_t>(B * hw));
  std::vector<std::int64_t> arg(static_cast<std::size_t>(B * hw));
  const T* in = x.data().data();
#pragma omp parallel for collapse(2) if (B * hw >= kOmpGrain)
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t s = 0; s < hw; ++s) {
      T best = in[(b * C) * hw + s];
      std::int64_t bi = 0;
      for (std::int64_t c = 1; c < C; ++c) {
        T v = in[(b * C + c) * hw + s];
        if (v > best) {
          best = v;
          bi = c;
        }
      }
      out[b * hw + s] = best;
      arg[b * hw + s] = bi;
    }
  }
  return detail::make_node(
      Shape{B, 1, x.dim(2), x.dim(3)}, std::move(out), "max_over_channels", {x},
      [B, C, hw, arg = std::move(arg)](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * hw >= kOmpGrain)
        for (std::int64_t j = 0; j < B * hw; ++j) {
          const std::int64_t b = j / hw, s = j % hw;
          gx[(b * C + arg[j]) * hw + s] += g[j];
        }
      });
}

template <typename T>
Tensor<T> global_avg(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "global_avg");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg: empty spatial axes");
  std::vector<T> out(static_cast<std::size_t>(B * C));
  const T* in = x.data().data();
#pragma omp parallel for if (B * C * hw >= kOmpGrain)
  for (std::int64_t j = 0; j < B * C; ++j) {
    T acc = 0;
    for (std::int64_t s = 0; s < hw; ++s) acc += in[j * hw + s];
    out[j] = acc / static_cast<T>(hw);
  }
  return detail::make_node(
      Shape{B, C, 1, 1}, std::move(out), "global_avg", {x}, [B, C, hw](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
        const T inv = T(1) / static_cast<T>(hw);
#pragma omp parallel for if (B * C * hw >= kOmpGrain)
        for (std::int64_t j = 0; j < B * C; ++j) {
          for (std::int64_t s = 0; s < hw; ++s) gx[j * hw + s] += inv * g[j];
        }
      });
}

template <typename T>
Tensor<T> global_max(const Tensor<T>& x) {
  detail::require_4d(x.shape(), "global_max");
  const std::int64_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_max: empty spatial axes");
  std::vector<T> out(static_cast<std::size_t>(B * C));
  std::vector<std::int64_t> arg(static_cast<std::size_t>(B * C));
  const T* in = x.data().data();
#pragma omp parallel for if (B * C * hw >= kOmpGrain)
  for (std::int64_t j = 0; j < B * C; ++j) {
    T best = in[j * hw];
    std::int64_t bi = 0;
    for (std::int64_t s = 1; s < hw; ++s) {
      if (in[j * hw + s] > best) {
        best = in[j * hw + s];
        bi = s;
      }
    }
    out[j] = best;
    arg[j] = bi;
  }
  return detail::make_node(
      Shape{B, C, 1, 1}, std::move(out), "global_max", {x},
      [B, C, hw, arg = std::move(arg)](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T* g = node.grad.data();
        T* gx = p.grad.data();
#pragma omp parallel for if (B * C >= kOmpGrain)
        for (std::int64_t j = 0; j < B * C; ++j) gx[j * hw + arg[j]] += g[j];
      });
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  const std::int64_t n = x.numel();
  const T* in = x.data().data();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += in[i];
  return detail::make_node(
      Shape{1}, std::vector<T>{acc}, "sum_all", {x}, [n](TensorImpl<T>& node) {
        auto& p = *node.parents[0];
        if (!p.requires_grad) return;
        const T g = node.grad[0];
        T* gx = p.grad.data();
#pragma omp parallel for if (n >= kOmpGrain)
        for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
      });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

}  // namespace bafpn

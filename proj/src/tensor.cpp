#include "affectseq/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

namespace affectseq::grad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// ---- Tensor ----------------------------------------------------------------

template <typename T>
const Shape& Tensor<T>::shape() const {
  return tape_->node(id_).shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return tape_->node(id_).value.size();
}

template <typename T>
std::span<const T> Tensor<T>::value() const {
  return tape_->node(id_).value;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  const auto& n = tape_->node(id_);
  if (n.param != nullptr) return n.param->grad;
  return n.grad;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw StructuralError("item() on tensor of shape " + shape_str(shape()));
  return value()[0];
}

// ---- Tape ------------------------------------------------------------------

template <typename T>
Tensor<T> Tape<T>::constant(Shape shape, std::vector<T> value) {
  if (numel(shape) != value.size()) {
    throw StructuralError("constant: " + std::to_string(value.size()) + " values for shape " + shape_str(shape));
  }
  nodes_.push_back(Node{std::move(shape), std::move(value), {}, false, true, {}, nullptr});
  return Tensor<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T> Tape<T>::variable(Shape shape, std::vector<T> value) {
  auto t = constant(std::move(shape), std::move(value));
  nodes_.back().requires_grad = grad_enabled_;
  return t;
}

template <typename T>
Tensor<T> Tape<T>::bind(Parameter<T>& param) {
  auto t = constant(param.shape, param.value);
  nodes_.back().requires_grad = grad_enabled_;
  nodes_.back().param = grad_enabled_ ? &param : nullptr;
  return t;
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, std::vector<T> value, bool requires_grad, BackwardFn fn) {
  requires_grad = requires_grad && grad_enabled_;
  if (numel(shape) != value.size()) {
    throw StructuralError("record: " + std::to_string(value.size()) + " values for shape " + shape_str(shape));
  }
  nodes_.push_back(Node{std::move(shape), std::move(value), {}, requires_grad, false,
                        requires_grad ? std::move(fn) : BackwardFn{}, nullptr});
  return Tensor<T>(this, nodes_.size() - 1);
}

template <typename T>
std::span<T> Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.param != nullptr) return n.param->grad;
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), T{0});
  return n.grad;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, std::span<const T> g) {
  auto buf = grad_buffer(id);
  if (buf.empty()) return;
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (&loss.tape() != this) throw StructuralError("backward: tensor belongs to another tape");
  if (loss.numel() != 1) throw StructuralError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad.clear();
  }
  if (!nodes_[loss.id()].requires_grad) return;
  const T one{1};
  accumulate(loss.id(), std::span<const T>(&one, 1));
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.leaf || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

// ---- helpers ---------------------------------------------------------------

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;
template <typename T>
using CMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void same_tape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (&a.tape() != &b.tape()) throw StructuralError(std::string(op) + ": operands live on different tapes");
}

template <typename T>
std::span<const T> self_grad(Tape<T>& t, std::size_t self) {
  return t.node(self).grad;
}

// Splits a shape around `axis` into (outer, len, inner) strides.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw StructuralError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                          shape_str(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw StructuralError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(), [xid, deriv](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    const auto& xval = t.node(xid).value;
    const auto& yval = t.node(self).value;
    auto dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * deriv(xval[i], yval[i]);
  });
}

enum class BinOp { Add, Sub, Mul, Div };

// Number of trailing elements `small` repeats over when it broadcasts
// against `big` as a whole trailing block, 0 otherwise.
std::size_t trailing_period(const Shape& big, const Shape& small) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1) ++lead;
  const std::size_t rank = small.size() - lead;
  if (rank > big.size()) return 0;
  for (std::size_t i = 0; i < rank; ++i) {
    if (small[lead + i] != big[big.size() - rank + i]) return 0;
  }
  return numel(small);
}

template <typename T, typename F>
void for_pairs(std::size_t n, std::size_t pa, std::size_t pb, F f) {
  if (pa == n && pb == n) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
  } else if (pa == n) {
    for (std::size_t r = 0; r < n; r += pb)
      for (std::size_t j = 0; j < pb; ++j) f(r + j, r + j, j);
  } else {
    for (std::size_t r = 0; r < n; r += pa)
      for (std::size_t j = 0; j < pa; ++j) f(r + j, j, r + j);
  }
}

template <typename T>
Tensor<T> binary(const Tensor<T>& a0, const Tensor<T>& b0, BinOp op, const char* name) {
  same_tape(a0, b0, name);
  Tensor<T> a = a0, b = b0;
  Shape out_shape = a.shape();
  std::size_t pa = a.numel(), pb = b.numel();
  if (a.shape() != b.shape()) {
    out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    if (a.shape() == out_shape && trailing_period(out_shape, b.shape()) == pb && pb > 0) {
      // b repeats along leading axes
    } else if (b.shape() == out_shape && trailing_period(out_shape, a.shape()) == pa && pa > 0) {
      // a repeats along leading axes
    } else {
      a = broadcast_to(a, out_shape);
      b = broadcast_to(b, out_shape);
      pa = pb = n;
    }
  }
  const std::size_t n = numel(out_shape);
  auto av = a.value();
  auto bv = b.value();
  std::vector<T> out(n);
  switch (op) {
    case BinOp::Add: for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] + bv[j]; }); break;
    case BinOp::Sub: for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] - bv[j]; }); break;
    case BinOp::Mul: for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] * bv[j]; }); break;
    case BinOp::Div: for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { out[o] = av[i] / bv[j]; }); break;
  }
  const std::size_t aid = a.id(), bid = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record(std::move(out_shape), std::move(out), rg, [aid, bid, op, n, pa, pb](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    const auto& A = t.node(aid).value;
    const auto& B = t.node(bid).value;
    auto da = t.grad_buffer(aid);
    auto db = t.grad_buffer(bid);
    const bool ga = !da.empty(), gb = !db.empty();
    switch (op) {
      case BinOp::Add:
        if (ga) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t) { da[i] += g[o]; });
        if (gb) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t, std::size_t j) { db[j] += g[o]; });
        break;
      case BinOp::Sub:
        if (ga) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t) { da[i] += g[o]; });
        if (gb) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t, std::size_t j) { db[j] -= g[o]; });
        break;
      case BinOp::Mul:
        if (ga) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { da[i] += g[o] * B[j]; });
        if (gb) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { db[j] += g[o] * A[i]; });
        break;
      case BinOp::Div:
        if (ga) for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { da[i] += g[o] / B[j]; });
        if (gb) {
          for_pairs<T>(n, pa, pb, [&](std::size_t o, std::size_t i, std::size_t j) { db[j] -= g[o] * A[i] / (B[j] * B[j]); });
        }
        break;
    }
  });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

// ---- shape primitives ------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  same_tape(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw StructuralError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n);
  Map<T>(out.data(), m, n).noalias() = CMap<T>(a.value().data(), m, k) * CMap<T>(b.value().data(), k, n);
  const std::size_t aid = a.id(), bid = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().record({m, n}, std::move(out), rg, [aid, bid, m, k, n](Tape<T>& t, std::size_t self) {
    CMap<T> G(self_grad(t, self).data(), m, n);
    if (auto da = t.grad_buffer(aid); !da.empty()) {
      Map<T>(da.data(), m, k).noalias() += G * CMap<T>(t.node(bid).value.data(), k, n).transpose();
    }
    if (auto db = t.grad_buffer(bid); !db.empty()) {
      Map<T>(db.data(), k, n).noalias() += CMap<T>(t.node(aid).value.data(), m, k).transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2) throw StructuralError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  Map<T>(out.data(), c, r) = CMap<T>(x.value().data(), r, c).transpose();
  const std::size_t xid = x.id();
  return x.tape().record({c, r}, std::move(out), x.requires_grad(), [xid, r, c](Tape<T>& t, std::size_t self) {
    auto dx = t.grad_buffer(xid);
    Map<T>(dx.data(), r, c) += CMap<T>(self_grad(t, self).data(), c, r).transpose();
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw StructuralError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.value().begin(), x.value().end());
  const std::size_t xid = x.id();
  return x.tape().record(std::move(shape), std::move(out), x.requires_grad(), [xid](Tape<T>& t, std::size_t self) {
    t.accumulate(xid, self_grad(t, self));
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  const Shape& src = x.shape();
  if (src == shape) return x;
  if (broadcast_shape(src, shape) != shape) {
    throw StructuralError("broadcast_to: cannot broadcast " + shape_str(src) + " to " + shape_str(shape));
  }
  const std::size_t r = shape.size();
  const std::size_t offset = r - src.size();
  std::vector<std::size_t> src_stride(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = r; i-- > offset;) {
    const std::size_t d = src[i - offset];
    src_stride[i] = d == 1 ? 0 : stride;
    stride *= d;
  }
  const std::size_t n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * src_stride[i];
    map[flat] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < shape[i]) break;
      idx[i] = 0;
    }
  }
  auto xv = x.value();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xv[map[i]];
  const std::size_t xid = x.id();
  return x.tape().record(shape, std::move(out), x.requires_grad(),
                         [xid, map = std::move(map)](Tape<T>& t, std::size_t self) {
                           auto g = self_grad(t, self);
                           auto dx = t.grad_buffer(xid);
                           for (std::size_t i = 0; i < map.size(); ++i) dx[map[i]] += g[i];
                         });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Mul, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, BinOp::Div, "div");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw StructuralError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw StructuralError("concat: axis out of range for " + shape_str(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  bool rg = false;
  for (const auto& p : parts) {
    same_tape(parts.front(), p, "concat");
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) throw StructuralError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(ref));
    out_shape[axis] += s[axis];
    lens.push_back(s[axis]);
    rg = rg || p.requires_grad();
  }
  const AxisView v = axis_view(out_shape, axis, "concat");
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> ids;
  std::size_t base = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].value();
    const std::size_t block = lens[k] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(pv.data() + o * block, block, out.data() + o * v.len * v.inner + base * v.inner);
    }
    base += lens[k];
    ids.push_back(parts[k].id());
  }
  return parts.front().tape().record(
      out_shape, std::move(out), rg, [ids = std::move(ids), lens = std::move(lens), v](Tape<T>& t, std::size_t self) {
        auto g = self_grad(t, self);
        std::size_t base = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto dp = t.grad_buffer(ids[k]);
          const std::size_t block = lens[k] * v.inner;
          if (!dp.empty()) {
            for (std::size_t o = 0; o < v.outer; ++o) {
              const T* src = g.data() + o * v.len * v.inner + base * v.inner;
              T* dst = dp.data() + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          base += lens[k];
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisView v = axis_view(x.shape(), axis, "slice");
  if (begin > end || end > v.len) {
    throw StructuralError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                          ") invalid for axis of length " + std::to_string(v.len));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * v.inner;
  std::vector<T> out(v.outer * block);
  auto xv = x.value();
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(xv.data() + o * v.len * v.inner + begin * v.inner, block, out.data() + o * block);
  }
  const std::size_t xid = x.id();
  return x.tape().record(out_shape, std::move(out), x.requires_grad(),
                         [xid, v, begin, block](Tape<T>& t, std::size_t self) {
                           auto g = self_grad(t, self);
                           auto dx = t.grad_buffer(xid);
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             T* dst = dx.data() + o * v.len * v.inner + begin * v.inner;
                             const T* src = g.data() + o * block;
                             for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                           }
                         });
}

template <typename T>
Tensor<T> take(const Tensor<T>& x, std::span<const std::size_t> indices) {
  auto xv = x.value();
  std::vector<T> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= xv.size()) {
      throw StructuralError("take: index " + std::to_string(indices[i]) + " out of range " + std::to_string(xv.size()));
    }
    out[i] = xv[indices[i]];
  }
  const std::size_t xid = x.id();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return x.tape().record({indices.size()}, std::move(out), x.requires_grad(),
                         [xid, idx = std::move(idx)](Tape<T>& t, std::size_t self) {
                           auto g = self_grad(t, self);
                           auto dx = t.grad_buffer(xid);
                           for (std::size_t i = 0; i < idx.size(); ++i) dx[idx[i]] += g[i];
                         });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto xv = x.value();
  T s{0};
  for (T v : xv) s += v;
  const std::size_t xid = x.id();
  return x.tape().record({}, {s}, x.requires_grad(), [xid](Tape<T>& t, std::size_t self) {
    const T g = self_grad(t, self)[0];
    for (auto& d : t.grad_buffer(xid)) d += g;
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  const AxisView v = axis_view(x.shape(), axis, "sum");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  std::vector<T> out(v.outer * v.inner, T{0});
  auto xv = x.value();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += xv[(o * v.len + l) * v.inner + i];
  const std::size_t xid = x.id();
  return x.tape().record(out_shape, std::move(out), x.requires_grad(), [xid, v](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    auto dx = t.grad_buffer(xid);
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t l = 0; l < v.len; ++l)
        for (std::size_t i = 0; i < v.inner; ++i) dx[(o * v.len + l) * v.inner + i] += g[o * v.inner + i];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw StructuralError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis, bool keepdim) {
  const AxisView v = axis_view(x.shape(), axis, "mean");
  if (v.len == 0) throw StructuralError("mean: empty axis");
  return scale(sum(x, axis, keepdim), T(1) / static_cast<T>(v.len));
}

// ---- pointwise -------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  if (x.numel() == 0) throw StructuralError("log: empty tensor");
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---- normalizations --------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis, "softmax");
  if (v.len == 0) throw StructuralError("softmax: empty axis");
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      T z{0};
      for (std::size_t l = 0; l < v.len; ++l) {
        const T e = std::exp(xv[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= z;
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(), [xid, v](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    const auto& y = t.node(self).value;
    auto dx = t.grad_buffer(xid);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.len * v.inner + i;
        T dot{0};
        for (std::size_t l = 0; l < v.len; ++l) dot += g[base + l * v.inner] * y[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t k = base + l * v.inner;
          dx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
  const AxisView v = axis_view(x.shape(), axis, "log_softmax");
  if (v.len == 0) throw StructuralError("log_softmax: empty axis");
  auto xv = x.value();
  std::vector<T> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < v.len; ++l) mx = std::max(mx, xv[base + l * v.inner]);
      T z{0};
      for (std::size_t l = 0; l < v.len; ++l) z += std::exp(xv[base + l * v.inner] - mx);
      const T lse = mx + std::log(z);
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] = xv[base + l * v.inner] - lse;
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(), [xid, v](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    const auto& y = t.node(self).value;
    auto dx = t.grad_buffer(xid);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.len * v.inner + i;
        T gs{0};
        for (std::size_t l = 0; l < v.len; ++l) gs += g[base + l * v.inner];
        for (std::size_t l = 0; l < v.len; ++l) {
          const std::size_t k = base + l * v.inner;
          dx[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, std::size_t axis, T eps) {
  if (!(eps > T(0))) throw StructuralError("layer_norm: eps must be positive");
  const AxisView v = axis_view(x.shape(), axis, "layer_norm");
  if (v.len == 0) throw StructuralError("layer_norm: empty axis");
  auto xv = x.value();
  std::vector<T> out(xv.size());
  std::vector<T> inv_std(v.outer * v.inner);
  const T n = static_cast<T>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      T mu{0};
      for (std::size_t l = 0; l < v.len; ++l) mu += xv[base + l * v.inner];
      mu /= n;
      T var{0};
      for (std::size_t l = 0; l < v.len; ++l) {
        const T d = xv[base + l * v.inner] - mu;
        var += d * d;
      }
      var /= n;
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[o * v.inner + i] = is;
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] = (xv[base + l * v.inner] - mu) * is;
    }
  }
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(),
                         [xid, v, inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
                           auto g = self_grad(t, self);
                           const auto& y = t.node(self).value;
                           auto dx = t.grad_buffer(xid);
                           const T n = static_cast<T>(v.len);
                           for (std::size_t o = 0; o < v.outer; ++o) {
                             for (std::size_t i = 0; i < v.inner; ++i) {
                               const std::size_t base = o * v.len * v.inner + i;
                               T gm{0}, gy{0};
                               for (std::size_t l = 0; l < v.len; ++l) {
                                 const std::size_t k = base + l * v.inner;
                                 gm += g[k];
                                 gy += g[k] * y[k];
                               }
                               gm /= n;
                               gy /= n;
                               const T is = inv_std[o * v.inner + i];
                               for (std::size_t l = 0; l < v.len; ++l) {
                                 const std::size_t k = base + l * v.inner;
                                 dx[k] += is * (g[k] - gm - y[k] * gy);
                               }
                             }
                           }
                         });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, bool train, std::mt19937_64& rng) {
  if (!(p >= T(0) && p < T(1))) throw StructuralError("dropout: probability must lie in [0, 1)");
  if (!train || p == T(0)) return x;
  const T keep_scale = T(1) / (T(1) - p);
  // keep when the top 53 bits of one draw fall below (1-p) * 2^53
  const auto threshold = static_cast<std::uint64_t>((1.0 - static_cast<double>(p)) * 9007199254740992.0);
  auto xv = x.value();
  std::vector<T> factor(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    factor[i] = (rng() >> 11) < threshold ? keep_scale : T(0);
    out[i] = xv[i] * factor[i];
  }
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(),
                         [xid, factor = std::move(factor)](Tape<T>& t, std::size_t self) {
                           auto g = self_grad(t, self);
                           auto dx = t.grad_buffer(xid);
                           for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * factor[i];
                         });
}

template <typename T>
Tensor<T> dilated_causal_conv1d(const Tensor<T>& input, const Tensor<T>& kernel, std::size_t dilation) {
  same_tape(input, kernel, "dilated_causal_conv1d");
  if (input.rank() != 2 || kernel.rank() != 3 || kernel.dim(1) != input.dim(1)) {
    throw StructuralError("dilated_causal_conv1d: input " + shape_str(input.shape()) + " incompatible with kernel " +
                          shape_str(kernel.shape()));
  }
  if (dilation == 0) throw StructuralError("dilated_causal_conv1d: dilation must be >= 1");
  const std::size_t steps = input.dim(0), cin = input.dim(1), k = kernel.dim(0), cout = kernel.dim(2);
  std::vector<T> out(steps * cout, T{0});
  Map<T> Y(out.data(), steps, cout);
  CMap<T> X(input.value().data(), steps, cin);
  for (std::size_t tap = 0; tap < k; ++tap) {
    const std::size_t shift = (k - 1 - tap) * dilation;
    if (shift >= steps) continue;
    CMap<T> W(kernel.value().data() + tap * cin * cout, cin, cout);
    const auto rows = static_cast<Eigen::Index>(steps - shift);
    Y.bottomRows(rows).noalias() += X.topRows(rows) * W;
  }
  const std::size_t xid = input.id(), wid = kernel.id();
  const bool rg = input.requires_grad() || kernel.requires_grad();
  return input.tape().record(
      {steps, cout}, std::move(out), rg, [xid, wid, steps, cin, cout, k, dilation](Tape<T>& t, std::size_t self) {
        CMap<T> G(self_grad(t, self).data(), steps, cout);
        auto dx = t.grad_buffer(xid);
        auto dw = t.grad_buffer(wid);
        const auto& xval = t.node(xid).value;
        const auto& wval = t.node(wid).value;
        for (std::size_t tap = 0; tap < k; ++tap) {
          const std::size_t shift = (k - 1 - tap) * dilation;
          if (shift >= steps) continue;
          const auto rows = static_cast<Eigen::Index>(steps - shift);
          if (!dx.empty()) {
            Map<T>(dx.data(), steps, cin).topRows(rows).noalias() +=
                G.bottomRows(rows) * CMap<T>(wval.data() + tap * cin * cout, cin, cout).transpose();
          }
          if (!dw.empty()) {
            Map<T>(dw.data() + tap * cin * cout, cin, cout).noalias() +=
                CMap<T>(xval.data(), steps, cin).topRows(rows).transpose() * G.bottomRows(rows);
          }
        }
      });
}

template <typename T>
Tensor<T> masked_fill(const Tensor<T>& x, const std::vector<bool>& mask, T fill) {
  if (mask.size() != x.numel()) {
    throw StructuralError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for tensor " +
                          shape_str(x.shape()));
  }
  auto xv = x.value();
  std::vector<T> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = fill;
  const std::size_t xid = x.id();
  return x.tape().record(x.shape(), std::move(out), x.requires_grad(), [xid, mask](Tape<T>& t, std::size_t self) {
    auto g = self_grad(t, self);
    auto dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask[i]) dx[i] += g[i];
  });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (targets.size() != logits.numel()) {
    throw StructuralError("bce_with_logits: " + std::to_string(targets.size()) + " targets for logits " +
                          shape_str(logits.shape()));
  }
  auto xv = logits.value();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T x = xv[i];
    out[i] = std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const std::size_t xid = logits.id();
  std::vector<T> y(targets.begin(), targets.end());
  return logits.tape().record(logits.shape(), std::move(out), logits.requires_grad(),
                              [xid, y = std::move(y)](Tape<T>& t, std::size_t self) {
                                auto g = self_grad(t, self);
                                const auto& xval = t.node(xid).value;
                                auto dx = t.grad_buffer(xid);
                                for (std::size_t i = 0; i < dx.size(); ++i) {
                                  dx[i] += g[i] * (stable_sigmoid(xval[i]) - y[i]);
                                }
                              });
}

#define AFFECTSEQ_GRAD_INSTANTIATE(T)                                                                              \
  template class Tape<T>;                                                                                          \
  template class Tensor<T>;                                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                                   \
  template Tensor<T> transpose(const Tensor<T>&);                                                                  \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                             \
  template Tensor<T> broadcast_to(const Tensor<T>&, const Shape&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                   \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                              \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                                              \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                               \
  template Tensor<T> take(const Tensor<T>&, std::span<const std::size_t>);                                         \
  template Tensor<T> sum(const Tensor<T>&);                                                                        \
  template Tensor<T> sum(const Tensor<T>&, std::size_t, bool);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                                       \
  template Tensor<T> mean(const Tensor<T>&, std::size_t, bool);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                                       \
  template Tensor<T> gelu(const Tensor<T>&);                                                                       \
  template Tensor<T> tanh(const Tensor<T>&);                                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                                        \
  template Tensor<T> log(const Tensor<T>&);                                                                        \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                       \
  template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> layer_norm(const Tensor<T>&, std::size_t, T);                                                 \
  template Tensor<T> dropout(const Tensor<T>&, T, bool, std::mt19937_64&);                                         \
  template Tensor<T> dilated_causal_conv1d(const Tensor<T>&, const Tensor<T>&, std::size_t);                       \
  template Tensor<T> masked_fill(const Tensor<T>&, const std::vector<bool>&, T);                                   \
  template Tensor<T> bce_with_logits(const Tensor<T>&, std::span<const T>);

AFFECTSEQ_GRAD_INSTANTIATE(float)
AFFECTSEQ_GRAD_INSTANTIATE(double)

}  // namespace affectseq::grad

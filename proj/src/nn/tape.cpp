#include "ctdg/nn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctdg/kernels.hpp"

namespace ctdg::nn {

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace {

[[noreturn]] void dim_fail(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      dim_fail("broadcast", shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

template <typename T>
T gelu_cdf(T x) {
  return T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

}  // namespace

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw IndexError("invalid tape handle");
  return nodes_[v.id];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw IndexError("invalid tape handle");
  return nodes_[v.id];
}

template <typename T>
Var Tape<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
typename Tape<T>::Node Tape<T>::make(Op op, std::initializer_list<Var> in) {
  Node n;
  n.op = op;
  for (Var v : in) {
    node(v);
    n.in.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  return n;
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::input(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::param(ParamStore<T>& store, ParamId id) {
  Node n;
  n.value = store.value(id);
  n.needs_grad = true;
  n.store = &store;
  n.pid = id;
  return push(std::move(n));
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == n.value.size() && !n.grad.data.empty()) return n.grad;
  return Tensor<T>(n.value.shape, T(0));
}

template <typename T>
bool Tape<T>::depends_on(Var out, Var in) const {
  node(out);
  node(in);
  if (out.id == in.id) return true;
  if (in.id > out.id) return false;
  std::vector<std::uint8_t> seen(out.id + 1, 0);
  std::vector<std::uint32_t> stack{out.id};
  seen[out.id] = 1;
  while (!stack.empty()) {
    const std::uint32_t cur = stack.back();
    stack.pop_back();
    for (std::uint32_t p : nodes_[cur].in) {
      if (p == in.id) return true;
      if (p > in.id && !seen[p]) {
        seen[p] = 1;
        stack.push_back(p);
      }
    }
  }
  return false;
}

// ---- forward ops ---------------------------------------------------------

template <typename T>
Var Tape<T>::linear(Var x, Var w, Var b) {
  const auto& X = node(x).value;
  const auto& W = node(w).value;
  if (W.rank() != 2) dim_fail("linear", "weight must be rank 2, got " + shape_str(W.shape));
  if (X.rank() == 0 || X.inner() != W.dim(1)) {
    dim_fail("linear", "input " + shape_str(X.shape) + " vs weight " + shape_str(W.shape));
  }
  const std::size_t in = W.dim(1), out = W.dim(0);
  const std::size_t rows = numel(Shape(X.shape.begin(), X.shape.end() - 1));
  Node n = b.valid() ? make(Op::linear, {x, w, b}) : make(Op::linear, {x, w});
  if (b.valid()) {
    const auto& B = node(b).value;
    if (B.size() != out) dim_fail("linear", "bias " + shape_str(B.shape) + " vs out " + std::to_string(out));
  }
  Shape s = X.shape;
  s.back() = out;
  n.value = Tensor<T>(s);
  n.a0 = rows;
  if (in == 0) {
    std::fill(n.value.data.begin(), n.value.data.end(), T(0));
  } else {
    kernels::active<T>().gemm_nt(rows, out, in, X.data.data(), W.data.data(), n.value.data.data(), false);
  }
  if (b.valid()) {
    const auto& B = node(b).value;
    for (std::size_t r = 0; r < rows; ++r) {
      T* y = n.value.data.data() + r * out;
      for (std::size_t j = 0; j < out; ++j) y[j] += B[j];
    }
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::bmm(Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  if (A.rank() != B.rank() || (A.rank() != 2 && A.rank() != 3)) {
    dim_fail("bmm", shape_str(A.shape) + " x " + shape_str(B.shape));
  }
  const bool r3 = A.rank() == 3;
  const std::size_t batch = r3 ? A.dim(0) : 1;
  const std::size_t m = A.dim(A.rank() - 2), k = A.dim(A.rank() - 1);
  const std::size_t kb = B.dim(B.rank() - 2), nn = B.dim(B.rank() - 1);
  if (k != kb || (r3 && B.dim(0) != batch)) dim_fail("bmm", shape_str(A.shape) + " x " + shape_str(B.shape));
  Node n = make(Op::bmm, {a, b});
  n.value = Tensor<T>(r3 ? Shape{batch, m, nn} : Shape{m, nn});
  const auto& K = kernels::active<T>();
  for (std::size_t i = 0; i < batch; ++i) {
    K.gemm_nn(m, nn, k, A.data.data() + i * m * k, B.data.data() + i * k * nn,
              n.value.data.data() + i * m * nn, false);
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::transpose12(Var x) {
  const auto& X = node(x).value;
  if (X.rank() != 3) dim_fail("transpose12", "needs rank 3, got " + shape_str(X.shape));
  const std::size_t B = X.dim(0), r = X.dim(1), c = X.dim(2);
  Node n = make(Op::transpose12, {x});
  n.value = Tensor<T>(Shape{B, c, r});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) n.value[(b * c + j) * r + i] = X[(b * r + i) * c + j];
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::concat(std::span<const Var> xs) {
  if (xs.empty()) dim_fail("concat", "no operands");
  const Shape& s0 = node(xs[0]).value.shape;
  if (s0.empty()) dim_fail("concat", "scalar operand");
  Node n;
  n.op = Op::concat;
  std::size_t total = 0;
  for (Var v : xs) {
    const auto& s = node(v).value.shape;
    if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
      dim_fail("concat", shape_str(s) + " vs " + shape_str(s0));
    }
    total += s.back();
    n.in.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  Shape out = s0;
  out.back() = total;
  n.value = Tensor<T>(out);
  const std::size_t rows_all = numel(Shape(s0.begin(), s0.end() - 1));
  std::size_t off = 0;
  for (Var v : xs) {
    const auto& X = nodes_[v.id].value;
    const std::size_t w = X.inner();
    for (std::size_t r = 0; r < rows_all; ++r) {
      std::copy_n(X.data.data() + r * w, w, n.value.data.data() + r * total + off);
    }
    off += w;
  }
  n.a0 = rows_all;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::slice_last(Var x, std::size_t start, std::size_t len) {
  const auto& X = node(x).value;
  if (X.rank() == 0 || start + len > X.inner()) {
    dim_fail("slice_last", "[" + std::to_string(start) + ", +" + std::to_string(len) + ") of " + shape_str(X.shape));
  }
  Node n = make(Op::slice_last, {x});
  Shape s = X.shape;
  s.back() = len;
  n.value = Tensor<T>(s);
  const std::size_t rows = numel(Shape(X.shape.begin(), X.shape.end() - 1));
  const std::size_t w = X.inner();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(X.data.data() + r * w + start, len, n.value.data.data() + r * len);
  n.a0 = start;
  n.a1 = rows;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var x) {
  const auto& X = node(x).value;
  Node n = make(Op::sum, {x});
  T s = T(0);
  for (T v : X.data) s += v;
  n.value = Tensor<T>::scalar(s);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum_axis(Var x, std::size_t axis) {
  const auto& X = node(x).value;
  if (axis >= X.rank()) dim_fail("sum_axis", "axis " + std::to_string(axis) + " of " + shape_str(X.shape));
  const std::size_t pre = numel(Shape(X.shape.begin(), X.shape.begin() + axis));
  const std::size_t len = X.dim(axis);
  const std::size_t post = numel(Shape(X.shape.begin() + axis + 1, X.shape.end()));
  Node n = make(Op::sum_axis, {x});
  Shape s = X.shape;
  s.erase(s.begin() + axis);
  n.value = Tensor<T>(s);
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t q = 0; q < post; ++q) n.value[p * post + q] += X[(p * len + l) * post + q];
  n.a0 = axis;
  n.scalar = T(1);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::mean_axis(Var x, std::size_t axis) {
  Var s = sum_axis(x, axis);
  Node& n = nodes_[s.id];
  const std::size_t len = nodes_[x.id].value.dim(axis);
  if (len == 0) dim_fail("mean_axis", "empty axis");
  n.op = Op::mean_axis;
  n.scalar = T(1) / static_cast<T>(len);
  for (T& v : n.value.data) v *= n.scalar;
  return s;
}

template <typename T>
Var Tape<T>::softmax(Var x, std::span<const std::uint8_t> mask) {
  const auto& X = node(x).value;
  if (!mask.empty() && mask.size() != X.size()) dim_fail("softmax", "mask size mismatch");
  Node n = make(Op::softmax, {x});
  n.mask.assign(mask.begin(), mask.end());
  n.value = Tensor<T>(X.shape);
  const std::size_t m = X.inner(), rows = X.outer();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data.data() + r * m;
    T* yr = n.value.data.data() + r * m;
    auto ok = [&](std::size_t j) { return mask.empty() || mask[r * m + j] != 0; };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (ok(j)) mx = std::max(mx, xr[j]);
    if (!std::isfinite(mx)) continue;
    T z = T(0);
    for (std::size_t j = 0; j < m; ++j) {
      if (ok(j)) {
        yr[j] = std::exp(xr[j] - mx);
        z += yr[j];
      }
    }
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::log_softmax(Var x, std::span<const std::uint8_t> mask) {
  const auto& X = node(x).value;
  if (!mask.empty() && mask.size() != X.size()) dim_fail("log_softmax", "mask size mismatch");
  Node n = make(Op::log_softmax, {x});
  n.mask.assign(mask.begin(), mask.end());
  n.value = Tensor<T>(X.shape);
  const std::size_t m = X.inner(), rows = X.outer();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data.data() + r * m;
    T* yr = n.value.data.data() + r * m;
    auto ok = [&](std::size_t j) { return mask.empty() || mask[r * m + j] != 0; };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j)
      if (ok(j)) mx = std::max(mx, xr[j]);
    if (!std::isfinite(mx)) continue;
    T z = T(0);
    for (std::size_t j = 0; j < m; ++j)
      if (ok(j)) z += std::exp(xr[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j)
      if (ok(j)) yr[j] = xr[j] - lz;
  }
  return push(std::move(n));
}

#define CTDG_UNARY(NAME, OP, EXPR)              \
  template <typename T>                         \
  Var Tape<T>::NAME(Var x) {                    \
    const auto& X = node(x).value;              \
    Node n = make(Op::OP, {x});                 \
    n.value = Tensor<T>(X.shape);               \
    for (std::size_t i = 0; i < X.size(); ++i) { \
      const T v = X[i];                         \
      n.value[i] = (EXPR);                      \
    }                                           \
    return push(std::move(n));                  \
  }

CTDG_UNARY(gelu, gelu, v* gelu_cdf(v))
CTDG_UNARY(relu, relu, v > T(0) ? v : T(0))
CTDG_UNARY(cos, cos, std::cos(v))
CTDG_UNARY(exp, exp, std::exp(v))
CTDG_UNARY(reciprocal, reciprocal, T(1) / v)
CTDG_UNARY(softplus, softplus, std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))))
#undef CTDG_UNARY

template <typename T>
Var Tape<T>::leaky_relu(Var x, T slope) {
  const auto& X = node(x).value;
  Node n = make(Op::leaky_relu, {x});
  n.scalar = slope;
  n.value = Tensor<T>(X.shape);
  for (std::size_t i = 0; i < X.size(); ++i) n.value[i] = X[i] > T(0) ? X[i] : slope * X[i];
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::layer_norm(Var x, T eps) {
  const auto& X = node(x).value;
  if (X.rank() == 0 || X.inner() == 0) dim_fail("layer_norm", "empty last axis");
  Node n = make(Op::layer_norm, {x});
  n.value = Tensor<T>(X.shape);
  const std::size_t d = X.inner(), rows = X.outer();
  n.saved.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = X.data.data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    n.saved[r] = rstd;
    for (std::size_t j = 0; j < d; ++j) n.value[r * d + j] = (xr[j] - mean) * rstd;
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::scale(Var x, T s) {
  const auto& X = node(x).value;
  Node n = make(Op::scale, {x});
  n.scalar = s;
  n.value = Tensor<T>(X.shape);
  for (std::size_t i = 0; i < X.size(); ++i) n.value[i] = s * X[i];
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::binary(Op op, Var a, Var b) {
  const auto& A = node(a).value;
  const auto& B = node(b).value;
  const Shape out = broadcast_shape(A.shape, B.shape);
  const std::size_t total = numel(out);
  Node n = make(op, {a, b});
  auto plan = [&](const Shape& in, Bcast& bc) {
    const std::size_t r = out.size();
    Shape pad(r, 1);
    std::copy(in.begin(), in.end(), pad.begin() + (r - in.size()));
    if (numel(in) == total) {
      bc.kind = 0;
      return;
    }
    // in == [1,...,1, out[k:]] -> i % p
    for (std::size_t k = 0; k <= r; ++k) {
      bool lead1 = std::all_of(pad.begin(), pad.begin() + k, [](std::size_t v) { return v == 1; });
      bool tail = std::equal(pad.begin() + k, pad.end(), out.begin() + k);
      if (lead1 && tail) {
        bc.kind = 1;
        bc.p = std::max<std::size_t>(numel(Shape(out.begin() + k, out.end())), 1);
        return;
      }
    }
    // in == [out[:k], 1,...,1] -> i / p
    for (std::size_t k = 0; k <= r; ++k) {
      bool head = std::equal(pad.begin(), pad.begin() + k, out.begin());
      bool trail1 = std::all_of(pad.begin() + k, pad.end(), [](std::size_t v) { return v == 1; });
      if (head && trail1) {
        bc.kind = 2;
        bc.p = std::max<std::size_t>(numel(Shape(out.begin() + k, out.end())), 1);
        return;
      }
    }
    bc.kind = 3;
    bc.table.resize(total);
    std::vector<std::size_t> stride(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      stride[i] = pad[i] == 1 ? 0 : acc;
      acc *= pad[i];
    }
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t off = 0;
      for (std::size_t d = 0; d < r; ++d) off += idx[d] * stride[d];
      bc.table[i] = off;
      for (std::size_t d = r; d-- > 0;) {
        if (++idx[d] < out[d]) break;
        idx[d] = 0;
      }
    }
  };
  plan(A.shape, n.ba);
  plan(B.shape, n.bb);
  n.value = Tensor<T>(out);
  T* y = n.value.data.data();
  const T* pa = A.data.data();
  const T* pb = B.data.data();
  if (n.ba.kind == 0 && n.bb.kind == 0) {
    switch (op) {
      case Op::add: for (std::size_t i = 0; i < total; ++i) y[i] = pa[i] + pb[i]; break;
      case Op::sub: for (std::size_t i = 0; i < total; ++i) y[i] = pa[i] - pb[i]; break;
      default: for (std::size_t i = 0; i < total; ++i) y[i] = pa[i] * pb[i]; break;
    }
  } else {
    auto ca = n.ba.cursor(), cb = n.bb.cursor();
    for (std::size_t i = 0; i < total; ++i, ++ca, ++cb) {
      const T u = pa[*ca], v = pb[*cb];
      y[i] = op == Op::add ? u + v : op == Op::sub ? u - v : u * v;
    }
  }
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  return binary(Op::add, a, b);
}
template <typename T>
Var Tape<T>::sub(Var a, Var b) {
  return binary(Op::sub, a, b);
}
template <typename T>
Var Tape<T>::mul(Var a, Var b) {
  return binary(Op::mul, a, b);
}

template <typename T>
Var Tape<T>::detach(Var x) {
  Node n;
  n.op = Op::detach;
  n.in.push_back(x.id);
  n.value = node(x).value;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape s) {
  const auto& X = node(x).value;
  if (numel(s) != X.size()) dim_fail("reshape", shape_str(X.shape) + " -> " + shape_str(s));
  Node n = make(Op::reshape, {x});
  n.value = Tensor<T>(std::move(s), X.data);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::gather_last(Var x, std::vector<std::int64_t> idx, std::size_t k) {
  const auto& X = node(x).value;
  const std::size_t m = X.inner(), rows = X.outer();
  if (X.rank() == 0 || idx.size() != rows * k) dim_fail("gather_last", "index count mismatch");
  Node n = make(Op::gather_last, {x});
  Shape s = X.shape;
  s.back() = k;
  n.value = Tensor<T>(s);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::int64_t c = idx[r * k + j];
      if (c < 0 || static_cast<std::size_t>(c) >= m) throw IndexError("gather_last: index out of range");
      n.value[r * k + j] = X[r * m + static_cast<std::size_t>(c)];
    }
  }
  n.index = std::move(idx);
  n.a0 = k;
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::gather_rows(Var x, std::vector<std::int64_t> rows) {
  const auto& X = node(x).value;
  if (X.rank() != 2) dim_fail("gather_rows", "needs rank 2, got " + shape_str(X.shape));
  const std::size_t N = X.dim(0), d = X.dim(1);
  Node n = make(Op::gather_rows, {x});
  n.value = Tensor<T>(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int64_t r = rows[i];
    if (r < -1 || (r >= 0 && static_cast<std::size_t>(r) >= N)) throw IndexError("gather_rows: row out of range");
    if (r >= 0) std::copy_n(X.data.data() + static_cast<std::size_t>(r) * d, d, n.value.data.data() + i * d);
  }
  n.index = std::move(rows);
  return push(std::move(n));
}

template <typename T>
Var Tape<T>::repeat_middle(Var x, std::size_t times) {
  const auto& X = node(x).value;
  if (X.rank() != 2) dim_fail("repeat_middle", "needs rank 2, got " + shape_str(X.shape));
  const std::size_t B = X.dim(0), d = X.dim(1);
  Node n = make(Op::repeat_middle, {x});
  n.value = Tensor<T>(Shape{B, times, d});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(X.data.data() + b * d, d, n.value.data.data() + (b * times + t) * d);
  n.a0 = times;
  return push(std::move(n));
}

// ---- backward ------------------------------------------------------------

template <typename T>
void Tape<T>::backward(Var loss) {
  const Node& L = node(loss);
  if (L.value.size() != 1) throw ContractError("backward: loss must be a scalar, got " + shape_str(L.value.shape));
  for (auto& n : nodes_) n.grad = Tensor<T>();
  if (!L.needs_grad) return;
  nodes_[loss.id].grad = Tensor<T>(L.value.shape, T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.op == Op::leaf) {
      if (n.store != nullptr) {
        auto& g = n.store->grad(n.pid);
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
      }
      continue;
    }
    backward_node(i);
  }
}

template <typename T>
void Tape<T>::backward_node(std::size_t i) {
  // Gradient buffer of input slot s, allocated on first use; null when the
  // input does not need a gradient.
  auto gin = [&](std::size_t s) -> T* {
    Node& p = nodes_[nodes_[i].in[s]];
    if (!p.needs_grad) return nullptr;
    if (p.grad.data.empty() && p.value.size() > 0) p.grad = Tensor<T>(p.value.shape, T(0));
    return p.grad.data.data();
  };
  auto val = [&](std::size_t s) -> const Tensor<T>& { return nodes_[nodes_[i].in[s]].value; };
  Node& n = nodes_[i];
  const T* gy = n.grad.data.data();
  const std::size_t total = n.value.size();
  const auto& K = kernels::active<T>();

  switch (n.op) {
    case Op::leaf:
    case Op::detach:
      break;
    case Op::linear: {
      const auto& X = val(0);
      const auto& W = val(1);
      const std::size_t out = W.dim(0), in = W.dim(1), rows = n.a0;
      if (in > 0) {
        if (T* gx = gin(0)) K.gemm_nn(rows, in, out, gy, W.data.data(), gx, true);
        if (T* gw = gin(1)) K.gemm_tn(out, in, rows, gy, X.data.data(), gw, true);
      }
      if (n.in.size() > 2) {
        if (T* gb = gin(2)) {
          for (std::size_t r = 0; r < rows; ++r) K.axpy(T(1), gy + r * out, gb, out);
        }
      }
      break;
    }
    case Op::bmm: {
      const auto& A = val(0);
      const auto& B = val(1);
      const bool r3 = A.rank() == 3;
      const std::size_t batch = r3 ? A.dim(0) : 1;
      const std::size_t m = A.dim(A.rank() - 2), k = A.dim(A.rank() - 1), nn = B.dim(B.rank() - 1);
      T* ga = gin(0);
      T* gb = gin(1);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dc = gy + b * m * nn;
        if (ga) K.gemm_nt(m, k, nn, dc, B.data.data() + b * k * nn, ga + b * m * k, true);
        if (gb) K.gemm_tn(k, nn, m, A.data.data() + b * m * k, dc, gb + b * k * nn, true);
      }
      break;
    }
    case Op::transpose12: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      const std::size_t B = X.dim(0), r = X.dim(1), c = X.dim(2);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < r; ++a)
          for (std::size_t j = 0; j < c; ++j) gx[(b * r + a) * c + j] += gy[(b * c + j) * r + a];
      break;
    }
    case Op::concat: {
      const std::size_t width = n.value.inner(), rows = n.a0;
      std::size_t off = 0;
      for (std::size_t s = 0; s < n.in.size(); ++s) {
        const std::size_t w = val(s).inner();
        if (T* gx = gin(s)) {
          for (std::size_t r = 0; r < rows; ++r) K.axpy(T(1), gy + r * width + off, gx + r * w, w);
        }
        off += w;
      }
      break;
    }
    case Op::slice_last: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t w = val(0).inner(), len = n.value.inner(), start = n.a0;
      for (std::size_t r = 0; r < n.a1; ++r) K.axpy(T(1), gy + r * len, gx + r * w + start, len);
      break;
    }
    case Op::sum: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t m = val(0).size();
      for (std::size_t j = 0; j < m; ++j) gx[j] += gy[0];
      break;
    }
    case Op::sum_axis:
    case Op::mean_axis: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      const std::size_t axis = n.a0;
      const std::size_t pre = numel(Shape(X.shape.begin(), X.shape.begin() + axis));
      const std::size_t len = X.dim(axis);
      const std::size_t post = numel(Shape(X.shape.begin() + axis + 1, X.shape.end()));
      for (std::size_t p = 0; p < pre; ++p)
        for (std::size_t l = 0; l < len; ++l) K.axpy(n.scalar, gy + p * post, gx + (p * len + l) * post, post);
      break;
    }
    case Op::softmax: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t m = n.value.inner(), rows = n.value.outer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = n.value.data.data() + r * m;
        const T* g = gy + r * m;
        const T s = K.dot(y, g, m);
        for (std::size_t j = 0; j < m; ++j) gx[r * m + j] += y[j] * (g[j] - s);
      }
      break;
    }
    case Op::log_softmax: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t m = n.value.inner(), rows = n.value.outer();
      for (std::size_t r = 0; r < rows; ++r) {
        auto ok = [&](std::size_t j) { return n.mask.empty() || n.mask[r * m + j] != 0; };
        T s = T(0);
        bool any = false;
        for (std::size_t j = 0; j < m; ++j)
          if (ok(j)) {
            s += gy[r * m + j];
            any = true;
          }
        if (!any) continue;
        for (std::size_t j = 0; j < m; ++j)
          if (ok(j)) gx[r * m + j] += gy[r * m + j] - std::exp(n.value[r * m + j]) * s;
      }
      break;
    }
    case Op::gelu: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      const T inv = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
      for (std::size_t j = 0; j < total; ++j) {
        const T v = X[j];
        gx[j] += gy[j] * (gelu_cdf(v) + v * inv * std::exp(T(-0.5) * v * v));
      }
      break;
    }
    case Op::leaky_relu: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      for (std::size_t j = 0; j < total; ++j) gx[j] += X[j] > T(0) ? gy[j] : n.scalar * gy[j];
      break;
    }
    case Op::relu: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      for (std::size_t j = 0; j < total; ++j)
        if (X[j] > T(0)) gx[j] += gy[j];
      break;
    }
    case Op::cos: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      for (std::size_t j = 0; j < total; ++j) gx[j] -= gy[j] * std::sin(X[j]);
      break;
    }
    case Op::exp: {
      T* gx = gin(0);
      if (!gx) break;
      for (std::size_t j = 0; j < total; ++j) gx[j] += gy[j] * n.value[j];
      break;
    }
    case Op::reciprocal: {
      T* gx = gin(0);
      if (!gx) break;
      for (std::size_t j = 0; j < total; ++j) gx[j] -= gy[j] * n.value[j] * n.value[j];
      break;
    }
    case Op::softplus: {
      T* gx = gin(0);
      if (!gx) break;
      const auto& X = val(0);
      for (std::size_t j = 0; j < total; ++j) {
        const T v = X[j];
        const T sig = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
        gx[j] += gy[j] * sig;
      }
      break;
    }
    case Op::layer_norm: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t d = n.value.inner(), rows = n.value.outer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = n.value.data.data() + r * d;
        const T* g = gy + r * d;
        T mg = T(0);
        for (std::size_t j = 0; j < d; ++j) mg += g[j];
        mg /= static_cast<T>(d);
        const T mgy = K.dot(g, y, d) / static_cast<T>(d);
        const T rstd = n.saved[r];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd * (g[j] - mg - y[j] * mgy);
      }
      break;
    }
    case Op::scale: {
      if (T* gx = gin(0)) K.axpy(n.scalar, gy, gx, total);
      break;
    }
    case Op::add:
    case Op::sub:
    case Op::mul: {
      const auto& A = val(0);
      const auto& B = val(1);
      T* ga = gin(0);
      T* gb = gin(1);
      const T sb = n.op == Op::sub ? T(-1) : T(1);
      if (n.op != Op::mul) {
        if (ga) {
          if (n.ba.kind == 0) K.axpy(T(1), gy, ga, total);
          else for (auto c = n.ba.cursor(); c.i < total; ++c) ga[*c] += gy[c.i];
        }
        if (gb) {
          if (n.bb.kind == 0) K.axpy(sb, gy, gb, total);
          else for (auto c = n.bb.cursor(); c.i < total; ++c) gb[*c] += sb * gy[c.i];
        }
      } else {
        auto ca = n.ba.cursor(), cb = n.bb.cursor();
        for (std::size_t j = 0; j < total; ++j, ++ca, ++cb) {
          const std::size_t ia = *ca, ib = *cb;
          if (ga) ga[ia] += gy[j] * B[ib];
          if (gb) gb[ib] += gy[j] * A[ia];
        }
      }
      break;
    }
    case Op::reshape: {
      if (T* gx = gin(0)) K.axpy(T(1), gy, gx, total);
      break;
    }
    case Op::gather_last: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t m = val(0).inner(), k = n.a0, rows = n.value.outer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < k; ++j) gx[r * m + static_cast<std::size_t>(n.index[r * k + j])] += gy[r * k + j];
      break;
    }
    case Op::gather_rows: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t d = n.value.inner();
      for (std::size_t r = 0; r < n.index.size(); ++r) {
        if (n.index[r] >= 0) K.axpy(T(1), gy + r * d, gx + static_cast<std::size_t>(n.index[r]) * d, d);
      }
      break;
    }
    case Op::repeat_middle: {
      T* gx = gin(0);
      if (!gx) break;
      const std::size_t B = n.value.dim(0), times = n.a0, d = n.value.dim(2);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < times; ++t) K.axpy(T(1), gy + (b * times + t) * d, gx + b * d, d);
      break;
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace ctdg::nn

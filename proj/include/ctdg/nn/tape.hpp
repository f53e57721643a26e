#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ctdg/nn/params.hpp"
#include "ctdg/nn/tensor.hpp"

namespace ctdg::nn {

// Handle to a value recorded on a Tape.
struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

// Reverse-mode tape over a fixed op vocabulary. Ops act on the last axis
// unless stated; elementwise binary ops broadcast numpy-style. Masks are
// per-element byte arrays with the operand's size (nonzero = valid).
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaves.
  Var constant(Tensor<T> value);
  Var input(Tensor<T> value);  // receives a gradient readable via grad()
  Var param(ParamStore<T>& store, ParamId id);
  Var param(ParamStore<T>& store, std::string_view name) { return param(store, store.find(name)); }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }
  // Gradient of the last backward() w.r.t. v; zeros if none reached it.
  Tensor<T> grad(Var v) const;

  // Accumulates d(loss)/d(param) into each reachable ParamStore entry.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }
  // True if `out` was computed (transitively) from `in`.
  bool depends_on(Var out, Var in) const;

  // y = x W^T + b over the last axis. W is [out, in]; b may be invalid.
  Var linear(Var x, Var w, Var b = {});
  // [B,m,k] x [B,k,n] -> [B,m,n]; rank-2 operands are one batch.
  Var bmm(Var a, Var b);
  // Swap the last two axes of a rank-3 tensor.
  Var transpose12(Var x);
  Var concat(std::span<const Var> xs);
  Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }
  Var slice_last(Var x, std::size_t start, std::size_t len);
  Var sum(Var x);
  Var sum_axis(Var x, std::size_t axis);
  Var mean_axis(Var x, std::size_t axis);
  // Masked entries get probability 0; rows with no valid entry are all 0.
  Var softmax(Var x, std::span<const std::uint8_t> mask = {});
  // Masked entries are reported as 0 (not -inf) and receive no gradient.
  Var log_softmax(Var x, std::span<const std::uint8_t> mask = {});
  Var gelu(Var x);
  Var leaky_relu(Var x, T slope = T(0.2));
  Var relu(Var x);
  Var cos(Var x);
  Var exp(Var x);
  Var reciprocal(Var x);
  Var softplus(Var x);
  Var layer_norm(Var x, T eps = T(1e-5));
  Var scale(Var x, T s);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var detach(Var x);
  Var reshape(Var x, Shape s);
  // x [..., m], idx [..., n] (flattened row-major) -> out [..., n].
  Var gather_last(Var x, std::vector<std::int64_t> idx, std::size_t n);
  // x [N, d] -> out [rows.size(), d]; row -1 yields zeros.
  Var gather_rows(Var x, std::vector<std::int64_t> rows);
  // x [B, d] -> [B, times, d].
  Var repeat_middle(Var x, std::size_t times);

 private:
  enum class Op : std::uint8_t {
    leaf,
    linear,
    bmm,
    transpose12,
    concat,
    slice_last,
    sum,
    sum_axis,
    mean_axis,
    softmax,
    log_softmax,
    gelu,
    leaky_relu,
    relu,
    cos,
    exp,
    reciprocal,
    softplus,
    layer_norm,
    scale,
    add,
    sub,
    mul,
    detach,
    reshape,
    gather_last,
    gather_rows,
    repeat_middle,
  };

  // How an operand of a broadcasting op maps output positions to its own:
  // same index, i % p, i / p, or an explicit table.
  struct Bcast {
    std::uint8_t kind = 0;
    std::size_t p = 1;
    std::vector<std::size_t> table;
    std::size_t at(std::size_t i) const {
      switch (kind) {
        case 0: return i;
        case 1: return i % p;
        case 2: return i / p;
        default: return table[i];
      }
    }
    // Yields at(0), at(1), ... without a division per element.
    struct Cursor {
      const Bcast* b;
      std::size_t i = 0, r = 0, q = 0;
      std::size_t operator*() const {
        switch (b->kind) {
          case 0: return i;
          case 1: return r;
          case 2: return q;
          default: return b->table[i];
        }
      }
      void operator++() {
        ++i;
        if (++r == b->p) {
          r = 0;
          ++q;
        }
      }
    };
    Cursor cursor() const { return Cursor{this}; }
  };

  struct Node {
    Op op = Op::leaf;
    std::vector<std::uint32_t> in;
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    ParamStore<T>* store = nullptr;
    ParamId pid = 0;
    T scalar = T(0);
    std::size_t a0 = 0;
    std::size_t a1 = 0;
    std::vector<std::int64_t> index;
    std::vector<std::uint8_t> mask;
    std::vector<T> saved;
    Bcast ba;
    Bcast bb;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  Var push(Node n);
  Node make(Op op, std::initializer_list<Var> in);
  Var binary(Op op, Var a, Var b);
  void backward_node(std::size_t i);

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ctdg::nn

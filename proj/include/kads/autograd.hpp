#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kads/params.hpp"
#include "kads/tensor.hpp"

namespace kads::ag {

class Graph;

// Handle to a node on a Graph's tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }
};

// Tape-based reverse-mode autodiff. Nodes are appended in creation order,
// which is a topological order, so backward is a single reverse sweep.
// A graph built with record = false stores no backward closures; it is the
// inference path.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Leaf whose gradient is wanted (e.g. an externally computed activation).
  Var leaf(Tensor value);
  // Parameter leaf, created once per (store, name). Frozen parameters enter
  // as constants and receive no gradient.
  Var param(const ParamStore& store, const std::string& name, bool trainable = true);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient accumulated so far; nullptr if the node received none.
  const Tensor* grad(Var v) const;

  // Seeds d(root)/d(root) = 1 (root must be a single element) and sweeps.
  void backward(Var root);
  void backward(Var root, const Tensor& seed);

  // Gradients of every trainable parameter of `store` used in this graph.
  GradMap param_grads(const ParamStore& store) const;

  std::size_t size() const { return nodes_.size(); }

  // --- op-author interface ---------------------------------------------------
  Var make(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);
  bool any_requires_grad(std::initializer_list<Var> vs) const;
  Tensor& grad_buffer(std::size_t id);  // zero-initialised on first use
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::string>, std::size_t> param_nodes_;
};

// --- primitives ---------------------------------------------------------------
// All operate on rank-2 values; shape mismatches throw ShapeError naming both
// operands.

Var matmul(Var a, Var b, bool transpose_b = false);
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a [1, n] row over every row of a
Var mul(Var a, Var b);        // elementwise
Var scale(Var a, double c);
Var embedding(Var table, std::span<const int> ids);
Var softmax(Var a);      // row-wise
Var log_softmax(Var a);  // row-wise
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var gelu(Var a);  // tanh approximation
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);  // NumericError on non-positive entries
Var scale_rows(Var a, Var col);  // row r of a times col[r, 0]
Var pick(Var a, std::span<const int> cols);  // [T, n] -> [T, 1], entry (r, cols[r])
// Multi-head scaled dot-product attention over already-projected q [Tq, d],
// k and v [Tk, d]. key_mask (length Tk, nonzero = keep) masks padding keys;
// causal masks key j > query i.
Var attention(Var q, Var k, Var v, std::size_t n_heads, bool causal, std::span<const std::uint8_t> key_mask = {});
// Sum over rows of -log softmax(logits)[row, target[row]].
Var cross_entropy(Var logits, std::span<const int> targets);
// Mean over rows (optionally only rows with nonzero mask) -> [1, n].
Var mean_rows(Var a, std::span<const std::uint8_t> row_mask = {});
Var sum(Var a);
Var logsumexp(Var a);  // over all elements -> scalar
Var gather(Var row, std::span<const std::size_t> index);  // [1, n] -> [1, k]
Var element(Var a, std::size_t flat_index);              // -> scalar
Var stack(std::span<const Var> scalars);                  // -> [1, k]
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);

inline Var neg(Var a) { return scale(a, -1.0); }

}  // namespace kads::ag

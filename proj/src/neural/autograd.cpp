#include "kads/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "kads/error.hpp"

namespace kads::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

CMapMat cm(const Tensor& t) { return CMapMat(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }
MapMat mm(Tensor& t) { return MapMat(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw InternalError("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw InternalError("operands belong to different graphs");
  return graph_of(a);
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": lhs " + a.shape_str() + " incompatible with rhs " + b.shape_str());
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.shape().size() != 2) throw ShapeError(std::string(op) + ": expected rank-2 operand, got " + t.shape_str());
}

Tensor mat_tensor(const RowMat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  mm(t) = m;
  return t;
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::make(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (std::size_t p : parents)
      if (nodes_[p].requires_grad) {
        n.requires_grad = true;
        break;
      }
  }
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

bool Graph::any_requires_grad(std::initializer_list<Var> vs) const {
  for (Var v : vs)
    if (nodes_[v.id].requires_grad) return true;
  return false;
}

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(const ParamStore& store, const std::string& name, bool trainable) {
  auto key = std::make_pair(&store, name);
  if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
  Var v = trainable ? leaf(store.value(name)) : constant(store.value(name));
  param_nodes_.emplace(std::move(key), v.id);
  return v;
}

const Tensor* Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.has_grad ? &n.grad : nullptr;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor::zeros_like(n.value);
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::backward(Var root) {
  if (value(root).size() != 1) throw ShapeError("backward(): root must be a single element, got " + value(root).shape_str());
  backward(root, Tensor(value(root).shape(), 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  if (seed.shape() != value(root).shape()) shape_fail("backward seed", seed, value(root));
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root.id).add_inplace(seed);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, i);
  }
}

GradMap Graph::param_grads(const ParamStore& store) const {
  GradMap out;
  for (const auto& [key, id] : param_nodes_) {
    if (key.first != &store || !nodes_[id].requires_grad) continue;
    const Node& n = nodes_[id];
    out.emplace(key.second, n.has_grad ? n.grad : Tensor::zeros_like(n.value));
  }
  return out;
}

// --- primitives ---------------------------------------------------------------

Var matmul(Var a, Var b, bool transpose_b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2("matmul", A);
  require_rank2("matmul", B);
  const std::size_t inner_b = transpose_b ? B.cols() : B.rows();
  if (A.cols() != inner_b) shape_fail(transpose_b ? "matmul(transpose_b)" : "matmul", A, B);
  Tensor C({A.rows(), transpose_b ? B.rows() : B.cols()});
  if (transpose_b)
    mm(C).noalias() = cm(A) * cm(B).transpose();
  else
    mm(C).noalias() = cm(A) * cm(B);
  return g.make(std::move(C), {a.id, b.id}, [ia = a.id, ib = b.id, transpose_b](Graph& gr, std::size_t self) {
    const Tensor& dC = gr.out_grad(self);
    const Tensor& A = gr.node_value(ia);
    const Tensor& B = gr.node_value(ib);
    if (gr.node_requires_grad(ia)) {
      if (transpose_b)
        mm(gr.grad_buffer(ia)).noalias() += cm(dC) * cm(B);
      else
        mm(gr.grad_buffer(ia)).noalias() += cm(dC) * cm(B).transpose();
    }
    if (gr.node_requires_grad(ib)) {
      if (transpose_b)
        mm(gr.grad_buffer(ib)).noalias() += cm(dC).transpose() * cm(A);
      else
        mm(gr.grad_buffer(ib)).noalias() += cm(A).transpose() * cm(dC);
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.value().shape() != b.value().shape()) shape_fail("add", a.value(), b.value());
  Tensor out = a.value();
  out.add_inplace(b.value());
  return g.make(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    if (gr.node_requires_grad(ia)) gr.grad_buffer(ia).add_inplace(d);
    if (gr.node_requires_grad(ib)) gr.grad_buffer(ib).add_inplace(d);
  });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  require_rank2("add_row", A);
  if (R.shape().size() != 2 || R.rows() != 1 || R.cols() != A.cols()) shape_fail("add_row", A, R);
  Tensor out = A;
  mm(out).rowwise() += cm(R).row(0);
  return g.make(std::move(out), {a.id, row.id}, [ia = a.id, ir = row.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    if (gr.node_requires_grad(ia)) gr.grad_buffer(ia).add_inplace(d);
    if (gr.node_requires_grad(ir)) mm(gr.grad_buffer(ir)).row(0) += cm(d).colwise().sum();
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.value().shape() != b.value().shape()) shape_fail("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.make(std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    if (gr.node_requires_grad(ia)) {
      Tensor& ga = gr.grad_buffer(ia);
      const Tensor& B = gr.node_value(ib);
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += d[i] * B[i];
    }
    if (gr.node_requires_grad(ib)) {
      Tensor& gb = gr.grad_buffer(ib);
      const Tensor& A = gr.node_value(ia);
      for (std::size_t i = 0; i < d.size(); ++i) gb[i] += d[i] * A[i];
    }
  });
}

Var scale(Var a, double c) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x *= c;
  return g.make(std::move(out), {a.id}, [ia = a.id, c](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) ga[i] += c * d[i];
  });
}

Var embedding(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& T = table.value();
  require_rank2("embedding", T);
  const std::size_t dim = T.cols();
  Tensor out({ids.size(), dim});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= T.rows())
      throw BoundsError("embedding: id " + std::to_string(ids[r]) + " outside table of " + std::to_string(T.rows()) +
                        " rows");
    std::copy_n(T.ptr() + static_cast<std::size_t>(ids[r]) * dim, dim, out.ptr() + r * dim);
  }
  return g.make(std::move(out), {table.id},
                [it = table.id, idv = std::vector<int>(ids.begin(), ids.end()), dim](Graph& gr, std::size_t self) {
                  const Tensor& d = gr.out_grad(self);
                  Tensor& gt = gr.grad_buffer(it);
                  for (std::size_t r = 0; r < idv.size(); ++r) {
                    double* dst = gt.ptr() + static_cast<std::size_t>(idv[r]) * dim;
                    const double* src = d.ptr() + r * dim;
                    for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
                  }
                });
}

Var softmax(Var a) {
  Graph& g = graph_of(a);
  const Tensor& X = a.value();
  require_rank2("softmax", X);
  Tensor Y = X;
  auto y = mm(Y);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    y.row(r) = (y.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return g.make(std::move(Y), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const auto d = cm(gr.out_grad(self));
    const auto y = cm(gr.node_value(self));
    const Eigen::VectorXd dot = (d.array() * y.array()).rowwise().sum();
    mm(gr.grad_buffer(ia)).array() += y.array() * (d.array().colwise() - dot.array());
  });
}

Var log_softmax(Var a) {
  Graph& g = graph_of(a);
  const Tensor& X = a.value();
  require_rank2("log_softmax", X);
  Tensor Y = X;
  auto y = mm(Y);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).maxCoeff();
    const double lse = m + std::log((y.row(r).array() - m).exp().sum());
    y.row(r).array() -= lse;
  }
  return g.make(std::move(Y), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const auto d = cm(gr.out_grad(self));
    const auto y = cm(gr.node_value(self));
    const Eigen::VectorXd total = d.rowwise().sum();
    mm(gr.grad_buffer(ia)).array() += d.array() - y.array().exp().colwise() * total.array();
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = graph_of(x, gain);
  graph_of(x, bias);
  const Tensor& X = x.value();
  require_rank2("layer_norm", X);
  const std::size_t n = X.cols();
  for (const Tensor* p : {&gain.value(), &bias.value()})
    if (p->shape().size() != 2 || p->rows() != 1 || p->cols() != n) shape_fail("layer_norm", X, *p);

  auto xhat = std::make_shared<RowMat>(cm(X));
  auto rstd = std::make_shared<Eigen::VectorXd>(X.rows());
  for (Eigen::Index r = 0; r < xhat->rows(); ++r) {
    const double mu = xhat->row(r).mean();
    xhat->row(r).array() -= mu;
    const double var = xhat->row(r).squaredNorm() / static_cast<double>(n);
    (*rstd)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) *= (*rstd)(r);
  }
  RowMat y = xhat->array().rowwise() * cm(gain.value()).row(0).array();
  y.rowwise() += cm(bias.value()).row(0);
  return g.make(mat_tensor(y), {x.id, gain.id, bias.id},
                [ix = x.id, ig = gain.id, ib = bias.id, xhat, rstd, n](Graph& gr, std::size_t self) {
                  const auto dy = cm(gr.out_grad(self));
                  if (gr.node_requires_grad(ig))
                    mm(gr.grad_buffer(ig)).row(0) += (dy.array() * xhat->array()).colwise().sum().matrix();
                  if (gr.node_requires_grad(ib)) mm(gr.grad_buffer(ib)).row(0) += dy.colwise().sum();
                  if (gr.node_requires_grad(ix)) {
                    const RowMat dxhat = dy.array().rowwise() * cm(gr.node_value(ig)).row(0).array();
                    const Eigen::VectorXd mean_d = dxhat.rowwise().sum() / static_cast<double>(n);
                    const Eigen::VectorXd mean_dx =
                        (dxhat.array() * xhat->array()).rowwise().sum() / static_cast<double>(n);
                    RowMat dx = (dxhat.array().colwise() - mean_d.array()) -
                                xhat->array().colwise() * mean_dx.array();
                    dx.array().colwise() *= rstd->array();
                    mm(gr.grad_buffer(ix)) += dx;
                  }
                });
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double kA = 0.044715;
  Tensor out = a.value();
  for (double& x : out.data()) x = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  return g.make(std::move(out), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    const Tensor& X = gr.node_value(ia);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double x = X[i];
      const double t = std::tanh(kC * (x + kA * x * x * x));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      gx[i] += d[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
    }
  });
}

Var tanh(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = std::tanh(x);
  return g.make(std::move(out), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    const Tensor& y = gr.node_value(self);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) x = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  return g.make(std::move(out), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    const Tensor& y = gr.node_value(self);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] * y[i] * (1.0 - y[i]);
  });
}

Var log(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& x : out.data()) {
    if (!(x > 0.0)) throw NumericError("log of non-positive value " + std::to_string(x));
    x = std::log(x);
  }
  return g.make(std::move(out), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    const Tensor& x = gr.node_value(ia);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i] / x[i];
  });
}

Var scale_rows(Var a, Var col) {
  Graph& g = graph_of(a, col);
  const Tensor& A = a.value();
  const Tensor& C = col.value();
  require_rank2("scale_rows", A);
  if (C.shape().size() != 2 || C.cols() != 1 || C.rows() != A.rows()) shape_fail("scale_rows", A, C);
  Tensor out = A;
  mm(out).array().colwise() *= cm(C).col(0).array();
  return g.make(std::move(out), {a.id, col.id}, [ia = a.id, ic = col.id](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    if (gr.node_requires_grad(ia))
      mm(gr.grad_buffer(ia)).array() += cm(d).array().colwise() * cm(gr.node_value(ic)).col(0).array();
    if (gr.node_requires_grad(ic))
      mm(gr.grad_buffer(ic)).col(0) += (cm(d).array() * cm(gr.node_value(ia)).array()).rowwise().sum().matrix();
  });
}

Var pick(Var a, std::span<const int> cols) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_rank2("pick", A);
  if (cols.size() != A.rows())
    throw ShapeError("pick: " + std::to_string(cols.size()) + " column indices for " + std::to_string(A.rows()) +
                     " rows");
  Tensor out({A.rows(), 1});
  for (std::size_t r = 0; r < A.rows(); ++r) {
    if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= A.cols()) throw BoundsError("pick: column out of range");
    out[r] = A.at(r, static_cast<std::size_t>(cols[r]));
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return g.make(std::move(out), {a.id}, [ia = a.id, idx = std::move(idx)](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga.at(r, static_cast<std::size_t>(idx[r])) += d[r];
  });
}

Var attention(Var q, Var k, Var v, std::size_t n_heads, bool causal, std::span<const std::uint8_t> key_mask) {
  Graph& g = graph_of(q, k);
  graph_of(q, v);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_rank2("attention", Q);
  require_rank2("attention", K);
  require_rank2("attention", V);
  if (Q.cols() != K.cols()) shape_fail("attention(q, k)", Q, K);
  if (K.shape() != V.shape()) shape_fail("attention(k, v)", K, V);
  if (n_heads == 0 || Q.cols() % n_heads != 0)
    throw ShapeError("attention: width " + std::to_string(Q.cols()) + " not divisible by " + std::to_string(n_heads) +
                     " heads");
  if (!key_mask.empty() && key_mask.size() != K.rows())
    throw ShapeError("attention: key mask of length " + std::to_string(key_mask.size()) + " for " +
                     std::to_string(K.rows()) + " keys");

  const auto tq = static_cast<Eigen::Index>(Q.rows());
  const auto tk = static_cast<Eigen::Index>(K.rows());
  const auto dh = static_cast<Eigen::Index>(Q.cols() / n_heads);
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<RowMat>>(n_heads);
  Tensor out({Q.rows(), Q.cols()});
  auto o = mm(out);
  const auto qm = cm(Q);
  const auto km = cm(K);
  const auto vm = cm(V);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const auto c0 = static_cast<Eigen::Index>(h) * dh;
    RowMat s = (qm.middleCols(c0, dh) * km.middleCols(c0, dh).transpose()) * scale_factor;
    for (Eigen::Index i = 0; i < tq; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < tk; ++j) {
        const bool blocked = (causal && j > i) || (!key_mask.empty() && key_mask[static_cast<std::size_t>(j)] == 0);
        if (blocked)
          s(i, j) = -std::numeric_limits<double>::infinity();
        else
          m = std::max(m, s(i, j));
      }
      if (!std::isfinite(m)) throw InputError("attention: query " + std::to_string(i) + " has no visible keys");
      double total = 0.0;
      for (Eigen::Index j = 0; j < tk; ++j) {
        const double e = std::isfinite(s(i, j)) ? std::exp(s(i, j) - m) : 0.0;
        s(i, j) = e;
        total += e;
      }
      s.row(i) /= total;
    }
    o.middleCols(c0, dh).noalias() = s * vm.middleCols(c0, dh);
    (*probs)[h] = std::move(s);
  }

  return g.make(std::move(out), {q.id, k.id, v.id},
                [iq = q.id, ik = k.id, iv = v.id, probs, dh, scale_factor](Graph& gr, std::size_t self) {
                  const auto dout = cm(gr.out_grad(self));
                  const auto qm = cm(gr.node_value(iq));
                  const auto km = cm(gr.node_value(ik));
                  const auto vm = cm(gr.node_value(iv));
                  const bool need_q = gr.node_requires_grad(iq);
                  const bool need_k = gr.node_requires_grad(ik);
                  const bool need_v = gr.node_requires_grad(iv);
                  for (std::size_t h = 0; h < probs->size(); ++h) {
                    const RowMat& p = (*probs)[h];
                    const auto c0 = static_cast<Eigen::Index>(h) * dh;
                    const auto dO = dout.middleCols(c0, dh);
                    if (need_v) mm(gr.grad_buffer(iv)).middleCols(c0, dh).noalias() += p.transpose() * dO;
                    if (!need_q && !need_k) continue;
                    const RowMat dp = dO * vm.middleCols(c0, dh).transpose();
                    const Eigen::VectorXd dot = (dp.array() * p.array()).rowwise().sum();
                    const RowMat ds = (p.array() * (dp.array().colwise() - dot.array())).matrix() * scale_factor;
                    if (need_q) mm(gr.grad_buffer(iq)).middleCols(c0, dh).noalias() += ds * km.middleCols(c0, dh);
                    if (need_k)
                      mm(gr.grad_buffer(ik)).middleCols(c0, dh).noalias() += ds.transpose() * qm.middleCols(c0, dh);
                  }
                });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Tensor& L = logits.value();
  require_rank2("cross_entropy", L);
  if (targets.size() != L.rows())
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + L.shape_str());
  auto probs = std::make_shared<RowMat>(cm(L));
  double loss = 0.0;
  for (Eigen::Index r = 0; r < probs->rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || static_cast<std::size_t>(t) >= L.cols())
      throw BoundsError("cross_entropy: target " + std::to_string(t) + " outside " + std::to_string(L.cols()) + " classes");
    const double m = probs->row(r).maxCoeff();
    probs->row(r) = (probs->row(r).array() - m).exp();
    const double z = probs->row(r).sum();
    loss -= (L.at(static_cast<std::size_t>(r), static_cast<std::size_t>(t)) - m - std::log(z));
    probs->row(r) /= z;
  }
  return g.make(Tensor::scalar(loss), {logits.id},
                [il = logits.id, probs, tv = std::vector<int>(targets.begin(), targets.end())](Graph& gr,
                                                                                            std::size_t self) {
                  const double d = gr.out_grad(self).item();
                  auto gl = mm(gr.grad_buffer(il));
                  gl += d * *probs;
                  for (std::size_t r = 0; r < tv.size(); ++r) gl(static_cast<Eigen::Index>(r), tv[r]) -= d;
                });
}

Var mean_rows(Var a, std::span<const std::uint8_t> row_mask) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_rank2("mean_rows", A);
  if (!row_mask.empty() && row_mask.size() != A.rows())
    throw ShapeError("mean_rows: mask of length " + std::to_string(row_mask.size()) + " for " + A.shape_str());
  std::vector<std::uint8_t> mask(row_mask.begin(), row_mask.end());
  if (mask.empty()) mask.assign(A.rows(), 1);
  const auto count = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (count == 0.0) throw InputError("mean_rows: no rows to pool");
  Tensor out({1, A.cols()});
  for (std::size_t r = 0; r < A.rows(); ++r)
    if (mask[r])
      for (std::size_t c = 0; c < A.cols(); ++c) out[c] += A.at(r, c);
  for (double& x : out.data()) x /= count;
  return g.make(std::move(out), {a.id}, [ia = a.id, mask = std::move(mask), count](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    const std::size_t cols = d.size();
    for (std::size_t r = 0; r < mask.size(); ++r)
      if (mask[r])
        for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += d[c] / count;
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return g.make(Tensor::scalar(s), {a.id}, [ia = a.id](Graph& gr, std::size_t self) {
    const double d = gr.out_grad(self).item();
    for (double& x : gr.grad_buffer(ia).data()) x += d;
  });
}

Var logsumexp(Var a) {
  Graph& g = graph_of(a);
  const auto data = a.value().data();
  if (data.empty()) throw ShapeError("logsumexp of an empty tensor");
  const double m = *std::max_element(data.begin(), data.end());
  double total = 0.0;
  for (double x : data) total += std::exp(x - m);
  const double lse = m + std::log(total);
  return g.make(Tensor::scalar(lse), {a.id}, [ia = a.id, lse](Graph& gr, std::size_t self) {
    const double d = gr.out_grad(self).item();
    const Tensor& X = gr.node_value(ia);
    Tensor& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < X.size(); ++i) gx[i] += d * std::exp(X[i] - lse);
  });
}

Var gather(Var row, std::span<const std::size_t> index) {
  Graph& g = graph_of(row);
  const Tensor& R = row.value();
  if (R.shape().size() != 2 || R.rows() != 1) throw ShapeError("gather: expected a [1, n] row, got " + R.shape_str());
  Tensor out({1, index.size()});
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] >= R.cols()) throw BoundsError("gather: index " + std::to_string(index[j]) + " out of range");
    out[j] = R[index[j]];
  }
  return g.make(std::move(out), {row.id},
                [ir = row.id, idx = std::vector<std::size_t>(index.begin(), index.end())](Graph& gr, std::size_t self) {
                  const Tensor& d = gr.out_grad(self);
                  Tensor& gx = gr.grad_buffer(ir);
                  for (std::size_t j = 0; j < idx.size(); ++j) gx[idx[j]] += d[j];
                });
}

Var element(Var a, std::size_t flat_index) {
  Graph& g = graph_of(a);
  if (flat_index >= a.value().size()) throw BoundsError("element: index out of range");
  return g.make(Tensor::scalar(a.value()[flat_index]), {a.id}, [ia = a.id, flat_index](Graph& gr, std::size_t self) {
    gr.grad_buffer(ia)[flat_index] += gr.out_grad(self).item();
  });
}

Var stack(std::span<const Var> scalars) {
  if (scalars.empty()) throw ShapeError("stack of zero scalars");
  Graph& g = graph_of(scalars.front());
  Tensor out({1, scalars.size()});
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    graph_of(scalars.front(), scalars[i]);
    out[i] = scalars[i].value().item();
    ids.push_back(scalars[i].id);
  }
  return g.make(std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (gr.node_requires_grad(ids[i])) gr.grad_buffer(ids[i])[0] += d[i];
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of zero parts");
  Graph& g = graph_of(parts.front());
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    graph_of(parts.front(), p);
    if (p.value().cols() != cols) shape_fail("concat_rows", parts.front().value(), p.value());
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out({rows, cols});
  std::size_t offset = 0;
  for (Var p : parts) {
    std::copy_n(p.value().ptr(), p.value().size(), out.ptr() + offset);
    offset += p.value().size();
  }
  return g.make(std::move(out), ids, [ids](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = gr.node_value(id).size();
      if (gr.node_requires_grad(id)) {
        Tensor& gp = gr.grad_buffer(id);
        for (std::size_t i = 0; i < n; ++i) gp[i] += d[off + i];
      }
      off += n;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  require_rank2("slice_rows", A);
  if (begin > end || end > A.rows())
    throw BoundsError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + A.shape_str());
  const std::size_t cols = A.cols();
  Tensor out({end - begin, cols});
  std::copy_n(A.ptr() + begin * cols, out.size(), out.ptr());
  return g.make(std::move(out), {a.id}, [ia = a.id, begin, cols](Graph& gr, std::size_t self) {
    const Tensor& d = gr.out_grad(self);
    Tensor& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) ga[begin * cols + i] += d[i];
  });
}

}  // namespace kads::ag

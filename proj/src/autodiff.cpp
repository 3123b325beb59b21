#include "motret/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "motret/common.hpp"

namespace motret::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

void Node::accumulate(const Tensor& g) {
  if (!has_grad) {
    grad = Tensor::zeros(value.shape());
    has_grad = true;
  }
  grad.add_inplace(g);
}

Tensor& Node::grad_ref() {
  if (!has_grad) {
    grad = Tensor::zeros(value.shape());
    has_grad = true;
  }
  return grad;
}

namespace {

long next_id() {
  static long counter = 0;
  return ++counter;
}

using NodePtr = std::shared_ptr<Node>;

Var make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backfn) {
  bool req = false;
  for (const auto& p : parents)
    if (p->requires_grad) req = true;
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = req;
  n->id = next_id();
  if (req) {
    n->parents = std::move(parents);
    n->backfn = std::move(backfn);
  }
  return Var(std::move(n));
}

void acc(const NodePtr& p, const Tensor& g) {
  if (p->requires_grad) p->accumulate(g);
}

int last_dim(const Tensor& t) { return t.dim(t.ndim() - 1); }

long lead_count(const Tensor& t) { return t.numel() / last_dim(t); }

}  // namespace

Var Var::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = false;
  n->id = next_id();
  return Var(std::move(n));
}

Var Var::leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->id = next_id();
  return Var(std::move(n));
}

void Var::zero_grad() {
  node_->has_grad = false;
  node_->grad = Tensor();
}

void backward(const Var& loss) {
  check_numeric(loss.valid() && loss.value().numel() == 1, "backward: loss must be scalar");
  if (!loss.node()->requires_grad) return;

  // Reachable grad-requiring subgraph, then reverse creation order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->id > b->id; });

  loss.node()->grad_ref()[0] += 1.0;
  for (Node* n : order) {
    if (n->backfn && n->has_grad) n->backfn(*n);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  check_data(a.value().same_shape(b.value()), "add: shape mismatch");
  Tensor y = a.value();
  y.add_inplace(b.value());
  auto pa = a.node(), pb = b.node();
  return make(std::move(y), {pa, pb}, [pa, pb](Node& n) {
    acc(pa, n.grad);
    acc(pb, n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_data(a.value().same_shape(b.value()), "sub: shape mismatch");
  Tensor y = a.value();
  for (long i = 0; i < y.numel(); ++i) y[i] -= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make(std::move(y), {pa, pb}, [pa, pb](Node& n) {
    acc(pa, n.grad);
    if (pb->requires_grad) {
      Tensor g = n.grad;
      for (long i = 0; i < g.numel(); ++i) g[i] = -g[i];
      pb->accumulate(g);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_data(a.value().same_shape(b.value()), "mul: shape mismatch");
  Tensor y = a.value();
  for (long i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  auto pa = a.node(), pb = b.node();
  return make(std::move(y), {pa, pb}, [pa, pb](Node& n) {
    if (pa->requires_grad) {
      Tensor g = n.grad;
      for (long i = 0; i < g.numel(); ++i) g[i] *= pb->value[i];
      pa->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g = n.grad;
      for (long i = 0; i < g.numel(); ++i) g[i] *= pa->value[i];
      pb->accumulate(g);
    }
  });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var scale(const Var& x, double c) {
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] *= c;
  auto px = x.node();
  return make(std::move(y), {px}, [px, c](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) g[i] *= c;
    px->accumulate(g);
  });
}

Var add_scalar(const Var& x, double c) {
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] += c;
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) { acc(px, n.grad); });
}

Var vexp(const Var& x) {
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] = std::exp(y[i]);
  auto px = x.node();
  Tensor ycopy = y;
  return make(std::move(y), {px}, [px, ycopy](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) g[i] *= ycopy[i];
    px->accumulate(g);
  });
}

Var vlog(const Var& x) {
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) {
    check_numeric(y[i] > 0.0, "log: non-positive input");
    y[i] = std::log(y[i]);
  }
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) g[i] /= px->value[i];
    px->accumulate(g);
  });
}

Var vabs(const Var& x) {
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] = std::fabs(y[i]);
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      g[i] *= (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    px->accumulate(g);
  });
}

Var pow_scalar(const Var& x, double p) {
  const bool fractional = p != std::nearbyint(p) || p < 0.0;
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) {
    if (fractional) check_numeric(y[i] > 0.0, "pow: non-positive base with fractional/negative exponent");
    y[i] = std::pow(y[i], p);
  }
  auto px = x.node();
  return make(std::move(y), {px}, [px, p](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) g[i] *= p * std::pow(px->value[i], p - 1.0);
    px->accumulate(g);
  });
}

Var gelu(const Var& x) {
  static constexpr double kInvSqrt2 = 0.7071067811865475244;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) {
    const double v = y[i];
    y[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) {
      const double v = px->value[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] *= cdf + v * pdf;
    }
    px->accumulate(g);
  });
}

Var mul_scalar_var(const Var& x, const Var& s) {
  check_data(s.value().numel() == 1, "mul_scalar_var: scale must be scalar");
  const double sv = s.value()[0];
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] *= sv;
  auto px = x.node(), ps = s.node();
  return make(std::move(y), {px, ps}, [px, ps, sv](Node& n) {
    if (px->requires_grad) {
      Tensor g = n.grad;
      for (long i = 0; i < g.numel(); ++i) g[i] *= sv;
      px->accumulate(g);
    }
    if (ps->requires_grad) {
      double d = 0.0;
      for (long i = 0; i < n.grad.numel(); ++i) d += n.grad[i] * px->value[i];
      ps->accumulate(Tensor::scalar(d));
    }
  });
}

// ---------------------------------------------------------------- shape ops

Var reshape(const Var& x, std::vector<int> shape) {
  check_data(Tensor::numel_of(shape) == x.value().numel(), "reshape: element count mismatch");
  Tensor y(shape, x.value().vec());
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    px->accumulate(Tensor(px->value.shape(), n.grad.vec()));
  });
}

namespace {
Tensor transpose2_tensor(const Tensor& x) {
  if (x.ndim() == 2) {
    Tensor y({x.dim(1), x.dim(0)});
    for (int i = 0; i < x.dim(0); ++i)
      for (int j = 0; j < x.dim(1); ++j) y.at(j, i) = x.at(i, j);
    return y;
  }
  Tensor y({x.dim(0), x.dim(2), x.dim(1)});
  for (int b = 0; b < x.dim(0); ++b)
    for (int i = 0; i < x.dim(1); ++i)
      for (int j = 0; j < x.dim(2); ++j) y.at(b, j, i) = x.at(b, i, j);
  return y;
}
}  // namespace

Var transpose2(const Var& x) {
  check_data(x.value().ndim() == 2 || x.value().ndim() == 3, "transpose2: rank must be 2 or 3");
  auto px = x.node();
  return make(transpose2_tensor(x.value()), {px},
              [px](Node& n) { acc(px, transpose2_tensor(n.grad)); });
}

Var permute01(const Var& x) {
  check_data(x.value().ndim() == 3, "permute01: rank must be 3");
  const int A = x.value().dim(0), B = x.value().dim(1), D = x.value().dim(2);
  Tensor y({B, A, D});
  for (int a = 0; a < A; ++a)
    for (int b = 0; b < B; ++b)
      for (int d = 0; d < D; ++d) y.at(b, a, d) = x.value().at(a, b, d);
  auto px = x.node();
  return make(std::move(y), {px}, [px, A, B, D](Node& n) {
    if (!px->requires_grad) return;
    Tensor g({A, B, D});
    for (int b = 0; b < B; ++b)
      for (int a = 0; a < A; ++a)
        for (int d = 0; d < D; ++d) g.at(a, b, d) = n.grad.at(b, a, d);
    px->accumulate(g);
  });
}

Var slice_dim1(const Var& x, int start, int len) {
  check_data(x.value().ndim() == 3, "slice_dim1: rank must be 3");
  const int B = x.value().dim(0), L = x.value().dim(1), D = x.value().dim(2);
  check_data(start >= 0 && len >= 0 && start + len <= L, "slice_dim1: out of range");
  Tensor y({B, len, D});
  for (int b = 0; b < B; ++b)
    for (int l = 0; l < len; ++l)
      for (int d = 0; d < D; ++d) y.at(b, l, d) = x.value().at(b, start + l, d);
  auto px = x.node();
  return make(std::move(y), {px}, [px, B, L, D, start, len](Node& n) {
    if (!px->requires_grad) return;
    Tensor& g = px->grad_ref();
    for (int b = 0; b < B; ++b)
      for (int l = 0; l < len; ++l)
        for (int d = 0; d < D; ++d) g.at(b, start + l, d) += n.grad.at(b, l, d);
  });
}

Var concat_dim1(const std::vector<Var>& xs) {
  check_data(!xs.empty(), "concat_dim1: empty input");
  const int B = xs[0].value().dim(0), D = xs[0].value().dim(2);
  int total = 0;
  for (const auto& v : xs) {
    check_data(v.value().ndim() == 3 && v.value().dim(0) == B && v.value().dim(2) == D,
               "concat_dim1: shape mismatch");
    total += v.value().dim(1);
  }
  Tensor y({B, total, D});
  std::vector<NodePtr> parents;
  std::vector<int> offsets;
  int off = 0;
  for (const auto& v : xs) {
    const int L = v.value().dim(1);
    offsets.push_back(off);
    parents.push_back(v.node());
    for (int b = 0; b < B; ++b)
      for (int l = 0; l < L; ++l)
        for (int d = 0; d < D; ++d) y.at(b, off + l, d) = v.value().at(b, l, d);
    off += L;
  }
  auto ps = parents;
  return make(std::move(y), std::move(parents), [ps, offsets, B, D](Node& n) {
    for (size_t k = 0; k < ps.size(); ++k) {
      if (!ps[k]->requires_grad) continue;
      const int L = ps[k]->value.dim(1);
      Tensor g({B, L, D});
      for (int b = 0; b < B; ++b)
        for (int l = 0; l < L; ++l)
          for (int d = 0; d < D; ++d) g.at(b, l, d) = n.grad.at(b, offsets[k] + l, d);
      ps[k]->accumulate(g);
    }
  });
}

Var broadcast0(const Var& x, int nrep) {
  check_data(x.value().ndim() == 2 && nrep > 0, "broadcast0: need rank-2 input");
  const int R = x.value().dim(0), C = x.value().dim(1);
  Tensor y({nrep, R, C});
  for (int b = 0; b < nrep; ++b)
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) y.at(b, r, c) = x.value().at(r, c);
  auto px = x.node();
  return make(std::move(y), {px}, [px, nrep, R, C](Node& n) {
    if (!px->requires_grad) return;
    Tensor g({R, C});
    for (int b = 0; b < nrep; ++b)
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) g.at(r, c) += n.grad.at(b, r, c);
    px->accumulate(g);
  });
}

Var stack_rows(const std::vector<Var>& rows) {
  check_data(!rows.empty(), "stack_rows: empty input");
  const int D = static_cast<int>(rows[0].value().numel());
  Tensor y({static_cast<int>(rows.size()), D});
  std::vector<NodePtr> parents;
  for (size_t i = 0; i < rows.size(); ++i) {
    check_data(rows[i].value().numel() == D, "stack_rows: inconsistent row sizes");
    parents.push_back(rows[i].node());
    for (int d = 0; d < D; ++d) y.at(static_cast<int>(i), d) = rows[i].value()[d];
  }
  auto ps = parents;
  return make(std::move(y), std::move(parents), [ps, D](Node& n) {
    for (size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i]->requires_grad) continue;
      Tensor g(ps[i]->value.shape());
      for (int d = 0; d < D; ++d) g[d] = n.grad.at(static_cast<int>(i), d);
      ps[i]->accumulate(g);
    }
  });
}

Var gather_rows(const Var& table, const std::vector<int>& ids) {
  check_data(table.value().ndim() == 2, "gather_rows: table must be rank 2");
  const int V = table.value().dim(0), D = table.value().dim(1);
  Tensor y({static_cast<int>(ids.size()), D});
  for (size_t i = 0; i < ids.size(); ++i) {
    check_data(ids[i] >= 0 && ids[i] < V, "gather_rows: id out of range");
    for (int d = 0; d < D; ++d) y.at(static_cast<int>(i), d) = table.value().at(ids[i], d);
  }
  auto pt = table.node();
  return make(std::move(y), {pt}, [pt, ids, D](Node& n) {
    if (!pt->requires_grad) return;
    Tensor& g = pt->grad_ref();
    for (size_t i = 0; i < ids.size(); ++i)
      for (int d = 0; d < D; ++d) g.at(ids[i], d) += n.grad.at(static_cast<int>(i), d);
  });
}

Var index_dim1(const Var& x, const std::vector<int>& idx) {
  check_data(x.value().ndim() == 3, "index_dim1: rank must be 3");
  const int T = x.value().dim(0), J = x.value().dim(1), D = x.value().dim(2);
  Tensor y({T, static_cast<int>(idx.size()), D});
  for (int t = 0; t < T; ++t)
    for (size_t p = 0; p < idx.size(); ++p) {
      check_data(idx[p] >= 0 && idx[p] < J, "index_dim1: index out of range");
      for (int d = 0; d < D; ++d) y.at(t, static_cast<int>(p), d) = x.value().at(t, idx[p], d);
    }
  auto px = x.node();
  return make(std::move(y), {px}, [px, idx, T, D](Node& n) {
    if (!px->requires_grad) return;
    Tensor& g = px->grad_ref();
    for (int t = 0; t < T; ++t)
      for (size_t p = 0; p < idx.size(); ++p)
        for (int d = 0; d < D; ++d) g.at(t, idx[p], d) += n.grad.at(t, static_cast<int>(p), d);
  });
}

Var heads_split(const Var& x, int heads) {
  check_data(x.value().ndim() == 3, "heads_split: rank must be 3");
  const int B = x.value().dim(0), L = x.value().dim(1), D = x.value().dim(2);
  check_data(heads > 0 && D % heads == 0, "heads_split: width not divisible by head count");
  const int Dh = D / heads;
  Tensor y({B * heads, L, Dh});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < L; ++l)
        for (int d = 0; d < Dh; ++d) y.at(b * heads + h, l, d) = x.value().at(b, l, h * Dh + d);
  auto px = x.node();
  return make(std::move(y), {px}, [px, B, L, heads, Dh](Node& n) {
    if (!px->requires_grad) return;
    Tensor g({B, L, heads * Dh});
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
          for (int d = 0; d < Dh; ++d) g.at(b, l, h * Dh + d) = n.grad.at(b * heads + h, l, d);
    px->accumulate(g);
  });
}

Var heads_merge(const Var& x, int heads) {
  check_data(x.value().ndim() == 3, "heads_merge: rank must be 3");
  const int BH = x.value().dim(0), L = x.value().dim(1), Dh = x.value().dim(2);
  check_data(heads > 0 && BH % heads == 0, "heads_merge: batch not divisible by head count");
  const int B = BH / heads;
  Tensor y({B, L, heads * Dh});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h)
      for (int l = 0; l < L; ++l)
        for (int d = 0; d < Dh; ++d) y.at(b, l, h * Dh + d) = x.value().at(b * heads + h, l, d);
  auto px = x.node();
  return make(std::move(y), {px}, [px, B, L, heads, Dh](Node& n) {
    if (!px->requires_grad) return;
    Tensor g({B * heads, L, Dh});
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < heads; ++h)
        for (int l = 0; l < L; ++l)
          for (int d = 0; d < Dh; ++d) g.at(b * heads + h, l, d) = n.grad.at(b, l, h * Dh + d);
    px->accumulate(g);
  });
}

Var diag(const Var& x) {
  check_data(x.value().ndim() == 2 && x.value().dim(0) == x.value().dim(1),
             "diag: input must be square");
  const int N = x.value().dim(0);
  Tensor y({N});
  for (int i = 0; i < N; ++i) y.at(i) = x.value().at(i, i);
  auto px = x.node();
  return make(std::move(y), {px}, [px, N](Node& n) {
    if (!px->requires_grad) return;
    Tensor& g = px->grad_ref();
    for (int i = 0; i < N; ++i) g.at(i, i) += n.grad.at(i);
  });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& x) {
  double s = 0.0;
  for (long i = 0; i < x.value().numel(); ++i) s += x.value()[i];
  auto px = x.node();
  return make(Tensor::scalar(s), {px}, [px](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = Tensor::full(px->value.shape(), n.grad[0]);
    px->accumulate(g);
  });
}

Var mean_all(const Var& x) {
  check_data(x.value().numel() > 0, "mean_all: empty input");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.value().numel()));
}

Var row_sum(const Var& x) {
  check_data(x.value().ndim() == 2, "row_sum: rank must be 2");
  const int M = x.value().dim(0), N = x.value().dim(1);
  Tensor y({M});
  for (int i = 0; i < M; ++i) {
    double s = 0.0;
    for (int j = 0; j < N; ++j) s += x.value().at(i, j);
    y.at(i) = s;
  }
  auto px = x.node();
  return make(std::move(y), {px}, [px, M, N](Node& n) {
    if (!px->requires_grad) return;
    Tensor g({M, N});
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) g.at(i, j) = n.grad.at(i);
    px->accumulate(g);
  });
}

Var add_rowvec(const Var& x, const Var& r) {
  const int D = last_dim(x.value());
  check_data(r.value().ndim() == 1 && r.value().dim(0) == D, "add_rowvec: width mismatch");
  const long rows = lead_count(x.value());
  Tensor y = x.value();
  for (long i = 0; i < rows; ++i)
    for (int d = 0; d < D; ++d) y[i * D + d] += r.value()[d];
  auto px = x.node(), pr = r.node();
  return make(std::move(y), {px, pr}, [px, pr, rows, D](Node& n) {
    acc(px, n.grad);
    if (pr->requires_grad) {
      Tensor g({D});
      for (long i = 0; i < rows; ++i)
        for (int d = 0; d < D; ++d) g[d] += n.grad[i * D + d];
      pr->accumulate(g);
    }
  });
}

Var mul_colvec(const Var& x, const Var& c) {
  check_data(x.value().ndim() == 2, "mul_colvec: rank must be 2");
  const int M = x.value().dim(0), N = x.value().dim(1);
  check_data(c.value().ndim() == 1 && c.value().dim(0) == M, "mul_colvec: height mismatch");
  Tensor y = x.value();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) y.at(i, j) *= c.value().at(i);
  auto px = x.node(), pc = c.node();
  return make(std::move(y), {px, pc}, [px, pc, M, N](Node& n) {
    if (px->requires_grad) {
      Tensor g = n.grad;
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) g.at(i, j) *= pc->value.at(i);
      px->accumulate(g);
    }
    if (pc->requires_grad) {
      Tensor g({M});
      for (int i = 0; i < M; ++i) {
        double s = 0.0;
        for (int j = 0; j < N; ++j) s += n.grad.at(i, j) * px->value.at(i, j);
        g.at(i) = s;
      }
      pc->accumulate(g);
    }
  });
}

Var masked_mean0(const Var& x, const std::vector<uint8_t>& keep) {
  const int n0 = x.value().dim(0);
  check_data(static_cast<int>(keep.size()) == n0, "masked_mean0: mask length mismatch");
  long kept = 0;
  for (uint8_t k : keep) kept += (k != 0);
  check_data(kept > 0, "masked_mean0: empty mask");
  const long slice = x.value().numel() / n0;
  std::vector<int> out_shape(x.value().shape().begin() + 1, x.value().shape().end());
  if (out_shape.empty()) out_shape = {1};
  Tensor y(out_shape);
  for (int i = 0; i < n0; ++i) {
    if (!keep[static_cast<size_t>(i)]) continue;
    for (long j = 0; j < slice; ++j) y[j] += x.value()[i * slice + j];
  }
  const double inv = 1.0 / static_cast<double>(kept);
  for (long j = 0; j < slice; ++j) y[j] *= inv;
  auto px = x.node();
  return make(std::move(y), {px}, [px, keep, n0, slice, inv](Node& n) {
    if (!px->requires_grad) return;
    Tensor& g = px->grad_ref();
    for (int i = 0; i < n0; ++i) {
      if (!keep[static_cast<size_t>(i)]) continue;
      for (long j = 0; j < slice; ++j) g[i * slice + j] += n.grad[j] * inv;
    }
  });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_data(bv.ndim() == 2, "matmul: rhs must be rank 2");
  check_data(av.ndim() == 2 || av.ndim() == 3, "matmul: lhs must be rank 2 or 3");
  const int K = bv.dim(0), N = bv.dim(1);
  check_data(last_dim(av) == K, "matmul: inner dimension mismatch");
  const long M = av.numel() / K;

  std::vector<int> out_shape(av.shape());
  out_shape.back() = N;
  Tensor y(out_shape);
  {
    CMap A(av.data(), M, K), B(bv.data(), K, N);
    MMap Y(y.data(), M, N);
    Y.noalias() = A * B;
  }
  auto pa = a.node(), pb = b.node();
  return make(std::move(y), {pa, pb}, [pa, pb, M, K, N](Node& n) {
    CMap G(n.grad.data(), M, N);
    if (pa->requires_grad) {
      Tensor ga(pa->value.shape());
      CMap B(pb->value.data(), K, N);
      MMap GA(ga.data(), M, K);
      GA.noalias() = G * B.transpose();
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb({K, N});
      CMap A(pa->value.data(), M, K);
      MMap GB(gb.data(), K, N);
      GB.noalias() = A.transpose() * G;
      pb->accumulate(gb);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_data(av.ndim() == 3 && bv.ndim() == 3 && av.dim(0) == bv.dim(0) && av.dim(2) == bv.dim(1),
             "bmm: shape mismatch");
  const int Bt = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
  Tensor y({Bt, M, N});
  for (int i = 0; i < Bt; ++i) {
    CMap A(av.data() + static_cast<long>(i) * M * K, M, K);
    CMap B(bv.data() + static_cast<long>(i) * K * N, K, N);
    MMap Y(y.data() + static_cast<long>(i) * M * N, M, N);
    Y.noalias() = A * B;
  }
  auto pa = a.node(), pb = b.node();
  return make(std::move(y), {pa, pb}, [pa, pb, Bt, M, K, N](Node& n) {
    if (pa->requires_grad) {
      Tensor ga({Bt, M, K});
      for (int i = 0; i < Bt; ++i) {
        CMap G(n.grad.data() + static_cast<long>(i) * M * N, M, N);
        CMap B(pb->value.data() + static_cast<long>(i) * K * N, K, N);
        MMap GA(ga.data() + static_cast<long>(i) * M * K, M, K);
        GA.noalias() = G * B.transpose();
      }
      pa->accumulate(ga);
    }
    if (pb->requires_grad) {
      Tensor gb({Bt, K, N});
      for (int i = 0; i < Bt; ++i) {
        CMap G(n.grad.data() + static_cast<long>(i) * M * N, M, N);
        CMap A(pa->value.data() + static_cast<long>(i) * M * K, M, K);
        MMap GB(gb.data() + static_cast<long>(i) * K * N, K, N);
        GB.noalias() = A.transpose() * G;
      }
      pb->accumulate(gb);
    }
  });
}

// ---------------------------------------------------------------- softmax / norm

Var softmax_lastdim(const Var& x) {
  const int D = last_dim(x.value());
  const long rows = lead_count(x.value());
  Tensor y = x.value();
  for (long i = 0; i < rows; ++i) {
    double* row = y.data() + i * D;
    double mx = row[0];
    for (int d = 1; d < D; ++d) mx = std::max(mx, row[d]);
    double s = 0.0;
    for (int d = 0; d < D; ++d) {
      row[d] = std::exp(row[d] - mx);
      s += row[d];
    }
    const double inv = 1.0 / s;
    for (int d = 0; d < D; ++d) row[d] *= inv;
  }
  auto px = x.node();
  Tensor ycopy = y;
  return make(std::move(y), {px}, [px, ycopy, rows, D](Node& n) {
    if (!px->requires_grad) return;
    Tensor g(px->value.shape());
    for (long i = 0; i < rows; ++i) {
      const double* yr = ycopy.data() + i * D;
      const double* gr = n.grad.data() + i * D;
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += yr[d] * gr[d];
      double* out = g.data() + i * D;
      for (int d = 0; d < D; ++d) out[d] = yr[d] * (gr[d] - dot);
    }
    px->accumulate(g);
  });
}

Var log_softmax_lastdim(const Var& x) {
  const int D = last_dim(x.value());
  const long rows = lead_count(x.value());
  Tensor y = x.value();
  for (long i = 0; i < rows; ++i) {
    double* row = y.data() + i * D;
    double mx = row[0];
    for (int d = 1; d < D; ++d) mx = std::max(mx, row[d]);
    double s = 0.0;
    for (int d = 0; d < D; ++d) s += std::exp(row[d] - mx);
    const double lse = mx + std::log(s);
    for (int d = 0; d < D; ++d) row[d] -= lse;
  }
  auto px = x.node();
  Tensor ycopy = y;
  return make(std::move(y), {px}, [px, ycopy, rows, D](Node& n) {
    if (!px->requires_grad) return;
    Tensor g(px->value.shape());
    for (long i = 0; i < rows; ++i) {
      const double* yr = ycopy.data() + i * D;
      const double* gr = n.grad.data() + i * D;
      double gs = 0.0;
      for (int d = 0; d < D; ++d) gs += gr[d];
      double* out = g.data() + i * D;
      for (int d = 0; d < D; ++d) out[d] = gr[d] - std::exp(yr[d]) * gs;
    }
    px->accumulate(g);
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const int D = last_dim(x.value());
  check_data(gain.value().ndim() == 1 && gain.value().dim(0) == D && bias.value().ndim() == 1 &&
                 bias.value().dim(0) == D,
             "layer_norm: gain/bias width mismatch");
  const long rows = lead_count(x.value());
  Tensor y(x.value().shape());
  Tensor xhat(x.value().shape());
  Tensor inv({static_cast<int>(rows)});
  for (long i = 0; i < rows; ++i) {
    const double* row = x.value().data() + i * D;
    double mu = 0.0;
    for (int d = 0; d < D; ++d) mu += row[d];
    mu /= D;
    double var = 0.0;
    for (int d = 0; d < D; ++d) {
      const double c = row[d] - mu;
      var += c * c;
    }
    var /= D;
    const double iv = 1.0 / std::sqrt(var + eps);
    inv[i] = iv;
    for (int d = 0; d < D; ++d) {
      const double xh = (row[d] - mu) * iv;
      xhat[i * D + d] = xh;
      y[i * D + d] = xh * gain.value()[d] + bias.value()[d];
    }
  }
  auto px = x.node(), pg = gain.node(), pb = bias.node();
  return make(std::move(y), {px, pg, pb}, [px, pg, pb, xhat, inv, rows, D](Node& n) {
    if (px->requires_grad) {
      Tensor g(px->value.shape());
      for (long i = 0; i < rows; ++i) {
        const double* gr = n.grad.data() + i * D;
        const double* xh = xhat.data() + i * D;
        double s1 = 0.0, s2 = 0.0;
        for (int d = 0; d < D; ++d) {
          const double dxh = gr[d] * pg->value[d];
          s1 += dxh;
          s2 += dxh * xh[d];
        }
        double* out = g.data() + i * D;
        for (int d = 0; d < D; ++d) {
          const double dxh = gr[d] * pg->value[d];
          out[d] = inv[i] * (dxh - s1 / D - xh[d] * s2 / D);
        }
      }
      px->accumulate(g);
    }
    if (pg->requires_grad) {
      Tensor g({D});
      for (long i = 0; i < rows; ++i)
        for (int d = 0; d < D; ++d) g[d] += n.grad[i * D + d] * xhat[i * D + d];
      pg->accumulate(g);
    }
    if (pb->requires_grad) {
      Tensor g({D});
      for (long i = 0; i < rows; ++i)
        for (int d = 0; d < D; ++d) g[d] += n.grad[i * D + d];
      pb->accumulate(g);
    }
  });
}

Var add_key_mask(const Var& x, const std::vector<uint8_t>& keep) {
  check_data(x.value().ndim() == 3, "add_key_mask: rank must be 3");
  const int B = x.value().dim(0), Lq = x.value().dim(1), Lk = x.value().dim(2);
  check_data(static_cast<int>(keep.size()) == Lk, "add_key_mask: mask length mismatch");
  static constexpr double kNegInf = -1e30;
  Tensor y = x.value();
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < Lq; ++i)
      for (int j = 0; j < Lk; ++j)
        if (!keep[static_cast<size_t>(j)]) y.at(b, i, j) += kNegInf;
  auto px = x.node();
  return make(std::move(y), {px}, [px](Node& n) { acc(px, n.grad); });
}

namespace {
Var mul_mask_axis(const Var& x, const std::vector<uint8_t>& keep, int axis) {
  const Tensor& xv = x.value();
  check_data(axis == 0 || (axis == 1 && xv.ndim() == 3), "mul_mask: unsupported axis/rank");
  const int n = xv.dim(axis);
  check_data(static_cast<int>(keep.size()) == n, "mul_mask: mask length mismatch");
  const long outer = (axis == 0) ? 1 : xv.dim(0);
  const long inner = xv.numel() / (outer * n);
  auto apply = [keep, outer, n, inner](Tensor& t, const Tensor& src) {
    for (long o = 0; o < outer; ++o)
      for (int i = 0; i < n; ++i) {
        const double m = keep[static_cast<size_t>(i)] ? 1.0 : 0.0;
        double* dst = t.data() + (o * n + i) * inner;
        const double* s = src.data() + (o * n + i) * inner;
        for (long j = 0; j < inner; ++j) dst[j] = s[j] * m;
      }
  };
  Tensor y(xv.shape());
  apply(y, xv);
  auto px = x.node();
  return make(std::move(y), {px}, [px, apply](Node& n) {
    if (!px->requires_grad) return;
    Tensor g(n.grad.shape());
    apply(g, n.grad);
    px->accumulate(g);
  });
}
}  // namespace

Var mul_mask_dim0(const Var& x, const std::vector<uint8_t>& keep) { return mul_mask_axis(x, keep, 0); }
Var mul_mask_dim1(const Var& x, const std::vector<uint8_t>& keep) { return mul_mask_axis(x, keep, 1); }

Var dropout(const Var& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  check_data(rate < 1.0, "dropout: rate must be < 1");
  const double keep = 1.0 - rate;
  const double up = 1.0 / keep;
  Tensor mask(x.value().shape());
  for (long i = 0; i < mask.numel(); ++i) mask[i] = rng.bernoulli(keep) ? up : 0.0;
  Tensor y = x.value();
  for (long i = 0; i < y.numel(); ++i) y[i] *= mask[i];
  auto px = x.node();
  return make(std::move(y), {px}, [px, mask](Node& n) {
    if (!px->requires_grad) return;
    Tensor g = n.grad;
    for (long i = 0; i < g.numel(); ++i) g[i] *= mask[i];
    px->accumulate(g);
  });
}

}  // namespace motret::ad

#include "tdv3/graph.hpp"

#include <algorithm>
#include <cmath>

namespace tdv3 {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

void check_matrix(const Tensor& t, const char* op) {
  if (t.ndim() < 1) throw std::invalid_argument(std::string(op) + ": empty tensor");
}

}  // namespace

Var Graph::make(Tensor value, std::array<int, 3> parents, std::function<void(Graph&, int)> bw) {
  Node n;
  n.value = std::move(value);
  n.parents = parents;
  n.backward = std::move(bw);
  for (int p : parents)
    if (p >= 0 && nodes_[static_cast<std::size_t>(p)].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(const Tensor& t, bool trainable) {
  Node n;
  n.external = &t;
  n.needs_grad = trainable;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.grad_live) throw std::logic_error("grad not computed for this node");
  return n.grad;
}

Tensor& Graph::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor(node_value(id).shape);
    n.grad_live = true;
  }
  return n.grad;
}

void Graph::accum(int id, const Tensor& g) {
  Tensor& slot = grad_slot(id);
  check_same_shape(slot, g, "grad accum");
  for (std::size_t i = 0; i < slot.size(); ++i) slot.data[i] += g.data[i];
}

void Graph::backward(Var root) {
  if (!root.valid() || root.g != this) throw std::invalid_argument("backward: foreign variable");
  if (node_value(root.id).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  grad_slot(root.id).data[0] = 1.0;
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.grad_live || !n.backward || !n.needs_grad) continue;
    n.backward(*this, i);
  }
}

// ---------------- elementwise ----------------

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  int ai = a.id, bi = b.id;
  return make(std::move(out), {ai, bi, -1}, [ai, bi](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(ai)) g.accum(ai, go);
    if (g.wants(bi)) g.accum(bi, go);
  });
}

Var Graph::sub(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv.data[i];
  int ai = a.id, bi = b.id;
  return make(std::move(out), {ai, bi, -1}, [ai, bi](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(ai)) g.accum(ai, go);
    if (g.wants(bi)) {
      Tensor neg = go;
      for (double& v : neg.data) v = -v;
      g.accum(bi, neg);
    }
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  int ai = a.id, bi = b.id;
  return make(std::move(out), {ai, bi, -1}, [ai, bi](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(ai)) {
      Tensor da = go;
      const Tensor& bval = g.node_value(bi);
      for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= bval.data[i];
      g.accum(ai, da);
    }
    if (g.wants(bi)) {
      Tensor db = go;
      const Tensor& aval = g.node_value(ai);
      for (std::size_t i = 0; i < db.size(); ++i) db.data[i] *= aval.data[i];
      g.accum(bi, db);
    }
  });
}

Var Graph::scale(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v *= c;
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, c](Graph& g, int self) {
    if (!g.wants(ai)) return;
    Tensor da = g.nodes_[self].grad;
    for (double& v : da.data) v *= c;
    g.accum(ai, da);
  });
}

Var Graph::add_scalar(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v += c;
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (g.wants(ai)) g.accum(ai, g.nodes_[self].grad);
  });
}

Var Graph::sigmoid(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = sigmoid_scalar(v);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& y = g.node_value(self);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= y.data[i] * (1.0 - y.data[i]);
    g.accum(ai, da);
  });
}

Var Graph::tanh(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::tanh(v);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& y = g.node_value(self);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= 1.0 - y.data[i] * y.data[i];
    g.accum(ai, da);
  });
}

Var Graph::silu(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v *= sigmoid_scalar(v);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& x = g.node_value(ai);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i) {
      double s = sigmoid_scalar(x.data[i]);
      da.data[i] *= s * (1.0 + x.data[i] * (1.0 - s));
    }
    g.accum(ai, da);
  });
}

Var Graph::exp(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::exp(v);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& y = g.node_value(self);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] *= y.data[i];
    g.accum(ai, da);
  });
}

Var Graph::log(Var a) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::log(v);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& x = g.node_value(ai);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i) da.data[i] /= x.data[i];
    g.accum(ai, da);
  });
}

Var Graph::max_scalar(Var a, double c) {
  Tensor out = value(a);
  for (double& v : out.data) v = std::max(v, c);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, c](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& x = g.node_value(ai);
    Tensor da = g.nodes_[self].grad;
    for (std::size_t i = 0; i < da.size(); ++i)
      if (x.data[i] <= c) da.data[i] = 0.0;
    g.accum(ai, da);
  });
}

// ---------------- linear algebra ----------------

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_matrix(av, "matmul");
  check_matrix(bv, "matmul");
  int n = av.rows(), k = av.cols(), k2 = bv.rows(), m = bv.cols();
  if (k != k2)
    throw std::invalid_argument("matmul: inner dims differ, " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    const double* arow = &av.data[static_cast<std::size_t>(i) * k];
    double* orow = &out.data[static_cast<std::size_t>(i) * m];
    for (int kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      if (aik == 0.0) continue;
      const double* brow = &bv.data[static_cast<std::size_t>(kk) * m];
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  int ai = a.id, bi = b.id;
  return make(std::move(out), {ai, bi, -1}, [ai, bi, n, k, m](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(ai)) {
      const Tensor& bval = g.node_value(bi);
      Tensor da({n, k});
      for (int i = 0; i < n; ++i) {
        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
        double* darow = &da.data[static_cast<std::size_t>(i) * k];
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = &bval.data[static_cast<std::size_t>(kk) * m];
          double acc = 0.0;
          for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
          darow[kk] = acc;
        }
      }
      g.accum(ai, da);
    }
    if (g.wants(bi)) {
      const Tensor& aval = g.node_value(ai);
      Tensor db({k, m});
      for (int i = 0; i < n; ++i) {
        const double* arow = &aval.data[static_cast<std::size_t>(i) * k];
        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
        for (int kk = 0; kk < k; ++kk) {
          double aik = arow[kk];
          if (aik == 0.0) continue;
          double* dbrow = &db.data[static_cast<std::size_t>(kk) * m];
          for (int j = 0; j < m; ++j) dbrow[j] += aik * grow[j];
        }
      }
      g.accum(bi, db);
    }
  });
}

Var Graph::linear(Var x, Var w, Var b) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(w);
  const Tensor& bv = value(b);
  int n = xv.rows(), k = xv.cols(), m = wv.cols();
  if (k != wv.rows() || m != static_cast<int>(bv.size()))
    throw std::invalid_argument("linear: shapes " + shape_str(xv.shape) + ", " + shape_str(wv.shape) +
                                ", " + shape_str(bv.shape) + " do not conform");
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    double* orow = &out.data[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) orow[j] = bv.data[j];
    const double* xrow = &xv.data[static_cast<std::size_t>(i) * k];
    for (int kk = 0; kk < k; ++kk) {
      double xik = xrow[kk];
      if (xik == 0.0) continue;
      const double* wrow = &wv.data[static_cast<std::size_t>(kk) * m];
      for (int j = 0; j < m; ++j) orow[j] += xik * wrow[j];
    }
  }
  int xi = x.id, wi = w.id, bi = b.id;
  return make(std::move(out), {xi, wi, bi}, [xi, wi, bi, n, k, m](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(xi)) {
      const Tensor& wval = g.node_value(wi);
      Tensor dx({n, k});
      for (int i = 0; i < n; ++i) {
        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
        double* dxrow = &dx.data[static_cast<std::size_t>(i) * k];
        for (int kk = 0; kk < k; ++kk) {
          const double* wrow = &wval.data[static_cast<std::size_t>(kk) * m];
          double acc = 0.0;
          for (int j = 0; j < m; ++j) acc += grow[j] * wrow[j];
          dxrow[kk] = acc;
        }
      }
      g.accum(xi, dx);
    }
    if (g.wants(wi)) {
      const Tensor& xval = g.node_value(xi);
      Tensor dw({k, m});
      for (int i = 0; i < n; ++i) {
        const double* xrow = &xval.data[static_cast<std::size_t>(i) * k];
        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
        for (int kk = 0; kk < k; ++kk) {
          double xik = xrow[kk];
          if (xik == 0.0) continue;
          double* dwrow = &dw.data[static_cast<std::size_t>(kk) * m];
          for (int j = 0; j < m; ++j) dwrow[j] += xik * grow[j];
        }
      }
      g.accum(wi, dw);
    }
    if (g.wants(bi)) {
      Tensor db(g.node_value(bi).shape);
      for (int i = 0; i < n; ++i) {
        const double* grow = &go.data[static_cast<std::size_t>(i) * m];
        for (int j = 0; j < m; ++j) db.data[j] += grow[j];
      }
      g.accum(bi, db);
    }
  });
}

Var Graph::add_rowvec(Var x, Var v) {
  const Tensor& xv = value(x);
  const Tensor& vv = value(v);
  int n = xv.rows(), m = xv.cols();
  if (static_cast<int>(vv.size()) != m)
    throw std::invalid_argument("add_rowvec: " + shape_str(xv.shape) + " vs " + shape_str(vv.shape));
  Tensor out = xv;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.data[static_cast<std::size_t>(i) * m + j] += vv.data[j];
  int xi = x.id, vi = v.id;
  return make(std::move(out), {xi, vi, -1}, [xi, vi, n, m](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    if (g.wants(xi)) g.accum(xi, go);
    if (g.wants(vi)) {
      Tensor dv(g.node_value(vi).shape);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) dv.data[j] += go.data[static_cast<std::size_t>(i) * m + j];
      g.accum(vi, dv);
    }
  });
}

// ---------------- shape ----------------

Var Graph::reshape(Var a, Shape s) {
  const Tensor& av = value(a);
  if (shape_numel(s) != static_cast<std::int64_t>(av.size()))
    throw std::invalid_argument("reshape: " + shape_str(av.shape) + " to " + shape_str(s));
  Tensor out(std::move(s), av.data);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    Tensor da(g.node_value(ai).shape, g.nodes_[self].grad.data);
    g.accum(ai, da);
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  int n = value(parts[0]).rows();
  int total = 0;
  for (Var p : parts) {
    if (value(p).rows() != n) throw std::invalid_argument("concat_cols: row counts differ");
    total += value(p).cols();
  }
  Tensor out({n, total});
  int off = 0;
  std::vector<int> ids;
  std::vector<int> widths;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    int w = pv.cols();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) out.at(i, off + j) = pv.at(i, j);
    ids.push_back(p.id);
    widths.push_back(w);
    off += w;
  }
  Var r = make(std::move(out), {ids[0], ids.size() > 1 ? ids[1] : -1, ids.size() > 2 ? ids[2] : -1},
               nullptr);
  // parents array caps at 3; track full list in the closure and recompute needs_grad
  Node& node = nodes_[static_cast<std::size_t>(r.id)];
  for (int id : ids)
    if (nodes_[static_cast<std::size_t>(id)].needs_grad) node.needs_grad = true;
  node.backward = [ids, widths, n](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    int off2 = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      int w = widths[p];
      if (g.wants(ids[p])) {
        Tensor dp({n, w});
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j) dp.at(i, j) = go.at(i, off2 + j);
        g.accum(ids[p], dp);
      }
      off2 += w;
    }
  };
  return r;
}

Var Graph::slice_cols(Var a, int first, int count) {
  const Tensor& av = value(a);
  int n = av.rows(), m = av.cols();
  if (first < 0 || count <= 0 || first + count > m)
    throw std::invalid_argument("slice_cols: range out of bounds for " + shape_str(av.shape));
  Tensor out({n, count});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < count; ++j) out.at(i, j) = av.at(i, first + j);
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, first, count, n, m](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& go = g.nodes_[self].grad;
    Tensor da({n, m});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < count; ++j) da.at(i, first + j) = go.at(i, j);
    g.accum(ai, da);
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  int m = value(parts[0]).cols();
  int total = 0;
  for (Var p : parts) {
    if (value(p).cols() != m) throw std::invalid_argument("concat_rows: col counts differ");
    total += value(p).rows();
  }
  Tensor out({total, m});
  int off = 0;
  std::vector<int> ids;
  std::vector<int> heights;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    int h = pv.rows();
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + static_cast<std::size_t>(off) * m);
    ids.push_back(p.id);
    heights.push_back(h);
    off += h;
  }
  Var r = make(std::move(out), {ids[0], ids.size() > 1 ? ids[1] : -1, ids.size() > 2 ? ids[2] : -1},
               nullptr);
  Node& node = nodes_[static_cast<std::size_t>(r.id)];
  for (int id : ids)
    if (nodes_[static_cast<std::size_t>(id)].needs_grad) node.needs_grad = true;
  node.backward = [ids, heights, m](Graph& g, int self) {
    const Tensor& go = g.nodes_[self].grad;
    int off2 = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      int h = heights[p];
      if (g.wants(ids[p])) {
        Tensor dp({h, m});
        std::copy(go.data.begin() + static_cast<std::size_t>(off2) * m,
                  go.data.begin() + static_cast<std::size_t>(off2 + h) * m, dp.data.begin());
        g.accum(ids[p], dp);
      }
      off2 += h;
    }
  };
  return r;
}

Var Graph::slice_rows(Var a, int first, int count) {
  const Tensor& av = value(a);
  int n = av.rows(), m = av.cols();
  if (first < 0 || count <= 0 || first + count > n)
    throw std::invalid_argument("slice_rows: range out of bounds for " + shape_str(av.shape));
  Tensor out({count, m});
  std::copy(av.data.begin() + static_cast<std::size_t>(first) * m,
            av.data.begin() + static_cast<std::size_t>(first + count) * m, out.data.begin());
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, first, count, n, m](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& go = g.nodes_[self].grad;
    Tensor da({n, m});
    std::copy(go.data.begin(), go.data.end(), da.data.begin() + static_cast<std::size_t>(first) * m);
    g.accum(ai, da);
  });
}

Var Graph::broadcast_row(Var v, int n) {
  const Tensor& vv = value(v);
  int m = static_cast<int>(vv.size());
  Tensor out({n, m});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.at(i, j) = vv.data[j];
  int vi = v.id;
  return make(std::move(out), {vi, -1, -1}, [vi, n, m](Graph& g, int self) {
    if (!g.wants(vi)) return;
    const Tensor& go = g.nodes_[self].grad;
    Tensor dv(g.node_value(vi).shape);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) dv.data[j] += go.at(i, j);
    g.accum(vi, dv);
  });
}

// ---------------- reductions ----------------

Var Graph::sum_all(Var a) {
  const Tensor& av = value(a);
  double s = 0.0;
  for (double v : av.data) s += v;
  int ai = a.id;
  return make(Tensor::scalar(s), {ai, -1, -1}, [ai](Graph& g, int self) {
    if (!g.wants(ai)) return;
    double go = g.nodes_[self].grad.data[0];
    Tensor da(g.node_value(ai).shape);
    for (double& v : da.data) v = go;
    g.accum(ai, da);
  });
}

Var Graph::mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(value(a).size())); }

Var Graph::sum_lastdim(Var a) {
  const Tensor& av = value(a);
  int n = av.rows(), m = av.cols();
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += av.at(i, j);
    out.data[static_cast<std::size_t>(i)] = s;
  }
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, n, m](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& go = g.nodes_[self].grad;
    Tensor da(g.node_value(ai).shape);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) da.data[static_cast<std::size_t>(i) * m + j] = go.data[static_cast<std::size_t>(i)];
    g.accum(ai, da);
  });
}

// ---------------- softmax family ----------------

Var Graph::softmax_lastdim(Var a) {
  const Tensor& av = value(a);
  int n = av.rows(), m = av.cols();
  if (m < 1) throw std::invalid_argument("softmax: last dim must be >= 1");
  Tensor out = av;
  for (int i = 0; i < n; ++i) {
    double* row = &out.data[static_cast<std::size_t>(i) * m];
    double mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < m; ++j) row[j] /= s;
  }
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, n, m](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& y = g.node_value(self);
    const Tensor& go = g.nodes_[self].grad;
    Tensor da({n, m});
    for (int i = 0; i < n; ++i) {
      const double* yr = &y.data[static_cast<std::size_t>(i) * m];
      const double* gr = &go.data[static_cast<std::size_t>(i) * m];
      double dot = 0.0;
      for (int j = 0; j < m; ++j) dot += yr[j] * gr[j];
      double* dr = &da.data[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) dr[j] = yr[j] * (gr[j] - dot);
    }
    g.accum(ai, da);
  });
}

Var Graph::log_softmax_lastdim(Var a) {
  const Tensor& av = value(a);
  int n = av.rows(), m = av.cols();
  Tensor out = av;
  for (int i = 0; i < n; ++i) {
    double* row = &out.data[static_cast<std::size_t>(i) * m];
    double mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (int j = 0; j < m; ++j) row[j] -= lse;
  }
  int ai = a.id;
  return make(std::move(out), {ai, -1, -1}, [ai, n, m](Graph& g, int self) {
    if (!g.wants(ai)) return;
    const Tensor& y = g.node_value(self);
    const Tensor& go = g.nodes_[self].grad;
    Tensor da({n, m});
    for (int i = 0; i < n; ++i) {
      const double* yr = &y.data[static_cast<std::size_t>(i) * m];
      const double* gr = &go.data[static_cast<std::size_t>(i) * m];
      double gsum = 0.0;
      for (int j = 0; j < m; ++j) gsum += gr[j];
      double* dr = &da.data[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) dr[j] = gr[j] - std::exp(yr[j]) * gsum;
    }
    g.accum(ai, da);
  });
}

Var Graph::layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gamma);
  const Tensor& bv = value(beta);
  int n = xv.rows(), m = xv.cols();
  if (static_cast<int>(gv.size()) != m || static_cast<int>(bv.size()) != m)
    throw std::invalid_argument("layer_norm: feature dims differ, x " + shape_str(xv.shape) +
                                " gamma " + shape_str(gv.shape) + " beta " + shape_str(bv.shape));
  if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
  Tensor out({n, m});
  for (int i = 0; i < n; ++i) {
    const double* xr = &xv.data[static_cast<std::size_t>(i) * m];
    double mean = 0.0;
    for (int j = 0; j < m; ++j) mean += xr[j];
    mean /= m;
    double var = 0.0;
    for (int j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= m;  // biased
    double inv = 1.0 / std::sqrt(var + eps);
    double* orow = &out.data[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) orow[j] = (xr[j] - mean) * inv * gv.data[j] + bv.data[j];
  }
  int xi = x.id, gi = gamma.id, bi = beta.id;
  return make(std::move(out), {xi, gi, bi}, [xi, gi, bi, n, m, eps](Graph& g, int self) {
    const Tensor& xval = g.node_value(xi);
    const Tensor& gval = g.node_value(gi);
    const Tensor& go = g.nodes_[self].grad;
    Tensor dx({n, m});
    Tensor dg(g.node_value(gi).shape), db(g.node_value(bi).shape);
    std::vector<double> xhat(static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
      const double* xr = &xval.data[static_cast<std::size_t>(i) * m];
      const double* gr = &go.data[static_cast<std::size_t>(i) * m];
      double mean = 0.0;
      for (int j = 0; j < m; ++j) mean += xr[j];
      mean /= m;
      double var = 0.0;
      for (int j = 0; j < m; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= m;
      double inv = 1.0 / std::sqrt(var + eps);
      for (int j = 0; j < m; ++j) xhat[static_cast<std::size_t>(j)] = (xr[j] - mean) * inv;
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (int j = 0; j < m; ++j) {
        double dxh = gr[j] * gval.data[j];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xhat[static_cast<std::size_t>(j)];
      }
      mean_dxhat /= m;
      mean_dxhat_xhat /= m;
      double* dxr = &dx.data[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) {
        double dxh = gr[j] * gval.data[j];
        dxr[j] = inv * (dxh - mean_dxhat - xhat[static_cast<std::size_t>(j)] * mean_dxhat_xhat);
        dg.data[j] += gr[j] * xhat[static_cast<std::size_t>(j)];
        db.data[j] += gr[j];
      }
    }
    if (g.wants(xi)) g.accum(xi, dx);
    if (g.wants(gi)) g.accum(gi, dg);
    if (g.wants(bi)) g.accum(bi, db);
  });
}

Var Graph::kl_rows(Var p_logits, Var q_logits) {
  const Tensor& pv = value(p_logits);
  const Tensor& qv = value(q_logits);
  check_same_shape(pv, qv, "kl_rows");
  int n = pv.rows(), m = pv.cols();
  auto log_softmax_row = [m](const double* row, double* out) {
    double mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (int j = 0; j < m; ++j) out[j] = row[j] - lse;
  };
  Tensor out({n});
  std::vector<double> lp(static_cast<std::size_t>(m)), lq(static_cast<std::size_t>(m));
  for (int i = 0; i < n; ++i) {
    log_softmax_row(&pv.data[static_cast<std::size_t>(i) * m], lp.data());
    log_softmax_row(&qv.data[static_cast<std::size_t>(i) * m], lq.data());
    double kl = 0.0;
    for (int j = 0; j < m; ++j) kl += std::exp(lp[static_cast<std::size_t>(j)]) *
                                      (lp[static_cast<std::size_t>(j)] - lq[static_cast<std::size_t>(j)]);
    out.data[static_cast<std::size_t>(i)] = std::max(kl, 0.0);
  }
  int pi = p_logits.id, qi = q_logits.id;
  return make(std::move(out), {pi, qi, -1}, [pi, qi, n, m](Graph& g, int self) {
    const Tensor& pval = g.node_value(pi);
    const Tensor& qval = g.node_value(qi);
    const Tensor& go = g.nodes_[self].grad;
    auto log_softmax_row = [m](const double* row, double* out) {
      double mx = row[0];
      for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
      double lse = mx + std::log(s);
      for (int j = 0; j < m; ++j) out[j] = row[j] - lse;
    };
    std::vector<double> lp(static_cast<std::size_t>(m)), lq(static_cast<std::size_t>(m));
    Tensor dp({n, m}), dq({n, m});
    for (int i = 0; i < n; ++i) {
      log_softmax_row(&pval.data[static_cast<std::size_t>(i) * m], lp.data());
      log_softmax_row(&qval.data[static_cast<std::size_t>(i) * m], lq.data());
      double kl = 0.0;
      for (int j = 0; j < m; ++j) kl += std::exp(lp[static_cast<std::size_t>(j)]) *
                                        (lp[static_cast<std::size_t>(j)] - lq[static_cast<std::size_t>(j)]);
      double gi2 = go.data[static_cast<std::size_t>(i)];
      for (int j = 0; j < m; ++j) {
        double pj = std::exp(lp[static_cast<std::size_t>(j)]);
        double qj = std::exp(lq[static_cast<std::size_t>(j)]);
        dp.at(i, j) = gi2 * pj * ((lp[static_cast<std::size_t>(j)] - lq[static_cast<std::size_t>(j)]) - kl);
        dq.at(i, j) = gi2 * (qj - pj);
      }
    }
    if (g.wants(pi)) g.accum(pi, dp);
    if (g.wants(qi)) g.accum(qi, dq);
  });
}

Var Graph::bce_logits_mean(Var logits, const Tensor& targets) {
  const Tensor& lv = value(logits);
  if (lv.size() != targets.size())
    throw std::invalid_argument("bce: logits " + shape_str(lv.shape) + " vs targets " +
                                shape_str(targets.shape));
  auto softplus = [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); };
  double acc = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) acc += softplus(lv.data[i]) - targets.data[i] * lv.data[i];
  double n = static_cast<double>(lv.size());
  int li = logits.id;
  Tensor tcopy = targets;
  return make(Tensor::scalar(acc / n), {li, -1, -1}, [li, tcopy, n](Graph& g, int self) {
    if (!g.wants(li)) return;
    double go = g.nodes_[self].grad.data[0];
    const Tensor& lval = g.node_value(li);
    Tensor dl(lval.shape);
    for (std::size_t i = 0; i < dl.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-lval.data[i]));
      dl.data[i] = go * (s - tcopy.data[i]) / n;
    }
    g.accum(li, dl);
  });
}

Var Graph::attention(Var q, Var k, Var v, std::vector<VisRange> vis) {
  const Tensor& qv = value(q);
  const Tensor& kv = value(k);
  const Tensor& vv = value(v);
  int tq = qv.rows(), d = qv.cols();
  int tk = kv.rows();
  if (kv.cols() != d || vv.cols() != d || vv.rows() != tk)
    throw std::invalid_argument("attention: Q " + shape_str(qv.shape) + " K " + shape_str(kv.shape) +
                                " V " + shape_str(vv.shape) + " do not conform");
  if (static_cast<int>(vis.size()) != tq)
    throw std::invalid_argument("attention: visibility entries != query count");
  for (int t = 0; t < tq; ++t) {
    const VisRange& r = vis[static_cast<std::size_t>(t)];
    if (r.count <= 0) throw std::invalid_argument("attention: empty visibility for query " + std::to_string(t));
    int last = r.begin + (r.count - 1) * r.stride;
    if (r.begin < 0 || last < 0 || r.begin >= tk || last >= tk)
      throw std::invalid_argument("attention: visibility out of range for query " + std::to_string(t));
  }
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor out({tq, d});
  std::vector<double> logits;
  for (int t = 0; t < tq; ++t) {
    const VisRange& r = vis[static_cast<std::size_t>(t)];
    logits.assign(static_cast<std::size_t>(r.count), 0.0);
    const double* qrow = &qv.data[static_cast<std::size_t>(t) * d];
    double mx = -1e300;
    for (int s = 0; s < r.count; ++s) {
      const double* krow = &kv.data[static_cast<std::size_t>(r.begin + s * r.stride) * d];
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += qrow[j] * krow[j];
      acc *= inv_scale;
      logits[static_cast<std::size_t>(s)] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0.0;
    for (int s = 0; s < r.count; ++s) {
      logits[static_cast<std::size_t>(s)] = std::exp(logits[static_cast<std::size_t>(s)] - mx);
      z += logits[static_cast<std::size_t>(s)];
    }
    double* orow = &out.data[static_cast<std::size_t>(t) * d];
    for (int s = 0; s < r.count; ++s) {
      double w = logits[static_cast<std::size_t>(s)] / z;
      const double* vrow = &vv.data[static_cast<std::size_t>(r.begin + s * r.stride) * d];
      for (int j = 0; j < d; ++j) orow[j] += w * vrow[j];
    }
  }
  int qi = q.id, ki = k.id, vi = v.id;
  return make(std::move(out), {qi, ki, vi},
              [qi, ki, vi, vis = std::move(vis), tq, tk, d, inv_scale](Graph& g, int self) {
    const Tensor& qval = g.node_value(qi);
    const Tensor& kval = g.node_value(ki);
    const Tensor& vval = g.node_value(vi);
    const Tensor& go = g.nodes_[self].grad;
    Tensor dq({tq, d}), dk({tk, d}), dv({tk, d});
    std::vector<double> w, dlog;
    for (int t = 0; t < tq; ++t) {
      const VisRange& r = vis[static_cast<std::size_t>(t)];
      w.assign(static_cast<std::size_t>(r.count), 0.0);
      dlog.assign(static_cast<std::size_t>(r.count), 0.0);
      const double* qrow = &qval.data[static_cast<std::size_t>(t) * d];
      double mx = -1e300;
      for (int s = 0; s < r.count; ++s) {
        const double* krow = &kval.data[static_cast<std::size_t>(r.begin + s * r.stride) * d];
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += qrow[j] * krow[j];
        w[static_cast<std::size_t>(s)] = acc * inv_scale;
        mx = std::max(mx, w[static_cast<std::size_t>(s)]);
      }
      double z = 0.0;
      for (int s = 0; s < r.count; ++s) {
        w[static_cast<std::size_t>(s)] = std::exp(w[static_cast<std::size_t>(s)] - mx);
        z += w[static_cast<std::size_t>(s)];
      }
      for (int s = 0; s < r.count; ++s) w[static_cast<std::size_t>(s)] /= z;
      const double* grow = &go.data[static_cast<std::size_t>(t) * d];
      double wdot = 0.0;
      for (int s = 0; s < r.count; ++s) {
        const double* vrow = &vval.data[static_cast<std::size_t>(r.begin + s * r.stride) * d];
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += grow[j] * vrow[j];
        dlog[static_cast<std::size_t>(s)] = acc;
        wdot += w[static_cast<std::size_t>(s)] * acc;
      }
      double* dqrow = &dq.data[static_cast<std::size_t>(t) * d];
      for (int s = 0; s < r.count; ++s) {
        double ws = w[static_cast<std::size_t>(s)];
        double dls = ws * (dlog[static_cast<std::size_t>(s)] - wdot);  // softmax jacobian
        int idx = r.begin + s * r.stride;
        const double* krow = &kval.data[static_cast<std::size_t>(idx) * d];
        double* dkrow = &dk.data[static_cast<std::size_t>(idx) * d];
        double* dvrow = &dv.data[static_cast<std::size_t>(idx) * d];
        for (int j = 0; j < d; ++j) {
          dqrow[j] += dls * inv_scale * krow[j];
          dkrow[j] += dls * inv_scale * qrow[j];
          dvrow[j] += ws * grow[j];
        }
      }
    }
    if (g.wants(qi)) g.accum(qi, dq);
    if (g.wants(ki)) g.accum(ki, dk);
    if (g.wants(vi)) g.accum(vi, dv);
  });
}

Var Graph::st_onehot(Var probs, Tensor sample) {
  check_same_shape(value(probs), sample, "st_onehot");
  int pi = probs.id;
  return make(std::move(sample), {pi, -1, -1}, [pi](Graph& g, int self) {
    if (g.wants(pi)) g.accum(pi, g.nodes_[self].grad);
  });
}

}  // namespace tdv3

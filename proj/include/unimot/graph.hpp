#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/kernels.hpp"
#include "unimot/tensor.hpp"

namespace unimot {

// Reverse-mode autodiff over a dynamically recorded tape. Nodes are created
// in forward order, so a reverse sweep over creation ids is a valid
// topological order and visits each node exactly once. All accumulation
// loops run in a fixed order, which makes repeated runs bit-identical.
template <class Real>
class Graph {
 public:
  using Id = int32_t;

  struct Piece {
    Id src;
    std::vector<int> rows;
  };
  struct NllSum {
    Id node;
    int count;
  };

  // Leaf whose gradient accumulates into *grad_sink (null = frozen leaf).
  Id param(const Tensor<Real>& value, Tensor<Real>* grad_sink) {
    if (grad_sink && !grad_sink->same_shape(value))
      throw std::invalid_argument("param: grad sink shape mismatch");
    Node n;
    n.op = "param";
    n.external = &value;
    n.sink = grad_sink;
    n.needs_grad = grad_sink != nullptr;
    return push(std::move(n));
  }

  // Constant leaf.
  Id input(Tensor<Real> value) {
    Node n;
    n.op = "input";
    n.stored = std::move(value);
    return push(std::move(n));
  }

  const Tensor<Real>& val(Id id) const {
    const Node& n = nodes_.at(size_t(id));
    return n.external ? *n.external : n.stored;
  }

  bool has_grad(Id id) const { return nodes_.at(size_t(id)).has_grad; }

  const Tensor<Real>& grad(Id id) const {
    const Node& n = nodes_.at(size_t(id));
    if (!n.has_grad) throw std::logic_error("grad: node received no gradient");
    return n.grad;
  }

  size_t node_count() const { return nodes_.size(); }

  Id matmul(Id a, Id b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (ta.ndim() != 2 || tb.ndim() != 2 || ta.cols() != tb.rows())
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(ta) +
                                  "*" + shape_str(tb));
    int m = ta.rows(), k = ta.cols(), n = tb.cols();
    Node node;
    node.op = "matmul";
    node.stored = Tensor<Real>({m, n});
    kernels::matmul_nn(ta.data.data(), tb.data.data(), node.stored.data.data(),
                       m, k, n);
    Id self = push(std::move(node), {a, b});
    set_backprop(self, [self, a, b, m, k, n](Graph& g) {
      const Real* dc = g.grad_of(self).data.data();
      if (g.wants(a))
        kernels::matmul_nt_acc(dc, g.val(b).data.data(),
                               g.grad_buf(a).data.data(), m, k, n);
      if (g.wants(b))
        kernels::matmul_tn_acc(g.val(a).data.data(), dc,
                               g.grad_buf(b).data.data(), m, k, n);
    });
    return self;
  }

  Id add(Id a, Id b) {
    const auto& ta = val(a);
    const auto& tb = val(b);
    if (!ta.same_shape(tb))
      throw std::invalid_argument("add: shape mismatch " + shape_str(ta) +
                                  "+" + shape_str(tb));
    Node node;
    node.op = "add";
    node.stored = ta;
    for (size_t i = 0; i < node.stored.data.size(); i++)
      node.stored.data[i] += tb.data[i];
    Id self = push(std::move(node), {a, b});
    set_backprop(self, [self, a, b](Graph& g) {
      const auto& dc = g.grad_of(self).data;
      for (Id p : {a, b}) {
        if (!g.wants(p)) continue;
        auto& dst = g.grad_buf(p).data;
        for (size_t i = 0; i < dc.size(); i++) dst[i] += dc[i];
      }
    });
    return self;
  }

  Id scale(Id a, Real s) {
    Node node;
    node.op = "scale";
    node.stored = val(a);
    for (auto& x : node.stored.data) x *= s;
    Id self = push(std::move(node), {a});
    set_backprop(self, [self, a, s](Graph& g) {
      if (!g.wants(a)) return;
      const auto& dc = g.grad_of(self).data;
      auto& dst = g.grad_buf(a).data;
      for (size_t i = 0; i < dc.size(); i++) dst[i] += s * dc[i];
    });
    return self;
  }

  Id sum_scalars(const std::vector<Id>& xs) {
    Real acc = 0;
    for (Id x : xs) {
      if (val(x).numel() != 1)
        throw std::invalid_argument("sum_scalars: operand not scalar");
      acc += val(x).data[0];
    }
    Node node;
    node.op = "sum_scalars";
    node.stored = Tensor<Real>::scalar(acc);
    Id self = push(std::move(node), xs);
    std::vector<Id> parents = xs;
    set_backprop(self, [self, parents](Graph& g) {
      Real gd = g.grad_of(self).data[0];
      for (Id p : parents)
        if (g.wants(p)) g.grad_buf(p).data[0] += gd;
    });
    return self;
  }

  Id gather_rows(Id x, std::vector<int> rows) {
    const auto& tx = val(x);
    if (tx.ndim() != 2) throw std::invalid_argument("gather_rows: not rank-2");
    int d = tx.cols();
    Node node;
    node.op = "gather_rows";
    node.stored = Tensor<Real>({int(rows.size()), d});
    for (size_t i = 0; i < rows.size(); i++) {
      if (rows[i] < 0 || rows[i] >= tx.rows())
        throw std::invalid_argument("gather_rows: row out of range");
      std::copy_n(tx.row_ptr(rows[i]), d, node.stored.row_ptr(int(i)));
    }
    Id self = push(std::move(node), {x});
    set_backprop(self, [self, x, rows = std::move(rows), d](Graph& g) {
      if (!g.wants(x)) return;
      const auto& dc = g.grad_of(self);
      auto& dst = g.grad_buf(x);
      for (size_t i = 0; i < rows.size(); i++) {
        const Real* src = dc.row_ptr(int(i));
        Real* out = dst.row_ptr(rows[i]);
        for (int j = 0; j < d; j++) out[j] += src[j];
      }
    });
    return self;
  }

  // Scatter disjoint row sets into a [total_rows x d] tensor; uncovered rows
  // stay zero.
  Id merge_rows(std::vector<Piece> pieces, int total_rows) {
    int d = -1;
    std::vector<char> seen(size_t(total_rows), 0);
    for (const auto& pc : pieces) {
      const auto& t = val(pc.src);
      if (t.ndim() != 2) throw std::invalid_argument("merge_rows: not rank-2");
      if (d < 0) d = t.cols();
      if (t.cols() != d) throw std::invalid_argument("merge_rows: width mismatch");
      if (int(pc.rows.size()) != t.rows())
        throw std::invalid_argument("merge_rows: row count mismatch");
      for (int r : pc.rows) {
        if (r < 0 || r >= total_rows)
          throw std::invalid_argument("merge_rows: row out of range");
        if (seen[size_t(r)]) throw std::invalid_argument("merge_rows: duplicate row");
        seen[size_t(r)] = 1;
      }
    }
    if (d < 0) throw std::invalid_argument("merge_rows: no pieces");
    Node node;
    node.op = "merge_rows";
    node.stored = Tensor<Real>({total_rows, d});
    for (const auto& pc : pieces) {
      const auto& t = val(pc.src);
      for (size_t i = 0; i < pc.rows.size(); i++)
        std::copy_n(t.row_ptr(int(i)), d, node.stored.row_ptr(pc.rows[i]));
    }
    std::vector<Id> parents;
    for (const auto& pc : pieces) parents.push_back(pc.src);
    Id self = push(std::move(node), parents);
    set_backprop(self, [self, pieces = std::move(pieces), d](Graph& g) {
      const auto& dc = g.grad_of(self);
      for (const auto& pc : pieces) {
        if (!g.wants(pc.src)) continue;
        auto& dst = g.grad_buf(pc.src);
        for (size_t i = 0; i < pc.rows.size(); i++) {
          const Real* src = dc.row_ptr(pc.rows[i]);
          Real* out = dst.row_ptr(int(i));
          for (int j = 0; j < d; j++) out[j] += src[j];
        }
      }
    });
    return self;
  }

  // Row lookup into an embedding table; backward scatter-adds in id order.
  Id embed_rows(Id table, std::vector<int> ids) {
    const auto& tt = val(table);
    if (tt.ndim() != 2) throw std::invalid_argument("embed_rows: not rank-2");
    int d = tt.cols();
    Node node;
    node.op = "embed_rows";
    node.stored = Tensor<Real>({int(ids.size()), d});
    for (size_t i = 0; i < ids.size(); i++) {
      if (ids[i] < 0 || ids[i] >= tt.rows())
        throw std::invalid_argument("embed_rows: id " + std::to_string(ids[i]) +
                                    " out of range for table " + shape_str(tt));
      std::copy_n(tt.row_ptr(ids[i]), d, node.stored.row_ptr(int(i)));
    }
    Id self = push(std::move(node), {table});
    set_backprop(self, [self, table, ids = std::move(ids), d](Graph& g) {
      if (!g.wants(table)) return;
      const auto& dc = g.grad_of(self);
      auto& dst = g.grad_buf(table);
      for (size_t i = 0; i < ids.size(); i++) {
        const Real* src = dc.row_ptr(int(i));
        Real* out = dst.row_ptr(ids[i]);
        for (int j = 0; j < d; j++) out[j] += src[j];
      }
    });
    return self;
  }

  // y[t] = x[t] * gain / sqrt(mean(x[t]^2) + eps), per row.
  Id rmsnorm(Id x, Id gain, Real eps = Real(1e-6)) {
    const auto& tx = val(x);
    const auto& tg = val(gain);
    if (tx.ndim() != 2 || tg.numel() != tx.cols())
      throw std::invalid_argument("rmsnorm: shape mismatch " + shape_str(tx) +
                                  " gain " + shape_str(tg));
    int t_rows = tx.rows(), d = tx.cols();
    std::vector<Real> inv_rms(static_cast<size_t>(t_rows));
    Node node;
    node.op = "rmsnorm";
    node.stored = Tensor<Real>({t_rows, d});
    for (int t = 0; t < t_rows; t++) {
      const Real* xr = tx.row_ptr(t);
      Real ss = 0;
      for (int j = 0; j < d; j++) ss += xr[j] * xr[j];
      Real r = Real(1) / std::sqrt(ss / Real(d) + eps);
      inv_rms[size_t(t)] = r;
      Real* yr = node.stored.row_ptr(t);
      for (int j = 0; j < d; j++) yr[j] = xr[j] * tg.data[size_t(j)] * r;
    }
    Id self = push(std::move(node), {x, gain});
    set_backprop(self, [self, x, gain, inv_rms = std::move(inv_rms), t_rows,
                        d](Graph& g) {
      const auto& dc = g.grad_of(self);
      const auto& tx = g.val(x);
      const auto& tg = g.val(gain);
      if (g.wants(x)) {
        auto& dx = g.grad_buf(x);
        for (int t = 0; t < t_rows; t++) {
          const Real* xr = tx.row_ptr(t);
          const Real* dyr = dc.row_ptr(t);
          Real r = inv_rms[size_t(t)];
          Real dot = 0;
          for (int j = 0; j < d; j++) dot += dyr[j] * tg.data[size_t(j)] * xr[j];
          Real c = dot * r * r * r / Real(d);
          Real* dxr = dx.row_ptr(t);
          for (int j = 0; j < d; j++)
            dxr[j] += dyr[j] * tg.data[size_t(j)] * r - xr[j] * c;
        }
      }
      if (g.wants(gain)) {
        auto& dg = g.grad_buf(gain);
        for (int t = 0; t < t_rows; t++) {
          const Real* xr = tx.row_ptr(t);
          const Real* dyr = dc.row_ptr(t);
          Real r = inv_rms[size_t(t)];
          for (int j = 0; j < d; j++) dg.data[size_t(j)] += dyr[j] * xr[j] * r;
        }
      }
    });
    return self;
  }

  Id silu(Id x) {
    Node node;
    node.op = "silu";
    node.stored = val(x);
    for (auto& v : node.stored.data) {
      Real s = Real(1) / (Real(1) + std::exp(-v));
      v = v * s;
    }
    Id self = push(std::move(node), {x});
    set_backprop(self, [self, x](Graph& g) {
      if (!g.wants(x)) return;
      const auto& dc = g.grad_of(self).data;
      const auto& xv = g.val(x).data;
      auto& dst = g.grad_buf(x).data;
      for (size_t i = 0; i < dc.size(); i++) {
        Real s = Real(1) / (Real(1) + std::exp(-xv[i]));
        dst[i] += dc[i] * s * (Real(1) + xv[i] * (Real(1) - s));
      }
    });
    return self;
  }

  // Rotary encoding by absolute position, pairwise within each head.
  Id rope(Id x, int n_heads, const std::vector<int>& positions,
          Real base = Real(10000)) {
    const auto& tx = val(x);
    if (tx.ndim() != 2 || tx.cols() % n_heads != 0)
      throw std::invalid_argument("rope: width not divisible by heads");
    int hd = tx.cols() / n_heads;
    if (hd % 2 != 0) throw std::invalid_argument("rope: head dim must be even");
    if (int(positions.size()) != tx.rows())
      throw std::invalid_argument("rope: positions size mismatch");
    int t_rows = tx.rows(), d = tx.cols();
    // angles per (row, pair): shared across heads
    std::vector<Real> cs(size_t(t_rows) * (hd / 2)), sn(size_t(t_rows) * (hd / 2));
    for (int t = 0; t < t_rows; t++)
      for (int j = 0; j < hd / 2; j++) {
        Real freq = std::pow(base, Real(-2.0 * j / hd));
        Real a = Real(positions[size_t(t)]) * freq;
        cs[size_t(t) * (hd / 2) + j] = std::cos(a);
        sn[size_t(t) * (hd / 2) + j] = std::sin(a);
      }
    Node node;
    node.op = "rope";
    node.stored = Tensor<Real>({t_rows, d});
    for (int t = 0; t < t_rows; t++) {
      const Real* xr = tx.row_ptr(t);
      Real* yr = node.stored.row_ptr(t);
      for (int h = 0; h < n_heads; h++)
        for (int j = 0; j < hd / 2; j++) {
          Real c = cs[size_t(t) * (hd / 2) + j], s = sn[size_t(t) * (hd / 2) + j];
          int c0 = h * hd + 2 * j, c1 = c0 + 1;
          yr[c0] = xr[c0] * c - xr[c1] * s;
          yr[c1] = xr[c0] * s + xr[c1] * c;
        }
    }
    Id self = push(std::move(node), {x});
    set_backprop(self, [self, x, cs = std::move(cs), sn = std::move(sn),
                        n_heads, hd, t_rows](Graph& g) {
      if (!g.wants(x)) return;
      const auto& dc = g.grad_of(self);
      auto& dst = g.grad_buf(x);
      for (int t = 0; t < t_rows; t++) {
        const Real* dyr = dc.row_ptr(t);
        Real* dxr = dst.row_ptr(t);
        for (int h = 0; h < n_heads; h++)
          for (int j = 0; j < hd / 2; j++) {
            Real c = cs[size_t(t) * (hd / 2) + j], s = sn[size_t(t) * (hd / 2) + j];
            int c0 = h * hd + 2 * j, c1 = c0 + 1;
            dxr[c0] += dyr[c0] * c + dyr[c1] * s;
            dxr[c1] += -dyr[c0] * s + dyr[c1] * c;
          }
      }
    });
    return self;
  }

  // Joint causal attention: position t attends to positions <= t. Future
  // entries are never touched, so masked weights are exactly zero.
  Id causal_attention(Id q, Id k, Id v, int n_heads) {
    const auto& tq = val(q);
    const auto& tk = val(k);
    const auto& tv = val(v);
    if (!tq.same_shape(tk) || !tq.same_shape(tv) || tq.ndim() != 2)
      throw std::invalid_argument("causal_attention: shape mismatch " +
                                  shape_str(tq) + "/" + shape_str(tk) + "/" +
                                  shape_str(tv));
    if (tq.cols() % n_heads != 0)
      throw std::invalid_argument("causal_attention: width not divisible by heads");
    int t_rows = tq.rows(), d = tq.cols(), hd = d / n_heads;
    Real scl = Real(1) / std::sqrt(Real(hd));
    std::vector<Real> probs(size_t(n_heads) * t_rows * t_rows, Real(0));
    Node node;
    node.op = "causal_attention";
    node.stored = Tensor<Real>({t_rows, d});
    std::vector<Real> srow(static_cast<size_t>(t_rows));
    for (int h = 0; h < n_heads; h++) {
      int off = h * hd;
      for (int t = 0; t < t_rows; t++) {
        const Real* qt = tq.row_ptr(t) + off;
        Real mx = -std::numeric_limits<Real>::infinity();
        for (int j = 0; j <= t; j++) {
          const Real* kj = tk.row_ptr(j) + off;
          Real s = 0;
          for (int c = 0; c < hd; c++) s += qt[c] * kj[c];
          s *= scl;
          srow[size_t(j)] = s;
          if (s > mx) mx = s;
        }
        Real z = 0;
        for (int j = 0; j <= t; j++) {
          Real e = std::exp(srow[size_t(j)] - mx);
          srow[size_t(j)] = e;
          z += e;
        }
        Real* pr = probs.data() + (size_t(h) * t_rows + t) * t_rows;
        Real* out = node.stored.row_ptr(t) + off;
        for (int j = 0; j <= t; j++) {
          Real p = srow[size_t(j)] / z;
          pr[j] = p;
          const Real* vj = tv.row_ptr(j) + off;
          for (int c = 0; c < hd; c++) out[c] += p * vj[c];
        }
      }
    }
    Id self = push(std::move(node), {q, k, v});
    set_backprop(self, [self, q, k, v, probs = std::move(probs), n_heads, hd,
                        t_rows, scl](Graph& g) {
      const auto& dc = g.grad_of(self);
      const auto& tq = g.val(q);
      const auto& tk = g.val(k);
      const auto& tv = g.val(v);
      bool wq = g.wants(q), wk = g.wants(k), wv = g.wants(v);
      if (!wq && !wk && !wv) return;
      auto& dq = wq ? g.grad_buf(q) : g.grad_buf(self);
      auto& dk = wk ? g.grad_buf(k) : g.grad_buf(self);
      auto& dv = wv ? g.grad_buf(v) : g.grad_buf(self);
      std::vector<Real> dp(static_cast<size_t>(t_rows));
      for (int h = 0; h < n_heads; h++) {
        int off = h * hd;
        for (int t = 0; t < t_rows; t++) {
          const Real* pr = probs.data() + (size_t(h) * t_rows + t) * t_rows;
          const Real* dout = dc.row_ptr(t) + off;
          Real delta = 0;
          for (int j = 0; j <= t; j++) {
            const Real* vj = tv.row_ptr(j) + off;
            Real dpj = 0;
            for (int c = 0; c < hd; c++) dpj += dout[c] * vj[c];
            dp[size_t(j)] = dpj;
            delta += pr[j] * dpj;
            if (wv) {
              Real* dvj = dv.row_ptr(j) + off;
              for (int c = 0; c < hd; c++) dvj[c] += pr[j] * dout[c];
            }
          }
          if (!wq && !wk) continue;
          const Real* qt = tq.row_ptr(t) + off;
          Real* dqt = dq.row_ptr(t) + off;
          for (int j = 0; j <= t; j++) {
            Real ds = pr[j] * (dp[size_t(j)] - delta) * scl;
            const Real* kj = tk.row_ptr(j) + off;
            if (wq)
              for (int c = 0; c < hd; c++) dqt[c] += ds * kj[c];
            if (wk) {
              Real* dkj = dk.row_ptr(j) + off;
              for (int c = 0; c < hd; c++) dkj[c] += ds * qt[c];
            }
          }
        }
      }
    });
    return self;
  }

  // Sum over masked rows of -log softmax(logits[r])[target[r]].
  NllSum nll_sum(Id logits, const std::vector<int>& targets,
                 const std::vector<uint8_t>& mask) {
    const auto& tl = val(logits);
    if (tl.ndim() != 2) throw std::invalid_argument("nll_sum: logits not rank-2");
    int rows = tl.rows(), vocab = tl.cols();
    if (int(targets.size()) != rows || int(mask.size()) != rows)
      throw std::invalid_argument("nll_sum: targets/mask size mismatch");
    std::vector<int> sel;
    for (int r = 0; r < rows; r++)
      if (mask[size_t(r)]) {
        if (targets[size_t(r)] < 0 || targets[size_t(r)] >= vocab)
          throw std::invalid_argument("nll_sum: target " +
                                      std::to_string(targets[size_t(r)]) +
                                      " outside vocab " + std::to_string(vocab));
        sel.push_back(r);
      }
    std::vector<Real> probs(sel.size() * size_t(vocab));
    Real total = 0;
    for (size_t i = 0; i < sel.size(); i++) {
      const Real* lr = tl.row_ptr(sel[i]);
      Real mx = lr[0];
      for (int j = 1; j < vocab; j++) mx = std::max(mx, lr[j]);
      Real z = 0;
      for (int j = 0; j < vocab; j++) z += std::exp(lr[j] - mx);
      Real lse = mx + std::log(z);
      total += lse - lr[targets[size_t(sel[i])]];
      Real* pr = probs.data() + i * size_t(vocab);
      for (int j = 0; j < vocab; j++) pr[j] = std::exp(lr[j] - lse);
    }
    Node node;
    node.op = "nll_sum";
    node.stored = Tensor<Real>::scalar(total);
    Id self = push(std::move(node), {logits});
    std::vector<int> tsel;
    for (int r : sel) tsel.push_back(targets[size_t(r)]);
    const int n_masked = int(tsel.size());
    set_backprop(self, [self, logits, sel = std::move(sel),
                        tsel = std::move(tsel), probs = std::move(probs),
                        vocab](Graph& g) {
      if (!g.wants(logits)) return;
      Real gd = g.grad_of(self).data[0];
      auto& dst = g.grad_buf(logits);
      for (size_t i = 0; i < sel.size(); i++) {
        const Real* pr = probs.data() + i * size_t(vocab);
        Real* dr = dst.row_ptr(sel[i]);
        for (int j = 0; j < vocab; j++) dr[j] += gd * pr[j];
        dr[tsel[i]] -= gd;
      }
    });
    return {self, n_masked};
  }

  // Seeds d(loss)/d(loss) = upstream and sweeps the tape once in reverse
  // creation order, accumulating parameter gradients into their sinks.
  void backward(Id loss, Real upstream = Real(1)) {
    Node& ln = nodes_.at(size_t(loss));
    const Tensor<Real>& lv = ln.external ? *ln.external : ln.stored;
    if (lv.numel() != 1)
      throw std::invalid_argument("backward: loss must be scalar");
    if (!std::isfinite(double(lv.data[0])))
      throw NumericError("backward: non-finite loss (first bad op: " +
                         first_nonfinite(loss) + ")");
    grad_buf(loss).data[0] += upstream;
    for (Id i = loss; i >= 0; --i) {
      Node& n = nodes_[size_t(i)];
      if (!n.has_grad) continue;
      if (n.backprop) n.backprop(*this);
      if (n.sink)
        for (size_t j = 0; j < n.grad.data.size(); j++)
          n.sink->data[j] += n.grad.data[j];
    }
  }

  // Name of the earliest op that produced a non-finite value.
  std::string first_nonfinite(Id upto) const {
    for (Id i = 0; i <= upto; i++) {
      const Tensor<Real>& v = val(i);
      for (Real x : v.data)
        if (!std::isfinite(double(x))) return nodes_[size_t(i)].op;
    }
    return "none";
  }

 private:
  struct Node {
    const char* op = "";
    Tensor<Real> stored;
    const Tensor<Real>* external = nullptr;
    Tensor<Real> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Tensor<Real>* sink = nullptr;
    std::function<void(Graph&)> backprop;
  };

  std::vector<Node> nodes_;

  Id push(Node&& n, const std::vector<Id>& parents = {}) {
    for (Id p : parents)
      if (nodes_[size_t(p)].needs_grad) n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Id(nodes_.size() - 1);
  }

  // Record the closure only when a gradient can actually flow.
  template <class F>
  void set_backprop(Id id, F&& f) {
    if (nodes_[size_t(id)].needs_grad)
      nodes_[size_t(id)].backprop = std::forward<F>(f);
  }

  bool wants(Id id) const { return nodes_[size_t(id)].needs_grad; }

  Tensor<Real>& grad_buf(Id id) {
    Node& n = nodes_[size_t(id)];
    if (!n.has_grad) {
      const Tensor<Real>& v = n.external ? *n.external : n.stored;
      n.grad = Tensor<Real>(v.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  const Tensor<Real>& grad_of(Id id) const { return nodes_[size_t(id)].grad; }
};

// Mean of -log softmax over masked positions; all-false mask gives loss 0
// with zero gradients.
template <class Real>
typename Graph<Real>::Id cross_entropy(Graph<Real>& g,
                                       typename Graph<Real>::Id logits,
                                       const std::vector<int>& targets,
                                       const std::vector<uint8_t>& mask) {
  auto s = g.nll_sum(logits, targets, mask);
  return g.scale(s.node, s.count ? Real(1) / Real(s.count) : Real(0));
}

}  // namespace unimot

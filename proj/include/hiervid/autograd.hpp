#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "hiervid/masks.hpp"
#include "hiervid/tensor.hpp"
#include "hiervid/threading.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Reverse-mode tape. Values are computed eagerly; when grads are enabled each
// op records a closure that pulls the node's gradient back to its inputs.
// Parameters bound with param() receive accumulated gradients after
// backward(), frozen or not - freezing is the optimizer's business.
// ---------------------------------------------------------------------------

// Stable masked softmax (row max subtracted). Masked entries are exactly 0,
// permitted rows sum to 1. A row with no permitted key is an error.
inline Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
  if (scores.shape.size() != 2 || scores.shape[0] != mask.n || scores.shape[1] != mask.n)
    throw std::invalid_argument("masked_softmax: scores must be LxL matching the mask");
  const int L = mask.n;
  Tensor out(std::vector<int>{L, L});
  for (int q = 0; q < L; ++q) {
    double mx = -1e300;
    bool any = false;
    for (int k = 0; k < L; ++k) {
      if (!mask.at(q, k)) continue;
      any = true;
      if (scores.at(q, k) > mx) mx = scores.at(q, k);
    }
    if (!any)
      throw std::runtime_error("masked_softmax: query row " + std::to_string(q) +
                               " has no permitted keys");
    double sum = 0.0;
    for (int k = 0; k < L; ++k) {
      if (!mask.at(q, k)) continue;
      const double e = std::exp(scores.at(q, k) - mx);
      out.at(q, k) = e;
      sum += e;
    }
    for (int k = 0; k < L; ++k)
      if (mask.at(q, k)) out.at(q, k) /= sum;
  }
  return out;
}

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true, int threads = 1)
      : grad_enabled_(grad_enabled), threads_(threads) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  int threads() const { return threads_; }

  const Tensor& val(Var v) const { return nodes_[check(v)].value; }
  const Tensor& grad_of(Var v) const { return nodes_[check(v)].grad; }

  Var input(Tensor t) { return push(std::move(t), nullptr, {}); }

  Var param(Parameter& p) { return push(p.value, &p, {}); }

  Var add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = ta;
    for (int i = 0; i < out.numel(); ++i) out.at(i) += tb.at(i);
    return push(std::move(out), nullptr, [this, a, b](const Tensor& g, const Tensor&) {
      accum(a, g);
      accum(b, g);
    });
  }

  Var scale(Var a, double c) {
    Tensor out = val(a);
    for (auto& v : out.data) v *= c;
    return push(std::move(out), nullptr, [this, a, c](const Tensor& g, const Tensor&) {
      Tensor& ga = nodes_[a.id].grad;
      for (int i = 0; i < g.numel(); ++i) ga.at(i) += c * g.at(i);
    });
  }

  // x[L x d] + bias[d] on every row
  Var add_bias_row(Var x, Var b) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    if (tx.shape.size() != 2 || tb.numel() != tx.shape[1])
      throw std::invalid_argument("add_bias_row: bias length must match columns");
    Tensor out = tx;
    const int L = tx.shape[0], d = tx.shape[1];
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < d; ++j) out.at(i, j) += tb.at(j);
    return push(std::move(out), nullptr, [this, x, b, L, d](const Tensor& g, const Tensor&) {
      accum(x, g);
      Tensor& gb = nodes_[b.id].grad;
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < d; ++j) gb.at(j) += g.at(i, j);
    });
  }

  // Channel mixture: out = plus + sigmoid(a) * (base - plus), per hidden dim.
  // Written in this form so weight-identical channels give an output exactly
  // independent of a (the correction term is exactly zero).
  Var mix(Var base, Var plus, Var a) {
    const Tensor& tb = val(base);
    const Tensor& tp = val(plus);
    const Tensor& ta = val(a);
    if (!tb.same_shape(tp)) throw std::invalid_argument("mix: channel shapes differ");
    if (tb.shape.size() != 2 || ta.numel() != tb.shape[1])
      throw std::invalid_argument("mix: a must have hidden-size length");
    const int L = tb.shape[0], d = tb.shape[1];
    Tensor out = tp;
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < d; ++j)
        out.at(i, j) += sigmoid_scalar(ta.at(j)) * (tb.at(i, j) - tp.at(i, j));
    return push(std::move(out), nullptr, [this, base, plus, a, L, d](const Tensor& g, const Tensor&) {
      const Tensor& vb = nodes_[base.id].value;
      const Tensor& vp = nodes_[plus.id].value;
      const Tensor& va = nodes_[a.id].value;
      Tensor& gb = nodes_[base.id].grad;
      Tensor& gp = nodes_[plus.id].grad;
      Tensor& ga = nodes_[a.id].grad;
      for (int j = 0; j < d; ++j) {
        const double s = sigmoid_scalar(va.at(j));
        const double ds = s * (1.0 - s);
        double acc_a = 0.0;
        for (int i = 0; i < L; ++i) {
          const double gij = g.at(i, j);
          gb.at(i, j) += s * gij;
          gp.at(i, j) += (1.0 - s) * gij;
          acc_a += gij * (vb.at(i, j) - vp.at(i, j));
        }
        ga.at(j) += acc_a * ds;
      }
    });
  }

  Var matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    check_matmul_shapes(ta, tb);
    const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out(std::vector<int>{m, n});
    parallel_for_rows(m, threads_, [&](int i) {
      const double* arow = ta.data.data() + static_cast<std::size_t>(i) * k;
      double* crow = out.data.data() + static_cast<std::size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        if (av == 0.0) continue;
        const double* brow = tb.data.data() + static_cast<std::size_t>(kk) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    });
    return push(std::move(out), nullptr, [this, a, b, m, k, n](const Tensor& g, const Tensor&) {
      const Tensor& va = nodes_[a.id].value;
      const Tensor& vb = nodes_[b.id].value;
      Tensor& ga = nodes_[a.id].grad;
      Tensor& gb = nodes_[b.id].grad;
      // ga += g * b^T
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data.data() + static_cast<std::size_t>(i) * n;
        double* garow = ga.data.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = vb.data.data() + static_cast<std::size_t>(kk) * n;
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          garow[kk] += s;
        }
      }
      // gb += a^T * g
      for (int i = 0; i < m; ++i) {
        const double* arow = va.data.data() + static_cast<std::size_t>(i) * k;
        const double* grow = g.data.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          if (av == 0.0) continue;
          double* gbrow = gb.data.data() + static_cast<std::size_t>(kk) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    });
  }

  // C = A (m x k) * B(n x k)^T
  Var matmul_nt(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[1])
      throw std::invalid_argument("matmul_nt: shapes incompatible");
    const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[0];
    Tensor out(std::vector<int>{m, n});
    parallel_for_rows(m, threads_, [&](int i) {
      const double* arow = ta.data.data() + static_cast<std::size_t>(i) * k;
      double* crow = out.data.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double* brow = tb.data.data() + static_cast<std::size_t>(j) * k;
        double s = 0.0;
        for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        crow[j] = s;
      }
    });
    return push(std::move(out), nullptr, [this, a, b, m, k, n](const Tensor& g, const Tensor&) {
      const Tensor& va = nodes_[a.id].value;
      const Tensor& vb = nodes_[b.id].value;
      Tensor& ga = nodes_[a.id].grad;
      Tensor& gb = nodes_[b.id].grad;
      // ga += g * b ; gb += g^T * a
      for (int i = 0; i < m; ++i) {
        const double* grow = g.data.data() + static_cast<std::size_t>(i) * n;
        double* garow = ga.data.data() + static_cast<std::size_t>(i) * k;
        const double* arow = va.data.data() + static_cast<std::size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
          const double gv = grow[j];
          if (gv == 0.0) continue;
          const double* brow = vb.data.data() + static_cast<std::size_t>(j) * k;
          double* gbrow = gb.data.data() + static_cast<std::size_t>(j) * k;
          for (int kk = 0; kk < k; ++kk) {
            garow[kk] += gv * brow[kk];
            gbrow[kk] += gv * arow[kk];
          }
        }
      }
    });
  }

  Var slice_cols(Var x, int c0, int width) {
    const Tensor& tx = val(x);
    if (tx.shape.size() != 2 || c0 < 0 || c0 + width > tx.shape[1])
      throw std::invalid_argument("slice_cols: range outside tensor");
    const int L = tx.shape[0];
    Tensor out(std::vector<int>{L, width});
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < width; ++j) out.at(i, j) = tx.at(i, c0 + j);
    return push(std::move(out), nullptr, [this, x, c0, width, L](const Tensor& g, const Tensor&) {
      Tensor& gx = nodes_[x.id].grad;
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < width; ++j) gx.at(i, c0 + j) += g.at(i, j);
    });
  }

  Var concat_cols(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
    const int L = val(xs[0]).shape[0];
    int total = 0;
    for (Var v : xs) {
      const Tensor& t = val(v);
      if (t.shape.size() != 2 || t.shape[0] != L)
        throw std::invalid_argument("concat_cols: row counts disagree");
      total += t.shape[1];
    }
    Tensor out(std::vector<int>{L, total});
    int off = 0;
    for (Var v : xs) {
      const Tensor& t = val(v);
      for (int i = 0; i < L; ++i)
        for (int j = 0; j < t.shape[1]; ++j) out.at(i, off + j) = t.at(i, j);
      off += t.shape[1];
    }
    std::vector<Var> saved = xs;
    return push(std::move(out), nullptr, [this, saved, L](const Tensor& g, const Tensor&) {
      int off2 = 0;
      for (Var v : saved) {
        Tensor& gx = nodes_[v.id].grad;
        const int w = gx.shape[1];
        for (int i = 0; i < L; ++i)
          for (int j = 0; j < w; ++j) gx.at(i, j) += g.at(i, off2 + j);
        off2 += w;
      }
    });
  }

  Var slice_rows(Var x, int r0, int count) {
    const Tensor& tx = val(x);
    if (tx.shape.size() != 2 || r0 < 0 || r0 + count > tx.shape[0])
      throw std::invalid_argument("slice_rows: range outside tensor");
    const int d = tx.shape[1];
    Tensor out(std::vector<int>{count, d});
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < d; ++j) out.at(i, j) = tx.at(r0 + i, j);
    return push(std::move(out), nullptr, [this, x, r0, count, d](const Tensor& g, const Tensor&) {
      Tensor& gx = nodes_[x.id].grad;
      for (int i = 0; i < count; ++i)
        for (int j = 0; j < d; ++j) gx.at(r0 + i, j) += g.at(i, j);
    });
  }

  Var gather_rows(Var table, std::vector<int> ids) {
    const Tensor& tt = val(table);
    if (tt.shape.size() != 2) throw std::invalid_argument("gather_rows: table must be 2-D");
    const int d = tt.shape[1];
    Tensor out(std::vector<int>{static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tt.shape[0])
        throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table");
      for (int j = 0; j < d; ++j) out.at(static_cast<int>(i), j) = tt.at(ids[i], j);
    }
    return push(std::move(out), nullptr, [this, table, ids = std::move(ids), d](const Tensor& g, const Tensor&) {
      Tensor& gt = nodes_[table.id].grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < d; ++j) gt.at(ids[i], j) += g.at(static_cast<int>(i), j);
    });
  }

  // x[rows[i]] += table[ids[i]] (embedding sums at selected positions)
  Var add_gathered(Var x, Var table, std::vector<int> rows, std::vector<int> ids) {
    const Tensor& tx = val(x);
    const Tensor& tt = val(table);
    if (rows.size() != ids.size()) throw std::invalid_argument("add_gathered: list length mismatch");
    if (tx.shape.size() != 2 || tt.shape.size() != 2 || tx.shape[1] != tt.shape[1])
      throw std::invalid_argument("add_gathered: column widths disagree");
    Tensor out = tx;
    const int d = tx.shape[1];
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= tx.shape[0] || ids[i] < 0 || ids[i] >= tt.shape[0])
        throw std::out_of_range("add_gathered: index outside tensors");
      for (int j = 0; j < d; ++j) out.at(rows[i], j) += tt.at(ids[i], j);
    }
    return push(std::move(out), nullptr,
                [this, x, table, rows = std::move(rows), ids = std::move(ids), d](const Tensor& g, const Tensor&) {
                  accum(x, g);
                  Tensor& gt = nodes_[table.id].grad;
                  for (std::size_t i = 0; i < rows.size(); ++i)
                    for (int j = 0; j < d; ++j) gt.at(ids[i], j) += g.at(rows[i], j);
                });
  }

  Var layer_norm(Var x, Var gain, Var bias) {
    const Tensor& tx = val(x);
    Tensor out = hiervid::layer_norm(tx, val(gain), val(bias));
    return push(std::move(out), nullptr, [this, x, gain, bias](const Tensor& g, const Tensor&) {
      const Tensor& vx = nodes_[x.id].value;
      const Tensor& vg = nodes_[gain.id].value;
      Tensor& gx = nodes_[x.id].grad;
      Tensor& gg = nodes_[gain.id].grad;
      Tensor& gb = nodes_[bias.id].grad;
      const int d = vx.shape.back();
      const int rows = vx.numel() / d;
      std::vector<double> xhat(static_cast<std::size_t>(d));
      for (int r = 0; r < rows; ++r) {
        const double* xr = vx.data.data() + static_cast<std::size_t>(r) * d;
        const double* gr = g.data.data() + static_cast<std::size_t>(r) * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
          const double c = xr[j] - mean;
          var += c * c;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double m1 = 0.0, m2 = 0.0;  // mean(dy*g), mean(dy*g*xhat)
        for (int j = 0; j < d; ++j) {
          xhat[static_cast<std::size_t>(j)] = (xr[j] - mean) * inv;
          const double dg = gr[j] * vg.at(j);
          m1 += dg;
          m2 += dg * xhat[static_cast<std::size_t>(j)];
        }
        m1 /= d;
        m2 /= d;
        double* gxr = gx.data.data() + static_cast<std::size_t>(r) * d;
        for (int j = 0; j < d; ++j) {
          const double dg = gr[j] * vg.at(j);
          gxr[j] += (dg - m1 - xhat[static_cast<std::size_t>(j)] * m2) * inv;
          gg.at(j) += gr[j] * xhat[static_cast<std::size_t>(j)];
          gb.at(j) += gr[j];
        }
      }
    });
  }

  // Mask pointer must stay valid until backward() finishes.
  Var masked_softmax(Var scores, const AttentionMask* mask) {
    const Tensor& ts = val(scores);
    if (ts.shape.size() != 2 || ts.shape[0] != mask->n || ts.shape[1] != mask->n)
      throw std::invalid_argument("masked_softmax: scores must be LxL matching the mask");
    const int L = mask->n;
    Tensor out(std::vector<int>{L, L});
    std::exception_ptr err;
    parallel_for_rows(L, threads_, [&](int q) {
      double mx = -1e300;
      bool any = false;
      for (int k = 0; k < L; ++k) {
        if (!mask->at(q, k)) continue;
        any = true;
        if (ts.at(q, k) > mx) mx = ts.at(q, k);
      }
      if (!any) {
        if (!err)
          err = std::make_exception_ptr(std::runtime_error(
              "masked_softmax: query row " + std::to_string(q) + " has no permitted keys"));
        return;
      }
      double sum = 0.0;
      for (int k = 0; k < L; ++k) {
        if (!mask->at(q, k)) continue;
        const double e = std::exp(ts.at(q, k) - mx);
        out.at(q, k) = e;
        sum += e;
      }
      for (int k = 0; k < L; ++k)
        if (mask->at(q, k)) out.at(q, k) /= sum;
    });
    if (err) std::rethrow_exception(err);
    return push(std::move(out), nullptr, [this, scores, mask, L](const Tensor& g, const Tensor& probs) {
      Tensor& gs = nodes_[scores.id].grad;
      for (int q = 0; q < L; ++q) {
        double dot = 0.0;
        for (int k = 0; k < L; ++k)
          if (mask->at(q, k)) dot += g.at(q, k) * probs.at(q, k);
        for (int k = 0; k < L; ++k)
          if (mask->at(q, k)) gs.at(q, k) += probs.at(q, k) * (g.at(q, k) - dot);
      }
    });
  }

  Var gelu(Var x) {
    Tensor out = val(x);
    for (auto& v : out.data) v = gelu_scalar(v);
    return push(std::move(out), nullptr, [this, x](const Tensor& g, const Tensor&) {
      const Tensor& vx = nodes_[x.id].value;
      Tensor& gx = nodes_[x.id].grad;
      for (int i = 0; i < g.numel(); ++i) gx.at(i) += g.at(i) * gelu_grad_scalar(vx.at(i));
    });
  }

  Var mean_all(Var x) {
    const Tensor& tx = val(x);
    Tensor out(std::vector<int>{1});
    double s = 0.0;
    for (double v : tx.data) s += v;
    out.at(0) = s / tx.numel();
    const double inv = 1.0 / tx.numel();
    return push(std::move(out), nullptr, [this, x, inv](const Tensor& g, const Tensor&) {
      Tensor& gx = nodes_[x.id].grad;
      const double gv = g.at(0) * inv;
      for (auto& v : gx.data) v += gv;
    });
  }

  // Mean cross-entropy: logits row sites[i] scored against class targets[i].
  Var cross_entropy(Var logits, std::vector<int> sites, std::vector<int> targets) {
    const Tensor& tl = val(logits);
    if (tl.shape.size() != 2) throw std::invalid_argument("cross_entropy: logits must be 2-D");
    if (sites.size() != targets.size() || sites.empty())
      throw std::invalid_argument("cross_entropy: no prediction targets");
    const int V = tl.shape[1];
    double total = 0.0;
    for (std::size_t i = 0; i < sites.size(); ++i) {
      const int r = sites[i];
      if (r < 0 || r >= tl.shape[0]) throw std::out_of_range("cross_entropy: site outside logits");
      if (targets[i] < 0 || targets[i] >= V)
        throw std::out_of_range("cross_entropy: target outside vocabulary");
      double mx = tl.at(r, 0);
      for (int j = 1; j < V; ++j) mx = std::max(mx, tl.at(r, j));
      double lse = 0.0;
      for (int j = 0; j < V; ++j) lse += std::exp(tl.at(r, j) - mx);
      total += mx + std::log(lse) - tl.at(r, targets[i]);
    }
    Tensor out(std::vector<int>{1});
    out.at(0) = total / static_cast<double>(sites.size());
    if (!std::isfinite(out.at(0))) throw std::runtime_error("cross_entropy: non-finite loss");
    const double inv = 1.0 / static_cast<double>(sites.size());
    return push(std::move(out), nullptr,
                [this, logits, sites = std::move(sites), targets = std::move(targets), V,
                 inv](const Tensor& g, const Tensor&) {
                  const Tensor& vl = nodes_[logits.id].value;
                  Tensor& gl = nodes_[logits.id].grad;
                  const double gs = g.at(0) * inv;
                  for (std::size_t i = 0; i < sites.size(); ++i) {
                    const int r = sites[i];
                    double mx = vl.at(r, 0);
                    for (int j = 1; j < V; ++j) mx = std::max(mx, vl.at(r, j));
                    double lse = 0.0;
                    for (int j = 0; j < V; ++j) lse += std::exp(vl.at(r, j) - mx);
                    for (int j = 0; j < V; ++j) {
                      const double p = std::exp(vl.at(r, j) - mx) / lse;
                      gl.at(r, j) += gs * (p - (j == targets[i] ? 1.0 : 0.0));
                    }
                  }
                });
  }

  // Reverse sweep from a scalar node; gradients land in node .grad fields and
  // are folded into every bound Parameter at the end.
  void backward(Var loss) {
    backward_no_fold(loss);
    fold_param_grads();
  }

  // Sweep only; leaf gradients stay on the tape. Lets worker threads run
  // independent graphs and the caller merge into Parameters in a fixed order.
  void backward_no_fold(Var loss) {
    if (!grad_enabled_) throw std::logic_error("backward: tape built with grads disabled");
    Node& ln = nodes_[check(loss)];
    if (ln.value.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    for (auto& n : nodes_) {
      n.grad = Tensor::zeros(n.value.shape);
    }
    ln.grad.at(0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(n.grad, n.value);
    }
  }

  void fold_param_grads() {
    for (auto& n : nodes_) {
      if (!n.bound) continue;
      for (int i = 0; i < n.grad.numel(); ++i) n.bound->grad.at(i) += n.grad.at(i);
    }
  }

  // Gradient of a bound parameter accumulated on this tape (before the fold
  // into Parameter::grad); useful for threaded batch merging.
  Tensor tape_grad(const Parameter& p) const {
    Tensor out = Tensor::zeros(p.value.shape);
    for (const auto& n : nodes_) {
      if (n.bound != &p) continue;
      for (int i = 0; i < out.numel(); ++i) out.at(i) += n.grad.at(i);
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(const Tensor&, const Tensor&)> back;
    Parameter* bound = nullptr;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::logic_error("tape: dangling Var");
    return v.id;
  }

  void accum(Var v, const Tensor& g) {
    Tensor& gx = nodes_[check(v)].grad;
    for (int i = 0; i < g.numel(); ++i) gx.at(i) += g.at(i);
  }

  Var push(Tensor value, Parameter* bound, std::function<void(const Tensor&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.bound = bound;
    if (grad_enabled_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
  int threads_;
};

// ---------------------------------------------------------------------------
// Central-difference gradient check. f(true) must compute the loss and
// accumulate analytic gradients into the given parameters (from zero); f(false)
// evaluates the loss only. Returns max over sampled coordinates of
// |analytic - central| / (|central| + 1e-8).
// ---------------------------------------------------------------------------
inline double grad_check(const std::function<double(bool)>& f, std::vector<Parameter*> params,
                         double step, int samples, Rng& rng) {
  if (params.empty()) throw std::invalid_argument("grad_check: no parameters");
  if (step < 1e-6 || step > 1e-4) throw std::invalid_argument("grad_check: step outside [1e-6, 1e-4]");
  for (Parameter* p : params) p->zero_grad();
  const double base = f(true);
  if (!std::isfinite(base)) throw std::runtime_error("grad_check: non-finite loss");
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    Parameter* p = params[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(params.size())))];
    const int i = rng.uniform_int(p->value.numel());
    const double keep = p->value.at(i);
    p->value.at(i) = keep + step;
    const double up = f(false);
    p->value.at(i) = keep - step;
    const double down = f(false);
    p->value.at(i) = keep;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::runtime_error("grad_check: non-finite loss during perturbation");
    const double numeric = (up - down) / (2.0 * step);
    const double rel = std::abs(p->grad.at(i) - numeric) / (std::abs(numeric) + 1e-8);
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace hiervid

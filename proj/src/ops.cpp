#include "ctrm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace ctrm::ops {

namespace {

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw std::logic_error("operand is not bound to a tape");
  return *v.tape;
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T, via an explicit transpose so the inner loop is an axpy.
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const auto n = b.rows(), k = b.cols();
  Tensor bt({k, n});
  const double* B = b.data().data();
  double* T = bt.data().data();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) T[p * n + j] = B[j * k + p];
  gemm_nn(a, bt, c);
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const auto k = a.rows(), m = a.cols(), n = b.cols();
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = A[p * m + i];
      if (av == 0.0) continue;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

std::size_t bias_width(const Tensor& bias) {
  if (bias.rank() == 1) return bias.size();
  if (bias.rank() == 2 && bias.rows() == 1) return bias.cols();
  throw ShapeError("bias must be [d] or [1 x d], got " + to_string(bias.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  Tensor c({a.rows(), b.cols()});
  gemm_nn(a, b, c);
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor row_softmax(const Tensor& x, Mask mask) {
  require_matrix(x, "row_softmax");
  if (mask == Mask::lower_triangular && x.rows() > x.cols()) {
    throw ShapeError("row_softmax: lower-triangular mask needs rows <= cols, got " + to_string(x.shape()));
  }
  Tensor y(x.shape());
  const auto n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto width = mask == Mask::lower_triangular ? i + 1 : n;
    const auto in = x.row(i);
    auto out = y.row(i);
    const double m = *std::max_element(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(width));
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      out[j] = std::exp(in[j] - m);
      total += out[j];
    }
    for (std::size_t j = 0; j < width; ++j) out[j] /= total;
  }
  return y;
}

Var matmul(Var a, Var b) {
  auto out = matmul(a.value(), b.value());
  return tape_of(a).record("matmul", std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    gemm_nt(g, b.value(), grads.at(a));
    gemm_tn(a.value(), g, grads.at(b));
  });
}

Var transpose(Var a) {
  return tape_of(a).record("transpose", transpose(a.value()), {a}, [a](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    auto& ga = grads.at(a);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] += bd[i];
  return tape_of(a).record("add", std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    grads.add(a, g);
    grads.add(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] -= bd[i];
  return tape_of(a).record("sub", std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    grads.add(a, g);
    auto gb = grads.at(b).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= gd[i];
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  auto od = out.data();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return tape_of(a).record("mul", std::move(out), {a, b}, [a, b](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    auto gd = g.data();
    auto av = a.value().data();
    auto bv = b.value().data();
    {
      auto ga = grads.at(a).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gd[i] * bv[i];
    }
    auto gb = grads.at(b).data();
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gd[i] * av[i];
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= factor;
  return tape_of(a).record("scale", std::move(out), {a}, [a, factor](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    auto ga = grads.at(a).data();
    auto gd = g.data();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * gd[i];
  });
}

Var add_row(Var x, Var bias) {
  const auto& xv = x.value();
  require_matrix(xv, "add_row");
  if (bias_width(bias.value()) != xv.cols()) {
    throw ShapeError("add_row: bias " + to_string(bias.value().shape()) + " does not fit rows of " +
                     to_string(xv.shape()));
  }
  Tensor out = xv;
  auto bd = bias.value().data();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bd[j];
  }
  return tape_of(x).record("add_row", std::move(out), {x, bias},
                           [x, bias](const Tensor&, const Tensor& g, GradientBuffer& grads) {
                             grads.add(x, g);
                             auto gb = grads.at(bias).data();
                             for (std::size_t i = 0; i < g.rows(); ++i) {
                               auto gr = g.row(i);
                               for (std::size_t j = 0; j < gr.size(); ++j) gb[j] += gr[j];
                             }
                           });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return tape_of(x).record("relu", std::move(out), {x}, [x](const Tensor& y, const Tensor& g, GradientBuffer& grads) {
    auto gx = grads.at(x).data();
    auto yd = y.data();
    auto gd = g.data();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (yd[i] > 0.0) gx[i] += gd[i];
  });
}

Var row_softmax(Var x, Mask mask) {
  return tape_of(x).record("row_softmax", row_softmax(x.value(), mask), {x},
                           [x](const Tensor& y, const Tensor& g, GradientBuffer& grads) {
                             auto& gx = grads.at(x);
                             for (std::size_t i = 0; i < y.rows(); ++i) {
                               const auto yr = y.row(i);
                               const auto gr = g.row(i);
                               double dot = 0.0;
                               for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
                               auto out = gx.row(i);
                               for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - dot);
                             }
                           });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& xv = x.value();
  require_matrix(xv, "layer_norm");
  const auto d = xv.cols();
  if (bias_width(gain.value()) != d || bias_width(bias.value()) != d) {
    throw ShapeError("layer_norm: gain " + to_string(gain.value().shape()) + " / bias " +
                     to_string(bias.value().shape()) + " do not fit " + to_string(xv.shape()));
  }
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");

  const auto m = xv.rows();
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(m);
  Tensor out(xv.shape());
  auto gd = gain.value().data();
  auto bd = bias.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = xv.row(i);
    double mu = 0.0;
    for (double v : r) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    auto xh = xhat.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      xh[j] = (r[j] - mu) * inv_std[i];
      o[j] = xh[j] * gd[j] + bd[j];
    }
  }
  return tape_of(x).record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor&, const Tensor& g,
                                                                            GradientBuffer& grads) {
        const auto d = xhat.cols();
        auto gv = gain.value().data();
        auto& gx = grads.at(x);
        auto ggain = grads.at(gain).data();
        auto gbias = grads.at(bias).data();
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < xhat.rows(); ++i) {
          const auto gr = g.row(i);
          const auto xh = xhat.row(i);
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            ggain[j] += gr[j] * xh[j];
            gbias[j] += gr[j];
            dxhat[j] = gr[j] * gv[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          auto out = gx.row(i);
          for (std::size_t j = 0; j < d; ++j) out[j] += inv_std[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      });
}

Var embedding(Var table, std::span<const std::size_t> ids) {
  const auto& tv = table.value();
  require_matrix(tv, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  Tensor out({ids.size(), tv.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  return tape_of(table).record("embedding", std::move(out), {table},
                               [table, ids = std::vector<std::size_t>(ids.begin(), ids.end())](
                                   const Tensor&, const Tensor& g, GradientBuffer& grads) {
                                 auto& gt = grads.at(table);
                                 for (std::size_t i = 0; i < ids.size(); ++i) {
                                   auto dst = gt.row(ids[i]);
                                   auto src = g.row(i);
                                   for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                                 }
                               });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto m = parts[0].value().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_cols");
    if (p.value().rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    total += p.value().cols();
  }
  Tensor out({m, total});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t i = 0; i < m; ++i) std::copy(v.row(i).begin(), v.row(i).end(), out.row(i).begin() + offset);
    offset += v.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record("concat_cols", std::move(out), inputs,
                                  [inputs](const Tensor&, const Tensor& g, GradientBuffer& grads) {
                                    std::size_t offset = 0;
                                    for (const auto& p : inputs) {
                                      auto& gp = grads.at(p);
                                      const auto w = gp.cols();
                                      for (std::size_t i = 0; i < gp.rows(); ++i) {
                                        auto dst = gp.row(i);
                                        auto src = g.row(i);
                                        for (std::size_t j = 0; j < w; ++j) dst[j] += src[offset + j];
                                      }
                                      offset += w;
                                    }
                                  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto n = parts[0].value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p.value(), "concat_rows");
    if (p.value().cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    }
    total += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(total * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record("concat_rows", Tensor({total, n}, std::move(data)), inputs,
                                  [inputs](const Tensor&, const Tensor& g, GradientBuffer& grads) {
                                    std::size_t offset = 0;
                                    auto src = g.data();
                                    for (const auto& p : inputs) {
                                      auto dst = grads.at(p).data();
                                      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[offset + i];
                                      offset += dst.size();
                                    }
                                  });
}

Var add_all(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("add_all: no inputs");
  Tensor out = parts[0].value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require_same_shape("add_all", out, parts[k].value());
    auto od = out.data();
    auto pd = parts[k].value().data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] += pd[i];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape_of(parts[0]).record("add_all", std::move(out), inputs, [inputs](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    for (const auto& p : inputs) grads.add(p, g);
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return tape_of(x).record("sum", Tensor::scalar(total), {x}, [x](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    const double s = g[0];
    for (auto& v : grads.at(x).data()) v += s;
  });
}

Var mean(Var x) {
  const auto n = static_cast<double>(x.value().size());
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return tape_of(x).record("mean", Tensor::scalar(total / n), {x},
                           [x, n](const Tensor&, const Tensor& g, GradientBuffer& grads) {
                             const double s = g[0] / n;
                             for (auto& v : grads.at(x).data()) v += s;
                           });
}

Var mean_rows(Var x) {
  const auto& xv = x.value();
  require_matrix(xv, "mean_rows");
  const auto m = static_cast<double>(xv.rows());
  Tensor out({1, xv.cols()});
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    auto r = xv.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j];
  }
  for (auto& v : out.data()) v /= m;
  return tape_of(x).record("mean_rows", std::move(out), {x}, [x, m](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    auto& gx = grads.at(x);
    for (std::size_t i = 0; i < gx.rows(); ++i) {
      auto dst = gx.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j] / m;
    }
  });
}

Var consecutive_diff(Var x) {
  const auto& xv = x.value();
  require_matrix(xv, "consecutive_diff");
  if (xv.rows() < 2) throw ShapeError("consecutive_diff: needs at least two rows, got " + to_string(xv.shape()));
  Tensor out({xv.rows() - 1, xv.cols()});
  for (std::size_t t = 0; t + 1 < xv.rows(); ++t) {
    auto o = out.row(t);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = xv(t + 1, j) - xv(t, j);
  }
  return tape_of(x).record("consecutive_diff", std::move(out), {x}, [x](const Tensor&, const Tensor& g, GradientBuffer& grads) {
    auto& gx = grads.at(x);
    for (std::size_t t = 0; t < g.rows(); ++t) {
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gx(t + 1, j) += g(t, j);
        gx(t, j) -= g(t, j);
      }
    }
  });
}

Var row_l2_normalize(Var x) {
  const auto& xv = x.value();
  require_matrix(xv, "row_l2_normalize");
  Tensor out(xv.shape());
  std::vector<double> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double sq = 0.0;
    for (double v : xv.row(i)) sq += v * v;
    if (!(sq > 0.0)) throw std::invalid_argument("row_l2_normalize: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(sq);
    auto o = out.row(i);
    auto r = xv.row(i);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] = r[j] / norms[i];
  }
  return tape_of(x).record("row_l2_normalize", std::move(out), {x},
                           [x, norms = std::move(norms)](const Tensor& y, const Tensor& g, GradientBuffer& grads) {
                             auto& gx = grads.at(x);
                             for (std::size_t i = 0; i < y.rows(); ++i) {
                               const auto yr = y.row(i);
                               const auto gr = g.row(i);
                               double dot = 0.0;
                               for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
                               auto dst = gx.row(i);
                               for (std::size_t j = 0; j < yr.size(); ++j) dst[j] += (gr[j] - yr[j] * dot) / norms[i];
                             }
                           });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets, std::size_t ignore_id) {
  const auto& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  if (targets.size() != lv.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     to_string(lv.shape()));
  }
  const auto n = lv.rows();
  const auto v = lv.cols();
  // softmax rows are kept for the backward pass
  Tensor probs(lv.shape());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = lv.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    auto p = probs.row(i);
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(r[j] - m);
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    if (targets[i] == ignore_id) continue;
    if (targets[i] >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[i]) + " outside vocabulary of " +
                              std::to_string(v));
    }
    total += (m + std::log(z)) - r[targets[i]];
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: no scored positions");
  const double denom = static_cast<double>(counted);
  return tape_of(logits).record(
      "cross_entropy", Tensor::scalar(total / denom), {logits},
      [logits, probs = std::move(probs), targets = std::vector<std::size_t>(targets.begin(), targets.end()), ignore_id,
       denom](const Tensor&, const Tensor& g, GradientBuffer& grads) {
        auto& gl = grads.at(logits);
        const double s = g[0] / denom;
        for (std::size_t i = 0; i < targets.size(); ++i) {
          if (targets[i] == ignore_id) continue;
          auto dst = gl.row(i);
          auto p = probs.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * p[j];
          dst[targets[i]] -= s;
        }
      });
}

Var kl_rows(const Tensor& target, Var probs) {
  const auto& q = probs.value();
  require_matrix(q, "kl_rows");
  if (target.shape() != q.shape()) {
    throw ShapeError("kl_rows: target " + to_string(target.shape()) + " vs probabilities " + to_string(q.shape()));
  }
  Tensor p(target.shape());
  std::vector<std::size_t> annotated;
  double total = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double qsum = 0.0;
    for (double x : q.row(i)) qsum += x;
    if (!(qsum > 0.0)) throw std::invalid_argument("kl_rows: probability row " + std::to_string(i) + " sums to zero");
    double mass = 0.0;
    for (double x : target.row(i)) mass += x;
    if (mass == 0.0) continue;
    annotated.push_back(i);
    auto pr = p.row(i);
    const auto tr = target.row(i);
    const auto qr = q.row(i);
    for (std::size_t j = 0; j < pr.size(); ++j) {
      pr[j] = tr[j] / mass;
      if (pr[j] > 0.0) total += pr[j] * (std::log(pr[j]) - std::log(qr[j]));
    }
  }
  if (annotated.empty()) return probs.tape->constant(Tensor::scalar(0.0));
  const double denom = static_cast<double>(annotated.size());
  return tape_of(probs).record(
      "kl_rows", Tensor::scalar(total / denom), {probs},
      [probs, p = std::move(p), annotated = std::move(annotated), denom](const Tensor&, const Tensor& g,
                                                                         GradientBuffer& grads) {
        auto& gq = grads.at(probs);
        const auto& q = probs.value();
        const double s = g[0] / denom;
        for (auto i : annotated) {
          auto dst = gq.row(i);
          auto pr = p.row(i);
          auto qr = q.row(i);
          for (std::size_t j = 0; j < dst.size(); ++j)
            if (pr[j] > 0.0) dst[j] -= s * pr[j] / qr[j];
        }
      });
}

}  // namespace ctrm::ops

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"
#include "saferl/core/rng.hpp"
#include "saferl/core/tensor.hpp"

namespace saferl::nn {

enum class Mode { train, eval, mc };

struct Var {
  std::uint32_t id = 0;
};

// Reverse-mode tape over tensor-valued operations. One tape per forward pass;
// gradients flush into the bound ParamStore on backward(), so several tapes
// (e.g. one per sample in a batch) accumulate into the same parameter grads.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) { nodes_.reserve(1024); }

  bool recording() const { return recording_; }

  const Tensor& value(Var v) const { return nodes_[v.id].val; }

  const Tensor& grad_of(Var v) const {
    if (!recording_) throw UsageError("gradients unavailable on a non-recording tape");
    return nodes_[v.id].grad;
  }

  Var leaf(Tensor v) { return push(std::move(v), {}); }

  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  Var param(ParamStore& store, const std::string& name) {
    for (const Binding& b : bindings_) {
      if (b.store == &store && b.name == name) return Var{b.node};
    }
    Var v = leaf(store.param(name));
    if (recording_) bindings_.push_back({v.id, &store, name});
    return v;
  }

  // ---- elementwise and linear ops ----

  Var add(Var a, Var b) {
    require_same(a, b, "add");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += val(b)[i];
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      auto& gb = t.mut_grad(b);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        ga[i] += n.grad[i];
        gb[i] += n.grad[i];
      }
    });
  }

  Var sub(Var a, Var b) {
    require_same(a, b, "sub");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= val(b)[i];
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      auto& gb = t.mut_grad(b);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        ga[i] += n.grad[i];
        gb[i] -= n.grad[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    require_same(a, b, "mul");
    Tensor out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= val(b)[i];
    return push(std::move(out), [a, b](Tape& t, const Node& n) {
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      auto& ga = t.mut_grad(a);
      auto& gb = t.mut_grad(b);
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        ga[i] += n.grad[i] * vb[i];
        gb[i] += n.grad[i] * va[i];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor out = val(a);
    for (double& x : out.data) x *= s;
    return push(std::move(out), [a, s](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += s * n.grad[i];
    });
  }

  Var add_all(std::vector<Var> xs) {
    if (xs.empty()) throw DimensionError("add_all of empty list");
    Tensor out = val(xs[0]);
    for (std::size_t k = 1; k < xs.size(); ++k) {
      require_same(xs[0], xs[k], "add_all");
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += val(xs[k])[i];
    }
    return push(std::move(out), [xs](Tape& t, const Node& n) {
      for (Var x : xs) {
        auto& gx = t.mut_grad(x);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
      }
    });
  }

  Var matvec(Var w, Var x) {
    const Tensor& W = val(w);
    const Tensor& X = val(x);
    if (W.rank() != 2 || X.rank() != 1 || W.dim(1) != X.dim(0)) {
      throw DimensionError("matvec shape mismatch " + shape_string(W.shape) + " * " + shape_string(X.shape));
    }
    std::size_t m = W.dim(0), n = W.dim(1);
    Tensor out = Tensor::zeros({m});
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = &W.data[i * n];
      for (std::size_t j = 0; j < n; ++j) acc += row[j] * X[j];
      out[i] = acc;
    }
    return push(std::move(out), [w, x, m, n](Tape& t, const Node& nd) {
      const Tensor& W = t.val(w);
      const Tensor& X = t.val(x);
      auto& gw = t.mut_grad(w);
      auto& gx = t.mut_grad(x);
      for (std::size_t i = 0; i < m; ++i) {
        double gi = nd.grad[i];
        if (gi == 0.0) continue;
        const double* row = &W.data[i * n];
        double* grow = &gw.data[i * n];
        for (std::size_t j = 0; j < n; ++j) {
          grow[j] += gi * X[j];
          gx[j] += gi * row[j];
        }
      }
    });
  }

  Var dense(Var w, Var x, Var b) { return add(matvec(w, x), b); }

  Var dot(Var a, Var b) {
    require_same(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < val(a).size(); ++i) acc += val(a)[i] * val(b)[i];
    return push(Tensor::scalar(acc), [a, b](Tape& t, const Node& n) {
      double g = n.grad[0];
      const Tensor& va = t.val(a);
      const Tensor& vb = t.val(b);
      auto& ga = t.mut_grad(a);
      auto& gb = t.mut_grad(b);
      for (std::size_t i = 0; i < va.size(); ++i) {
        ga[i] += g * vb[i];
        gb[i] += g * va[i];
      }
    });
  }

  Var sum(Var a) {
    double acc = 0.0;
    for (double v : val(a).data) acc += v;
    return push(Tensor::scalar(acc), [a](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      for (double& g : ga.data) g += n.grad[0];
    });
  }

  Var mean(Var a) {
    std::size_t n = val(a).size();
    if (n == 0) throw DimensionError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
  }

  Var pick(Var v, std::size_t index) {
    if (index >= val(v).size()) throw DimensionError("pick index out of range");
    return push(Tensor::scalar(val(v)[index]), [v, index](Tape& t, const Node& n) {
      t.mut_grad(v)[index] += n.grad[0];
    });
  }

  Var slice(Var v, std::size_t start, std::size_t len) {
    const Tensor& x = val(v);
    if (start + len > x.size()) throw DimensionError("slice out of range");
    Tensor out = Tensor::zeros({len});
    for (std::size_t i = 0; i < len; ++i) out[i] = x[start + i];
    return push(std::move(out), [v, start, len](Tape& t, const Node& n) {
      auto& gv = t.mut_grad(v);
      for (std::size_t i = 0; i < len; ++i) gv[start + i] += n.grad[i];
    });
  }

  Var concat(std::vector<Var> xs) {
    if (xs.empty()) throw DimensionError("concat of empty list");
    std::size_t total = 0;
    for (Var x : xs) total += val(x).size();
    Tensor out = Tensor::zeros({total});
    std::size_t off = 0;
    for (Var x : xs) {
      for (std::size_t i = 0; i < val(x).size(); ++i) out[off + i] = val(x)[i];
      off += val(x).size();
    }
    return push(std::move(out), [xs](Tape& t, const Node& n) {
      std::size_t off = 0;
      for (Var x : xs) {
        auto& gx = t.mut_grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n.grad[off + i];
        off += gx.size();
      }
    });
  }

  Var reshape(Var v, std::vector<std::size_t> shape) {
    if (Tensor::count(shape) != val(v).size()) throw DimensionError("reshape size mismatch");
    Tensor out(std::move(shape), val(v).data);
    return push(std::move(out), [v](Tape& t, const Node& n) {
      auto& gv = t.mut_grad(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += n.grad.data[i];
    });
  }

  // ---- nonlinearities ----

  Var relu(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Tensor& va = t.val(a);
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < va.size(); ++i) {
        if (va[i] > 0.0) ga[i] += n.grad[i];
      }
    });
  }

  Var sigmoid(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = sigmoid_scalar(x);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < n.val.size(); ++i) {
        double s = n.val[i];
        ga[i] += n.grad[i] * s * (1.0 - s);
      }
    });
  }

  Var tanh_(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = std::tanh(x);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < n.val.size(); ++i) {
        double y = n.val[i];
        ga[i] += n.grad[i] * (1.0 - y * y);
      }
    });
  }

  Var softplus(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Tensor& va = t.val(a);
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < va.size(); ++i) ga[i] += n.grad[i] * sigmoid_scalar(va[i]);
    });
  }

  Var exp_(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = std::exp(x);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < n.val.size(); ++i) ga[i] += n.grad[i] * n.val[i];
    });
  }

  Var log_(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) {
      if (x <= 0.0) throw NumericError("log of non-positive value");
      x = std::log(x);
    }
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Tensor& va = t.val(a);
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < va.size(); ++i) ga[i] += n.grad[i] / va[i];
    });
  }

  Var square(Var a) {
    Tensor out = val(a);
    for (double& x : out.data) x = x * x;
    return push(std::move(out), [a](Tape& t, const Node& n) {
      const Tensor& va = t.val(a);
      auto& ga = t.mut_grad(a);
      for (std::size_t i = 0; i < va.size(); ++i) ga[i] += n.grad[i] * 2.0 * va[i];
    });
  }

  // ---- layers ----

  // Max-subtracted softmax over a rank-1 tensor.
  Var softmax(Var a) {
    const Tensor& x = val(a);
    if (x.rank() != 1 || x.size() == 0) throw DimensionError("softmax needs a non-empty vector");
    Tensor out = softmax_forward(x);
    return push(std::move(out), [a](Tape& t, const Node& n) {
      auto& ga = t.mut_grad(a);
      double inner = 0.0;
      for (std::size_t i = 0; i < n.val.size(); ++i) inner += n.grad[i] * n.val[i];
      for (std::size_t i = 0; i < n.val.size(); ++i) ga[i] += n.val[i] * (n.grad[i] - inner);
    });
  }

  static Tensor softmax_forward(const Tensor& x) {
    Tensor out = x;
    double mx = x[0];
    for (double v : x.data) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = std::exp(x[i] - mx);
      z += out[i];
    }
    for (double& v : out.data) v /= z;
    return out;
  }

  // Soft-masked attention weights: p_i = m_i exp(s_i - smax) / sum_j m_j exp(s_j - smax),
  // with smax taken over entries whose mask is positive. Unit masks reproduce
  // plain softmax bit for bit (the same code path runs with m_i = 1).
  Var masked_softmax(Var scores, Var masks) {
    const Tensor& s = val(scores);
    const Tensor& m = val(masks);
    if (s.rank() != 1 || !s.same_shape(m)) throw DimensionError("masked_softmax shape mismatch");
    if (s.size() == 0) throw DimensionError("masked_softmax of empty span");
    bool any = false;
    double mx = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (m[i] > 0.0) {
        mx = any ? std::max(mx, s[i]) : s[i];
        any = true;
      }
    }
    if (!any) throw NumericError("attention mask is zero everywhere: degenerate distribution");
    Tensor expv = Tensor::zeros(s.shape);
    Tensor out = Tensor::zeros(s.shape);
    double z = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      expv[i] = std::exp(s[i] - mx);
      out[i] = m[i] * expv[i];
      z += out[i];
    }
    for (std::size_t i = 0; i < s.size(); ++i) out[i] /= z;
    for (std::size_t i = 0; i < s.size(); ++i) expv[i] /= z;
    return push(std::move(out), [scores, masks, expv](Tape& t, const Node& n) {
      auto& gs = t.mut_grad(scores);
      auto& gm = t.mut_grad(masks);
      double inner = 0.0;
      for (std::size_t i = 0; i < n.val.size(); ++i) inner += n.grad[i] * n.val[i];
      for (std::size_t i = 0; i < n.val.size(); ++i) {
        gs[i] += n.val[i] * (n.grad[i] - inner);
        gm[i] += expv[i] * (n.grad[i] - inner);
      }
    });
  }

  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& v = val(x);
    if (v.rank() != 1 || v.size() < 2) throw DimensionError("layer_norm needs a vector of length >= 2");
    require_same(x, gamma, "layer_norm gamma");
    require_same(x, beta, "layer_norm beta");
    std::size_t n = v.size();
    double mu = 0.0;
    for (double a : v.data) mu += a;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double a : v.data) var += (a - mu) * (a - mu);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + eps);
    Tensor xhat = Tensor::zeros(v.shape);
    Tensor out = Tensor::zeros(v.shape);
    for (std::size_t i = 0; i < n; ++i) {
      xhat[i] = (v[i] - mu) * inv;
      out[i] = val(gamma)[i] * xhat[i] + val(beta)[i];
    }
    return push(std::move(out), [x, gamma, beta, xhat, inv, n](Tape& t, const Node& nd) {
      const Tensor& g = nd.grad;
      const Tensor& gam = t.val(gamma);
      auto& gx = t.mut_grad(x);
      auto& gg = t.mut_grad(gamma);
      auto& gb = t.mut_grad(beta);
      double sum_gh = 0.0, sum_ghx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double gh = gam[i] * g[i];
        sum_gh += gh;
        sum_ghx += gh * xhat[i];
      }
      double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        double gh = gam[i] * g[i];
        gx[i] += inv * (gh - inv_n * sum_gh - xhat[i] * inv_n * sum_ghx);
        gg[i] += g[i] * xhat[i];
        gb[i] += g[i];
      }
    });
  }

  // Inverted dropout: survivors scaled by 1/(1-p) at train time, eval is the
  // identity. Mode mc re-samples masks at inference for MC-dropout.
  Var dropout(Var x, double p, Mode mode, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) throw ParameterError("dropout rate must lie in [0, 1)");
    if (mode == Mode::eval || p == 0.0) {
      // identity; consumes no draws
      Tensor out = val(x);
      return push(std::move(out), [x](Tape& t, const Node& n) {
        auto& gx = t.mut_grad(x);
        for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i];
      });
    }
    double keep = 1.0 - p;
    std::vector<double> mask(val(x).size());
    for (double& m : mask) m = (rng.uniform() >= p) ? 1.0 / keep : 0.0;
    Tensor out = val(x);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return push(std::move(out), [x, mask](Tape& t, const Node& n) {
      auto& gx = t.mut_grad(x);
      for (std::size_t i = 0; i < n.grad.size(); ++i) gx[i] += n.grad[i] * mask[i];
    });
  }

  // Valid cross-correlation: image [c,h,w] * filters [f,c,k,k] -> [f,h-k+1,w-k+1].
  Var conv2d(Var image, Var filters) {
    const Tensor& img = val(image);
    const Tensor& flt = val(filters);
    if (img.rank() != 3 || flt.rank() != 4) throw DimensionError("conv2d expects image rank 3, filters rank 4");
    std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    std::size_t f = flt.dim(0), fc = flt.dim(1), k = flt.dim(2);
    if (flt.dim(3) != k) throw DimensionError("conv2d filters must be square");
    if (fc != c) throw DimensionError("conv2d channel mismatch");
    if (k > h || k > w) throw DimensionError("conv2d filter larger than image");
    std::size_t oh = h - k + 1, ow = w - k + 1;
    Tensor out = Tensor::zeros({f, oh, ow});
    for (std::size_t o = 0; o < f; ++o) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* fbase = &flt.data[((o * c) + ci) * k * k];
        const double* ibase = &img.data[ci * h * w];
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            double acc = 0.0;
            for (std::size_t u = 0; u < k; ++u) {
              for (std::size_t v = 0; v < k; ++v) acc += ibase[(i + u) * w + (j + v)] * fbase[u * k + v];
            }
            out.data[(o * oh + i) * ow + j] += acc;
          }
        }
      }
    }
    return push(std::move(out), [image, filters, c, h, w, f, k, oh, ow](Tape& t, const Node& n) {
      const Tensor& img = t.val(image);
      const Tensor& flt = t.val(filters);
      auto& gi = t.mut_grad(image);
      auto& gf = t.mut_grad(filters);
      for (std::size_t o = 0; o < f; ++o) {
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            double g = n.grad.data[(o * oh + i) * ow + j];
            if (g == 0.0) continue;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const double* fbase = &flt.data[((o * c) + ci) * k * k];
              const double* ibase = &img.data[ci * h * w];
              double* gfb = &gf.data[((o * c) + ci) * k * k];
              double* gib = &gi.data[ci * h * w];
              for (std::size_t u = 0; u < k; ++u) {
                for (std::size_t v = 0; v < k; ++v) {
                  gfb[u * k + v] += g * ibase[(i + u) * w + (j + v)];
                  gib[(i + u) * w + (j + v)] += g * fbase[u * k + v];
                }
              }
            }
          }
        }
      }
    });
  }

  Var conv2d(Var image, Var filters, Var bias) {
    Var y = conv2d(image, filters);
    const Tensor& b = val(bias);
    const Tensor& yv = val(y);
    if (b.rank() != 1 || b.dim(0) != yv.dim(0)) throw DimensionError("conv2d bias must have one entry per filter");
    std::size_t f = yv.dim(0), plane = yv.dim(1) * yv.dim(2);
    Tensor out = yv;
    for (std::size_t o = 0; o < f; ++o) {
      for (std::size_t i = 0; i < plane; ++i) out.data[o * plane + i] += b[o];
    }
    return push(std::move(out), [y, bias, f, plane](Tape& t, const Node& n) {
      auto& gy = t.mut_grad(y);
      auto& gb = t.mut_grad(bias);
      for (std::size_t o = 0; o < f; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < plane; ++i) {
          gy.data[o * plane + i] += n.grad.data[o * plane + i];
          acc += n.grad.data[o * plane + i];
        }
        gb[o] += acc;
      }
    });
  }

  // 2x2 max-pool with stride 2; trailing odd row/column is dropped.
  Var maxpool2(Var image) {
    const Tensor& img = val(image);
    if (img.rank() != 3) throw DimensionError("maxpool2 expects rank-3 image");
    std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    if (h < 2 || w < 2) throw DimensionError("maxpool2 needs height and width >= 2");
    std::size_t oh = h / 2, ow = w / 2;
    Tensor out = Tensor::zeros({c, oh, ow});
    std::vector<std::size_t> arg(c * oh * ow);
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* ibase = &img.data[ci * h * w];
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          std::size_t best = (2 * i) * w + 2 * j;
          double bv = ibase[best];
          const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1, (2 * i + 1) * w + 2 * j, (2 * i + 1) * w + 2 * j + 1};
          for (std::size_t idx : cand) {
            if (ibase[idx] > bv) {
              bv = ibase[idx];
              best = idx;
            }
          }
          out.data[(ci * oh + i) * ow + j] = bv;
          arg[(ci * oh + i) * ow + j] = ci * h * w + best;
        }
      }
    }
    return push(std::move(out), [image, arg](Tape& t, const Node& n) {
      auto& gi = t.mut_grad(image);
      for (std::size_t i = 0; i < arg.size(); ++i) gi.data[arg[i]] += n.grad.data[i];
    });
  }

  // ---- attention helpers ----

  // s_i = scale * q . (k_i + p_i) over a causal span of keys.
  Var span_scores(Var q, const std::vector<Var>& keys, const std::vector<Tensor>& pos, double scale) {
    if (keys.empty()) throw DimensionError("span_scores over empty span");
    if (keys.size() != pos.size()) throw DimensionError("span_scores needs one positional code per key");
    const Tensor& qv = val(q);
    Tensor out = Tensor::zeros({keys.size()});
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const Tensor& kv = val(keys[i]);
      if (!kv.same_shape(qv) || !pos[i].same_shape(qv)) throw DimensionError("span_scores dimension mismatch");
      double acc = 0.0;
      for (std::size_t j = 0; j < qv.size(); ++j) acc += qv[j] * (kv[j] + pos[i][j]);
      out[i] = scale * acc;
    }
    auto keys_copy = keys;
    auto pos_copy = pos;
    return push(std::move(out), [q, keys_copy, pos_copy, scale](Tape& t, const Node& n) {
      const Tensor& qv = t.val(q);
      auto& gq = t.mut_grad(q);
      for (std::size_t i = 0; i < keys_copy.size(); ++i) {
        double g = scale * n.grad[i];
        if (g == 0.0) continue;
        const Tensor& kv = t.val(keys_copy[i]);
        auto& gk = t.mut_grad(keys_copy[i]);
        for (std::size_t j = 0; j < qv.size(); ++j) {
          gq[j] += g * (kv[j] + pos_copy[i][j]);
          gk[j] += g * qv[j];
        }
      }
    });
  }

  // Soft span mask m(dist) = clamp((R + z - dist) / R, 0, 1) for each distance.
  Var span_mask(Var z, const std::vector<int>& distances, double ramp) {
    if (ramp <= 0.0) throw ParameterError("span mask ramp must be positive");
    const Tensor& zv = val(z);
    if (zv.size() != 1) throw DimensionError("span_mask expects scalar z");
    Tensor out = Tensor::zeros({distances.size()});
    for (std::size_t i = 0; i < distances.size(); ++i) {
      double m = (ramp + zv[0] - static_cast<double>(distances[i])) / ramp;
      out[i] = std::clamp(m, 0.0, 1.0);
    }
    return push(std::move(out), [z, ramp](Tape& t, const Node& n) {
      auto& gz = t.mut_grad(z);
      double acc = 0.0;
      for (std::size_t i = 0; i < n.val.size(); ++i) {
        if (n.val[i] > 0.0 && n.val[i] < 1.0) acc += n.grad[i] / ramp;
      }
      gz[0] += acc;
    });
  }

  // y = sum_i w_i * v_i for vector-valued v_i.
  Var weighted_sum(Var weights, const std::vector<Var>& values) {
    const Tensor& wv = val(weights);
    if (wv.rank() != 1 || wv.size() != values.size()) throw DimensionError("weighted_sum needs one weight per value");
    if (values.empty()) throw DimensionError("weighted_sum of empty span");
    Tensor out = Tensor::zeros(val(values[0]).shape);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Tensor& vi = val(values[i]);
      if (!vi.same_shape(out)) throw DimensionError("weighted_sum value shapes differ");
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += wv[i] * vi[j];
    }
    auto values_copy = values;
    return push(std::move(out), [weights, values_copy](Tape& t, const Node& n) {
      const Tensor& wv = t.val(weights);
      auto& gw = t.mut_grad(weights);
      for (std::size_t i = 0; i < values_copy.size(); ++i) {
        const Tensor& vi = t.val(values_copy[i]);
        auto& gv = t.mut_grad(values_copy[i]);
        double acc = 0.0;
        for (std::size_t j = 0; j < n.grad.size(); ++j) {
          acc += n.grad[j] * vi[j];
          gv[j] += n.grad[j] * wv[i];
        }
        gw[i] += acc;
      }
    });
  }

  // ---- loss heads ----

  Var bce_with_logits(Var logit, double target) {
    const Tensor& s = val(logit);
    if (s.size() != 1) throw DimensionError("bce_with_logits expects scalar logit");
    if (target < 0.0 || target > 1.0) throw ParameterError("bce target must lie in [0, 1]");
    double x = s[0];
    double loss = std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
    return push(Tensor::scalar(loss), [logit, target](Tape& t, const Node& n) {
      double x = t.val(logit)[0];
      t.mut_grad(logit)[0] += n.grad[0] * (sigmoid_scalar(x) - target);
    });
  }

  // Jensen-Shannon divergence of distribution node p against constant q,
  // natural log, bounded by ln 2.
  Var js_to_target(Var p, const Tensor& q) {
    const Tensor& pv = val(p);
    if (pv.rank() != 1 || !pv.same_shape(q)) throw DimensionError("js_to_target shape mismatch");
    double js = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      double m = 0.5 * (pv[i] + q[i]);
      if (pv[i] > 0.0) js += 0.5 * pv[i] * std::log(pv[i] / m);
      if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
    }
    Tensor qc = q;
    return push(Tensor::scalar(std::max(js, 0.0)), [p, qc](Tape& t, const Node& n) {
      const Tensor& pv = t.val(p);
      auto& gp = t.mut_grad(p);
      for (std::size_t i = 0; i < pv.size(); ++i) {
        double m = 0.5 * (pv[i] + qc[i]);
        if (pv[i] > 0.0 && m > 0.0) gp[i] += n.grad[0] * 0.5 * std::log(pv[i] / m);
      }
    });
  }

  // ---- driver ----

  void backward(Var root) {
    if (!recording_) throw UsageError("backward on a non-recording tape");
    if (backward_done_) throw UsageError("backward may run once per tape");
    Node& r = nodes_[root.id];
    if (r.val.size() != 1) throw DimensionError("backward root must be scalar");
    backward_done_ = true;
    r.grad[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.pull) n.pull(*this, n);
    }
    for (const Binding& b : bindings_) {
      Tensor& g = b.store->grad(b.name);
      const Tensor& local = nodes_[b.node].grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += local[i];
    }
  }

  void reset() {
    nodes_.clear();
    bindings_.clear();
    backward_done_ = false;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&, const Node&)> pull;
  };

  struct Binding {
    std::uint32_t node;
    ParamStore* store;
    std::string name;
  };

  static double sigmoid_scalar(double x) {
    if (x >= 0.0) {
      double e = std::exp(-x);
      return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
  }

  const Tensor& val(Var v) const { return nodes_[v.id].val; }

  Tensor& mut_grad(Var v) { return nodes_[v.id].grad; }

  void require_same(Var a, Var b, const char* op) const {
    if (!val(a).same_shape(val(b))) {
      throw DimensionError(std::string(op) + " shape mismatch " + shape_string(val(a).shape) + " vs " +
                           shape_string(val(b).shape));
    }
  }

  Var push(Tensor value, std::function<void(Tape&, const Node&)> pull) {
    Node n;
    n.val = std::move(value);
    if (recording_) {
      n.grad = Tensor::zeros(n.val.shape);
      n.pull = std::move(pull);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  bool recording_;
  bool backward_done_ = false;
};

}  // namespace saferl::nn

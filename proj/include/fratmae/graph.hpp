#ifndef FRATMAE_GRAPH_HPP
#define FRATMAE_GRAPH_HPP

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "fratmae/tensor.hpp"

namespace fratmae::nn {

using fratmae::Shape;
using fratmae::ShapeError;
using fratmae::Tensor;

namespace detail {

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Map = Eigen::Map<EigenMat<S>>;
template <typename S>
using ConstMap = Eigen::Map<const EigenMat<S>>;

// Direct 3-D convolution, stride 1, "same" padding for odd kernels.
// x: [Ci, Z, Y, X], w: [Co, Ci, kz, ky, kx], out: [Co, Z, Y, X].
template <typename S>
void conv3d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Tensor<S>& out) {
  const int ci_n = x.shape[0], Z = x.shape[1], Y = x.shape[2], X = x.shape[3];
  const int co_n = w.shape[0], kz = w.shape[2], ky = w.shape[3], kx = w.shape[4];
  const int pz = kz / 2, py = ky / 2, px = kx / 2;
  const int64_t vol = static_cast<int64_t>(Z) * Y * X;
  for (int co = 0; co < co_n; ++co) {
    S* o = out.v.data() + co * vol;
    std::fill(o, o + vol, b.v[co]);
  }
  for (int co = 0; co < co_n; ++co) {
    for (int ci = 0; ci < ci_n; ++ci) {
      const S* in = x.v.data() + static_cast<int64_t>(ci) * vol;
      S* o = out.v.data() + static_cast<int64_t>(co) * vol;
      const S* wslab = w.v.data() + ((static_cast<int64_t>(co) * ci_n + ci) * kz) * ky * kx;
      for (int dz = 0; dz < kz; ++dz) {
        const int z0 = std::max(0, pz - dz), z1 = std::min(Z, Z + pz - dz);
        for (int dy = 0; dy < ky; ++dy) {
          const int y0 = std::max(0, py - dy), y1 = std::min(Y, Y + py - dy);
          for (int dx = 0; dx < kx; ++dx) {
            const S wv = wslab[(dz * ky + dy) * kx + dx];
            if (wv == S(0)) continue;
            const int x0 = std::max(0, px - dx), x1 = std::min(X, X + px - dx);
            for (int z = z0; z < z1; ++z) {
              const int64_t zin = z + dz - pz;
              for (int y = y0; y < y1; ++y) {
                const int64_t yin = y + dy - py;
                S* orow = o + (static_cast<int64_t>(z) * Y + y) * X;
                const S* irow = in + (zin * Y + yin) * X + (dx - px);
                for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * irow[xx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void conv3d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gout,
                     Tensor<S>* gx, Tensor<S>* gw, Tensor<S>* gb) {
  const int ci_n = x.shape[0], Z = x.shape[1], Y = x.shape[2], X = x.shape[3];
  const int co_n = w.shape[0], kz = w.shape[2], ky = w.shape[3], kx = w.shape[4];
  const int pz = kz / 2, py = ky / 2, px = kx / 2;
  const int64_t vol = static_cast<int64_t>(Z) * Y * X;
  if (gb) {
    for (int co = 0; co < co_n; ++co) {
      const S* g = gout.v.data() + co * vol;
      S acc = 0;
      for (int64_t i = 0; i < vol; ++i) acc += g[i];
      gb->v[co] += acc;
    }
  }
  for (int co = 0; co < co_n; ++co) {
    const S* g = gout.v.data() + static_cast<int64_t>(co) * vol;
    for (int ci = 0; ci < ci_n; ++ci) {
      const S* in = x.v.data() + static_cast<int64_t>(ci) * vol;
      S* gi = gx ? gx->v.data() + static_cast<int64_t>(ci) * vol : nullptr;
      const int64_t wbase = ((static_cast<int64_t>(co) * ci_n + ci) * kz) * ky * kx;
      for (int dz = 0; dz < kz; ++dz) {
        const int z0 = std::max(0, pz - dz), z1 = std::min(Z, Z + pz - dz);
        for (int dy = 0; dy < ky; ++dy) {
          const int y0 = std::max(0, py - dy), y1 = std::min(Y, Y + py - dy);
          for (int dx = 0; dx < kx; ++dx) {
            const int x0 = std::max(0, px - dx), x1 = std::min(X, X + px - dx);
            const S wv = w.v[wbase + (dz * ky + dy) * kx + dx];
            S wacc = 0;
            for (int z = z0; z < z1; ++z) {
              const int64_t zin = z + dz - pz;
              for (int y = y0; y < y1; ++y) {
                const int64_t yin = y + dy - py;
                const S* grow = g + (static_cast<int64_t>(z) * Y + y) * X;
                const int64_t ibase = (zin * Y + yin) * X + (dx - px);
                const S* irow = in + ibase;
                if (gi) {
                  S* girow = gi + ibase;
                  for (int xx = x0; xx < x1; ++xx) girow[xx] += wv * grow[xx];
                }
                if (gw)
                  for (int xx = x0; xx < x1; ++xx) wacc += irow[xx] * grow[xx];
              }
            }
            if (gw) gw->v[wbase + (dz * ky + dy) * kx + dx] += wacc;
          }
        }
      }
    }
  }
}

// Transposed convolution with kernel == stride (non-overlapping upsample).
// x: [Ci, Z, Y, X], w: [Co, Ci, fz, fy, fx], out: [Co, Z*fz, Y*fy, X*fx].
template <typename S>
void upconv3d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Tensor<S>& out) {
  const int ci_n = x.shape[0], Z = x.shape[1], Y = x.shape[2], X = x.shape[3];
  const int co_n = w.shape[0], fz = w.shape[2], fy = w.shape[3], fx = w.shape[4];
  const int Zo = Z * fz, Yo = Y * fy, Xo = X * fx;
  const int64_t ovol = static_cast<int64_t>(Zo) * Yo * Xo;
  const int64_t ivol = static_cast<int64_t>(Z) * Y * X;
  for (int co = 0; co < co_n; ++co) {
    S* o = out.v.data() + co * ovol;
    std::fill(o, o + ovol, b.v[co]);
  }
  for (int co = 0; co < co_n; ++co) {
    S* o = out.v.data() + static_cast<int64_t>(co) * ovol;
    for (int ci = 0; ci < ci_n; ++ci) {
      const S* in = x.v.data() + static_cast<int64_t>(ci) * ivol;
      const S* wslab = w.v.data() + ((static_cast<int64_t>(co) * ci_n + ci) * fz) * fy * fx;
      for (int oz = 0; oz < fz; ++oz)
        for (int oy = 0; oy < fy; ++oy)
          for (int ox = 0; ox < fx; ++ox) {
            const S wv = wslab[(oz * fy + oy) * fx + ox];
            for (int z = 0; z < Z; ++z)
              for (int y = 0; y < Y; ++y) {
                const S* irow = in + (static_cast<int64_t>(z) * Y + y) * X;
                S* orow = o + (static_cast<int64_t>(z * fz + oz) * Yo + (y * fy + oy)) * Xo + ox;
                for (int xx = 0; xx < X; ++xx) orow[static_cast<int64_t>(xx) * fx] += wv * irow[xx];
              }
          }
    }
  }
}

template <typename S>
void upconv3d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gout,
                       Tensor<S>* gx, Tensor<S>* gw, Tensor<S>* gb) {
  const int ci_n = x.shape[0], Z = x.shape[1], Y = x.shape[2], X = x.shape[3];
  const int co_n = w.shape[0], fz = w.shape[2], fy = w.shape[3], fx = w.shape[4];
  const int Zo = Z * fz, Yo = Y * fy, Xo = X * fx;
  const int64_t ovol = static_cast<int64_t>(Zo) * Yo * Xo;
  const int64_t ivol = static_cast<int64_t>(Z) * Y * X;
  if (gb) {
    for (int co = 0; co < co_n; ++co) {
      const S* g = gout.v.data() + co * ovol;
      S acc = 0;
      for (int64_t i = 0; i < ovol; ++i) acc += g[i];
      gb->v[co] += acc;
    }
  }
  for (int co = 0; co < co_n; ++co) {
    const S* g = gout.v.data() + static_cast<int64_t>(co) * ovol;
    for (int ci = 0; ci < ci_n; ++ci) {
      const S* in = x.v.data() + static_cast<int64_t>(ci) * ivol;
      S* gi = gx ? gx->v.data() + static_cast<int64_t>(ci) * ivol : nullptr;
      const int64_t wbase = ((static_cast<int64_t>(co) * ci_n + ci) * fz) * fy * fx;
      for (int oz = 0; oz < fz; ++oz)
        for (int oy = 0; oy < fy; ++oy)
          for (int ox = 0; ox < fx; ++ox) {
            const S wv = w.v[wbase + (oz * fy + oy) * fx + ox];
            S wacc = 0;
            for (int z = 0; z < Z; ++z)
              for (int y = 0; y < Y; ++y) {
                const int64_t ibase = (static_cast<int64_t>(z) * Y + y) * X;
                const S* grow = g + (static_cast<int64_t>(z * fz + oz) * Yo + (y * fy + oy)) * Xo + ox;
                if (gi)
                  for (int xx = 0; xx < X; ++xx) gi[ibase + xx] += wv * grow[static_cast<int64_t>(xx) * fx];
                if (gw)
                  for (int xx = 0; xx < X; ++xx) wacc += in[ibase + xx] * grow[static_cast<int64_t>(xx) * fx];
              }
            if (gw) gw->v[wbase + (oz * fy + oy) * fx + ox] += wacc;
          }
    }
  }
}

}  // namespace detail

// Tape-based reverse-mode autodiff over dense tensors. A Graph is built per
// training step and discarded; parameters live outside (see params.hpp).
// Nodes are created in topological order, so backward() is a reverse sweep.
// Storage is a deque so references returned by value()/grad() stay valid
// while further nodes are pushed.
template <typename S>
class Graph {
 public:
  using Var = int;

  Var constant(Tensor<S> t) { return push(std::move(t), false, {}); }
  Var leaf(Tensor<S> t) { return push(std::move(t), true, {}); }

  const Tensor<S>& value(Var v) const { return nodes_[check(v)].val; }
  const Tensor<S>& grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.rg) throw ShapeError("grad requested for a non-differentiable node");
    return n.grad;
  }
  bool requires_grad(Var v) const { return nodes_[check(v)].rg; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Tensor<S> out = val(a);
    const Tensor<S>& bb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out.v[i] += bb.v[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += g.v[i];
      if (rg(b))
        for (int64_t i = 0; i < g.numel(); ++i) gref(b).v[i] += g.v[i];
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Tensor<S> out = val(a);
    const Tensor<S>& bb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out.v[i] -= bb.v[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += g.v[i];
      if (rg(b))
        for (int64_t i = 0; i < g.numel(); ++i) gref(b).v[i] -= g.v[i];
    });
  }

  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    Tensor<S> out = val(a);
    const Tensor<S>& bb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out.v[i] *= bb.v[i];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      const Tensor<S>& av = val(a);
      const Tensor<S>& bv = val(b);
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += g.v[i] * bv.v[i];
      if (rg(b))
        for (int64_t i = 0; i < g.numel(); ++i) gref(b).v[i] += g.v[i] * av.v[i];
    });
  }

  Var scale(Var a, double c) {
    Tensor<S> out = val(a);
    for (auto& x : out.v) x = static_cast<S>(x * c);
    return push(std::move(out), rg(a), [this, a, c](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += static_cast<S>(g.v[i] * c);
    });
  }

  // y = a * s with s a 1-element variable (learnable temperature path).
  Var mul_scalar_var(Var a, Var s) {
    if (val(s).numel() != 1) throw ShapeError("mul_scalar_var: scalar operand must have 1 element");
    const S sv = val(s).v[0];
    Tensor<S> out = val(a);
    for (auto& x : out.v) x *= sv;
    return push(std::move(out), rg(a) || rg(s), [this, a, s](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      const S sv2 = val(s).v[0];
      const Tensor<S>& av = val(a);
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += g.v[i] * sv2;
      if (rg(s)) {
        S acc = 0;
        for (int64_t i = 0; i < g.numel(); ++i) acc += g.v[i] * av.v[i];
        gref(s).v[0] += acc;
      }
    });
  }

  Var exp(Var a) {
    Tensor<S> out = val(a);
    for (auto& x : out.v) x = std::exp(x);
    return push(std::move(out), rg(a), [this, a](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      const Tensor<S>& yv = nodes_[y].val;
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i) gref(a).v[i] += g.v[i] * yv.v[i];
    });
  }

  Var relu(Var a) {
    Tensor<S> out = val(a);
    for (auto& x : out.v) x = x > S(0) ? x : S(0);
    return push(std::move(out), rg(a), [this, a](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      const Tensor<S>& av = val(a);
      if (rg(a))
        for (int64_t i = 0; i < g.numel(); ++i)
          if (av.v[i] > S(0)) gref(a).v[i] += g.v[i];
    });
  }

  // Exact GELU: x * Phi(x).
  Var gelu(Var a) {
    Tensor<S> out = val(a);
    for (auto& x : out.v) {
      const double xd = static_cast<double>(x);
      x = static_cast<S>(xd * 0.5 * (1.0 + std::erf(xd * M_SQRT1_2)));
    }
    return push(std::move(out), rg(a), [this, a](Var y) {
      const Tensor<S>& g = nodes_[y].grad;
      const Tensor<S>& av = val(a);
      if (!rg(a)) return;
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double x = static_cast<double>(av.v[i]);
        const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        gref(a).v[i] += static_cast<S>(static_cast<double>(g.v[i]) * (phi + x * pdf));
      }
    });
  }

  // ---- 2-D linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& B = val(b);
    A.require_2d();
    B.require_2d();
    if (A.cols() != B.rows())
      throw ShapeError("matmul: " + shape_str(A.shape) + " x " + shape_str(B.shape));
    Tensor<S> out({A.rows(), B.cols()});
    detail::Map<S>(out.v.data(), out.rows(), out.cols()) =
        detail::ConstMap<S>(A.v.data(), A.rows(), A.cols()) *
        detail::ConstMap<S>(B.v.data(), B.rows(), B.cols());
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      const Tensor<S>& A2 = val(a);
      const Tensor<S>& B2 = val(b);
      detail::ConstMap<S> g(G.v.data(), G.rows(), G.cols());
      if (rg(a)) {
        detail::Map<S> ga(gref(a).v.data(), A2.rows(), A2.cols());
        ga.noalias() += g * detail::ConstMap<S>(B2.v.data(), B2.rows(), B2.cols()).transpose();
      }
      if (rg(b)) {
        detail::Map<S> gb(gref(b).v.data(), B2.rows(), B2.cols());
        gb.noalias() += detail::ConstMap<S>(A2.v.data(), A2.rows(), A2.cols()).transpose() * g;
      }
    });
  }

  Var transpose(Var a) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    Tensor<S> out({A.cols(), A.rows()});
    for (int r = 0; r < A.rows(); ++r)
      for (int c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      Tensor<S>& ga = gref(a);
      for (int r = 0; r < G.rows(); ++r)
        for (int c = 0; c < G.cols(); ++c) ga.at(c, r) += G.at(r, c);
    });
  }

  // Broadcast a [n] (or [1,n]) bias over the rows of a [m,n] matrix.
  Var add_rowvec(Var a, Var b) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& B = val(b);
    A.require_2d();
    if (B.numel() != A.cols()) throw ShapeError("add_rowvec: bias length != cols");
    Tensor<S> out = A;
    for (int r = 0; r < A.rows(); ++r)
      for (int c = 0; c < A.cols(); ++c) out.at(r, c) += B.v[c];
    return push(std::move(out), rg(a) || rg(b), [this, a, b](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      if (rg(a))
        for (int64_t i = 0; i < G.numel(); ++i) gref(a).v[i] += G.v[i];
      if (rg(b)) {
        Tensor<S>& gb = gref(b);
        for (int r = 0; r < G.rows(); ++r)
          for (int c = 0; c < G.cols(); ++c) gb.v[c] += G.at(r, c);
      }
    });
  }

  // ---- structural ----

  Var reshape(Var a, Shape sh) {
    if (numel_of(sh) != val(a).numel()) throw ShapeError("reshape: element count mismatch");
    Tensor<S> out(std::move(sh), val(a).v);
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      for (int64_t i = 0; i < G.numel(); ++i) gref(a).v[i] += G.v[i];
    });
  }

  Var slice_rows(Var a, int r0, int n) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    if (r0 < 0 || n < 0 || r0 + n > A.rows()) throw ShapeError("slice_rows out of range");
    Tensor<S> out({n, A.cols()});
    std::copy(A.v.begin() + static_cast<int64_t>(r0) * A.cols(),
              A.v.begin() + static_cast<int64_t>(r0 + n) * A.cols(), out.v.begin());
    return push(std::move(out), rg(a), [this, a, r0](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      Tensor<S>& ga = gref(a);
      const int cols = G.cols();
      for (int r = 0; r < G.rows(); ++r)
        for (int c = 0; c < cols; ++c) ga.at(r0 + r, c) += G.at(r, c);
    });
  }

  Var slice_cols(Var a, int c0, int n) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    if (c0 < 0 || n < 0 || c0 + n > A.cols()) throw ShapeError("slice_cols out of range");
    Tensor<S> out({A.rows(), n});
    for (int r = 0; r < A.rows(); ++r)
      for (int c = 0; c < n; ++c) out.at(r, c) = A.at(r, c0 + c);
    return push(std::move(out), rg(a), [this, a, c0](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      Tensor<S>& ga = gref(a);
      for (int r = 0; r < G.rows(); ++r)
        for (int c = 0; c < G.cols(); ++c) ga.at(r, c0 + c) += G.at(r, c);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty");
    const int cols = val(parts[0]).cols();
    int rows = 0;
    bool any_rg = false;
    for (Var p : parts) {
      if (val(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
      rows += val(p).rows();
      any_rg = any_rg || rg(p);
    }
    Tensor<S> out({rows, cols});
    int64_t off = 0;
    for (Var p : parts) {
      const Tensor<S>& P = val(p);
      std::copy(P.v.begin(), P.v.end(), out.v.begin() + off);
      off += P.numel();
    }
    return push(std::move(out), any_rg, [this, parts](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      int64_t off2 = 0;
      for (Var p : parts) {
        const int64_t n = val(p).numel();
        if (rg(p)) {
          Tensor<S>& gp = gref(p);
          for (int64_t i = 0; i < n; ++i) gp.v[i] += G.v[off2 + i];
        }
        off2 += n;
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    bool any_rg = false;
    for (Var p : parts) {
      if (val(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
      cols += val(p).cols();
      any_rg = any_rg || rg(p);
    }
    Tensor<S> out({rows, cols});
    int c0 = 0;
    for (Var p : parts) {
      const Tensor<S>& P = val(p);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < P.cols(); ++c) out.at(r, c0 + c) = P.at(r, c);
      c0 += P.cols();
    }
    return push(std::move(out), any_rg, [this, parts](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      int c0b = 0;
      for (Var p : parts) {
        const Tensor<S>& P = val(p);
        if (rg(p)) {
          Tensor<S>& gp = gref(p);
          for (int r = 0; r < G.rows(); ++r)
            for (int c = 0; c < P.cols(); ++c) gp.at(r, c) += G.at(r, c0b + c);
        }
        c0b += P.cols();
      }
    });
  }

  Var gather_rows(Var a, std::vector<int> idx) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    for (int i : idx)
      if (i < 0 || i >= A.rows()) throw ShapeError("gather_rows: index out of range");
    Tensor<S> out({static_cast<int>(idx.size()), A.cols()});
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < A.cols(); ++c) out.at(static_cast<int>(r), c) = A.at(idx[r], c);
    return push(std::move(out), rg(a), [this, a, idx = std::move(idx)](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      Tensor<S>& ga = gref(a);
      for (size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < G.cols(); ++c) ga.at(idx[r], c) += G.at(static_cast<int>(r), c);
    });
  }

  // Restore a full sequence: rows listed in idx_map come from `a` in order,
  // every other row is `fill` (a [1,n] learned token).
  Var assemble_rows(Var a, Var fill, const std::vector<int>& idx_map, int total_rows) {
    const Tensor<S>& A = val(a);
    const Tensor<S>& F = val(fill);
    A.require_2d();
    if (F.numel() != A.cols()) throw ShapeError("assemble_rows: fill width mismatch");
    if (static_cast<int>(idx_map.size()) != A.rows())
      throw ShapeError("assemble_rows: index map size != rows");
    Tensor<S> out({total_rows, A.cols()});
    std::vector<char> taken(static_cast<size_t>(total_rows), 0);
    for (size_t r = 0; r < idx_map.size(); ++r) {
      const int dst = idx_map[r];
      if (dst < 0 || dst >= total_rows) throw ShapeError("assemble_rows: index out of range");
      taken[dst] = 1;
      for (int c = 0; c < A.cols(); ++c) out.at(dst, c) = A.at(static_cast<int>(r), c);
    }
    for (int r = 0; r < total_rows; ++r)
      if (!taken[r])
        for (int c = 0; c < A.cols(); ++c) out.at(r, c) = F.v[c];
    return push(std::move(out), rg(a) || rg(fill),
                [this, a, fill, idx_map, total_rows](Var y) {
                  const Tensor<S>& G = nodes_[y].grad;
                  std::vector<char> taken(static_cast<size_t>(total_rows), 0);
                  for (int dst : idx_map) taken[dst] = 1;
                  if (rg(a)) {
                    Tensor<S>& ga = gref(a);
                    for (size_t r = 0; r < idx_map.size(); ++r)
                      for (int c = 0; c < G.cols(); ++c)
                        ga.at(static_cast<int>(r), c) += G.at(idx_map[r], c);
                  }
                  if (rg(fill)) {
                    Tensor<S>& gf = gref(fill);
                    for (int r = 0; r < total_rows; ++r)
                      if (!taken[r])
                        for (int c = 0; c < G.cols(); ++c) gf.v[c] += G.at(r, c);
                  }
                });
  }

  // ---- normalizations and softmax ----

  Var softmax_rows(Var a) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    Tensor<S> out = A;
    for (int r = 0; r < A.rows(); ++r) {
      S mx = out.at(r, 0);
      for (int c = 1; c < A.cols(); ++c) mx = std::max(mx, out.at(r, c));
      S sum = 0;
      for (int c = 0; c < A.cols(); ++c) {
        out.at(r, c) = std::exp(out.at(r, c) - mx);
        sum += out.at(r, c);
      }
      for (int c = 0; c < A.cols(); ++c) out.at(r, c) /= sum;
    }
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      const Tensor<S>& Y = nodes_[y].val;
      Tensor<S>& ga = gref(a);
      for (int r = 0; r < G.rows(); ++r) {
        S dot = 0;
        for (int c = 0; c < G.cols(); ++c) dot += G.at(r, c) * Y.at(r, c);
        for (int c = 0; c < G.cols(); ++c) ga.at(r, c) += Y.at(r, c) * (G.at(r, c) - dot);
      }
    });
  }

  // Per-row normalization over columns, per-column affine (transformer LN).
  Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    if (val(gamma).numel() != A.cols() || val(beta).numel() != A.cols())
      throw ShapeError("layer_norm: affine size mismatch");
    const int m = A.rows(), n = A.cols();
    Tensor<S> out({m, n});
    std::vector<S> rstd(m), xhat(static_cast<size_t>(m) * n);
    const Tensor<S>& G = val(gamma);
    const Tensor<S>& B = val(beta);
    for (int r = 0; r < m; ++r) {
      S mean = 0;
      for (int c = 0; c < n; ++c) mean += A.at(r, c);
      mean /= static_cast<S>(n);
      S var = 0;
      for (int c = 0; c < n; ++c) {
        const S d = A.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<S>(n);
      const S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
      rstd[r] = rs;
      for (int c = 0; c < n; ++c) {
        const S xh = (A.at(r, c) - mean) * rs;
        xhat[static_cast<size_t>(r) * n + c] = xh;
        out.at(r, c) = G.v[c] * xh + B.v[c];
      }
    }
    return push(std::move(out), rg(a) || rg(gamma) || rg(beta),
                [this, a, gamma, beta, rstd = std::move(rstd), xhat = std::move(xhat)](Var y) {
                  const Tensor<S>& Gy = nodes_[y].grad;
                  const int m = Gy.rows(), n = Gy.cols();
                  const Tensor<S>& gam = val(gamma);
                  for (int r = 0; r < m; ++r) {
                    const S* xh = xhat.data() + static_cast<size_t>(r) * n;
                    if (rg(gamma) || rg(beta)) {
                      for (int c = 0; c < n; ++c) {
                        if (rg(gamma)) gref(gamma).v[c] += Gy.at(r, c) * xh[c];
                        if (rg(beta)) gref(beta).v[c] += Gy.at(r, c);
                      }
                    }
                    if (rg(a)) {
                      S m1 = 0, m2 = 0;
                      for (int c = 0; c < n; ++c) {
                        const S gy = Gy.at(r, c) * gam.v[c];
                        m1 += gy;
                        m2 += gy * xh[c];
                      }
                      m1 /= static_cast<S>(n);
                      m2 /= static_cast<S>(n);
                      Tensor<S>& ga = gref(a);
                      for (int c = 0; c < n; ++c) {
                        const S gy = Gy.at(r, c) * gam.v[c];
                        ga.at(r, c) += (gy - m1 - xh[c] * m2) * rstd[r];
                      }
                    }
                  }
                });
  }

  // Per-row normalization with per-row affine: rows = channels over flattened
  // space, i.e. instance norm for conv features laid out [C, voxels].
  Var instance_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    if (val(gamma).numel() != A.rows() || val(beta).numel() != A.rows())
      throw ShapeError("instance_norm: affine size mismatch");
    const int m = A.rows(), n = A.cols();
    Tensor<S> out({m, n});
    std::vector<S> rstd(m), xhat(static_cast<size_t>(m) * n);
    const Tensor<S>& G = val(gamma);
    const Tensor<S>& B = val(beta);
    for (int r = 0; r < m; ++r) {
      S mean = 0;
      for (int c = 0; c < n; ++c) mean += A.at(r, c);
      mean /= static_cast<S>(n);
      S var = 0;
      for (int c = 0; c < n; ++c) {
        const S d = A.at(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<S>(n);
      const S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
      rstd[r] = rs;
      for (int c = 0; c < n; ++c) {
        const S xh = (A.at(r, c) - mean) * rs;
        xhat[static_cast<size_t>(r) * n + c] = xh;
        out.at(r, c) = G.v[r] * xh + B.v[r];
      }
    }
    return push(std::move(out), rg(a) || rg(gamma) || rg(beta),
                [this, a, gamma, beta, rstd = std::move(rstd), xhat = std::move(xhat)](Var y) {
                  const Tensor<S>& Gy = nodes_[y].grad;
                  const int m = Gy.rows(), n = Gy.cols();
                  const Tensor<S>& gam = val(gamma);
                  for (int r = 0; r < m; ++r) {
                    const S* xh = xhat.data() + static_cast<size_t>(r) * n;
                    S dg = 0, db = 0, m1 = 0, m2 = 0;
                    for (int c = 0; c < n; ++c) {
                      const S gy = Gy.at(r, c);
                      dg += gy * xh[c];
                      db += gy;
                      const S gx = gy * gam.v[r];
                      m1 += gx;
                      m2 += gx * xh[c];
                    }
                    if (rg(gamma)) gref(gamma).v[r] += dg;
                    if (rg(beta)) gref(beta).v[r] += db;
                    if (rg(a)) {
                      m1 /= static_cast<S>(n);
                      m2 /= static_cast<S>(n);
                      Tensor<S>& ga = gref(a);
                      for (int c = 0; c < n; ++c) {
                        const S gx = Gy.at(r, c) * gam.v[r];
                        ga.at(r, c) += (gx - m1 - xh[c] * m2) * rstd[r];
                      }
                    }
                  }
                });
  }

  // Rows scaled to unit L2 norm.
  Var unit_normalize_rows(Var a, double floor = 1e-12) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    const int m = A.rows(), n = A.cols();
    Tensor<S> out({m, n});
    std::vector<S> rn(m);
    for (int r = 0; r < m; ++r) {
      S s = 0;
      for (int c = 0; c < n; ++c) s += A.at(r, c) * A.at(r, c);
      const S norm = std::max(std::sqrt(s), static_cast<S>(floor));
      rn[r] = norm;
      for (int c = 0; c < n; ++c) out.at(r, c) = A.at(r, c) / norm;
    }
    return push(std::move(out), rg(a), [this, a, rn = std::move(rn)](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      const Tensor<S>& Y = nodes_[y].val;
      Tensor<S>& ga = gref(a);
      for (int r = 0; r < G.rows(); ++r) {
        S dot = 0;
        for (int c = 0; c < G.cols(); ++c) dot += G.at(r, c) * Y.at(r, c);
        for (int c = 0; c < G.cols(); ++c)
          ga.at(r, c) += (G.at(r, c) - Y.at(r, c) * dot) / rn[r];
      }
    });
  }

  // ---- reductions and losses ----

  Var mean_all(Var a) {
    const Tensor<S>& A = val(a);
    S acc = 0;
    for (const S& x : A.v) acc += x;
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(A.numel()));
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const S g = nodes_[y].grad.v[0] / static_cast<S>(val(a).numel());
      for (auto& x : gref(a).v) x += g;
    });
  }

  // Mean of squared entries; the masked reconstruction loss after a gather.
  Var mean_square(Var a) {
    const Tensor<S>& A = val(a);
    S acc = 0;
    for (const S& x : A.v) acc += x * x;
    Tensor<S> out = Tensor<S>::scalar(acc / static_cast<S>(A.numel()));
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const S g = nodes_[y].grad.v[0];
      const Tensor<S>& av = val(a);
      const S k = S(2) / static_cast<S>(av.numel());
      for (int64_t i = 0; i < av.numel(); ++i) gref(a).v[i] += g * k * av.v[i];
    });
  }

  Var mean_rows(Var a) {
    const Tensor<S>& A = val(a);
    A.require_2d();
    Tensor<S> out({1, A.cols()});
    for (int r = 0; r < A.rows(); ++r)
      for (int c = 0; c < A.cols(); ++c) out.v[c] += A.at(r, c);
    for (auto& x : out.v) x /= static_cast<S>(A.rows());
    return push(std::move(out), rg(a), [this, a](Var y) {
      if (!rg(a)) return;
      const Tensor<S>& G = nodes_[y].grad;
      Tensor<S>& ga = gref(a);
      const Tensor<S>& av = val(a);
      const S inv = S(1) / static_cast<S>(av.rows());
      for (int r = 0; r < av.rows(); ++r)
        for (int c = 0; c < av.cols(); ++c) ga.at(r, c) += G.v[c] * inv;
    });
  }

  // Mean NLL of integer targets under row-wise softmax of logits (stable).
  Var cross_entropy_rows(Var logits, std::vector<int> targets) {
    const Tensor<S>& A = val(logits);
    A.require_2d();
    if (static_cast<int>(targets.size()) != A.rows())
      throw ShapeError("cross_entropy_rows: target count != rows");
    for (int t : targets)
      if (t < 0 || t >= A.cols()) throw ShapeError("cross_entropy_rows: target out of range");
    const int m = A.rows(), n = A.cols();
    S loss = 0;
    for (int r = 0; r < m; ++r) {
      S mx = A.at(r, 0);
      for (int c = 1; c < n; ++c) mx = std::max(mx, A.at(r, c));
      S lse = 0;
      for (int c = 0; c < n; ++c) lse += std::exp(A.at(r, c) - mx);
      loss += std::log(lse) + mx - A.at(r, targets[r]);
    }
    Tensor<S> out = Tensor<S>::scalar(loss / static_cast<S>(m));
    return push(std::move(out), rg(logits),
                [this, logits, targets = std::move(targets)](Var y) {
                  if (!rg(logits)) return;
                  const S g = nodes_[y].grad.v[0];
                  const Tensor<S>& A2 = val(logits);
                  const int m = A2.rows(), n = A2.cols();
                  Tensor<S>& ga = gref(logits);
                  for (int r = 0; r < m; ++r) {
                    S mx = A2.at(r, 0);
                    for (int c = 1; c < n; ++c) mx = std::max(mx, A2.at(r, c));
                    S lse = 0;
                    for (int c = 0; c < n; ++c) lse += std::exp(A2.at(r, c) - mx);
                    for (int c = 0; c < n; ++c) {
                      S p = std::exp(A2.at(r, c) - mx) / lse;
                      if (c == targets[r]) p -= S(1);
                      ga.at(r, c) += g * p / static_cast<S>(m);
                    }
                  }
                });
  }

  // Mean NLL evaluated directly on probabilities (for losses defined on the
  // softmax output, e.g. the segmentation CE term).
  Var nll_probs(Var probs, std::vector<int> targets, double floor = 1e-12) {
    const Tensor<S>& P = val(probs);
    P.require_2d();
    if (static_cast<int>(targets.size()) != P.rows())
      throw ShapeError("nll_probs: target count != rows");
    const int m = P.rows();
    S loss = 0;
    for (int r = 0; r < m; ++r)
      loss -= std::log(std::max(P.at(r, targets[r]), static_cast<S>(floor)));
    Tensor<S> out = Tensor<S>::scalar(loss / static_cast<S>(m));
    return push(std::move(out), rg(probs),
                [this, probs, targets = std::move(targets), floor](Var y) {
                  if (!rg(probs)) return;
                  const S g = nodes_[y].grad.v[0];
                  const Tensor<S>& P2 = val(probs);
                  Tensor<S>& gp = gref(probs);
                  const int m = P2.rows();
                  for (int r = 0; r < m; ++r) {
                    const S p = std::max(P2.at(r, targets[r]), static_cast<S>(floor));
                    gp.at(r, targets[r]) -= g / (p * static_cast<S>(m));
                  }
                });
  }

  // Soft Dice loss on foreground probabilities against a binary target:
  // 1 - (2*sum(p*t)+eps) / (sum(p)+sum(t)+eps).
  Var soft_dice(Var probs_fg, std::vector<S> target, double eps = 1e-5) {
    const Tensor<S>& P = val(probs_fg);
    if (P.numel() != static_cast<int64_t>(target.size()))
      throw ShapeError("soft_dice: target size mismatch");
    S inter = 0, psum = 0, tsum = 0;
    for (int64_t i = 0; i < P.numel(); ++i) {
      inter += P.v[i] * target[i];
      psum += P.v[i];
      tsum += target[i];
    }
    const S num = S(2) * inter + static_cast<S>(eps);
    const S den = psum + tsum + static_cast<S>(eps);
    Tensor<S> out = Tensor<S>::scalar(S(1) - num / den);
    return push(std::move(out), rg(probs_fg),
                [this, probs_fg, target = std::move(target), eps](Var y) {
                  if (!rg(probs_fg)) return;
                  const S g = nodes_[y].grad.v[0];
                  const Tensor<S>& P2 = val(probs_fg);
                  S inter = 0, psum = 0, tsum = 0;
                  for (int64_t i = 0; i < P2.numel(); ++i) {
                    inter += P2.v[i] * target[i];
                    psum += P2.v[i];
                    tsum += target[i];
                  }
                  const S num = S(2) * inter + static_cast<S>(eps);
                  const S den = psum + tsum + static_cast<S>(eps);
                  Tensor<S>& gp = gref(probs_fg);
                  for (int64_t i = 0; i < P2.numel(); ++i)
                    gp.v[i] += g * (num / (den * den) - S(2) * target[i] / den);
                });
  }

  // ---- convolution ----

  Var conv3d(Var x, Var w, Var b) {
    const Tensor<S>& X = val(x);
    const Tensor<S>& W = val(w);
    const Tensor<S>& B = val(b);
    if (X.ndim() != 4 || W.ndim() != 5) throw ShapeError("conv3d: expects x[C,Z,Y,X], w[Co,Ci,kz,ky,kx]");
    if (W.shape[1] != X.shape[0]) throw ShapeError("conv3d: channel mismatch");
    if (B.numel() != W.shape[0]) throw ShapeError("conv3d: bias mismatch");
    if (W.shape[2] % 2 == 0 || W.shape[3] % 2 == 0 || W.shape[4] % 2 == 0)
      throw ShapeError("conv3d: kernel dims must be odd");
    Tensor<S> out({W.shape[0], X.shape[1], X.shape[2], X.shape[3]});
    detail::conv3d_forward(X, W, B, out);
    return push(std::move(out), rg(x) || rg(w) || rg(b), [this, x, w, b](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      detail::conv3d_backward(val(x), val(w), G, rg(x) ? &gref(x) : nullptr,
                              rg(w) ? &gref(w) : nullptr, rg(b) ? &gref(b) : nullptr);
    });
  }

  // Transposed conv with kernel == stride; upsamples each axis by the kernel dim.
  Var upconv3d(Var x, Var w, Var b) {
    const Tensor<S>& X = val(x);
    const Tensor<S>& W = val(w);
    const Tensor<S>& B = val(b);
    if (X.ndim() != 4 || W.ndim() != 5) throw ShapeError("upconv3d: expects x[C,Z,Y,X], w[Co,Ci,fz,fy,fx]");
    if (W.shape[1] != X.shape[0]) throw ShapeError("upconv3d: channel mismatch");
    if (B.numel() != W.shape[0]) throw ShapeError("upconv3d: bias mismatch");
    Tensor<S> out({W.shape[0], X.shape[1] * W.shape[2], X.shape[2] * W.shape[3],
                   X.shape[3] * W.shape[4]});
    detail::upconv3d_forward(X, W, B, out);
    return push(std::move(out), rg(x) || rg(w) || rg(b), [this, x, w, b](Var y) {
      const Tensor<S>& G = nodes_[y].grad;
      detail::upconv3d_backward(val(x), val(w), G, rg(x) ? &gref(x) : nullptr,
                                rg(w) ? &gref(w) : nullptr, rg(b) ? &gref(b) : nullptr);
    });
  }

  // ---- backward ----

  void backward(Var loss) {
    if (val(loss).numel() != 1) throw ShapeError("backward: loss must be scalar");
    for (Node& n : nodes_)
      if (n.rg) {
        n.grad = Tensor<S>(n.val.shape);
      }
    Node& ln = nodes_[check(loss)];
    if (!ln.rg) throw ShapeError("backward: loss does not depend on any leaf");
    ln.grad.v[0] = S(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.rg && n.back) n.back(i);
    }
  }

 private:
  struct Node {
    Tensor<S> val;
    Tensor<S> grad;
    std::function<void(Var)> back;
    bool rg = false;
  };

  int check(Var v) const {
    if (v < 0 || v >= static_cast<int>(nodes_.size())) throw ShapeError("invalid graph var");
    return v;
  }
  const Tensor<S>& val(Var v) const { return nodes_[check(v)].val; }
  Tensor<S>& gref(Var v) { return nodes_[check(v)].grad; }
  bool rg(Var v) const { return nodes_[check(v)].rg; }
  void same_shape(Var a, Var b, const char* op) const {
    if (!val(a).same_shape(val(b)))
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) + " vs " +
                       shape_str(val(b).shape));
  }

  Var push(Tensor<S> t, bool needs_grad, std::function<void(Var)> back) {
    Node n;
    n.val = std::move(t);
    n.rg = needs_grad;
    n.back = needs_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
};

}  // namespace fratmae::nn

#endif

#include "nighthaze/ops.hpp"

// Small products would otherwise take a coefficient-based path whose
// rounding depends on buffer alignment; keep every product on the packed GEMM.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "nighthaze/error.hpp"

namespace nighthaze::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using Impl = std::shared_ptr<TensorImpl>;

// Gradient buffer of an input, or nullptr when it needs none.
std::vector<double>* grad_of(const Impl& p) { return p->requires_grad ? &p->ensure_grad() : nullptr; }

// Plain loops instead of Eigen reductions, which peel by alignment.
void add_row_sums(const double* m, long rows, long cols, double* dst) {
    for (long r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (long c = 0; c < cols; ++c) acc += m[r * cols + c];
        dst[r] += acc;
    }
}

void add_col_sums(const double* m, long rows, long cols, double* dst) {
    for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) dst[c] += m[r * cols + c];
}

void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
    std::vector<double> out(x.numel());
    const auto& in = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
    Impl xi = x.shared();
    return make_result(x.shape(), std::move(out), {x}, [xi, deriv](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += self.grad[i] * deriv(xi->value[i]);
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    Impl ai = a.shared(), bi = b.shared();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
        for (const Impl& p : {ai, bi}) {
            if (auto* g = grad_of(p))
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    Impl ai = a.shared(), bi = b.shared();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
        if (auto* g = grad_of(ai))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(bi))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
    Impl ai = a.shared();
    return make_result(a.shape(), std::move(out), {a}, [ai, s](TensorImpl& self) {
        if (auto* g = grad_of(ai))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    Impl ai = a.shared(), bi = b.shared();
    return make_result(a.shape(), std::move(out), {a, b}, [ai, bi](TensorImpl& self) {
        if (auto* g = grad_of(ai))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bi->value[i];
        if (auto* g = grad_of(bi))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * ai->value[i];
    });
}

Tensor mul_channels(const Tensor& x, const Tensor& s) {
    require_rank(x, 4, "mul_channels");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (s.rank() != 4 || s.dim(1) != C || s.dim(2) != 1 || s.dim(3) != 1 || (s.dim(0) != 1 && s.dim(0) != N)) {
        throw ShapeError("mul_channels: scale shape " + shape_string(s.shape()) + " incompatible with " + shape_string(x.shape()));
    }
    const bool per_item = s.dim(0) == N && N != 1;
    std::vector<double> out(x.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double f = s.values()[(per_item ? n * C : 0) + c];
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
            for (std::size_t p = 0; p < P; ++p) out[base + p] = x.values()[base + p] * f;
        }
    Impl xi = x.shared(), si = s.shared();
    return make_result(x.shape(), std::move(out), {x, s}, [xi, si, N, C, P, per_item](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gs = grad_of(si);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t sidx = (per_item ? n * C : 0) + c;
                const double f = si->value[sidx];
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
                double acc = 0;
                for (std::size_t p = 0; p < P; ++p) {
                    const double g = self.grad[base + p];
                    if (gx) (*gx)[base + p] += g * f;
                    acc += g * xi->value[base + p];
                }
                if (gs) (*gs)[sidx] += acc;
            }
    });
}

Tensor add_batch_broadcast(const Tensor& x, const Tensor& b) {
    if (b.rank() != x.rank() || b.dim(0) != 1) throw ShapeError("add_batch_broadcast: bias must have batch 1");
    for (int i = 1; i < x.rank(); ++i)
        if (b.dim(i) != x.dim(i)) throw ShapeError("add_batch_broadcast: shape mismatch");
    const std::size_t per = b.numel();
    const int N = x.dim(0);
    std::vector<double> out(x.values());
    for (int n = 0; n < N; ++n)
        for (std::size_t i = 0; i < per; ++i) out[n * per + i] += b.values()[i];
    Impl xi = x.shared(), bi = b.shared();
    return make_result(x.shape(), std::move(out), {x, b}, [xi, bi, N, per](TensorImpl& self) {
        if (auto* g = grad_of(xi))
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        if (auto* g = grad_of(bi))
            for (int n = 0; n < N; ++n)
                for (std::size_t i = 0; i < per; ++i) (*g)[i] += self.grad[n * per + i];
    });
}

Tensor relu(const Tensor& x) {
    return unary(x, [](double v) { return v > 0 ? v : 0.0; }, [](double v) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        x, [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [=](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor sum(const Tensor& x) {
    double s = 0;
    for (double v : x.values()) s += v;
    Impl xi = x.shared();
    return make_result({1}, {s}, {x}, [xi](TensorImpl& self) {
        if (auto* g = grad_of(xi))
            for (double& v : *g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    require_same(a, b, "l1_distance");
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
    Impl ai = a.shared(), bi = b.shared();
    return make_result({1}, {s}, {a, b}, [ai, bi](TensorImpl& self) {
        auto* ga = grad_of(ai);
        auto* gb = grad_of(bi);
        for (std::size_t i = 0; i < ai->value.size(); ++i) {
            const double d = ai->value[i] - bi->value[i];
            const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            if (ga) (*ga)[i] += sg * self.grad[0];
            if (gb) (*gb)[i] -= sg * self.grad[0];
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d weight");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) throw ShapeError("conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, got " + std::to_string(Cin));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != Cout)) throw ShapeError("conv2d: bias shape mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw ShapeError("conv2d: kernel larger than padded input");
    const int K = Cin * kh * kw, P = Ho * Wo;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

    auto im2col = [=](const double* src, double* col) {
        for (int ci = 0; ci < Cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                    double* row = col + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * P;
                    for (int oy = 0; oy < Ho; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        for (int ox = 0; ox < Wo; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            row[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                    ? src[(static_cast<std::size_t>(ci) * H + iy) * W + ix]
                                                    : 0.0;
                        }
                    }
                }
    };

    std::vector<double> out(static_cast<std::size_t>(N) * Cout * P);
    std::vector<double> cols;
    if (!pointwise) cols.resize(static_cast<std::size_t>(N) * K * P);
    ConstMapMat wm(w.values().data(), Cout, K);
    for (int n = 0; n < N; ++n) {
        const double* src = x.values().data() + static_cast<std::size_t>(n) * Cin * H * W;
        const double* col = src;
        if (!pointwise) {
            im2col(src, cols.data() + static_cast<std::size_t>(n) * K * P);
            col = cols.data() + static_cast<std::size_t>(n) * K * P;
        }
        MapMat y(out.data() + static_cast<std::size_t>(n) * Cout * P, Cout, P);
        y.noalias() = wm * ConstMapMat(col, K, P);
        if (b.defined()) y.colwise() += Eigen::Map<const Eigen::VectorXd>(b.values().data(), Cout);
    }
    if (!grad_enabled() || !(x.requires_grad() || w.requires_grad() || (b.defined() && b.requires_grad()))) cols.clear();

    Impl xi = x.shared(), wi = w.shared(), bi = b.defined() ? b.shared() : nullptr;
    return make_result({N, Cout, Ho, Wo}, std::move(out), {x, w, b},
                       [=, cols = std::move(cols)](TensorImpl& self) {
                           auto* gx = grad_of(xi);
                           auto* gw = grad_of(wi);
                           auto* gb = bi ? grad_of(bi) : nullptr;
                           std::vector<double> dcol(static_cast<std::size_t>(K) * P);
                           for (int n = 0; n < N; ++n) {
                               ConstMapMat dy(self.grad.data() + static_cast<std::size_t>(n) * Cout * P, Cout, P);
                               const double* col = pointwise ? xi->value.data() + static_cast<std::size_t>(n) * Cin * H * W
                                                             : cols.data() + static_cast<std::size_t>(n) * K * P;
                               if (gw) MapMat(gw->data(), Cout, K).noalias() += dy * ConstMapMat(col, K, P).transpose();
                               if (gb) add_row_sums(dy.data(), Cout, P, gb->data());
                               if (!gx) continue;
                               double* dst = gx->data() + static_cast<std::size_t>(n) * Cin * H * W;
                               ConstMapMat wm2(wi->value.data(), Cout, K);
                               if (pointwise) {
                                   MapMat(dst, K, P).noalias() += wm2.transpose() * dy;
                                   continue;
                               }
                               MapMat(dcol.data(), K, P).noalias() = wm2.transpose() * dy;
                               for (int ci = 0; ci < Cin; ++ci)
                                   for (int ky = 0; ky < kh; ++ky)
                                       for (int kx = 0; kx < kw; ++kx) {
                                           const double* row = dcol.data() + static_cast<std::size_t>((ci * kh + ky) * kw + kx) * P;
                                           for (int oy = 0; oy < Ho; ++oy) {
                                               const int iy = oy * stride + ky - pad;
                                               if (iy < 0 || iy >= H) continue;
                                               for (int ox = 0; ox < Wo; ++ox) {
                                                   const int ix = ox * stride + kx - pad;
                                                   if (ix < 0 || ix >= W) continue;
                                                   dst[(static_cast<std::size_t>(ci) * H + iy) * W + ix] += row[oy * Wo + ox];
                                               }
                                           }
                                       }
                           }
                       });
}

Tensor depthwise_conv3x3(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 4, "depthwise_conv3x3");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (w.shape() != Shape{C, 1, 3, 3}) throw ShapeError("depthwise_conv3x3: weight must be [C,1,3,3]");
    const std::size_t P = static_cast<std::size_t>(H) * W;
    std::vector<double> out(x.numel());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = x.values().data() + (static_cast<std::size_t>(n) * C + c) * P;
            double* dst = out.data() + (static_cast<std::size_t>(n) * C + c) * P;
            const double* k = w.values().data() + c * 9;
            const double bias = b.defined() ? b.values()[c] : 0.0;
            std::fill(dst, dst + P, bias);
            for (int ky = 0; ky < 3; ++ky)
                for (int kx = 0; kx < 3; ++kx) {
                    const double kv = k[ky * 3 + kx];
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* o = dst + static_cast<std::size_t>(y) * W;
                        const double* s = src + static_cast<std::size_t>(y + dy) * W + dx;
                        for (int xx = x0; xx < x1; ++xx) o[xx] += kv * s[xx];
                    }
                }
        }
    Impl xi = x.shared(), wi = w.shared(), bi = b.defined() ? b.shared() : nullptr;
    return make_result(x.shape(), std::move(out), {x, w, b}, [=](TensorImpl& self) {
        auto* gx = grad_of(xi);
        auto* gw = grad_of(wi);
        auto* gb = bi ? grad_of(bi) : nullptr;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t base = (static_cast<std::size_t>(n) * C + c) * P;
                const double* g = self.grad.data() + base;
                const double* src = xi->value.data() + base;
                if (gb) {
                    double s = 0;
                    for (std::size_t p = 0; p < P; ++p) s += g[p];
                    (*gb)[c] += s;
                }
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dy = ky - 1, dx = kx - 1;
                        const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                        const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                        const double kv = wi->value[c * 9 + ky * 3 + kx];
                        double acc = 0;
                        for (int y = y0; y < y1; ++y) {
                            const double* gr = g + static_cast<std::size_t>(y) * W;
                            const std::size_t srow = static_cast<std::size_t>(y + dy) * W + dx;
                            if (gx) {
                                double* dxr = gx->data() + base + srow;
                                for (int xx = x0; xx < x1; ++xx) dxr[xx] += kv * gr[xx];
                            }
                            if (gw) {
                                const double* s = src + srow;
                                for (int xx = x0; xx < x1; ++xx) acc += gr[xx] * s[xx];
                            }
                        }
                        if (gw) (*gw)[c * 9 + ky * 3 + kx] += acc;
                    }
            }
    });
}

namespace {

// Shared body of the two layer norms: `groups` independent vectors of
// length D, element d of group g at offset(g) + d * stride.
struct NormLayout {
    std::size_t groups;
    int D;
    std::size_t stride;
    std::function<std::size_t(std::size_t)> offset;
};

Tensor layer_norm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, NormLayout L) {
    if (gamma.numel() != static_cast<std::size_t>(L.D) || beta.numel() != static_cast<std::size_t>(L.D)) {
        throw ShapeError("layer norm: affine parameters must have " + std::to_string(L.D) + " entries");
    }
    std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(L.groups);
    const auto& in = x.values();
    for (std::size_t g = 0; g < L.groups; ++g) {
        const std::size_t o = L.offset(g);
        double mu = 0;
        for (int d = 0; d < L.D; ++d) mu += in[o + d * L.stride];
        mu /= L.D;
        double var = 0;
        for (int d = 0; d < L.D; ++d) {
            const double c = in[o + d * L.stride] - mu;
            var += c * c;
        }
        var /= L.D;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[g] = is;
        for (int d = 0; d < L.D; ++d) {
            const std::size_t i = o + d * L.stride;
            xhat[i] = (in[i] - mu) * is;
            out[i] = xhat[i] * gamma.values()[d] + beta.values()[d];
        }
    }
    Impl xi = x.shared(), gi = gamma.shared(), bi = beta.shared();
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [xi, gi, bi, L, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                           auto* gx = grad_of(xi);
                           auto* gg = grad_of(gi);
                           auto* gb = grad_of(bi);
                           for (std::size_t g = 0; g < L.groups; ++g) {
                               const std::size_t o = L.offset(g);
                               double m1 = 0, m2 = 0;
                               for (int d = 0; d < L.D; ++d) {
                                   const std::size_t i = o + d * L.stride;
                                   const double dy = self.grad[i];
                                   if (gg) (*gg)[d] += dy * xhat[i];
                                   if (gb) (*gb)[d] += dy;
                                   const double dxh = dy * gi->value[d];
                                   m1 += dxh;
                                   m2 += dxh * xhat[i];
                               }
                               if (!gx) continue;
                               m1 /= L.D;
                               m2 /= L.D;
                               for (int d = 0; d < L.D; ++d) {
                                   const std::size_t i = o + d * L.stride;
                                   const double dxh = self.grad[i] * gi->value[d];
                                   (*gx)[i] += inv_std[g] * (dxh - m1 - xhat[i] * m2);
                               }
                           }
                       });
}

}  // namespace

Tensor layer_norm_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank(x, 4, "layer_norm_channels");
    const int C = x.dim(1);
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    NormLayout L{static_cast<std::size_t>(x.dim(0)) * P, C, P,
                 [P, C](std::size_t g) { return (g / P) * C * P + g % P; }};
    return layer_norm_impl(x, gamma, beta, eps, std::move(L));
}

Tensor layer_norm_tokens(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int D = x.shape().back();
    NormLayout L{x.numel() / D, D, 1, [D](std::size_t g) { return g * D; }};
    return layer_norm_impl(x, gamma, beta, eps, std::move(L));
}

Tensor simple_gate(const Tensor& x) {
    require_rank(x, 4, "simple_gate");
    const int N = x.dim(0), C2 = x.dim(1);
    if (C2 % 2) throw ShapeError("simple_gate: channel count must be even");
    const int C = C2 / 2;
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(N) * C * P);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* a = x.values().data() + (static_cast<std::size_t>(n) * C2 + c) * P;
            const double* b = a + static_cast<std::size_t>(C) * P;
            double* o = out.data() + (static_cast<std::size_t>(n) * C + c) * P;
            for (std::size_t p = 0; p < P; ++p) o[p] = a[p] * b[p];
        }
    Impl xi = x.shared();
    return make_result({N, C, x.dim(2), x.dim(3)}, std::move(out), {x}, [xi, N, C, C2, P](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const std::size_t ia = (static_cast<std::size_t>(n) * C2 + c) * P;
                const std::size_t ib = ia + static_cast<std::size_t>(C) * P;
                const double* go = self.grad.data() + (static_cast<std::size_t>(n) * C + c) * P;
                for (std::size_t p = 0; p < P; ++p) {
                    (*g)[ia + p] += go[p] * xi->value[ib + p];
                    (*g)[ib + p] += go[p] * xi->value[ia + p];
                }
            }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const int N = x.dim(0), C = x.dim(1);
    const std::size_t P = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(N) * C);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 0;
        for (std::size_t p = 0; p < P; ++p) s += x.values()[i * P + p];
        out[i] = s / static_cast<double>(P);
    }
    Impl xi = x.shared();
    return make_result({N, C, 1, 1}, std::move(out), {x}, [xi, P](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = self.grad[i] / static_cast<double>(P);
            for (std::size_t p = 0; p < P; ++p) (*g)[i * P + p] += v;
        }
    });
}

Tensor avg_pool2d(const Tensor& x, int k) {
    require_rank(x, 4, "avg_pool2d");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (k < 1 || H % k || W % k) throw ShapeError("avg_pool2d: window must divide the spatial size");
    const int Ho = H / k, Wo = W / k;
    const double norm = 1.0 / (k * k);
    std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo, 0.0);
    for (int nc = 0; nc < N * C; ++nc)
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx)
                out[(static_cast<std::size_t>(nc) * Ho + y / k) * Wo + xx / k] +=
                    norm * x.values()[(static_cast<std::size_t>(nc) * H + y) * W + xx];
    Impl xi = x.shared();
    return make_result({N, C, Ho, Wo}, std::move(out), {x}, [=](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int nc = 0; nc < N * C; ++nc)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    (*g)[(static_cast<std::size_t>(nc) * H + y) * W + xx] +=
                        norm * self.grad[(static_cast<std::size_t>(nc) * Ho + y / k) * Wo + xx / k];
    });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
    require_rank(x, 4, "pixel_shuffle");
    const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (Cin % (r * r)) throw ShapeError("pixel_shuffle: channels not divisible by r^2");
    const int C = Cin / (r * r), Ho = H * r, Wo = W * r;
    auto src_index = [=](int n, int c, int oy, int ox) {
        const int ci = c * r * r + (oy % r) * r + (ox % r);
        return ((static_cast<std::size_t>(n) * Cin + ci) * H + oy / r) * W + ox / r;
    };
    std::vector<double> out(x.numel());
    std::size_t k = 0;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) out[k++] = x.values()[src_index(n, c, oy, ox)];
    Impl xi = x.shared();
    return make_result({N, C, Ho, Wo}, std::move(out), {x}, [=](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        std::size_t k2 = 0;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) (*g)[src_index(n, c, oy, ox)] += self.grad[k2++];
    });
}

Tensor reflect_pad(const Tensor& x, int pad_bottom, int pad_right) {
    require_rank(x, 4, "reflect_pad");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (pad_bottom == 0 && pad_right == 0) return x;
    if (pad_bottom < 0 || pad_right < 0 || pad_bottom >= H || pad_right >= W) {
        throw ShapeError("reflect_pad: padding must be smaller than the input");
    }
    const int Ho = H + pad_bottom, Wo = W + pad_right;
    auto reflect = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
    std::vector<double> out(static_cast<std::size_t>(N) * C * Ho * Wo);
    for (int nc = 0; nc < N * C; ++nc)
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
                out[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx] =
                    x.values()[(static_cast<std::size_t>(nc) * H + reflect(y, H)) * W + reflect(xx, W)];
    Impl xi = x.shared();
    return make_result({N, C, Ho, Wo}, std::move(out), {x}, [=](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int nc = 0; nc < N * C; ++nc)
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx)
                    (*g)[(static_cast<std::size_t>(nc) * H + reflect(y, H)) * W + reflect(xx, W)] +=
                        self.grad[(static_cast<std::size_t>(nc) * Ho + y) * Wo + xx];
    });
}

Tensor crop_top_left(const Tensor& x, int height, int width) {
    require_rank(x, 4, "crop_top_left");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (height == H && width == W) return x;
    if (height > H || width > W) throw ShapeError("crop_top_left: window larger than input");
    std::vector<double> out(static_cast<std::size_t>(N) * C * height * width);
    for (int nc = 0; nc < N * C; ++nc)
        for (int y = 0; y < height; ++y)
            for (int xx = 0; xx < width; ++xx)
                out[(static_cast<std::size_t>(nc) * height + y) * width + xx] = x.values()[(static_cast<std::size_t>(nc) * H + y) * W + xx];
    Impl xi = x.shared();
    return make_result({N, C, height, width}, std::move(out), {x}, [=](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int nc = 0; nc < N * C; ++nc)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx)
                    (*g)[(static_cast<std::size_t>(nc) * H + y) * W + xx] += self.grad[(static_cast<std::size_t>(nc) * height + y) * width + xx];
    });
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
    require_rank(x, 4, "resize_bilinear");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (height == H && width == W) return x;
    struct Tap {
        int i0, i1;
        double f;
    };
    auto taps = [](int out, int in) {
        std::vector<Tap> t(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            const double s = out > 1 ? static_cast<double>(o) * (in - 1) / (out - 1) : 0.0;
            const int i0 = std::min(static_cast<int>(std::floor(s)), in - 1);
            t[o] = {i0, std::min(i0 + 1, in - 1), s - i0};
        }
        return t;
    };
    const auto ty = taps(height, H), tx = taps(width, W);
    std::vector<double> out(static_cast<std::size_t>(N) * C * height * width);
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = x.values().data() + static_cast<std::size_t>(nc) * H * W;
        for (int y = 0; y < height; ++y)
            for (int xx = 0; xx < width; ++xx) {
                const auto& a = ty[y];
                const auto& b = tx[xx];
                out[(static_cast<std::size_t>(nc) * height + y) * width + xx] =
                    (1 - a.f) * ((1 - b.f) * src[a.i0 * W + b.i0] + b.f * src[a.i0 * W + b.i1]) +
                    a.f * ((1 - b.f) * src[a.i1 * W + b.i0] + b.f * src[a.i1 * W + b.i1]);
            }
    }
    Impl xi = x.shared();
    return make_result({N, C, height, width}, std::move(out), {x}, [=](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int nc = 0; nc < N * C; ++nc) {
            double* dst = g->data() + static_cast<std::size_t>(nc) * H * W;
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx) {
                    const double go = self.grad[(static_cast<std::size_t>(nc) * height + y) * width + xx];
                    const auto& a = ty[y];
                    const auto& b = tx[xx];
                    dst[a.i0 * W + b.i0] += go * (1 - a.f) * (1 - b.f);
                    dst[a.i0 * W + b.i1] += go * (1 - a.f) * b.f;
                    dst[a.i1 * W + b.i0] += go * a.f * (1 - b.f);
                    dst[a.i1 * W + b.i1] += go * a.f * b.f;
                }
        }
    });
}

Tensor to_tokens(const Tensor& x) {
    require_rank(x, 4, "to_tokens");
    const int N = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    std::vector<double> out(x.numel());
    for (int n = 0; n < N; ++n)
        MapMat(out.data() + static_cast<std::size_t>(n) * P * C, P, C) =
            ConstMapMat(x.values().data() + static_cast<std::size_t>(n) * C * P, C, P).transpose();
    Impl xi = x.shared();
    return make_result({N, P, C}, std::move(out), {x}, [xi, N, C, P](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (int n = 0; n < N; ++n)
            MapMat(g->data() + static_cast<std::size_t>(n) * C * P, C, P) +=
                ConstMapMat(self.grad.data() + static_cast<std::size_t>(n) * P * C, P, C).transpose();
    });
}

Tensor from_tokens(const Tensor& t, int height, int width) {
    require_rank(t, 3, "from_tokens");
    const int N = t.dim(0), P = t.dim(1), C = t.dim(2);
    if (P != height * width) throw ShapeError("from_tokens: token count does not match the grid");
    std::vector<double> out(t.numel());
    for (int n = 0; n < N; ++n)
        MapMat(out.data() + static_cast<std::size_t>(n) * C * P, C, P) =
            ConstMapMat(t.values().data() + static_cast<std::size_t>(n) * P * C, P, C).transpose();
    Impl ti = t.shared();
    return make_result({N, C, height, width}, std::move(out), {t}, [ti, N, C, P](TensorImpl& self) {
        auto* g = grad_of(ti);
        if (!g) return;
        for (int n = 0; n < N; ++n)
            MapMat(g->data() + static_cast<std::size_t>(n) * P * C, P, C) +=
                ConstMapMat(self.grad.data() + static_cast<std::size_t>(n) * C * P, C, P).transpose();
    });
}

namespace {

// Flat index into [N,C,H,W] of token position t (inside window widx) and channel c.
struct WindowIndex {
    int C, H, W, win, wy, wx;
    std::size_t operator()(std::size_t widx, int t, int c) const {
        const std::size_t per_image = static_cast<std::size_t>(wy) * wx;
        const std::size_t n = widx / per_image, r = widx % per_image;
        const int y = static_cast<int>(r / wx) * win + t / win;
        const int x = static_cast<int>(r % wx) * win + t % win;
        return ((n * C + c) * H + y) * W + x;
    }
};

}  // namespace

Tensor window_partition(const Tensor& x, int win) {
    require_rank(x, 4, "window_partition");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (win < 1 || H % win || W % win) throw ShapeError("window_partition: window must divide the spatial size");
    const WindowIndex idx{C, H, W, win, H / win, W / win};
    const std::size_t windows = static_cast<std::size_t>(N) * idx.wy * idx.wx;
    const int T = win * win;
    std::vector<double> out(x.numel());
    for (std::size_t w = 0; w < windows; ++w)
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c) out[(w * T + t) * C + c] = x.values()[idx(w, t, c)];
    Impl xi = x.shared();
    return make_result({static_cast<int>(windows), T, C}, std::move(out), {x}, [xi, idx, windows, T, C](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        for (std::size_t w = 0; w < windows; ++w)
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < C; ++c) (*g)[idx(w, t, c)] += self.grad[(w * T + t) * C + c];
    });
}

Tensor window_merge(const Tensor& t, int n, int height, int width, int win) {
    require_rank(t, 3, "window_merge");
    const int C = t.dim(2), T = win * win;
    if (win < 1 || height % win || width % win || t.dim(1) != T ||
        static_cast<std::size_t>(t.dim(0)) != static_cast<std::size_t>(n) * (height / win) * (width / win)) {
        throw ShapeError("window_merge: token tensor " + shape_string(t.shape()) + " does not match the grid");
    }
    const WindowIndex idx{C, height, width, win, height / win, width / win};
    const auto windows = static_cast<std::size_t>(t.dim(0));
    std::vector<double> out(t.numel());
    for (std::size_t w = 0; w < windows; ++w)
        for (int k = 0; k < T; ++k)
            for (int c = 0; c < C; ++c) out[idx(w, k, c)] = t.values()[(w * T + k) * C + c];
    Impl ti = t.shared();
    return make_result({n, C, height, width}, std::move(out), {t}, [ti, idx, windows, T, C](TensorImpl& self) {
        auto* g = grad_of(ti);
        if (!g) return;
        for (std::size_t w = 0; w < windows; ++w)
            for (int k = 0; k < T; ++k)
                for (int c = 0; c < C; ++c) (*g)[(w * T + k) * C + c] += self.grad[idx(w, k, c)];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(w, 2, "linear weight");
    const int Din = w.dim(0), Dout = w.dim(1);
    if (x.shape().back() != Din) throw ShapeError("linear: input width " + std::to_string(x.shape().back()) + " != " + std::to_string(Din));
    if (b.defined() && b.numel() != static_cast<std::size_t>(Dout)) throw ShapeError("linear: bias size mismatch");
    const auto M = static_cast<Eigen::Index>(x.numel() / Din);
    std::vector<double> out(static_cast<std::size_t>(M) * Dout);
    MapMat y(out.data(), M, Dout);
    y.noalias() = ConstMapMat(x.values().data(), M, Din) * ConstMapMat(w.values().data(), Din, Dout);
    if (b.defined()) y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), Dout);
    Shape shape = x.shape();
    shape.back() = Dout;
    Impl xi = x.shared(), wi = w.shared(), bi = b.defined() ? b.shared() : nullptr;
    return make_result(shape, std::move(out), {x, w, b}, [=](TensorImpl& self) {
        ConstMapMat dy(self.grad.data(), M, Dout);
        if (auto* g = grad_of(xi)) MapMat(g->data(), M, Din).noalias() += dy * ConstMapMat(wi->value.data(), Din, Dout).transpose();
        if (auto* g = grad_of(wi)) MapMat(g->data(), Din, Dout).noalias() += ConstMapMat(xi->value.data(), M, Din).transpose() * dy;
        if (bi)
            if (auto* g = grad_of(bi)) add_col_sums(dy.data(), M, Dout, g->data());
    });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, std::vector<double>* weights) {
    require_rank(q, 3, "attention q");
    require_rank(k, 3, "attention k");
    require_rank(v, 3, "attention v");
    const int N = q.dim(0), Tq = q.dim(1), D = q.dim(2), Tk = k.dim(1);
    if (k.dim(0) != N || v.dim(0) != N || k.dim(2) != D || v.dim(2) != D || v.dim(1) != Tk) {
        throw ShapeError("attention: incompatible q/k/v shapes " + shape_string(q.shape()) + " " + shape_string(k.shape()) + " " + shape_string(v.shape()));
    }
    if (heads < 1 || D % heads) throw ShapeError("attention: width " + std::to_string(D) + " not divisible by " + std::to_string(heads) + " heads");
    const int dh = D / heads;
    const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
    using Strided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

    std::vector<double> out(static_cast<std::size_t>(N) * Tq * D);
    std::vector<double> probs(static_cast<std::size_t>(N) * heads * Tq * Tk);
    for (int n = 0; n < N; ++n)
        for (int h = 0; h < heads; ++h) {
            Strided qh(q.values().data() + static_cast<std::size_t>(n) * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
            Strided kh(k.values().data() + static_cast<std::size_t>(n) * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
            Strided vh(v.values().data() + static_cast<std::size_t>(n) * Tk * D + h * dh, Tk, dh, Eigen::OuterStride<>(D));
            MapMat p(probs.data() + (static_cast<std::size_t>(n) * heads + h) * Tq * Tk, Tq, Tk);
            p.noalias() = (qh * kh.transpose()) * scale_factor;
            for (int i = 0; i < Tq; ++i) {
                double* row = p.data() + static_cast<std::size_t>(i) * Tk;
                const double mx = *std::max_element(row, row + Tk);
                double total = 0.0;
                for (int j = 0; j < Tk; ++j) total += row[j] = std::exp(row[j] - mx);
                for (int j = 0; j < Tk; ++j) row[j] /= total;
            }
            StridedMut oh(out.data() + static_cast<std::size_t>(n) * Tq * D + h * dh, Tq, dh, Eigen::OuterStride<>(D));
            oh.noalias() = p * vh;
        }
    if (weights) *weights = probs;
    Impl qi = q.shared(), ki = k.shared(), vi = v.shared();
    return make_result({N, Tq, D}, std::move(out), {q, k, v},
                       [=, probs = std::move(probs)](TensorImpl& self) {
                           auto* gq = grad_of(qi);
                           auto* gk = grad_of(ki);
                           auto* gv = grad_of(vi);
                           RowMat dp, ds;
                           for (int n = 0; n < N; ++n)
                               for (int h = 0; h < heads; ++h) {
                                   const std::size_t qo = static_cast<std::size_t>(n) * Tq * D + h * dh;
                                   const std::size_t ko = static_cast<std::size_t>(n) * Tk * D + h * dh;
                                   Strided dout(self.grad.data() + qo, Tq, dh, Eigen::OuterStride<>(D));
                                   ConstMapMat p(probs.data() + (static_cast<std::size_t>(n) * heads + h) * Tq * Tk, Tq, Tk);
                                   Strided vh(vi->value.data() + ko, Tk, dh, Eigen::OuterStride<>(D));
                                   if (gv) StridedMut(gv->data() + ko, Tk, dh, Eigen::OuterStride<>(D)).noalias() += p.transpose() * dout;
                                   if (!gq && !gk) continue;
                                   dp.noalias() = dout * vh.transpose();
                                   ds.resize(Tq, Tk);
                                   for (int i = 0; i < Tq; ++i) {
                                       double dot = 0.0;
                                       for (int j = 0; j < Tk; ++j) dot += dp(i, j) * p(i, j);
                                       for (int j = 0; j < Tk; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale_factor;
                                   }
                                   if (gq) {
                                       Strided kh(ki->value.data() + ko, Tk, dh, Eigen::OuterStride<>(D));
                                       StridedMut(gq->data() + qo, Tq, dh, Eigen::OuterStride<>(D)).noalias() += ds * kh;
                                   }
                                   if (gk) {
                                       Strided qh(qi->value.data() + qo, Tq, dh, Eigen::OuterStride<>(D));
                                       StridedMut(gk->data() + ko, Tk, dh, Eigen::OuterStride<>(D)).noalias() += ds.transpose() * qh;
                                   }
                               }
                       });
}

Tensor custom_scalar(const Tensor& input, double value, std::vector<double> grad) {
    if (grad.size() != input.numel()) throw ShapeError("custom_scalar: gradient size mismatch");
    Impl xi = input.shared();
    return make_result({1}, {value}, {input}, [xi, grad = std::move(grad)](TensorImpl& self) {
        auto* g = grad_of(xi);
        if (!g) return;
        const double s = self.grad[0];
        for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += s * grad[i];
    });
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights) {
    if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
    double total = 0;
    std::vector<Impl> impls;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].numel() != 1) throw ShapeError("weighted_sum: inputs must be scalars");
        total += weights[i] * scalars[i].item();
        impls.push_back(scalars[i].shared());
    }
    return make_result({1}, {total}, scalars, [impls, weights](TensorImpl& self) {
        for (std::size_t i = 0; i < impls.size(); ++i)
            if (auto* g = grad_of(impls[i])) (*g)[0] += weights[i] * self.grad[0];
    });
}

}  // namespace nighthaze::nn

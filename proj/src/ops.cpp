#include "vitc/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "vitc/errors.hpp"

namespace vitc::ops {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using CMapV = Eigen::Map<const Eigen::VectorXd>;

CMapM as_mat(const Tensor& t) { return CMapM(t.data(), t.dim(0), t.dim(1)); }
MapM as_mat(Tensor& t) { return MapM(t.data(), t.dim(0), t.dim(1)); }
CMapM as_mat(const Tensor& t, int rows, int cols) { return CMapM(t.data(), rows, cols); }
MapM as_mat(Tensor& t, int rows, int cols) { return MapM(t.data(), rows, cols); }

void require_rank(const Var& v, int rank, const char* op) {
    if (v.value().rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
}

void require_same(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

void require_size(const Var& v, std::size_t n, const char* op) {
    if (v.value().size() != n)
        throw ShapeError(std::string(op) + ": expected " + std::to_string(n) + " elements, got " +
                         shape_str(v.shape()));
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class F>
Var unary(const Var& a, F&& fn, auto&& dfn) {
    Tensor out(a.shape());
    const Tensor& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fn(x[i]);
    return make_result(std::move(out), {a}, [dfn](Node& self) {
        Node& x = in(self, 0);
        if (!x.requires_grad) return;
        Tensor& g = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * dfn(x.value[i], self.value[i]);
    });
}

/// Output columns [lo, hi) whose input column ox * stride + offset lies in [0, w).
std::pair<int, int> valid_range(int ow, int w, int stride, int offset) {
    int lo = 0;
    while (lo < ow && lo * stride + offset < 0) ++lo;
    int hi = ow;
    while (hi > lo && (hi - 1) * stride + offset >= w) --hi;
    return {lo, hi};
}

// im2col for a single [C x H x W] map: rows (c, ky, kx), cols (oy, ox).
void im2col(const double* x, int c, int h, int w, int k, int stride, int pad, int oh, int ow, double* cols) {
    const std::size_t ncol = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ncol;
                const double* plane = x + static_cast<std::size_t>(ci) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + ow, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * w;
                    const auto [lo, hi] = valid_range(ow, w, stride, kx - pad);
                    std::fill(dst, dst + lo, 0.0);
                    if (stride == 1)
                        std::copy(src + lo + kx - pad, src + hi + kx - pad, dst + lo);
                    else
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride - pad + kx];
                    std::fill(dst + hi, dst + ow, 0.0);
                }
            }
}

void col2im(const double* cols, int c, int h, int w, int k, int stride, int pad, int oh, int ow, double* x) {
    const std::size_t ncol = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * ncol;
                double* plane = x + static_cast<std::size_t>(ci) * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * ow;
                    double* dst = plane + static_cast<std::size_t>(iy) * w;
                    const auto [lo, hi] = valid_range(ow, w, stride, kx - pad);
                    for (int ox = lo; ox < hi; ++ox) dst[ox * stride - pad + kx] += src[ox];
                }
            }
}

}  // namespace

// ---- elementwise -------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    out += b.value();
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (in(self, k).requires_grad) in(self, k).grad_buffer() += self.grad;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (in(self, 0).requires_grad) in(self, 0).grad_buffer() += self.grad;
        if (in(self, 1).requires_grad) {
            Tensor& g = in(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& x = in(self, 0);
        Node& y = in(self, 1);
        if (x.requires_grad) {
            Tensor& g = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y.value[i];
        }
        if (y.requires_grad) {
            Tensor& g = y.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x.value[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out *= s;
    return make_result(std::move(out), {a}, [s](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return make_result(Tensor({1}, total), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        const double s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [inv_sqrt_2pi](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(
        a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

// ---- matrices ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    Tensor out({a.dim(0), b.dim(1)});
    as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& x = in(self, 0);
        Node& y = in(self, 1);
        const auto g = as_mat(static_cast<const Tensor&>(self.grad));
        if (x.requires_grad) as_mat(x.grad_buffer()).noalias() += g * as_mat(y.value).transpose();
        if (y.requires_grad) as_mat(y.grad_buffer()).noalias() += as_mat(x.value).transpose() * g;
    });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    if (x.dim(1) != w.dim(0))
        throw ShapeError("linear: input width " + std::to_string(x.dim(1)) + " does not match weight " +
                         shape_str(w.shape()));
    require_size(b, static_cast<std::size_t>(w.dim(1)), "linear bias");
    Tensor out({x.dim(0), w.dim(1)});
    auto o = as_mat(out);
    o.noalias() = as_mat(x.value()) * as_mat(w.value());
    o.rowwise() += CMapV(b.value().data(), w.dim(1)).transpose();
    return make_result(std::move(out), {x, w, b}, [](Node& self) {
        Node& xn = in(self, 0);
        Node& wn = in(self, 1);
        Node& bn = in(self, 2);
        const auto g = as_mat(static_cast<const Tensor&>(self.grad));
        if (xn.requires_grad) as_mat(xn.grad_buffer()).noalias() += g * as_mat(wn.value).transpose();
        if (wn.requires_grad) as_mat(wn.grad_buffer()).noalias() += as_mat(xn.value).transpose() * g;
        if (bn.requires_grad) {
            Tensor& gb = bn.grad_buffer();
            MapV(gb.data(), static_cast<Eigen::Index>(gb.size())) += g.colwise().sum().transpose();
        }
    });
}

Var transpose(const Var& a) {
    require_rank(a, 2, "transpose");
    Tensor out({a.dim(1), a.dim(0)});
    as_mat(out) = as_mat(a.value()).transpose();
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& x = in(self, 0);
        as_mat(x.grad_buffer()) += as_mat(static_cast<const Tensor&>(self.grad)).transpose();
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var add_row(const Var& x, const Var& v) {
    require_rank(x, 2, "add_row");
    require_size(v, static_cast<std::size_t>(x.dim(1)), "add_row");
    Tensor out = x.value();
    as_mat(out).rowwise() += CMapV(v.value().data(), x.dim(1)).transpose();
    return make_result(std::move(out), {x, v}, [](Node& self) {
        if (in(self, 0).requires_grad) in(self, 0).grad_buffer() += self.grad;
        if (in(self, 1).requires_grad) {
            Tensor& g = in(self, 1).grad_buffer();
            MapV(g.data(), static_cast<Eigen::Index>(g.size())) +=
                as_mat(static_cast<const Tensor&>(self.grad)).colwise().sum().transpose();
        }
    });
}

Var broadcast_rows(const Var& v, int rows) {
    const int d = static_cast<int>(v.value().size());
    Tensor out({rows, d});
    as_mat(out).rowwise() = CMapV(v.value().data(), d).transpose();
    return make_result(std::move(out), {v}, [](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        MapV(g.data(), static_cast<Eigen::Index>(g.size())) +=
            as_mat(static_cast<const Tensor&>(self.grad)).colwise().sum().transpose();
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 2, "layer_norm");
    const int n = x.dim(0);
    const int d = x.dim(1);
    require_size(gamma, static_cast<std::size_t>(d), "layer_norm gamma");
    require_size(beta, static_cast<std::size_t>(d), "layer_norm beta");
    Tensor xhat({n, d});
    std::vector<double> inv_std(static_cast<std::size_t>(n));
    Tensor out({n, d});
    const Tensor& xv = x.value();
    for (int r = 0; r < n; ++r) {
        double mu = 0.0;
        for (int c = 0; c < d; ++c) mu += xv.at(r, c);
        mu /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) var += (xv.at(r, c) - mu) * (xv.at(r, c) - mu);
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(r)] = is;
        for (int c = 0; c < d; ++c) {
            const double h = (xv.at(r, c) - mu) * is;
            xhat.at(r, c) = h;
            out.at(r, c) = h * gamma.value()[static_cast<std::size_t>(c)] + beta.value()[static_cast<std::size_t>(c)];
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
                           Node& xn = in(self, 0);
                           Node& gn = in(self, 1);
                           Node& bn = in(self, 2);
                           const Tensor& g = self.grad;
                           if (gn.requires_grad || bn.requires_grad) {
                               Tensor& gg = gn.grad_buffer();
                               Tensor& gb = bn.grad_buffer();
                               for (int r = 0; r < n; ++r)
                                   for (int c = 0; c < d; ++c) {
                                       gg[static_cast<std::size_t>(c)] += g.at(r, c) * xhat.at(r, c);
                                       gb[static_cast<std::size_t>(c)] += g.at(r, c);
                                   }
                           }
                           if (!xn.requires_grad) return;
                           Tensor& gx = xn.grad_buffer();
                           for (int r = 0; r < n; ++r) {
                               double s1 = 0.0, s2 = 0.0;
                               for (int c = 0; c < d; ++c) {
                                   const double dh = g.at(r, c) * gn.value[static_cast<std::size_t>(c)];
                                   s1 += dh;
                                   s2 += dh * xhat.at(r, c);
                               }
                               const double is = inv_std[static_cast<std::size_t>(r)];
                               for (int c = 0; c < d; ++c) {
                                   const double dh = g.at(r, c) * gn.value[static_cast<std::size_t>(c)];
                                   gx.at(r, c) += is * (dh - s1 / d - xhat.at(r, c) * s2 / d);
                               }
                           }
                       });
}

Var softmax_rows(const Var& x) {
    require_rank(x, 2, "softmax_rows");
    Tensor out = x.value();
    auto m = as_mat(out);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        m.row(r).array() -= m.row(r).maxCoeff();
        m.row(r) = m.row(r).array().exp();
        m.row(r) /= m.row(r).sum();
    }
    return make_result(std::move(out), {x}, [](Node& self) {
        const auto y = as_mat(static_cast<const Tensor&>(self.value));
        const auto g = as_mat(static_cast<const Tensor&>(self.grad));
        auto gx = as_mat(in(self, 0).grad_buffer());
        const Eigen::VectorXd dots = (y.array() * g.array()).rowwise().sum();
        gx.array() += y.array() * (g.colwise() - dots).array();
    });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
    require_rank(q, 2, "attention");
    require_rank(k, 2, "attention");
    require_rank(v, 2, "attention");
    require_same(k, v, "attention key/value");
    const int lq = q.dim(0), lk = k.dim(0), d = q.dim(1);
    if (k.dim(1) != d) throw ShapeError("attention: query/key widths differ");
    if (heads <= 0 || d % heads != 0)
        throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
    const int dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const auto qm = as_mat(q.value());
    const auto km = as_mat(k.value());
    const auto vm = as_mat(v.value());
    std::vector<MatRM> probs(static_cast<std::size_t>(heads));
    Tensor out({lq, d});
    auto om = as_mat(out);
    for (int h = 0; h < heads; ++h) {
        MatRM s = (qm.middleCols(h * dh, dh) * km.middleCols(h * dh, dh).transpose()) * inv_sqrt;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
            s.row(r).array() -= s.row(r).maxCoeff();
            s.row(r) = s.row(r).array().exp();
            s.row(r) /= s.row(r).sum();
        }
        om.middleCols(h * dh, dh).noalias() = s * vm.middleCols(h * dh, dh);
        probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    return make_result(std::move(out), {q, k, v},
                       [probs = std::move(probs), heads, dh, inv_sqrt, lq, lk](Node& self) {
                           Node& qn = in(self, 0);
                           Node& kn = in(self, 1);
                           Node& vn = in(self, 2);
                           const auto g = as_mat(static_cast<const Tensor&>(self.grad));
                           const auto qm = as_mat(static_cast<const Tensor&>(qn.value));
                           const auto km = as_mat(static_cast<const Tensor&>(kn.value));
                           const auto vm = as_mat(static_cast<const Tensor&>(vn.value));
                           for (int h = 0; h < heads; ++h) {
                               const MatRM& p = probs[static_cast<std::size_t>(h)];
                               const auto gh = g.middleCols(h * dh, dh);
                               if (vn.requires_grad)
                                   as_mat(vn.grad_buffer()).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
                               if (!qn.requires_grad && !kn.requires_grad) continue;
                               MatRM dp = gh * vm.middleCols(h * dh, dh).transpose();
                               const Eigen::VectorXd dots = (dp.array() * p.array()).rowwise().sum();
                               MatRM ds = (p.array() * (dp.colwise() - dots).array()).matrix() * inv_sqrt;
                               if (qn.requires_grad)
                                   as_mat(qn.grad_buffer()).middleCols(h * dh, dh).noalias() +=
                                       ds * km.middleCols(h * dh, dh);
                               if (kn.requires_grad)
                                   as_mat(kn.grad_buffer()).middleCols(h * dh, dh).noalias() +=
                                       ds.transpose() * qm.middleCols(h * dh, dh);
                           }
                           (void)lq;
                           (void)lk;
                       });
}

// ---- feature maps --------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    require_rank(x, 3, "conv2d");
    require_rank(w, 4, "conv2d weight");
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != ci || w.dim(3) != k)
        throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    require_size(b, static_cast<std::size_t>(co), "conv2d bias");
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (wd + 2 * pad - k) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
    const int kk = ci * k * k;
    const int npix = oh * ow;
    AlignedBuffer cols(static_cast<std::size_t>(kk) * npix);
    im2col(x.value().data(), ci, h, wd, k, stride, pad, oh, ow, cols.data());
    Tensor out({co, oh, ow});
    auto om = as_mat(out, co, npix);
    om.noalias() = as_mat(w.value(), co, kk) * CMapM(cols.data(), kk, npix);
    om.colwise() += CMapV(b.value().data(), co);
    return make_result(std::move(out), {x, w, b}, [=](Node& self) {
        Node& xn = in(self, 0);
        Node& wn = in(self, 1);
        Node& bn = in(self, 2);
        const auto g = as_mat(static_cast<const Tensor&>(self.grad), co, npix);
        if (bn.requires_grad) {
            Tensor& gb = bn.grad_buffer();
            MapV(gb.data(), co) += g.rowwise().sum();
        }
        AlignedBuffer cols(static_cast<std::size_t>(kk) * npix);
        if (wn.requires_grad) {
            im2col(xn.value.data(), ci, h, wd, k, stride, pad, oh, ow, cols.data());
            as_mat(wn.grad_buffer(), co, kk).noalias() += g * CMapM(cols.data(), kk, npix).transpose();
        }
        if (xn.requires_grad) {
            MapM(cols.data(), kk, npix).noalias() = as_mat(wn.value, co, kk).transpose() * g;
            col2im(cols.data(), ci, h, wd, k, stride, pad, oh, ow, xn.grad_buffer().data());
        }
    });
}

Var conv_transpose2x2(const Var& x, const Var& w, const Var& b) {
    require_rank(x, 3, "conv_transpose2x2");
    require_rank(w, 4, "conv_transpose2x2 weight");
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(1);
    if (w.dim(0) != ci || w.dim(2) != 2 || w.dim(3) != 2)
        throw ShapeError("conv_transpose2x2: weight " + shape_str(w.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    require_size(b, static_cast<std::size_t>(co), "conv_transpose2x2 bias");
    const int npix = h * wd;
    // taps[(o*4 + a*2 + c), p] = sum_i w[i, o, a, c] * x[i, p]
    MatRM taps = as_mat(w.value(), ci, co * 4).transpose() * as_mat(x.value(), ci, npix);
    Tensor out({co, 2 * h, 2 * wd});
    for (int o = 0; o < co; ++o)
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 2; ++c) {
                const auto row = taps.row(o * 4 + a * 2 + c);
                const double bias = b.value()[static_cast<std::size_t>(o)];
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < wd; ++xx) out.at(o, 2 * y + a, 2 * xx + c) = row(y * wd + xx) + bias;
            }
    return make_result(std::move(out), {x, w, b}, [=](Node& self) {
        Node& xn = in(self, 0);
        Node& wn = in(self, 1);
        Node& bn = in(self, 2);
        const Tensor& g = self.grad;
        MatRM gt(co * 4, npix);
        for (int o = 0; o < co; ++o)
            for (int a = 0; a < 2; ++a)
                for (int c = 0; c < 2; ++c)
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < wd; ++xx) gt(o * 4 + a * 2 + c, y * wd + xx) = g.at(o, 2 * y + a, 2 * xx + c);
        if (bn.requires_grad) {
            Tensor& gb = bn.grad_buffer();
            for (int o = 0; o < co; ++o) gb[static_cast<std::size_t>(o)] += gt.middleRows(o * 4, 4).sum();
        }
        if (wn.requires_grad)
            as_mat(wn.grad_buffer(), ci, co * 4).noalias() += as_mat(xn.value, ci, npix) * gt.transpose();
        if (xn.requires_grad) as_mat(xn.grad_buffer(), ci, npix).noalias() += as_mat(wn.value, ci, co * 4) * gt;
    });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 3, "instance_norm");
    const int c = x.dim(0);
    const int npix = x.dim(1) * x.dim(2);
    require_size(gamma, static_cast<std::size_t>(c), "instance_norm gamma");
    require_size(beta, static_cast<std::size_t>(c), "instance_norm beta");
    Tensor xhat(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(c));
    Tensor out(x.shape());
    for (int ch = 0; ch < c; ++ch) {
        const double* src = x.value().data() + static_cast<std::size_t>(ch) * npix;
        double mu = 0.0;
        for (int i = 0; i < npix; ++i) mu += src[i];
        mu /= npix;
        double var = 0.0;
        for (int i = 0; i < npix; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= npix;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(ch)] = is;
        const double gm = gamma.value()[static_cast<std::size_t>(ch)];
        const double bt = beta.value()[static_cast<std::size_t>(ch)];
        double* xh = xhat.data() + static_cast<std::size_t>(ch) * npix;
        double* dst = out.data() + static_cast<std::size_t>(ch) * npix;
        for (int i = 0; i < npix; ++i) {
            xh[i] = (src[i] - mu) * is;
            dst[i] = xh[i] * gm + bt;
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std), c, npix](Node& self) {
                           Node& xn = in(self, 0);
                           Node& gn = in(self, 1);
                           Node& bn = in(self, 2);
                           for (int ch = 0; ch < c; ++ch) {
                               const std::size_t off = static_cast<std::size_t>(ch) * npix;
                               const double* g = self.grad.data() + off;
                               const double* xh = xhat.data() + off;
                               double sg = 0.0, sgx = 0.0;
                               for (int i = 0; i < npix; ++i) {
                                   sg += g[i];
                                   sgx += g[i] * xh[i];
                               }
                               if (gn.requires_grad) gn.grad_buffer()[static_cast<std::size_t>(ch)] += sgx;
                               if (bn.requires_grad) bn.grad_buffer()[static_cast<std::size_t>(ch)] += sg;
                               if (!xn.requires_grad) continue;
                               const double gm = gn.value[static_cast<std::size_t>(ch)];
                               const double k = gm * inv_std[static_cast<std::size_t>(ch)];
                               double* gx = xn.grad_buffer().data() + off;
                               for (int i = 0; i < npix; ++i) gx[i] += k * (g[i] - sg / npix - xh[i] * sgx / npix);
                           }
                       });
}

ResizeTaps bilinear_taps(int in, int out) {
    ResizeTaps t;
    t.lo.resize(static_cast<std::size_t>(out));
    t.hi.resize(static_cast<std::size_t>(out));
    t.w_lo.resize(static_cast<std::size_t>(out));
    t.w_hi.resize(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * ratio - 0.5;
        if (src < 0.0) src = 0.0;
        int lo = static_cast<int>(std::floor(src));
        if (lo > in - 1) lo = in - 1;
        const int hi = std::min(lo + 1, in - 1);
        const double frac = src - lo;
        const auto u = static_cast<std::size_t>(o);
        t.lo[u] = lo;
        t.hi[u] = hi;
        t.w_lo[u] = 1.0 - frac;
        t.w_hi[u] = frac;
    }
    return t;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    if (x.rank() != 3) throw ShapeError("resize_bilinear: expected [C x H x W], got " + shape_str(x.shape()));
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (out_h <= 0 || out_w <= 0) throw ShapeError("resize_bilinear: non-positive target size");
    if (h == out_h && w == out_w) return x;
    const ResizeTaps ty = bilinear_taps(h, out_h);
    const ResizeTaps tx = bilinear_taps(w, out_w);
    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < out_h; ++y) {
            const auto uy = static_cast<std::size_t>(y);
            for (int xx = 0; xx < out_w; ++xx) {
                const auto ux = static_cast<std::size_t>(xx);
                out.at(ch, y, xx) = ty.w_lo[uy] * (tx.w_lo[ux] * x.at(ch, ty.lo[uy], tx.lo[ux]) +
                                                   tx.w_hi[ux] * x.at(ch, ty.lo[uy], tx.hi[ux])) +
                                    ty.w_hi[uy] * (tx.w_lo[ux] * x.at(ch, ty.hi[uy], tx.lo[ux]) +
                                                   tx.w_hi[ux] * x.at(ch, ty.hi[uy], tx.hi[ux]));
            }
        }
    return out;
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
    require_rank(x, 3, "resize_bilinear");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor out = resize_bilinear(x.value(), out_h, out_w);
    if (h == out_h && w == out_w) return make_result(std::move(out), {x}, [](Node& self) {
            in(self, 0).grad_buffer() += self.grad;
        });
    return make_result(std::move(out), {x}, [=](Node& self) {
        const ResizeTaps ty = bilinear_taps(h, out_h);
        const ResizeTaps tx = bilinear_taps(w, out_w);
        Tensor& gx = in(self, 0).grad_buffer();
        const Tensor& g = self.grad;
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < out_h; ++y) {
                const auto uy = static_cast<std::size_t>(y);
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto ux = static_cast<std::size_t>(xx);
                    const double v = g.at(ch, y, xx);
                    gx.at(ch, ty.lo[uy], tx.lo[ux]) += v * ty.w_lo[uy] * tx.w_lo[ux];
                    gx.at(ch, ty.lo[uy], tx.hi[ux]) += v * ty.w_lo[uy] * tx.w_hi[ux];
                    gx.at(ch, ty.hi[uy], tx.lo[ux]) += v * ty.w_hi[uy] * tx.w_lo[ux];
                    gx.at(ch, ty.hi[uy], tx.hi[ux]) += v * ty.w_hi[uy] * tx.w_hi[ux];
                }
            }
    });
}

std::vector<int> resize_nearest(std::span<const int> labels, int in_h, int in_w, int out_h, int out_w) {
    if (labels.size() != static_cast<std::size_t>(in_h) * in_w)
        throw ShapeError("resize_nearest: label plane size does not match " + std::to_string(in_h) + "x" +
                         std::to_string(in_w));
    std::vector<int> out(static_cast<std::size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        const int sy = std::min(in_h - 1, static_cast<int>(std::floor(static_cast<double>(y) * in_h / out_h)));
        for (int x = 0; x < out_w; ++x) {
            const int sx = std::min(in_w - 1, static_cast<int>(std::floor(static_cast<double>(x) * in_w / out_w)));
            out[static_cast<std::size_t>(y) * out_w + x] = labels[static_cast<std::size_t>(sy) * in_w + sx];
        }
    }
    return out;
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const int h = parts[0].dim(1), w = parts[0].dim(2);
    int c = 0;
    for (const Var& p : parts) {
        require_rank(p, 3, "concat_channels");
        if (p.dim(1) != h || p.dim(2) != w)
            throw ShapeError("concat_channels: spatial mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
        c += p.dim(0);
    }
    Tensor out({c, h, w});
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
        std::size_t off = 0;
        for (auto& p : self.inputs) {
            const std::size_t n = p->value.size();
            if (p->requires_grad) {
                Tensor& g = p->grad_buffer();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

Var softmax_channels(const Var& x) {
    require_rank(x, 3, "softmax_channels");
    const int c = x.dim(0);
    const int npix = x.dim(1) * x.dim(2);
    Tensor out = x.value();
    auto m = as_mat(out, c, npix);
    for (Eigen::Index p = 0; p < npix; ++p) {
        m.col(p).array() -= m.col(p).maxCoeff();
        m.col(p) = m.col(p).array().exp();
        m.col(p) /= m.col(p).sum();
    }
    return make_result(std::move(out), {x}, [c, npix](Node& self) {
        const auto y = as_mat(static_cast<const Tensor&>(self.value), c, npix);
        const auto g = as_mat(static_cast<const Tensor&>(self.grad), c, npix);
        auto gx = as_mat(in(self, 0).grad_buffer(), c, npix);
        const Eigen::RowVectorXd dots = (y.array() * g.array()).colwise().sum();
        gx.array() += y.array() * (g.rowwise() - dots).array();
    });
}

// ---- losses ------------------------------------------------------------------

Var focal_loss(const Var& probs, const Tensor& target, double gamma) {
    if (probs.value().size() != target.size())
        throw ShapeError("focal_loss: probabilities " + shape_str(probs.shape()) + " vs target " +
                         shape_str(target.shape()));
    const std::size_t n = target.size();
    const Tensor& p = probs.value();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pc = std::clamp(p[i], kProbEps, 1.0 - kProbEps);
        const double pt = target[i] > 0.5 ? pc : 1.0 - pc;
        total += -std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return make_result(Tensor({1}, total / static_cast<double>(n)), {probs}, [target, gamma, n](Node& self) {
        Node& pn = in(self, 0);
        Tensor& g = pn.grad_buffer();
        const double s = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double pv = pn.value[i];
            if (pv < kProbEps || pv > 1.0 - kProbEps) continue;
            const bool pos = target[i] > 0.5;
            const double pt = pos ? pv : 1.0 - pv;
            const double q = 1.0 - pt;
            // d/dpt of -(1-pt)^gamma log pt
            double d = -std::pow(q, gamma) / pt;
            if (gamma != 0.0) d += gamma * std::pow(q, gamma - 1.0) * std::log(pt);
            g[i] += s * (pos ? d : -d);
        }
    });
}

Var dice_loss(const Var& probs, const Tensor& target, double smooth) {
    if (probs.value().size() != target.size())
        throw ShapeError("dice_loss: probabilities " + shape_str(probs.shape()) + " vs target " +
                         shape_str(target.shape()));
    const Tensor& p = probs.value();
    double inter = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * target[i];
        sp += p[i];
        sy += target[i];
    }
    const double num = 2.0 * inter + smooth;
    const double den = sp + sy + smooth;
    return make_result(Tensor({1}, 1.0 - num / den), {probs}, [target, num, den](Node& self) {
        Tensor& g = in(self, 0).grad_buffer();
        const double s = self.grad[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= s * (2.0 * target[i] * den - num) / (den * den);
    });
}

Var cross_entropy(const Var& probs, std::span<const int> labels) {
    require_rank(probs, 3, "cross_entropy");
    const int c = probs.dim(0);
    const std::size_t npix = static_cast<std::size_t>(probs.dim(1)) * probs.dim(2);
    if (labels.size() != npix) throw ShapeError("cross_entropy: label count does not match probability map");
    std::vector<int> lab(labels.begin(), labels.end());
    double total = 0.0;
    for (std::size_t i = 0; i < npix; ++i) {
        if (lab[i] < 0 || lab[i] >= c) throw InvalidInput("cross_entropy: label out of range");
        total -= std::log(std::max(probs.value()[static_cast<std::size_t>(lab[i]) * npix + i], kProbEps));
    }
    return make_result(Tensor({1}, total / static_cast<double>(npix)), {probs},
                       [lab = std::move(lab), npix](Node& self) {
                           Node& pn = in(self, 0);
                           Tensor& g = pn.grad_buffer();
                           const double s = self.grad[0] / static_cast<double>(npix);
                           for (std::size_t i = 0; i < npix; ++i) {
                               const std::size_t idx = static_cast<std::size_t>(lab[i]) * npix + i;
                               if (pn.value[idx] >= kProbEps) g[idx] -= s / pn.value[idx];
                           }
                       });
}

Var multiclass_dice(const Var& probs, std::span<const int> labels, double smooth) {
    require_rank(probs, 3, "multiclass_dice");
    const int c = probs.dim(0);
    const std::size_t npix = static_cast<std::size_t>(probs.dim(1)) * probs.dim(2);
    if (labels.size() != npix) throw ShapeError("multiclass_dice: label count does not match probability map");
    std::vector<int> lab(labels.begin(), labels.end());
    std::vector<double> num(static_cast<std::size_t>(c)), den(static_cast<std::size_t>(c));
    double total = 0.0;
    for (int ch = 0; ch < c; ++ch) {
        const double* p = probs.value().data() + static_cast<std::size_t>(ch) * npix;
        double inter = 0.0, sp = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < npix; ++i) {
            const double y = lab[i] == ch ? 1.0 : 0.0;
            inter += p[i] * y;
            sp += p[i];
            sy += y;
        }
        num[static_cast<std::size_t>(ch)] = 2.0 * inter + smooth;
        den[static_cast<std::size_t>(ch)] = sp + sy + smooth;
        total += 1.0 - num[static_cast<std::size_t>(ch)] / den[static_cast<std::size_t>(ch)];
    }
    return make_result(Tensor({1}, total / c), {probs},
                       [lab = std::move(lab), num = std::move(num), den = std::move(den), c, npix](Node& self) {
                           Tensor& g = in(self, 0).grad_buffer();
                           const double s = self.grad[0] / c;
                           for (int ch = 0; ch < c; ++ch) {
                               const double nu = num[static_cast<std::size_t>(ch)];
                               const double de = den[static_cast<std::size_t>(ch)];
                               double* gp = g.data() + static_cast<std::size_t>(ch) * npix;
                               for (std::size_t i = 0; i < npix; ++i) {
                                   const double y = lab[i] == ch ? 1.0 : 0.0;
                                   gp[i] -= s * (2.0 * y * de - nu) / (de * de);
                               }
                           }
                       });
}

}  // namespace vitc::ops

#include "uidsc/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "uidsc/errors.hpp"

namespace uidsc::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_same(const Shape& a, const Shape& b, const char* op) {
    if (!(a == b)) throw ShapeError(std::string(op) + ": shape " + a.str() + " vs " + b.str());
}

// cols is (C*k*k) x (out_h*out_w), row-major.
void im2col(const double* img, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* cols) {
    const int out_plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        const double* src = img + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    double* dst = row + oy * out_w;
                    if (iy < 0 || iy >= height) {
                        std::fill(dst, dst + out_w, 0.0);
                        continue;
                    }
                    const double* line = src + static_cast<std::size_t>(iy) * width;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[ox] = (ix >= 0 && ix < width) ? line[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Accumulating inverse of im2col.
void col2im(const double* cols, int channels, int height, int width, int k, int stride, int pad,
            int out_h, int out_w, double* img) {
    const int out_plane = out_h * out_w;
    for (int c = 0; c < channels; ++c) {
        double* dst = img + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row =
                    cols + (static_cast<std::size_t>(c * k + ky) * k + kx) * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    double* line = dst + static_cast<std::size_t>(iy) * width;
                    const double* src = row + oy * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < width) line[ix] += src[ox];
                    }
                }
            }
        }
    }
}

void check_bias(const Var& bias, int channels, const char* op) {
    if (bias.defined() && (bias.value().size() != static_cast<std::size_t>(channels))) {
        throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.value().size()) +
                         " entries, expected " + std::to_string(channels));
    }
}

void add_bias(Tensor& y, const Var& bias) {
    if (!bias.defined()) return;
    const double* b = bias.value().data();
    for (int n = 0; n < y.n(); ++n)
        for (int c = 0; c < y.c(); ++c) {
            double* p = y.plane(n, c);
            const std::size_t plane = y.shape().plane();
            for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
        }
}

void accumulate_bias_grad(const Var& bias, const Tensor& g) {
    if (!bias.requires_grad()) return;
    double* db = bias.node()->grad_buffer().data();
    const std::size_t plane = g.shape().plane();
    for (int n = 0; n < g.n(); ++n)
        for (int c = 0; c < g.c(); ++c) {
            const double* p = g.plane(n, c);
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += p[i];
            db[c] += s;
        }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a.shape(), b.shape(), "add");
    Tensor y = a.value();
    y += b.value();
    auto an = a.node();
    auto bn = b.node();
    return Var::from_op(std::move(y), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) an->grad_buffer() += g;
        if (bn->requires_grad) bn->grad_buffer() += g;
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a.shape(), b.shape(), "sub");
    Tensor y = a.value();
    const double* bv = b.value().data();
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] -= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return Var::from_op(std::move(y), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) an->grad_buffer() += g;
        if (bn->requires_grad) {
            double* d = bn->grad_buffer().data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g.data()[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a.shape(), b.shape(), "mul");
    Tensor y = a.value();
    const double* bv = b.value().data();
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] *= bv[i];
    auto an = a.node();
    auto bn = b.node();
    return Var::from_op(std::move(y), {a, b}, [an, bn](const Tensor& g) {
        if (an->requires_grad) {
            double* d = an->grad_buffer().data();
            const double* bv = bn->value.data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.data()[i] * bv[i];
        }
        if (bn->requires_grad) {
            double* d = bn->grad_buffer().data();
            const double* av = an->value.data();
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.data()[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor y = a.value();
    for (auto& v : y.values()) v *= s;
    auto an = a.node();
    return Var::from_op(std::move(y), {a}, [an, s](const Tensor& g) {
        double* d = an->grad_buffer().data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += s * g.data()[i];
    });
}

Var mul_channel(const Var& x, const Var& gate) {
    const Shape& xs = x.shape();
    const Shape& gs = gate.shape();
    if (gs.n != xs.n || gs.c != xs.c || gs.h != 1 || gs.w != 1) {
        throw ShapeError("mul_channel: gate " + gs.str() + " for features " + xs.str());
    }
    Tensor y = x.value();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const double gv = gate.value().data()[n * xs.c + c];
            double* p = y.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) p[i] *= gv;
        }
    auto xn = x.node();
    auto gn = gate.node();
    return Var::from_op(std::move(y), {x, gate}, [xn, gn](const Tensor& g) {
        const Shape& s = g.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const double* gp = g.plane(n, c);
                const std::size_t gi = static_cast<std::size_t>(n) * s.c + c;
                if (xn->requires_grad) {
                    double* d = xn->grad_buffer().plane(n, c);
                    const double gv = gn->value.data()[gi];
                    for (std::size_t i = 0; i < plane; ++i) d[i] += gp[i] * gv;
                }
                if (gn->requires_grad) {
                    const double* xp = xn->value.plane(n, c);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
                    gn->grad_buffer().data()[gi] += acc;
                }
            }
    });
}

Var sigmoid(const Var& x) {
    Tensor y = x.value();
    for (auto& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
    auto xn = x.node();
    Tensor saved = y;
    return Var::from_op(std::move(y), {x}, [xn, saved = std::move(saved)](const Tensor& g) {
        double* d = xn->grad_buffer().data();
        const double* yv = saved.data();
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g.data()[i] * yv[i] * (1.0 - yv[i]);
    });
}

Var relu(const Var& x) {
    Tensor y = x.value();
    for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
    auto xn = x.node();
    return Var::from_op(std::move(y), {x}, [xn](const Tensor& g) {
        double* d = xn->grad_buffer().data();
        const double* xv = xn->value.data();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) d[i] += g.data()[i];
    });
}

Var prelu(const Var& x, const Var& slope) {
    const Shape& xs = x.shape();
    if (slope.value().size() != static_cast<std::size_t>(xs.c)) {
        throw ShapeError("prelu: slope size " + std::to_string(slope.value().size()) +
                         " for " + std::to_string(xs.c) + " channels");
    }
    Tensor y = x.value();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const double a = slope.value().data()[c];
            double* p = y.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i)
                if (p[i] < 0.0) p[i] *= a;
        }
    auto xn = x.node();
    auto sn = slope.node();
    return Var::from_op(std::move(y), {x, slope}, [xn, sn](const Tensor& g) {
        const Shape& s = g.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const double a = sn->value.data()[c];
                const double* gp = g.plane(n, c);
                const double* xp = xn->value.plane(n, c);
                if (xn->requires_grad) {
                    double* d = xn->grad_buffer().plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) d[i] += xp[i] < 0.0 ? a * gp[i] : gp[i];
                }
                if (sn->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i)
                        if (xp[i] < 0.0) acc += gp[i] * xp[i];
                    sn->grad_buffer().data()[c] += acc;
                }
            }
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    Shape s = parts.front().shape();
    int total_c = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w) {
            throw ShapeError("concat_channels: " + ps.str() + " vs " + s.str());
        }
        total_c += ps.c;
    }
    Shape out_shape{s.n, total_c, s.h, s.w};
    Tensor y(out_shape);
    for (int n = 0; n < s.n; ++n) {
        double* dst = y.sample(n);
        for (const auto& p : parts) {
            const std::size_t len = p.shape().per_sample();
            std::copy_n(p.value().sample(n), len, dst);
            dst += len;
        }
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    std::vector<ag::NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return Var::from_op(std::move(y), parents, [nodes](const Tensor& g) {
        for (int n = 0; n < g.n(); ++n) {
            const double* src = g.sample(n);
            for (const auto& node : nodes) {
                const std::size_t len = node->value.shape().per_sample();
                if (node->requires_grad) {
                    double* d = node->grad_buffer().sample(n);
                    for (std::size_t i = 0; i < len; ++i) d[i] += src[i];
                }
                src += len;
            }
        }
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w) {
        throw ShapeError("conv2d: weight " + ws.str() + " for input " + xs.str());
    }
    if (stride < 1 || padding < 0) throw ShapeError("conv2d: invalid stride/padding");
    check_bias(bias, ws.n, "conv2d");
    const int k = ws.h;
    const int out_h = (xs.h + 2 * padding - k) / stride + 1;
    const int out_w = (xs.w + 2 * padding - k) / stride + 1;
    if (out_h <= 0 || out_w <= 0) throw ShapeError("conv2d: input too small " + xs.str());
    const int cout = ws.n;
    const int col_rows = xs.c * k * k;
    const int out_plane = out_h * out_w;

    Tensor y(Shape{xs.n, cout, out_h, out_w});
    std::vector<double> cols(static_cast<std::size_t>(col_rows) * out_plane);
    ConstMatMap wm(weight.value().data(), cout, col_rows);
    for (int n = 0; n < xs.n; ++n) {
        im2col(x.value().sample(n), xs.c, xs.h, xs.w, k, stride, padding, out_h, out_w,
               cols.data());
        MatMap ym(y.sample(n), cout, out_plane);
        ym.noalias() = wm * ConstMatMap(cols.data(), col_rows, out_plane);
    }
    add_bias(y, bias);

    auto xn = x.node();
    auto wn = weight.node();
    return Var::from_op(
        std::move(y), {x, weight, bias},
        [xn, wn, bias, stride, padding, k, out_h, out_w](const Tensor& g) {
            const Shape& xs = xn->value.shape();
            const int cout = wn->value.n();
            const int col_rows = xs.c * k * k;
            const int out_plane = out_h * out_w;
            std::vector<double> cols(static_cast<std::size_t>(col_rows) * out_plane);
            ConstMatMap wm(wn->value.data(), cout, col_rows);
            for (int n = 0; n < xs.n; ++n) {
                ConstMatMap gm(g.sample(n), cout, out_plane);
                if (wn->requires_grad) {
                    im2col(xn->value.sample(n), xs.c, xs.h, xs.w, k, stride, padding, out_h,
                           out_w, cols.data());
                    MatMap dw(wn->grad_buffer().data(), cout, col_rows);
                    dw.noalias() += gm * ConstMatMap(cols.data(), col_rows, out_plane).transpose();
                }
                if (xn->requires_grad) {
                    MatMap dcols(cols.data(), col_rows, out_plane);
                    dcols.noalias() = wm.transpose() * gm;
                    col2im(cols.data(), xs.c, xs.h, xs.w, k, stride, padding, out_h, out_w,
                           xn->grad_buffer().sample(n));
                }
            }
            accumulate_bias_grad(bias, g);
        });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding,
                     int output_padding) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws.n != xs.c || ws.h != ws.w) {
        throw ShapeError("conv_transpose2d: weight " + ws.str() + " for input " + xs.str());
    }
    if (stride < 1 || padding < 0 || output_padding < 0 || output_padding >= stride) {
        throw ShapeError("conv_transpose2d: invalid stride/padding/output_padding");
    }
    const int k = ws.h;
    const int cout = ws.c;
    check_bias(bias, cout, "conv_transpose2d");
    const int out_h = (xs.h - 1) * stride - 2 * padding + k + output_padding;
    const int out_w = (xs.w - 1) * stride - 2 * padding + k + output_padding;
    if (out_h <= 0 || out_w <= 0) throw ShapeError("conv_transpose2d: empty output");
    const int col_rows = cout * k * k;
    const int in_plane = xs.h * xs.w;

    Tensor y(Shape{xs.n, cout, out_h, out_w});
    std::vector<double> cols(static_cast<std::size_t>(col_rows) * in_plane);
    ConstMatMap wm(weight.value().data(), xs.c, col_rows);
    for (int n = 0; n < xs.n; ++n) {
        MatMap cm(cols.data(), col_rows, in_plane);
        cm.noalias() = wm.transpose() * ConstMatMap(x.value().sample(n), xs.c, in_plane);
        col2im(cols.data(), cout, out_h, out_w, k, stride, padding, xs.h, xs.w, y.sample(n));
    }
    add_bias(y, bias);

    auto xn = x.node();
    auto wn = weight.node();
    return Var::from_op(
        std::move(y), {x, weight, bias},
        [xn, wn, bias, stride, padding, k, out_h, out_w](const Tensor& g) {
            const Shape& xs = xn->value.shape();
            const int cout = wn->value.c();
            const int col_rows = cout * k * k;
            const int in_plane = xs.h * xs.w;
            std::vector<double> cols(static_cast<std::size_t>(col_rows) * in_plane);
            ConstMatMap wm(wn->value.data(), xs.c, col_rows);
            for (int n = 0; n < xs.n; ++n) {
                im2col(g.sample(n), cout, out_h, out_w, k, stride, padding, xs.h, xs.w,
                       cols.data());
                ConstMatMap gcols(cols.data(), col_rows, in_plane);
                if (xn->requires_grad) {
                    MatMap dx(xn->grad_buffer().sample(n), xs.c, in_plane);
                    dx.noalias() += wm * gcols;
                }
                if (wn->requires_grad) {
                    MatMap dw(wn->grad_buffer().data(), xs.c, col_rows);
                    dw.noalias() += ConstMatMap(xn->value.sample(n), xs.c, in_plane) *
                                    gcols.transpose();
                }
            }
            accumulate_bias_grad(bias, g);
        });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, const NormOptions& options) {
    const Shape& s = x.shape();
    const std::size_t channels = static_cast<std::size_t>(s.c);
    if (gamma.value().size() != channels || beta.value().size() != channels ||
        running_mean.size() != channels || running_var.size() != channels) {
        throw ShapeError("batch_norm: parameter sizes do not match " + std::to_string(s.c) +
                         " channels");
    }
    const bool per_instance = options.mode == NormMode::Instance;
    const bool batch_stats = per_instance || options.training;
    // Statistics groups: one per channel (batch) or per (sample, channel) (instance).
    const int groups_n = per_instance ? s.n : 1;
    const std::size_t plane = s.plane();
    const double count = per_instance ? static_cast<double>(plane)
                                      : static_cast<double>(plane) * s.n;

    std::vector<double> mean(static_cast<std::size_t>(groups_n) * s.c);
    std::vector<double> inv_std(mean.size());
    if (batch_stats) {
        for (int gn = 0; gn < groups_n; ++gn)
            for (int c = 0; c < s.c; ++c) {
                double sum = 0.0;
                const int n_begin = per_instance ? gn : 0;
                const int n_end = per_instance ? gn + 1 : s.n;
                for (int n = n_begin; n < n_end; ++n) {
                    const double* p = x.value().plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) sum += p[i];
                }
                const double mu = sum / count;
                double sq = 0.0;
                for (int n = n_begin; n < n_end; ++n) {
                    const double* p = x.value().plane(n, c);
                    for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
                }
                const double var = sq / count;
                const std::size_t gi = static_cast<std::size_t>(gn) * s.c + c;
                mean[gi] = mu;
                inv_std[gi] = 1.0 / std::sqrt(var + options.eps);
                if (!per_instance && options.training) {
                    const double unbiased = count > 1.0 ? sq / (count - 1.0) : var;
                    running_mean.data()[c] =
                        (1.0 - options.momentum) * running_mean.data()[c] + options.momentum * mu;
                    running_var.data()[c] = (1.0 - options.momentum) * running_var.data()[c] +
                                            options.momentum * unbiased;
                }
            }
    } else {
        for (int c = 0; c < s.c; ++c) {
            mean[c] = running_mean.data()[c];
            inv_std[c] = 1.0 / std::sqrt(running_var.data()[c] + options.eps);
        }
    }

    Tensor xhat(s);
    Tensor y(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t gi = static_cast<std::size_t>(per_instance ? n : 0) * s.c + c;
            const double mu = mean[gi];
            const double is = inv_std[gi];
            const double ga = gamma.value().data()[c];
            const double be = beta.value().data()[c];
            const double* p = x.value().plane(n, c);
            double* xh = xhat.plane(n, c);
            double* out = y.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                out[i] = ga * xh[i] + be;
            }
        }

    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    return Var::from_op(
        std::move(y), {x, gamma, beta},
        [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), per_instance,
         batch_stats, groups_n, count](const Tensor& g) {
            const Shape& s = g.shape();
            const std::size_t plane = s.plane();
            // Per-group reductions of dy and dy * xhat.
            std::vector<double> sum_dy(static_cast<std::size_t>(groups_n) * s.c, 0.0);
            std::vector<double> sum_dy_xhat(sum_dy.size(), 0.0);
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t gi = static_cast<std::size_t>(per_instance ? n : 0) * s.c + c;
                    const double* gp = g.plane(n, c);
                    const double* xh = xhat.plane(n, c);
                    double a = 0.0;
                    double b = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        a += gp[i];
                        b += gp[i] * xh[i];
                    }
                    sum_dy[gi] += a;
                    sum_dy_xhat[gi] += b;
                }
            if (gn->requires_grad || bn->requires_grad) {
                for (int c = 0; c < s.c; ++c) {
                    double dg = 0.0;
                    double db = 0.0;
                    for (int gi = 0; gi < groups_n; ++gi) {
                        dg += sum_dy_xhat[static_cast<std::size_t>(gi) * s.c + c];
                        db += sum_dy[static_cast<std::size_t>(gi) * s.c + c];
                    }
                    if (gn->requires_grad) gn->grad_buffer().data()[c] += dg;
                    if (bn->requires_grad) bn->grad_buffer().data()[c] += db;
                }
            }
            if (!xn->requires_grad) return;
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t gi = static_cast<std::size_t>(per_instance ? n : 0) * s.c + c;
                    const double scale = gn->value.data()[c] * inv_std[gi];
                    const double* gp = g.plane(n, c);
                    double* d = xn->grad_buffer().plane(n, c);
                    if (!batch_stats) {
                        for (std::size_t i = 0; i < plane; ++i) d[i] += scale * gp[i];
                        continue;
                    }
                    const double* xh = xhat.plane(n, c);
                    const double mdy = sum_dy[gi] / count;
                    const double mdyx = sum_dy_xhat[gi] / count;
                    for (std::size_t i = 0; i < plane; ++i)
                        d[i] += scale * (gp[i] - mdy - xh[i] * mdyx);
                }
        });
}

Var global_avg_pool(const Var& x) {
    const Shape& s = x.shape();
    Tensor y(Shape{s.n, s.c, 1, 1});
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const double* p = x.value().plane(n, c);
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            y.data()[n * s.c + c] = acc / static_cast<double>(plane);
        }
    auto xn = x.node();
    return Var::from_op(std::move(y), {x}, [xn](const Tensor& g) {
        const Shape& s = xn->value.shape();
        const std::size_t plane = s.plane();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const double v = g.data()[n * s.c + c] / static_cast<double>(plane);
                double* d = xn->grad_buffer().plane(n, c);
                for (std::size_t i = 0; i < plane; ++i) d[i] += v;
            }
    });
}

Var softmax_taps(const Var& logits, int taps) {
    const Shape& s = logits.shape();
    if (taps < 1 || s.c % taps != 0) {
        throw ShapeError("softmax_taps: " + std::to_string(s.c) + " channels not divisible by " +
                         std::to_string(taps));
    }
    const int groups = s.c / taps;
    const std::size_t plane = s.plane();
    Tensor y(s);
    std::vector<double> buf(static_cast<std::size_t>(taps));
    for (int n = 0; n < s.n; ++n)
        for (int gidx = 0; gidx < groups; ++gidx)
            for (std::size_t i = 0; i < plane; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (int t = 0; t < taps; ++t) {
                    buf[t] = logits.value().plane(n, gidx * taps + t)[i];
                    mx = std::max(mx, buf[t]);
                }
                double z = 0.0;
                for (int t = 0; t < taps; ++t) {
                    buf[t] = std::exp(buf[t] - mx);
                    z += buf[t];
                }
                for (int t = 0; t < taps; ++t) y.plane(n, gidx * taps + t)[i] = buf[t] / z;
            }
    auto ln = logits.node();
    Tensor saved = y;
    return Var::from_op(std::move(y), {logits},
                        [ln, saved = std::move(saved), taps, groups](const Tensor& g) {
                            const Shape& s = g.shape();
                            const std::size_t plane = s.plane();
                            Tensor& d = ln->grad_buffer();
                            for (int n = 0; n < s.n; ++n)
                                for (int gidx = 0; gidx < groups; ++gidx)
                                    for (std::size_t i = 0; i < plane; ++i) {
                                        double dot = 0.0;
                                        for (int t = 0; t < taps; ++t) {
                                            const int ch = gidx * taps + t;
                                            dot += saved.plane(n, ch)[i] * g.plane(n, ch)[i];
                                        }
                                        for (int t = 0; t < taps; ++t) {
                                            const int ch = gidx * taps + t;
                                            d.plane(n, ch)[i] +=
                                                saved.plane(n, ch)[i] * (g.plane(n, ch)[i] - dot);
                                        }
                                    }
                        });
}

Var dynamic_depthwise_conv(const Var& features, const Var& kernels, int r) {
    const Shape& fs = features.shape();
    const Shape& ks = kernels.shape();
    const int taps = r * r;
    if (r < 1 || r % 2 == 0) throw ShapeError("dynamic_depthwise_conv: kernel size must be odd");
    if (ks.n != fs.n || ks.h != fs.h || ks.w != fs.w || ks.c != fs.c * taps) {
        throw ShapeError("dynamic_depthwise_conv: kernel field " + ks.str() + " for features " +
                         fs.str() + " with r=" + std::to_string(r));
    }
    const int half = r / 2;
    Tensor y(fs);
    for (int n = 0; n < fs.n; ++n)
        for (int c = 0; c < fs.c; ++c) {
            const double* src = features.value().plane(n, c);
            double* dst = y.plane(n, c);
            for (int t = 0; t < taps; ++t) {
                const int dy = t / r - half;
                const int dx = t % r - half;
                const double* kp = kernels.value().plane(n, c * taps + t);
                for (int yy = 0; yy < fs.h; ++yy) {
                    const int sy = yy + dy;
                    if (sy < 0 || sy >= fs.h) continue;
                    for (int xx = 0; xx < fs.w; ++xx) {
                        const int sx = xx + dx;
                        if (sx < 0 || sx >= fs.w) continue;
                        dst[yy * fs.w + xx] += kp[yy * fs.w + xx] * src[sy * fs.w + sx];
                    }
                }
            }
        }
    auto fn = features.node();
    auto kn = kernels.node();
    return Var::from_op(std::move(y), {features, kernels}, [fn, kn, r](const Tensor& g) {
        const Shape& fs = fn->value.shape();
        const int taps = r * r;
        const int half = r / 2;
        for (int n = 0; n < fs.n; ++n)
            for (int c = 0; c < fs.c; ++c) {
                const double* src = fn->value.plane(n, c);
                const double* gp = g.plane(n, c);
                for (int t = 0; t < taps; ++t) {
                    const int dy = t / r - half;
                    const int dx = t % r - half;
                    const double* kp = kn->value.plane(n, c * taps + t);
                    double* dk = kn->requires_grad ? kn->grad_buffer().plane(n, c * taps + t)
                                                   : nullptr;
                    double* df = fn->requires_grad ? fn->grad_buffer().plane(n, c) : nullptr;
                    for (int yy = 0; yy < fs.h; ++yy) {
                        const int sy = yy + dy;
                        if (sy < 0 || sy >= fs.h) continue;
                        for (int xx = 0; xx < fs.w; ++xx) {
                            const int sx = xx + dx;
                            if (sx < 0 || sx >= fs.w) continue;
                            const int o = yy * fs.w + xx;
                            const int si = sy * fs.w + sx;
                            if (dk) dk[o] += gp[o] * src[si];
                            if (df) df[si] += gp[o] * kp[o];
                        }
                    }
                }
            }
    });
}

Var mse(const Var& a, const Var& b) {
    require_same(a.shape(), b.shape(), "mse");
    const std::size_t count = a.value().size();
    if (count == 0) throw ShapeError("mse of empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = a.value().data()[i] - b.value().data()[i];
        acc += d * d;
    }
    Tensor y(Shape{1, 1, 1, 1}, acc / static_cast<double>(count));
    auto an = a.node();
    auto bn = b.node();
    return Var::from_op(std::move(y), {a, b}, [an, bn, count](const Tensor& g) {
        const double s = 2.0 * g.data()[0] / static_cast<double>(count);
        const double* av = an->value.data();
        const double* bv = bn->value.data();
        if (an->requires_grad) {
            double* d = an->grad_buffer().data();
            for (std::size_t i = 0; i < count; ++i) d[i] += s * (av[i] - bv[i]);
        }
        if (bn->requires_grad) {
            double* d = bn->grad_buffer().data();
            for (std::size_t i = 0; i < count; ++i) d[i] -= s * (av[i] - bv[i]);
        }
    });
}

Var flatten_hwc(const Var& x) {
    const Shape s = x.shape();
    const int len = static_cast<int>(s.per_sample());
    Tensor y(Shape{s.n, len, 1, 1});
    for (int n = 0; n < s.n; ++n) {
        double* dst = y.sample(n);
        for (int c = 0; c < s.c; ++c) {
            const double* p = x.value().plane(n, c);
            for (int i = 0; i < s.h * s.w; ++i) dst[static_cast<std::size_t>(i) * s.c + c] = p[i];
        }
    }
    auto xn = x.node();
    return Var::from_op(std::move(y), {x}, [xn, s](const Tensor& g) {
        for (int n = 0; n < s.n; ++n) {
            const double* src = g.sample(n);
            for (int c = 0; c < s.c; ++c) {
                double* d = xn->grad_buffer().plane(n, c);
                for (int i = 0; i < s.h * s.w; ++i) d[i] += src[static_cast<std::size_t>(i) * s.c + c];
            }
        }
    });
}

Var unflatten_hwc(const Var& v, int channels, int height, int width) {
    const Shape& vs = v.shape();
    const Shape s{vs.n, channels, height, width};
    if (vs.per_sample() != s.per_sample()) {
        throw ShapeError("unflatten_hwc: " + vs.str() + " cannot hold " + s.str());
    }
    Tensor y(s);
    for (int n = 0; n < s.n; ++n) {
        const double* src = v.value().sample(n);
        for (int c = 0; c < channels; ++c) {
            double* p = y.plane(n, c);
            for (int i = 0; i < height * width; ++i) p[i] = src[static_cast<std::size_t>(i) * channels + c];
        }
    }
    auto vn = v.node();
    return Var::from_op(std::move(y), {v}, [vn, s](const Tensor& g) {
        for (int n = 0; n < s.n; ++n) {
            double* d = vn->grad_buffer().sample(n);
            for (int c = 0; c < s.c; ++c) {
                const double* p = g.plane(n, c);
                for (int i = 0; i < s.h * s.w; ++i) d[static_cast<std::size_t>(i) * s.c + c] += p[i];
            }
        }
    });
}

Var power_normalize(const Var& v, std::vector<double>* scales, double eps) {
    const Shape& s = v.shape();
    const std::size_t len = s.per_sample();
    if (len < 2 || len % 2 != 0) {
        throw LengthError("power_normalize: latent length " + std::to_string(len) +
                          " is not a positive even number");
    }
    const double k = static_cast<double>(len / 2);
    std::vector<double> divisors(static_cast<std::size_t>(s.n));
    Tensor y = v.value();
    for (int n = 0; n < s.n; ++n) {
        const double* p = v.value().sample(n);
        double energy = 0.0;
        for (std::size_t i = 0; i < len; ++i) energy += p[i] * p[i];
        const double power = energy / k;
        if (!(power > eps)) {
            throw DegenerateSignalError("power_normalize: mean symbol power " +
                                        std::to_string(power) + " below threshold");
        }
        divisors[n] = std::sqrt(power);
        double* out = y.sample(n);
        for (std::size_t i = 0; i < len; ++i) out[i] /= divisors[n];
    }
    if (scales) *scales = divisors;
    auto vn = v.node();
    return Var::from_op(std::move(y), {v}, [vn, divisors, len, k](const Tensor& g) {
        const Shape& s = vn->value.shape();
        for (int n = 0; n < s.n; ++n) {
            const double* p = vn->value.sample(n);
            const double* gp = g.sample(n);
            const double sc = divisors[n];
            double dot = 0.0;
            for (std::size_t i = 0; i < len; ++i) dot += p[i] * gp[i];
            const double coef = dot / (k * sc * sc * sc);
            double* d = vn->grad_buffer().sample(n);
            for (std::size_t i = 0; i < len; ++i) d[i] += gp[i] / sc - p[i] * coef;
        }
    });
}

Var complex_scale(const Var& z, std::span<const std::complex<double>> gains) {
    const Shape& s = z.shape();
    const std::size_t len = s.per_sample();
    if (gains.size() != static_cast<std::size_t>(s.n) || len % 2 != 0) {
        throw ShapeError("complex_scale: " + std::to_string(gains.size()) + " gains for " +
                         s.str());
    }
    Tensor y(s);
    for (int n = 0; n < s.n; ++n) {
        const double* p = z.value().sample(n);
        double* out = y.sample(n);
        const double ar = gains[n].real();
        const double ai = gains[n].imag();
        for (std::size_t j = 0; j < len; j += 2) {
            out[j] = ar * p[j] - ai * p[j + 1];
            out[j + 1] = ar * p[j + 1] + ai * p[j];
        }
    }
    auto zn = z.node();
    std::vector<std::complex<double>> saved(gains.begin(), gains.end());
    return Var::from_op(std::move(y), {z}, [zn, saved, len](const Tensor& g) {
        // Adjoint of multiplication by a is multiplication by conj(a).
        for (std::size_t n = 0; n < saved.size(); ++n) {
            const double* gp = g.sample(static_cast<int>(n));
            double* d = zn->grad_buffer().sample(static_cast<int>(n));
            const double ar = saved[n].real();
            const double ai = saved[n].imag();
            for (std::size_t j = 0; j < len; j += 2) {
                d[j] += ar * gp[j] + ai * gp[j + 1];
                d[j + 1] += ar * gp[j + 1] - ai * gp[j];
            }
        }
    });
}

Var add_constant(const Var& x, const Tensor& offset) {
    require_same(x.shape(), offset.shape(), "add_constant");
    Tensor y = x.value();
    y += offset;
    auto xn = x.node();
    return Var::from_op(std::move(y), {x}, [xn](const Tensor& g) { xn->grad_buffer() += g; });
}

}  // namespace uidsc::ops

#include "usr/netmath.hpp"

#include "usr/parallel.hpp"

#include <algorithm>
#include <cmath>

namespace usr {

bool all_finite(const std::vector<double>& values) {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

ConvParams ConvParams::zeros(int out_ch, int in_ch, int kernel) {
    ConvParams p;
    p.out_ch = out_ch;
    p.in_ch = in_ch;
    p.kernel = kernel;
    p.direction_v.assign(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel, 0.0);
    p.gain_g.assign(out_ch, 0.0);
    p.bias.assign(out_ch, 0.0);
    return p;
}

GradientBundle GradientBundle::zeros_like(const ConvParams& p) {
    GradientBundle g;
    g.grad_v.assign(p.direction_v.size(), 0.0);
    g.grad_g.assign(p.gain_g.size(), 0.0);
    g.grad_bias.assign(p.bias.size(), 0.0);
    return g;
}

void GradientBundle::add(const GradientBundle& other) {
    for (std::size_t i = 0; i < grad_v.size(); ++i) grad_v[i] += other.grad_v[i];
    for (std::size_t i = 0; i < grad_g.size(); ++i) grad_g[i] += other.grad_g[i];
    for (std::size_t i = 0; i < grad_bias.size(); ++i) grad_bias[i] += other.grad_bias[i];
}

namespace {

void check_params(const ConvParams& p) {
    if (p.kernel < 1 || p.kernel % 2 == 0)
        throw std::invalid_argument("conv2d: kernel size must be odd and positive");
    if (p.direction_v.size() != p.weight_count() ||
        p.gain_g.size() != static_cast<std::size_t>(p.out_ch) ||
        p.bias.size() != static_cast<std::size_t>(p.out_ch))
        throw std::invalid_argument("conv2d: parameter buffers inconsistent with shape");
}

std::size_t conv_grain(const ConvParams& p, const Tensor& x) {
    // Items are (batch, channel) planes; keep chunks around 10^5 MACs so
    // small layers stay on one thread.
    const std::size_t per_item = p.slice_count() * x.lines * x.depth;
    return std::max<std::size_t>(1, 200000 / (per_item + 1));
}

}  // namespace

std::vector<double> weight_materialize(const ConvParams& p) {
    check_params(p);
    const std::size_t slice = p.slice_count();
    std::vector<double> w(p.direction_v.size());
    for (int oc = 0; oc < p.out_ch; ++oc) {
        const double* v = p.direction_v.data() + oc * slice;
        double sq = 0.0;
        for (std::size_t i = 0; i < slice; ++i) sq += v[i] * v[i];
        if (sq <= 0.0) throw std::invalid_argument("weight_materialize: zero-norm direction");
        const double scale = p.gain_g[oc] / std::sqrt(sq);
        double* dst = w.data() + oc * slice;
        for (std::size_t i = 0; i < slice; ++i) dst[i] = scale * v[i];
    }
    return w;
}

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
    check_params(p);
    if (x.channels != p.in_ch) throw std::invalid_argument("conv2d_forward: channel mismatch");
    if (!all_finite(x.values)) throw divergence_error("conv2d_forward: non-finite input");

    const std::vector<double> w = weight_materialize(p);
    const int L = x.lines, D = x.depth, k = p.kernel, r = k / 2;
    Tensor out(x.batch, p.out_ch, L, D);

    const std::size_t items = static_cast<std::size_t>(x.batch) * p.out_ch;
    parallel_for(
        items,
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t item = begin; item < end; ++item) {
                const int b = static_cast<int>(item) / p.out_ch;
                const int oc = static_cast<int>(item) % p.out_ch;
                double* plane = out.row(b, oc, 0);
                std::fill(plane, plane + static_cast<std::size_t>(L) * D, p.bias[oc]);
                for (int ic = 0; ic < p.in_ch; ++ic) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int dy = ky - r;
                        const int y0 = std::max(0, -dy), y1 = std::min(L, L - dy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int dx = kx - r;
                            const double wv = w[((static_cast<std::size_t>(oc) * p.in_ch + ic) * k + ky) * k + kx];
                            if (wv == 0.0) continue;
                            const int x0 = std::max(0, -dx), x1 = std::min(D, D - dx);
                            for (int y = y0; y < y1; ++y) {
                                const double* src = x.row(b, ic, y + dy) + dx;
                                double* dst = out.row(b, oc, y);
                                for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                            }
                        }
                    }
                }
            }
        },
        conv_grain(p, x));

    if (!all_finite(out.values)) throw divergence_error("conv2d_forward: non-finite output");
    return out;
}

ConvBackwardResult conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& upstream) {
    check_params(p);
    if (x.channels != p.in_ch) throw std::invalid_argument("conv2d_backward: channel mismatch");
    if (upstream.batch != x.batch || upstream.channels != p.out_ch || upstream.lines != x.lines ||
        upstream.depth != x.depth)
        throw std::invalid_argument("conv2d_backward: upstream shape mismatch");

    const int L = x.lines, D = x.depth, k = p.kernel, r = k / 2;
    const std::size_t slice = p.slice_count();

    // dLoss/dW (effective weight) and dLoss/dbias, one output channel per item.
    std::vector<double> grad_w(p.direction_v.size(), 0.0);
    GradientBundle grads = GradientBundle::zeros_like(p);
    parallel_for(
        static_cast<std::size_t>(p.out_ch),
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t ocs = begin; ocs < end; ++ocs) {
                const int oc = static_cast<int>(ocs);
                double bias_sum = 0.0;
                for (int b = 0; b < x.batch; ++b) {
                    const double* gplane = upstream.row(b, oc, 0);
                    for (std::size_t i = 0; i < static_cast<std::size_t>(L) * D; ++i) bias_sum += gplane[i];
                    for (int ic = 0; ic < p.in_ch; ++ic) {
                        for (int ky = 0; ky < k; ++ky) {
                            const int dy = ky - r;
                            const int y0 = std::max(0, -dy), y1 = std::min(L, L - dy);
                            for (int kx = 0; kx < k; ++kx) {
                                const int dx = kx - r;
                                const int x0 = std::max(0, -dx), x1 = std::min(D, D - dx);
                                double acc = 0.0;
                                for (int y = y0; y < y1; ++y) {
                                    const double* g = upstream.row(b, oc, y);
                                    const double* src = x.row(b, ic, y + dy) + dx;
                                    for (int xx = x0; xx < x1; ++xx) acc += g[xx] * src[xx];
                                }
                                grad_w[((ocs * p.in_ch + ic) * k + ky) * k + kx] += acc;
                            }
                        }
                    }
                }
                grads.grad_bias[oc] = bias_sum;
            }
        },
        std::max<std::size_t>(1, conv_grain(p, x) / std::max(1, x.batch)));

    // Chain dW through the weight-norm reparameterization W = g * v/||v||.
    for (int oc = 0; oc < p.out_ch; ++oc) {
        const double* v = p.direction_v.data() + oc * slice;
        const double* gw = grad_w.data() + oc * slice;
        double sq = 0.0;
        for (std::size_t i = 0; i < slice; ++i) sq += v[i] * v[i];
        if (sq <= 0.0) throw std::invalid_argument("conv2d_backward: zero-norm direction");
        const double norm = std::sqrt(sq);
        double dot = 0.0;
        for (std::size_t i = 0; i < slice; ++i) dot += gw[i] * v[i];
        dot /= norm;  // <dW, v_hat>
        grads.grad_g[oc] = dot;
        const double scale = p.gain_g[oc] / norm;
        double* gv = grads.grad_v.data() + oc * slice;
        for (std::size_t i = 0; i < slice; ++i) gv[i] = scale * (gw[i] - dot * v[i] / norm);
    }

    // dLoss/dx, one (batch, input channel) plane per item.
    const std::vector<double> w = weight_materialize(p);
    Tensor input_grad(x.batch, x.channels, L, D);
    const std::size_t items = static_cast<std::size_t>(x.batch) * p.in_ch;
    parallel_for(
        items,
        [&](std::size_t begin, std::size_t end) {
            for (std::size_t item = begin; item < end; ++item) {
                const int b = static_cast<int>(item) / p.in_ch;
                const int ic = static_cast<int>(item) % p.in_ch;
                for (int oc = 0; oc < p.out_ch; ++oc) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int dy = ky - r;
                        const int y0 = std::max(0, dy), y1 = std::min(L, L + dy);
                        for (int kx = 0; kx < k; ++kx) {
                            const int dx = kx - r;
                            const double wv = w[((static_cast<std::size_t>(oc) * p.in_ch + ic) * k + ky) * k + kx];
                            if (wv == 0.0) continue;
                            const int x0 = std::max(0, dx), x1 = std::min(D, D + dx);
                            for (int y = y0; y < y1; ++y) {
                                const double* g = upstream.row(b, oc, y - dy) - dx;
                                double* dst = input_grad.row(b, ic, y);
                                for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * g[xx];
                            }
                        }
                    }
                }
            }
        },
        std::max<std::size_t>(1, conv_grain(p, x) * p.in_ch / std::max(1, p.out_ch)));

    return {std::move(grads), std::move(input_grad)};
}

Tensor relu_forward(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.values) v = std::max(0.0, v);
    return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
    if (!x.same_shape(upstream)) throw std::invalid_argument("relu_backward: shape mismatch");
    Tensor out = upstream;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        if (x.values[i] <= 0.0) out.values[i] = 0.0;
    return out;
}

}  // namespace usr

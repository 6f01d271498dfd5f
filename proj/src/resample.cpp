#include "usr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace usr {

double keys_kernel(double x, const KernelParams& params) {
    const double a = params.a;
    const double ax = std::fabs(x);
    if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
    return 0.0;
}

namespace {

void check_geometry(const UsImage& low, const SamplingScheme& scheme, int target_lines) {
    const int s = scheme.stride();
    if (target_lines < 2 * s) throw std::invalid_argument("upsample: image too narrow for scheme");
    const int expected = (target_lines + s - 1) / s;
    if (low.lines() != expected)
        throw std::invalid_argument("upsample: inconsistent decimation geometry");
}

// Acquired-node row fetch with virtual rows beyond each edge. Virtual rows
// extrapolate as f(-1) = 3f(0) - 3f(1) + f(2) (mirrored on the right), which
// keeps quadratic reproduction intact up to the boundary. Grids with only
// two nodes fall back to linear extrapolation.
class NodeRows {
public:
    NodeRows(const UsImage& low) : low_(low), n_(low.lines()), d_(low.depth()) {
        left_.resize(d_);
        right0_.resize(d_);
        right1_.resize(d_);
        if (n_ >= 3) {
            auto f0 = low.row(0), f1 = low.row(1), f2 = low.row(2);
            auto gn1 = low.row(n_ - 1), gn2 = low.row(n_ - 2), gn3 = low.row(n_ - 3);
            for (int d = 0; d < d_; ++d) {
                left_[d] = 3.0 * f0[d] - 3.0 * f1[d] + f2[d];
                right0_[d] = 3.0 * gn1[d] - 3.0 * gn2[d] + gn3[d];
                right1_[d] = 3.0 * right0_[d] - 3.0 * gn1[d] + gn2[d];
            }
        } else {
            auto f0 = low.row(0), f1 = low.row(1);
            for (int d = 0; d < d_; ++d) {
                left_[d] = 2.0 * f0[d] - f1[d];
                right0_[d] = 2.0 * f1[d] - f0[d];
                right1_[d] = 3.0 * f1[d] - 2.0 * f0[d];
            }
        }
    }

    std::span<const double> node(int k) const {
        if (k >= 0 && k < n_) return low_.row(k);
        if (k == -1) return {left_.data(), static_cast<std::size_t>(d_)};
        if (k == n_) return {right0_.data(), static_cast<std::size_t>(d_)};
        return {right1_.data(), static_cast<std::size_t>(d_)};
    }

private:
    const UsImage& low_;
    int n_, d_;
    std::vector<double> left_, right0_, right1_;
};

void copy_acquired_rows(const UsImage& low, const SamplingScheme& scheme, UsImage& out) {
    const int s = scheme.stride();
    for (int k = 0; k < low.lines(); ++k) {
        auto src = low.row(k);
        auto dst = out.row(k * s);
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace

UsImage upsample_cubic(const UsImage& low, const SamplingScheme& scheme, int target_lines,
                       const KernelParams& params) {
    check_geometry(low, scheme, target_lines);
    const int s = scheme.stride();
    const int depth = low.depth();
    UsImage out(target_lines, depth);
    copy_acquired_rows(low, scheme, out);

    NodeRows nodes(low);
    for (int l = 0; l < target_lines; ++l) {
        if (l % s == 0) continue;
        const double u = static_cast<double>(l) / s;
        const int k0 = l / s;
        double w[4];
        for (int j = 0; j < 4; ++j) w[j] = keys_kernel(u - (k0 - 1 + j), params);
        auto n0 = nodes.node(k0 - 1);
        auto n1 = nodes.node(k0);
        auto n2 = nodes.node(k0 + 1);
        auto n3 = nodes.node(k0 + 2);
        auto dst = out.row(l);
        for (int d = 0; d < depth; ++d) {
            const double v = w[0] * n0[d] + w[1] * n1[d] + w[2] * n2[d] + w[3] * n3[d];
            dst[d] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

UsImage upsample_nearest(const UsImage& low, const SamplingScheme& scheme, int target_lines) {
    check_geometry(low, scheme, target_lines);
    const int s = scheme.stride();
    UsImage out(target_lines, low.depth());
    copy_acquired_rows(low, scheme, out);
    for (int l = 0; l < target_lines; ++l) {
        if (l % s == 0) continue;
        const double u = static_cast<double>(l) / s;
        const int k0 = l / s;
        int k = (u - k0 > 0.5) ? k0 + 1 : k0;
        k = std::min(k, low.lines() - 1);
        auto src = low.row(k);
        auto dst = out.row(l);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

UsImage upsample_linear(const UsImage& low, const SamplingScheme& scheme, int target_lines) {
    check_geometry(low, scheme, target_lines);
    const int s = scheme.stride();
    const int n = low.lines();
    const int depth = low.depth();
    UsImage out(target_lines, depth);
    copy_acquired_rows(low, scheme, out);
    for (int l = 0; l < target_lines; ++l) {
        if (l % s == 0) continue;
        const double u = static_cast<double>(l) / s;
        const int k0 = l / s;
        const double t = u - k0;
        auto dst = out.row(l);
        if (k0 + 1 < n) {
            auto a = low.row(k0), b = low.row(k0 + 1);
            for (int d = 0; d < depth; ++d)
                dst[d] = std::clamp((1.0 - t) * a[d] + t * b[d], 0.0, 1.0);
        } else {
            // Rightmost segment: continue the slope of the last two nodes.
            auto a = low.row(n - 2), b = low.row(n - 1);
            for (int d = 0; d < depth; ++d)
                dst[d] = std::clamp(b[d] + t * (b[d] - a[d]), 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace usr

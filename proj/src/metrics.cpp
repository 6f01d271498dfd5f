#include "usr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace usr {

namespace {

void check_shapes(const UsImage& a, const UsImage& b, const char* who) {
    if (a.lines() != b.lines() || a.depth() != b.depth())
        throw std::invalid_argument(std::string(who) + ": incomparable images");
}

// Quantile by linear interpolation between closest ranks (values sorted).
double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

}  // namespace

double MetricReport::first_bin_percent() const {
    std::uint64_t total = 0;
    for (auto c : histogram) total += c;
    if (total == 0) return 0.0;
    return 100.0 * static_cast<double>(histogram.empty() ? 0 : histogram[0]) / static_cast<double>(total);
}

double mse(const UsImage& a, const UsImage& b) {
    check_shapes(a, b, "mse");
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    double sum = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double d = pa[i] - pb[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pa.size());
}

double psnr(const UsImage& target, const UsImage& approx) {
    check_shapes(target, approx, "psnr");
    const double e = mse(target, approx);
    if (e == 0.0) return std::numeric_limits<double>::infinity();
    const double peak = *std::max_element(target.pixels().begin(), target.pixels().end());
    if (peak == 0.0) return -std::numeric_limits<double>::infinity();  // degenerate all-zero target
    return 10.0 * std::log10(peak * peak / e);
}

double ssim(const UsImage& a, const UsImage& b, const SsimConstants& c) {
    check_shapes(a, b, "ssim");
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    const auto n = static_cast<double>(pa.size());
    if (pa.size() < 2) throw std::invalid_argument("ssim: need at least 2 pixels");
    if (pa == pb) return 1.0;  // exact by definition; avoids sqrt round-off

    double sum_a = 0.0, sum_b = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        sum_a += pa[i];
        sum_b += pb[i];
    }
    const double mu_a = sum_a / n;
    const double mu_b = sum_b / n;

    double var_a = 0.0, var_b = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double da = pa[i] - mu_a;
        const double db = pb[i] - mu_b;
        var_a += da * da;
        var_b += db * db;
        cov += da * db;
    }
    var_a /= n;
    var_b /= n;
    cov /= n;
    const double sigma_a = std::sqrt(var_a);
    const double sigma_b = std::sqrt(var_b);

    const double lum = (2.0 * mu_a * mu_b + c.c1) / (mu_a * mu_a + mu_b * mu_b + c.c1);
    const double con = (2.0 * sigma_a * sigma_b + c.c2) / (var_a + var_b + c.c2);
    const double str = (cov + c.c3) / (sigma_a * sigma_b + c.c3);
    return lum * con * str;
}

double mae(const UsImage& a, const UsImage& b) {
    check_shapes(a, b, "mae");
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    double sum = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) sum += std::fabs(pa[i] - pb[i]);
    return sum / static_cast<double>(pa.size());
}

AbsErrorImage abs_error_image(const UsImage& a, const UsImage& b) {
    check_shapes(a, b, "abs_error_image");
    AbsErrorImage out;
    out.grid = UsImage(a.lines(), a.depth());
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    auto& pe = out.grid.pixels();
    double max_err = 0.0;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        pe[i] = std::fabs(pa[i] - pb[i]);
        max_err = std::max(max_err, pe[i]);
    }
    out.max_error = max_err;
    out.max_error_255 = max_err * 255.0;
    return out;
}

std::vector<std::uint64_t> error_histogram(const UsImage& a, const UsImage& b, double bin_width) {
    check_shapes(a, b, "error_histogram");
    if (!(bin_width > 0.0)) throw std::invalid_argument("error_histogram: bin width must be positive");
    const auto bins = static_cast<std::size_t>(std::ceil(1.0 / bin_width));
    std::vector<std::uint64_t> counts(bins, 0);
    const auto& pa = a.pixels();
    const auto& pb = b.pixels();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const double e = std::fabs(pa[i] - pb[i]);
        auto k = static_cast<std::size_t>(e / bin_width);
        if (k >= bins) k = bins - 1;  // last bin closed at 1
        ++counts[k];
    }
    return counts;
}

MetricReport metric_report(const UsImage& target, const UsImage& approx) {
    MetricReport r;
    r.psnr = psnr(target, approx);
    r.ssim = ssim(target, approx);
    r.mae = mae(target, approx);
    r.histogram = error_histogram(target, approx);
    return r;
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("box_stats: empty input");
    std::sort(values.begin(), values.end());
    BoxStats s;
    s.n = values.size();
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.50);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr;
    const double hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_low = s.q3;
    s.whisker_high = s.q1;
    for (double v : values) {
        if (v >= lo_fence) {
            s.whisker_low = v;
            break;
        }
    }
    for (auto it = values.rbegin(); it != values.rend(); ++it) {
        if (*it <= hi_fence) {
            s.whisker_high = *it;
            break;
        }
    }
    return s;
}

}  // namespace usr

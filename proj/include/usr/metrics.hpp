// Image-quality metrics: PSNR, SSIM, MAE, absolute-error image, thresholded
// error histogram, and box-plot statistics for corpus-level summaries.
#pragma once

#include "usr/core.hpp"

#include <cstdint>
#include <vector>

namespace usr {

// Stabilizing constants of the SSIM components. Defaults follow the usual
// (0.01)^2 / (0.03)^2 choice on the [0,1] intensity range, C3 = C2/2.
struct SsimConstants {
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
    double c3 = 0.03 * 0.03 / 2.0;
};

// Default |error| histogram bin width: 5 grey levels on the 0-255 scale.
inline constexpr double kDefaultErrorBinWidth = 5.0 / 255.0;

struct MetricReport {
    double psnr = 0.0;  // dB; +infinity when the images are identical
    double ssim = 0.0;
    double mae = 0.0;
    std::vector<std::uint64_t> histogram;  // |error| bins of width 5/255 covering [0,1]

    double first_bin_percent() const;  // share of pixels with |error| < 5/255, in percent
};

struct AbsErrorImage {
    UsImage grid;
    double max_error = 0.0;      // on the [0,1] scale
    double max_error_255 = 0.0;  // same value on the 0-255 scale
};

// Five-number box-plot summary. Quartiles interpolate linearly between order
// statistics; whiskers sit at the most extreme values within 1.5*IQR.
struct BoxStats {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;
    double whisker_high = 0.0;
    std::size_t n = 0;
};

double mse(const UsImage& a, const UsImage& b);
double psnr(const UsImage& target, const UsImage& approx);
double ssim(const UsImage& a, const UsImage& b, const SsimConstants& c = {});
double mae(const UsImage& a, const UsImage& b);

AbsErrorImage abs_error_image(const UsImage& a, const UsImage& b);
std::vector<std::uint64_t> error_histogram(const UsImage& a, const UsImage& b,
                                           double bin_width = kDefaultErrorBinWidth);

// Full metric triple plus histogram for one (target, approximation) pair.
MetricReport metric_report(const UsImage& target, const UsImage& approx);

BoxStats box_stats(std::vector<double> values);

}  // namespace usr

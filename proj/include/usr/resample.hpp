// Lateral up-sampling: cubic convolution reconstruction of missing beamlines,
// plus nearest/linear baselines for the comparison harness.
#pragma once

#include "usr/core.hpp"

namespace usr {

// Free parameter of the cubic convolution kernel. a = -0.5 reproduces
// quadratics exactly and is the canonical choice.
struct KernelParams {
    double a = -0.5;
};

// Piecewise-cubic interpolation weight at line offset x:
//   (a+2)|x|^3 - (a+3)|x|^2 + 1            for |x| <= 1
//   a|x|^3 - 5a|x|^2 + 8a|x| - 4a          for 1 < |x| < 2
//   0                                      for |x| >= 2
double keys_kernel(double x, const KernelParams& params = {});

// Reconstructs `target_lines` beamlines from a decimated image. Acquired
// lines (multiples of the stride) are copied bit-exactly; missing lines are
// weighted sums of the four nearest acquired lines. Output clamped to [0,1].
UsImage upsample_cubic(const UsImage& low, const SamplingScheme& scheme, int target_lines,
                       const KernelParams& params = {});

// Baselines with the same geometry contract: nearest copies the closest
// acquired line (ties to the left), linear blends the two bracketing ones.
UsImage upsample_nearest(const UsImage& low, const SamplingScheme& scheme, int target_lines);
UsImage upsample_linear(const UsImage& low, const SamplingScheme& scheme, int target_lines);

}  // namespace usr

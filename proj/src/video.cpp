#include "usr/video.hpp"

#include "usr/resample.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace usr {

double acquisition_frequency(const AcquisitionModel& m) {
    if (!(m.c > 0.0) || !(m.d > 0.0) || m.l <= 0)
        throw std::invalid_argument("acquisition_frequency: fields must be strictly positive");
    return m.c / (2.0 * m.d * static_cast<double>(m.l));
}

StreamResult process_stream(std::span<const UsImage> frames, SamplingScheme scheme,
                            const SrModel& model, bool simulate_acquisition) {
    if (frames.empty()) throw std::invalid_argument("process_stream: empty stream");
    if (model.config.kernel != kernel_for_stride(scheme.stride()))
        throw std::invalid_argument("process_stream: model kernel does not match sampling scheme");
    const int L0 = frames[0].lines(), D0 = frames[0].depth();
    for (const auto& f : frames)
        if (f.lines() != L0 || f.depth() != D0)
            throw std::invalid_argument("process_stream: shape drift mid-stream");

    const int s = scheme.stride();
    // Already-low-resolution frames carry only the acquired lines; place the
    // last one at the top of the restored grid (no extrapolated tail lines).
    const int target_lines = simulate_acquisition ? L0 : s * (L0 - 1) + 1;

    StreamResult result;
    result.frames.reserve(frames.size());
    result.latency.frame_ms.reserve(frames.size());

    using clock = std::chrono::steady_clock;
    for (const auto& frame : frames) {
        UsImage low = simulate_acquisition ? decimate(frame, scheme) : frame;

        const auto t0 = clock::now();
        UsImage up = upsample_cubic(low, scheme, target_lines);
        Tensor x = tensor_from_images(std::span(&up, 1));
        UsImage refined = image_from_tensor(model_forward(model, x, /*clamp_output=*/true), 0);
        const auto t1 = clock::now();

        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        result.latency.frame_ms.push_back(std::max(ms, 1e-9));
        result.frames.push_back(std::move(refined));
    }

    LatencyReport& rep = result.latency;
    rep.frames = static_cast<int>(frames.size());
    rep.scheme_label = scheme.factor_label();
    rep.lines = target_lines;
    rep.depth = D0;
    rep.model_kernel = model.config.kernel;
    std::vector<double> sorted = rep.frame_ms;
    std::sort(sorted.begin(), sorted.end());
    double sum = 0.0;
    for (double v : sorted) sum += v;
    rep.mean_ms = sum / static_cast<double>(sorted.size());
    const std::size_t n = sorted.size();
    rep.median_ms = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    rep.max_ms = sorted.back();
    return result;
}

}  // namespace usr

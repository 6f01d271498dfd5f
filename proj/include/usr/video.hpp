// Frame-stream super-resolution, the acquisition-frequency model, and
// per-frame latency measurement.
#pragma once

#include "usr/core.hpp"
#include "usr/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace usr {

// Pulse-echo timing model: one frame needs l round trips of depth d at speed c.
struct AcquisitionModel {
    double c = 1540.0;  // speed of sound, m/s
    double d = 0.0;     // imaging depth, m
    int l = 0;          // beamline count
};

// Frame rate f = c / (2 * d * l) in hertz.
double acquisition_frequency(const AcquisitionModel& m);

struct LatencyReport {
    std::vector<double> frame_ms;  // upsample + predict time per frame
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double max_ms = 0.0;
    int frames = 0;
    std::string scheme_label;  // config echo
    int lines = 0;             // output frame shape
    int depth = 0;
    int model_kernel = 0;
};

struct StreamResult {
    std::vector<UsImage> frames;  // order matches the input sequence
    LatencyReport latency;
};

// Each frame is decimated (when simulate_acquisition) or taken as already
// low-resolution, cubic-upsampled, then refined by the model. Latency covers
// upsample + predict only; file I/O and decimation are excluded.
StreamResult process_stream(std::span<const UsImage> frames, SamplingScheme scheme,
                            const SrModel& model, bool simulate_acquisition = true);

}  // namespace usr

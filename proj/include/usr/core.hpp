// Image/sampling data model and lateral beamline decimation.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace usr {

// Grayscale ultrasound-style image: `lines` lateral beamlines, each with
// `depth` axial samples. Row-major by line, intensities in [0, 1].
class UsImage {
public:
    UsImage() = default;
    UsImage(int lines, int depth, double fill = 0.0);
    UsImage(int lines, int depth, std::vector<double> pixels);

    int lines() const { return lines_; }
    int depth() const { return depth_; }
    std::size_t pixel_count() const { return pixels_.size(); }

    double at(int line, int d) const { return pixels_[static_cast<std::size_t>(line) * depth_ + d]; }
    double& at(int line, int d) { return pixels_[static_cast<std::size_t>(line) * depth_ + d]; }

    std::span<const double> row(int line) const {
        return {pixels_.data() + static_cast<std::size_t>(line) * depth_, static_cast<std::size_t>(depth_)};
    }
    std::span<double> row(int line) {
        return {pixels_.data() + static_cast<std::size_t>(line) * depth_, static_cast<std::size_t>(depth_)};
    }

    const std::vector<double>& pixels() const { return pixels_; }
    std::vector<double>& pixels() { return pixels_; }

    // Throws if any value falls outside [0, 1] or dimensions are below the
    // 4x4 minimum the interpolation/convolution kernels require.
    void validate_pipeline_entry() const;

private:
    int lines_ = 0;
    int depth_ = 0;
    std::vector<double> pixels_;
};

// Lateral decimation scheme: keep every s-th beamline, s in {2, 4}.
class SamplingScheme {
public:
    explicit SamplingScheme(int stride);
    static SamplingScheme from_label(const std::string& label);  // "2X"/"2x"/"4X"/"4x"

    int stride() const { return stride_; }
    const char* factor_label() const { return stride_ == 2 ? "2X" : "4X"; }

    bool is_acquired(int line) const { return line % stride_ == 0; }

private:
    int stride_;
};

// Per-line acquisition flags for one image width.
struct LineMask {
    std::vector<bool> acquired;

    int lines() const { return static_cast<int>(acquired.size()); }
    int acquired_count() const;
};

LineMask line_mask(int lines, const SamplingScheme& scheme);

// Keeps lines at indices k*s (ceil(L/s) of them); depth untouched, values
// copied bit-exactly.
UsImage decimate(const UsImage& img, const SamplingScheme& scheme);

}  // namespace usr

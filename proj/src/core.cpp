#include "usr/core.hpp"

#include <stdexcept>

namespace usr {

UsImage::UsImage(int lines, int depth, double fill)
    : lines_(lines), depth_(depth), pixels_(static_cast<std::size_t>(lines) * depth, fill) {
    if (lines < 1 || depth < 1) throw std::invalid_argument("UsImage: dimensions must be positive");
}

UsImage::UsImage(int lines, int depth, std::vector<double> pixels)
    : lines_(lines), depth_(depth), pixels_(std::move(pixels)) {
    if (lines < 1 || depth < 1) throw std::invalid_argument("UsImage: dimensions must be positive");
    if (pixels_.size() != static_cast<std::size_t>(lines) * depth)
        throw std::invalid_argument("UsImage: pixel buffer length must equal lines*depth");
}

void UsImage::validate_pipeline_entry() const {
    if (lines_ < 4 || depth_ < 4)
        throw std::invalid_argument("UsImage: images entering the pipeline must be at least 4x4");
    for (double v : pixels_)
        if (!(v >= 0.0 && v <= 1.0))
            throw std::invalid_argument("UsImage: pixel values must lie in [0, 1]");
}

SamplingScheme::SamplingScheme(int stride) : stride_(stride) {
    if (stride != 2 && stride != 4)
        throw std::invalid_argument("SamplingScheme: stride must be 2 or 4");
}

SamplingScheme SamplingScheme::from_label(const std::string& label) {
    if (label == "2X" || label == "2x") return SamplingScheme(2);
    if (label == "4X" || label == "4x") return SamplingScheme(4);
    throw std::invalid_argument("SamplingScheme: unknown factor label '" + label + "'");
}

int LineMask::acquired_count() const {
    int n = 0;
    for (bool a : acquired) n += a ? 1 : 0;
    return n;
}

LineMask line_mask(int lines, const SamplingScheme& scheme) {
    if (lines < 2 * scheme.stride())
        throw std::invalid_argument("line_mask: image too narrow for scheme");
    LineMask mask;
    mask.acquired.resize(lines);
    for (int l = 0; l < lines; ++l) mask.acquired[l] = scheme.is_acquired(l);
    return mask;
}

UsImage decimate(const UsImage& img, const SamplingScheme& scheme) {
    const int s = scheme.stride();
    if (img.lines() < 2 * s) throw std::invalid_argument("decimate: image too narrow");
    const int kept = (img.lines() + s - 1) / s;
    UsImage out(kept, img.depth());
    for (int k = 0; k < kept; ++k) {
        auto src = img.row(k * s);
        auto dst = out.row(k);
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
}

}  // namespace usr

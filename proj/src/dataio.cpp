#include "usr/dataio.hpp"

#include "usr/resample.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace usr {

namespace {

using nlohmann::json;

constexpr std::int64_t kMaxDimension = 1 << 20;  // 1M lines or samples
constexpr std::int64_t kMaxPixels = std::int64_t(1) << 30;

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) {
                in.unget();
                break;
            }
        } else {
            tok.push_back(static_cast<char>(c));
        }
        c = in.get();
    }
    return tok;
}

std::int64_t parse_dim(const std::string& tok, const char* what) {
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
        throw std::runtime_error(std::string("load_image: malformed header (") + what + ")");
    errno = 0;
    const long long v = std::strtoll(tok.c_str(), nullptr, 10);
    if (errno != 0 || v > kMaxDimension)
        throw std::runtime_error(std::string("load_image: dimension overflow (") + what + ")");
    return v;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
    std::filesystem::path p = image_path;
    p.replace_extension(".json");
    return p;
}

UsImage load_image(const std::filesystem::path& path, ImageMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_image: cannot open " + path.string());

    if (next_token(in) != "P5") throw std::runtime_error("load_image: malformed header (magic)");
    const std::int64_t width = parse_dim(next_token(in), "width");
    const std::int64_t height = parse_dim(next_token(in), "height");
    const std::string maxval = next_token(in);
    if (maxval != "255") throw std::runtime_error("load_image: unsupported maxval " + maxval);
    in.get();  // single whitespace byte separating header from payload
    if (!in) throw std::runtime_error("load_image: malformed header (payload separator)");
    if (width < 1 || height < 1) throw std::runtime_error("load_image: malformed header (zero dimension)");
    if (width * height > kMaxPixels) throw std::runtime_error("load_image: dimension overflow (payload)");

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width * height));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw std::runtime_error("load_image: truncated payload");
    if (in.get() != EOF) throw std::runtime_error("load_image: trailing bytes after payload");

    UsImage img(static_cast<int>(height), static_cast<int>(width));
    for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels()[i] = bytes[i] / 255.0;

    if (meta) {
        *meta = ImageMeta{};
        meta->lines = img.lines();
        meta->depth = img.depth();
        const auto sp = sidecar_path(path);
        std::ifstream side(sp);
        if (side) {
            json j;
            try {
                side >> j;
            } catch (const json::exception& e) {
                throw std::runtime_error("load_image: bad sidecar " + sp.string() + ": " + e.what());
            }
            meta->district = j.value("district", "");
            meta->scheme = j.value("scheme", "");
            const int jl = j.value("lines", img.lines());
            const int jd = j.value("depth", img.depth());
            if (jl != img.lines() || jd != img.depth())
                throw std::runtime_error("load_image: sidecar dimension mismatch for " + path.string());
        }
    }
    return img;
}

void save_image(const UsImage& img, const std::filesystem::path& path, const ImageMeta& meta) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_image: cannot open " + path.string());
    out << "P5\n" << img.depth() << ' ' << img.lines() << "\n255\n";
    std::vector<std::uint8_t> bytes(img.pixels().size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        const double v = std::clamp(img.pixels()[i], 0.0, 1.0);
        bytes[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("save_image: write failed for " + path.string());

    json j;
    j["district"] = meta.district;
    j["lines"] = img.lines();
    j["depth"] = img.depth();
    if (!meta.scheme.empty()) j["scheme"] = meta.scheme;
    std::ofstream side(sidecar_path(path), std::ios::trunc);
    if (!side) throw std::runtime_error("save_image: cannot open sidecar for " + path.string());
    side << j.dump(2) << '\n';
}

void PhantomParams::validate() const {
    if (count < 1) throw std::invalid_argument("PhantomParams: count must be >= 1");
    if (lines < 16 || depth < 16) throw std::invalid_argument("PhantomParams: dims must be >= 16");
    if (blob_min < 0 || blob_max < blob_min)
        throw std::invalid_argument("PhantomParams: bad blob count range");
    if (intensity_max < intensity_min)
        throw std::invalid_argument("PhantomParams: bad intensity range");
    if (speckle < 0.0 || speckle > 1.0)
        throw std::invalid_argument("PhantomParams: speckle weight must lie in [0,1]");
    if (background < 0.0 || background > 1.0)
        throw std::invalid_argument("PhantomParams: background must lie in [0,1]");
}

std::vector<UsImage> generate_phantoms(const PhantomParams& p) {
    p.validate();
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double rayleigh_sigma = std::sqrt(2.0 / 3.14159265358979323846);  // unit mean

    std::vector<UsImage> corpus;
    corpus.reserve(p.count);
    for (int n = 0; n < p.count; ++n) {
        const int L = p.lines, D = p.depth;
        UsImage img(L, D);

        // Smooth multiplicative background ripple.
        const double fl = 0.5 + unit(rng), fd = 0.5 + unit(rng);
        const double ph1 = unit(rng), ph2 = unit(rng);
        for (int l = 0; l < L; ++l) {
            double* row = img.row(l).data();
            const double sl = std::sin(2.0 * 3.14159265358979323846 * (fl * l / L + ph1));
            for (int d = 0; d < D; ++d) {
                const double cd = std::cos(2.0 * 3.14159265358979323846 * (fd * d / D + ph2));
                row[d] = p.background * (1.0 + 0.25 * sl * cd);
            }
        }

        // Soft-edged elliptical blobs; negative intensities carve dark inclusions.
        std::uniform_int_distribution<int> blob_count(p.blob_min, p.blob_max);
        const int nb = blob_count(rng);
        const double extent = std::min(L, D);
        for (int b = 0; b < nb; ++b) {
            const double cl = unit(rng) * (L - 1);
            const double cd = unit(rng) * (D - 1);
            const double al = extent / 16.0 + unit(rng) * (extent / 4.0 - extent / 16.0);
            const double ad = extent / 16.0 + unit(rng) * (extent / 4.0 - extent / 16.0);
            const double q = p.intensity_min + unit(rng) * (p.intensity_max - p.intensity_min);
            for (int l = 0; l < L; ++l) {
                double* row = img.row(l).data();
                const double rl = (l - cl) / al;
                for (int d = 0; d < D; ++d) {
                    const double rd = (d - cd) / ad;
                    const double r2 = rl * rl + rd * rd;
                    if (r2 < 1.0) {
                        const double w = (1.0 - r2) * (1.0 - r2);
                        row[d] += q * w;
                    }
                }
            }
        }

        // Multiplicative Rayleigh speckle, blended toward 1 by the weight.
        for (double& v : img.pixels()) {
            const double u = 1.0 - unit(rng);  // in (0,1]
            const double r = rayleigh_sigma * std::sqrt(-2.0 * std::log(u));
            const double s = (1.0 - p.speckle) + p.speckle * r;
            v = std::max(v, 0.0) * s;
        }

        // Axial binomial low-pass (1-2-1 along depth) with edge replication.
        std::vector<double> tmp(D);
        for (int l = 0; l < L; ++l) {
            double* row = img.row(l).data();
            for (int d = 0; d < D; ++d) {
                const double left = row[std::max(d - 1, 0)];
                const double right = row[std::min(d + 1, D - 1)];
                tmp[d] = 0.25 * left + 0.5 * row[d] + 0.25 * right;
            }
            std::copy(tmp.begin(), tmp.end(), row);
        }

        for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
        corpus.push_back(std::move(img));
    }
    return corpus;
}

const char* split_label(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    throw std::invalid_argument("split_label: unknown split");
}

Split split_from_label(const std::string& label) {
    if (label == "train") return Split::train;
    if (label == "val") return Split::val;
    if (label == "test") return Split::test;
    throw std::invalid_argument("split_from_label: unknown split '" + label + "'");
}

void SplitRatios::validate() const {
    if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0))
        throw std::invalid_argument("SplitRatios: ratios must be positive");
}

std::array<int, 3> split_sizes(int count, const SplitRatios& ratios) {
    ratios.validate();
    if (count < 3) throw std::invalid_argument("split_sizes: corpus smaller than 3 images");
    const double total = ratios.train + ratios.val + ratios.test;
    const std::array<double, 3> quota = {count * ratios.train / total, count * ratios.val / total,
                                         count * ratios.test / total};
    std::array<int, 3> sizes{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        sizes[i] = static_cast<int>(std::floor(quota[i]));
        frac[i] = quota[i] - sizes[i];
        assigned += sizes[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (int r = 0; r < count - assigned; ++r) ++sizes[order[r % 3]];
    // Guarantee non-empty splits by borrowing from the largest one.
    for (int i = 0; i < 3; ++i) {
        while (sizes[i] == 0) {
            const int donor = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
            --sizes[donor];
            ++sizes[i];
        }
    }
    return sizes;
}

std::vector<Split> assign_splits(int count, const SplitRatios& ratios, std::uint64_t seed) {
    const auto sizes = split_sizes(count, ratios);
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Split> splits(count, Split::train);
    int pos = 0;
    for (int i = 0; i < sizes[0]; ++i) splits[order[pos++]] = Split::train;
    for (int i = 0; i < sizes[1]; ++i) splits[order[pos++]] = Split::val;
    for (int i = 0; i < sizes[2]; ++i) splits[order[pos++]] = Split::test;
    return splits;
}

std::vector<SamplePair> BuiltDataset::split_pairs(Split s) const {
    std::vector<SamplePair> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
        if (manifest.entries[i].split == s) out.push_back(pairs[i]);
    return out;
}

BuiltDataset build_dataset(std::span<const UsImage> targets, SamplingScheme scheme,
                           const SplitRatios& ratios, std::uint64_t seed,
                           const std::string& district) {
    if (targets.size() < 3) throw std::invalid_argument("build_dataset: corpus smaller than 3 images");
    const auto splits = assign_splits(static_cast<int>(targets.size()), ratios, seed);

    BuiltDataset ds;
    ds.manifest.district_label = district;
    ds.manifest.scheme = scheme;
    ds.pairs.reserve(targets.size());

    double mean_sum = 0.0;
    std::size_t mean_count = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const UsImage& target = targets[i];
        target.validate_pipeline_entry();
        UsImage input = upsample_cubic(decimate(target, scheme), scheme, target.lines());

        ManifestEntry entry;
        entry.lines = target.lines();
        entry.depth = target.depth();
        entry.split = splits[i];
        ds.manifest.entries.push_back(std::move(entry));
        ds.pairs.push_back(SamplePair{std::move(input), target});

        if (splits[i] == Split::train) {
            mean_sum += std::accumulate(target.pixels().begin(), target.pixels().end(), 0.0);
            mean_count += target.pixels().size();
        }
    }
    ds.manifest.corpus_mean = mean_sum / static_cast<double>(mean_count);
    return ds;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    json j;
    j["district"] = m.district_label;
    j["scheme"] = m.scheme.factor_label();
    j["corpus_mean"] = m.corpus_mean;
    j["entries"] = json::array();
    for (const auto& e : m.entries) {
        j["entries"].push_back({{"target", e.target_path},
                                {"input", e.input_path},
                                {"lines", e.lines},
                                {"depth", e.depth},
                                {"split", split_label(e.split)}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_manifest: cannot open " + path.string());
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_manifest: bad JSON in " + path.string() + ": " + e.what());
    }
    try {
        DatasetManifest m;
        m.district_label = j.at("district").get<std::string>();
        m.scheme = SamplingScheme::from_label(j.at("scheme").get<std::string>());
        m.corpus_mean = j.at("corpus_mean").get<double>();
        for (const auto& je : j.at("entries")) {
            ManifestEntry e;
            e.target_path = je.at("target").get<std::string>();
            e.input_path = je.at("input").get<std::string>();
            e.lines = je.at("lines").get<int>();
            e.depth = je.at("depth").get<int>();
            e.split = split_from_label(je.at("split").get<std::string>());
            m.entries.push_back(std::move(e));
        }
        return m;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_manifest: missing field in " + path.string() + ": " + e.what());
    }
}

BuiltDataset load_dataset(const std::filesystem::path& manifest_path) {
    BuiltDataset ds;
    ds.manifest = load_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    for (const auto& e : ds.manifest.entries) {
        SamplePair pair;
        pair.input = load_image(base / e.input_path);
        pair.target = load_image(base / e.target_path);
        if (pair.input.lines() != e.lines || pair.input.depth() != e.depth ||
            pair.target.lines() != e.lines || pair.target.depth() != e.depth)
            throw std::runtime_error("load_dataset: image dimensions disagree with manifest entry " +
                                     e.target_path);
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

}  // namespace usr

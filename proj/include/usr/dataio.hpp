// Image file I/O (binary PGM + JSON sidecar), the synthetic speckle-phantom
// generator, and dataset manifest construction with proportional splits.
#pragma once

#include "usr/core.hpp"
#include "usr/train.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace usr {

// Sidecar metadata stored next to each PGM as `<stem>.json`.
struct ImageMeta {
    std::string district;
    int lines = 0;
    int depth = 0;
    std::string scheme;  // "2X"/"4X" when the image is a decimation-built input
};

std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

// Binary PGM, P5, maxval 255. Width is the depth axis, height the line axis
// (one image row per beamline). Values map linearly to [0,1].
UsImage load_image(const std::filesystem::path& path, ImageMeta* meta = nullptr);
void save_image(const UsImage& img, const std::filesystem::path& path, const ImageMeta& meta = {});

struct PhantomParams {
    std::uint64_t seed = 1;
    int count = 1;
    int lines = 64;
    int depth = 64;
    int blob_min = 2;
    int blob_max = 6;
    double intensity_min = -0.35;  // negative blobs model anechoic inclusions
    double intensity_max = 0.6;
    double speckle = 0.35;     // blend weight of unit-mean Rayleigh speckle
    double background = 0.18;  // base echogenicity level

    void validate() const;
};

// Deterministic per seed: smooth background + soft-edged elliptical blobs,
// multiplied by Rayleigh speckle, low-pass filtered axially, clamped to [0,1].
std::vector<UsImage> generate_phantoms(const PhantomParams& p);

enum class Split { train, val, test };

const char* split_label(Split s);
Split split_from_label(const std::string& label);

struct SplitRatios {
    double train = 1500.0;
    double val = 400.0;
    double test = 200.0;

    void validate() const;
};

// Largest-remainder apportionment of `count` into the three splits; every
// split gets at least one image (requires count >= 3).
std::array<int, 3> split_sizes(int count, const SplitRatios& ratios);

// Seeded-shuffle assignment; result[i] is the split of corpus image i.
std::vector<Split> assign_splits(int count, const SplitRatios& ratios, std::uint64_t seed);

struct ManifestEntry {
    std::string target_path;  // relative to the manifest file once materialized
    std::string input_path;
    int lines = 0;
    int depth = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    std::string district_label;
    SamplingScheme scheme{2};
    std::vector<ManifestEntry> entries;
    double corpus_mean = 0.0;  // over train-split targets; feeds ModelConfig.norm_mean
};

// Manifest plus pairs parallel to manifest.entries. input_i is the cubic
// upsample of the decimated target_i, so shapes match within every pair.
struct BuiltDataset {
    DatasetManifest manifest;
    std::vector<SamplePair> pairs;

    std::vector<SamplePair> split_pairs(Split s) const;
};

BuiltDataset build_dataset(std::span<const UsImage> targets, SamplingScheme scheme,
                           const SplitRatios& ratios, std::uint64_t seed,
                           const std::string& district);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Reads a saved manifest and loads every referenced pair from disk.
BuiltDataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace usr

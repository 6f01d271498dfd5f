// Command-line surface: phantom generation, dataset construction, training,
// single-image prediction, corpus evaluation, frame-stream processing, and
// the acquisition-frequency calculator.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
// Diagnostics go to standard error; machine-readable output goes to files
// (the lone exception is `freq`, which prints its single value to stdout).
#include "usr/core.hpp"
#include "usr/dataio.hpp"
#include "usr/metrics.hpp"
#include "usr/model.hpp"
#include "usr/resample.hpp"
#include "usr/train.hpp"
#include "usr/video.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <span>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Locale-independent shortest round-trip formatting.
std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string numbered(const char* stem, int i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%06d.pgm", stem, i);
    return buf;
}

json box_json(const usr::BoxStats& b) {
    return {{"median", b.median},           {"q1", b.q1},
            {"q3", b.q3},                   {"whisker_low", b.whisker_low},
            {"whisker_high", b.whisker_high}, {"n", b.n}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<fs::path> sorted_pgms(const fs::path& dir, const std::string& prefix) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".pgm") continue;
        if (!prefix.empty() && e.path().filename().string().rfind(prefix, 0) != 0) continue;
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no PGM images found in " + dir.string());
    return files;
}

// ---------------------------------------------------------------------- phantom

struct PhantomOpts {
    std::uint64_t seed = 1;
    int count = 12;
    int lines = 64;
    int depth = 64;
    std::string out;
    std::string district = "phantom";
};

int run_phantom(const PhantomOpts& o) {
    usr::PhantomParams p;
    p.seed = o.seed;
    p.count = o.count;
    p.lines = o.lines;
    p.depth = o.depth;
    const auto corpus = usr::generate_phantoms(p);

    fs::create_directories(o.out);
    usr::ImageMeta meta;
    meta.district = o.district;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        usr::save_image(corpus[i], fs::path(o.out) / numbered("img", static_cast<int>(i)), meta);
    std::cerr << "wrote " << corpus.size() << " phantom images to " << o.out << '\n';
    return 0;
}

// ----------------------------------------------------------------- build-dataset

struct BuildOpts {
    std::string in;
    std::string out;
    std::string scheme = "2x";
    std::uint64_t seed = 0;
    std::string district;
};

int run_build_dataset(const BuildOpts& o) {
    std::vector<usr::UsImage> targets;
    std::string district = o.district;
    for (const auto& path : sorted_pgms(o.in, "")) {
        usr::ImageMeta meta;
        targets.push_back(usr::load_image(path, &meta));
        if (district.empty() && !meta.district.empty()) district = meta.district;
    }
    if (district.empty()) district = "unlabeled";

    const auto scheme = usr::SamplingScheme::from_label(o.scheme);
    usr::BuiltDataset ds = usr::build_dataset(targets, scheme, usr::SplitRatios{}, o.seed, district);

    fs::create_directories(fs::path(o.out) / "targets");
    fs::create_directories(fs::path(o.out) / "inputs");
    usr::ImageMeta target_meta;
    target_meta.district = district;
    usr::ImageMeta input_meta = target_meta;
    input_meta.scheme = scheme.factor_label();
    int sizes[3] = {0, 0, 0};
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        auto& entry = ds.manifest.entries[i];
        const std::string name = numbered("img", static_cast<int>(i));
        entry.target_path = "targets/" + name;
        entry.input_path = "inputs/" + name;
        usr::save_image(ds.pairs[i].target, fs::path(o.out) / entry.target_path, target_meta);
        usr::save_image(ds.pairs[i].input, fs::path(o.out) / entry.input_path, input_meta);
        ++sizes[static_cast<int>(entry.split)];
    }
    usr::save_manifest(ds.manifest, fs::path(o.out) / "manifest.json");
    std::cerr << "built " << scheme.factor_label() << " dataset of " << ds.pairs.size()
              << " pairs (train/val/test = " << sizes[0] << '/' << sizes[1] << '/' << sizes[2]
              << ", corpus mean " << fmt(ds.manifest.corpus_mean) << ") in " << o.out << '\n';
    return 0;
}

// ---------------------------------------------------------------------- train

struct TrainOpts {
    std::string manifest;
    std::string config;
    std::string out_model;
    std::string history;
    int epochs = 200;
    int batch = 8;
    double lr_start = 1e-3;
    double lr_end = 1e-6;
    std::uint64_t seed = 0;
    int blocks = 8;
    int width = 10;
    int expansion = 4;
};

// Values from --config apply only where the flag was not passed explicitly.
void apply_config_file(TrainOpts& o, const CLI::App* sub) {
    std::ifstream in(o.config);
    if (!in) throw std::runtime_error("cannot open config " + o.config);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("bad JSON in " + o.config + ": " + e.what());
    }
    const auto take = [&](const char* flag, const char* key, auto& field) {
        if (sub->count(flag) == 0 && j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("--epochs", "epochs", o.epochs);
    take("--batch", "batch_size", o.batch);
    take("--lr-start", "lr_start", o.lr_start);
    take("--lr-end", "lr_end", o.lr_end);
    take("--seed", "seed", o.seed);
    take("--blocks", "blocks", o.blocks);
    take("--width", "width", o.width);
    take("--expansion", "expansion", o.expansion);
}

int run_train(const TrainOpts& o) {
    usr::BuiltDataset ds = usr::load_dataset(o.manifest);
    const auto train_pairs = ds.split_pairs(usr::Split::train);
    const auto val_pairs = ds.split_pairs(usr::Split::val);
    if (train_pairs.empty() || val_pairs.empty())
        throw std::runtime_error("manifest is missing train or val entries");

    usr::ModelConfig mc;
    mc.blocks = o.blocks;
    mc.width = o.width;
    mc.expansion = o.expansion;
    mc.kernel = usr::kernel_for_stride(ds.manifest.scheme.stride());
    mc.norm_mean = ds.manifest.corpus_mean;

    usr::TrainConfig tc;
    tc.epochs = o.epochs;
    tc.batch_size = o.batch;
    tc.lr_start = o.lr_start;
    tc.lr_end = o.lr_end;
    tc.seed = o.seed;

    usr::LossParams lp;
    lp.scheme = ds.manifest.scheme;

    const usr::SrModel init = usr::model_init(mc, o.seed);
    const usr::FitResult result = usr::fit(init, train_pairs, val_pairs, tc, lp);

    usr::model_save(result.model, o.out_model);
    std::string csv = "epoch,train_loss,val_psnr,lr\n";
    for (std::size_t e = 0; e < result.history.train_loss.size(); ++e) {
        csv += std::to_string(e) + ',' + fmt(result.history.train_loss[e]) + ',' +
               fmt(result.history.val_psnr[e]) + ',' + fmt(result.history.lr[e]) + '\n';
    }
    write_text(o.history, csv);

    if (result.history.diverged) {
        std::cerr << "training diverged after " << result.history.train_loss.size()
                  << " completed epochs; wrote last finite checkpoint to " << o.out_model << '\n';
        return 3;
    }
    std::cerr << "trained " << result.history.train_loss.size() << " epochs; best validation PSNR "
              << fmt(result.history.best_val_psnr) << " dB at epoch " << result.history.best_epoch
              << "; model written to " << o.out_model << '\n';
    return 0;
}

// --------------------------------------------------------------------- predict

struct PredictOpts {
    std::string model;
    std::string in;
    std::string out;
};

int run_predict(const PredictOpts& o) {
    const usr::SrModel model = usr::model_load(o.model);
    usr::ImageMeta meta;
    const usr::UsImage img = usr::load_image(o.in, &meta);
    const char* expected = usr::scheme_for_kernel(model.config.kernel).factor_label();
    if (!meta.scheme.empty() && meta.scheme != expected) {
        std::cerr << "error: scheme mismatch: model expects " << expected << " inputs but " << o.in
                  << " was built for " << meta.scheme << '\n';
        return 2;
    }

    const usr::Tensor x = usr::tensor_from_images(std::span(&img, 1));
    const usr::UsImage pred = usr::image_from_tensor(usr::model_forward(model, x), 0);
    usr::ImageMeta out_meta;
    out_meta.district = meta.district;
    usr::save_image(pred, o.out, out_meta);
    std::cerr << "wrote prediction to " << o.out << '\n';
    return 0;
}

// -------------------------------------------------------------------- evaluate

struct EvaluateOpts {
    std::string model;
    std::string manifest;
    std::string report;
};

int run_evaluate(const EvaluateOpts& o) {
    const usr::SrModel model = usr::model_load(o.model);
    usr::BuiltDataset ds = usr::load_dataset(o.manifest);
    if (usr::scheme_for_kernel(model.config.kernel).stride() != ds.manifest.scheme.stride()) {
        std::cerr << "error: scheme mismatch: model expects "
                  << usr::scheme_for_kernel(model.config.kernel).factor_label()
                  << " data but the manifest was built for " << ds.manifest.scheme.factor_label()
                  << '\n';
        return 2;
    }
    const auto test_pairs = ds.split_pairs(usr::Split::test);
    if (test_pairs.empty()) throw std::runtime_error("manifest has no test entries");

    const usr::PairedSetEvaluation ev = usr::evaluate(model, test_pairs);
    fs::create_directories(o.report);

    std::string csv =
        "index,psnr_input,psnr_pred,ssim_input,ssim_pred,mae_input,mae_pred,"
        "first_bin_input_percent,first_bin_pred_percent\n";
    for (std::size_t i = 0; i < test_pairs.size(); ++i) {
        const auto& a = ev.input_reports[i];
        const auto& b = ev.pred_reports[i];
        csv += std::to_string(i) + ',' + fmt(a.psnr) + ',' + fmt(b.psnr) + ',' + fmt(a.ssim) + ',' +
               fmt(b.ssim) + ',' + fmt(a.mae) + ',' + fmt(b.mae) + ',' + fmt(a.first_bin_percent()) +
               ',' + fmt(b.first_bin_percent()) + '\n';
    }
    write_text(fs::path(o.report) / "per_image.csv", csv);

    json summary;
    summary["count"] = test_pairs.size();
    summary["scheme"] = ds.manifest.scheme.factor_label();
    summary["district"] = ds.manifest.district_label;
    summary["input"] = {{"psnr", box_json(ev.input_psnr)},
                        {"ssim", box_json(ev.input_ssim)},
                        {"mae", box_json(ev.input_mae)},
                        {"first_bin_percent", ev.input_first_bin_percent}};
    summary["prediction"] = {{"psnr", box_json(ev.pred_psnr)},
                             {"ssim", box_json(ev.pred_ssim)},
                             {"mae", box_json(ev.pred_mae)},
                             {"first_bin_percent", ev.pred_first_bin_percent}};
    summary["deltas"] = {{"median_psnr", ev.median_psnr_delta},
                         {"median_ssim", ev.median_ssim_delta},
                         {"median_mae", ev.median_mae_delta},
                         {"first_bin_percent", ev.first_bin_delta}};
    write_text(fs::path(o.report) / "summary.json", summary.dump(2) + "\n");

    // Pooled histograms plus per-pair error images for visual inspection.
    const std::size_t bins =
        ev.input_reports.empty() ? 0 : ev.input_reports.front().histogram.size();
    std::vector<std::uint64_t> hist_in(bins, 0), hist_pred(bins, 0);
    for (std::size_t i = 0; i < test_pairs.size(); ++i) {
        for (std::size_t k = 0; k < bins; ++k) {
            hist_in[k] += ev.input_reports[i].histogram[k];
            hist_pred[k] += ev.pred_reports[i].histogram[k];
        }
    }
    std::string hist_csv = "bin_index,bin_lo,bin_hi,count_input,count_pred\n";
    for (std::size_t k = 0; k < bins; ++k) {
        const double lo = static_cast<double>(k) * usr::kDefaultErrorBinWidth;
        const double hi = std::min(1.0, lo + usr::kDefaultErrorBinWidth);
        hist_csv += std::to_string(k) + ',' + fmt(lo) + ',' + fmt(hi) + ',' +
                    std::to_string(hist_in[k]) + ',' + std::to_string(hist_pred[k]) + '\n';
    }
    write_text(fs::path(o.report) / "histogram.csv", hist_csv);

    usr::ImageMeta err_meta;
    err_meta.district = ds.manifest.district_label;
    for (std::size_t i = 0; i < test_pairs.size(); ++i) {
        const auto& pair = test_pairs[i];
        const usr::Tensor x = usr::tensor_from_images(std::span(&pair.input, 1));
        const usr::UsImage pred = usr::image_from_tensor(usr::model_forward(model, x), 0);
        usr::save_image(usr::abs_error_image(pair.target, pair.input).grid,
                        fs::path(o.report) / numbered("err_input", static_cast<int>(i)), err_meta);
        usr::save_image(usr::abs_error_image(pair.target, pred).grid,
                        fs::path(o.report) / numbered("err_pred", static_cast<int>(i)), err_meta);
    }

    std::cerr << "evaluated " << test_pairs.size() << " test pairs: median PSNR "
              << fmt(ev.input_psnr.median) << " -> " << fmt(ev.pred_psnr.median)
              << " dB, first-bin " << fmt(ev.input_first_bin_percent) << "% -> "
              << fmt(ev.pred_first_bin_percent) << "%; reports in " << o.report << '\n';
    return 0;
}

// ----------------------------------------------------------------------- video

struct VideoOpts {
    std::string model;
    std::string frames_dir;
    std::string scheme = "2x";
    std::string report;
    std::string out_dir;
    bool already_low_res = false;
};

int run_video(const VideoOpts& o) {
    const usr::SrModel model = usr::model_load(o.model);
    const auto scheme = usr::SamplingScheme::from_label(o.scheme);

    std::vector<usr::UsImage> frames;
    for (const auto& path : sorted_pgms(o.frames_dir, "frame_")) frames.push_back(usr::load_image(path));

    const usr::StreamResult result =
        usr::process_stream(frames, scheme, model, /*simulate_acquisition=*/!o.already_low_res);

    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        for (std::size_t i = 0; i < result.frames.size(); ++i)
            usr::save_image(result.frames[i],
                            fs::path(o.out_dir) / numbered("frame", static_cast<int>(i)));
    }

    const usr::LatencyReport& rep = result.latency;
    json j;
    j["frames"] = rep.frames;
    j["mean_ms"] = rep.mean_ms;
    j["median_ms"] = rep.median_ms;
    j["max_ms"] = rep.max_ms;
    j["scheme"] = rep.scheme_label;
    j["lines"] = rep.lines;
    j["depth"] = rep.depth;
    j["model_kernel"] = rep.model_kernel;
    j["per_frame_ms"] = rep.frame_ms;
    write_text(o.report, j.dump(2) + "\n");

    std::cerr << "processed " << rep.frames << " frames at " << rep.lines << 'x' << rep.depth
              << "; mean latency " << fmt(rep.mean_ms) << " ms (median " << fmt(rep.median_ms)
              << ", max " << fmt(rep.max_ms) << "); report in " << o.report << '\n';
    return 0;
}

// ------------------------------------------------------------------------ freq

struct FreqOpts {
    double c = 1540.0;
    double depth = 0.0;
    int lines = 0;
};

int run_freq(const FreqOpts& o) {
    if (!(o.c > 0.0) || !(o.depth > 0.0) || o.lines <= 0) {
        std::cerr << "freq: --c, --depth and --lines must be strictly positive\n";
        return 1;
    }
    const double f = usr::acquisition_frequency({o.c, o.depth, o.lines});
    std::printf("%.6f Hz\n", f);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lateral beamline super-resolution for ultrasound image streams"};
    app.require_subcommand(1);

    PhantomOpts phantom;
    auto* cmd_phantom = app.add_subcommand("phantom", "Generate a synthetic speckle-phantom corpus");
    cmd_phantom->add_option("--seed", phantom.seed, "RNG seed");
    cmd_phantom->add_option("--count", phantom.count, "number of images");
    cmd_phantom->add_option("--lines", phantom.lines, "beamlines per image");
    cmd_phantom->add_option("--depth", phantom.depth, "samples per beamline");
    cmd_phantom->add_option("--district", phantom.district, "label stored in sidecars");
    cmd_phantom->add_option("--out", phantom.out, "output directory")->required();

    BuildOpts build;
    auto* cmd_build = app.add_subcommand("build-dataset", "Decimate, upsample and split a corpus");
    cmd_build->add_option("--in", build.in, "directory of target PGM images")->required();
    cmd_build->add_option("--scheme", build.scheme, "sampling scheme")
        ->check(CLI::IsMember({"2x", "2X", "4x", "4X"}));
    cmd_build->add_option("--seed", build.seed, "split-shuffle seed");
    cmd_build->add_option("--district", build.district, "override district label");
    cmd_build->add_option("--out", build.out, "output directory")->required();

    TrainOpts train;
    auto* cmd_train = app.add_subcommand("train", "Train a model on a built dataset");
    cmd_train->add_option("--manifest", train.manifest, "dataset manifest JSON")->required();
    cmd_train->add_option("--config", train.config, "JSON config file (flags win)");
    cmd_train->add_option("--out-model", train.out_model, "output model file")->required();
    cmd_train->add_option("--history", train.history, "output history CSV")->required();
    cmd_train->add_option("--epochs", train.epochs, "training epochs");
    cmd_train->add_option("--batch", train.batch, "mini-batch size");
    cmd_train->add_option("--lr-start", train.lr_start, "initial learning rate");
    cmd_train->add_option("--lr-end", train.lr_end, "final learning rate");
    cmd_train->add_option("--seed", train.seed, "init and shuffle seed");
    cmd_train->add_option("--blocks", train.blocks, "residual blocks");
    cmd_train->add_option("--width", train.width, "channels per layer");
    cmd_train->add_option("--expansion", train.expansion, "in-block widening factor");

    PredictOpts predict;
    auto* cmd_predict = app.add_subcommand("predict", "Super-resolve one upsampled image");
    cmd_predict->add_option("--model", predict.model, "model file")->required();
    cmd_predict->add_option("--in", predict.in, "input PGM (cubic-upsampled)")->required();
    cmd_predict->add_option("--out", predict.out, "output PGM")->required();

    EvaluateOpts evaluate;
    auto* cmd_evaluate = app.add_subcommand("evaluate", "Paired metrics on the test split");
    cmd_evaluate->add_option("--model", evaluate.model, "model file")->required();
    cmd_evaluate->add_option("--manifest", evaluate.manifest, "dataset manifest JSON")->required();
    cmd_evaluate->add_option("--report", evaluate.report, "report output directory")->required();

    VideoOpts video;
    auto* cmd_video = app.add_subcommand("video", "Super-resolve an ordered frame stream");
    cmd_video->add_option("--model", video.model, "model file")->required();
    cmd_video->add_option("--frames-dir", video.frames_dir, "directory of frame_NNNNNN.pgm")->required();
    cmd_video->add_option("--scheme", video.scheme, "sampling scheme")
        ->check(CLI::IsMember({"2x", "2X", "4x", "4X"}));
    cmd_video->add_option("--report", video.report, "latency report JSON")->required();
    cmd_video->add_option("--out-dir", video.out_dir, "directory for refined frames");
    cmd_video->add_flag("--already-low-res", video.already_low_res,
                        "frames hold only acquired lines; skip decimation");

    FreqOpts freq;
    auto* cmd_freq = app.add_subcommand("freq", "Acquisition frequency f = c/(2*d*l)");
    cmd_freq->add_option("--c", freq.c, "speed of sound, m/s");
    cmd_freq->add_option("--depth", freq.depth, "imaging depth, m")->required();
    cmd_freq->add_option("--lines", freq.lines, "beamline count")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (app.got_subcommand(cmd_phantom)) return run_phantom(phantom);
        if (app.got_subcommand(cmd_build)) return run_build_dataset(build);
        if (app.got_subcommand(cmd_train)) {
            if (!train.config.empty()) apply_config_file(train, cmd_train);
            return run_train(train);
        }
        if (app.got_subcommand(cmd_predict)) return run_predict(predict);
        if (app.got_subcommand(cmd_evaluate)) return run_evaluate(evaluate);
        if (app.got_subcommand(cmd_video)) return run_video(video);
        if (app.got_subcommand(cmd_freq)) return run_freq(freq);
    } catch (const usr::divergence_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

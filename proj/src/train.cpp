#include "usr/train.hpp"

#include "usr/parallel.hpp"
#include "usr/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace usr {

void LossParams::validate() const {
    if (!(epsilon > 0.0) || !(epsilon < k) || !(k < 1.0))
        throw std::invalid_argument("LossParams: requires 0 < epsilon < k < 1");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (!(lr_start > 0.0) || !(lr_end > 0.0))
        throw std::invalid_argument("TrainConfig: learning rates must be positive");
    if (lr_end > lr_start) throw std::invalid_argument("TrainConfig: lr_end must not exceed lr_start");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
}

std::pair<double, Tensor> masked_log_loss(const Tensor& pred, const Tensor& target,
                                          const LossParams& params) {
    params.validate();
    if (!pred.same_shape(target)) throw std::invalid_argument("masked_log_loss: shape mismatch");
    const int s = params.scheme.stride();
    if (pred.lines < 2 * s) throw std::invalid_argument("masked_log_loss: image too narrow for scheme");

    int contributing_lines = 0;
    for (int l = 0; l < pred.lines; ++l)
        if (l % s != 0) ++contributing_lines;
    const std::size_t n = static_cast<std::size_t>(pred.batch) * pred.channels *
                          contributing_lines * pred.depth;

    Tensor grad(pred.batch, pred.channels, pred.lines, pred.depth);
    double sum = 0.0;
    for (int b = 0; b < pred.batch; ++b) {
        for (int c = 0; c < pred.channels; ++c) {
            for (int l = 0; l < pred.lines; ++l) {
                if (l % s == 0) continue;  // acquired line: masked out
                const double* yp = pred.row(b, c, l);
                const double* yt = target.row(b, c, l);
                double* g = grad.row(b, c, l);
                for (int d = 0; d < pred.depth; ++d) {
                    const double diff = yp[d] - yt[d];
                    const double mag = std::abs(diff) + params.epsilon;
                    sum += std::log(mag / params.k);
                    // Subgradient 0 at exact ties.
                    const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
                    g[d] = sign / mag / static_cast<double>(n);
                }
            }
        }
    }
    return {sum / static_cast<double>(n), std::move(grad)};
}

double lr_schedule(const TrainConfig& cfg, int epoch) {
    cfg.validate();
    if (epoch < 0 || epoch >= cfg.epochs) throw std::invalid_argument("lr_schedule: epoch out of range");
    if (cfg.epochs == 1) return cfg.lr_start;
    const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
}

void AdamState::step(std::span<double> params, std::span<const double> grads, double lr,
                     const TrainConfig& cfg) {
    if (params.size() != m.size() || grads.size() != m.size())
        throw std::invalid_argument("AdamState: size mismatch");
    ++t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
}

namespace {

void check_pairs(std::span<const SamplePair> set, const char* what) {
    if (set.empty()) throw std::invalid_argument(std::string(what) + ": empty dataset");
    for (const auto& p : set)
        if (p.input.lines() != p.target.lines() || p.input.depth() != p.target.depth())
            throw std::invalid_argument(std::string(what) + ": pair shape mismatch");
}

// Consecutive same-shape runs of the shuffled order, capped at batch_size.
std::vector<std::vector<std::size_t>> make_batches(std::span<const SamplePair> set,
                                                   const std::vector<std::size_t>& order,
                                                   int batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size();) {
        const auto& lead = set[order[i]].target;
        std::vector<std::size_t> batch{order[i]};
        std::size_t j = i + 1;
        while (j < order.size() && static_cast<int>(batch.size()) < batch_size &&
               set[order[j]].target.lines() == lead.lines() &&
               set[order[j]].target.depth() == lead.depth()) {
            batch.push_back(order[j]);
            ++j;
        }
        i = j;
        batches.push_back(std::move(batch));
    }
    return batches;
}

double mean_validation_psnr(const SrModel& model, std::span<const SamplePair> val_set) {
    std::vector<double> scores(val_set.size(), 0.0);
    parallel_for(val_set.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Tensor x = tensor_from_images(std::span(&val_set[i].input, 1));
            UsImage pred = image_from_tensor(model_forward(model, x, /*clamp_output=*/true), 0);
            scores[i] = psnr(val_set[i].target, pred);
        }
    });
    double sum = 0.0;
    for (double v : scores) sum += v;  // fixed order, independent of threading
    return sum / static_cast<double>(scores.size());
}

}  // namespace

FitResult fit(const SrModel& init, std::span<const SamplePair> train_set,
              std::span<const SamplePair> val_set, const TrainConfig& cfg,
              const LossParams& loss) {
    cfg.validate();
    loss.validate();
    init.config.validate();
    check_pairs(train_set, "fit: train");
    check_pairs(val_set, "fit: val");
    if (init.config.kernel != kernel_for_stride(loss.scheme.stride()))
        throw std::invalid_argument("fit: model kernel does not match sampling scheme");

    SrModel model = init;
    std::vector<double> params = flatten_parameters(model);
    AdamState adam(params.size());
    std::mt19937_64 rng(cfg.seed);

    FitResult result;
    result.model = model;
    TrainHistory& history = result.history;
    double best = -std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(cfg, epoch);
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss_sum = 0.0;
        std::size_t epoch_weight = 0;
        try {
            for (const auto& batch : make_batches(train_set, order, cfg.batch_size)) {
                std::vector<UsImage> inputs, targets;
                inputs.reserve(batch.size());
                targets.reserve(batch.size());
                for (std::size_t idx : batch) {
                    inputs.push_back(train_set[idx].input);
                    targets.push_back(train_set[idx].target);
                }
                Tensor x = tensor_from_images(inputs);
                Tensor y = tensor_from_images(targets);

                ForwardTrace trace = model_forward_trace(model, x);
                auto [value, grad] = masked_log_loss(trace.output, y, loss);
                if (!std::isfinite(value)) throw divergence_error("fit: non-finite training loss");

                ModelGradients grads = model_backward_from_trace(model, trace, grad);
                adam.step(params, flatten_gradients(grads), lr, cfg);
                unflatten_parameters(model, params);

                epoch_loss_sum += value * static_cast<double>(batch.size());
                epoch_weight += batch.size();
            }

            const double val = mean_validation_psnr(model, val_set);
            history.train_loss.push_back(epoch_loss_sum / static_cast<double>(epoch_weight));
            history.val_psnr.push_back(val);
            history.lr.push_back(lr);
            if (val > best) {
                best = val;
                history.best_epoch = epoch;
                result.model = model;
            }
        } catch (const divergence_error&) {
            history.diverged = true;
            break;  // result.model still holds the last finite checkpoint
        }
    }

    history.best_val_psnr = best;
    return result;
}

PairedSetEvaluation evaluate(const SrModel& model, std::span<const SamplePair> test_set) {
    model.config.validate();
    check_pairs(test_set, "evaluate");

    PairedSetEvaluation out;
    out.input_reports.resize(test_set.size());
    out.pred_reports.resize(test_set.size());
    parallel_for(test_set.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& pair = test_set[i];
            Tensor x = tensor_from_images(std::span(&pair.input, 1));
            UsImage pred = image_from_tensor(model_forward(model, x, /*clamp_output=*/true), 0);
            out.input_reports[i] = metric_report(pair.target, pair.input);
            out.pred_reports[i] = metric_report(pair.target, pred);
        }
    });

    const auto collect = [&](auto proj) {
        std::pair<std::vector<double>, std::vector<double>> values;
        for (std::size_t i = 0; i < test_set.size(); ++i) {
            values.first.push_back(proj(out.input_reports[i]));
            values.second.push_back(proj(out.pred_reports[i]));
        }
        return values;
    };
    auto [ipsnr, ppsnr] = collect([](const MetricReport& r) { return r.psnr; });
    auto [issim, pssim] = collect([](const MetricReport& r) { return r.ssim; });
    auto [imae, pmae] = collect([](const MetricReport& r) { return r.mae; });
    out.input_psnr = box_stats(std::move(ipsnr));
    out.pred_psnr = box_stats(std::move(ppsnr));
    out.input_ssim = box_stats(std::move(issim));
    out.pred_ssim = box_stats(std::move(pssim));
    out.input_mae = box_stats(std::move(imae));
    out.pred_mae = box_stats(std::move(pmae));

    const auto pooled_first_bin = [&](const std::vector<MetricReport>& reports) {
        std::uint64_t first = 0, total = 0;
        for (const auto& r : reports) {
            if (!r.histogram.empty()) first += r.histogram[0];
            for (std::uint64_t c : r.histogram) total += c;
        }
        return total == 0 ? 0.0 : 100.0 * static_cast<double>(first) / static_cast<double>(total);
    };
    out.input_first_bin_percent = pooled_first_bin(out.input_reports);
    out.pred_first_bin_percent = pooled_first_bin(out.pred_reports);

    out.median_psnr_delta = out.pred_psnr.median - out.input_psnr.median;
    out.median_ssim_delta = out.pred_ssim.median - out.input_ssim.median;
    out.median_mae_delta = out.pred_mae.median - out.input_mae.median;
    out.first_bin_delta = out.pred_first_bin_percent - out.input_first_bin_percent;
    return out;
}

}  // namespace usr

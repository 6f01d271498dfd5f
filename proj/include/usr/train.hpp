// Masked logarithmic loss, learning-rate schedule, Adam optimizer, the
// training/validation loop, and paired corpus evaluation.
#pragma once

#include "usr/core.hpp"
#include "usr/metrics.hpp"
#include "usr/model.hpp"
#include "usr/netmath.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace usr {

// Parameters of the logarithmic error loss ln((|y - y_hat| + epsilon) / k),
// averaged over pixels on non-acquired lines only.
struct LossParams {
    double epsilon = 1e-4;       // avoids ln(0) at exact ties
    double k = 5.0 / 255.0;      // curvature scale: error k - epsilon gives loss 0
    SamplingScheme scheme{2};

    void validate() const;  // requires 0 < epsilon < k < 1
};

struct TrainConfig {
    int epochs = 200;
    double lr_start = 1e-3;
    double lr_end = 1e-6;
    int batch_size = 8;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;  // one entry per completed epoch
    std::vector<double> val_psnr;    // mean validation PSNR per completed epoch
    std::vector<double> lr;          // learning rate used in each epoch
    int best_epoch = -1;             // epoch whose weights were returned
    double best_val_psnr = 0.0;
    bool diverged = false;           // training aborted on non-finite values
};

// One (input, target) pair: the cubic-upsampled acquisition and its
// full-resolution reference. Shapes always match within a pair.
struct SamplePair {
    UsImage input;
    UsImage target;
};

// Loss value and its gradient with respect to pred. Pixels on acquired lines
// (l mod s == 0) contribute nothing and receive an exactly-zero gradient.
std::pair<double, Tensor> masked_log_loss(const Tensor& pred, const Tensor& target,
                                          const LossParams& params);

// Exponential decay from lr_start at epoch 0 to lr_end at the final epoch.
double lr_schedule(const TrainConfig& cfg, int epoch);

// Standard Adam with bias correction; `step` updates params in place.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t t = 0;

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
    void step(std::span<double> params, std::span<const double> grads, double lr,
              const TrainConfig& cfg);
};

struct FitResult {
    SrModel model;  // parameters of the best-validation-PSNR epoch
    TrainHistory history;
};

// Shuffled mini-batch Adam on the masked logarithmic loss. Batches group
// identically shaped images; validation PSNR is measured on clamped
// predictions after every epoch and the best checkpoint is returned. A
// non-finite loss or forward pass aborts training with the last finite
// checkpoint and sets history.diverged.
FitResult fit(const SrModel& init, std::span<const SamplePair> train_set,
              std::span<const SamplePair> val_set, const TrainConfig& cfg,
              const LossParams& loss);

// Paired corpus statistics: per-image metric reports for both the cubic
// inputs and the model predictions, box summaries of each metric, pooled
// first-histogram-bin percentages, and the deltas the comparisons use.
struct PairedSetEvaluation {
    std::vector<MetricReport> input_reports;
    std::vector<MetricReport> pred_reports;
    BoxStats input_psnr, pred_psnr;
    BoxStats input_ssim, pred_ssim;
    BoxStats input_mae, pred_mae;
    double input_first_bin_percent = 0.0;  // pooled over every pixel of the set
    double pred_first_bin_percent = 0.0;
    double median_psnr_delta = 0.0;  // prediction minus input, positive = better
    double median_ssim_delta = 0.0;
    double median_mae_delta = 0.0;   // negative = better
    double first_bin_delta = 0.0;
};

PairedSetEvaluation evaluate(const SrModel& model, std::span<const SamplePair> test_set);

}  // namespace usr

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "usr/dataio.hpp"
#include "usr/resample.hpp"
#include "usr/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

using usr::LossParams;
using usr::SamplePair;
using usr::SamplingScheme;
using usr::Tensor;
using usr::TrainConfig;
using usr::UsImage;

namespace {

Tensor random_tensor01(std::mt19937_64& rng, int b, int c, int l, int d) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Tensor t(b, c, l, d);
    for (double& v : t.values) v = unit(rng);
    return t;
}

UsImage smooth_image(std::mt19937_64& rng, int lines, int depth) {
    std::uniform_real_distribution<double> unit(0.05, 0.95);
    const double ax = unit(rng), ay = unit(rng), base = unit(rng);
    UsImage img(lines, depth);
    for (int l = 0; l < lines; ++l)
        for (int d = 0; d < depth; ++d)
            img.at(l, d) = std::clamp(
                0.5 * base + 0.3 * std::sin(ax * l * 0.7) * std::cos(ay * d * 0.5) + 0.2 * unit(rng), 0.0,
                1.0);
    return img;
}

std::vector<SamplePair> synthetic_pairs(std::mt19937_64& rng, int count, int lines, int depth,
                                        const SamplingScheme& scheme) {
    std::vector<SamplePair> pairs;
    for (int i = 0; i < count; ++i) {
        SamplePair p;
        p.target = smooth_image(rng, lines, depth);
        p.input = usr::upsample_cubic(usr::decimate(p.target, scheme), scheme, lines);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

usr::ModelConfig tiny_config() {
    usr::ModelConfig c;
    c.blocks = 1;
    c.width = 2;
    c.expansion = 2;
    c.kernel = 3;
    c.norm_mean = 0.4;
    return c;
}

double loss_on(const usr::SrModel& m, std::span<const SamplePair> set, const LossParams& lp) {
    std::vector<UsImage> inputs, targets;
    for (const auto& p : set) {
        inputs.push_back(p.input);
        targets.push_back(p.target);
    }
    const Tensor x = usr::tensor_from_images(inputs);
    const Tensor y = usr::tensor_from_images(targets);
    return usr::masked_log_loss(usr::model_forward(m, x, false), y, lp).first;
}

constexpr double kZeroErrorLoss = -5.2785147392518565;  // ln(1e-4 / (5/255))

}  // namespace

TEST_CASE("loss anchors: exact ties and the zero-crossing error") {
    std::mt19937_64 rng(3);
    const Tensor y = random_tensor01(rng, 2, 1, 8, 5);
    const LossParams lp;

    auto [tie_loss, tie_grad] = usr::masked_log_loss(y, y, lp);
    CHECK(std::fabs(tie_loss - std::log(lp.epsilon / lp.k)) <= 1e-12);
    CHECK(std::fabs(tie_loss - kZeroErrorLoss) <= 1e-9);
    CHECK(std::fabs(tie_loss - (-5.2785)) <= 1e-3);
    for (double g : tie_grad.values) CHECK(g == 0.0);  // subgradient at ties is exactly zero

    Tensor pred = y;
    const double crossing = lp.k - lp.epsilon;
    for (double& v : pred.values) v += crossing;
    auto [zero_loss, zero_grad] = usr::masked_log_loss(pred, y, lp);
    CHECK(std::fabs(zero_loss) <= 1e-9);
    // On contributing pixels the gradient is sign/(|err|+eps)/n = 1/k/n.
    const std::size_t n = 2ull * 4 * 5;  // lines 1,3,5,7 of 8 contribute per batch item
    for (int b = 0; b < 2; ++b)
        for (int l = 0; l < 8; ++l)
            for (int d = 0; d < 5; ++d) {
                const double g = zero_grad.at(b, 0, l, d);
                if (l % 2 == 0)
                    CHECK(g == 0.0);
                else
                    CHECK(std::fabs(g - 1.0 / lp.k / static_cast<double>(n)) <= 1e-13);
            }
}

TEST_CASE("the loss ignores acquired lines entirely") {
    std::mt19937_64 rng(9);
    for (int stride : {2, 4}) {
        LossParams lp;
        lp.scheme = SamplingScheme(stride);
        const Tensor target = random_tensor01(rng, 1, 1, 4 * stride, 6);
        const Tensor pred = random_tensor01(rng, 1, 1, 4 * stride, 6);

        auto [base, base_grad] = usr::masked_log_loss(pred, target, lp);
        Tensor tampered = pred;
        for (int l = 0; l < tampered.lines; l += stride)
            for (int d = 0; d < tampered.depth; ++d) tampered.at(0, 0, l, d) = rng() % 2 ? 0.0 : 1.0;
        auto [after, after_grad] = usr::masked_log_loss(tampered, target, lp);

        CHECK(after == base);  // exactly invariant, not merely close
        CHECK(after_grad.values == base_grad.values);
        for (int l = 0; l < pred.lines; ++l)
            if (l % stride == 0)
                for (int d = 0; d < pred.depth; ++d) CHECK(base_grad.at(0, 0, l, d) == 0.0);
    }
}

TEST_CASE("loss normalization counts only contributing pixels") {
    // 4 lines, stride 2: lines 1 and 3 contribute, so n = 2*depth.
    const LossParams lp;
    Tensor target(1, 1, 4, 2, 0.5);
    Tensor pred = target;
    pred.at(0, 0, 1, 0) = 0.7;  // |err| 0.2
    pred.at(0, 0, 3, 1) = 0.4;  // |err| 0.1
    const auto [value, grad] = usr::masked_log_loss(pred, target, lp);
    const double expected = (std::log((0.2 + lp.epsilon) / lp.k) + std::log((0.1 + lp.epsilon) / lp.k) +
                             2.0 * std::log(lp.epsilon / lp.k)) /
                            4.0;
    CHECK(value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(grad.at(0, 0, 1, 0) == doctest::Approx(1.0 / (0.2 + lp.epsilon) / 4.0).epsilon(1e-12));
    CHECK(grad.at(0, 0, 3, 1) == doctest::Approx(-1.0 / (0.1 + lp.epsilon) / 4.0).epsilon(1e-12));
    CHECK(grad.at(0, 0, 1, 1) == 0.0);  // tie on a contributing line
}

TEST_CASE("loss grows with the error magnitude") {
    const LossParams lp;
    Tensor target(1, 1, 4, 4, 0.5);
    double last = -1e9;
    for (double err : {0.0, 0.01, 0.05, 0.1, 0.3}) {
        Tensor pred = target;
        for (int l = 1; l < 4; l += 2)
            for (int d = 0; d < 4; ++d) pred.at(0, 0, l, d) = 0.5 + err;
        const double value = usr::masked_log_loss(pred, target, lp).first;
        CHECK(value > last);
        last = value;
    }
}

TEST_CASE("loss gradient matches central differences away from ties") {
    std::mt19937_64 rng(17);
    const LossParams lp;
    const Tensor target = random_tensor01(rng, 1, 1, 8, 6);
    Tensor pred = random_tensor01(rng, 1, 1, 8, 6);
    const auto [value, grad] = usr::masked_log_loss(pred, target, lp);
    (void)value;

    const double h = 1e-6;
    int checked = 0;
    for (std::size_t i = 0; i < pred.values.size(); ++i) {
        if (std::fabs(pred.values[i] - target.values[i]) <= 1e-2) continue;  // stay off the kink
        const double keep = pred.values[i];
        pred.values[i] = keep + h;
        const double hi = usr::masked_log_loss(pred, target, lp).first;
        pred.values[i] = keep - h;
        const double lo = usr::masked_log_loss(pred, target, lp).first;
        pred.values[i] = keep;
        const double fd = (hi - lo) / (2.0 * h);
        const double scale = std::max({1.0, std::fabs(fd), std::fabs(grad.values[i])});
        CHECK(std::fabs(grad.values[i] - fd) / scale <= 1e-6);
        ++checked;
    }
    CHECK(checked > 10);
}

TEST_CASE("loss input validation") {
    const LossParams lp;
    Tensor a(1, 1, 8, 4, 0.5);
    Tensor b(1, 1, 8, 5, 0.5);
    CHECK_THROWS_AS(usr::masked_log_loss(a, b, lp), std::invalid_argument);
    Tensor narrow(1, 1, 3, 4, 0.5);
    CHECK_THROWS_AS(usr::masked_log_loss(narrow, narrow, lp), std::invalid_argument);
    LossParams wide;
    wide.scheme = SamplingScheme(4);
    Tensor seven(1, 1, 7, 4, 0.5);
    CHECK_THROWS_AS(usr::masked_log_loss(seven, seven, wide), std::invalid_argument);
    LossParams bad;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.epsilon = 0.5;
    bad.k = 0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("learning-rate schedule spans its endpoints geometrically") {
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.lr_start = 1e-3;
    cfg.lr_end = 1e-6;
    CHECK(usr::lr_schedule(cfg, 0) == 1e-3);
    CHECK(usr::lr_schedule(cfg, 199) == doctest::Approx(1e-6).epsilon(1e-12));
    double last = usr::lr_schedule(cfg, 0);
    for (int e = 1; e < 200; ++e) {
        const double lr = usr::lr_schedule(cfg, e);
        CHECK(lr < last);
        last = lr;
    }
    // Halfway in epochs means the geometric mean of the endpoints.
    TrainConfig odd = cfg;
    odd.epochs = 3;
    CHECK(usr::lr_schedule(odd, 1) == doctest::Approx(std::sqrt(1e-3 * 1e-6)).epsilon(1e-12));

    TrainConfig single = cfg;
    single.epochs = 1;
    CHECK(usr::lr_schedule(single, 0) == 1e-3);

    CHECK_THROWS_AS(usr::lr_schedule(cfg, -1), std::invalid_argument);
    CHECK_THROWS_AS(usr::lr_schedule(cfg, 200), std::invalid_argument);

    TrainConfig bad = cfg;
    bad.lr_end = 1e-2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one optimizer step follows the bias-corrected update rule") {
    TrainConfig cfg;
    std::vector<double> params = {1.0, -2.0};
    const std::vector<double> grads = {0.5, -0.25};
    usr::AdamState adam(2);
    adam.step(params, grads, 0.1, cfg);

    for (int i = 0; i < 2; ++i) {
        const double g = grads[i];
        const double m = 0.1 * g;                   // (1-beta1)*g
        const double v = 0.001 * g * g;             // (1-beta2)*g^2
        const double mhat = m / (1.0 - 0.9);        // t = 1
        const double vhat = v / (1.0 - 0.999);
        const double want = (i == 0 ? 1.0 : -2.0) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(params[i] == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK(adam.t == 1);

    // A second identical gradient keeps the effective step scale-free.
    adam.step(params, grads, 0.1, cfg);
    CHECK(adam.t == 2);

    std::vector<double> wrong(3, 0.0);
    CHECK_THROWS_AS(adam.step(wrong, grads, 0.1, cfg), std::invalid_argument);
}

TEST_CASE("training is deterministic in the seed and records its schedule") {
    std::mt19937_64 rng(100);
    const auto train = synthetic_pairs(rng, 6, 8, 8, SamplingScheme(2));
    const auto val = synthetic_pairs(rng, 2, 8, 8, SamplingScheme(2));
    const usr::SrModel init = usr::model_init(tiny_config(), 1);

    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 7;
    const LossParams lp;

    const auto a = usr::fit(init, train, val, cfg, lp);
    const auto b = usr::fit(init, train, val, cfg, lp);
    CHECK(a.history.train_loss == b.history.train_loss);
    CHECK(a.history.val_psnr == b.history.val_psnr);
    CHECK(a.history.lr == b.history.lr);
    CHECK(a.history.best_epoch == b.history.best_epoch);
    CHECK(usr::flatten_parameters(a.model) == usr::flatten_parameters(b.model));

    REQUIRE(a.history.train_loss.size() == 3);
    REQUIRE(a.history.val_psnr.size() == 3);
    REQUIRE(a.history.lr.size() == 3);
    CHECK(a.history.lr[0] == cfg.lr_start);
    CHECK(a.history.lr[2] == doctest::Approx(cfg.lr_end).epsilon(1e-12));
    CHECK_FALSE(a.history.diverged);

    TrainConfig reseeded = cfg;
    reseeded.seed = 8;
    const auto c = usr::fit(init, train, val, reseeded, lp);
    CHECK(usr::flatten_parameters(c.model) != usr::flatten_parameters(a.model));
}

TEST_CASE("a single epoch with one batch takes exactly one improving step") {
    std::mt19937_64 rng(200);
    const auto train = synthetic_pairs(rng, 4, 8, 8, SamplingScheme(2));
    const auto val = synthetic_pairs(rng, 2, 8, 8, SamplingScheme(2));
    const usr::SrModel init = usr::model_init(tiny_config(), 5);

    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;  // covers the whole train set in one batch
    // Adam's first step is a signed-gradient descent direction, so a small
    // enough rate cannot increase the loss.
    cfg.lr_start = 1e-5;
    cfg.lr_end = 1e-5;
    const LossParams lp;

    const auto fitresult = usr::fit(init, train, val, cfg, lp);
    REQUIRE(fitresult.history.train_loss.size() == 1);
    CHECK(fitresult.history.best_epoch == 0);

    const double before = loss_on(init, train, lp);
    const double after = loss_on(fitresult.model, train, lp);
    CHECK(fitresult.history.train_loss[0] == doctest::Approx(before).epsilon(1e-12));
    CHECK(after <= before);  // one Adam step at lr_start must not increase the loss
    CHECK(usr::flatten_parameters(fitresult.model) != usr::flatten_parameters(init));
}

TEST_CASE("the returned checkpoint is the best validation epoch") {
    std::mt19937_64 rng(300);
    const auto train = synthetic_pairs(rng, 6, 8, 8, SamplingScheme(2));
    const auto val = synthetic_pairs(rng, 3, 8, 8, SamplingScheme(2));

    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 3;
    cfg.seed = 2;
    const auto fitresult = usr::fit(usr::model_init(tiny_config(), 9), train, val, cfg, LossParams{});

    const auto& h = fitresult.history;
    REQUIRE(h.val_psnr.size() == 6);
    const double best = *std::max_element(h.val_psnr.begin(), h.val_psnr.end());
    CHECK(h.best_val_psnr == doctest::Approx(best).epsilon(1e-12));
    CHECK(h.val_psnr[static_cast<std::size_t>(h.best_epoch)] == best);
    for (double v : h.val_psnr) CHECK(h.best_val_psnr >= v - 1e-9);

    // The stored model really reproduces that score.
    std::vector<double> scores;
    for (const auto& p : val) {
        const Tensor x = usr::tensor_from_images(std::span(&p.input, 1));
        const UsImage pred = usr::image_from_tensor(usr::model_forward(fitresult.model, x), 0);
        scores.push_back(usr::psnr(p.target, pred));
    }
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
    CHECK(mean == doctest::Approx(h.best_val_psnr).epsilon(1e-9));
}

TEST_CASE("divergence aborts training and keeps the last finite checkpoint") {
    std::mt19937_64 rng(400);
    const auto train = synthetic_pairs(rng, 4, 8, 8, SamplingScheme(2));
    const auto val = synthetic_pairs(rng, 2, 8, 8, SamplingScheme(2));

    usr::SrModel poisoned = usr::model_init(tiny_config(), 3);
    // Infinite biases make the very first forward non-finite (and +inf still
    // compares equal to itself in the checkpoint comparison below).
    poisoned.head.bias.assign(poisoned.head.bias.size(), std::numeric_limits<double>::infinity());

    TrainConfig cfg;
    cfg.epochs = 5;
    const auto fitresult = usr::fit(poisoned, train, val, cfg, LossParams{});
    CHECK(fitresult.history.diverged);
    CHECK(fitresult.history.train_loss.empty());  // epoch 0 never completed
    CHECK(usr::flatten_parameters(fitresult.model) == usr::flatten_parameters(poisoned));
}

TEST_CASE("training rejects mismatched schemes and broken datasets") {
    std::mt19937_64 rng(500);
    const auto train = synthetic_pairs(rng, 3, 8, 8, SamplingScheme(2));
    const auto val = synthetic_pairs(rng, 2, 8, 8, SamplingScheme(2));
    const usr::SrModel m = usr::model_init(tiny_config(), 1);  // kernel 3 serves 2X only

    LossParams four;
    four.scheme = SamplingScheme(4);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(usr::fit(m, train, val, cfg, four), std::invalid_argument);
    CHECK_THROWS_AS(usr::fit(m, {}, val, cfg, LossParams{}), std::invalid_argument);
    CHECK_THROWS_AS(usr::fit(m, train, {}, cfg, LossParams{}), std::invalid_argument);

    auto broken = train;
    broken[0].input = UsImage(10, 8, 0.5);
    CHECK_THROWS_AS(usr::fit(m, broken, val, cfg, LossParams{}), std::invalid_argument);
}

TEST_CASE("an untrained model scores within half a dB of its cubic input") {
    usr::PhantomParams pp;
    pp.seed = 77;
    pp.count = 8;
    pp.lines = 32;
    pp.depth = 32;
    const auto targets = usr::generate_phantoms(pp);
    const SamplingScheme scheme(2);
    std::vector<SamplePair> pairs;
    for (const auto& t : targets) {
        SamplePair p;
        p.target = t;
        p.input = usr::upsample_cubic(usr::decimate(t, scheme), scheme, t.lines());
        pairs.push_back(std::move(p));
    }
    usr::ModelConfig c = tiny_config();
    c.blocks = 4;
    c.width = 8;
    c.expansion = 4;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto ev = usr::evaluate(usr::model_init(c, seed), pairs);
        CHECK(ev.input_psnr.median - ev.pred_psnr.median < 0.5);
    }
}

TEST_CASE("evaluating the identity model reports identical input and prediction stats") {
    std::mt19937_64 rng(600);
    const auto test_set = synthetic_pairs(rng, 5, 8, 8, SamplingScheme(2));
    usr::ModelConfig c = tiny_config();
    c.norm_mean = 0.0;  // keeps the identity bit-exact, so the reports match exactly
    const auto ev = usr::evaluate(usr::make_identity_model(c), test_set);

    REQUIRE(ev.input_reports.size() == 5);
    REQUIRE(ev.pred_reports.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(ev.input_reports[i].psnr == ev.pred_reports[i].psnr);
        CHECK(ev.input_reports[i].ssim == ev.pred_reports[i].ssim);
        CHECK(ev.input_reports[i].mae == ev.pred_reports[i].mae);
        CHECK(ev.input_reports[i].histogram == ev.pred_reports[i].histogram);
    }
    CHECK(ev.median_psnr_delta == 0.0);
    CHECK(ev.median_ssim_delta == 0.0);
    CHECK(ev.median_mae_delta == 0.0);
    CHECK(ev.first_bin_delta == 0.0);
    CHECK(ev.input_first_bin_percent == ev.pred_first_bin_percent);
    CHECK(ev.input_psnr.median == ev.pred_psnr.median);

    // Deltas are definitionally consistent with the box summaries.
    CHECK(ev.median_psnr_delta == ev.pred_psnr.median - ev.input_psnr.median);
    CHECK(ev.median_mae_delta == ev.pred_mae.median - ev.input_mae.median);
}

TEST_CASE("evaluating a singleton set collapses the box statistics") {
    std::mt19937_64 rng(700);
    const auto one = synthetic_pairs(rng, 1, 8, 8, SamplingScheme(2));
    usr::ModelConfig c = tiny_config();
    c.norm_mean = 0.0;
    const auto ev = usr::evaluate(usr::make_identity_model(c), one);
    CHECK(ev.input_psnr.n == 1);
    CHECK(ev.input_psnr.median == ev.input_psnr.q1);
    CHECK(ev.input_psnr.median == ev.input_psnr.q3);
    CHECK(ev.input_psnr.median == ev.input_psnr.whisker_low);
    CHECK(ev.input_psnr.median == ev.input_psnr.whisker_high);
    CHECK(ev.input_psnr.median == ev.input_reports[0].psnr);
    CHECK_THROWS_AS(usr::evaluate(usr::make_identity_model(c), {}), std::invalid_argument);
}

// Differentiable tensor primitives: rank-4 tensors, weight-normalized 2D
// convolution with "same" zero padding, and ReLU, each with an analytic
// backward pass. No computation graph; callers compose backward calls in
// reverse order.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace usr {

// Raised when activations or the loss stop being finite.
class divergence_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// batch x channels x lines x depth, row-major.
struct Tensor {
    int batch = 0;
    int channels = 0;
    int lines = 0;
    int depth = 0;
    std::vector<double> values;

    Tensor() = default;
    Tensor(int b, int c, int l, int d, double fill = 0.0)
        : batch(b), channels(c), lines(l), depth(d),
          values(static_cast<std::size_t>(b) * c * l * d, fill) {}

    std::size_t size() const { return values.size(); }
    bool same_shape(const Tensor& o) const {
        return batch == o.batch && channels == o.channels && lines == o.lines && depth == o.depth;
    }

    std::size_t index(int b, int c, int l, int d) const {
        return ((static_cast<std::size_t>(b) * channels + c) * lines + l) * depth + d;
    }
    double at(int b, int c, int l, int d) const { return values[index(b, c, l, d)]; }
    double& at(int b, int c, int l, int d) { return values[index(b, c, l, d)]; }

    // Pointer to the (b, c, l) row of `depth` values.
    const double* row(int b, int c, int l) const { return values.data() + index(b, c, l, 0); }
    double* row(int b, int c, int l) { return values.data() + index(b, c, l, 0); }
};

bool all_finite(const std::vector<double>& values);

// Weight-normalized convolution parameters: the effective weight of output
// channel c is W_c = g_c * v_c / ||v_c||, with the Euclidean norm taken over
// that channel's (in_ch, k, k) slice.
struct ConvParams {
    int out_ch = 0;
    int in_ch = 0;
    int kernel = 0;                  // odd
    std::vector<double> direction_v; // (out_ch, in_ch, k, k)
    std::vector<double> gain_g;      // (out_ch)
    std::vector<double> bias;        // (out_ch)

    static ConvParams zeros(int out_ch, int in_ch, int kernel);

    std::size_t weight_count() const {
        return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel;
    }
    std::size_t slice_count() const { return static_cast<std::size_t>(in_ch) * kernel * kernel; }
    std::size_t param_count() const { return weight_count() + 2 * static_cast<std::size_t>(out_ch); }
};

// Gradients of a scalar loss w.r.t. one ConvParams set.
struct GradientBundle {
    std::vector<double> grad_v;
    std::vector<double> grad_g;
    std::vector<double> grad_bias;

    static GradientBundle zeros_like(const ConvParams& p);
    void add(const GradientBundle& other);
};

// Effective weights W = g * v/||v||, flattened (out_ch, in_ch, k, k).
std::vector<double> weight_materialize(const ConvParams& p);

// out = W (*) x + bias with "same" zero padding and stride 1. Throws
// divergence_error on non-finite input.
Tensor conv2d_forward(const Tensor& x, const ConvParams& p);

struct ConvBackwardResult {
    GradientBundle params;
    Tensor input_grad;
};

// Gradients w.r.t. v, g, bias (under the weight-norm reparameterization)
// and the input, given dLoss/dOutput.
ConvBackwardResult conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& upstream);

Tensor relu_forward(const Tensor& x);
// Masks the upstream gradient where the forward input was <= 0.
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

}  // namespace usr

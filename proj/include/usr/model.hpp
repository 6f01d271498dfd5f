// The residual super-resolution network: mean normalization, head
// convolution, wide-activation residual blocks, tail convolution, and a
// global skip from the (normalized) input, all weight-normalized. The
// network refines an already up-sampled image; it never changes shape.
#pragma once

#include "usr/core.hpp"
#include "usr/netmath.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace usr {

struct ModelConfig {
    int blocks = 8;       // residual blocks
    int width = 10;       // channels per layer ("number of kernels")
    int expansion = 4;    // widening factor before the in-block ReLU
    int kernel = 3;       // 3 serves the 2X scheme, 5 the 4X scheme
    double norm_mean = 0.0;  // training-corpus mean subtracted at entry

    int expanded_width() const { return width * expansion; }
    // head + (expand, project) per block + tail + input skip
    int conv_layer_count() const { return 2 * blocks + 3; }

    void validate() const;
};

// Kernel-size rule: the filter must span at least two acquired lines.
int kernel_for_stride(int stride);
// Inverse of the rule; throws on kernels that serve no scheme.
SamplingScheme scheme_for_kernel(int kernel);

struct ResidualBlockParams {
    ConvParams expand;   // width -> width*expansion
    ConvParams project;  // width*expansion -> width
};

struct SrModel {
    ModelConfig config;
    ConvParams head;  // 1 -> width
    std::vector<ResidualBlockParams> blocks;
    ConvParams tail;  // width -> 1
    ConvParams skip;  // 1 -> 1, identity-initialized
};

struct BlockGradients {
    GradientBundle expand;
    GradientBundle project;
};

struct ModelGradients {
    GradientBundle head;
    std::vector<BlockGradients> blocks;
    GradientBundle tail;
    GradientBundle skip;
    Tensor input_grad;
};

// Deterministic He-style init from the seed; the tail gain is scaled by 0.1
// and the skip starts as an exact identity, so the initial prediction stays
// close to the input.
SrModel model_init(const ModelConfig& config, std::uint64_t seed);

// All layers delta-kernels with a zero-gain tail: forward returns its input.
SrModel make_identity_model(const ModelConfig& config);

// y = denorm(tail(body(norm(x))) + skip(norm(x))). Clamping to [0,1] is an
// inference-time step; training computes the loss on unclamped outputs.
Tensor model_forward(const SrModel& m, const Tensor& x, bool clamp_output = true);

// Intermediate activations kept for the backward pass.
struct ForwardTrace {
    Tensor normed;
    Tensor head_out;
    struct BlockTrace {
        Tensor input;
        Tensor expanded;   // pre-ReLU
        Tensor activated;  // post-ReLU
    };
    std::vector<BlockTrace> blocks;
    Tensor body_out;
    Tensor output;  // unclamped
};

ForwardTrace model_forward_trace(const SrModel& m, const Tensor& x);
ModelGradients model_backward_from_trace(const SrModel& m, const ForwardTrace& trace,
                                         const Tensor& upstream);
// Convenience wrapper that recomputes the trace.
ModelGradients model_backward(const SrModel& m, const Tensor& x, const Tensor& upstream);

std::size_t parameter_count(const ModelConfig& config);

// Canonical parameter order: head, per-block expand/project, tail, skip;
// within a layer v, g, bias. Used by the optimizer and the file format.
std::vector<double> flatten_parameters(const SrModel& m);
void unflatten_parameters(SrModel& m, std::span<const double> flat);
std::vector<double> flatten_gradients(const ModelGradients& g);

// Binary model file: magic "USRM", format version, config block, parameter
// tensors in canonical order, 64-bit checksum of all preceding bytes.
void model_save(const SrModel& m, const std::filesystem::path& path);
SrModel model_load(const std::filesystem::path& path);

// batch x 1 x L x D bridges between the image and tensor worlds.
Tensor tensor_from_images(std::span<const UsImage> images);
UsImage image_from_tensor(const Tensor& t, int batch_index, bool clamp = true);

}  // namespace usr

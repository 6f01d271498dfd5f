#include "usr/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace usr {

void ModelConfig::validate() const {
    if (blocks < 1) throw std::invalid_argument("ModelConfig: blocks must be >= 1");
    if (width < 1) throw std::invalid_argument("ModelConfig: width must be >= 1");
    if (expansion < 1) throw std::invalid_argument("ModelConfig: expansion must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("ModelConfig: kernel must be odd");
    if (!std::isfinite(norm_mean)) throw std::invalid_argument("ModelConfig: norm_mean must be finite");
}

int kernel_for_stride(int stride) {
    if (stride == 2) return 3;
    if (stride == 4) return 5;
    throw std::invalid_argument("kernel_for_stride: stride must be 2 or 4");
}

SamplingScheme scheme_for_kernel(int kernel) {
    if (kernel == 3) return SamplingScheme(2);
    if (kernel == 5) return SamplingScheme(4);
    throw std::invalid_argument("scheme_for_kernel: kernel serves no sampling scheme");
}

namespace {

std::vector<ConvParams*> conv_layers(SrModel& m) {
    std::vector<ConvParams*> layers;
    layers.push_back(&m.head);
    for (auto& b : m.blocks) {
        layers.push_back(&b.expand);
        layers.push_back(&b.project);
    }
    layers.push_back(&m.tail);
    layers.push_back(&m.skip);
    return layers;
}

std::vector<const ConvParams*> conv_layers(const SrModel& m) {
    std::vector<const ConvParams*> layers;
    layers.push_back(&m.head);
    for (const auto& b : m.blocks) {
        layers.push_back(&b.expand);
        layers.push_back(&b.project);
    }
    layers.push_back(&m.tail);
    layers.push_back(&m.skip);
    return layers;
}

std::vector<const GradientBundle*> grad_layers(const ModelGradients& g) {
    std::vector<const GradientBundle*> layers;
    layers.push_back(&g.head);
    for (const auto& b : g.blocks) {
        layers.push_back(&b.expand);
        layers.push_back(&b.project);
    }
    layers.push_back(&g.tail);
    layers.push_back(&g.skip);
    return layers;
}

SrModel model_skeleton(const ModelConfig& config) {
    config.validate();
    SrModel m;
    m.config = config;
    m.head = ConvParams::zeros(config.width, 1, config.kernel);
    m.blocks.resize(config.blocks);
    for (auto& b : m.blocks) {
        b.expand = ConvParams::zeros(config.expanded_width(), config.width, config.kernel);
        b.project = ConvParams::zeros(config.width, config.expanded_width(), config.kernel);
    }
    m.tail = ConvParams::zeros(1, config.width, config.kernel);
    m.skip = ConvParams::zeros(1, 1, config.kernel);
    return m;
}

void fill_he(ConvParams& p, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const double stddev = std::sqrt(2.0 / static_cast<double>(p.slice_count()));
    for (double& v : p.direction_v) v = stddev * normal(rng);
    const std::size_t slice = p.slice_count();
    for (int oc = 0; oc < p.out_ch; ++oc) {
        const double* v = p.direction_v.data() + oc * slice;
        double sq = 0.0;
        for (std::size_t i = 0; i < slice; ++i) sq += v[i] * v[i];
        p.gain_g[oc] = std::sqrt(sq);  // so the materialized weight equals v
        p.bias[oc] = 0.0;
    }
}

void fill_identity(ConvParams& p) {
    std::fill(p.direction_v.begin(), p.direction_v.end(), 0.0);
    const int k = p.kernel;
    const std::size_t slice = p.slice_count();
    for (int oc = 0; oc < p.out_ch; ++oc) {
        const int ic = oc % p.in_ch;
        p.direction_v[oc * slice + (static_cast<std::size_t>(ic) * k + k / 2) * k + k / 2] = 1.0;
        p.gain_g[oc] = 1.0;
        p.bias[oc] = 0.0;
    }
}

void add_in_place(Tensor& acc, const Tensor& other) {
    for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += other.values[i];
}

void check_model_input(const SrModel& m, const Tensor& x) {
    if (x.channels != 1) throw std::invalid_argument("model_forward: input must have one channel");
    if (x.batch < 1 || x.lines < 1 || x.depth < 1)
        throw std::invalid_argument("model_forward: empty input");
    (void)m;
}

}  // namespace

SrModel model_init(const ModelConfig& config, std::uint64_t seed) {
    SrModel m = model_skeleton(config);
    std::mt19937_64 rng(seed);
    fill_he(m.head, rng);
    for (auto& b : m.blocks) {
        fill_he(b.expand, rng);
        fill_he(b.project, rng);
        // Damp each block's residual addition so the body signal keeps the
        // head's scale regardless of depth.
        for (double& g : b.project.gain_g) g *= 0.1;
    }
    fill_he(m.tail, rng);
    // The tail feeds the global skip; a small gain starts the whole model as
    // a near-identity correction on its input.
    for (double& g : m.tail.gain_g) g *= 0.001;
    fill_identity(m.skip);
    return m;
}

SrModel make_identity_model(const ModelConfig& config) {
    SrModel m = model_skeleton(config);
    fill_identity(m.head);
    for (auto& b : m.blocks) {
        fill_identity(b.expand);
        fill_identity(b.project);
    }
    fill_identity(m.tail);
    std::fill(m.tail.gain_g.begin(), m.tail.gain_g.end(), 0.0);
    fill_identity(m.skip);
    return m;
}

ForwardTrace model_forward_trace(const SrModel& m, const Tensor& x) {
    check_model_input(m, x);
    ForwardTrace trace;
    trace.normed = x;
    for (double& v : trace.normed.values) v -= m.config.norm_mean;

    trace.head_out = conv2d_forward(trace.normed, m.head);
    Tensor u = trace.head_out;
    trace.blocks.reserve(m.blocks.size());
    for (const auto& b : m.blocks) {
        ForwardTrace::BlockTrace bt;
        bt.input = u;
        bt.expanded = conv2d_forward(u, b.expand);
        bt.activated = relu_forward(bt.expanded);
        Tensor projected = conv2d_forward(bt.activated, b.project);
        add_in_place(u, projected);
        trace.blocks.push_back(std::move(bt));
    }
    trace.body_out = std::move(u);

    Tensor y = conv2d_forward(trace.body_out, m.tail);
    Tensor sk = conv2d_forward(trace.normed, m.skip);
    add_in_place(y, sk);
    for (double& v : y.values) v += m.config.norm_mean;
    if (!all_finite(y.values)) throw divergence_error("model_forward: numerical divergence");
    trace.output = std::move(y);
    return trace;
}

Tensor model_forward(const SrModel& m, const Tensor& x, bool clamp_output) {
    check_model_input(m, x);
    Tensor normed = x;
    for (double& v : normed.values) v -= m.config.norm_mean;

    Tensor u = conv2d_forward(normed, m.head);
    for (const auto& b : m.blocks) {
        Tensor projected = conv2d_forward(relu_forward(conv2d_forward(u, b.expand)), b.project);
        add_in_place(u, projected);
    }
    Tensor y = conv2d_forward(u, m.tail);
    Tensor sk = conv2d_forward(normed, m.skip);
    add_in_place(y, sk);
    for (double& v : y.values) v += m.config.norm_mean;
    if (!all_finite(y.values)) throw divergence_error("model_forward: numerical divergence");
    if (clamp_output)
        for (double& v : y.values) v = std::clamp(v, 0.0, 1.0);
    return y;
}

ModelGradients model_backward_from_trace(const SrModel& m, const ForwardTrace& trace,
                                         const Tensor& upstream) {
    if (!upstream.same_shape(trace.output))
        throw std::invalid_argument("model_backward: upstream shape mismatch");

    ModelGradients grads;
    grads.blocks.resize(m.blocks.size());

    // Denormalization adds a constant, so dL/dy passes through unchanged.
    auto tail_back = conv2d_backward(trace.body_out, m.tail, upstream);
    grads.tail = std::move(tail_back.params);
    Tensor du = std::move(tail_back.input_grad);

    auto skip_back = conv2d_backward(trace.normed, m.skip, upstream);
    grads.skip = std::move(skip_back.params);
    Tensor dnormed = std::move(skip_back.input_grad);

    for (int i = static_cast<int>(m.blocks.size()) - 1; i >= 0; --i) {
        const auto& b = m.blocks[i];
        const auto& bt = trace.blocks[i];
        auto project_back = conv2d_backward(bt.activated, b.project, du);
        grads.blocks[i].project = std::move(project_back.params);
        Tensor dact = relu_backward(bt.expanded, project_back.input_grad);
        auto expand_back = conv2d_backward(bt.input, b.expand, dact);
        grads.blocks[i].expand = std::move(expand_back.params);
        add_in_place(du, expand_back.input_grad);  // residual add: gradient sums
    }

    auto head_back = conv2d_backward(trace.normed, m.head, du);
    grads.head = std::move(head_back.params);
    add_in_place(dnormed, head_back.input_grad);
    grads.input_grad = std::move(dnormed);
    return grads;
}

ModelGradients model_backward(const SrModel& m, const Tensor& x, const Tensor& upstream) {
    return model_backward_from_trace(m, model_forward_trace(m, x), upstream);
}

std::size_t parameter_count(const ModelConfig& config) {
    config.validate();
    const auto conv_count = [&](int out_ch, int in_ch) {
        return static_cast<std::size_t>(out_ch) * in_ch * config.kernel * config.kernel +
               2 * static_cast<std::size_t>(out_ch);
    };
    std::size_t total = conv_count(config.width, 1);  // head
    total += static_cast<std::size_t>(config.blocks) *
             (conv_count(config.expanded_width(), config.width) +
              conv_count(config.width, config.expanded_width()));
    total += conv_count(1, config.width);  // tail
    total += conv_count(1, 1);             // skip
    return total;
}

std::vector<double> flatten_parameters(const SrModel& m) {
    std::vector<double> flat;
    flat.reserve(parameter_count(m.config));
    for (const ConvParams* p : conv_layers(m)) {
        flat.insert(flat.end(), p->direction_v.begin(), p->direction_v.end());
        flat.insert(flat.end(), p->gain_g.begin(), p->gain_g.end());
        flat.insert(flat.end(), p->bias.begin(), p->bias.end());
    }
    return flat;
}

void unflatten_parameters(SrModel& m, std::span<const double> flat) {
    if (flat.size() != parameter_count(m.config))
        throw std::invalid_argument("unflatten_parameters: size mismatch");
    std::size_t off = 0;
    for (ConvParams* p : conv_layers(m)) {
        std::copy_n(flat.begin() + off, p->direction_v.size(), p->direction_v.begin());
        off += p->direction_v.size();
        std::copy_n(flat.begin() + off, p->gain_g.size(), p->gain_g.begin());
        off += p->gain_g.size();
        std::copy_n(flat.begin() + off, p->bias.size(), p->bias.begin());
        off += p->bias.size();
    }
}

std::vector<double> flatten_gradients(const ModelGradients& g) {
    std::vector<double> flat;
    for (const GradientBundle* b : grad_layers(g)) {
        flat.insert(flat.end(), b->grad_v.begin(), b->grad_v.end());
        flat.insert(flat.end(), b->grad_g.begin(), b->grad_g.end());
        flat.insert(flat.end(), b->grad_bias.begin(), b->grad_bias.end());
    }
    return flat;
}

// ---------------------------------------------------------------------------
// Model file format (little-endian):
//   "USRM" | version u32 | blocks u32 | width u32 | expansion u32 |
//   kernel u32 | norm_mean f64 | parameters f64[] | fnv1a-64 checksum u64
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'S', 'R', 'M'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& buf, double v) { put_u64(buf, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

double get_f64(const std::uint8_t* p) { return std::bit_cast<double>(get_u64(p)); }

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

void model_save(const SrModel& m, const std::filesystem::path& path) {
    m.config.validate();
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kFormatVersion);
    put_u32(buf, static_cast<std::uint32_t>(m.config.blocks));
    put_u32(buf, static_cast<std::uint32_t>(m.config.width));
    put_u32(buf, static_cast<std::uint32_t>(m.config.expansion));
    put_u32(buf, static_cast<std::uint32_t>(m.config.kernel));
    put_f64(buf, m.config.norm_mean);
    for (double v : flatten_parameters(m)) put_f64(buf, v);
    put_u64(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("model_save: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("model_save: write failed for " + path.string());
}

SrModel model_load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("model_load: cannot open " + path.string());
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    constexpr std::size_t header = 4 + 4 + 4 * 4 + 8;
    if (buf.size() < header + 8) throw std::runtime_error("model_load: truncated file");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw std::runtime_error("model_load: magic mismatch");
    if (get_u32(buf.data() + 4) != kFormatVersion)
        throw std::runtime_error("model_load: unsupported format version");

    const std::uint64_t stored = get_u64(buf.data() + buf.size() - 8);
    if (fnv1a64(buf.data(), buf.size() - 8) != stored)
        throw std::runtime_error("model_load: checksum failure");

    ModelConfig config;
    config.blocks = static_cast<int>(get_u32(buf.data() + 8));
    config.width = static_cast<int>(get_u32(buf.data() + 12));
    config.expansion = static_cast<int>(get_u32(buf.data() + 16));
    config.kernel = static_cast<int>(get_u32(buf.data() + 20));
    config.norm_mean = get_f64(buf.data() + 24);
    config.validate();

    const std::size_t expected = parameter_count(config);
    if (buf.size() != header + expected * 8 + 8)
        throw std::runtime_error("model_load: parameter payload size mismatch");

    std::vector<double> flat(expected);
    for (std::size_t i = 0; i < expected; ++i) flat[i] = get_f64(buf.data() + header + i * 8);

    SrModel m = model_skeleton(config);
    unflatten_parameters(m, flat);
    return m;
}

Tensor tensor_from_images(std::span<const UsImage> images) {
    if (images.empty()) throw std::invalid_argument("tensor_from_images: empty batch");
    const int L = images[0].lines(), D = images[0].depth();
    for (const auto& img : images)
        if (img.lines() != L || img.depth() != D)
            throw std::invalid_argument("tensor_from_images: heterogeneous shapes in one batch");
    Tensor t(static_cast<int>(images.size()), 1, L, D);
    for (std::size_t b = 0; b < images.size(); ++b)
        std::copy(images[b].pixels().begin(), images[b].pixels().end(),
                  t.values.begin() + b * static_cast<std::size_t>(L) * D);
    return t;
}

UsImage image_from_tensor(const Tensor& t, int batch_index, bool clamp) {
    if (t.channels != 1) throw std::invalid_argument("image_from_tensor: tensor must have one channel");
    if (batch_index < 0 || batch_index >= t.batch)
        throw std::invalid_argument("image_from_tensor: batch index out of range");
    UsImage img(t.lines, t.depth);
    const std::size_t plane = static_cast<std::size_t>(t.lines) * t.depth;
    auto begin = t.values.begin() + batch_index * plane;
    std::copy(begin, begin + plane, img.pixels().begin());
    if (clamp)
        for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
    return img;
}

}  // namespace usr

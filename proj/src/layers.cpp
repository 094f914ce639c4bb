#include "mmfs/layers.hpp"

#include <cmath>

namespace mmfs {

namespace F = torch::nn::functional;

torch::Tensor fused_leaky_relu(const torch::Tensor& x, const torch::Tensor& bias) {
    std::vector<int64_t> shape(x.dim(), 1);
    shape[1] = -1;
    return torch::leaky_relu(x + bias.view(shape), kLeakySlope) * std::sqrt(2.0);
}

torch::Tensor downsample2x(const torch::Tensor& x) { return F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)); }

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

EqualLinearImpl::EqualLinearImpl(EqualLinearOptions options_) : options(std::move(options_)) { reset(); }

void EqualLinearImpl::reset() {
    weight = register_parameter(
        "weight", torch::randn({options.out_features(), options.in_features()}) / options.lr_mul());
    bias = register_parameter("bias", torch::full({options.out_features()}, options.bias_init()));
}

double EqualLinearImpl::scale() const {
    return options.lr_mul() / std::sqrt(static_cast<double>(options.in_features()));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
    if (options.activate()) {
        return fused_leaky_relu(torch::matmul(x, (weight * scale()).t()), bias * options.lr_mul());
    }
    return torch::addmm(bias * options.lr_mul(), x, (weight * scale()).t());
}

EqualConv2dImpl::EqualConv2dImpl(EqualConv2dOptions options_) : options(std::move(options_)) { reset(); }

void EqualConv2dImpl::reset() {
    const auto k = options.kernel_size();
    weight = register_parameter("weight", torch::randn({options.out_channels(), options.in_channels(), k, k}));
    if (options.bias()) {
        bias = register_parameter("bias", torch::zeros({options.out_channels()}));
    }
}

double EqualConv2dImpl::scale() const {
    const auto k = options.kernel_size();
    return 1.0 / std::sqrt(static_cast<double>(options.in_channels() * k * k));
}

torch::Tensor EqualConv2dImpl::forward(const torch::Tensor& x) {
    auto input = options.downsample() ? downsample2x(x) : x;
    const auto pad = options.kernel_size() / 2;
    auto out = F::conv2d(input, weight * scale(), F::Conv2dFuncOptions().padding(pad));
    if (options.activate()) {
        return fused_leaky_relu(out, options.bias() ? bias : torch::zeros({options.out_channels()}, out.options()));
    }
    if (options.bias()) {
        out = out + bias.view({1, -1, 1, 1});
    }
    return out;
}

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out) : in_channels(in), out_channels(out) { reset(); }

void ResBlockImpl::reset() {
    conv1 = register_module("conv1", EqualConv2d(EqualConv2dOptions(in_channels, in_channels, 3)));
    conv2 = register_module("conv2", EqualConv2d(EqualConv2dOptions(in_channels, out_channels, 3).downsample(true)));
    skip = register_module(
        "skip", EqualConv2d(EqualConv2dOptions(in_channels, out_channels, 1).bias(false).activate(false).downsample(true)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    return (conv2(conv1(x)) + skip(x)) / std::sqrt(2.0);
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim_, int64_t heads_, int64_t ff_mult_)
    : dim(dim_), heads(heads_), ff_mult(ff_mult_) {
    reset();
}

void TransformerBlockImpl::reset() {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    fc1 = register_module("fc1", torch::nn::Linear(dim, ff_mult * dim));
    fc2 = register_module("fc2", torch::nn::Linear(ff_mult * dim, dim));
}

TransformerBlockImpl::Output TransformerBlockImpl::forward(const torch::Tensor& x) {
    const auto n = x.size(0);
    const auto t = x.size(1);
    const auto hd = dim / heads;
    auto parts = qkv(norm1(x)).chunk(3, -1);
    auto split = [&](const torch::Tensor& m) { return m.reshape({n, t, heads, hd}).transpose(1, 2); };
    auto q = split(parts[0]);
    auto k = split(parts[1]);
    auto v = split(parts[2]);
    auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd)), -1);
    auto o = torch::matmul(attn, v).transpose(1, 2).reshape({n, t, dim});
    auto h = x + proj(o);
    h = h + fc2(torch::gelu(fc1(norm2(h))));
    return {h, parts[1]};
}

} // namespace mmfs

#pragma once

#include <torch/torch.h>

namespace mmfs {

inline constexpr double kLeakySlope = 0.2;

// leaky_relu(x + bias, 0.2) * sqrt(2). Bias broadcasts over dim 1.
torch::Tensor fused_leaky_relu(const torch::Tensor& x, const torch::Tensor& bias);

// Fully connected layer with equalized learning rate: weights are stored at
// unit variance and rescaled by lr_mul / sqrt(in) on every forward.
struct EqualLinearOptions {
    EqualLinearOptions(int64_t in, int64_t out) : in_features_(in), out_features_(out) {}
    TORCH_ARG(int64_t, in_features);
    TORCH_ARG(int64_t, out_features);
    TORCH_ARG(double, bias_init) = 0.0;
    TORCH_ARG(double, lr_mul) = 1.0;
    TORCH_ARG(bool, activate) = false;
};

class EqualLinearImpl : public torch::nn::Cloneable<EqualLinearImpl> {
public:
    explicit EqualLinearImpl(EqualLinearOptions options);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x);
    double scale() const;

    EqualLinearOptions options;
    torch::Tensor weight;
    torch::Tensor bias;
};
TORCH_MODULE(EqualLinear);

struct EqualConv2dOptions {
    EqualConv2dOptions(int64_t in, int64_t out, int64_t kernel) : in_channels_(in), out_channels_(out), kernel_size_(kernel) {}
    TORCH_ARG(int64_t, in_channels);
    TORCH_ARG(int64_t, out_channels);
    TORCH_ARG(int64_t, kernel_size);
    TORCH_ARG(bool, bias) = true;
    TORCH_ARG(bool, activate) = true;
    // 2x average-pool before the convolution.
    TORCH_ARG(bool, downsample) = false;
};

class EqualConv2dImpl : public torch::nn::Cloneable<EqualConv2dImpl> {
public:
    explicit EqualConv2dImpl(EqualConv2dOptions options);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x);
    double scale() const;

    EqualConv2dOptions options;
    torch::Tensor weight;
    torch::Tensor bias;  // undefined when options.bias() is false
};
TORCH_MODULE(EqualConv2d);

// Residual downsampling block: (conv2(conv1(x)) + skip(x)) / sqrt(2), where
// conv2 and the 1x1 skip both halve the spatial size.
class ResBlockImpl : public torch::nn::Cloneable<ResBlockImpl> {
public:
    ResBlockImpl(int64_t in_channels, int64_t out_channels);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x);

    int64_t in_channels;
    int64_t out_channels;
    EqualConv2d conv1{nullptr};
    EqualConv2d conv2{nullptr};
    EqualConv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

// Pre-norm transformer encoder block: x + attn(LN(x)), then x + MLP(LN(x)).
// Also returns the attention keys (heads concatenated) of its input.
class TransformerBlockImpl : public torch::nn::Cloneable<TransformerBlockImpl> {
public:
    TransformerBlockImpl(int64_t dim, int64_t heads, int64_t ff_mult);
    void reset() override;

    struct Output {
        torch::Tensor hidden;  // [N, T, d]
        torch::Tensor keys;    // [N, T, d]
    };
    Output forward(const torch::Tensor& x);

    int64_t dim;
    int64_t heads;
    int64_t ff_mult;
    torch::nn::LayerNorm norm1{nullptr};
    torch::nn::Linear qkv{nullptr};
    torch::nn::Linear proj{nullptr};
    torch::nn::LayerNorm norm2{nullptr};
    torch::nn::Linear fc1{nullptr};
    torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(TransformerBlock);

torch::Tensor downsample2x(const torch::Tensor& x);
torch::Tensor upsample2x(const torch::Tensor& x);

} // namespace mmfs

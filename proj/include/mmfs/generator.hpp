#pragma once

#include "mmfs/layers.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <utility>

namespace mmfs {

inline constexpr double kDemodEps = 1e-8;

// ---------------------------------------------------------------------------
// Latent codes
//
// Shapes used throughout:
//   z, w : [N, d]
//   w+   : [N, n_l, d_w]
// ---------------------------------------------------------------------------

// i.i.d. standard normal batch, fully determined by (count, seed).
torch::Tensor sample_z(int64_t count, uint64_t seed, int64_t z_dim);

// z / sqrt(mean(z^2) + eps) along the last dimension.
torch::Tensor pixel_norm(const torch::Tensor& z, double eps = 1e-8);

// alpha * w1 + (1 - alpha) * w2. alpha must lie in [0, 1].
torch::Tensor interpolate_styles(const torch::Tensor& w1, const torch::Tensor& w2, double alpha);

// [N, d_w] -> [N, slots, d_w]; a w+ input passes through after a slot check.
torch::Tensor broadcast_styles(const torch::Tensor& styles, int64_t slots);

// Convolution with a per-sample weight w'[n,o,i,:,:] = style[n,i] * weight[o,i,:,:],
// optionally divided by sqrt(sum_{i,k} w'^2 + eps) per output channel.
//   input  [N, I, H, W]
//   weight [O, I, k, k]
//   style  [N, I]
// When `upsample` is set the input is bilinearly upsampled 2x first.
torch::Tensor modulated_conv(const torch::Tensor& input, const torch::Tensor& weight, const torch::Tensor& style,
                             bool demodulate, double eps = kDemodEps, bool upsample = false);

class MappingNetworkImpl : public torch::nn::Cloneable<MappingNetworkImpl> {
public:
    MappingNetworkImpl(int64_t z_dim, int64_t w_dim, int64_t layers, double lr_mul);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& z);

    int64_t z_dim;
    int64_t w_dim;
    int64_t n_layers;
    double lr_mul;
    torch::nn::ModuleList fc;
};
TORCH_MODULE(MappingNetwork);

// Modulated 3x3 convolution + fixed noise injection + bias + leaky ReLU.
class StyledConvImpl : public torch::nn::Cloneable<StyledConvImpl> {
public:
    StyledConvImpl(int64_t in_channels, int64_t out_channels, int64_t w_dim, int64_t out_resolution, bool upsample);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

    int64_t in_channels;
    int64_t out_channels;
    int64_t w_dim;
    int64_t out_resolution;
    bool upsample;

    EqualLinear modulation{nullptr};
    torch::Tensor weight;           // [O, I, 3, 3], unit variance
    torch::Tensor noise;            // buffer [1, 1, R, R], frozen per instance
    torch::Tensor noise_strength;   // [1]
    torch::Tensor bias;             // [O]
};
TORCH_MODULE(StyledConv);

// 1x1 modulated projection to RGB (no demodulation), accumulating onto an
// upsampled skip image when one is given.
class ToRGBImpl : public torch::nn::Cloneable<ToRGBImpl> {
public:
    ToRGBImpl(int64_t in_channels, int64_t w_dim);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& skip = {});

    int64_t in_channels;
    int64_t w_dim;
    EqualLinear modulation{nullptr};
    torch::Tensor weight;  // [3, I, 1, 1]
    torch::Tensor bias;    // [3]
};
TORCH_MODULE(ToRGB);

// Mid/high-resolution synthesis layers: renders an image at 2^blocks times
// the alignment resolution from a feature grid plus n_l style codes.
class DecoderImpl : public torch::nn::Cloneable<DecoderImpl> {
public:
    explicit DecoderImpl(ModelProfile profile);
    void reset() override;

    // grid [N, C_align, A, A]; styles [N, d_w] (broadcast) or [N, n_l, d_w].
    torch::Tensor forward(const torch::Tensor& grid, const torch::Tensor& styles);

    int64_t style_slots() const { return profile.style_slots(); }

    ModelProfile profile;
    StyledConv conv0{nullptr};
    ToRGB rgb0{nullptr};
    // Per block: up-conv, conv, to-rgb.
    torch::nn::ModuleList up_convs;
    torch::nn::ModuleList convs;
    torch::nn::ModuleList to_rgbs;
};
TORCH_MODULE(Decoder);

// Prior-only low-resolution layers: learned constant up to the alignment grid.
class PriorLowImpl : public torch::nn::Cloneable<PriorLowImpl> {
public:
    explicit PriorLowImpl(ModelProfile profile);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& w);

    ModelProfile profile;
    torch::Tensor constant;
    torch::nn::ModuleList convs;
};
TORCH_MODULE(PriorLow);

struct PriorSample {
    torch::Tensor image;  // [N, 3, R, R]
    torch::Tensor grid;   // [N, C_align, A, A]
    torch::Tensor w;      // [N, d_w]
};

// Full StyleGAN2-style generator: z -> w mapping, prior low layers, decoder.
class GeneratorImpl : public torch::nn::Cloneable<GeneratorImpl> {
public:
    explicit GeneratorImpl(ModelProfile profile);
    void reset() override;

    torch::Tensor map(const torch::Tensor& z);
    torch::Tensor decode(const torch::Tensor& grid, const torch::Tensor& styles) { return decoder(grid, styles); }

    // Throws UnavailableState until the prior has been trained or loaded.
    PriorSample synthesize_prior(const torch::Tensor& z);
    // Same as synthesize_prior without the availability guard (used while
    // the prior itself is being trained).
    PriorSample synthesize_unchecked(const torch::Tensor& z);

    // Average w over `samples` seeded z draws.
    torch::Tensor mean_w(int64_t samples = 4096, uint64_t seed = 0);

    ModelProfile profile;
    bool prior_available = false;
    MappingNetwork mapping{nullptr};
    PriorLow low{nullptr};
    Decoder decoder{nullptr};
};
TORCH_MODULE(Generator);

} // namespace mmfs

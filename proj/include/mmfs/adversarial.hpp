#pragma once

#include "mmfs/layers.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

#include <functional>
#include <vector>

namespace mmfs {

struct DiscriminatorOutput {
    torch::Tensor logits;             // [N]
    std::vector<torch::Tensor> taps;  // ascending layer order
};

// StyleGAN2-style residual discriminator. The tap set lists the indices of
// residual blocks whose outputs are exposed for the perceptual loss; by
// default every block is tapped.
class DiscriminatorImpl : public torch::nn::Cloneable<DiscriminatorImpl> {
public:
    explicit DiscriminatorImpl(ModelProfile profile, std::vector<int64_t> taps = {});
    void reset() override;

    DiscriminatorOutput discriminate(const torch::Tensor& image);
    torch::Tensor forward(const torch::Tensor& image) { return discriminate(image).logits; }

    ModelProfile profile;
    std::vector<int64_t> tap_set;
    EqualConv2d from_rgb{nullptr};
    torch::nn::ModuleList blocks;
    EqualConv2d final_conv{nullptr};
    EqualLinear fc{nullptr};
    EqualLinear out{nullptr};
};
TORCH_MODULE(Discriminator);

// Sum over taps of the mean absolute feature difference. The lambda weight is
// applied by the caller.
torch::Tensor perceptual_loss(Discriminator& disc, const torch::Tensor& a, const torch::Tensor& b);
torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& taps_a, const std::vector<torch::Tensor>& taps_b);

struct GanLosses {
    torch::Tensor d_loss;
    torch::Tensor g_loss;
};

// Non-saturating softplus losses:
//   d = mean softplus(-real) + mean softplus(fake),  g = mean softplus(-fake)
GanLosses gan_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

using LogitFn = std::function<torch::Tensor(const torch::Tensor&)>;

// (gamma / 2) * mean_n ||d logit_n / d x_n||^2. The returned scalar keeps its
// graph so it can be backpropagated into the discriminator parameters.
torch::Tensor r1_penalty(const torch::Tensor& real_images, const LogitFn& logits, double gamma);
torch::Tensor r1_penalty(const torch::Tensor& real_images, Discriminator& disc, double gamma);

} // namespace mmfs

#pragma once

#include "mmfs/layers.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

namespace mmfs {

// Spatial encoder: image [N, 3, R, R] -> feature grid [N, C_align, R/16, R/16]
// aligned with the generator's intermediate layer.
//
//   stem Conv -> ResBlock x4 (each halves H, W) -> Conv (linear)
class EncoderImpl : public torch::nn::Cloneable<EncoderImpl> {
public:
    explicit EncoderImpl(ModelProfile profile);
    void reset() override;
    torch::Tensor forward(const torch::Tensor& image);

    ModelProfile profile;
    EqualConv2d stem{nullptr};
    torch::nn::ModuleList blocks;
    EqualConv2d head{nullptr};
};
TORCH_MODULE(Encoder);

} // namespace mmfs

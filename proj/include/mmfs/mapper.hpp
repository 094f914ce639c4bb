#pragma once

#include "mmfs/layers.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

namespace mmfs {

// Transformer M mapping a global embedding to a w+ code:
//   c_{w+} = head(M(normalize(f) + e_pos))
// One input token per style slot; e_pos is [n_l, d_c].
class ClipMapperImpl : public torch::nn::Cloneable<ClipMapperImpl> {
public:
    ClipMapperImpl(ModelProfile profile, int64_t style_slots);
    void reset() override;

    // f [N, d_c] or [d_c] -> [N, n_l, d_w]
    torch::Tensor forward(const torch::Tensor& f);

    // Zero head weight and set its bias to `mean_w` [d_w].
    void init_head(const torch::Tensor& mean_w);

    ModelProfile profile;
    int64_t style_slots;
    torch::Tensor e_pos;
    torch::nn::ModuleList layers;
    torch::nn::LayerNorm norm{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ClipMapper);

} // namespace mmfs

#pragma once

#include "mmfs/backbone.hpp"

#include <torch/torch.h>

namespace mmfs {

struct SelfSimilarityOptions {
    // 0 disables the guard: zero-norm tokens raise DegenerateInput. A positive
    // value instead divides by max(||k||, eps).
    double eps = 0.0;
};

// S_ij = cos(K_i, K_j). keys [n_t, d_t] -> [n_t, n_t], or batched
// [N, n_t, d_t] -> [N, n_t, n_t].
torch::Tensor self_similarity(const torch::Tensor& keys, const SelfSimilarityOptions& options = {});

// ||S(a) - S(b)||_F per item, averaged over the batch.
torch::Tensor structure_loss_from_keys(const torch::Tensor& keys_a, const torch::Tensor& keys_b,
                                       const SelfSimilarityOptions& options = {});

// Structure loss on images through the backbone's layer-`layer` keys
// (layer <= 0 selects the last layer). Images are resized to the backbone
// resolution first.
torch::Tensor structure_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureBackbone& backbone,
                             int64_t layer = 0, const SelfSimilarityOptions& options = {});

} // namespace mmfs

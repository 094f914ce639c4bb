#include "mmfs/structure.hpp"

#include "mmfs/errors.hpp"

namespace mmfs {

torch::Tensor self_similarity(const torch::Tensor& keys, const SelfSimilarityOptions& options) {
    if (keys.dim() != 2 && keys.dim() != 3) throw InvalidArgument("self_similarity: keys must be [n_t, d_t] or batched");
    if (keys.size(-2) < 1) throw InvalidArgument("self_similarity: need at least one token");
    auto norms = keys.norm(2, -1, /*keepdim=*/true);
    torch::Tensor unit;
    if (options.eps > 0.0) {
        unit = keys / norms.clamp_min(options.eps);
    } else {
        if ((norms == 0).any().item<bool>()) throw DegenerateInput("self_similarity: zero-norm token");
        unit = keys / norms;
    }
    return torch::matmul(unit, unit.transpose(-2, -1));
}

torch::Tensor structure_loss_from_keys(const torch::Tensor& keys_a, const torch::Tensor& keys_b,
                                       const SelfSimilarityOptions& options) {
    if (keys_a.size(-2) != keys_b.size(-2)) throw InvalidArgument("structure_loss: token count mismatch");
    auto diff = self_similarity(keys_a, options) - self_similarity(keys_b, options);
    auto fro = at::linalg_matrix_norm(diff, "fro", {-2, -1});
    return fro.dim() == 0 ? fro : fro.mean();
}

torch::Tensor structure_loss(const torch::Tensor& img_a, const torch::Tensor& img_b, FeatureBackbone& backbone,
                             int64_t layer, const SelfSimilarityOptions& options) {
    if (img_a.sizes() != img_b.sizes()) throw InvalidArgument("structure_loss: image shape mismatch");
    const auto side = backbone.dims().resolution;
    const auto l = layer <= 0 ? backbone.dims().layers : layer;
    const auto n = img_a.size(0);
    auto keys = backbone.keys(resize_for_backbone(torch::cat({img_a, img_b}, 0), side), l);
    return structure_loss_from_keys(keys.narrow(0, 0, n), keys.narrow(0, n, n), options);
}

} // namespace mmfs

#include "mmfs/mapper.hpp"

#include "mmfs/errors.hpp"

namespace mmfs {

namespace F = torch::nn::functional;

ClipMapperImpl::ClipMapperImpl(ModelProfile profile_, int64_t slots) : profile(std::move(profile_)), style_slots(slots) {
    reset();
}

void ClipMapperImpl::reset() {
    const auto d_c = profile.backbone.embed_dim;
    e_pos = register_parameter("e_pos", torch::randn({style_slots, d_c}) * 0.02);
    layers = register_module("layers", torch::nn::ModuleList());
    for (int64_t i = 0; i < profile.mapper_layers; ++i) {
        layers->push_back(TransformerBlock(d_c, profile.mapper_heads, profile.mapper_ff_mult));
    }
    norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d_c})));
    head = register_module("head", torch::nn::Linear(d_c, profile.w_dim));
    torch::NoGradGuard guard;
    head->weight.zero_();
    head->bias.zero_();
}

void ClipMapperImpl::init_head(const torch::Tensor& mean_w) {
    if (mean_w.dim() != 1 || mean_w.size(0) != profile.w_dim) throw InvalidArgument("init_head: mean_w must be [d_w]");
    torch::NoGradGuard guard;
    head->weight.zero_();
    head->bias.copy_(mean_w);
}

torch::Tensor ClipMapperImpl::forward(const torch::Tensor& f) {
    const auto d_c = profile.backbone.embed_dim;
    auto x = f.dim() == 1 ? f.unsqueeze(0) : f;
    if (x.dim() != 2 || x.size(1) != d_c) {
        throw InvalidArgument("map_feature_to_wplus: expected embedding of width " + std::to_string(d_c));
    }
    x = F::normalize(x, F::NormalizeFuncOptions().dim(-1));
    auto tokens = x.unsqueeze(1) + e_pos.unsqueeze(0);
    for (auto& layer : *layers) tokens = layer->as<TransformerBlock>()->forward(tokens).hidden;
    return head(norm(tokens));
}

} // namespace mmfs

#include "mmfs/guidance.hpp"

#include "mmfs/errors.hpp"

#include <algorithm>

namespace mmfs {

namespace F = torch::nn::functional;

OrthogonalBasis build_token_basis(const torch::Tensor& tokens) {
    if (tokens.dim() != 2) throw InvalidArgument("build_token_basis: tokens must be [n_t, d_t]");
    if (!(tokens != 0).any().item<bool>()) throw DegenerateInput("build_token_basis: all-zero token matrix");
    const auto n_t = tokens.size(0);
    const auto d_t = tokens.size(1);
    auto [u, s, vh] = torch::linalg_svd(tokens.detach().t(), /*full_matrices=*/true);
    return {u.narrow(1, 0, std::min(d_t, n_t)).contiguous()};
}

torch::Tensor subsample_tokens(const torch::Tensor& tokens, int64_t count) {
    const auto n_t = tokens.size(-2);
    if (count <= 0 || count >= n_t) return tokens;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) idx.push_back(i * n_t / count);
    return tokens.index_select(-2, torch::tensor(idx, torch::kLong));
}

torch::Tensor projection_loss(const OrthogonalBasis& basis, const torch::Tensor& tokens) {
    if (tokens.dim() != 2 && tokens.dim() != 3) throw InvalidArgument("projection_loss: tokens must be [n_t, d_t]");
    if (tokens.size(-1) != basis.u.size(0)) {
        throw InvalidArgument("projection_loss: token dim " + std::to_string(tokens.size(-1)) + " != basis dim " +
                              std::to_string(basis.u.size(0)));
    }
    auto u = basis.u.to(tokens.dtype());
    // Row form of U U^T T^T - T^T: T U U^T - T.
    auto residual = torch::matmul(torch::matmul(tokens, u), u.t()) - tokens;
    auto l1 = residual.abs().sum({-2, -1});
    return l1.dim() == 0 ? l1 : l1.mean();
}

torch::Tensor directional_loss(const torch::Tensor& image_emb, const torch::Tensor& image_anchor,
                               const torch::Tensor& prompt_emb, const torch::Tensor& prompt_anchor) {
    auto d_img = image_emb - image_anchor;
    auto d_prompt = prompt_emb - prompt_anchor;
    if (d_img.dim() == 1) d_img = d_img.unsqueeze(0);
    if (d_prompt.dim() == 1) d_prompt = d_prompt.unsqueeze(0);
    if (d_img.size(-1) != d_prompt.size(-1)) throw InvalidArgument("directional_loss: embedding dim mismatch");
    auto n_img = d_img.norm(2, -1);
    auto n_prompt = d_prompt.norm(2, -1);
    if ((n_img == 0).any().item<bool>() || (n_prompt == 0).any().item<bool>()) {
        throw DegenerateInput("directional_loss: zero-length direction vector");
    }
    auto cos = (d_img * d_prompt).sum(-1) / (n_img * n_prompt);
    return (1.0 - cos).mean();
}

GuidancePrompt GuidancePrompt::from_text(FeatureBackbone& clip, const std::string& prompt) {
    GuidancePrompt p;
    p.kind = PromptKind::text;
    p.text = prompt;
    p.embedding = clip.embed_text(prompt).detach();
    return p;
}

GuidancePrompt GuidancePrompt::from_image(FeatureBackbone& clip, const torch::Tensor& image) {
    GuidancePrompt p;
    p.kind = PromptKind::image;
    p.image = image.dim() == 3 ? image.unsqueeze(0) : image;
    if (p.image.size(0) != 1) throw InvalidArgument("image prompt must be a single image");
    torch::NoGradGuard guard;
    p.embedding = clip.embed_image(resize_for_backbone(p.image, clip.dims().resolution)).squeeze(0);
    return p;
}

GuidanceObjective::GuidanceObjective(GuidancePrompt prompt, GuidanceSettings settings, FeatureBackbone& clip,
                                     FeatureBackbone& dino)
    : prompt_(std::move(prompt)), settings_(std::move(settings)), clip_(clip), dino_(dino) {
    torch::NoGradGuard guard;
    if (prompt_.kind == PromptKind::text) {
        text_anchor_ = clip_.embed_text(settings_.source_text).detach();
    } else {
        auto ref = resize_for_backbone(prompt_.image, clip_.dims().resolution);
        auto tokens = clip_.tokens(ref, settings_.token_layer).squeeze(0);
        tokens = subsample_tokens(tokens, settings_.basis_tokens);
        basis_ = build_token_basis(tokens);
        vacuous_ = tokens.size(0) >= tokens.size(1);
    }
}

torch::Tensor GuidanceObjective::directional(const torch::Tensor& real, const torch::Tensor& stylized) {
    const auto side = clip_.dims().resolution;
    auto emb_s = clip_.embed_image(resize_for_backbone(stylized, side));
    torch::Tensor emb_r;
    auto real_embedding = [&] {
        if (!emb_r.defined()) {
            torch::NoGradGuard guard;
            emb_r = clip_.embed_image(resize_for_backbone(real, side)).detach();
        }
        return emb_r;
    };
    auto image_anchor = image_anchor_override ? *image_anchor_override : real_embedding();
    torch::Tensor prompt_anchor;
    if (prompt_anchor_override) {
        prompt_anchor = *prompt_anchor_override;
    } else if (prompt_.kind == PromptKind::text) {
        prompt_anchor = text_anchor_;
    } else {
        prompt_anchor = real_embedding();
    }
    return directional_loss(emb_s, image_anchor, prompt_.embedding, prompt_anchor);
}

ObjectiveTerms GuidanceObjective::zero_shot(const torch::Tensor& real, const torch::Tensor& stylized) {
    ObjectiveTerms terms;
    terms.structure = structure_loss(stylized, real, dino_, settings_.structure_layer);
    terms.directional = directional(real, stylized);
    terms.total = terms.structure + settings_.lambda_c * terms.directional;
    return terms;
}

ObjectiveTerms GuidanceObjective::one_shot(const torch::Tensor& real, const torch::Tensor& stylized) {
    if (!basis_) throw InvalidArgument("one_shot objective requires an image prompt");
    auto terms = zero_shot(real, stylized);
    auto tokens = clip_.tokens(resize_for_backbone(stylized, clip_.dims().resolution), settings_.token_layer);
    terms.projection = projection_loss(*basis_, tokens);
    terms.total = terms.total + settings_.lambda_proj * terms.projection;
    return terms;
}

} // namespace mmfs

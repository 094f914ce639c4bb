#pragma once

#include "mmfs/backbone.hpp"
#include "mmfs/structure.hpp"

#include <torch/torch.h>

#include <optional>
#include <string>

namespace mmfs {

// Orthonormal columns spanning a reference image's token space.
struct OrthogonalBasis {
    torch::Tensor u;  // [d_t, min(d_t, n_t)]

    torch::Tensor projector() const { return torch::matmul(u, u.t()); }
};

// Left singular vectors of the d_t x n_t arrangement (tokens as columns) of
// `tokens` [n_t, d_t]. A complete SVD is taken, so for rank-deficient input the
// trailing columns span part of the null space.
OrthogonalBasis build_token_basis(const torch::Tensor& tokens);

// Evenly spaced subset of `count` tokens (count <= 0 or >= n_t keeps all).
torch::Tensor subsample_tokens(const torch::Tensor& tokens, int64_t count);

// ||U U^T T^T - T^T||_1 for tokens [n_t, d_t]; batched input [N, n_t, d_t]
// averages the per-item norm.
torch::Tensor projection_loss(const OrthogonalBasis& basis, const torch::Tensor& tokens);

// 1 - cos(image_emb - image_anchor, prompt_emb - prompt_anchor), averaged over
// the batch. Embeddings [N, d_c] or [d_c]; anchors broadcast.
torch::Tensor directional_loss(const torch::Tensor& image_emb, const torch::Tensor& image_anchor,
                               const torch::Tensor& prompt_emb, const torch::Tensor& prompt_anchor);

enum class PromptKind { text, image };

struct GuidancePrompt {
    PromptKind kind = PromptKind::text;
    std::string text;
    torch::Tensor image;      // [1, 3, R, R] for image prompts
    torch::Tensor embedding;  // [d_c], unit norm

    static GuidancePrompt from_text(FeatureBackbone& clip, const std::string& prompt);
    static GuidancePrompt from_image(FeatureBackbone& clip, const torch::Tensor& image);
};

struct GuidanceSettings {
    double lambda_c = 1.0;
    double lambda_proj = 1.0;
    std::string source_text = "photo";
    int64_t structure_layer = 0;  // 0 = last backbone layer
    int64_t token_layer = 4;
    int64_t basis_tokens = 0;     // 0 = use every reference token
};

struct ObjectiveTerms {
    torch::Tensor structure;
    torch::Tensor directional;
    torch::Tensor projection;  // undefined for zero-shot
    torch::Tensor total;
};

// Everything about a guidance objective that is fixed for one fine-tune job.
// Anchors follow the directional-loss convention:
//   image direction  = F(I_s) - F(I_r)
//   text direction   = F(prompt) - F(source_text)
//   image-prompt dir = F(prompt image) - F(I_r)
// Either anchor can be overridden explicitly.
class GuidanceObjective {
public:
    GuidanceObjective(GuidancePrompt prompt, GuidanceSettings settings, FeatureBackbone& clip, FeatureBackbone& dino);

    const GuidancePrompt& prompt() const { return prompt_; }
    const GuidanceSettings& settings() const { return settings_; }
    const std::optional<OrthogonalBasis>& basis() const { return basis_; }
    // True when the reference basis is complete (n_t >= d_t), which makes the
    // projection loss identically zero.
    bool projection_vacuous() const { return vacuous_; }

    std::optional<torch::Tensor> image_anchor_override;
    std::optional<torch::Tensor> prompt_anchor_override;

    torch::Tensor directional(const torch::Tensor& real, const torch::Tensor& stylized);

    // structure(I_s, I_r) + lambda_c * directional
    ObjectiveTerms zero_shot(const torch::Tensor& real, const torch::Tensor& stylized);
    // zero_shot + lambda_proj * projection(I_s); requires an image prompt.
    ObjectiveTerms one_shot(const torch::Tensor& real, const torch::Tensor& stylized);

    ObjectiveTerms evaluate(const torch::Tensor& real, const torch::Tensor& stylized) {
        return prompt_.kind == PromptKind::image ? one_shot(real, stylized) : zero_shot(real, stylized);
    }

private:
    GuidancePrompt prompt_;
    GuidanceSettings settings_;
    FeatureBackbone& clip_;
    FeatureBackbone& dino_;
    torch::Tensor text_anchor_;
    std::optional<OrthogonalBasis> basis_;
    bool vacuous_ = false;
};

} // namespace mmfs

#pragma once

#include "mmfs/layers.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mmfs {

// Frozen feature extractor standing in for CLIP (global embedding, text
// embedding, layer tokens) and DINO-ViT (layer keys). Layers are 1-based.
class FeatureBackbone {
public:
    virtual ~FeatureBackbone() = default;

    virtual const BackboneDims& dims() const = 0;

    // images [N, 3, res, res] in [-1, 1] -> [N, d_c], unit L2 norm per row.
    virtual torch::Tensor embed_image(const torch::Tensor& images) = 0;
    // -> [d_c], unit L2 norm.
    virtual torch::Tensor embed_text(const std::string& prompt) = 0;
    // Output tokens of layer l without the class token: [N, n_t, d_t].
    virtual torch::Tensor tokens(const torch::Tensor& images, int64_t layer) = 0;
    // Key projections (heads concatenated) of layer l's attention: [N, n_t, d_t].
    virtual torch::Tensor keys(const torch::Tensor& images, int64_t layer) = 0;
};

// Bilinear resize to the backbone's input side. The single place where
// model-resolution images are adapted to backbone resolution.
torch::Tensor resize_for_backbone(const torch::Tensor& images, int64_t side);

class ToyViTImpl : public torch::nn::Cloneable<ToyViTImpl> {
public:
    explicit ToyViTImpl(BackboneDims dims);
    void reset() override;

    struct Trace {
        std::vector<torch::Tensor> hidden;  // per layer, including class token
        std::vector<torch::Tensor> keys;
    };
    // Runs the first `depth` layers.
    Trace run(const torch::Tensor& images, int64_t depth);
    torch::Tensor embed(const torch::Tensor& images);

    BackboneDims dims;
    torch::nn::Conv2d patch_embed{nullptr};
    torch::Tensor cls_token;
    torch::Tensor pos_embed;
    torch::nn::ModuleList blocks;
    torch::nn::LayerNorm final_norm{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ToyViT);

// Deterministic desk-scale backbone: seeded frozen ViT for images, seeded
// hash-of-n-grams projection for text.
class ToyBackbone final : public FeatureBackbone {
public:
    ToyBackbone(BackboneDims dims, uint64_t seed);
    // Adopts existing weights (used by the importer).
    ToyBackbone(ToyViT net, uint64_t text_seed);

    const BackboneDims& dims() const override { return net_->dims; }
    torch::Tensor embed_image(const torch::Tensor& images) override;
    torch::Tensor embed_text(const std::string& prompt) override;
    torch::Tensor tokens(const torch::Tensor& images, int64_t layer) override;
    torch::Tensor keys(const torch::Tensor& images, int64_t layer) override;

    ToyViT& net() { return net_; }
    uint64_t text_seed() const { return text_seed_; }

private:
    void check_input(const torch::Tensor& images) const;
    void check_layer(int64_t layer) const;

    ToyViT net_;
    uint64_t text_seed_;
};

// Writes a backbone weight container (bundle kind "backbone").
void export_backbone(ToyBackbone& backbone, const std::filesystem::path& dir);
// Builds a backbone from a container; dims come from the manifest.
std::shared_ptr<ToyBackbone> import_external_weights(const std::filesystem::path& dir);

// Multi-layer conv feature extractor for LPIPS-style distances.
class PerceptualEmbedder {
public:
    virtual ~PerceptualEmbedder() = default;
    virtual std::vector<torch::Tensor> features(const torch::Tensor& images) = 0;
};

class ToyPerceptualNetImpl : public torch::nn::Cloneable<ToyPerceptualNetImpl> {
public:
    explicit ToyPerceptualNetImpl(int64_t channels);
    void reset() override;
    std::vector<torch::Tensor> forward(const torch::Tensor& images);

    int64_t channels;
    torch::nn::Conv2d conv1{nullptr};
    torch::nn::Conv2d conv2{nullptr};
    torch::nn::Conv2d conv3{nullptr};
};
TORCH_MODULE(ToyPerceptualNet);

class ToyPerceptualEmbedder final : public PerceptualEmbedder {
public:
    ToyPerceptualEmbedder(int64_t channels, uint64_t seed);
    std::vector<torch::Tensor> features(const torch::Tensor& images) override { return net_->forward(images); }
    ToyPerceptualNet& net() { return net_; }

private:
    ToyPerceptualNet net_;
};

} // namespace mmfs

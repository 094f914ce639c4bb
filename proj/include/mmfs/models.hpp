#pragma once

#include "mmfs/adversarial.hpp"
#include "mmfs/backbone.hpp"
#include "mmfs/encoder.hpp"
#include "mmfs/generator.hpp"
#include "mmfs/mapper.hpp"
#include "mmfs/profile.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mmfs {

// Every network of the stylization pipeline plus the frozen backbones.
// Holders may be null (e.g. a partially assembled set in tests); operations
// that need a missing network throw UnavailableState.
struct ModelSet {
    ModelProfile profile;
    uint64_t seed = 0;
    // Last completed phase ("init", "prior", "stage1", ...).
    std::string stage = "init";

    Generator generator{nullptr};
    Encoder encoder{nullptr};
    Discriminator discriminator{nullptr};
    ClipMapper mapper{nullptr};

    std::shared_ptr<ToyBackbone> clip;
    std::shared_ptr<ToyBackbone> dino;
    std::shared_ptr<ToyPerceptualEmbedder> perceptual;

    // Freshly initialized networks, all derived from `seed`.
    static ModelSet create(const ModelProfile& profile, uint64_t seed);

    // Deep copy of the trainable networks; backbones are shared (frozen).
    ModelSet clone() const;

    // Modules of a parameter group (see config.hpp group names).
    std::vector<torch::nn::Module*> group(const std::string& name) const;
    std::string group_hash(const std::string& name) const;

    void to(torch::Dtype dtype);
    void eval();

    // D(E(images), styles); styles [N, d_w] or [N, n_l, d_w].
    torch::Tensor stylize(const torch::Tensor& images, const torch::Tensor& styles) const;
    // w+ from a backbone embedding through the mapper.
    torch::Tensor guided_styles(const torch::Tensor& embedding) const;
    // z -> w through the generator's mapping network.
    torch::Tensor styles_from_z(const torch::Tensor& z) const;
};

// Style codes [1, n_l, d_w] used by every inference entry point.
torch::Tensor random_wplus(const ModelSet& models, uint64_t seed);
torch::Tensor text_wplus(const ModelSet& models, const std::string& prompt);
torch::Tensor image_wplus(const ModelSet& models, const torch::Tensor& reference);

// Writes a checkpoint bundle (every network, backbone and the config echo).
void save_checkpoint(const ModelSet& models, const std::filesystem::path& dir);
ModelSet load_checkpoint(const std::filesystem::path& dir);

struct ReconstructionTerms {
    torch::Tensor l1;
    torch::Tensor perceptual;
    torch::Tensor total;  // l1 + lambda_perc * perceptual
};

// L1(rec, ref) + lambda_perc * sum_l L1(D^l(rec), D^l(ref)).
ReconstructionTerms reconstruction_loss(Discriminator& disc, const torch::Tensor& rec, const torch::Tensor& ref,
                                        double lambda_perc);

// Mapper self-reconstruction:
//   I_ref = D(E(I_r), w(z)),  I_rec = D(E(I_r), M(F(I_ref) + e_pos))
// scored with reconstruction_loss against the frozen discriminator.
ReconstructionTerms mapper_reconstruction_loss(const torch::Tensor& real, const torch::Tensor& z,
                                               const ModelSet& models, double lambda_perc = 4.0);

} // namespace mmfs

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mmfs {

// Architecture dimensions for one model family. Two presets exist: `toy`
// (desk-scale, CPU-friendly) and `reference` (the full 512px schedule).
struct BackboneDims {
    int64_t resolution = 64;
    int64_t patch = 8;
    int64_t token_dim = 32;  // d_t
    int64_t embed_dim = 64;  // d_c
    int64_t layers = 4;
    int64_t heads = 2;

    int64_t token_count() const { return (resolution / patch) * (resolution / patch); }
};

struct ModelProfile {
    std::string name = "toy";

    int64_t z_dim = 64;
    int64_t w_dim = 64;
    int64_t mapping_layers = 4;
    double mapping_lr_mul = 0.01;

    int64_t resolution = 64;
    int64_t prior_base_resolution = 2;

    // Decoder rows: first entry is the single StyledConv + ToRGB at the
    // alignment resolution, every further entry is an upsampling block of
    // 2x StyledConv + ToRGB.
    std::vector<int64_t> decoder_channels{64, 64, 32, 16, 8};

    int64_t encoder_stem_channels = 8;
    std::vector<int64_t> encoder_block_channels{8, 16, 32, 64};

    // Channel count at each discriminator resolution, from `resolution` down
    // to 4x4. One residual block per transition.
    std::vector<int64_t> discriminator_channels{8, 16, 32, 64, 64};

    BackboneDims backbone{};
    int64_t perceptual_channels = 16;

    int64_t mapper_layers = 4;
    int64_t mapper_heads = 4;
    int64_t mapper_ff_mult = 4;

    static ModelProfile toy();
    static ModelProfile reference();
    // "toy" | "reference"; throws InvalidArgument otherwise.
    static ModelProfile by_name(const std::string& name);
    // Honors MMFS_PROFILE, falling back to toy.
    static ModelProfile from_environment();

    int64_t upsample_blocks() const { return static_cast<int64_t>(decoder_channels.size()) - 1; }
    int64_t align_resolution() const { return resolution >> upsample_blocks(); }
    int64_t align_channels() const { return decoder_channels.front(); }
    // n_l: style-consuming layers of the decoder (every StyledConv and ToRGB).
    int64_t style_slots() const { return 2 + 3 * upsample_blocks(); }
    // Style slots of the prior-only low-resolution layers.
    int64_t prior_low_slots() const;

    void validate() const;
};

} // namespace mmfs

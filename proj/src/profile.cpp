#include "mmfs/profile.hpp"

#include "mmfs/errors.hpp"

#include <cstdlib>

namespace mmfs {

ModelProfile ModelProfile::toy() { return ModelProfile{}; }

ModelProfile ModelProfile::reference() {
    ModelProfile p;
    p.name = "reference";
    p.z_dim = 512;
    p.w_dim = 512;
    p.mapping_layers = 8;
    p.resolution = 512;
    p.prior_base_resolution = 4;
    p.decoder_channels = {512, 512, 256, 128, 64};
    p.encoder_stem_channels = 64;
    p.encoder_block_channels = {64, 128, 256, 512};
    p.discriminator_channels = {32, 64, 128, 256, 512, 512, 512, 512};
    p.backbone = BackboneDims{224, 16, 768, 512, 12, 12};
    p.perceptual_channels = 64;
    return p;
}

ModelProfile ModelProfile::by_name(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "reference") return reference();
    throw InvalidArgument("unknown model profile '" + name + "' (expected toy or reference)");
}

ModelProfile ModelProfile::from_environment() {
    const char* env = std::getenv("MMFS_PROFILE");
    if (env == nullptr || *env == '\0') return toy();
    return by_name(env);
}

int64_t ModelProfile::prior_low_slots() const {
    int64_t doublings = 0;
    for (int64_t r = prior_base_resolution; r < align_resolution(); r *= 2) ++doublings;
    return 1 + 2 * doublings;
}

void ModelProfile::validate() const {
    auto fail = [](const std::string& m) { throw InvalidArgument("profile: " + m); };
    if (z_dim <= 0 || w_dim <= 0) fail("latent dims must be positive");
    if (mapping_layers < 1) fail("mapping network needs at least one layer");
    if (decoder_channels.size() < 2) fail("decoder needs at least one upsampling block");
    if (static_cast<int64_t>(encoder_block_channels.size()) != upsample_blocks())
        fail("encoder downsampling count must equal decoder upsampling count");
    if ((align_resolution() << upsample_blocks()) != resolution) fail("resolution not divisible by 2^blocks");
    if (prior_base_resolution < 1 || prior_base_resolution > align_resolution())
        fail("prior base resolution must lie in [1, align resolution]");
    for (int64_t r = prior_base_resolution; r < align_resolution(); r *= 2) {
        if (r * 2 > align_resolution()) fail("prior base resolution must be align / 2^k");
    }
    int64_t disc_res = resolution;
    for (size_t i = 1; i < discriminator_channels.size(); ++i) disc_res /= 2;
    if (disc_res != 4) fail("discriminator channel list must run from resolution down to 4x4");
    if (backbone.resolution % backbone.patch != 0) fail("backbone patch must divide its resolution");
    if (backbone.token_dim % backbone.heads != 0) fail("backbone heads must divide token dim");
    if (backbone.embed_dim % mapper_heads != 0) fail("mapper heads must divide embed dim");
}

} // namespace mmfs

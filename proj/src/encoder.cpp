#include "mmfs/encoder.hpp"

#include "mmfs/errors.hpp"

#include <string>

namespace mmfs {

EncoderImpl::EncoderImpl(ModelProfile profile_) : profile(std::move(profile_)) {
    profile.validate();
    reset();
}

void EncoderImpl::reset() {
    stem = register_module("stem", EqualConv2d(EqualConv2dOptions(3, profile.encoder_stem_channels, 3)));
    blocks = register_module("blocks", torch::nn::ModuleList());
    int64_t in = profile.encoder_stem_channels;
    for (auto out : profile.encoder_block_channels) {
        blocks->push_back(ResBlock(in, out));
        in = out;
    }
    head = register_module("head", EqualConv2d(EqualConv2dOptions(in, profile.align_channels(), 3).activate(false)));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& image) {
    const auto r = profile.resolution;
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != r || image.size(3) != r) {
        throw InvalidArgument("encode: expected image [N, 3, " + std::to_string(r) + ", " + std::to_string(r) + "]");
    }
    auto x = stem(image);
    for (auto& block : *blocks) x = block->as<ResBlock>()->forward(x);
    return head(x);
}

} // namespace mmfs

#include "mmfs/adversarial.hpp"

#include "mmfs/errors.hpp"

#include <string>

namespace mmfs {

namespace F = torch::nn::functional;

DiscriminatorImpl::DiscriminatorImpl(ModelProfile profile_, std::vector<int64_t> taps)
    : profile(std::move(profile_)), tap_set(std::move(taps)) {
    profile.validate();
    const auto n_blocks = static_cast<int64_t>(profile.discriminator_channels.size()) - 1;
    if (tap_set.empty()) {
        for (int64_t i = 0; i < n_blocks; ++i) tap_set.push_back(i);
    }
    for (size_t i = 0; i < tap_set.size(); ++i) {
        if (tap_set[i] < 0 || tap_set[i] >= n_blocks || (i > 0 && tap_set[i] <= tap_set[i - 1])) {
            throw InvalidArgument("discriminator: tap indices must be strictly ascending block indices");
        }
    }
    reset();
}

void DiscriminatorImpl::reset() {
    const auto& ch = profile.discriminator_channels;
    from_rgb = register_module("from_rgb", EqualConv2d(EqualConv2dOptions(3, ch.front(), 1)));
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (size_t i = 1; i < ch.size(); ++i) blocks->push_back(ResBlock(ch[i - 1], ch[i]));
    const auto last = ch.back();
    final_conv = register_module("final_conv", EqualConv2d(EqualConv2dOptions(last, last, 3)));
    fc = register_module("fc", EqualLinear(EqualLinearOptions(last * 16, last).activate(true)));
    out = register_module("out", EqualLinear(EqualLinearOptions(last, 1)));
}

DiscriminatorOutput DiscriminatorImpl::discriminate(const torch::Tensor& image) {
    const auto r = profile.resolution;
    if (image.dim() != 4 || image.size(1) != 3 || image.size(2) != r || image.size(3) != r) {
        throw InvalidArgument("discriminate: expected image [N, 3, " + std::to_string(r) + ", " +
                              std::to_string(r) + "]");
    }
    DiscriminatorOutput result;
    auto x = from_rgb(image);
    size_t next_tap = 0;
    for (size_t i = 0; i < blocks->size(); ++i) {
        x = blocks[i]->as<ResBlock>()->forward(x);
        if (next_tap < tap_set.size() && tap_set[next_tap] == static_cast<int64_t>(i)) {
            result.taps.push_back(x);
            ++next_tap;
        }
    }
    x = final_conv(x);
    x = fc(x.flatten(1));
    result.logits = out(x).squeeze(1);
    return result;
}

torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& taps_a, const std::vector<torch::Tensor>& taps_b) {
    if (taps_a.size() != taps_b.size() || taps_a.empty()) {
        throw InvalidArgument("perceptual_loss: tap lists must be non-empty and of equal length");
    }
    auto total = torch::zeros({}, taps_a.front().options());
    for (size_t i = 0; i < taps_a.size(); ++i) {
        if (taps_a[i].sizes() != taps_b[i].sizes()) throw InvalidArgument("perceptual_loss: tap shape mismatch");
        total = total + (taps_a[i] - taps_b[i]).abs().mean();
    }
    return total;
}

torch::Tensor perceptual_loss(Discriminator& disc, const torch::Tensor& a, const torch::Tensor& b) {
    if (a.sizes() != b.sizes()) throw InvalidArgument("perceptual_loss: image shape mismatch");
    // One pass over the concatenated batch keeps both halves on identical code paths.
    auto taps = disc->discriminate(torch::cat({a, b}, 0)).taps;
    const auto n = a.size(0);
    std::vector<torch::Tensor> ta, tb;
    for (auto& t : taps) {
        ta.push_back(t.narrow(0, 0, n));
        tb.push_back(t.narrow(0, n, n));
    }
    return perceptual_loss(ta, tb);
}

GanLosses gan_losses(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
    if (real_logits.numel() == 0 || fake_logits.numel() == 0) {
        throw InvalidArgument("gan_losses: empty logit batch");
    }
    return {F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean(), F::softplus(-fake_logits).mean()};
}

torch::Tensor r1_penalty(const torch::Tensor& real_images, const LogitFn& logits, double gamma) {
    if (!torch::GradMode::is_enabled()) {
        throw UnavailableState("r1_penalty: gradient mode is disabled, input gradients unavailable");
    }
    if (real_images.size(0) == 0) throw InvalidArgument("r1_penalty: empty batch");
    auto x = real_images.detach().requires_grad_(true);
    auto out = logits(x);
    if (!out.requires_grad()) {
        throw UnavailableState("r1_penalty: discriminator output does not depend differentiably on its input");
    }
    auto grad = torch::autograd::grad({out.sum()}, {x}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
    return grad.pow(2).flatten(1).sum(1).mean() * (gamma / 2.0);
}

torch::Tensor r1_penalty(const torch::Tensor& real_images, Discriminator& disc, double gamma) {
    return r1_penalty(real_images, [&](const torch::Tensor& x) { return disc->forward(x); }, gamma);
}

} // namespace mmfs

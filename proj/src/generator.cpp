#include "mmfs/generator.hpp"

#include "mmfs/errors.hpp"

#include <cmath>
#include <string>

namespace mmfs {

namespace F = torch::nn::functional;

torch::Tensor sample_z(int64_t count, uint64_t seed, int64_t z_dim) {
    if (count < 1) throw InvalidArgument("sample_z: count must be >= 1");
    if (z_dim < 1) throw InvalidArgument("sample_z: z_dim must be >= 1");
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    return torch::randn({count, z_dim}, gen, torch::kFloat);
}

torch::Tensor pixel_norm(const torch::Tensor& z, double eps) {
    return z * torch::rsqrt(z.pow(2).mean(-1, /*keepdim=*/true) + eps);
}

torch::Tensor interpolate_styles(const torch::Tensor& w1, const torch::Tensor& w2, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("interpolate_styles: alpha must lie in [0, 1]");
    if (w1.sizes() != w2.sizes()) throw InvalidArgument("interpolate_styles: shape mismatch");
    return w1 * alpha + w2 * (1.0 - alpha);
}

torch::Tensor broadcast_styles(const torch::Tensor& styles, int64_t slots) {
    if (styles.dim() == 2) return styles.unsqueeze(1).expand({styles.size(0), slots, styles.size(1)});
    if (styles.dim() == 3) {
        if (styles.size(1) != slots) {
            throw InvalidArgument("style slot count " + std::to_string(styles.size(1)) + " != expected " +
                                  std::to_string(slots));
        }
        return styles;
    }
    throw InvalidArgument("styles must be [N, d_w] or [N, n_l, d_w]");
}

torch::Tensor modulated_conv(const torch::Tensor& input, const torch::Tensor& weight, const torch::Tensor& style,
                             bool demodulate, double eps, bool upsample) {
    if (input.dim() != 4 || weight.dim() != 4 || style.dim() != 2) {
        throw InvalidArgument("modulated_conv: expected input [N,I,H,W], weight [O,I,k,k], style [N,I]");
    }
    const auto n = input.size(0);
    const auto in_ch = input.size(1);
    if (weight.size(1) != in_ch || style.size(1) != in_ch) {
        throw InvalidArgument("modulated_conv: channel mismatch (input " + std::to_string(in_ch) + ", weight " +
                              std::to_string(weight.size(1)) + ", style " + std::to_string(style.size(1)) + ")");
    }
    if (style.size(0) != n) throw InvalidArgument("modulated_conv: style batch != input batch");

    const auto out_ch = weight.size(0);
    const auto k = weight.size(2);
    auto w = weight.unsqueeze(0) * style.view({n, 1, in_ch, 1, 1});
    if (demodulate) {
        w = w * torch::rsqrt(w.pow(2).sum({2, 3, 4}, /*keepdim=*/true) + eps);
    }
    auto x = upsample ? upsample2x(input) : input;
    const auto h = x.size(2);
    const auto wd = x.size(3);
    auto out = F::conv2d(x.reshape({1, n * in_ch, h, wd}), w.reshape({n * out_ch, in_ch, k, k}),
                         F::Conv2dFuncOptions().padding(k / 2).groups(n));
    return out.view({n, out_ch, out.size(2), out.size(3)});
}

// ---------------------------------------------------------------------------

MappingNetworkImpl::MappingNetworkImpl(int64_t z_dim_, int64_t w_dim_, int64_t layers, double lr_mul_)
    : z_dim(z_dim_), w_dim(w_dim_), n_layers(layers), lr_mul(lr_mul_) {
    reset();
}

void MappingNetworkImpl::reset() {
    fc = register_module("fc", torch::nn::ModuleList());
    for (int64_t i = 0; i < n_layers; ++i) {
        const auto in = i == 0 ? z_dim : w_dim;
        fc->push_back(EqualLinear(EqualLinearOptions(in, w_dim).lr_mul(lr_mul).activate(true)));
    }
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
    if (z.dim() != 2 || z.size(1) != z_dim) {
        throw InvalidArgument("map_z_to_w: expected z of shape [N, " + std::to_string(z_dim) + "]");
    }
    auto x = pixel_norm(z);
    for (auto& layer : *fc) x = layer->as<EqualLinear>()->forward(x);
    return x;
}

// ---------------------------------------------------------------------------

StyledConvImpl::StyledConvImpl(int64_t in, int64_t out, int64_t w_dim_, int64_t res, bool up)
    : in_channels(in), out_channels(out), w_dim(w_dim_), out_resolution(res), upsample(up) {
    reset();
}

void StyledConvImpl::reset() {
    modulation = register_module("modulation", EqualLinear(EqualLinearOptions(w_dim, in_channels).bias_init(1.0)));
    weight = register_parameter("weight", torch::randn({out_channels, in_channels, 3, 3}));
    noise = register_buffer("noise", torch::randn({1, 1, out_resolution, out_resolution}));
    noise_strength = register_parameter("noise_strength", torch::zeros({1}));
    bias = register_parameter("bias", torch::zeros({out_channels}));
}

torch::Tensor StyledConvImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_channels * 9));
    auto out = modulated_conv(x, weight * scale, modulation(w), /*demodulate=*/true, kDemodEps, upsample);
    out = out + noise_strength * noise;
    return fused_leaky_relu(out, bias);
}

ToRGBImpl::ToRGBImpl(int64_t in, int64_t w_dim_) : in_channels(in), w_dim(w_dim_) { reset(); }

void ToRGBImpl::reset() {
    modulation = register_module("modulation", EqualLinear(EqualLinearOptions(w_dim, in_channels).bias_init(1.0)));
    weight = register_parameter("weight", torch::randn({3, in_channels, 1, 1}));
    bias = register_parameter("bias", torch::zeros({3}));
}

torch::Tensor ToRGBImpl::forward(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& skip) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_channels));
    auto out = modulated_conv(x, weight * scale, modulation(w), /*demodulate=*/false) + bias.view({1, 3, 1, 1});
    if (skip.defined()) out = out + upsample2x(skip);
    return out;
}

// ---------------------------------------------------------------------------

DecoderImpl::DecoderImpl(ModelProfile profile_) : profile(std::move(profile_)) {
    profile.validate();
    reset();
}

void DecoderImpl::reset() {
    const auto& ch = profile.decoder_channels;
    const auto wd = profile.w_dim;
    int64_t res = profile.align_resolution();
    conv0 = register_module("conv0", StyledConv(ch[0], ch[0], wd, res, false));
    rgb0 = register_module("rgb0", ToRGB(ch[0], wd));
    up_convs = register_module("up_convs", torch::nn::ModuleList());
    convs = register_module("convs", torch::nn::ModuleList());
    to_rgbs = register_module("to_rgbs", torch::nn::ModuleList());
    for (size_t b = 1; b < ch.size(); ++b) {
        res *= 2;
        up_convs->push_back(StyledConv(ch[b - 1], ch[b], wd, res, true));
        convs->push_back(StyledConv(ch[b], ch[b], wd, res, false));
        to_rgbs->push_back(ToRGB(ch[b], wd));
    }
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& grid, const torch::Tensor& styles) {
    const auto a = profile.align_resolution();
    if (grid.dim() != 4 || grid.size(1) != profile.align_channels() || grid.size(2) != a || grid.size(3) != a) {
        throw InvalidArgument("decode: feature grid must be [N, " + std::to_string(profile.align_channels()) + ", " +
                              std::to_string(a) + ", " + std::to_string(a) + "]");
    }
    auto wplus = broadcast_styles(styles, style_slots());
    // One style code may be shared by the whole batch.
    if (wplus.size(0) == 1 && grid.size(0) > 1) wplus = wplus.expand({grid.size(0), -1, -1});
    if (wplus.size(0) != grid.size(0)) throw InvalidArgument("decode: style batch != grid batch");

    int64_t slot = 0;
    auto next = [&] { return wplus.select(1, slot++); };
    auto x = conv0(grid, next());
    auto rgb = rgb0(x, next());
    for (size_t b = 0; b < up_convs->size(); ++b) {
        x = up_convs[b]->as<StyledConv>()->forward(x, next());
        x = convs[b]->as<StyledConv>()->forward(x, next());
        rgb = to_rgbs[b]->as<ToRGB>()->forward(x, next(), rgb);
    }
    return rgb;
}

PriorLowImpl::PriorLowImpl(ModelProfile profile_) : profile(std::move(profile_)) { reset(); }

void PriorLowImpl::reset() {
    const auto c = profile.align_channels();
    const auto base = profile.prior_base_resolution;
    constant = register_parameter("constant", torch::randn({1, c, base, base}));
    convs = register_module("convs", torch::nn::ModuleList());
    convs->push_back(StyledConv(c, c, profile.w_dim, base, false));
    for (int64_t r = base * 2; r <= profile.align_resolution(); r *= 2) {
        convs->push_back(StyledConv(c, c, profile.w_dim, r, true));
        convs->push_back(StyledConv(c, c, profile.w_dim, r, false));
    }
}

torch::Tensor PriorLowImpl::forward(const torch::Tensor& w) {
    auto wplus = broadcast_styles(w, profile.prior_low_slots());
    auto x = constant.expand({wplus.size(0), -1, -1, -1});
    for (size_t i = 0; i < convs->size(); ++i) {
        x = convs[i]->as<StyledConv>()->forward(x, wplus.select(1, static_cast<int64_t>(i)));
    }
    return x;
}

// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(ModelProfile profile_) : profile(std::move(profile_)) {
    profile.validate();
    reset();
}

void GeneratorImpl::reset() {
    mapping = register_module(
        "mapping", MappingNetwork(profile.z_dim, profile.w_dim, profile.mapping_layers, profile.mapping_lr_mul));
    low = register_module("low", PriorLow(profile));
    decoder = register_module("decoder", Decoder(profile));
}

torch::Tensor GeneratorImpl::map(const torch::Tensor& z) { return mapping(z); }

PriorSample GeneratorImpl::synthesize_prior(const torch::Tensor& z) {
    if (!prior_available) throw UnavailableState("synthesize_prior: prior weights not loaded");
    return synthesize_unchecked(z);
}

PriorSample GeneratorImpl::synthesize_unchecked(const torch::Tensor& z) {
    auto w = mapping(z);
    auto grid = low(w);
    auto image = decoder(grid, w);
    return {image, grid, w};
}

torch::Tensor GeneratorImpl::mean_w(int64_t samples, uint64_t seed) {
    torch::NoGradGuard guard;
    auto z = sample_z(samples, seed, profile.z_dim).to(mapping->fc[0]->as<EqualLinear>()->weight.dtype());
    return mapping(z).mean(0);
}

} // namespace mmfs

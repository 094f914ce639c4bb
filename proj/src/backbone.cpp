#include "mmfs/backbone.hpp"

#include "mmfs/bundle.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/util.hpp"

#include <cctype>
#include <cmath>

namespace mmfs {

namespace F = torch::nn::functional;

torch::Tensor resize_for_backbone(const torch::Tensor& images, int64_t side) {
    if (images.size(2) == side && images.size(3) == side) return images;
    return F::interpolate(images, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{side, side})
                                      .mode(torch::kBilinear)
                                      .align_corners(false));
}

// ---------------------------------------------------------------------------

ToyViTImpl::ToyViTImpl(BackboneDims dims_) : dims(dims_) { reset(); }

void ToyViTImpl::reset() {
    patch_embed = register_module(
        "patch_embed", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, dims.token_dim, dims.patch).stride(dims.patch)));
    cls_token = register_parameter("cls_token", torch::randn({1, 1, dims.token_dim}) * 0.02);
    pos_embed = register_parameter("pos_embed", torch::randn({1, 1 + dims.token_count(), dims.token_dim}) * 0.02);
    blocks = register_module("blocks", torch::nn::ModuleList());
    for (int64_t i = 0; i < dims.layers; ++i) blocks->push_back(TransformerBlock(dims.token_dim, dims.heads, 2));
    final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dims.token_dim})));
    head = register_module("head", torch::nn::Linear(dims.token_dim, dims.embed_dim));
}

ToyViTImpl::Trace ToyViTImpl::run(const torch::Tensor& images, int64_t depth) {
    auto x = patch_embed(images).flatten(2).transpose(1, 2);
    x = torch::cat({cls_token.expand({x.size(0), -1, -1}), x}, 1) + pos_embed;
    Trace trace;
    for (int64_t i = 0; i < depth; ++i) {
        auto out = blocks[i]->as<TransformerBlock>()->forward(x);
        x = out.hidden;
        trace.hidden.push_back(out.hidden);
        trace.keys.push_back(out.keys);
    }
    return trace;
}

torch::Tensor ToyViTImpl::embed(const torch::Tensor& images) {
    auto trace = run(images, dims.layers);
    auto pooled = final_norm(trace.hidden.back().mean(1));
    return F::normalize(head(pooled), F::NormalizeFuncOptions().dim(-1));
}

// ---------------------------------------------------------------------------

ToyBackbone::ToyBackbone(BackboneDims dims, uint64_t seed)
    : net_(with_seed(seed, [&] { return ToyViT(dims); })), text_seed_(seed ^ 0x9e3779b97f4a7c15ULL) {
    set_trainable(*net_, false);
    net_->eval();
}

ToyBackbone::ToyBackbone(ToyViT net, uint64_t text_seed) : net_(std::move(net)), text_seed_(text_seed) {
    set_trainable(*net_, false);
    net_->eval();
}

void ToyBackbone::check_input(const torch::Tensor& images) const {
    const auto r = dims().resolution;
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != r || images.size(3) != r) {
        throw InvalidArgument("backbone: expected images [N, 3, " + std::to_string(r) + ", " + std::to_string(r) +
                              "]");
    }
}

void ToyBackbone::check_layer(int64_t layer) const {
    if (layer < 1 || layer > dims().layers) {
        throw InvalidArgument("backbone: layer " + std::to_string(layer) + " outside [1, " +
                              std::to_string(dims().layers) + "]");
    }
}

torch::Tensor ToyBackbone::embed_image(const torch::Tensor& images) {
    check_input(images);
    return net_->embed(images);
}

namespace {

uint64_t fnv1a(std::string_view s, uint64_t seed) {
    uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<std::string> words_of(const std::string& prompt) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : prompt) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

} // namespace

torch::Tensor ToyBackbone::embed_text(const std::string& prompt) {
    auto words = words_of(prompt);
    if (words.empty()) throw InvalidArgument("embed_text: prompt must contain at least one word");
    std::vector<std::string> grams = words;
    for (size_t i = 1; i < words.size(); ++i) grams.push_back(words[i - 1] + " " + words[i]);
    auto acc = torch::zeros({dims().embed_dim});
    for (const auto& g : grams) {
        auto gen = at::make_generator<at::CPUGeneratorImpl>(fnv1a(g, text_seed_));
        acc += torch::randn({dims().embed_dim}, gen, torch::kFloat);
    }
    auto dtype = net_->head->weight.scalar_type();
    return F::normalize(acc, F::NormalizeFuncOptions().dim(0)).to(dtype);
}

torch::Tensor ToyBackbone::tokens(const torch::Tensor& images, int64_t layer) {
    check_input(images);
    check_layer(layer);
    return net_->run(images, layer).hidden.back().narrow(1, 1, dims().token_count());
}

torch::Tensor ToyBackbone::keys(const torch::Tensor& images, int64_t layer) {
    check_input(images);
    check_layer(layer);
    return net_->run(images, layer).keys.back().narrow(1, 1, dims().token_count());
}

void export_backbone(ToyBackbone& backbone, const std::filesystem::path& dir) {
    TensorBundle bundle;
    bundle.kind = "backbone";
    const auto& d = backbone.dims();
    bundle.config = {
        {"resolution", d.resolution}, {"patch", d.patch},   {"token_dim", d.token_dim},
        {"embed_dim", d.embed_dim},   {"layers", d.layers}, {"heads", d.heads},
        {"text_seed", std::to_string(backbone.text_seed())},
    };
    add_module(bundle, "vit", *backbone.net());
    write_bundle(dir, bundle);
}

std::shared_ptr<ToyBackbone> import_external_weights(const std::filesystem::path& dir) {
    auto bundle = read_bundle(dir);
    if (bundle.kind != "backbone") throw FormatError("container kind '" + bundle.kind + "' is not a backbone");
    BackboneDims d;
    uint64_t text_seed = 0;
    try {
        const auto& c = bundle.config;
        d.resolution = c.at("resolution").get<int64_t>();
        d.patch = c.at("patch").get<int64_t>();
        d.token_dim = c.at("token_dim").get<int64_t>();
        d.embed_dim = c.at("embed_dim").get<int64_t>();
        d.layers = c.at("layers").get<int64_t>();
        d.heads = c.at("heads").get<int64_t>();
        text_seed = std::stoull(c.at("text_seed").get<std::string>());
    } catch (const std::exception& e) {
        throw FormatError(std::string("backbone manifest is missing dimensions: ") + e.what());
    }
    if (d.resolution % d.patch != 0 || d.token_dim % d.heads != 0) {
        throw FormatError("backbone manifest declares inconsistent dimensions");
    }
    auto net = with_seed(0, [&] { return ToyViT(d); });
    load_module(bundle, "vit", *net);
    return std::make_shared<ToyBackbone>(std::move(net), text_seed);
}

// ---------------------------------------------------------------------------

ToyPerceptualNetImpl::ToyPerceptualNetImpl(int64_t channels_) : channels(channels_) { reset(); }

void ToyPerceptualNetImpl::reset() {
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels, 3).padding(1)));
    conv2 = register_module("conv2",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 2 * channels, 3).padding(1)));
    conv3 = register_module("conv3",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * channels, 2 * channels, 3).padding(1)));
}

std::vector<torch::Tensor> ToyPerceptualNetImpl::forward(const torch::Tensor& images) {
    auto f1 = torch::relu(conv1(images));
    auto f2 = torch::relu(conv2(F::max_pool2d(f1, F::MaxPool2dFuncOptions(2))));
    auto f3 = torch::relu(conv3(F::max_pool2d(f2, F::MaxPool2dFuncOptions(2))));
    return {f1, f2, f3};
}

ToyPerceptualEmbedder::ToyPerceptualEmbedder(int64_t channels, uint64_t seed)
    : net_(with_seed(seed, [&] { return ToyPerceptualNet(channels); })) {
    set_trainable(*net_, false);
    net_->eval();
}

} // namespace mmfs

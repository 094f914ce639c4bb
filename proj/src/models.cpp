#include "mmfs/models.hpp"

#include "mmfs/bundle.hpp"
#include "mmfs/config.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/util.hpp"

namespace mmfs {

namespace {

constexpr uint64_t kClipSeed = 0xC11F;
constexpr uint64_t kDinoSeed = 0xD1A0;
constexpr uint64_t kPerceptualSeed = 0x1F1F5;
constexpr const char* kModelsKind = "mmfs-models";

std::shared_ptr<ToyBackbone> clone_backbone(const std::shared_ptr<ToyBackbone>& b) {
    if (!b) return nullptr;
    auto net = std::dynamic_pointer_cast<ToyViTImpl>(b->net()->clone());
    return std::make_shared<ToyBackbone>(ToyViT(net), b->text_seed());
}

template <class Holder>
Holder clone_holder(const Holder& h) {
    if (h.is_empty()) return Holder{nullptr};
    return Holder(std::dynamic_pointer_cast<typename Holder::ContainedType>(h->clone()));
}

void require(bool present, const char* what) {
    if (!present) throw UnavailableState(std::string("model set has no ") + what);
}

} // namespace

ModelSet ModelSet::create(const ModelProfile& profile, uint64_t seed) {
    profile.validate();
    ModelSet m;
    m.profile = profile;
    m.seed = seed;
    const uint64_t base = seed * 16;
    m.generator = with_seed(base + 1, [&] { return Generator(profile); });
    m.encoder = with_seed(base + 2, [&] { return Encoder(profile); });
    m.discriminator = with_seed(base + 3, [&] { return Discriminator(profile); });
    m.mapper = with_seed(base + 4, [&] { return ClipMapper(profile, profile.style_slots()); });
    m.clip = std::make_shared<ToyBackbone>(profile.backbone, kClipSeed);
    m.dino = std::make_shared<ToyBackbone>(profile.backbone, kDinoSeed);
    m.perceptual = std::make_shared<ToyPerceptualEmbedder>(profile.perceptual_channels, kPerceptualSeed);
    return m;
}

ModelSet ModelSet::clone() const {
    ModelSet m;
    m.profile = profile;
    m.seed = seed;
    m.stage = stage;
    m.generator = clone_holder(generator);
    m.encoder = clone_holder(encoder);
    m.discriminator = clone_holder(discriminator);
    m.mapper = clone_holder(mapper);
    m.clip = clone_backbone(clip);
    m.dino = clone_backbone(dino);
    if (perceptual) {
        m.perceptual = std::make_shared<ToyPerceptualEmbedder>(profile.perceptual_channels, kPerceptualSeed);
        copy_state(*perceptual->net(), *m.perceptual->net());
    }
    return m;
}

std::vector<torch::nn::Module*> ModelSet::group(const std::string& name) const {
    if (name == kGroupEncoder) return {encoder.ptr().get()};
    if (name == kGroupMapping) return {generator->mapping.ptr().get()};
    if (name == kGroupLow) return {generator->low.ptr().get()};
    if (name == kGroupDecoder) return {generator->decoder.ptr().get()};
    if (name == kGroupDiscriminator) return {discriminator.ptr().get()};
    if (name == kGroupMapper) return {mapper.ptr().get()};
    throw InvalidArgument("unknown parameter group '" + name + "'");
}

std::string ModelSet::group_hash(const std::string& name) const {
    std::string joined;
    for (auto* m : group(name)) joined += module_hash(*m);
    return sha256_hex(joined);
}

void ModelSet::to(torch::Dtype dtype) {
    if (!generator.is_empty()) generator->to(dtype);
    if (!encoder.is_empty()) encoder->to(dtype);
    if (!discriminator.is_empty()) discriminator->to(dtype);
    if (!mapper.is_empty()) mapper->to(dtype);
    if (clip) clip->net()->to(dtype);
    if (dino) dino->net()->to(dtype);
    if (perceptual) perceptual->net()->to(dtype);
}

void ModelSet::eval() {
    if (!generator.is_empty()) generator->eval();
    if (!encoder.is_empty()) encoder->eval();
    if (!discriminator.is_empty()) discriminator->eval();
    if (!mapper.is_empty()) mapper->eval();
}

torch::Tensor ModelSet::stylize(const torch::Tensor& images, const torch::Tensor& styles) const {
    require(!encoder.is_empty(), "encoder");
    require(!generator.is_empty(), "generator");
    auto enc = encoder;
    auto gen = generator;
    return gen->decode(enc->forward(images), styles);
}

torch::Tensor ModelSet::guided_styles(const torch::Tensor& embedding) const {
    require(!mapper.is_empty(), "mapper");
    auto m = mapper;
    return m->forward(embedding);
}

torch::Tensor ModelSet::styles_from_z(const torch::Tensor& z) const {
    require(!generator.is_empty(), "generator");
    auto gen = generator;
    return gen->map(z);
}

torch::Tensor random_wplus(const ModelSet& models, uint64_t seed) {
    return broadcast_styles(models.styles_from_z(sample_z(1, seed, models.profile.z_dim)),
                            models.profile.style_slots());
}

torch::Tensor text_wplus(const ModelSet& models, const std::string& prompt) {
    require(models.clip != nullptr, "clip backbone");
    return models.guided_styles(models.clip->embed_text(prompt));
}

torch::Tensor image_wplus(const ModelSet& models, const torch::Tensor& reference) {
    require(models.clip != nullptr, "clip backbone");
    return models.guided_styles(models.clip->embed_image(resize_for_backbone(reference, models.clip->dims().resolution)));
}

// ---------------------------------------------------------------------------

void save_checkpoint(const ModelSet& models, const std::filesystem::path& dir) {
    TensorBundle bundle;
    bundle.kind = kModelsKind;
    std::vector<std::string> present;
    auto add = [&](const char* name, const auto& holder) {
        if (holder.is_empty()) return;
        add_module(bundle, name, *holder);
        present.emplace_back(name);
    };
    add("generator", models.generator);
    add("encoder", models.encoder);
    add("discriminator", models.discriminator);
    add("mapper", models.mapper);
    nlohmann::json backbones = nlohmann::json::object();
    auto add_backbone = [&](const char* name, const std::shared_ptr<ToyBackbone>& b) {
        if (!b) return;
        add_module(bundle, std::string(name) + ".vit", *b->net());
        backbones[name] = {{"text_seed", std::to_string(b->text_seed())}};
    };
    add_backbone("clip", models.clip);
    add_backbone("dino", models.dino);
    if (models.perceptual) {
        add_module(bundle, "perceptual", *models.perceptual->net());
        present.emplace_back("perceptual");
    }
    bundle.config = {
        {"profile", to_json(models.profile)},
        {"seed", std::to_string(models.seed)},
        {"stage", models.stage},
        {"prior_available", !models.generator.is_empty() && models.generator->prior_available},
        {"discriminator_taps",
         models.discriminator.is_empty() ? std::vector<int64_t>{} : models.discriminator->tap_set},
        {"networks", present},
        {"backbones", backbones},
    };
    write_bundle(dir, bundle);
}

ModelSet load_checkpoint(const std::filesystem::path& dir) {
    auto bundle = read_bundle(dir);
    if (bundle.kind != kModelsKind) throw FormatError("bundle kind '" + bundle.kind + "' is not a model checkpoint");
    const auto& cfg = bundle.config;
    ModelSet m;
    try {
        m.profile = profile_from_json(cfg.at("profile"));
        m.seed = std::stoull(cfg.at("seed").get<std::string>());
        m.stage = cfg.at("stage").get<std::string>();
        const auto networks = cfg.at("networks").get<std::vector<std::string>>();
        auto has = [&](const std::string& n) { return std::find(networks.begin(), networks.end(), n) != networks.end(); };

        // Construction draws no randomness that survives: every tensor is overwritten below.
        if (has("generator")) {
            m.generator = with_seed(0, [&] { return Generator(m.profile); });
            load_module(bundle, "generator", *m.generator);
            m.generator->prior_available = cfg.at("prior_available").get<bool>();
        }
        if (has("encoder")) {
            m.encoder = with_seed(0, [&] { return Encoder(m.profile); });
            load_module(bundle, "encoder", *m.encoder);
        }
        if (has("discriminator")) {
            auto taps = cfg.at("discriminator_taps").get<std::vector<int64_t>>();
            m.discriminator = with_seed(0, [&] { return Discriminator(m.profile, taps); });
            load_module(bundle, "discriminator", *m.discriminator);
        }
        if (has("mapper")) {
            m.mapper = with_seed(0, [&] { return ClipMapper(m.profile, m.profile.style_slots()); });
            load_module(bundle, "mapper", *m.mapper);
        }
        const auto& backbones = cfg.at("backbones");
        auto load_backbone = [&](const char* name) -> std::shared_ptr<ToyBackbone> {
            if (!backbones.contains(name)) return nullptr;
            auto net = with_seed(0, [&] { return ToyViT(m.profile.backbone); });
            load_module(bundle, std::string(name) + ".vit", *net);
            return std::make_shared<ToyBackbone>(net, std::stoull(backbones.at(name).at("text_seed").get<std::string>()));
        };
        m.clip = load_backbone("clip");
        m.dino = load_backbone("dino");
        if (has("perceptual")) {
            m.perceptual = std::make_shared<ToyPerceptualEmbedder>(m.profile.perceptual_channels, 0);
            load_module(bundle, "perceptual", *m.perceptual->net());
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest config: ") + e.what());
    }
    return m;
}

// ---------------------------------------------------------------------------

ReconstructionTerms reconstruction_loss(Discriminator& disc, const torch::Tensor& rec, const torch::Tensor& ref,
                                        double lambda_perc) {
    ReconstructionTerms t;
    t.l1 = (rec - ref).abs().mean();
    t.perceptual = perceptual_loss(disc, rec, ref);
    t.total = t.l1 + lambda_perc * t.perceptual;
    return t;
}

ReconstructionTerms mapper_reconstruction_loss(const torch::Tensor& real, const torch::Tensor& z,
                                               const ModelSet& models, double lambda_perc) {
    require(!models.encoder.is_empty(), "encoder");
    require(!models.generator.is_empty(), "generator");
    require(!models.discriminator.is_empty(), "discriminator");
    require(!models.mapper.is_empty(), "mapper");
    require(models.clip != nullptr, "clip backbone");

    auto gen = models.generator;
    auto enc = models.encoder;
    auto disc = models.discriminator;
    auto mapper = models.mapper;

    torch::Tensor features, ref, embedding;
    {
        torch::NoGradGuard guard;
        features = enc->forward(real);
        ref = gen->decode(features, gen->map(z));
        embedding = models.clip->embed_image(resize_for_backbone(ref, models.clip->dims().resolution));
    }
    auto rec = gen->decode(features, mapper->forward(embedding));
    return reconstruction_loss(disc, rec, ref, lambda_perc);
}

} // namespace mmfs

#include "mmfs/training.hpp"

#include "mmfs/adversarial.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/evaluation.hpp"
#include "mmfs/structure.hpp"
#include "mmfs/util.hpp"

#include <chrono>
#include <fstream>

namespace mmfs {

namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// EMA

void ema_update(std::vector<torch::Tensor>& ema, const std::vector<torch::Tensor>& params, double decay) {
    if (ema.size() != params.size()) throw InvalidArgument("ema_update: parameter counts differ");
    if (decay < 0.0 || decay > 1.0) throw InvalidArgument("ema_update: decay must lie in [0, 1]");
    torch::NoGradGuard guard;
    for (size_t i = 0; i < ema.size(); ++i) {
        if (ema[i].sizes() != params[i].sizes()) throw InvalidArgument("ema_update: shape mismatch");
        if (decay == 1.0) continue;
        ema[i].mul_(decay).add_(params[i].detach(), 1.0 - decay);
    }
}

EmaTracker::EmaTracker(std::vector<torch::nn::Module*> modules, double decay)
    : modules_(std::move(modules)), decay_(decay) {
    for (auto* m : modules_) {
        std::vector<torch::Tensor> copies;
        for (const auto& p : m->parameters()) copies.push_back(p.detach().clone());
        shadow_.push_back(std::move(copies));
    }
}

void EmaTracker::update() {
    for (size_t i = 0; i < modules_.size(); ++i) ema_update(shadow_[i], modules_[i]->parameters(), decay_);
}

void EmaTracker::publish(const std::vector<torch::nn::Module*>& targets) const {
    if (targets.size() != modules_.size()) throw InvalidArgument("EmaTracker::publish: module count mismatch");
    torch::NoGradGuard guard;
    for (size_t i = 0; i < targets.size(); ++i) {
        auto params = targets[i]->parameters();
        if (params.size() != shadow_[i].size()) throw InvalidArgument("EmaTracker::publish: structure mismatch");
        for (size_t j = 0; j < params.size(); ++j) params[j].copy_(shadow_[i][j]);
    }
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json LossRecord::to_json() const {
    return {{"step", step}, {"components", components}, {"wall_ms", wall_ms}};
}

bool TrainingReport::frozen_unchanged() const {
    for (const auto& g : frozen_groups) {
        auto before = hashes_before.find(g), after = hashes_after.find(g);
        if (before == hashes_before.end() || after == hashes_after.end() || before->second != after->second) {
            return false;
        }
    }
    return true;
}

nlohmann::json TrainingReport::to_json() const {
    return {{"stage", stage},
            {"iterations", iterations},
            {"steps_recorded", history.size()},
            {"metrics", metrics},
            {"warnings", warnings},
            {"frozen_groups", frozen_groups},
            {"frozen_unchanged", frozen_unchanged()},
            {"hashes_before", hashes_before},
            {"hashes_after", hashes_after}};
}

void TrainingReport::write_history(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    for (const auto& r : history) out << r.to_json().dump() << '\n';
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

// ---------------------------------------------------------------------------

GuidanceSettings guidance_settings(const StageConfig& config) {
    GuidanceSettings s;
    s.lambda_c = config.lambda_c;
    s.lambda_proj = config.lambda_proj;
    s.source_text = config.source_text;
    s.token_layer = config.token_layer;
    s.basis_tokens = config.basis_tokens;
    return s;
}

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::map<std::string, std::string> hash_groups(const ModelSet& m) {
    std::map<std::string, std::string> out;
    for (const auto& g : all_groups()) out[g] = m.group_hash(g);
    return out;
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

// Applies the config's freeze list; backbones are never trainable.
void apply_freeze(ModelSet& m, const StageConfig& cfg) {
    for (const auto& g : all_groups()) {
        for (auto* mod : m.group(g)) set_trainable(*mod, !contains(cfg.frozen_groups, g));
    }
    if (m.clip) set_trainable(*m.clip->net(), false);
    if (m.dino) set_trainable(*m.dino->net(), false);
    if (m.perceptual) set_trainable(*m.perceptual->net(), false);
}

std::vector<torch::Tensor> group_parameters(const ModelSet& m, const std::vector<std::string>& groups) {
    std::vector<torch::Tensor> out;
    for (const auto& g : groups) {
        for (auto* mod : m.group(g)) {
            for (auto& p : mod->parameters()) out.push_back(p);
        }
    }
    return out;
}

std::vector<torch::nn::Module*> group_modules(const ModelSet& m, const std::vector<std::string>& groups) {
    std::vector<torch::nn::Module*> out;
    for (const auto& g : groups) {
        for (auto* mod : m.group(g)) out.push_back(mod);
    }
    return out;
}

torch::optim::Adam make_adam(std::vector<torch::Tensor> params, const StageConfig& cfg) {
    return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(cfg.learning_rate)
                                                     .betas({cfg.adam_beta1, cfg.adam_beta2}));
}

// Shared bookkeeping of one training phase.
class Phase {
public:
    Phase(const ModelSet& source, const StageConfig& cfg, const StepCallback& cb)
        : cfg_(cfg), callback_(cb), online(source.clone()) {
        if (cfg.iterations < 0) throw InvalidArgument("iterations must be non-negative");
        if (cfg.batch_size < 1) throw InvalidArgument("batch_size must be positive");
        report.stage = to_string(cfg.stage);
        report.iterations = cfg.iterations;
        report.frozen_groups = cfg.frozen_groups;
        report.hashes_before = hash_groups(source);
        apply_freeze(online, cfg);
        online.eval();
    }

    // EMA over the trainable groups in `groups` (ignored when decay is 0).
    void track_ema(const std::vector<std::string>& groups) {
        ema_groups_.clear();
        for (const auto& g : groups) {
            if (!contains(cfg_.frozen_groups, g)) ema_groups_.push_back(g);
        }
        if (cfg_.ema_decay > 0.0 && !ema_groups_.empty()) {
            ema_.emplace(group_modules(online, ema_groups_), cfg_.ema_decay);
        }
    }

    void record(int64_t step, std::map<std::string, double> components, Clock::time_point started) {
        if (ema_) ema_->update();
        LossRecord r{step, std::move(components), elapsed_ms(started)};
        report.history.push_back(r);
        if (callback_) callback_(r);
    }

    TrainResult finish() {
        online.stage = report.stage;
        ModelSet published = online.clone();
        if (ema_) ema_->publish(group_modules(published, ema_groups_));
        published.stage = report.stage;
        for (const auto& g : all_groups()) {
            for (auto* mod : published.group(g)) set_trainable(*mod, true);
            for (auto* mod : online.group(g)) set_trainable(*mod, true);
        }
        report.hashes_after = hash_groups(online);
        return TrainResult{std::move(online), std::move(published), std::move(report)};
    }

    const StageConfig& cfg_;
    const StepCallback& callback_;
    ModelSet online;
    TrainingReport report;
    std::optional<EmaTracker> ema_;
    std::vector<std::string> ema_groups_;
};

// The first `count` images reserved for held-out measurements, the rest for
// training (all of them when the set is too small to split).
class SliceSet final : public ImageSet {
public:
    SliceSet(const ImageSet& base, int64_t begin, int64_t end) : base_(base), begin_(begin), end_(end) {}
    int64_t size() const override { return end_ - begin_; }
    int64_t resolution() const override { return base_.resolution(); }
    torch::Tensor get(int64_t index) const override {
        if (index < 0 || index >= size()) throw InvalidArgument("image index out of range");
        return base_.get(begin_ + index);
    }

private:
    const ImageSet& base_;
    int64_t begin_, end_;
};

struct Split {
    std::shared_ptr<const ImageSet> train;
    torch::Tensor heldout;  // [k, 3, R, R] (undefined when k = 0)
};

Split split_heldout(const ImageSet& set, int64_t heldout) {
    if (set.size() == 0) throw InvalidArgument("dataset is empty");
    Split s;
    const auto k = std::min(heldout, set.size());
    if (k > 0) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < k; ++i) idx.push_back(i);
        s.heldout = set.gather(idx);
    }
    if (set.size() >= 2 * k + 1 && k > 0) {
        s.train = std::make_shared<SliceSet>(set, k, set.size());
    } else {
        s.train = std::shared_ptr<const ImageSet>(&set, [](const ImageSet*) {});
    }
    return s;
}

void check_resolution(const ImageSet& set, const ModelProfile& profile, const char* what) {
    if (set.resolution() != profile.resolution) {
        throw InvalidArgument(std::string(what) + " resolution " + std::to_string(set.resolution()) +
                              " does not match the model resolution " + std::to_string(profile.resolution));
    }
}

// Fixed z batch for held-out measurements, independent of the training stream.
torch::Tensor heldout_z(const StageConfig& cfg, int64_t count, int64_t z_dim) {
    return sample_z(count, cfg.seed + 0x5EED0000ull, z_dim);
}

double stage1_heldout_l1(ModelSet& m, const torch::Tensor& z) {
    torch::NoGradGuard guard;
    auto s = m.generator->synthesize_prior(z);
    auto rec = m.generator->decode(m.encoder->forward(s.image), s.w);
    return (rec - s.image).abs().mean().item<double>();
}

} // namespace

// ---------------------------------------------------------------------------

TrainResult train_prior(const ModelSet& models, const StageConfig& config, const ImageSet& real,
                        const StepCallback& on_step) {
    check_resolution(real, models.profile, "real dataset");
    Phase phase(models, config, on_step);
    auto& m = phase.online;
    phase.track_ema({kGroupMapping, kGroupLow, kGroupDecoder});

    const bool d_trainable = !contains(config.frozen_groups, kGroupDiscriminator);
    auto g_opt = make_adam(group_parameters(m, {kGroupMapping, kGroupLow, kGroupDecoder}), config);
    auto d_opt = make_adam(m.discriminator->parameters(), config);
    DatasetSource data(std::shared_ptr<const ImageSet>(&real, [](const ImageSet*) {}), config.seed, config.hflip);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    const auto B = config.batch_size;

    for (int64_t step = 0; step < config.iterations; ++step) {
        const auto started = Clock::now();
        std::map<std::string, double> c;

        // Discriminator.
        auto reals = data.next(B);
        torch::Tensor fakes;
        {
            torch::NoGradGuard guard;
            fakes = m.generator->synthesize_unchecked(torch::randn({B, m.profile.z_dim}, gen)).image;
        }
        if (d_trainable) {
            set_trainable(*m.discriminator, true);
            auto losses = gan_losses(m.discriminator->forward(reals), m.discriminator->forward(fakes));
            auto d_total = losses.d_loss;
            c["d_loss"] = losses.d_loss.item<double>();
            if (config.r1_interval > 0 && step % config.r1_interval == 0) {
                auto r1 = r1_penalty(reals.detach().requires_grad_(true), m.discriminator, config.r1_gamma);
                d_total = d_total + r1 * static_cast<double>(config.r1_interval);
                c["r1"] = r1.item<double>();
            }
            d_opt.zero_grad();
            d_total.backward();
            d_opt.step();
            set_trainable(*m.discriminator, false);
        }

        // Generator.
        auto sample = m.generator->synthesize_unchecked(torch::randn({B, m.profile.z_dim}, gen));
        auto g_loss = F::softplus(-m.discriminator->forward(sample.image)).mean();
        g_opt.zero_grad();
        g_loss.backward();
        g_opt.step();
        c["g_loss"] = g_loss.item<double>();
        phase.record(step, std::move(c), started);
    }
    phase.online.generator->prior_available = true;
    auto result = phase.finish();
    result.published.generator->prior_available = true;
    return result;
}

TrainResult run_stage1(const ModelSet& models, const StageConfig& config, const StepCallback& on_step) {
    if (models.generator.is_empty() || !models.generator->prior_available) {
        throw UnavailableState("stage 1 needs trained prior weights");
    }
    Phase phase(models, config, on_step);
    auto& m = phase.online;
    phase.track_ema({kGroupEncoder});
    auto opt = make_adam(group_parameters(m, config.trainable_groups()), config);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    const auto B = config.batch_size;

    torch::Tensor eval_z;
    if (config.eval_samples > 0) {
        eval_z = heldout_z(config, config.eval_samples, m.profile.z_dim);
        phase.report.metrics["heldout_l1_initial"] = stage1_heldout_l1(m, eval_z);
    }

    for (int64_t step = 0; step < config.iterations; ++step) {
        const auto started = Clock::now();
        PriorSample s;
        {
            torch::NoGradGuard guard;
            s = m.generator->synthesize_prior(torch::randn({B, m.profile.z_dim}, gen));
        }
        auto rec = m.generator->decode(m.encoder->forward(s.image), s.w);
        auto terms = reconstruction_loss(m.discriminator, rec, s.image, config.lambda_perc);
        opt.zero_grad();
        terms.total.backward();
        opt.step();
        phase.record(step,
                     {{"l1", terms.l1.item<double>()},
                      {"perceptual", terms.perceptual.item<double>()},
                      {"total", terms.total.item<double>()}},
                     started);
    }

    auto result = phase.finish();
    if (eval_z.defined()) {
        result.report.metrics["heldout_l1_final"] = stage1_heldout_l1(result.online, eval_z);
        result.report.metrics["heldout_l1_published"] = stage1_heldout_l1(result.published, eval_z);
    }
    return result;
}

// ---------------------------------------------------------------------------

namespace {

struct Stage2Eval {
    double arcface = 0.0;
    double fid = 0.0;
};

Stage2Eval stage2_heldout(ModelSet& m, const torch::Tensor& real, const torch::Tensor& z,
                          const GaussianStats& style_stats) {
    torch::NoGradGuard guard;
    auto out = m.stylize(real, m.styles_from_z(z));
    const auto side = m.clip->dims().resolution;
    auto e_out = m.clip->embed_image(resize_for_backbone(out, side));
    auto e_real = m.clip->embed_image(resize_for_backbone(real, side));
    Stage2Eval e;
    e.arcface = arcface_dist_rows(e_real, e_out).to(torch::kDouble).mean().item<double>();
    if (out.size(0) >= 2) e.fid = frechet_distance(gaussian_stats(e_out), style_stats);
    return e;
}

GaussianStats style_statistics(ModelSet& m, const ImageSet& style) {
    torch::NoGradGuard guard;
    std::vector<torch::Tensor> feats;
    const auto side = m.clip->dims().resolution;
    for (int64_t start = 0; start < style.size(); start += 32) {
        std::vector<int64_t> idx;
        for (int64_t i = start; i < std::min(style.size(), start + 32); ++i) idx.push_back(i);
        feats.push_back(m.clip->embed_image(resize_for_backbone(style.gather(idx), side)));
    }
    return gaussian_stats(torch::cat(feats));
}

} // namespace

TrainResult run_stage2(const ModelSet& models, const StageConfig& config, const ImageSet* real, const ImageSet& style,
                       const StepCallback& on_step) {
    if (style.size() == 0) throw InvalidArgument("stage 2 needs a non-empty style dataset");
    check_resolution(style, models.profile, "style dataset");
    if (real) check_resolution(*real, models.profile, "real dataset");
    if (!models.dino) throw UnavailableState("stage 2 needs the structure backbone");
    if (!real && (models.generator.is_empty() || !models.generator->prior_available)) {
        throw UnavailableState("stage 2 without real images needs the prior to sample faces");
    }

    Phase phase(models, config, on_step);
    auto& m = phase.online;
    const std::vector<std::string> g_groups{kGroupEncoder, kGroupMapping, kGroupLow, kGroupDecoder};
    phase.track_ema(g_groups);

    std::vector<std::string> g_trainable;
    for (const auto& g : g_groups) {
        if (!contains(config.frozen_groups, g)) g_trainable.push_back(g);
    }
    const bool d_trainable = !contains(config.frozen_groups, kGroupDiscriminator);
    auto g_opt = make_adam(group_parameters(m, g_trainable), config);
    auto d_opt = make_adam(m.discriminator->parameters(), config);

    // Real faces: dataset, or the frozen starting prior as documented fallback.
    std::optional<Split> real_split;
    std::optional<DatasetSource> real_data;
    Generator prior{nullptr};
    if (real) {
        real_split = split_heldout(*real, config.eval_samples);
        real_data.emplace(real_split->train, config.seed, config.hflip);
    } else {
        prior = std::dynamic_pointer_cast<GeneratorImpl>(models.generator->clone());
        set_trainable(*prior, false);
    }
    DatasetSource style_data(std::shared_ptr<const ImageSet>(&style, [](const ImageSet*) {}), config.seed + 1,
                             config.hflip);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    auto prior_gen = at::make_generator<at::CPUGeneratorImpl>(config.seed + 2);
    const auto B = config.batch_size;
    const auto z_dim = m.profile.z_dim;

    auto sample_real = [&](int64_t n) {
        if (real_data) return real_data->next(n);
        torch::NoGradGuard guard;
        return prior->synthesize_prior(torch::randn({n, z_dim}, prior_gen)).image;
    };

    torch::Tensor eval_real, eval_z;
    std::optional<GaussianStats> style_stats;
    if (config.eval_samples > 0) {
        if (real_split) {
            eval_real = real_split->heldout;
        } else {
            torch::NoGradGuard guard;
            eval_real = prior->synthesize_prior(heldout_z(config, config.eval_samples, z_dim) * -1.0).image;
        }
        eval_z = heldout_z(config, eval_real.size(0), z_dim);
        style_stats = style_statistics(m, style);
        auto e = stage2_heldout(m, eval_real, eval_z, *style_stats);
        phase.report.metrics["heldout_arcface_initial"] = e.arcface;
        phase.report.metrics["heldout_fid_initial"] = e.fid;
    }

    for (int64_t step = 0; step < config.iterations; ++step) {
        const auto started = Clock::now();
        std::map<std::string, double> c;
        auto faces = sample_real(B);

        if (d_trainable) {
            set_trainable(*m.discriminator, true);
            auto styles = style_data.next(B);
            torch::Tensor fakes;
            {
                torch::NoGradGuard guard;
                fakes = m.stylize(faces, m.styles_from_z(torch::randn({B, z_dim}, gen)));
            }
            auto losses = gan_losses(m.discriminator->forward(styles), m.discriminator->forward(fakes));
            auto d_total = losses.d_loss;
            c["d_loss"] = losses.d_loss.item<double>();
            if (config.r1_interval > 0 && step % config.r1_interval == 0) {
                auto r1 = r1_penalty(styles.detach().requires_grad_(true), m.discriminator, config.r1_gamma);
                d_total = d_total + r1 * static_cast<double>(config.r1_interval);
                c["r1"] = r1.item<double>();
            }
            d_opt.zero_grad();
            d_total.backward();
            d_opt.step();
            set_trainable(*m.discriminator, false);
        }

        auto stylized = m.stylize(faces, m.styles_from_z(torch::randn({B, z_dim}, gen)));
        auto adv = F::softplus(-m.discriminator->forward(stylized)).mean();
        torch::Tensor total = adv;
        double structure_value;
        if (config.lambda_st != 0.0) {
            auto st = structure_loss(stylized, faces, *m.dino);
            total = adv + config.lambda_st * st;
            structure_value = st.item<double>();
        } else {
            torch::NoGradGuard guard;
            structure_value = structure_loss(stylized, faces, *m.dino).item<double>();
        }
        g_opt.zero_grad();
        total.backward();
        g_opt.step();
        c["adv"] = adv.item<double>();
        c["structure"] = structure_value;
        c["g_total"] = total.item<double>();
        phase.record(step, std::move(c), started);
    }

    auto result = phase.finish();
    if (style_stats) {
        auto e = stage2_heldout(result.online, eval_real, eval_z, *style_stats);
        result.report.metrics["heldout_arcface_final"] = e.arcface;
        result.report.metrics["heldout_fid_final"] = e.fid;
        auto p = stage2_heldout(result.published, eval_real, eval_z, *style_stats);
        result.report.metrics["heldout_arcface_published"] = p.arcface;
        result.report.metrics["heldout_fid_published"] = p.fid;
    }
    return result;
}

// ---------------------------------------------------------------------------

TrainResult run_mapper_stage(const ModelSet& models, const StageConfig& config, const ImageSet& real,
                             const StepCallback& on_step) {
    check_resolution(real, models.profile, "real dataset");
    Phase phase(models, config, on_step);
    auto& m = phase.online;
    if (m.mapper.is_empty()) throw UnavailableState("model set has no mapper");
    {
        torch::NoGradGuard guard;
        auto& head = m.mapper->head;
        if (head->weight.abs().max().item<double>() == 0.0 && head->bias.abs().max().item<double>() == 0.0) {
            m.mapper->init_head(m.generator->mean_w());
        }
    }
    phase.track_ema({kGroupMapper});
    auto opt = make_adam(group_parameters(m, config.trainable_groups()), config);

    auto split = split_heldout(real, config.eval_samples);
    DatasetSource data(split.train, config.seed, config.hflip);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(config.seed);
    const auto B = config.batch_size;

    torch::Tensor eval_z;
    auto heldout_loss = [&](const ModelSet& set) {
        torch::NoGradGuard guard;
        return mapper_reconstruction_loss(split.heldout, eval_z, set, config.lambda_perc).total.item<double>();
    };
    if (split.heldout.defined()) {
        eval_z = heldout_z(config, split.heldout.size(0), m.profile.z_dim);
        phase.report.metrics["heldout_loss_initial"] = heldout_loss(m);
    }

    for (int64_t step = 0; step < config.iterations; ++step) {
        const auto started = Clock::now();
        auto faces = data.next(B);
        auto terms = mapper_reconstruction_loss(faces, torch::randn({B, m.profile.z_dim}, gen), m, config.lambda_perc);
        opt.zero_grad();
        terms.total.backward();
        opt.step();
        phase.record(step,
                     {{"l1", terms.l1.item<double>()},
                      {"perceptual", terms.perceptual.item<double>()},
                      {"total", terms.total.item<double>()}},
                     started);
    }

    auto result = phase.finish();
    if (eval_z.defined()) {
        result.report.metrics["heldout_loss_final"] = heldout_loss(result.online);
        result.report.metrics["heldout_loss_published"] = heldout_loss(result.published);
    }
    return result;
}

// ---------------------------------------------------------------------------

TrainResult finetune(const ModelSet& models, const StageConfig& config, const GuidancePrompt& prompt,
                     const ImageSet& real, const StepCallback& on_step) {
    check_resolution(real, models.profile, "real dataset");
    if (models.mapper.is_empty() || !models.clip || !models.dino) {
        throw UnavailableState("fine-tuning needs the mapper and both backbones");
    }
    if (!prompt.embedding.defined()) throw InvalidArgument("fine-tuning prompt has no embedding");
    Phase phase(models, config, on_step);
    auto& m = phase.online;
    phase.track_ema({kGroupDecoder});

    GuidanceObjective objective(prompt, guidance_settings(config), *m.clip, *m.dino);
    if (prompt.kind == PromptKind::image && objective.projection_vacuous()) {
        phase.report.warnings.push_back(
            "projection loss is vacuous: the reference basis spans the whole token space (n_t >= d_t); "
            "set basis_tokens below the token width to make it informative");
    }
    auto opt = make_adam(group_parameters(m, config.trainable_groups()), config);
    auto split = split_heldout(real, config.eval_samples);
    DatasetSource data(split.train, config.seed, config.hflip);
    const auto B = config.batch_size;

    torch::Tensor styles;
    {
        torch::NoGradGuard guard;
        styles = m.guided_styles(prompt.embedding.to(torch::kFloat));
    }
    auto render = [&](ModelSet& set, const torch::Tensor& faces) {
        torch::Tensor features;
        {
            torch::NoGradGuard guard;
            features = set.encoder->forward(faces);
        }
        return set.generator->decode(features, styles.expand({faces.size(0), -1, -1}));
    };
    auto heldout_objective = [&](ModelSet& set) {
        torch::NoGradGuard guard;
        return objective.evaluate(split.heldout, render(set, split.heldout)).total.item<double>();
    };
    if (split.heldout.defined()) phase.report.metrics["objective_initial"] = heldout_objective(m);

    for (int64_t step = 0; step < config.iterations; ++step) {
        const auto started = Clock::now();
        auto faces = data.next(B);
        auto terms = objective.evaluate(faces, render(m, faces));
        opt.zero_grad();
        terms.total.backward();
        opt.step();
        std::map<std::string, double> c{{"structure", terms.structure.item<double>()},
                                        {"directional", terms.directional.item<double>()},
                                        {"total", terms.total.item<double>()}};
        if (terms.projection.defined()) c["projection"] = terms.projection.item<double>();
        phase.record(step, std::move(c), started);
    }

    auto result = phase.finish();
    if (split.heldout.defined()) {
        result.report.metrics["objective_final"] = heldout_objective(result.online);
        result.report.metrics["objective_published"] = heldout_objective(result.published);
    }
    return result;
}

} // namespace mmfs

#pragma once

#include "mmfs/config.hpp"
#include "mmfs/data.hpp"
#include "mmfs/guidance.hpp"
#include "mmfs/models.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace mmfs {

// ema <- decay * ema + (1 - decay) * params, elementwise and in place.
void ema_update(std::vector<torch::Tensor>& ema, const std::vector<torch::Tensor>& params, double decay);

// Shadow copies of a set of modules' parameters. The copies are detached and
// only ever written into a published snapshot.
class EmaTracker {
public:
    EmaTracker(std::vector<torch::nn::Module*> modules, double decay);
    void update();
    // Writes the averages into structurally identical modules.
    void publish(const std::vector<torch::nn::Module*>& targets) const;
    double decay() const { return decay_; }

private:
    std::vector<torch::nn::Module*> modules_;
    std::vector<std::vector<torch::Tensor>> shadow_;
    double decay_;
};

struct LossRecord {
    int64_t step = 0;
    std::map<std::string, double> components;
    double wall_ms = 0.0;
    nlohmann::json to_json() const;
};

struct TrainingReport {
    std::string stage;
    int64_t iterations = 0;
    std::vector<LossRecord> history;
    // Held-out measurements, e.g. "heldout_l1_initial" / "heldout_l1_final".
    std::map<std::string, double> metrics;
    std::vector<std::string> warnings;
    // Hash of every group before and after the run.
    std::map<std::string, std::string> hashes_before;
    std::map<std::string, std::string> hashes_after;
    std::vector<std::string> frozen_groups;

    // True when every frozen group hashes identically before and after.
    bool frozen_unchanged() const;
    nlohmann::json to_json() const;
    // One JSON object per line: {step, components, wall_ms}.
    void write_history(const std::filesystem::path& path) const;
};

// `online` holds the raw optimizer state of the trainable groups; `published`
// is the same set with EMA averages swapped in (identical to `online` when the
// decay is 0). Inputs are never modified.
struct TrainResult {
    ModelSet online;
    ModelSet published;
    TrainingReport report;
};

using StepCallback = std::function<void(const LossRecord&)>;

// Toy-scale substitute for a pretrained face GAN: trains mapping, low layers,
// decoder and discriminator adversarially on `real` and marks the prior
// available.
TrainResult train_prior(const ModelSet& models, const StageConfig& config, const ImageSet& real,
                        const StepCallback& on_step = {});

// Encoder alignment to the frozen prior:
//   I_ref = prior(z), I_rec = D(E(I_ref), w(z)), minimize L1 + lambda_perc * perceptual.
TrainResult run_stage1(const ModelSet& models, const StageConfig& config, const StepCallback& on_step = {});

// Adversarial stylization fine-tuning with the structure loss. Real faces come
// from `real`, or from the frozen prior when it is null.
TrainResult run_stage2(const ModelSet& models, const StageConfig& config, const ImageSet* real, const ImageSet& style,
                       const StepCallback& on_step = {});

// Mapper self-reconstruction training. A mapper whose head is still all zero
// gets its bias set to the generator's mean w first.
TrainResult run_mapper_stage(const ModelSet& models, const StageConfig& config, const ImageSet& real,
                             const StepCallback& on_step = {});

// Decoder-only zero-shot (text prompt) or one-shot (image prompt) adaptation.
TrainResult finetune(const ModelSet& models, const StageConfig& config, const GuidancePrompt& prompt,
                     const ImageSet& real, const StepCallback& on_step = {});

GuidanceSettings guidance_settings(const StageConfig& config);

} // namespace mmfs

#pragma once

#include "mmfs/profile.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace mmfs {

enum class Stage { prior, stage1, stage2, mapper, finetune_zero, finetune_one };

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

// Parameter groups that training phases freeze or update.
inline constexpr const char* kGroupEncoder = "encoder";
inline constexpr const char* kGroupMapping = "generator.mapping";
inline constexpr const char* kGroupLow = "generator.low";
inline constexpr const char* kGroupDecoder = "generator.decoder";
inline constexpr const char* kGroupDiscriminator = "discriminator";
inline constexpr const char* kGroupMapper = "mapper";

const std::vector<std::string>& all_groups();

struct StageConfig {
    Stage stage = Stage::stage1;
    int64_t iterations = 10000;
    int64_t batch_size = 8;
    double learning_rate = 0.001;
    double adam_beta1 = 0.1;
    double adam_beta2 = 0.999;
    double ema_decay = 0.999;  // 0 disables EMA

    double lambda_perc = 4.0;
    double lambda_st = 0.5;
    double lambda_c = 1.0;
    double lambda_proj = 1.0;

    double r1_gamma = 10.0;
    int64_t r1_interval = 16;

    uint64_t seed = 0;
    std::string real_data;   // directory; empty -> fallback source
    std::string style_data;  // directory; empty -> procedural style set
    bool hflip = false;

    // Guided fine-tuning.
    std::string source_text = "photo";
    int64_t token_layer = 4;
    int64_t basis_tokens = 0;

    // Held-out evaluation batch count used for reports (0 disables).
    int64_t eval_samples = 16;

    std::vector<std::string> frozen_groups;

    // Per-phase defaults: iteration count, optimizer settings, EMA decay and
    // frozen groups. The prior phase exists only at toy scale.
    static StageConfig defaults(Stage stage);
    std::vector<std::string> trainable_groups() const;
};

nlohmann::json to_json(const ModelProfile& profile);
ModelProfile profile_from_json(const nlohmann::json& j);

nlohmann::json to_json(const StageConfig& config);

// JSON run configuration: StageConfig keys plus "profile" and "backbone".
// Defaults for `stage` are applied first; unknown keys are rejected.
struct RunConfig {
    std::string profile = "toy";
    std::string backbone = "toy";  // "toy" or a backbone container directory
    StageConfig stage;
};

RunConfig parse_run_config(const nlohmann::json& j, Stage default_stage);
RunConfig load_run_config(const std::string& path, Stage default_stage);

} // namespace mmfs

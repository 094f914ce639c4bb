#include "mmfs/config.hpp"

#include "mmfs/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace mmfs {

using nlohmann::json;

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::prior: return "prior";
        case Stage::stage1: return "stage1";
        case Stage::stage2: return "stage2";
        case Stage::mapper: return "mapper";
        case Stage::finetune_zero: return "finetune_zero";
        case Stage::finetune_one: return "finetune_one";
    }
    return "unknown";
}

Stage stage_from_string(const std::string& name) {
    for (auto s : {Stage::prior, Stage::stage1, Stage::stage2, Stage::mapper, Stage::finetune_zero,
                   Stage::finetune_one}) {
        if (to_string(s) == name) return s;
    }
    throw InvalidArgument("unknown stage '" + name + "'");
}

const std::vector<std::string>& all_groups() {
    static const std::vector<std::string> groups{kGroupEncoder, kGroupMapping,       kGroupLow,
                                                 kGroupDecoder, kGroupDiscriminator, kGroupMapper};
    return groups;
}

StageConfig StageConfig::defaults(Stage stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
        case Stage::prior:
            c.iterations = 1500;
            c.learning_rate = 0.002;
            c.adam_beta1 = 0.0;
            c.adam_beta2 = 0.99;
            c.ema_decay = 0.0;
            c.frozen_groups = {kGroupEncoder, kGroupMapper};
            break;
        case Stage::stage1:
            c.iterations = 10000;
            c.frozen_groups = {kGroupMapping, kGroupLow, kGroupDecoder, kGroupDiscriminator, kGroupMapper};
            break;
        case Stage::stage2:
            c.iterations = 90000;
            c.frozen_groups = {kGroupLow, kGroupMapper};
            break;
        case Stage::mapper:
            c.iterations = 60000;
            c.learning_rate = 0.0002;
            c.adam_beta1 = 0.9;
            c.frozen_groups = {kGroupEncoder, kGroupMapping, kGroupLow, kGroupDecoder, kGroupDiscriminator};
            break;
        case Stage::finetune_zero:
        case Stage::finetune_one:
            c.iterations = 200;
            c.learning_rate = 0.0002;
            c.adam_beta1 = 0.9;
            c.ema_decay = 0.99;
            c.frozen_groups = {kGroupEncoder, kGroupMapping, kGroupLow, kGroupDiscriminator, kGroupMapper};
            break;
    }
    return c;
}

std::vector<std::string> StageConfig::trainable_groups() const {
    std::vector<std::string> out;
    for (const auto& g : all_groups()) {
        if (std::find(frozen_groups.begin(), frozen_groups.end(), g) == frozen_groups.end()) out.push_back(g);
    }
    return out;
}

json to_json(const ModelProfile& p) {
    const auto& b = p.backbone;
    return {
        {"name", p.name},
        {"z_dim", p.z_dim},
        {"w_dim", p.w_dim},
        {"mapping_layers", p.mapping_layers},
        {"mapping_lr_mul", p.mapping_lr_mul},
        {"resolution", p.resolution},
        {"prior_base_resolution", p.prior_base_resolution},
        {"decoder_channels", p.decoder_channels},
        {"encoder_stem_channels", p.encoder_stem_channels},
        {"encoder_block_channels", p.encoder_block_channels},
        {"discriminator_channels", p.discriminator_channels},
        {"backbone",
         {{"resolution", b.resolution},
          {"patch", b.patch},
          {"token_dim", b.token_dim},
          {"embed_dim", b.embed_dim},
          {"layers", b.layers},
          {"heads", b.heads}}},
        {"perceptual_channels", p.perceptual_channels},
        {"mapper_layers", p.mapper_layers},
        {"mapper_heads", p.mapper_heads},
        {"mapper_ff_mult", p.mapper_ff_mult},
    };
}

ModelProfile profile_from_json(const json& j) {
    try {
        ModelProfile p;
        p.name = j.at("name").get<std::string>();
        p.z_dim = j.at("z_dim").get<int64_t>();
        p.w_dim = j.at("w_dim").get<int64_t>();
        p.mapping_layers = j.at("mapping_layers").get<int64_t>();
        p.mapping_lr_mul = j.at("mapping_lr_mul").get<double>();
        p.resolution = j.at("resolution").get<int64_t>();
        p.prior_base_resolution = j.at("prior_base_resolution").get<int64_t>();
        p.decoder_channels = j.at("decoder_channels").get<std::vector<int64_t>>();
        p.encoder_stem_channels = j.at("encoder_stem_channels").get<int64_t>();
        p.encoder_block_channels = j.at("encoder_block_channels").get<std::vector<int64_t>>();
        p.discriminator_channels = j.at("discriminator_channels").get<std::vector<int64_t>>();
        const auto& b = j.at("backbone");
        p.backbone = BackboneDims{b.at("resolution").get<int64_t>(), b.at("patch").get<int64_t>(),
                                  b.at("token_dim").get<int64_t>(),  b.at("embed_dim").get<int64_t>(),
                                  b.at("layers").get<int64_t>(),     b.at("heads").get<int64_t>()};
        p.perceptual_channels = j.at("perceptual_channels").get<int64_t>();
        p.mapper_layers = j.at("mapper_layers").get<int64_t>();
        p.mapper_heads = j.at("mapper_heads").get<int64_t>();
        p.mapper_ff_mult = j.at("mapper_ff_mult").get<int64_t>();
        p.validate();
        return p;
    } catch (const json::exception& e) {
        throw FormatError(std::string("profile JSON: ") + e.what());
    }
}

json to_json(const StageConfig& c) {
    return {
        {"stage", to_string(c.stage)},
        {"iterations", c.iterations},
        {"batch_size", c.batch_size},
        {"learning_rate", c.learning_rate},
        {"adam_beta1", c.adam_beta1},
        {"adam_beta2", c.adam_beta2},
        {"ema_decay", c.ema_decay},
        {"lambda_perc", c.lambda_perc},
        {"lambda_st", c.lambda_st},
        {"lambda_c", c.lambda_c},
        {"lambda_proj", c.lambda_proj},
        {"r1_gamma", c.r1_gamma},
        {"r1_interval", c.r1_interval},
        {"seed", c.seed},
        {"real_data", c.real_data},
        {"style_data", c.style_data},
        {"hflip", c.hflip},
        {"source_text", c.source_text},
        {"token_layer", c.token_layer},
        {"basis_tokens", c.basis_tokens},
        {"eval_samples", c.eval_samples},
        {"frozen_groups", c.frozen_groups},
    };
}

RunConfig parse_run_config(const json& j, Stage default_stage) {
    if (!j.is_object()) throw InvalidArgument("run config must be a JSON object");
    RunConfig rc;
    auto stage = default_stage;
    if (j.contains("stage")) stage = stage_from_string(j.at("stage").get<std::string>());
    rc.stage = StageConfig::defaults(stage);
    auto& c = rc.stage;

    static const std::set<std::string> known{
        "stage",       "profile",      "backbone",    "iterations",  "batch_size",    "learning_rate",
        "adam_beta1",  "adam_beta2",   "ema_decay",   "lambda_perc", "lambda_st",     "lambda_c",
        "lambda_proj", "r1_gamma",     "r1_interval", "seed",        "real_data",     "style_data",
        "hflip",       "source_text",  "token_layer", "basis_tokens", "eval_samples", "frozen_groups"};
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw InvalidArgument("run config: unknown key '" + key + "'");
    }
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
        };
        get("profile", rc.profile);
        get("backbone", rc.backbone);
        get("iterations", c.iterations);
        get("batch_size", c.batch_size);
        get("learning_rate", c.learning_rate);
        get("adam_beta1", c.adam_beta1);
        get("adam_beta2", c.adam_beta2);
        get("ema_decay", c.ema_decay);
        get("lambda_perc", c.lambda_perc);
        get("lambda_st", c.lambda_st);
        get("lambda_c", c.lambda_c);
        get("lambda_proj", c.lambda_proj);
        get("r1_gamma", c.r1_gamma);
        get("r1_interval", c.r1_interval);
        get("seed", c.seed);
        get("real_data", c.real_data);
        get("style_data", c.style_data);
        get("hflip", c.hflip);
        get("source_text", c.source_text);
        get("token_layer", c.token_layer);
        get("basis_tokens", c.basis_tokens);
        get("eval_samples", c.eval_samples);
        get("frozen_groups", c.frozen_groups);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("run config: ") + e.what());
    }
    for (const auto& g : c.frozen_groups) {
        if (std::find(all_groups().begin(), all_groups().end(), g) == all_groups().end()) {
            throw InvalidArgument("run config: unknown parameter group '" + g + "'");
        }
    }
    if (c.iterations < 0 || c.batch_size < 1) throw InvalidArgument("run config: iterations/batch_size out of range");
    if (c.ema_decay < 0.0 || c.ema_decay > 1.0) throw InvalidArgument("run config: ema_decay must lie in [0, 1]");
    return rc;
}

RunConfig load_run_config(const std::string& path, Stage default_stage) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open config " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidArgument("config " + path + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j, default_stage);
}

} // namespace mmfs

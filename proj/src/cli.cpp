#include "mmfs/cli.hpp"

#include "mmfs/backbone.hpp"
#include "mmfs/config.hpp"
#include "mmfs/data.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/evaluation.hpp"
#include "mmfs/image_io.hpp"
#include "mmfs/models.hpp"
#include "mmfs/service.hpp"
#include "mmfs/training.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

namespace mmfs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    uint64_t seed = 0;
    std::string profile;
    std::string config;
    std::string checkpoint;
    std::string out;
    std::optional<int64_t> iterations;
    std::string real_data;
    std::string style_data;
    std::optional<double> lambda_st;
    std::string mode;
    std::string prompt;
    std::string input;
    std::string reference;
    std::string alphas = "1.0,0.8,0.6,0.4,0.2,0.0";
    std::optional<uint64_t> seed_a, seed_b;
    std::string prompt_a, prompt_b;
    std::string frames_dir;
    int64_t samples = 64;
    int64_t count = 256;
    std::string style = "photo";
    std::optional<int64_t> resolution;
    int64_t rows = 4;
    int64_t columns = 6;
    std::string host = "127.0.0.1";
    int port = 8080;
    int64_t basis_tokens = -1;
    bool seed_given = false;
};

ModelProfile select_profile(const Options& o, const std::optional<RunConfig>& rc) {
    if (!o.profile.empty()) return ModelProfile::by_name(o.profile);
    if (rc) return ModelProfile::by_name(rc->profile);
    return ModelProfile::from_environment();
}

StageConfig stage_config(Stage stage, const Options& o, std::optional<RunConfig>* rc_out = nullptr) {
    std::optional<RunConfig> rc;
    if (!o.config.empty()) rc = load_run_config(o.config, stage);
    StageConfig c = rc ? rc->stage : StageConfig::defaults(stage);
    if (o.iterations) c.iterations = *o.iterations;
    if (o.seed_given || !rc) c.seed = o.seed;
    if (!o.real_data.empty()) c.real_data = o.real_data;
    if (!o.style_data.empty()) c.style_data = o.style_data;
    if (o.lambda_st) c.lambda_st = *o.lambda_st;
    if (o.basis_tokens >= 0) c.basis_tokens = o.basis_tokens;
    if (rc_out) *rc_out = rc;
    return c;
}

void require_new_output(const Options& o) {
    if (o.out.empty()) throw UsageError("--out is required");
    if (!o.checkpoint.empty() && fs::exists(o.out) && fs::exists(o.checkpoint) &&
        fs::equivalent(fs::path(o.out), fs::path(o.checkpoint))) {
        throw UsageError("--out must differ from the input checkpoint");
    }
}

ModelSet open_checkpoint(const Options& o) {
    if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
    return load_checkpoint(o.checkpoint);
}

std::shared_ptr<ImageSet> real_set(const StageConfig& c, int64_t resolution) {
    return open_image_set(c.real_data, resolution, kToySetSize, kToyRealSeed, FaceStyle::photo);
}

std::shared_ptr<ImageSet> style_set(const StageConfig& c, int64_t resolution) {
    return open_image_set(c.style_data, resolution, kToySetSize, kToyStyleSeed, FaceStyle::cartoon);
}

StepCallback progress(std::ostream& out, int64_t total) {
    const int64_t every = std::max<int64_t>(1, total / 10);
    return [&out, every, total](const LossRecord& r) {
        if ((r.step + 1) % every != 0 && r.step + 1 != total) return;
        out << "step " << (r.step + 1) << "/" << total;
        for (const auto& [k, v] : r.components) out << " " << k << "=" << v;
        out << "\n";
    };
}

void write_outputs(const TrainResult& result, const Options& o, std::ostream& out) {
    save_checkpoint(result.published, o.out);
    std::ofstream(fs::path(o.out) / "report.json") << result.report.to_json().dump(2) << "\n";
    result.report.write_history(fs::path(o.out) / "history.jsonl");
    for (const auto& w : result.report.warnings) out << "warning: " << w << "\n";
    out << "wrote " << o.out << "\n";
}

std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            values.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("--alphas: '" + item + "' is not a number");
        }
    }
    if (values.empty()) throw UsageError("--alphas needs at least one value");
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("--alphas values must lie in [0, 1]");
    }
    return values;
}

// Style for stylize/interpolate: random seed, text prompt or reference image.
torch::Tensor style_for(const ModelSet& m, const std::string& mode, uint64_t seed, const std::string& prompt) {
    if (mode == "random") return random_wplus(m, seed);
    if (mode == "text") {
        if (prompt.empty()) throw UsageError("--prompt is required for text mode");
        return text_wplus(m, prompt);
    }
    if (mode == "image") {
        if (prompt.empty()) throw UsageError("--reference is required for image mode");
        return image_wplus(m, load_image(prompt, m.profile.resolution));
    }
    throw UsageError("unknown mode '" + mode + "'");
}

std::function<void(int)> g_stop_handler;
void on_signal(int sig) {
    if (g_stop_handler) g_stop_handler(sig);
}

} // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-modal face stylization toolkit", "mmfs"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    Options o;
    std::function<int()> action;

    auto seed_opt = app.add_option("--seed", o.seed, "Seed for every random draw")->capture_default_str();
    app.add_option("--profile", o.profile, "Model profile (toy|reference); defaults to $MMFS_PROFILE or toy");

    auto training_flags = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "JSON run configuration");
        sub->add_option("--iterations", o.iterations, "Override the iteration count");
        sub->add_option("--out", o.out, "Output checkpoint directory")->required();
    };

    // --- data and training ---------------------------------------------------
    auto* synth = app.add_subcommand("synth-data", "Write a procedural face dataset");
    synth->add_option("--out", o.out, "Output directory")->required();
    synth->add_option("--count", o.count, "Number of images")->capture_default_str();
    synth->add_option("--style", o.style, "photo|cartoon")->capture_default_str();
    synth->add_option("--resolution", o.resolution, "Image side (defaults to the profile resolution)");
    synth->callback([&] {
        action = [&] {
            if (o.style != "photo" && o.style != "cartoon") throw UsageError("--style must be photo or cartoon");
            const auto res = o.resolution.value_or(select_profile(o, std::nullopt).resolution);
            synthesize_dataset(o.out, o.count, o.seed, o.style == "photo" ? FaceStyle::photo : FaceStyle::cartoon, res);
            out << "wrote " << o.count << " images to " << o.out << "\n";
            return 0;
        };
    });

    auto* prior = app.add_subcommand("train-prior", "Train the toy generative prior from scratch");
    training_flags(prior);
    prior->add_option("--real-data", o.real_data, "Directory of real face images");
    prior->callback([&] {
        action = [&] {
            std::optional<RunConfig> rc;
            auto cfg = stage_config(Stage::prior, o, &rc);
            const auto profile = select_profile(o, rc);
            auto models = ModelSet::create(profile, cfg.seed);
            if (rc && rc->backbone != "toy") models.clip = import_external_weights(rc->backbone);
            auto real = real_set(cfg, profile.resolution);
            write_outputs(train_prior(models, cfg, *real, progress(out, cfg.iterations)), o, out);
            return 0;
        };
    });

    auto* s1 = app.add_subcommand("train-stage1", "Align the encoder with the frozen prior");
    training_flags(s1);
    s1->add_option("--checkpoint", o.checkpoint, "Input checkpoint with a trained prior")->required();
    s1->callback([&] {
        action = [&] {
            require_new_output(o);
            auto cfg = stage_config(Stage::stage1, o);
            auto models = open_checkpoint(o);
            write_outputs(run_stage1(models, cfg, progress(out, cfg.iterations)), o, out);
            return 0;
        };
    });

    auto* s2 = app.add_subcommand("train-stage2", "Adversarial stylization fine-tuning");
    training_flags(s2);
    s2->add_option("--checkpoint", o.checkpoint, "Stage-1 checkpoint")->required();
    s2->add_option("--real-data", o.real_data, "Directory of real faces (prior samples when omitted)");
    s2->add_option("--style-data", o.style_data, "Directory of stylized faces (procedural when omitted)");
    s2->add_option("--lambda-st", o.lambda_st, "Structure loss weight");
    s2->callback([&] {
        action = [&] {
            require_new_output(o);
            auto cfg = stage_config(Stage::stage2, o);
            auto models = open_checkpoint(o);
            auto style = style_set(cfg, models.profile.resolution);
            std::shared_ptr<ImageSet> real;
            if (!cfg.real_data.empty()) real = real_set(cfg, models.profile.resolution);
            write_outputs(run_stage2(models, cfg, real.get(), *style, progress(out, cfg.iterations)), o, out);
            return 0;
        };
    });

    auto* mapper = app.add_subcommand("train-mapper", "Train the embedding-to-w+ mapper");
    training_flags(mapper);
    mapper->add_option("--checkpoint", o.checkpoint, "Stage-2 checkpoint")->required();
    mapper->add_option("--real-data", o.real_data, "Directory of real faces (procedural when omitted)");
    mapper->callback([&] {
        action = [&] {
            require_new_output(o);
            auto cfg = stage_config(Stage::mapper, o);
            auto models = open_checkpoint(o);
            auto real = real_set(cfg, models.profile.resolution);
            write_outputs(run_mapper_stage(models, cfg, *real, progress(out, cfg.iterations)), o, out);
            return 0;
        };
    });

    auto* ft = app.add_subcommand("finetune", "Prompt-guided decoder fine-tuning");
    training_flags(ft);
    ft->add_option("--checkpoint", o.checkpoint, "Checkpoint with a trained mapper")->required();
    ft->add_option("--mode", o.mode, "zero (text prompt) or one (image prompt)")->required();
    ft->add_option("--prompt", o.prompt, "Prompt text, or reference image path for --mode one")->required();
    ft->add_option("--real-data", o.real_data, "Directory of real faces (procedural when omitted)");
    ft->add_option("--basis-tokens", o.basis_tokens, "Reference tokens used for the projection basis (0 = all)");
    ft->callback([&] {
        action = [&] {
            require_new_output(o);
            if (o.mode != "zero" && o.mode != "one") throw UsageError("--mode must be zero or one");
            const auto stage = o.mode == "zero" ? Stage::finetune_zero : Stage::finetune_one;
            auto cfg = stage_config(stage, o);
            auto models = open_checkpoint(o);
            auto prompt = stage == Stage::finetune_zero
                              ? GuidancePrompt::from_text(*models.clip, o.prompt)
                              : GuidancePrompt::from_image(*models.clip, load_image(o.prompt, models.profile.resolution));
            auto real = real_set(cfg, models.profile.resolution);
            write_outputs(finetune(models, cfg, prompt, *real, progress(out, cfg.iterations)), o, out);
            return 0;
        };
    });

    // --- inference -------------------------------------------------------------
    auto* sty = app.add_subcommand("stylize", "Stylize one face image");
    sty->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    sty->add_option("--input", o.input, "Input face image (PNG/JPEG)")->required();
    sty->add_option("--out", o.out, "Output PNG")->required();
    sty->add_option("--mode", o.mode, "random|text|image")->default_str("random");
    sty->add_option("--prompt", o.prompt, "Text prompt for --mode text");
    sty->add_option("--reference", o.reference, "Reference style image for --mode image");
    sty->callback([&] {
        action = [&] {
            auto models = open_checkpoint(o);
            models.eval();
            torch::NoGradGuard guard;
            const auto mode = o.mode.empty() ? std::string("random") : o.mode;
            auto styles = style_for(models, mode, o.seed, mode == "image" ? o.reference : o.prompt);
            auto image = load_image(o.input, models.profile.resolution);
            write_png(o.out, models.stylize(image, styles));
            out << "wrote " << o.out << "\n";
            return 0;
        };
    });

    auto* interp = app.add_subcommand("interpolate", "Render a strip blending two styles");
    interp->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    interp->add_option("--input", o.input, "Input face image")->required();
    interp->add_option("--out", o.out, "Output strip PNG")->required();
    interp->add_option("--alphas", o.alphas, "Comma-separated weights of style A")->capture_default_str();
    interp->add_option("--seed-a", o.seed_a, "Random style A (default: --seed)");
    interp->add_option("--seed-b", o.seed_b, "Random style B (default: --seed + 1)");
    interp->add_option("--prompt-a", o.prompt_a, "Text prompt for style A instead of a seed");
    interp->add_option("--prompt-b", o.prompt_b, "Text prompt for style B instead of a seed");
    interp->add_option("--frames-dir", o.frames_dir, "Also write each frame as frame_<i>.png here");
    interp->callback([&] {
        action = [&] {
            const auto alphas = parse_alphas(o.alphas);
            auto models = open_checkpoint(o);
            models.eval();
            torch::NoGradGuard guard;
            auto wa = o.prompt_a.empty() ? random_wplus(models, o.seed_a.value_or(o.seed))
                                         : text_wplus(models, o.prompt_a);
            auto wb = o.prompt_b.empty() ? random_wplus(models, o.seed_b.value_or(o.seed + 1))
                                         : text_wplus(models, o.prompt_b);
            auto image = load_image(o.input, models.profile.resolution);
            std::vector<torch::Tensor> frames;
            for (size_t i = 0; i < alphas.size(); ++i) {
                frames.push_back(models.stylize(image, interpolate_styles(wa, wb, alphas[i])));
                if (!o.frames_dir.empty()) {
                    write_png(fs::path(o.frames_dir) / ("frame_" + std::to_string(i) + ".png"), frames.back());
                }
            }
            write_png(o.out, image_strip(torch::cat(frames)));
            out << "wrote " << o.out << " (" << alphas.size() << " frames)\n";
            return 0;
        };
    });

    auto* ev = app.add_subcommand("eval", "Random-stylization metrics (FID, Arcface-Dist, LPIPS)");
    ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    ev->add_option("--real-data", o.real_data, "Directory of real faces (procedural when omitted)");
    ev->add_option("--style-data", o.style_data, "Directory of style images (procedural when omitted)");
    ev->add_option("--samples", o.samples, "Number of real images to stylize")->capture_default_str();
    ev->add_option("--out", o.out, "Write the metrics JSON here (stdout otherwise)");
    ev->callback([&] {
        action = [&] {
            auto models = open_checkpoint(o);
            models.eval();
            StageConfig c;
            c.real_data = o.real_data;
            c.style_data = o.style_data;
            auto real = real_set(c, models.profile.resolution);
            auto style = style_set(c, models.profile.resolution);
            if (o.samples > real->size()) throw UsageError("--samples exceeds the number of real images");
            std::vector<int64_t> idx;
            for (int64_t i = 0; i < o.samples; ++i) idx.push_back(i);
            auto metrics = eval_random_stylization(models, real->gather(idx),
                                                   style->all(), o.samples, o.seed);
            auto report = metrics.to_json();
            report["reference_targets"] = {{"fid", 10.39}, {"arcface_dist_mean", 0.507}, {"lpips_mean", 0.583}};
            if (o.out.empty()) {
                out << report.dump(2) << "\n";
            } else {
                std::ofstream(o.out) << report.dump(2) << "\n";
                out << "wrote " << o.out << "\n";
            }
            return 0;
        };
    });

    auto* grid = app.add_subcommand("export-grid", "Grid of input faces with random stylizations");
    grid->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    grid->add_option("--out", o.out, "Output PNG")->required();
    grid->add_option("--real-data", o.real_data, "Directory of real faces (procedural when omitted)");
    grid->add_option("--rows", o.rows, "Input faces")->capture_default_str();
    grid->add_option("--columns", o.columns, "Random styles per face")->capture_default_str();
    grid->callback([&] {
        action = [&] {
            if (o.rows < 1 || o.columns < 1) throw UsageError("--rows and --columns must be positive");
            auto models = open_checkpoint(o);
            models.eval();
            torch::NoGradGuard guard;
            StageConfig c;
            c.real_data = o.real_data;
            auto real = real_set(c, models.profile.resolution);
            if (o.rows > real->size()) throw UsageError("--rows exceeds the number of real images");
            std::vector<torch::Tensor> rows;
            for (int64_t r = 0; r < o.rows; ++r) {
                auto face = real->get(r).unsqueeze(0);
                std::vector<torch::Tensor> cells{face};
                for (int64_t k = 0; k < o.columns; ++k) {
                    cells.push_back(models.stylize(face, random_wplus(models, o.seed + static_cast<uint64_t>(k))));
                }
                rows.push_back(image_strip(torch::cat(cells)));
            }
            write_png(o.out, torch::cat(rows, 2));
            out << "wrote " << o.out << "\n";
            return 0;
        };
    });

    auto* serve = app.add_subcommand("serve", "Run the HTTP inference service");
    serve->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
    serve->add_option("--host", o.host, "Listen address")->capture_default_str();
    serve->add_option("--port", o.port, "Listen port")->capture_default_str();
    serve->add_option("--finetune-iterations", o.iterations, "Iterations per fine-tune job (default 200)");
    serve->add_option("--real-data", o.real_data, "Directory of real faces for fine-tune jobs");
    serve->callback([&] {
        action = [&] {
            auto models = open_checkpoint(o);
            ServiceOptions so;
            so.finetune_seed = o.seed;
            if (o.iterations) so.finetune_iterations = *o.iterations;
            if (!o.real_data.empty()) so.real_faces = std::make_shared<DirectoryImageSet>(o.real_data, models.profile.resolution);
            InferenceService service(std::move(models), so);
            g_stop_handler = [&service](int) { service.stop(); };
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            err << "serving on http://" << o.host << ":" << o.port << "\n";
            service.listen(o.host, o.port);
            g_stop_handler = nullptr;
            return 0;
        };
    });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << "run with --help for usage\n";
        return 2;
    }
    o.seed_given = seed_opt->count() > 0;
    try {
        return action ? action() : 2;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

int cli_dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_dispatch(args, std::cout, std::cerr);
}

} // namespace mmfs

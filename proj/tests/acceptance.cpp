// Acceptance runner: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes. The oracle suites are executed as the unit-test
// binaries built next to this one; training, persistence, interpolation and
// service checks run in-process on the toy profile.

#include "mmfs/bundle.hpp"
#include "mmfs/config.hpp"
#include "mmfs/data.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/generator.hpp"
#include "mmfs/guidance.hpp"
#include "mmfs/image_io.hpp"
#include "mmfs/models.hpp"
#include "mmfs/service.hpp"
#include "mmfs/training.hpp"
#include "mmfs/util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

using namespace mmfs;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << "[failed: " << what << "] ";
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

void report(const std::string& name, const Outcome& o, int& failures) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << "  " << o.detail.str() << std::endl;
    failures += o.pass ? 0 : 1;
}

// Runs a unit-test executable and checks both its exit status and runtime.
Outcome run_suite(const std::string& binary, double budget_s) {
    Outcome o;
    const auto path = fs::path(MMFS_TEST_BIN_DIR) / binary;
    const auto t0 = Clock::now();
    const std::string cmd = "\"" + path.string() + "\" --no-intro --minimal > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const double elapsed = seconds_since(t0);
    o.require(status == 0, binary + " reported failures (status " + std::to_string(status) + ")");
    o.require(elapsed <= budget_s, "runtime above " + std::to_string(static_cast<int>(budget_s)) + " s");
    o.detail << binary << " " << std::fixed << std::setprecision(1) << elapsed << " s";
    return o;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Maps relative path -> bytes for every file below `dir`.
std::map<std::string, std::string> snapshot_dir(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_bytes(e.path());
    }
    return files;
}

struct Scratch {
    fs::path dir;
    Scratch() {
        std::random_device rd;
        dir = fs::temp_directory_path() / ("mmfs-acceptance-" + std::to_string(rd()));
        fs::create_directories(dir);
    }
    ~Scratch() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

const ProceduralFaces& real_faces() {
    static ProceduralFaces faces(kToySetSize, kToyRealSeed, FaceStyle::photo, 64);
    return faces;
}

const ProceduralFaces& style_faces() {
    static ProceduralFaces faces(kToySetSize, kToyStyleSeed, FaceStyle::cartoon, 64);
    return faces;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(4) << v;
    return s.str();
}

bool frozen_ok(const TrainResult& r) { return r.report.frozen_unchanged() && !r.report.frozen_groups.empty(); }

// Shared state produced by the training criterion and reused afterwards.
struct Pipeline {
    std::optional<ModelSet> prior;
    std::optional<ModelSet> stage1;
    StageConfig stage1_config;
};

Outcome training_semantics(Pipeline& p) {
    Outcome o;
    const auto t0 = Clock::now();

    auto base = ModelSet::create(ModelProfile::toy(), 0);
    auto prior = train_prior(base, StageConfig::defaults(Stage::prior), real_faces());
    p.prior = prior.published;
    o.detail << "prior " << static_cast<int>(seconds_since(t0)) << " s; ";

    // Stage I: 2000 steps, held-out L1 of the trained encoder vs initialization.
    auto c1 = StageConfig::defaults(Stage::stage1);
    c1.iterations = 2000;
    p.stage1_config = c1;
    auto s1 = run_stage1(*p.prior, c1);
    p.stage1 = s1.published;
    const auto& m1 = s1.report.metrics;
    const double l1_init = m1.at("heldout_l1_initial"), l1_final = m1.at("heldout_l1_final");
    const double reduction = 1.0 - l1_final / l1_init;
    o.require(reduction >= 0.80, "stage I L1 reduction " + fmt(100 * reduction) + "% < 80%");
    o.require(frozen_ok(s1), "stage I frozen groups changed");
    o.detail << "stage I L1 " << fmt(l1_init) << " -> " << fmt(l1_final) << " (" << fmt(100 * reduction)
             << "%, EMA " << fmt(m1.at("heldout_l1_published")) << "); ";

    // Stage II ablation: identical seeds and steps, lambda_st 0 vs 0.5.
    auto c2 = StageConfig::defaults(Stage::stage2);
    c2.iterations = 400;
    c2.eval_samples = 64;
    auto c2_off = c2;
    c2_off.lambda_st = 0.0;
    auto s2_off = run_stage2(*p.stage1, c2_off, nullptr, style_faces());
    auto s2_on = run_stage2(*p.stage1, c2, nullptr, style_faces());
    const double arc_off = s2_off.report.metrics.at("heldout_arcface_final");
    const double arc_on = s2_on.report.metrics.at("heldout_arcface_final");
    o.require(arc_on < arc_off, "Arcface-Dist with lambda_st 0.5 not below lambda_st 0");
    o.require(frozen_ok(s2_on) && frozen_ok(s2_off), "stage II frozen groups changed");
    o.detail << "stage II Arcface " << fmt(arc_off) << " (0) vs " << fmt(arc_on) << " (0.5); ";

    // Mapper: held-out self-reconstruction loss decreases.
    auto cm = StageConfig::defaults(Stage::mapper);
    cm.iterations = 300;
    auto mp = run_mapper_stage(s2_on.published, cm, real_faces());
    const double map_init = mp.report.metrics.at("heldout_loss_initial");
    const double map_final = mp.report.metrics.at("heldout_loss_final");
    o.require(map_final < map_init, "mapper held-out loss did not decrease");
    o.require(frozen_ok(mp), "mapper frozen groups changed");
    o.detail << "mapper " << fmt(map_init) << " -> " << fmt(map_final) << "; ";

    // Guided fine-tuning, 200 steps each.
    const auto& models = mp.published;
    auto cz = StageConfig::defaults(Stage::finetune_zero);
    auto zero = finetune(models, cz, GuidancePrompt::from_text(*models.clip, "pop art"), real_faces());
    auto co = StageConfig::defaults(Stage::finetune_one);
    co.basis_tokens = 16;
    auto reference = style_faces().get(0).unsqueeze(0);
    auto one = finetune(models, co, GuidancePrompt::from_image(*models.clip, reference), real_faces());
    for (auto* r : {&zero, &one}) {
        const bool zero_shot = r == &zero;
        const double a = r->report.metrics.at("objective_initial"), b = r->report.metrics.at("objective_final");
        o.require(r->report.iterations == 200, "fine-tune did not run 200 steps");
        o.require(b < a, std::string(zero_shot ? "zero" : "one") + "-shot objective did not decrease");
        o.require(frozen_ok(*r), std::string(zero_shot ? "zero" : "one") + "-shot frozen groups changed");
        o.detail << (zero_shot ? "zero-shot " : "one-shot ") << fmt(a) << " -> " << fmt(b) << "; ";
    }

    const double elapsed = seconds_since(t0);
    o.require(elapsed <= 30 * 60, "runtime above 30 min");
    o.detail << "total " << static_cast<int>(elapsed) << " s";
    return o;
}

Outcome determinism_persistence(const Pipeline& p) {
    Outcome o;
    if (!p.prior) {
        o.require(false, "no prior available");
        return o;
    }
    auto c = p.stage1_config;
    c.iterations = 100;
    auto a = run_stage1(*p.prior, c), b = run_stage1(*p.prior, c);
    bool same = true;
    for (const auto& g : all_groups()) {
        same = same && a.online.group_hash(g) == b.online.group_hash(g) &&
               a.published.group_hash(g) == b.published.group_hash(g);
    }
    o.require(same, "two stage I runs gave different parameter hashes");
    o.detail << "encoder hash " << a.published.group_hash(kGroupEncoder).substr(0, 12) << "; ";

    Scratch scratch;
    const auto first = scratch.dir / "first", second = scratch.dir / "second";
    save_checkpoint(*p.stage1, first);
    save_checkpoint(load_checkpoint(first), second);
    o.require(snapshot_dir(first) == snapshot_dir(second), "save-load-save not byte-identical");
    o.detail << "save/load/save identical " << (snapshot_dir(first) == snapshot_dir(second) ? "yes" : "no") << "; ";

    // Flip one byte in the middle of the tensor blob.
    fs::path blob;
    for (const auto& e : fs::recursive_directory_iterator(first)) {
        if (e.is_regular_file() && e.path().filename() != kManifestName &&
            (blob.empty() || e.file_size() > fs::file_size(blob))) {
            blob = e.path();
        }
    }
    {
        std::fstream f(blob, std::ios::in | std::ios::out | std::ios::binary);
        const auto pos = static_cast<std::streamoff>(fs::file_size(blob) / 2);
        f.seekg(pos);
        char ch = 0;
        f.get(ch);
        f.seekp(pos);
        f.put(static_cast<char>(ch ^ 0x5A));
    }
    std::string named;
    try {
        load_checkpoint(first);
    } catch (const CorruptionError& e) {
        named = e.tensor();
    } catch (const std::exception& e) {
        o.require(false, std::string("corruption raised the wrong error: ") + e.what());
    }
    o.require(!named.empty(), "corrupted blob not rejected with a tensor name");
    o.detail << "corruption names '" << named << "'";
    return o;
}

std::vector<unsigned char> png(const torch::Tensor& t) { return encode_png(t); }

Outcome interpolation(const Pipeline& p) {
    Outcome o;
    auto m = p.stage1 ? *p.stage1 : ModelSet::create(ModelProfile::toy(), 0);
    m.eval();
    torch::NoGradGuard guard;
    auto face = real_faces().get(3).unsqueeze(0);
    auto wa = random_wplus(m, 101), wb = text_wplus(m, "watercolor painting");
    const std::vector<double> alphas{1.0, 0.8, 0.6, 0.4, 0.2, 0.0};
    std::vector<torch::Tensor> frames;
    for (double a : alphas) frames.push_back(m.stylize(face, interpolate_styles(wa, wb, a)));
    o.require(png(frames.front()) == png(m.stylize(face, wa)), "alpha 1 differs from style A");
    o.require(png(frames.back()) == png(m.stylize(face, wb)), "alpha 0 differs from style B");
    double min_l1 = 1e30;
    for (size_t i = 0; i < frames.size(); ++i) {
        for (size_t j = i + 1; j < frames.size(); ++j) {
            min_l1 = std::min(min_l1, (frames[i] - frames[j]).abs().mean().item<double>());
        }
    }
    o.require(min_l1 > 0.0, "two sweep frames are identical");
    o.detail << "endpoints byte-identical; min pairwise L1 " << fmt(min_l1);
    return o;
}

Outcome service_contract() {
    Outcome o;
    ServiceOptions so;
    so.finetune_iterations = 20;
    InferenceService service(ModelSet::create(ModelProfile::toy(), 5), so);
    auto face = base64_encode(png(real_faces().get(1).unsqueeze(0)));
    auto post = [&](const std::string& path, const json& body) { return service.handle("POST", path, body.dump()); };

    auto a = post("/stylize", {{"image", face}, {"mode", "random"}, {"seed", 3}});
    auto b = post("/stylize", {{"image", face}, {"mode", "random"}, {"seed", 3}});
    auto c = post("/stylize", {{"image", face}, {"mode", "random"}, {"seed", 4}});
    o.require(a.status == 200 && a.body == b.body, "/stylize not deterministic per seed");
    o.require(c.status == 200 && c.body.at("image") != a.body.at("image"), "/stylize ignores the seed");

    auto t = post("/stylize", {{"image", face}, {"mode", "text"}, {"prompt", "pop art"}});
    auto interp = post("/interpolate", {{"image", face},
                                        {"wplus_a", a.body.value("wplus_id", "")},
                                        {"wplus_b", t.body.value("wplus_id", "")},
                                        {"alphas", {1.0, 0.8, 0.6, 0.4, 0.2, 0.0}}});
    o.require(interp.status == 200 && interp.body.at("images").size() == 6, "/interpolate failed");
    if (interp.status == 200) {
        o.require(interp.body["images"][0] == a.body["image"] && interp.body["images"][5] == t.body["image"],
                  "/interpolate endpoints differ from single-style renders");
    }

    auto job = post("/finetune", {{"mode", "zero"}, {"prompt", "a cubism style painting"}});
    auto busy = post("/finetune", {{"mode", "zero"}, {"prompt", "pop art"}});
    o.require(job.status == 202, "/finetune not accepted");
    o.require(busy.status == 409, "second job on a busy model not rejected with 409");
    json record;
    const auto id = job.body.value("job_id", "");
    for (int i = 0; i < 12000 && job.status == 202; ++i) {
        record = service.handle("GET", "/jobs/" + id, "").body;
        if (record.at("status") == "done" || record.at("status") == "failed") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    o.require(record.value("status", "") == "done", "fine-tune job did not finish");
    if (record.value("status", "") == "done") {
        o.require(record.at("loss_trace").size() == 20, "loss trace length differs from iterations");
        const auto model = record.at("result_model_id").get<std::string>();
        auto s = post("/stylize", {{"image", face}, {"mode", "random"}, {"seed", 3}, {"model_id", model}});
        o.require(s.status == 200, "new model cannot stylize");
        o.detail << "job " << id << " -> " << model << "; ";
    }
    o.require(service.handle("GET", "/health", "").body.value("models", 0) == 2, "/health model count");
    o.detail << "determinism, endpoint identity, 409 exclusivity checked";
    return o;
}

} // namespace

int main() {
    torch::set_num_threads(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));
    int failures = 0;
    report("loss-math oracles", run_suite("test_loss_math", 60), failures);
    report("gradient checks", run_suite("test_gradients", 300), failures);
    report("architecture and shapes", run_suite("test_architecture", 600), failures);

    Pipeline pipeline;
    Outcome training;
    try {
        training = training_semantics(pipeline);
    } catch (const std::exception& e) {
        training.require(false, std::string("exception: ") + e.what());
    }
    report("training semantics", training, failures);

    auto guarded = [&](const std::string& name, auto&& fn) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
        }
        report(name, o, failures);
    };
    guarded("determinism and persistence", [&] { return determinism_persistence(pipeline); });
    guarded("interpolation", [&] { return interpolation(pipeline); });
    guarded("service contract", [&] { return service_contract(); });

    std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}

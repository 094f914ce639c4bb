#include "support.hpp"

#include "mmfs/cli.hpp"
#include "mmfs/config.hpp"
#include "mmfs/data.hpp"
#include "mmfs/guidance.hpp"
#include "mmfs/image_io.hpp"
#include "mmfs/models.hpp"
#include "mmfs/training.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

using namespace mmfs;
using namespace mmfs::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// A shared toy checkpoint marked as having a prior, plus an input face.
struct Workspace {
    TempDir dir{"cli"};
    fs::path checkpoint = dir / "ckpt";
    fs::path face = dir / "face.png";
    fs::path config = dir / "quick.json";
    ModelSet models;

    Workspace() {
        models = ModelSet::create(ModelProfile::toy(), 3);
        models.generator->prior_available = true;
        save_checkpoint(models, checkpoint);
        ProceduralFaces faces(2, 11, FaceStyle::photo, 64);
        write_png(face, faces.get(0).unsqueeze(0));
        std::ofstream(config) << R"({"iterations": 2, "batch_size": 2, "eval_samples": 4})";
    }
};

Workspace& ws() {
    static Workspace w;
    return w;
}

StageConfig quick(Stage stage) {
    auto c = StageConfig::defaults(stage);
    c.iterations = 2;
    c.batch_size = 2;
    c.eval_samples = 4;
    return c;
}

} // namespace

TEST_SUITE("cli usage") {
    TEST_CASE("no subcommand, unknown subcommand and missing options exit with 2") {
        CHECK(run({}).code == 2);
        CHECK(run({"paint"}).code == 2);
        auto r = run({"stylize", "--checkpoint", "x"});
        CHECK(r.code == 2);
        CHECK_FALSE(r.err.empty());
        CHECK(run({"interpolate", "--checkpoint", ws().checkpoint.string(), "--input", ws().face.string(), "--out",
                   (ws().dir / "s.png").string(), "--alphas", "1.0,1.2"})
                  .code == 2);
        CHECK(run({"finetune", "--checkpoint", ws().checkpoint.string(), "--out", (ws().dir / "ft-bad").string(), "--mode",
                   "three", "--prompt", "x"})
                  .code == 2);
    }

    TEST_CASE("help lists the subcommands and exits 0") {
        auto r = run({"--help"});
        CHECK(r.code == 0);
        for (const char* name : {"train-stage1", "train-stage2", "train-mapper", "finetune", "stylize", "interpolate", "eval",
                                 "export-grid", "serve"}) {
            CHECK(r.out.find(name) != std::string::npos);
        }
        auto sub = run({"stylize", "--help"});
        CHECK(sub.code == 0);
        CHECK(sub.out.find("--input") != std::string::npos);
    }

    TEST_CASE("runtime failures exit with 1") {
        auto r = run({"stylize", "--checkpoint", (ws().dir / "missing").string(), "--input", ws().face.string(), "--out",
                      (ws().dir / "x.png").string()});
        CHECK(r.code == 1);
        auto untrained = ModelSet::create(ModelProfile::toy(), 1);
        save_checkpoint(untrained, ws().dir / "untrained");
        CHECK(run({"train-stage1", "--checkpoint", (ws().dir / "untrained").string(), "--out",
                   (ws().dir / "s1-bad").string(), "--iterations", "1"})
                  .code == 1);
    }

    TEST_CASE("output must differ from the input checkpoint") {
        CHECK(run({"train-stage1", "--checkpoint", ws().checkpoint.string(), "--out", ws().checkpoint.string()}).code == 2);
    }
}

TEST_SUITE("cli data and inference") {
    TEST_CASE("synth-data writes the requested images") {
        TempDir tmp("synth");
        auto r = run({"--seed", "4", "synth-data", "--out", (tmp / "faces").string(), "--count", "3", "--style", "cartoon"});
        REQUIRE(r.code == 0);
        DirectoryImageSet set(tmp / "faces", 64);
        REQUIRE(set.size() == 3);
        CHECK(bit_equal(to_uint8_hwc(set.get(1)), to_uint8_hwc(ProceduralFaces(3, 4, FaceStyle::cartoon, 64).get(1))));
        CHECK(run({"synth-data", "--out", (tmp / "x").string(), "--style", "oil"}).code == 2);
    }

    TEST_CASE("stylize is deterministic and equals the library call") {
        auto& w = ws();
        const auto a = w.dir / "a.png", b = w.dir / "b.png";
        REQUIRE(run({"--seed", "7", "stylize", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out",
                     a.string()})
                    .code == 0);
        REQUIRE(run({"--seed", "7", "stylize", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out",
                     b.string()})
                    .code == 0);
        CHECK(slurp(a) == slurp(b));

        auto m = load_checkpoint(w.checkpoint);
        m.eval();
        torch::NoGradGuard guard;
        auto expected = m.stylize(load_image(w.face, 64), random_wplus(m, 7));
        auto png = encode_png(expected);
        CHECK(slurp(a) == std::string(png.begin(), png.end()));

        const auto t = w.dir / "t.png";
        REQUIRE(run({"stylize", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out", t.string(),
                     "--mode", "text", "--prompt", "pop art"})
                    .code == 0);
        auto text = encode_png(m.stylize(load_image(w.face, 64), text_wplus(m, "pop art")));
        CHECK(slurp(t) == std::string(text.begin(), text.end()));
        CHECK(run({"stylize", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out", t.string(),
                   "--mode", "text"})
                  .code == 2);
        REQUIRE(run({"stylize", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out", t.string(),
                     "--mode", "image", "--reference", w.face.string()})
                    .code == 0);
    }

    TEST_CASE("interpolate writes a six-frame strip whose end frames are the pure styles") {
        auto& w = ws();
        const auto strip = w.dir / "strip.png", frames = w.dir / "frames";
        auto r = run({"interpolate", "--checkpoint", w.checkpoint.string(), "--input", w.face.string(), "--out",
                      strip.string(), "--seed-a", "1", "--prompt-b", "pop art", "--frames-dir", frames.string()});
        REQUIRE(r.code == 0);
        auto img = read_image(strip);
        CHECK(img.sizes() == torch::IntArrayRef({1, 3, 64, 6 * 64}));
        auto m = load_checkpoint(w.checkpoint);
        m.eval();
        torch::NoGradGuard guard;
        auto first = encode_png(m.stylize(load_image(w.face, 64), random_wplus(m, 1)));
        auto last = encode_png(m.stylize(load_image(w.face, 64), text_wplus(m, "pop art")));
        CHECK(slurp(frames / "frame_0.png") == std::string(first.begin(), first.end()));
        CHECK(slurp(frames / "frame_5.png") == std::string(last.begin(), last.end()));
    }

    TEST_CASE("eval writes metrics with reference targets") {
        auto& w = ws();
        const auto out = w.dir / "metrics.json";
        REQUIRE(run({"eval", "--checkpoint", w.checkpoint.string(), "--samples", "4", "--out", out.string()}).code == 0);
        std::ifstream in(out);
        auto j = nlohmann::json::parse(in);
        for (const char* key : {"fid", "arcface_dist_mean", "lpips_mean"}) {
            CHECK(j.contains(key));
            CHECK(j.at("reference_targets").contains(key));
        }
        CHECK(j.at("reference_targets").at("fid").get<double>() == doctest::Approx(10.39));
        CHECK(run({"eval", "--checkpoint", w.checkpoint.string(), "--samples", "100000"}).code == 2);
    }

    TEST_CASE("export-grid lays out rows of inputs and stylizations") {
        auto& w = ws();
        const auto out = w.dir / "grid.png";
        REQUIRE(run({"export-grid", "--checkpoint", w.checkpoint.string(), "--out", out.string(), "--rows", "2", "--columns",
                     "3"})
                    .code == 0);
        CHECK(read_image(out).sizes() == torch::IntArrayRef({1, 3, 2 * 64, 4 * 64}));
    }
}

TEST_SUITE("cli training") {
    TEST_CASE("train-stage1 matches the library run") {
        auto& w = ws();
        const auto out = w.dir / "s1";
        auto r = run({"train-stage1", "--config", w.config.string(), "--checkpoint", w.checkpoint.string(), "--out",
                      out.string()});
        REQUIRE(r.code == 0);
        CHECK(fs::exists(out / "report.json"));
        CHECK(fs::exists(out / "history.jsonl"));
        auto lib = run_stage1(w.models, quick(Stage::stage1));
        auto saved = load_checkpoint(out);
        CHECK(saved.stage == "stage1");
        CHECK(saved.group_hash(kGroupEncoder) == lib.published.group_hash(kGroupEncoder));
    }

    TEST_CASE("train-stage2 and train-mapper run from a config") {
        auto& w = ws();
        const auto s2 = w.dir / "s2", mp = w.dir / "mapper";
        REQUIRE(run({"train-stage2", "--config", w.config.string(), "--checkpoint", w.checkpoint.string(), "--out",
                     s2.string(), "--lambda-st", "0"})
                    .code == 0);
        std::ifstream in(s2 / "history.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(in, line)) {
            auto c = nlohmann::json::parse(line).at("components");
            CHECK(c.at("g_total").get<double>() == doctest::Approx(c.at("adv").get<double>()));
            ++lines;
        }
        CHECK(lines == 2);
        REQUIRE(run({"train-mapper", "--config", w.config.string(), "--checkpoint", s2.string(), "--out", mp.string()})
                    .code == 0);
        CHECK(load_checkpoint(mp).stage == "mapper");
    }

    TEST_CASE("finetune writes a bundle equal to the library result") {
        auto& w = ws();
        const auto out = w.dir / "ft";
        auto r = run({"finetune", "--config", w.config.string(), "--checkpoint", w.checkpoint.string(), "--out",
                      out.string(), "--mode", "zero", "--prompt", "watercolor painting"});
        REQUIRE(r.code == 0);
        CHECK(fs::exists(out / "manifest.json"));
        auto config = quick(Stage::finetune_zero);
        ProceduralFaces real(kToySetSize, kToyRealSeed, FaceStyle::photo, 64);
        auto lib = finetune(w.models, config, GuidancePrompt::from_text(*w.models.clip, "watercolor painting"), real);
        auto saved = load_checkpoint(out);
        CHECK(saved.group_hash(kGroupDecoder) == lib.published.group_hash(kGroupDecoder));
        CHECK(saved.group_hash(kGroupEncoder) == w.models.group_hash(kGroupEncoder));
    }

    TEST_CASE("train-prior runs a single step") {
        const auto out = ws().dir / "prior";
        REQUIRE(run({"train-prior", "--config", ws().config.string(), "--out", out.string(), "--iterations", "1"}).code ==
                0);
        CHECK(load_checkpoint(out).generator->prior_available);
    }
}

// Training-loop contracts that hold at any step count: EMA algebra, freeze
// lists, loss bookkeeping and error paths. Trend checks over full runs live
// in the acceptance program.

#include "support.hpp"

#include "mmfs/errors.hpp"
#include "mmfs/generator.hpp"
#include "mmfs/training.hpp"

#include <fstream>

using namespace mmfs;
using namespace mmfs::testing;

namespace {

ModelSet toy_models(uint64_t seed = 0) {
    auto m = ModelSet::create(ModelProfile::toy(), seed);
    // An untrained prior is still a valid sampler for contract checks.
    m.generator->prior_available = true;
    return m;
}

StageConfig quick(Stage stage, int64_t iterations = 2) {
    auto c = StageConfig::defaults(stage);
    c.iterations = iterations;
    c.batch_size = 2;
    c.eval_samples = 4;
    return c;
}

const ProceduralFaces& real_faces() {
    static ProceduralFaces faces(24, kToyRealSeed, FaceStyle::photo, 64);
    return faces;
}

const ProceduralFaces& style_faces() {
    static ProceduralFaces faces(16, kToyStyleSeed, FaceStyle::cartoon, 64);
    return faces;
}

} // namespace

TEST_SUITE("ema") {
    TEST_CASE("single step from zero towards one") {
        std::vector<torch::Tensor> ema{torch::zeros({3}, torch::kDouble)};
        ema_update(ema, {torch::ones({3}, torch::kDouble)}, 0.99);
        CHECK(max_abs_diff(ema[0], torch::full({3}, 0.01, torch::kDouble)) < 1e-15);
    }

    TEST_CASE("decay one never changes the average") {
        std::vector<torch::Tensor> ema{torch::full({2}, 0.5)};
        for (int i = 0; i < 5; ++i) ema_update(ema, {torch::full({2}, 9.0)}, 1.0);
        CHECK(bit_equal(ema[0], torch::full({2}, 0.5)));
    }

    TEST_CASE("constant parameters follow the geometric closed form") {
        const double d = 0.97;
        auto theta0 = torch::randn({4, 4}, seeded(1), torch::kDouble);
        auto theta = torch::randn({4, 4}, seeded(2), torch::kDouble);
        std::vector<torch::Tensor> ema{theta0.clone()};
        for (int k = 1; k <= 100; ++k) {
            ema_update(ema, {theta}, d);
            if (k == 7 || k == 100) CHECK(max_abs_diff(ema[0], theta + (theta0 - theta) * std::pow(d, k)) <= 1e-10);
        }
    }

    TEST_CASE("mismatched inputs and decays are rejected") {
        std::vector<torch::Tensor> ema{torch::zeros({2})};
        CHECK_THROWS_AS(ema_update(ema, {}, 0.5), InvalidArgument);
        CHECK_THROWS_AS(ema_update(ema, {torch::zeros({3})}, 0.5), InvalidArgument);
        CHECK_THROWS_AS(ema_update(ema, {torch::zeros({2})}, 1.5), InvalidArgument);
    }

    TEST_CASE("tracker publishes its shadow into target modules") {
        auto src = torch::nn::Linear(3, 2);
        EmaTracker tracker({src.get()}, 0.5);
        const auto w0 = src->weight.detach().clone();
        {
            torch::NoGradGuard guard;
            src->weight.add_(2.0);
        }
        tracker.update();
        auto dst = torch::nn::Linear(3, 2);
        tracker.publish({dst.get()});
        CHECK(max_abs_diff(dst->weight, w0 + 1.0) < 1e-6);
    }
}

TEST_SUITE("stage 1") {
    TEST_CASE("needs a trained prior") {
        auto m = ModelSet::create(ModelProfile::toy(), 0);
        CHECK_THROWS_AS(run_stage1(m, quick(Stage::stage1)), UnavailableState);
    }

    TEST_CASE("zero learning rate leaves the encoder untouched") {
        auto m = toy_models();
        auto c = quick(Stage::stage1, 1);
        c.learning_rate = 0.0;
        auto r = run_stage1(m, c);
        CHECK(r.online.group_hash(kGroupEncoder) == m.group_hash(kGroupEncoder));
        CHECK(r.report.frozen_unchanged());
    }

    TEST_CASE("frozen prior stays byte-identical while the encoder moves") {
        auto m = toy_models();
        std::vector<int64_t> steps;
        auto r = run_stage1(m, quick(Stage::stage1, 3), [&](const LossRecord& rec) { steps.push_back(rec.step); });
        CHECK(steps == std::vector<int64_t>{0, 1, 2});
        for (const auto& g : {kGroupMapping, kGroupLow, kGroupDecoder, kGroupDiscriminator}) {
            CHECK(r.online.group_hash(g) == m.group_hash(g));
            CHECK(r.published.group_hash(g) == m.group_hash(g));
        }
        CHECK(r.online.group_hash(kGroupEncoder) != m.group_hash(kGroupEncoder));
        CHECK(r.report.frozen_unchanged());
        CHECK(r.report.history.size() == 3);
        CHECK(r.report.metrics.count("heldout_l1_initial") == 1);
        CHECK(r.report.metrics.count("heldout_l1_final") == 1);
        CHECK(r.online.stage == "stage1");
        // The input set is never modified.
        CHECK(m.stage == "init");
    }

    TEST_CASE("published snapshot carries the EMA encoder") {
        auto m = toy_models();
        auto r = run_stage1(m, quick(Stage::stage1, 2));
        CHECK(r.published.group_hash(kGroupEncoder) != r.online.group_hash(kGroupEncoder));
        auto c = quick(Stage::stage1, 2);
        c.ema_decay = 0.0;
        auto plain = run_stage1(m, c);
        CHECK(plain.published.group_hash(kGroupEncoder) == plain.online.group_hash(kGroupEncoder));
    }

    TEST_CASE("report serializes with history") {
        TempDir tmp("report");
        auto r = run_stage1(toy_models(), quick(Stage::stage1, 2));
        auto j = r.report.to_json();
        CHECK(j.at("stage") == "stage1");
        CHECK(j.at("frozen_unchanged") == true);
        CHECK(j.at("steps_recorded") == 2);
        r.report.write_history(tmp / "h" / "history.jsonl");
        std::ifstream in(tmp / "h" / "history.jsonl");
        std::string line;
        int lines = 0;
        while (std::getline(in, line)) {
            auto rec = nlohmann::json::parse(line);
            CHECK(rec.at("components").contains("l1"));
            ++lines;
        }
        CHECK(lines == 2);
    }

    TEST_CASE("invalid iteration counts are rejected") {
        auto c = quick(Stage::stage1);
        c.iterations = -1;
        CHECK_THROWS_AS(run_stage1(toy_models(), c), InvalidArgument);
    }
}

TEST_SUITE("stage 2") {
    TEST_CASE("zero structure weight makes the generator loss purely adversarial") {
        auto c = quick(Stage::stage2, 3);
        c.lambda_st = 0.0;
        auto r = run_stage2(toy_models(), c, &real_faces(), style_faces());
        for (const auto& rec : r.report.history) {
            CHECK(rec.components.at("g_total") == rec.components.at("adv"));
            CHECK(rec.components.at("structure") > 0.0);
        }
        CHECK(r.report.history[0].components.count("r1") == 1);
    }

    TEST_CASE("positive structure weight adds the weighted term") {
        auto c = quick(Stage::stage2, 2);
        c.lambda_st = 0.5;
        auto r = run_stage2(toy_models(), c, &real_faces(), style_faces());
        for (const auto& rec : r.report.history) {
            CHECK(rec.components.at("g_total") ==
                  doctest::Approx(rec.components.at("adv") + 0.5 * rec.components.at("structure")).epsilon(1e-5));
        }
    }

    TEST_CASE("freeze list holds and held-out metrics are reported") {
        auto m = toy_models();
        auto r = run_stage2(m, quick(Stage::stage2, 2), &real_faces(), style_faces());
        CHECK(r.report.frozen_unchanged());
        CHECK(r.online.group_hash(kGroupLow) == m.group_hash(kGroupLow));
        CHECK(r.online.group_hash(kGroupDecoder) != m.group_hash(kGroupDecoder));
        CHECK(r.online.group_hash(kGroupDiscriminator) != m.group_hash(kGroupDiscriminator));
        for (const char* key : {"heldout_arcface_initial", "heldout_arcface_final", "heldout_fid_initial",
                                "heldout_fid_final"}) {
            CHECK(r.report.metrics.count(key) == 1);
        }
    }

    TEST_CASE("prior stands in for real faces when none are given") {
        auto r = run_stage2(toy_models(), quick(Stage::stage2, 1), nullptr, style_faces());
        CHECK(r.report.history.size() == 1);
        auto untrained = ModelSet::create(ModelProfile::toy(), 0);
        CHECK_THROWS_AS(run_stage2(untrained, quick(Stage::stage2, 1), nullptr, style_faces()), UnavailableState);
    }

    TEST_CASE("mismatched dataset resolution is rejected") {
        ProceduralFaces small(4, 1, FaceStyle::cartoon, 32);
        CHECK_THROWS_AS(run_stage2(toy_models(), quick(Stage::stage2, 1), &real_faces(), small), InvalidArgument);
    }
}

TEST_SUITE("mapper stage") {
    TEST_CASE("initial held-out loss equals the standalone loss") {
        auto m = toy_models();
        m.mapper->init_head(m.generator->mean_w());
        auto c = quick(Stage::mapper, 1);
        auto r = run_mapper_stage(m, c, real_faces());
        std::vector<int64_t> idx{0, 1, 2, 3};
        auto z = sample_z(4, c.seed + 0x5EED0000ull, m.profile.z_dim);
        torch::NoGradGuard guard;
        const double standalone =
            mapper_reconstruction_loss(real_faces().gather(idx), z, m, c.lambda_perc).total.item<double>();
        CHECK(r.report.metrics.at("heldout_loss_initial") == doctest::Approx(standalone).epsilon(1e-6));
    }

    TEST_CASE("zero head is initialized to the mean style and only the mapper trains") {
        auto m = toy_models();
        auto r = run_mapper_stage(m, quick(Stage::mapper, 2), real_faces());
        CHECK(r.report.frozen_unchanged());
        for (const auto& g : {kGroupEncoder, kGroupMapping, kGroupLow, kGroupDecoder, kGroupDiscriminator}) {
            CHECK(r.online.group_hash(g) == m.group_hash(g));
        }
        CHECK(r.online.group_hash(kGroupMapper) != m.group_hash(kGroupMapper));
    }

    TEST_CASE("perfect inversion gives zero loss and the loss is never negative") {
        auto m = toy_models();
        auto z = sample_z(2, 3, m.profile.z_dim);
        // A mapper that returns exactly w(z) for every input.
        torch::NoGradGuard guard;
        auto w = m.generator->map(z);
        m.mapper->init_head(w[0]);
        auto faces = real_faces().gather({0});
        auto one = z.narrow(0, 0, 1);
        CHECK(mapper_reconstruction_loss(faces, one, m).total.item<double>() == doctest::Approx(0.0));
        CHECK(mapper_reconstruction_loss(real_faces().gather({0, 1}), z, m).total.item<double>() >= 0.0);
    }
}

TEST_SUITE("guided fine-tuning") {
    TEST_CASE("zero-shot text prompt trains only the decoder") {
        auto m = toy_models();
        auto prompt = GuidancePrompt::from_text(*m.clip, "a cubism style painting");
        auto r = finetune(m, quick(Stage::finetune_zero, 2), prompt, real_faces());
        for (const auto& g : {kGroupEncoder, kGroupMapper, kGroupDiscriminator, kGroupMapping, kGroupLow}) {
            CHECK(r.online.group_hash(g) == m.group_hash(g));
        }
        CHECK(r.online.group_hash(kGroupDecoder) != m.group_hash(kGroupDecoder));
        CHECK(r.report.frozen_unchanged());
        CHECK(r.report.history.back().components.count("projection") == 0);
        CHECK(r.report.metrics.count("objective_initial") == 1);
        CHECK(r.report.metrics.count("objective_final") == 1);
    }

    TEST_CASE("one-shot prompt adds the projection term and flags a complete basis") {
        auto m = toy_models();
        auto prompt = GuidancePrompt::from_image(*m.clip, style_faces().get(0).unsqueeze(0));
        auto full = finetune(m, quick(Stage::finetune_one, 1), prompt, real_faces());
        CHECK(full.report.history.back().components.count("projection") == 1);
        CHECK(full.report.warnings.size() == 1);
        auto c = quick(Stage::finetune_one, 1);
        c.basis_tokens = 16;
        auto partial = finetune(m, c, prompt, real_faces());
        CHECK(partial.report.warnings.empty());
        CHECK(partial.report.history.back().components.at("projection") > 0.0);
    }

    TEST_CASE("objective terms combine as documented") {
        auto m = toy_models();
        auto prompt = GuidancePrompt::from_image(*m.clip, style_faces().get(1).unsqueeze(0));
        auto c = quick(Stage::finetune_one, 2);
        c.basis_tokens = 16;
        c.lambda_c = 0.7;
        c.lambda_proj = 0.3;
        auto r = finetune(m, c, prompt, real_faces());
        for (const auto& rec : r.report.history) {
            const auto& k = rec.components;
            CHECK(k.at("total") == doctest::Approx(k.at("structure") + 0.7 * k.at("directional") +
                                                   0.3 * k.at("projection"))
                                       .epsilon(1e-5));
        }
    }
}

TEST_SUITE("guidance objective") {
    auto m = toy_models();

    TEST_CASE("identical images with parallel directions give zero") {
        auto prompt = GuidancePrompt::from_text(*m.clip, "pop art");
        GuidanceObjective obj(prompt, {}, *m.clip, *m.dino);
        auto real = real_faces().gather({0, 1});
        auto e = m.clip->embed_image(real);
        obj.image_anchor_override = e - (prompt.embedding - m.clip->embed_text("photo"));
        auto t = obj.zero_shot(real, real);
        CHECK(t.structure.item<double>() == doctest::Approx(0.0));
        CHECK(t.directional.item<double>() == doctest::Approx(0.0).epsilon(1e-5));
    }

    TEST_CASE("zero directional weight reduces to the structure loss") {
        GuidanceSettings s;
        s.lambda_c = 0.0;
        GuidanceObjective obj(GuidancePrompt::from_text(*m.clip, "watercolor painting"), s, *m.clip, *m.dino);
        auto real = real_faces().gather({0, 1}), fake = style_faces().gather({0, 1});
        auto t = obj.zero_shot(real, fake);
        CHECK(t.total.item<double>() == structure_loss(fake, real, *m.dino).item<double>());
    }

    TEST_CASE("zero projection weight equals the zero-shot objective") {
        GuidanceSettings s;
        s.lambda_proj = 0.0;
        s.basis_tokens = 16;
        GuidanceObjective obj(GuidancePrompt::from_image(*m.clip, style_faces().get(2).unsqueeze(0)), s, *m.clip,
                              *m.dino);
        auto real = real_faces().gather({2, 3}), fake = style_faces().gather({3, 4});
        CHECK(obj.one_shot(real, fake).total.item<double>() ==
              doctest::Approx(obj.zero_shot(real, fake).total.item<double>()).epsilon(1e-7));
    }

    TEST_CASE("reference tokens lie in their own span") {
        GuidanceSettings s;
        s.basis_tokens = 16;
        auto ref = style_faces().get(5).unsqueeze(0);
        GuidanceObjective obj(GuidancePrompt::from_image(*m.clip, ref), s, *m.clip, *m.dino);
        CHECK_FALSE(obj.projection_vacuous());
        auto basis_tokens = subsample_tokens(m.clip->tokens(ref, s.token_layer), 16);
        const double residual = projection_loss(*obj.basis(), basis_tokens).item<double>();
        CHECK(residual <= 1e-5 * basis_tokens.abs().sum().item<double>());
        auto other = subsample_tokens(m.clip->tokens(real_faces().gather({0}), s.token_layer), 16);
        CHECK(projection_loss(*obj.basis(), other).item<double>() > 1e3 * residual);
    }

    TEST_CASE("component-sum oracle") {
        GuidanceSettings s;
        s.basis_tokens = 8;
        s.lambda_c = 2.0;
        s.lambda_proj = 0.25;
        auto ref = style_faces().get(6).unsqueeze(0);
        auto prompt = GuidancePrompt::from_image(*m.clip, ref);
        GuidanceObjective obj(prompt, s, *m.clip, *m.dino);
        auto real = real_faces().gather({4, 5}), fake = style_faces().gather({7, 8});
        auto t = obj.one_shot(real, fake);
        const double st = structure_loss(fake, real, *m.dino).item<double>();
        const double dir =
            directional_loss(m.clip->embed_image(fake), m.clip->embed_image(real), prompt.embedding, m.clip->embed_image(real))
                .item<double>();
        auto basis = build_token_basis(subsample_tokens(m.clip->tokens(ref, s.token_layer).squeeze(0), 8));
        const double proj = projection_loss(basis, m.clip->tokens(fake, s.token_layer)).item<double>();
        CHECK(t.total.item<double>() == doctest::Approx(st + 2.0 * dir + 0.25 * proj).epsilon(1e-6));
        CHECK(t.directional.item<double>() >= 0.0);
        CHECK(t.directional.item<double>() <= 2.0);
    }

    TEST_CASE("text prompts cannot use the one-shot objective") {
        GuidanceObjective obj(GuidancePrompt::from_text(*m.clip, "pop art"), {}, *m.clip, *m.dino);
        auto real = real_faces().gather({0});
        CHECK_THROWS_AS(obj.one_shot(real, real), InvalidArgument);
    }
}

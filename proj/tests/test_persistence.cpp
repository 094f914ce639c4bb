#include "support.hpp"

#include "mmfs/bundle.hpp"
#include "mmfs/config.hpp"
#include "mmfs/errors.hpp"
#include "mmfs/generator.hpp"
#include "mmfs/models.hpp"
#include "mmfs/util.hpp"

#include <fstream>
#include <iterator>

using namespace mmfs;
using namespace mmfs::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

nlohmann::json manifest_of(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / kManifestName)); }

TensorBundle sample_bundle() {
    TensorBundle b;
    b.kind = "test";
    b.config = {{"answer", 42}};
    b.tensors["alpha"] = torch::arange(6, torch::kFloat).view({2, 3});
    b.tensors["beta.weight"] = torch::randn({4, 4}, seeded(1));
    b.tensors["gamma"] = torch::full({1}, -1.5);
    return b;
}

} // namespace

TEST_SUITE("tensor bundle") {
    TEST_CASE("write then read restores names, shapes and values") {
        TempDir tmp("bundle");
        auto b = sample_bundle();
        write_bundle(tmp / "b", b);
        auto r = read_bundle(tmp / "b");
        CHECK(r.kind == "test");
        CHECK(r.config.at("answer") == 42);
        REQUIRE(r.tensors.size() == 3);
        for (const auto& [name, t] : b.tensors) CHECK(bit_equal(r.tensors.at(name), t));
    }

    TEST_CASE("writing is canonical") {
        TempDir tmp("bundle-canon");
        write_bundle(tmp / "a", sample_bundle());
        write_bundle(tmp / "b", read_bundle(tmp / "a"));
        CHECK(slurp(tmp / "a" / kManifestName) == slurp(tmp / "b" / kManifestName));
        CHECK(slurp(tmp / "a" / kBlobName) == slurp(tmp / "b" / kBlobName));
    }

    TEST_CASE("manifest entries carry offsets, lengths and checksums") {
        TempDir tmp("bundle-manifest");
        write_bundle(tmp / "b", sample_bundle());
        auto m = manifest_of(tmp / "b");
        CHECK(m.at("format_version") == kBundleFormatVersion);
        const auto blob = slurp(tmp / "b" / kBlobName);
        for (const auto& [name, e] : m.at("tensors").items()) {
            const auto off = e.at("byte_offset").get<size_t>(), len = e.at("byte_length").get<size_t>();
            CHECK(e.at("dtype") == "f32");
            CHECK(sha256_hex(std::string_view(blob).substr(off, len)) == e.at("checksum").get<std::string>());
        }
    }

    TEST_CASE("flipped blob byte is reported as corruption of the named tensor") {
        TempDir tmp("bundle-flip");
        write_bundle(tmp / "b", sample_bundle());
        auto m = manifest_of(tmp / "b");
        const auto off = m["tensors"]["beta.weight"]["byte_offset"].get<size_t>();
        auto blob = slurp(tmp / "b" / kBlobName);
        blob[off + 5] = static_cast<char>(blob[off + 5] ^ 0x10);
        spit(tmp / "b" / kBlobName, blob);
        try {
            read_bundle(tmp / "b");
            FAIL("corrupted bundle was accepted");
        } catch (const CorruptionError& e) {
            CHECK(e.tensor() == "beta.weight");
            CHECK(std::string(e.what()).find("beta.weight") != std::string::npos);
        }
    }

    TEST_CASE("truncated blob, bad JSON and future versions are rejected") {
        TempDir tmp("bundle-bad");
        write_bundle(tmp / "b", sample_bundle());
        auto manifest = slurp(tmp / "b" / kManifestName);
        auto blob = slurp(tmp / "b" / kBlobName);

        spit(tmp / "b" / kBlobName, blob.substr(0, blob.size() - 3));
        CHECK_THROWS_AS(read_bundle(tmp / "b"), FormatError);
        spit(tmp / "b" / kBlobName, blob);

        spit(tmp / "b" / kManifestName, "{not json");
        CHECK_THROWS_AS(read_bundle(tmp / "b"), FormatError);

        auto m = nlohmann::json::parse(manifest);
        m["format_version"] = kBundleFormatVersion + 1;
        spit(tmp / "b" / kManifestName, m.dump());
        CHECK_THROWS_AS(read_bundle(tmp / "b"), MigrationError);

        CHECK_THROWS_AS(read_bundle(tmp / "missing"), FormatError);
    }

    TEST_CASE("entry pointing outside the bundle is rejected") {
        TempDir tmp("bundle-escape");
        write_bundle(tmp / "b", sample_bundle());
        auto m = manifest_of(tmp / "b");
        m["tensors"]["alpha"]["file"] = "../elsewhere.bin";
        spit(tmp / "b" / kManifestName, m.dump());
        CHECK_THROWS_AS(read_bundle(tmp / "b"), FormatError);
    }

    TEST_CASE("module loading names missing and mis-shaped tensors") {
        auto net = with_seed(1, [] { return MappingNetwork(8, 8, 2, 0.01); });
        TensorBundle b;
        add_module(b, "map", *net);
        auto full = b;
        b.tensors.erase("map.fc.1.bias");
        auto other = with_seed(2, [] { return MappingNetwork(8, 8, 2, 0.01); });
        try {
            load_module(b, "map", *other);
            FAIL("missing tensor accepted");
        } catch (const FormatError& e) {
            CHECK(e.tensor() == "map.fc.1.bias");
        }
        full.tensors["map.fc.0.weight"] = torch::zeros({3, 3});
        CHECK_THROWS_AS(load_module(full, "map", *other), FormatError);
    }
}

TEST_SUITE("checkpoint") {
    TEST_CASE("save, load, save is byte identical and outputs are reproduced exactly") {
        TempDir tmp("ckpt");
        auto m = ModelSet::create(ModelProfile::toy(), 3);
        m.generator->prior_available = true;
        m.stage = "stage1";
        save_checkpoint(m, tmp / "a");
        auto img = torch::rand({2, 3, 64, 64}, seeded(1)) * 2 - 1;
        torch::Tensor recorded;
        {
            torch::NoGradGuard guard;
            recorded = m.stylize(img, random_wplus(m, 5));
        }
        auto loaded = load_checkpoint(tmp / "a");
        save_checkpoint(loaded, tmp / "b");
        CHECK(slurp(tmp / "a" / kManifestName) == slurp(tmp / "b" / kManifestName));
        CHECK(slurp(tmp / "a" / kBlobName) == slurp(tmp / "b" / kBlobName));
        CHECK(loaded.stage == "stage1");
        CHECK(loaded.seed == 3);
        CHECK(loaded.generator->prior_available);
        torch::NoGradGuard guard;
        CHECK(bit_equal(loaded.stylize(img, random_wplus(loaded, 5)), recorded));
        CHECK(bit_equal(loaded.clip->embed_text("pop art"), m.clip->embed_text("pop art")));
        for (const auto& g : all_groups()) CHECK(loaded.group_hash(g) == m.group_hash(g));
    }

    TEST_CASE("corrupted checkpoint blob is rejected with the tensor name") {
        TempDir tmp("ckpt-corrupt");
        auto m = ModelSet::create(ModelProfile::toy(), 0);
        save_checkpoint(m, tmp / "a");
        auto manifest = manifest_of(tmp / "a");
        std::string target;
        size_t off = 0;
        for (const auto& [name, e] : manifest.at("tensors").items()) {
            if (name.rfind("encoder.", 0) == 0) {
                target = name;
                off = e.at("byte_offset").get<size_t>();
                break;
            }
        }
        REQUIRE_FALSE(target.empty());
        auto blob = slurp(tmp / "a" / kBlobName);
        blob[off] = static_cast<char>(~blob[off]);
        spit(tmp / "a" / kBlobName, blob);
        try {
            load_checkpoint(tmp / "a");
            FAIL("corrupted checkpoint accepted");
        } catch (const CorruptionError& e) {
            CHECK(e.tensor() == target);
        }
    }

    TEST_CASE("manifest echoes the profile and networks") {
        TempDir tmp("ckpt-config");
        save_checkpoint(ModelSet::create(ModelProfile::toy(), 0), tmp / "a");
        auto cfg = manifest_of(tmp / "a").at("config");
        CHECK(cfg.at("profile").at("name") == "toy");
        CHECK(cfg.contains("networks"));
        CHECK(manifest_of(tmp / "a").at("kind") == "mmfs-models");
    }

    TEST_CASE("clone is deep") {
        auto m = ModelSet::create(ModelProfile::toy(), 1);
        auto c = m.clone();
        const auto before = m.group_hash(kGroupDecoder);
        {
            torch::NoGradGuard guard;
            for (auto& p : c.generator->decoder->parameters()) p.add_(1.0);
        }
        CHECK(m.group_hash(kGroupDecoder) == before);
        CHECK(c.group_hash(kGroupDecoder) != before);
    }
}

TEST_SUITE("run config") {
    TEST_CASE("per-stage defaults") {
        auto s1 = StageConfig::defaults(Stage::stage1);
        CHECK(s1.iterations == 10000);
        CHECK(s1.learning_rate == 0.001);
        CHECK(s1.adam_beta1 == 0.1);
        CHECK(s1.ema_decay == 0.999);
        CHECK(s1.batch_size == 8);
        auto s2 = StageConfig::defaults(Stage::stage2);
        CHECK(s2.iterations == 90000);
        CHECK(s2.lambda_st == 0.5);
        auto mp = StageConfig::defaults(Stage::mapper);
        CHECK(mp.iterations == 60000);
        CHECK(mp.learning_rate == 0.0002);
        CHECK(mp.adam_beta1 == 0.9);
        CHECK(mp.ema_decay == 0.999);
        for (auto st : {Stage::finetune_zero, Stage::finetune_one}) {
            auto ft = StageConfig::defaults(st);
            CHECK(ft.iterations == 200);
            CHECK(ft.learning_rate == 0.0002);
            CHECK(ft.adam_beta1 == 0.9);
            CHECK(ft.ema_decay == 0.99);
        }
    }

    TEST_CASE("parsing applies overrides on top of stage defaults") {
        auto rc = parse_run_config({{"stage", "mapper"}, {"iterations", 12}, {"lambda_perc", 2.5}, {"profile", "toy"}},
                                   Stage::stage1);
        CHECK(rc.stage.stage == Stage::mapper);
        CHECK(rc.stage.iterations == 12);
        CHECK(rc.stage.lambda_perc == 2.5);
        CHECK(rc.stage.learning_rate == 0.0002);
        CHECK(rc.profile == "toy");
    }

    TEST_CASE("unknown keys, groups and ranges are rejected") {
        CHECK_THROWS_AS(parse_run_config({{"iteration", 5}}, Stage::stage1), InvalidArgument);
        CHECK_THROWS_AS(parse_run_config({{"frozen_groups", {"nope"}}}, Stage::stage1), InvalidArgument);
        CHECK_THROWS_AS(parse_run_config({{"ema_decay", 1.5}}, Stage::stage1), InvalidArgument);
        CHECK_THROWS_AS(parse_run_config({{"iterations", "ten"}}, Stage::stage1), InvalidArgument);
        CHECK_THROWS_AS(parse_run_config(nlohmann::json::array(), Stage::stage1), InvalidArgument);
        CHECK_THROWS_AS(stage_from_string("stage9"), InvalidArgument);
    }

    TEST_CASE("config files load from disk") {
        TempDir tmp("config");
        std::ofstream(tmp / "c.json") << R"({"iterations": 3, "seed": 9})";
        auto rc = load_run_config((tmp / "c.json").string(), Stage::stage2);
        CHECK(rc.stage.iterations == 3);
        CHECK(rc.stage.seed == 9);
        CHECK(rc.stage.lambda_st == 0.5);
        std::ofstream(tmp / "bad.json") << "{";
        CHECK_THROWS_AS(load_run_config((tmp / "bad.json").string(), Stage::stage2), InvalidArgument);
    }

    TEST_CASE("stages round-trip through their names") {
        for (auto st : {Stage::prior, Stage::stage1, Stage::stage2, Stage::mapper, Stage::finetune_zero,
                        Stage::finetune_one}) {
            CHECK(stage_from_string(to_string(st)) == st);
        }
    }
}

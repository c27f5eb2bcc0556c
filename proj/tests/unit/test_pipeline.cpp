#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lcomp/pipeline.hpp"
#include "lcomp/rng.hpp"

using namespace lcomp;

namespace {

constexpr size_t D = kCanvas * kCanvas, H = 32, DT = 8;

DenoiserModel bench_model(size_t d_c, uint64_t seed) {
    Rng rng(seed);
    DenoiserModel m = DenoiserModel::zeros(D, H, DT, d_c);
    const float s1 = 1.0f / std::sqrt(static_cast<float>(m.input_dim()));
    const float s2 = 1.0f / std::sqrt(static_cast<float>(H));
    m.layer1 = Tensor::gaussian(m.layer1.shape, rng, s1);
    m.layer2 = Tensor::gaussian(m.layer2.shape, rng, s2);
    return m;
}

LoraAdapter bench_adapter(const DenoiserModel& m, const ElementSpec& e, uint64_t seed) {
    Rng rng(seed);
    LoraAdapter a;
    a.name = e.id;
    a.category = e.category;
    a.trigger_phrase = e.trigger_phrase;
    a.rank = 2;
    a.weight_scale = 0.8f;
    a.deltas["layer1"] = {Tensor::gaussian({m.h, 2}, rng, 0.05f),
                          Tensor::gaussian({2, m.input_dim()}, rng, 0.05f)};
    a.deltas["layer2"] = {Tensor::gaussian({m.d, 2}, rng, 0.05f),
                          Tensor::gaussian({2, m.h}, rng, 0.05f)};
    return a;
}

}  // namespace

TEST_CASE("generation is seed-deterministic with a content-stable manifest") {
    const Catalog cat = build_catalog();
    const auto vocab = cat.vocab();
    const DenoiserModel m = bench_model(vocab.size(), 1);
    const std::vector<LoraAdapter> ads = {
        bench_adapter(m, cat.find("realistic-character-0"), 2)};
    const Tensor cond = embed_condition({"captain aria"}, vocab);

    GenerateConfig gc;
    gc.sampler.steps = 4;
    gc.sampler.seed = 9;
    const GenerateResult a = generate(m, ads, cond, gc, "setA");
    const GenerateResult b = generate(m, ads, cond, gc, "setA");
    CHECK(a.image.data == b.image.data);
    CHECK(a.manifest == b.manifest);
    CHECK(a.manifest.at("image_hash") == b.manifest.at("image_hash"));
    CHECK(a.manifest.at("strategy") == "merge");
    CHECK(a.manifest.at("seed") == 9);
    CHECK(a.manifest.at("composition_set") == "setA");

    GenerateConfig other = gc;
    other.sampler.seed = 10;
    const GenerateResult c = generate(m, ads, cond, other);
    CHECK(a.image.data != c.image.data);
    CHECK(a.manifest.at("image_hash") != c.manifest.at("image_hash"));
}

TEST_CASE("generated pixels stay inside the unit interval") {
    const Catalog cat = build_catalog();
    const auto vocab = cat.vocab();
    const DenoiserModel m = bench_model(vocab.size(), 11);
    const std::vector<LoraAdapter> ads = {
        bench_adapter(m, cat.find("anime-character-0"), 12),
        bench_adapter(m, cat.find("anime-object-0"), 13)};
    const Tensor cond = embed_condition({"moon princess", "magic lantern"}, vocab);

    for (Strategy s : {Strategy::Merge, Strategy::Switch, Strategy::Composite}) {
        GenerateConfig gc;
        gc.composition.strategy = s;
        gc.sampler.steps = 4;
        const GenerateResult r = generate(m, ads, cond, gc);
        CHECK(r.image.finite());
        for (float v : r.image.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("single-adapter strategies produce matching images") {
    const Catalog cat = build_catalog();
    const auto vocab = cat.vocab();
    const DenoiserModel m = bench_model(vocab.size(), 21);
    const std::vector<LoraAdapter> ads = {
        bench_adapter(m, cat.find("realistic-object-0"), 22)};
    const Tensor cond = embed_condition({"red umbrella"}, vocab);

    GenerateConfig merge;
    merge.sampler.steps = 4;
    const Tensor base_img = generate(m, ads, cond, merge).image;
    for (Strategy s : {Strategy::Switch, Strategy::Composite}) {
        GenerateConfig gc = merge;
        gc.composition.strategy = s;
        const Tensor img = generate(m, ads, cond, gc).image;
        for (size_t i = 0; i < img.data.size(); ++i)
            CHECK(std::abs(img.data[i] - base_img.data[i]) <= 1e-5f);
    }
}

TEST_CASE("persisted sidecar restores the image bit-exactly") {
    const Catalog cat = build_catalog();
    const auto vocab = cat.vocab();
    const DenoiserModel m = bench_model(vocab.size(), 31);
    const std::vector<LoraAdapter> ads = {
        bench_adapter(m, cat.find("realistic-character-1"), 32)};
    const Tensor cond = embed_condition({"old fisherman"}, vocab);

    GenerateConfig gc;
    gc.sampler.steps = 4;
    const GenerateResult r = generate(m, ads, cond, gc, "persist-test");

    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "lcomp_persist_test").string();
    fs::remove_all(dir);
    persist_generation(dir, "sample", r);
    CHECK(fs::exists(fs::path(dir) / "sample.png"));
    CHECK(fs::exists(fs::path(dir) / "sample.manifest.json"));

    const Container c = read_container((fs::path(dir) / "sample.f32").string());
    REQUIRE(c.payloads.size() == 1);
    CHECK(c.payloads[0].data == r.image.data);

    std::ifstream mf(fs::path(dir) / "sample.manifest.json");
    const nlohmann::json manifest = nlohmann::json::parse(mf);
    CHECK(manifest.at("image_hash") == r.manifest.at("image_hash"));
    CHECK(manifest.at("outputs").size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("synthetic corpora are deterministic and well-shaped") {
    const Catalog cat = build_catalog();
    const auto a = make_base_corpus(cat, 12, 5);
    const auto b = make_base_corpus(cat, 12, 5);
    REQUIRE(a.size() == 12);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].z0.data == b[i].z0.data);
        CHECK(a[i].cond.data == b[i].cond.data);
        CHECK(a[i].z0.numel() == kCanvas * kCanvas);
        CHECK(a[i].cond.numel() == cat.vocab().size());
        // at least the character trigger is set
        float total = 0;
        for (float v : a[i].cond.data) total += v;
        CHECK(total >= 1.0f);
    }
    const auto ds = make_element_dataset(cat, cat.find("anime-style-1"), 6, 7);
    REQUIRE(ds.size() == 6);
    for (const auto& s : ds) {
        float total = 0;
        for (float v : s.cond.data) total += v;
        CHECK(total == 1.0f);
    }
}

TEST_CASE("report CSV round trips") {
    std::vector<BenchReportRow> rows = {
        {2, "switch-vs-merge", "composition", 50.0, 25.0, 25.0, 7.25, 6.75},
        {2, "switch-vs-merge", "image", 40.0, 30.0, 30.0, 8.0, 8.0},
        {3, "composite-vs-merge", "composition", 62.5, 12.5, 25.0, 7.0, 6.0},
    };
    const std::string csv = report_csv(rows);
    CHECK(csv.rfind("k,method_pair,dimension,win_pct,tie_pct,lose_pct,mean_a,mean_b\n", 0) == 0);
    const auto back = parse_report_csv(csv);
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].k == rows[i].k);
        CHECK(back[i].method_pair == rows[i].method_pair);
        CHECK(back[i].dimension == rows[i].dimension);
        CHECK(back[i].win_pct == doctest::Approx(rows[i].win_pct));
        CHECK(back[i].mean_b == doctest::Approx(rows[i].mean_b));
    }
    CHECK_THROWS_AS(parse_report_csv(""), ParseError);
    CHECK_THROWS_AS(parse_report_csv("bogus,header\n1,2\n"), ParseError);
    CHECK_THROWS_AS(parse_report_csv(
                        "k,method_pair,dimension,win_pct,tie_pct,lose_pct,mean_a,mean_b\n1,a\n"),
                    ParseError);
    const std::string rendered = render_report(rows);
    CHECK(rendered.find("== k = 2 ==") != std::string::npos);
    CHECK(rendered.find("switch-vs-merge") != std::string::npos);
}

TEST_CASE("benchmark covers every set, method, and seed") {
    const Catalog cat = build_catalog();
    const auto vocab = cat.vocab();
    const DenoiserModel m = bench_model(vocab.size(), 41);
    std::map<std::string, LoraAdapter> adapters;
    uint64_t seed = 100;
    for (const auto& e : cat.elements) adapters[e.id] = bench_adapter(m, e, seed++);

    BenchOptions opt;
    opt.k_min = 2;
    opt.k_max = 2;
    opt.seeds = {1, 2};
    opt.steps = 2;
    opt.max_sets_per_k = 4;
    const BenchResult r = run_benchmark(m, adapters, cat, opt);
    CHECK(r.failures == 0);
    // 4 sets x 2 seeds x (merge + 2 methods)
    CHECK(r.images_generated == 4 * 2 * 3);
    // per k: 2 methods x 2 dimensions
    REQUIRE(r.rows.size() == 4);
    for (const auto& row : r.rows) {
        CHECK(row.k == 2);
        CHECK(row.win_pct + row.tie_pct + row.lose_pct == doctest::Approx(100.0));
        CHECK((row.method_pair == "switch-vs-merge" || row.method_pair == "composite-vs-merge"));
    }
}

TEST_CASE("benchmark records missing-adapter failures and continues") {
    const Catalog cat = build_catalog();
    const DenoiserModel m = bench_model(cat.vocab().size(), 51);
    std::map<std::string, LoraAdapter> adapters;
    uint64_t seed = 200;
    for (const auto& e : cat.elements)
        if (e.style_subset == StyleSubset::Realistic) adapters[e.id] = bench_adapter(m, e, seed++);

    BenchOptions opt;
    opt.k_min = 2;
    opt.k_max = 2;
    opt.seeds = {1};
    opt.steps = 2;
    opt.max_sets_per_k = 0;
    const BenchResult r = run_benchmark(m, adapters, cat, opt);
    CHECK(r.failures == 24);  // the anime half has no adapters
    CHECK(r.failure_notes.size() == 24);
    CHECK(!r.rows.empty());
}

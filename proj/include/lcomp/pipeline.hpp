#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcomp/composition.hpp"
#include "lcomp/container.hpp"
#include "lcomp/denoiser.hpp"
#include "lcomp/diffusion.hpp"
#include "lcomp/errors.hpp"
#include "lcomp/hash.hpp"
#include "lcomp/judge.hpp"
#include "lcomp/png.hpp"
#include "lcomp/testbed.hpp"
#include "lcomp/trainer.hpp"

namespace lcomp {

struct ScheduleConfig {
    size_t T = 200;
    double beta_start = 1e-4;
    double beta_end = 2e-2;

    NoiseSchedule build() const { return build_schedule(T, beta_start, beta_end); }
};

struct GenerateConfig {
    CompositionConfig composition;
    GuidanceConfig guidance;
    SamplerConfig sampler;
    ScheduleConfig schedule;
};

struct GenerateResult {
    Tensor image;  // [d], clamped to [0,1]
    nlohmann::json manifest;
};

namespace detail {

inline nlohmann::json tau_schedule_json(const TauSchedule& s) {
    const char* kind = s.kind == TauScheduleKind::Fixed          ? "fixed"
                       : s.kind == TauScheduleKind::Incremental ? "incremental"
                       : s.kind == TauScheduleKind::Decremental ? "decremental"
                                                                 : "warmup";
    return {{"kind", kind}, {"from", s.tau_from}, {"to", s.tau_to}};
}

inline std::string image_hash(const Tensor& image) {
    return fnv1a64_hex(
        std::string(reinterpret_cast<const char*>(image.data.data()), image.data.size() * 4));
}

}  // namespace detail

// Full reverse-diffusion run: seeded Gaussian start, strategy-guided scores,
// strided sampler steps, final clamp to [0,1]. Deterministic per seed.
inline GenerateResult generate(const DenoiserModel& model, const std::vector<LoraAdapter>& adapters,
                               const Tensor& cond, const GenerateConfig& config,
                               const std::string& set_id = "",
                               const std::vector<Tensor>& per_adapter_cond = {}) {
    const NoiseSchedule sched = config.schedule.build();
    if (config.sampler.steps > sched.T)
        throw DomainError("generate: sampler steps exceed schedule length");

    Rng rng(config.sampler.seed);
    Tensor z = Tensor::gaussian({model.d}, rng);

    StrategyRunner runner(config.composition, model, adapters, config.sampler.steps,
                          config.guidance, cond, per_adapter_cond);
    const auto steps = make_timesteps(sched.T, config.sampler.steps);
    for (size_t i = 0; i < steps.size(); ++i) {
        const auto [t, t_prev] = steps[i];
        const Tensor eps_hat = runner.epsilon(z, i + 1, t, sched.T);
        z = sampler_step(z, eps_hat, t, t_prev, sched, config.sampler, rng);
        if (!z.finite())
            throw NumericError("generate: non-finite state at step " + std::to_string(i + 1));
    }
    for (auto& v : z.data) v = std::clamp(v, 0.0f, 1.0f);

    GenerateResult res;
    res.image = z;
    nlohmann::json weights = nlohmann::json::array();
    for (float w : config.guidance.composite_weights) weights.push_back(w);
    std::vector<std::string> adapter_names;
    for (const auto& a : adapters) adapter_names.push_back(a.name);
    res.manifest = {
        {"strategy", strategy_name(config.composition.strategy)},
        {"tau_schedule", detail::tau_schedule_json(config.composition.tau_schedule)},
        {"order", config.composition.order},
        {"scale", config.guidance.scale},
        {"weights", weights},
        {"steps", config.sampler.steps},
        {"sampler", config.sampler.kind == SamplerKind::Deterministic ? "deterministic"
                                                                      : "ancestral"},
        {"seed", config.sampler.seed},
        {"schedule",
         {{"T", config.schedule.T},
          {"beta_start", config.schedule.beta_start},
          {"beta_end", config.schedule.beta_end}}},
        {"adapters", adapter_names},
        {"composition_set", set_id},
        {"image_hash", detail::image_hash(z)},
    };
    return res;
}

// PNG for viewing, f32 container sidecar for exact numeric comparisons, and
// the manifest next to both.
inline void persist_generation(const std::string& dir, const std::string& name,
                               const GenerateResult& res) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string base = (fs::path(dir) / name).string();
    write_png_gray(base + ".png", res.image, kCanvas, kCanvas);

    Container c;
    c.header["kind"] = "image";
    c.header["tensors"] =
        nlohmann::json::array({{{"hook", "image"}, {"role", "data"}, {"shape", res.image.shape}}});
    c.payloads.push_back(res.image);
    write_container(base + ".f32", c);

    nlohmann::json manifest = res.manifest;
    manifest["outputs"] = {base + ".png", base + ".f32"};
    std::ofstream f(base + ".manifest.json");
    f << manifest.dump(2) << "\n";
}

// ---- synthetic training corpora ----

inline Sample make_corpus_sample(const Catalog& cat, const std::vector<std::string>& vocab,
                                 Rng& rng) {
    const StyleSubset ss = rng.next_range(0, 1) ? StyleSubset::Anime : StyleSubset::Realistic;
    std::vector<const ElementSpec*> by_cat[5];
    for (const ElementSpec* e : cat.subset(ss)) by_cat[category_rank(e->category)].push_back(e);

    std::vector<const ElementSpec*> chosen;
    chosen.push_back(by_cat[0][rng.next_range(0, by_cat[0].size() - 1)]);  // one character
    for (int c = 1; c < 5; ++c)
        if (rng.next_double() < 0.5)
            chosen.push_back(by_cat[c][rng.next_range(0, by_cat[c].size() - 1)]);

    Sample s;
    s.z0 = synth_image(chosen, rng.next_u64());
    s.z0.shape = {kCanvas * kCanvas};
    std::vector<std::string> triggers;
    for (const ElementSpec* e : chosen) triggers.push_back(e->trigger_phrase);
    s.cond = embed_condition(triggers, vocab);
    return s;
}

inline std::vector<Sample> make_base_corpus(const Catalog& cat, size_t n, uint64_t seed) {
    const auto vocab = cat.vocab();
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.push_back(make_corpus_sample(cat, vocab, rng));
    return out;
}

inline std::vector<Sample> make_element_dataset(const Catalog& cat, const ElementSpec& element,
                                                size_t n, uint64_t seed) {
    const auto vocab = cat.vocab();
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Sample s;
        s.z0 = synth_image({&element}, rng.next_u64());
        s.z0.shape = {kCanvas * kCanvas};
        s.cond = embed_condition({element.trigger_phrase}, vocab);
        out.push_back(std::move(s));
    }
    return out;
}

// ---- benchmark ----

struct BenchOptions {
    std::vector<Strategy> methods = {Strategy::Switch, Strategy::Composite};  // each vs Merge
    size_t k_min = 2, k_max = 5;
    std::vector<uint64_t> seeds = {1, 2, 3};
    size_t steps = 20;
    float scale = 7.0f;
    size_t tau = 5;
    ScheduleConfig schedule;
    // 0 = all sets; otherwise an evenly spaced cap per k for quick runs.
    size_t max_sets_per_k = 0;
};

struct BenchReportRow {
    size_t k = 0;
    std::string method_pair;
    std::string dimension;
    double win_pct = 0, tie_pct = 0, lose_pct = 0, mean_a = 0, mean_b = 0;
};

struct BenchResult {
    std::vector<BenchReportRow> rows;
    size_t images_generated = 0;
    size_t failures = 0;
    std::vector<std::string> failure_notes;
};

namespace detail {

inline PairResult average_pair_results(const std::vector<PairResult>& rs) {
    PairResult out;
    for (const auto& r : rs) {
        out.mean_a_comp += r.mean_a_comp;
        out.mean_a_img += r.mean_a_img;
        out.mean_b_comp += r.mean_b_comp;
        out.mean_b_img += r.mean_b_img;
    }
    const double n = static_cast<double>(rs.size());
    out.mean_a_comp /= n;
    out.mean_a_img /= n;
    out.mean_b_comp /= n;
    out.mean_b_img /= n;
    out.comp = outcome_of(out.mean_a_comp, out.mean_b_comp);
    out.img = outcome_of(out.mean_a_img, out.mean_b_img);
    return out;
}

inline std::vector<ElementFeature> element_features(const Catalog& cat,
                                                    const CompositionSet& set) {
    std::vector<ElementFeature> feats;
    for (const auto& id : set.element_ids) {
        const ElementSpec& e = cat.find(id);
        feats.push_back({std::string(category_name(e.category)) + " (" + e.id + ")",
                         e.trigger_phrase});
    }
    return feats;
}

}  // namespace detail

// Generates images for every (set, method, seed), judges each proposed
// method against Merge in both input orders, and aggregates per k. Failures
// are recorded per set and the run continues.
inline BenchResult run_benchmark(const DenoiserModel& model,
                                 const std::map<std::string, LoraAdapter>& adapters_by_element,
                                 const Catalog& cat, const BenchOptions& opt,
                                 Judge* external_judge = nullptr,
                                 const std::string& out_dir = "") {
    const auto vocab = cat.vocab();
    BenchResult result;

    for (size_t k = opt.k_min; k <= opt.k_max; ++k) {
        std::vector<CompositionSet> sets = enumerate_sets(cat, k);
        if (opt.max_sets_per_k > 0 && sets.size() > opt.max_sets_per_k) {
            std::vector<CompositionSet> pruned;
            const double stride = static_cast<double>(sets.size()) / opt.max_sets_per_k;
            for (size_t i = 0; i < opt.max_sets_per_k; ++i)
                pruned.push_back(sets[static_cast<size_t>(i * stride)]);
            sets = std::move(pruned);
        }

        std::map<std::string, std::vector<PairResult>> per_method;
        for (const auto& set : sets) {
            try {
                std::vector<LoraAdapter> adapters;
                for (const auto& id : set.element_ids) {
                    auto it = adapters_by_element.find(id);
                    if (it == adapters_by_element.end())
                        throw DomainError("no trained adapter for element " + id);
                    adapters.push_back(it->second);
                }
                const Tensor cond = embed_condition(build_prompt(cat, set), vocab);

                auto gen_with = [&](Strategy strategy, uint64_t seed) {
                    GenerateConfig gc;
                    gc.composition.strategy = strategy;
                    gc.composition.tau_schedule = TauSchedule::fixed(opt.tau);
                    if (strategy == Strategy::Hybrid) {
                        gc.composition.groups.resize(adapters.size());
                        for (size_t i = 0; i < adapters.size(); ++i)
                            gc.composition.groups[i] = {i};
                    }
                    gc.guidance.scale = opt.scale;
                    gc.sampler.steps = opt.steps;
                    gc.sampler.seed = seed;
                    gc.schedule = opt.schedule;
                    GenerateResult r = generate(model, adapters, cond, gc, set.id());
                    ++result.images_generated;
                    if (!out_dir.empty())
                        persist_generation(out_dir, set.id() + "_" +
                                                        strategy_name(strategy) + "_s" +
                                                        std::to_string(seed),
                                           r);
                    return r.image;
                };

                const auto feats = detail::element_features(cat, set);
                OfflineJudge offline(set, cat);
                Judge& judge = external_judge ? *external_judge
                                              : static_cast<Judge&>(offline);

                std::map<uint64_t, Tensor> merge_by_seed;
                for (uint64_t seed : opt.seeds) merge_by_seed[seed] = gen_with(Strategy::Merge, seed);

                for (Strategy m : opt.methods) {
                    std::vector<PairResult> per_seed;
                    for (uint64_t seed : opt.seeds) {
                        const Tensor img_method = gen_with(m, seed);
                        per_seed.push_back(compare_pair_debiased(judge, img_method,
                                                                 merge_by_seed[seed], feats,
                                                                 {seed}));
                    }
                    per_method[strategy_name(m)].push_back(
                        detail::average_pair_results(per_seed));
                }
            } catch (const std::exception& e) {
                ++result.failures;
                result.failure_notes.push_back(set.id() + ": " + e.what());
            }
        }

        for (const auto& [method, results] : per_method) {
            const Aggregate agg = aggregate(results);
            const std::string pair_name = method + "-vs-merge";
            result.rows.push_back({k, pair_name, "composition", agg.comp.win_pct,
                                   agg.comp.tie_pct, agg.comp.lose_pct, agg.comp.mean_a,
                                   agg.comp.mean_b});
            result.rows.push_back({k, pair_name, "image", agg.img.win_pct, agg.img.tie_pct,
                                   agg.img.lose_pct, agg.img.mean_a, agg.img.mean_b});
        }
    }
    return result;
}

// ---- CSV report ----

inline std::string report_csv(const std::vector<BenchReportRow>& rows) {
    std::ostringstream os;
    os << "k,method_pair,dimension,win_pct,tie_pct,lose_pct,mean_a,mean_b\n";
    for (const auto& r : rows)
        os << r.k << "," << r.method_pair << "," << r.dimension << "," << r.win_pct << ","
           << r.tie_pct << "," << r.lose_pct << "," << r.mean_a << "," << r.mean_b << "\n";
    return os.str();
}

inline std::vector<BenchReportRow> parse_report_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw ParseError("empty CSV");
    if (line.rfind("k,method_pair,dimension", 0) != 0)
        throw ParseError("unexpected CSV header: " + line);
    std::vector<BenchReportRow> rows;
    size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 8)
            throw ParseError("CSV line " + std::to_string(lineno) + " has " +
                             std::to_string(fields.size()) + " fields");
        try {
            rows.push_back({static_cast<size_t>(std::stoul(fields[0])), fields[1], fields[2],
                            std::stod(fields[3]), std::stod(fields[4]), std::stod(fields[5]),
                            std::stod(fields[6]), std::stod(fields[7])});
        } catch (const std::exception&) {
            throw ParseError("CSV line " + std::to_string(lineno) + " has malformed numbers");
        }
    }
    return rows;
}

// Human-readable per-k tables; pure pass-through of the CSV values.
inline std::string render_report(const std::vector<BenchReportRow>& rows) {
    std::ostringstream os;
    size_t current_k = SIZE_MAX;
    for (const auto& r : rows) {
        if (r.k != current_k) {
            current_k = r.k;
            os << "== k = " << r.k << " ==\n";
            os << "  method pair            dim          win%   tie%  lose%   meanA   meanB\n";
        }
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  %-22s %-12s %5.1f  %5.1f  %5.1f  %6.2f  %6.2f\n",
                      r.method_pair.c_str(), r.dimension.c_str(), r.win_pct, r.tie_pct,
                      r.lose_pct, r.mean_a, r.mean_b);
        os << buf;
    }
    return os.str();
}

}  // namespace lcomp

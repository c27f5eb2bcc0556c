// Command-line front end: training, generation, testbed enumeration,
// judging, benchmarking, and report rendering.
//
// Exit codes: 0 success, 1 validation/usage error, 2 runtime or numeric
// error, 3 judge-transport error.

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcomp/container.hpp"
#include "lcomp/judge_client.hpp"
#include "lcomp/pipeline.hpp"

namespace {

using namespace lcomp;

// JSON configuration file support: top-level keys map to global options,
// nested objects scope their keys to the matching subcommand. Flags given on
// the command line override file values (CLI11's standard precedence).
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App*, bool, bool, std::string) const override {
        return "{}\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(input);
        } catch (const nlohmann::json::exception& e) {
            throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::FileError("config root must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        collect(j, {}, items);
        return items;
    }

private:
    static void collect(const nlohmann::json& j, std::vector<std::string> parents,
                        std::vector<CLI::ConfigItem>& items) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto nested = parents;
                nested.push_back(key);
                collect(value, nested, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            items.push_back(std::move(item));
        }
    }

    static std::string scalar(const nlohmann::json& v) {
        return v.is_string() ? v.get<std::string>() : v.dump();
    }
};

TauSchedule parse_tau_schedule(const std::string& kind, size_t tau, size_t tau_to) {
    if (kind == "fixed") return TauSchedule::fixed(tau);
    if (kind == "incremental") return TauSchedule::incremental(tau, tau_to);
    if (kind == "decremental") return TauSchedule::decremental(tau, tau_to);
    if (kind == "warmup") return TauSchedule::warmup(tau, tau_to);
    throw DomainError("unknown tau schedule: " + kind +
                      " (expected fixed|incremental|decremental|warmup)");
}

std::vector<std::vector<size_t>> parse_groups(const std::string& spec) {
    std::vector<std::vector<size_t>> groups;
    std::istringstream gs(spec);
    std::string group;
    while (std::getline(gs, group, ';')) {
        std::vector<size_t> idx;
        std::istringstream is(group);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok.empty()) continue;
            idx.push_back(static_cast<size_t>(std::stoul(tok)));
        }
        if (!idx.empty()) groups.push_back(std::move(idx));
    }
    return groups;
}

Tensor load_image_f32(const std::string& path) {
    const Container c = read_container(path);
    if (c.payloads.size() != 1)
        throw ValidationError(path + ": expected a single-image container");
    Tensor img = c.payloads[0];
    if (img.numel() != kCanvas * kCanvas)
        throw ValidationError(path + ": image is not " + std::to_string(kCanvas) + "x" +
                              std::to_string(kCanvas));
    return img;
}

std::unique_ptr<HttpJudge> make_remote_judge(const std::string& url, const std::string& model,
                                             const std::string& cache) {
    JudgeClientConfig cfg;
    cfg.base_url = url;
    if (!model.empty()) cfg.model = model;
    cfg.cache_path = cache;
    return std::make_unique<HttpJudge>(cfg);
}

// ---- subcommand setups ----

struct TrainBaseOpts {
        std::string out;
        size_t samples = 512, epochs = 10, batch_size = 16, hidden = 128, time_dim = 8, T = 50;
        double lr = 5e-3, momentum = 0.0, cond_drop = 0.1;
        uint64_t seed = 1;
    };

void setup_train_base(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-base",
                                   "Train the base denoiser on the synthetic element corpus");
    auto opt = std::make_shared<TrainBaseOpts>();
    cmd->add_option("--out", opt->out, "Output model checkpoint path")->required();
    cmd->add_option("--samples", opt->samples, "Synthetic corpus size");
    cmd->add_option("--epochs", opt->epochs, "Training epochs");
    cmd->add_option("--batch-size", opt->batch_size, "Minibatch size");
    cmd->add_option("--lr", opt->lr, "Learning rate");
    cmd->add_option("--momentum", opt->momentum, "SGD momentum");
    cmd->add_option("--cond-drop", opt->cond_drop, "Condition dropout probability");
    cmd->add_option("--hidden", opt->hidden, "Hidden layer width");
    cmd->add_option("--time-dim", opt->time_dim, "Time embedding dimension");
    cmd->add_option("--T", opt->T, "Noise schedule length");
    cmd->add_option("--seed", opt->seed, "Training seed");
    cmd->callback([opt] {
        const Catalog cat = build_catalog();
        const NoiseSchedule sched = build_schedule(opt->T, 1e-4, 2e-2);
        TrainConfig cfg;
        cfg.epochs = opt->epochs;
        cfg.batch_size = opt->batch_size;
        cfg.learning_rate = opt->lr;
        cfg.momentum = opt->momentum;
        cfg.cond_drop_prob = opt->cond_drop;
        cfg.seed = opt->seed;
        const auto corpus = make_base_corpus(cat, opt->samples, opt->seed);
        const TrainResult r = train_base(corpus, cfg, sched, kCanvas * kCanvas, opt->hidden,
                                         opt->time_dim, cat.vocab().size());
        write_model(opt->out, r.model);
        for (size_t e = 0; e < r.epoch_losses.size(); ++e)
            std::cout << "epoch " << (e + 1) << " loss " << r.epoch_losses[e] << "\n";
        std::cout << "wrote " << opt->out << "\n";
    });
}

struct TrainLoraOpts {
        std::string base, element, out;
        size_t samples = 64, epochs = 6, batch_size = 8, rank = 4, T = 50;
        double lr = 5e-3, momentum = 0.0, cond_drop = 0.1;
        float weight_scale = 0.8f;
        uint64_t seed = 1;
    };

void setup_train_lora(CLI::App& app) {
    auto* cmd = app.add_subcommand("train-lora",
                                   "Train a low-rank adapter for one catalog element");
    auto opt = std::make_shared<TrainLoraOpts>();
    cmd->add_option("--base", opt->base, "Base model checkpoint")->required();
    cmd->add_option("--element", opt->element, "Catalog element id")->required();
    cmd->add_option("--out", opt->out, "Output adapter path")->required();
    cmd->add_option("--samples", opt->samples, "Element dataset size");
    cmd->add_option("--epochs", opt->epochs, "Training epochs");
    cmd->add_option("--batch-size", opt->batch_size, "Minibatch size");
    cmd->add_option("--lr", opt->lr, "Learning rate");
    cmd->add_option("--momentum", opt->momentum, "SGD momentum");
    cmd->add_option("--cond-drop", opt->cond_drop, "Condition dropout probability");
    cmd->add_option("--rank", opt->rank, "Adapter rank");
    cmd->add_option("--weight-scale", opt->weight_scale, "Adapter application weight");
    cmd->add_option("--T", opt->T, "Noise schedule length");
    cmd->add_option("--seed", opt->seed, "Training seed");
    cmd->callback([opt] {
        const Catalog cat = build_catalog();
        const ElementSpec& element = cat.find(opt->element);
        const DenoiserModel base = read_model(opt->base);
        const NoiseSchedule sched = build_schedule(opt->T, 1e-4, 2e-2);
        TrainConfig cfg;
        cfg.epochs = opt->epochs;
        cfg.batch_size = opt->batch_size;
        cfg.learning_rate = opt->lr;
        cfg.momentum = opt->momentum;
        cfg.cond_drop_prob = opt->cond_drop;
        cfg.rank = opt->rank;
        cfg.seed = opt->seed;
        const auto ds = make_element_dataset(cat, element, opt->samples, opt->seed);
        const LoraTrainResult r = train_lora(base, ds, cfg, sched, element.id, element.category,
                                             element.trigger_phrase, opt->weight_scale);
        write_adapter(opt->out, r.adapter);
        for (size_t e = 0; e < r.epoch_losses.size(); ++e)
            std::cout << "epoch " << (e + 1) << " loss " << r.epoch_losses[e] << "\n";
        std::cout << "wrote " << opt->out << "\n";
    });
}

struct GenerateOpts {
        std::string model, method = "merge", tau_schedule = "fixed", order, groups, sampler =
            "deterministic", out_dir = ".", name = "sample";
        std::vector<std::string> adapters, triggers;
        std::vector<float> weights;
        size_t tau = 5, tau_to = 5, steps = 20, T = 50;
        float scale = 7.0f;
        uint64_t seed = 0;
        bool per_active_trigger = false;
    };

void setup_generate(CLI::App& app) {
    auto* cmd = app.add_subcommand("generate", "Run reverse diffusion with composed adapters");
    auto opt = std::make_shared<GenerateOpts>();
    cmd->add_option("--model", opt->model, "Base model checkpoint")->required();
    cmd->add_option("--adapter", opt->adapters, "Adapter file (repeatable)");
    cmd->add_option("--trigger", opt->triggers,
                    "Trigger phrase to condition on (default: each adapter's trigger)");
    cmd->add_option("--method", opt->method, "merge|switch|composite|hybrid");
    cmd->add_option("--tau", opt->tau, "Switch interval (steps per adapter)");
    cmd->add_option("--tau-schedule", opt->tau_schedule,
                    "fixed|incremental|decremental|warmup");
    cmd->add_option("--tau-to", opt->tau_to, "Final tau for dynamic schedules");
    cmd->add_option("--order", opt->order, "Comma-separated adapter activation order");
    cmd->add_option("--groups", opt->groups,
                    "Hybrid partition, e.g. \"0,1;2\" (semicolon-separated groups)");
    cmd->add_option("--scale", opt->scale, "Guidance scale");
    cmd->add_option("--weights", opt->weights, "Per-adapter composite weights");
    cmd->add_flag("--per-active-trigger", opt->per_active_trigger,
                  "Switch conditions on the active adapter's trigger only");
    cmd->add_option("--steps", opt->steps, "Sampler steps");
    cmd->add_option("--sampler", opt->sampler, "deterministic|ancestral");
    cmd->add_option("--T", opt->T, "Noise schedule length");
    cmd->add_option("--seed", opt->seed, "Generation seed");
    cmd->add_option("--out-dir", opt->out_dir, "Output directory");
    cmd->add_option("--name", opt->name, "Output file stem");
    cmd->callback([opt] {
        const Catalog cat = build_catalog();
        const auto vocab = cat.vocab();
        const DenoiserModel model = read_model(opt->model);
        if (model.d_c != vocab.size())
            throw ValidationError("model condition width does not match the trigger vocabulary");

        std::vector<LoraAdapter> adapters;
        for (const auto& path : opt->adapters) adapters.push_back(read_adapter(path));
        if (adapters.empty()) throw ValidationError("generate needs at least one --adapter");

        std::vector<std::string> triggers = opt->triggers;
        if (triggers.empty())
            for (const auto& a : adapters) triggers.push_back(a.trigger_phrase);

        GenerateConfig gc;
        gc.composition.strategy = strategy_from_name(opt->method);
        gc.composition.tau_schedule = parse_tau_schedule(
            opt->tau_schedule, opt->tau,
            opt->tau_schedule == "fixed" ? opt->tau : opt->tau_to);
        if (!opt->order.empty()) {
            for (const auto& g : parse_groups(opt->order))
                for (size_t i : g) gc.composition.order.push_back(i);
        }
        if (!opt->groups.empty()) gc.composition.groups = parse_groups(opt->groups);
        gc.composition.per_active_trigger = opt->per_active_trigger;
        gc.guidance.scale = opt->scale;
        gc.guidance.composite_weights = opt->weights;
        gc.sampler.steps = opt->steps;
        gc.sampler.seed = opt->seed;
        gc.sampler.kind = opt->sampler == "ancestral" ? SamplerKind::Ancestral
                                                      : SamplerKind::Deterministic;
        gc.schedule.T = opt->T;

        std::vector<Tensor> per_adapter_cond;
        if (opt->per_active_trigger)
            for (const auto& a : adapters)
                per_adapter_cond.push_back(embed_condition({a.trigger_phrase}, vocab));

        const Tensor cond = embed_condition(triggers, vocab);
        const GenerateResult r = generate(model, adapters, cond, gc, "", per_adapter_cond);
        persist_generation(opt->out_dir, opt->name, r);
        std::cout << r.manifest.dump(2) << "\n";
    });
}

void setup_testbed(CLI::App& app) {
    auto* cmd = app.add_subcommand("testbed", "Inspect the combinatorial element testbed");
    cmd->require_subcommand(1);

    auto* cat_cmd = cmd->add_subcommand("catalog", "Print the element catalog, one JSON per line");
    cat_cmd->callback([] {
        for (const auto& item : catalog_to_json(build_catalog())) std::cout << item.dump() << "\n";
    });

    auto* enum_cmd =
        cmd->add_subcommand("enumerate", "Enumerate composition sets, one JSON per line");
    auto k = std::make_shared<size_t>(2);
    enum_cmd->add_option("--k", *k, "Composition size (2..5)")->required();
    enum_cmd->callback([k] {
        const Catalog cat = build_catalog();
        for (const CompositionSet& set : enumerate_sets(cat, *k)) {
            nlohmann::json rec = {{"id", set.id()},
                                  {"style_subset", style_subset_name(set.style_subset)},
                                  {"elements", set.element_ids},
                                  {"prompt", build_prompt(cat, set)}};
            std::cout << rec.dump() << "\n";
        }
    });
}

struct JudgeOpts {
        std::string a, b, subset = "realistic", url, model, cache;
        std::vector<std::string> elements;
        std::vector<uint64_t> seeds = {1, 2, 3};
    };

void setup_judge(CLI::App& app) {
    auto* cmd = app.add_subcommand("judge", "Compare two generated images with order debiasing");
    auto opt = std::make_shared<JudgeOpts>();
    cmd->add_option("--a", opt->a, "First image (.f32 container)")->required();
    cmd->add_option("--b", opt->b, "Second image (.f32 container)")->required();
    cmd->add_option("--element", opt->elements, "Expected catalog element id (repeatable)")
        ->required();
    cmd->add_option("--subset", opt->subset, "realistic|anime");
    cmd->add_option("--seeds", opt->seeds, "Judge seeds");
    cmd->add_option("--url", opt->url, "Remote judge endpoint (default: offline detector judge)");
    cmd->add_option("--judge-model", opt->model, "Remote judge model name");
    cmd->add_option("--cache", opt->cache, "Remote judge response cache file");
    cmd->callback([opt] {
        const Catalog cat = build_catalog();
        CompositionSet set;
        set.style_subset = style_subset_from_name(opt->subset);
        set.element_ids = opt->elements;
        set.validate(cat);

        const Tensor a = load_image_f32(opt->a);
        const Tensor b = load_image_f32(opt->b);

        std::vector<ElementFeature> feats;
        for (const auto& id : set.element_ids) {
            const ElementSpec& e = cat.find(id);
            feats.push_back({std::string(category_name(e.category)) + " (" + e.id + ")",
                             e.trigger_phrase});
        }

        std::unique_ptr<HttpJudge> remote;
        OfflineJudge offline(set, cat);
        Judge* judge = &offline;
        if (!opt->url.empty()) {
            remote = make_remote_judge(opt->url, opt->model, opt->cache);
            judge = remote.get();
        }
        const PairResult r = compare_pair_debiased(*judge, a, b, feats, opt->seeds);
        const nlohmann::json out = {
            {"composition",
             {{"outcome", outcome_name(r.comp)},
              {"mean_a", r.mean_a_comp},
              {"mean_b", r.mean_b_comp}}},
            {"image",
             {{"outcome", outcome_name(r.img)}, {"mean_a", r.mean_a_img}, {"mean_b", r.mean_b_img}}},
            {"seeds", opt->seeds}};
        std::cout << out.dump(2) << "\n";
    });
}

struct BenchOpts {
        std::string model, adapters_dir, out, images_dir, url, judge_model, cache;
        std::vector<std::string> methods = {"switch", "composite"};
        std::vector<uint64_t> seeds = {1, 2, 3};
        size_t k_min = 2, k_max = 5, steps = 20, tau = 5, max_sets = 0, T = 50;
        float scale = 7.0f;
    };

void setup_bench(CLI::App& app) {
    auto* cmd = app.add_subcommand(
        "bench", "Benchmark composition methods against merging over the testbed");
    auto opt = std::make_shared<BenchOpts>();
    cmd->add_option("--model", opt->model, "Base model checkpoint")->required();
    cmd->add_option("--adapters-dir", opt->adapters_dir,
                    "Directory of per-element adapters (<element-id>.lcmp)")
        ->required();
    cmd->add_option("--method", opt->methods, "Methods to compare against merge (repeatable)");
    cmd->add_option("--k-min", opt->k_min, "Smallest composition size");
    cmd->add_option("--k-max", opt->k_max, "Largest composition size");
    cmd->add_option("--seeds", opt->seeds, "Generation/judging seeds");
    cmd->add_option("--steps", opt->steps, "Sampler steps");
    cmd->add_option("--scale", opt->scale, "Guidance scale");
    cmd->add_option("--tau", opt->tau, "Switch interval");
    cmd->add_option("--max-sets", opt->max_sets, "Cap on sets per k (0 = all)");
    cmd->add_option("--T", opt->T, "Noise schedule length");
    cmd->add_option("--out", opt->out, "Write the CSV report here");
    cmd->add_option("--images-dir", opt->images_dir, "Persist generated images here");
    cmd->add_option("--url", opt->url, "Remote judge endpoint (default: offline detector judge)");
    cmd->add_option("--judge-model", opt->judge_model, "Remote judge model name");
    cmd->add_option("--cache", opt->cache, "Remote judge response cache file");
    cmd->callback([opt] {
        const Catalog cat = build_catalog();
        const DenoiserModel model = read_model(opt->model);

        std::map<std::string, LoraAdapter> adapters;
        for (const auto& entry : std::filesystem::directory_iterator(opt->adapters_dir)) {
            if (entry.path().extension() != ".lcmp") continue;
            LoraAdapter a = read_adapter(entry.path().string());
            adapters[a.name] = std::move(a);
        }
        if (adapters.empty())
            throw ValidationError("no .lcmp adapters found in " + opt->adapters_dir);

        BenchOptions bo;
        bo.methods.clear();
        for (const auto& m : opt->methods) bo.methods.push_back(strategy_from_name(m));
        bo.k_min = opt->k_min;
        bo.k_max = opt->k_max;
        bo.seeds = opt->seeds;
        bo.steps = opt->steps;
        bo.scale = opt->scale;
        bo.tau = opt->tau;
        bo.max_sets_per_k = opt->max_sets;
        bo.schedule.T = opt->T;

        std::unique_ptr<HttpJudge> remote;
        Judge* judge = nullptr;
        if (!opt->url.empty()) {
            remote = make_remote_judge(opt->url, opt->judge_model, opt->cache);
            judge = remote.get();
        }

        const BenchResult r = run_benchmark(model, adapters, cat, bo, judge, opt->images_dir);
        const std::string csv = report_csv(r.rows);
        if (!opt->out.empty()) {
            std::ofstream f(opt->out);
            f << csv;
        }
        std::cout << render_report(r.rows);
        std::cout << "images generated: " << r.images_generated << "\n";
        if (r.failures > 0) {
            std::cout << "failures: " << r.failures << "\n";
            for (const auto& note : r.failure_notes) std::cout << "  " << note << "\n";
        }
    });
}

void setup_report(CLI::App& app) {
    auto* cmd = app.add_subcommand("report", "Render a benchmark CSV as per-k tables");
    auto in = std::make_shared<std::string>();
    cmd->add_option("--in", *in, "Benchmark CSV path")->required();
    cmd->callback([in] {
        std::ifstream f(*in);
        if (!f) throw ValidationError("cannot open " + *in);
        std::stringstream ss;
        ss << f.rdbuf();
        std::cout << render_report(parse_report_csv(ss.str()));
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Decoding-time multi-adapter composition engine"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON configuration file (flags override file values)");
    app.require_subcommand(1);

    setup_train_base(app);
    setup_train_lora(app);
    setup_generate(app);
    setup_testbed(app);
    setup_judge(app);
    setup_bench(app);
    setup_report(app);

    // let --config appear after the subcommand name too
    std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* cmd) {
        cmd->fallthrough(true);
        for (CLI::App* sub : cmd->get_subcommands(nullptr)) enable_fallthrough(sub);
    };
    for (CLI::App* sub : app.get_subcommands(nullptr)) enable_fallthrough(sub);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const lcomp::QueryError& e) {
        std::cerr << "judge transport error: " << e.what() << "\n";
        return 3;
    } catch (const lcomp::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const lcomp::TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 2;
    } catch (const lcomp::DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lcomp::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lcomp::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lcomp::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const lcomp::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "reform/reform.hpp"

using namespace reform;

namespace {

struct Globals {
    std::string model_path;
    std::string config_path;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out_path;
    std::string vocab_path;
    std::vector<std::string> overrides;
};

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

Model load_model(const Globals& g) {
    if (g.model_path.empty()) throw UsageError("--model is required");
    auto [cfg, w] = load_weights(g.model_path);
    spdlog::info("loaded {} ({} layers, d_model {})", g.model_path, cfg.n_layers, cfg.d_model);
    return Model(cfg, std::move(w));
}

Tokenizer load_tokenizer(const Globals& g, const Model& m) {
    Tokenizer tok = g.vocab_path.empty() ? Tokenizer{} : Tokenizer::from_vocab_file(g.vocab_path);
    if (tok.vocab_size() > m.config().vocab_size) {
        throw ConfigError("tokenizer vocabulary (" + std::to_string(tok.vocab_size()) + ") exceeds the model's (" +
                          std::to_string(m.config().vocab_size) + ")");
    }
    return tok;
}

PipelineConfig load_config(const Globals& g) {
    PipelineConfig cfg = g.config_path.empty() ? PipelineConfig{} : load_pipeline_config(g.config_path);
    for (const auto& o : g.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + o + "'");
        apply_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    return cfg;
}

std::string corpus_text(const std::string& path, std::size_t min_tokens, std::uint64_t seed) {
    if (!path.empty()) return read_text(path);
    // Average lexicon word is ~6 bytes; over-provision.
    return synthetic_corpus(min_tokens / 3 + 1000, seed);
}

void emit_sidecar(const Globals& g, const Sidecar& sc) {
    if (g.out_path.empty()) {
        std::cerr << sc.str();
    } else {
        write_text(g.out_path, sc.str());
        spdlog::info("report written to {}", g.out_path);
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, T (*conv)(const std::string&)) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(conv(item));
    }
    return out;
}

std::size_t to_size(const std::string& s) { return detail::parse_count(s, "list entry"); }
double to_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw UsageError("expected a number, got '" + s + "'");
    }
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("reform");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    const char* lvl = std::getenv("REFORM_LOG");
    spdlog::set_level(lvl ? spdlog::level::from_str(lvl) : spdlog::level::warn);
}

} // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"REFORM long-context inference toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--model", g.model_path, "RFWT weight file");
    app.add_option("--config", g.config_path, "pipeline config file (key = value)");
    app.add_option("--seed", g.seed, "seed for every random choice");
    app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out_path, "output path (report sidecar, model file, ...)");
    app.add_option("--vocab", g.vocab_path, "vocab file (default: byte-level)");
    app.add_option("--set", g.overrides, "override a config key: --set key=value");

    // init
    auto* init = app.add_subcommand("init", "write a random or probe model");
    std::string kind = "random";
    ModelConfig mc;
    mc.n_layers = 2;
    mc.d_model = 64;
    mc.n_q_heads = 4;
    mc.n_kv_heads = 2;
    mc.head_dim = 16;
    mc.d_ff = 128;
    mc.vocab_size = kByteVocabSize;
    mc.max_positions = 1 << 16;
    std::string dtype = "f32";
    init->add_option("--kind", kind, "random | probe")->check(CLI::IsMember({"random", "probe"}));
    init->add_option("--layers", mc.n_layers);
    init->add_option("--d-model", mc.d_model);
    init->add_option("--q-heads", mc.n_q_heads);
    init->add_option("--kv-heads", mc.n_kv_heads);
    init->add_option("--head-dim", mc.head_dim);
    init->add_option("--d-ff", mc.d_ff);
    init->add_option("--vocab-size", mc.vocab_size);
    init->add_option("--max-positions", mc.max_positions);
    init->add_option("--rope-theta", mc.rope_theta);
    init->add_option("--dtype", dtype)->check(CLI::IsMember({"f32", "f16"}));

    // run
    auto* run = app.add_subcommand("run", "prefill + greedy generation on a prompt file");
    std::string prompt_path;
    std::size_t max_new = 32;
    std::string method_name = "reform";
    run->add_option("--prompt", prompt_path, "prompt text; <|sep|> marks the question")->required();
    run->add_option("--max-new", max_new);
    run->add_option("--method", method_name);

    // niah
    auto* niah = app.add_subcommand("niah", "needle-in-a-haystack grid");
    std::string corpus_path;
    std::string lengths = "1024,2048,4096,8192,16384";
    std::string depths = "0,25,50,75,100";
    std::size_t samples = 5;
    std::string needle = "default";
    niah->add_option("--corpus", corpus_path, "filler text (default: synthetic)");
    niah->add_option("--lengths", lengths);
    niah->add_option("--depths", depths);
    niah->add_option("--samples", samples);
    niah->add_option("--method", method_name);
    niah->add_option("--needle", needle, "default | probe")->check(CLI::IsMember({"default", "probe"}));
    niah->add_option("--max-new", max_new);

    // headscan
    auto* headscan = app.add_subcommand("headscan", "rank every head by MNR on synthetic datasets");
    std::size_t scan_len = 2048;
    std::size_t n_pairs = 4;
    std::size_t per_dataset = 2;
    double depth_cap = 0.7;
    std::string dataset_out;
    headscan->add_option("--corpus", corpus_path);
    headscan->add_option("--length", scan_len);
    headscan->add_option("--samples", samples);
    headscan->add_option("--pairs", n_pairs);
    headscan->add_option("--per-dataset", per_dataset);
    headscan->add_option("--depth-cap", depth_cap);
    headscan->add_option("--dataset-out", dataset_out, "spill generated datasets (prefix)");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "selected / random / bad heads under each eviction policy");
    std::string policies = "h2o,streamingllm,tova";
    std::string bad_spec;
    std::size_t n_random = 0;
    ablate->add_option("--corpus", corpus_path);
    ablate->add_option("--lengths", lengths);
    ablate->add_option("--depths", depths);
    ablate->add_option("--samples", samples);
    ablate->add_option("--needle", needle)->check(CLI::IsMember({"default", "probe"}));
    ablate->add_option("--policies", policies);
    ablate->add_option("--bad-heads", bad_spec, "explicit bad heads (default: worst MNR from a headscan)");
    ablate->add_option("--random-count", n_random, "random heads drawn (default: as many as selected)");
    ablate->add_option("--max-new", max_new);
    ablate->add_option("--scan-length", scan_len);

    // export-report
    auto* report = app.add_subcommand("export-report", "work counters of every method on one prompt");
    std::string methods = "reform,h2o,streamingllm,tova,truncation,dense";
    report->add_option("--prompt", prompt_path)->required();
    report->add_option("--methods", methods);
    report->add_option("--max-new", max_new);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorClass::usage);
    }

    try {
        if (init->parsed()) {
            if (g.out_path.empty()) throw UsageError("init needs --out");
            if (kind == "probe") {
                const auto pm = make_probe_model(g.seed);
                save_weights(g.out_path, pm.config, pm.weights, dtype == "f16" ? DType::f16 : DType::f32);
                std::cout << "selected_heads = " << format_head_spec(pm.designated) << '\n';
            } else {
                mc.validate();
                save_weights(g.out_path, mc, init_random(mc, g.seed), dtype == "f16" ? DType::f16 : DType::f32);
            }
            spdlog::info("wrote {}", g.out_path);
            return 0;
        }

        const Model model = load_model(g);
        const Tokenizer tok = load_tokenizer(g, model);

        if (run->parsed()) {
            const PipelineConfig cfg = load_config(g);
            const Method method = parse_method(method_name);
            const auto input = tok.encode_marked(read_text(prompt_path));
            spdlog::info("prompt: {} tokens, method {}", input.size(), to_string(method));
            PrefillResult pr = run_prefill(model, input, cfg, method);
            const auto out = generate(model, pr, max_new);
            std::cout << tok.decode(out) << '\n';
            Sidecar sc;
            sc.add("method", to_string(method));
            sc.add("input_len", input.size());
            sc.add("context_len", pr.context_len);
            sc.add("selection_size", pr.selection.indices.size());
            sc.add("generated_tokens", out.size());
            add_work_stats(sc, "", pr.stats);
            emit_sidecar(g, sc);
            return 0;
        }

        if (niah->parsed()) {
            const PipelineConfig cfg = load_config(g);
            NiahGridSpec spec;
            spec.lengths = parse_list<std::size_t>(lengths, to_size);
            spec.depths = parse_list<double>(depths, to_double);
            spec.samples = samples;
            spec.seed = g.seed;
            spec.max_new_tokens = max_new;
            spec.needle = needle == "probe" ? probe_niah_spec() : default_niah_spec();
            validate_grid(spec);
            const auto corpus = corpus_text(corpus_path, spec.lengths.back() * 2, g.seed);
            const auto res = run_niah_grid(model, tok, corpus, cfg, parse_method(method_name), spec, g.jobs);
            std::cout << format_niah_table(res);
            emit_sidecar(g, niah_sidecar(res));
            return 0;
        }

        const auto scan = [&](std::size_t length) {
            const auto corpus = corpus_text(corpus_path, length * 2, g.seed);
            const PipelineConfig base = load_config(g);
            HeadEvalConfig hc;
            hc.chunk_size = base.chunk_size;
            hc.cache_budget = base.cache_budget;
            hc.sink_len = base.sink_len;
            hc.recent_len = base.recent_len;
            hc.policy = base.eviction;
            hc.observer_window = base.observer_window;
            hc.jobs = g.jobs;
            const auto kv = gen_kv_dataset(corpus, tok, n_pairs, length, g.seed, samples);
            const auto qa = gen_qa_dataset(corpus, tok, synthetic_qa_items(samples * 4, g.seed + 1), length, g.seed + 2,
                                           samples);
            if (!dataset_out.empty()) {
                save_dataset(dataset_out + ".kv.txt", kv);
                save_dataset(dataset_out + ".qa.txt", qa);
            }
            const auto candidates = enumerate_candidates(model.config());
            spdlog::info("evaluating {} candidates on {} + {} samples", candidates.size(), kv.samples.size(),
                         qa.samples.size());
            return std::make_pair(eval_heads_mnr(model, kv, candidates, hc), eval_heads_mnr(model, qa, candidates, hc));
        };

        if (headscan->parsed()) {
            const auto [kv_res, qa_res] = scan(scan_len);
            std::vector<HeadEvalResult> all = kv_res;
            all.insert(all.end(), qa_res.begin(), qa_res.end());
            const auto report_text = head_eval_report(all);
            if (g.out_path.empty()) {
                std::cout << report_text;
            } else {
                write_text(g.out_path, report_text);
            }
            const auto chosen = select_heads(kv_res, qa_res, model.config().n_layers, per_dataset, depth_cap);
            std::cout << "selected_heads = " << format_head_specs(chosen) << '\n';
            return 0;
        }

        if (ablate->parsed()) {
            const PipelineConfig cfg = load_config(g);
            if (cfg.selected_heads.empty()) throw ConfigError("ablate needs selected_heads in the config");
            std::vector<HeadSpec> bad;
            if (!bad_spec.empty()) {
                bad = parse_head_specs(bad_spec);
            } else {
                const auto [kv_res, qa_res] = scan(scan_len);
                bad = bad_heads(kv_res, qa_res, cfg.selected_heads.size());
            }
            const std::size_t n_rand = n_random ? n_random : cfg.selected_heads.size();
            const auto rnd = random_heads(model.config(), n_rand, g.seed);
            spdlog::warn("random heads drawn with seed {}: {}", g.seed, format_head_specs(rnd));
            NiahGridSpec spec;
            spec.lengths = parse_list<std::size_t>(lengths, to_size);
            spec.depths = parse_list<double>(depths, to_double);
            spec.samples = samples;
            spec.seed = g.seed;
            spec.max_new_tokens = max_new;
            spec.needle = needle == "probe" ? probe_niah_spec() : default_niah_spec();
            validate_grid(spec);
            std::vector<EvictionPolicy> pols;
            for (const auto& p : parse_list<std::string>(policies, [](const std::string& s) { return s; })) {
                pols.push_back(parse_eviction_policy(p));
            }
            const auto corpus = corpus_text(corpus_path, spec.lengths.back() * 2, g.seed);
            const auto rows = run_ablation(model, tok, corpus, cfg,
                                           {{"selected", cfg.selected_heads, 0}, {"random", rnd, g.seed}, {"bad", bad, 0}},
                                           pols, spec, g.jobs);
            std::cout << format_ablation_table(rows);
            emit_sidecar(g, ablation_sidecar(rows));
            return 0;
        }

        if (report->parsed()) {
            const PipelineConfig cfg = load_config(g);
            std::vector<Method> ms;
            for (const auto& m : parse_list<std::string>(methods, [](const std::string& s) { return s; })) {
                ms.push_back(parse_method(m));
            }
            const auto input = tok.encode_marked(read_text(prompt_path));
            const auto rows = work_report(model, tok, input, cfg, ms, max_new);
            std::cout << format_work_table(rows);
            emit_sidecar(g, work_sidecar(rows));
            return 0;
        }
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

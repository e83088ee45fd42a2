#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "reform/config_file.hpp"
#include "reform/datasets.hpp"
#include "reform/error.hpp"
#include "reform/model.hpp"
#include "reform/parallel.hpp"
#include "reform/pipeline.hpp"
#include "reform/tokenizer.hpp"

namespace reform {

// Ordered key=value lines for machine-readable reports.
class Sidecar {
public:
    template <typename T>
    void add(const std::string& key, const T& value) {
        std::ostringstream os;
        os.precision(9);
        os << value;
        items_.emplace_back(key, os.str());
    }
    std::string str() const {
        std::string out;
        for (const auto& [k, v] : items_) out += k + "=" + v + "\n";
        return out;
    }
    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

private:
    std::vector<std::pair<std::string, std::string>> items_;
};

inline void add_work_stats(Sidecar& sc, const std::string& prefix, const WorkStats& s) {
    sc.add(prefix + "layer_executions", s.layer_executions);
    sc.add(prefix + "attention_score_ops", s.attention_score_ops);
    sc.add(prefix + "peak_cache_entries", s.peak_cache_entries);
    sc.add(prefix + "embedding_store_bytes", s.embedding_store_bytes);
    sc.add(prefix + "recomputed_tokens", s.recomputed_tokens);
    sc.add(prefix + "decode_steps", s.decode_steps);
    sc.add(prefix + "chunks", s.chunks);
}

struct NiahGridSpec {
    std::vector<std::size_t> lengths{1024, 2048, 4096, 8192, 16384};
    std::vector<double> depths{0, 25, 50, 75, 100};
    std::size_t samples = 5;
    std::uint64_t seed = 0;
    std::size_t max_new_tokens = 16;
    NiahSpec needle = default_niah_spec();
};

struct NiahCell {
    std::size_t length = 0;
    double depth = 0;
    double recall = 0;           // fraction of samples whose output contains the payload
    double selection_recall = 0; // mean fraction of needle tokens kept in the final cache
    std::size_t samples = 0;
};

struct NiahGridResult {
    std::string method;
    std::vector<std::size_t> lengths;
    std::vector<double> depths;
    std::vector<NiahCell> cells; // row-major: lengths x depths
    std::string config_snapshot;

    const NiahCell& cell(std::size_t li, std::size_t di) const { return cells[li * depths.size() + di]; }
    double mean_recall() const {
        double s = 0;
        for (const auto& c : cells) s += c.recall;
        return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
    }
    double mean_selection_recall() const {
        double s = 0;
        for (const auto& c : cells) s += c.selection_recall;
        return cells.empty() ? 0.0 : s / static_cast<double>(cells.size());
    }
};

inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t li, std::size_t di) {
    // splitmix64 finalizer over the combined index
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (1 + li * 1315423911ull + di);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

struct SampleOutcome {
    bool hit = false;
    double selection_recall = 0;
    std::string output;
    WorkStats stats;
};

inline SampleOutcome run_planted_sample(const Model& model, const Tokenizer& tok, const PlantedSample& sample,
                                        const PipelineConfig& cfg, Method method, std::size_t max_new_tokens) {
    PrefillResult pr = run_prefill(model, sample.tokens, cfg, method);
    SampleOutcome out;
    std::size_t gold = 0;
    std::size_t kept = 0;
    for (std::size_t i = 0; i < sample.gold_mask.size(); ++i) {
        if (!sample.gold_mask[i]) continue;
        ++gold;
        kept += pr.selection.contains(i) ? 1 : 0;
    }
    out.selection_recall = gold ? static_cast<double>(kept) / static_cast<double>(gold) : 0.0;
    out.output = tok.decode(generate(model, pr, max_new_tokens));
    out.hit = out.output.find(sample.answer) != std::string::npos;
    out.stats = pr.stats;
    return out;
}

inline void validate_grid(const NiahGridSpec& spec) {
    const auto increasing = [](const auto& v) {
        for (std::size_t i = 1; i < v.size(); ++i) {
            if (!(v[i - 1] < v[i])) return false;
        }
        return !v.empty();
    };
    if (!increasing(spec.lengths) || !increasing(spec.depths)) {
        throw ConfigError("grid lengths and depths must be nonempty and strictly increasing");
    }
    if (spec.samples == 0) {
        throw ConfigError("grid needs at least one sample per cell");
    }
}

// Needle-in-a-haystack grid; cells run on up to `jobs` threads.
inline NiahGridResult run_niah_grid(const Model& model, const Tokenizer& tok, std::string_view corpus,
                                    const PipelineConfig& cfg, Method method, const NiahGridSpec& spec,
                                    std::size_t jobs = 1) {
    validate_grid(spec);
    NiahGridResult res;
    res.method = std::string(to_string(method));
    res.lengths = spec.lengths;
    res.depths = spec.depths;
    res.config_snapshot = format_pipeline_config(cfg);
    res.cells.resize(spec.lengths.size() * spec.depths.size());
    parallel_for(res.cells.size(), jobs, [&](std::size_t c) {
        const std::size_t li = c / spec.depths.size();
        const std::size_t di = c % spec.depths.size();
        const auto ds = gen_niah(corpus, tok, spec.needle, spec.depths[di], spec.lengths[li],
                                 cell_seed(spec.seed, li, di), spec.samples);
        NiahCell cell{spec.lengths[li], spec.depths[di], 0, 0, ds.samples.size()};
        for (const auto& s : ds.samples) {
            const auto o = run_planted_sample(model, tok, s, cfg, method, spec.max_new_tokens);
            cell.recall += o.hit ? 1.0 : 0.0;
            cell.selection_recall += o.selection_recall;
        }
        cell.recall /= static_cast<double>(cell.samples);
        cell.selection_recall /= static_cast<double>(cell.samples);
        res.cells[c] = cell;
    });
    return res;
}

inline std::string format_niah_table(const NiahGridResult& r) {
    std::ostringstream os;
    os << "method: " << r.method << "  (output recall; needle-token selection recall in brackets)\n";
    os << std::setw(8) << "length";
    for (double d : r.depths) os << std::setw(16) << (std::to_string(static_cast<int>(d)) + "%");
    os << '\n';
    os << std::fixed << std::setprecision(2);
    for (std::size_t li = 0; li < r.lengths.size(); ++li) {
        os << std::setw(8) << r.lengths[li];
        for (std::size_t di = 0; di < r.depths.size(); ++di) {
            const auto& c = r.cell(li, di);
            std::ostringstream v;
            v << std::fixed << std::setprecision(2) << c.recall << " [" << c.selection_recall << "]";
            os << std::setw(16) << v.str();
        }
        os << '\n';
    }
    return os.str();
}

inline Sidecar niah_sidecar(const NiahGridResult& r) {
    Sidecar sc;
    sc.add("method", r.method);
    sc.add("cells", r.cells.size());
    for (const auto& c : r.cells) {
        const std::string key = "cell." + std::to_string(c.length) + "." + std::to_string(static_cast<int>(c.depth));
        sc.add(key + ".recall", c.recall);
        sc.add(key + ".selection_recall", c.selection_recall);
        sc.add(key + ".samples", c.samples);
    }
    sc.add("mean_recall", r.mean_recall());
    return sc;
}

struct WorkReportRow {
    Method method;
    WorkStats stats;
    std::string output;
};

// One prefill + decode per method on the same input.
inline std::vector<WorkReportRow> work_report(const Model& model, const Tokenizer& tok,
                                              const std::vector<TokenId>& input, const PipelineConfig& cfg,
                                              const std::vector<Method>& methods, std::size_t max_new_tokens) {
    std::vector<WorkReportRow> rows;
    for (auto m : methods) {
        PrefillResult pr = run_prefill(model, input, cfg, m);
        const auto out = generate(model, pr, max_new_tokens);
        rows.push_back({m, pr.stats, tok.decode(out)});
    }
    return rows;
}

inline std::string format_work_table(const std::vector<WorkReportRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(14) << "method" << std::right << std::setw(18) << "layer_execs" << std::setw(20)
       << "attn_score_ops" << std::setw(12) << "peak_cache" << std::setw(14) << "emb_bytes" << std::setw(12)
       << "recomputed" << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(14) << to_string(r.method) << std::right << std::setw(18)
           << r.stats.layer_executions << std::setw(20) << r.stats.attention_score_ops << std::setw(12)
           << r.stats.peak_cache_entries << std::setw(14) << r.stats.embedding_store_bytes << std::setw(12)
           << r.stats.recomputed_tokens << '\n';
    }
    return os.str();
}

inline Sidecar work_sidecar(const std::vector<WorkReportRow>& rows) {
    Sidecar sc;
    for (const auto& r : rows) add_work_stats(sc, std::string(to_string(r.method)) + ".", r.stats);
    return sc;
}

struct HeadSet {
    std::string name; // selected, random, bad
    std::vector<HeadSpec> heads;
    std::uint64_t seed = 0; // for drawn sets
};

struct AblationRow {
    std::string head_set;
    EvictionPolicy policy;
    std::vector<HeadSpec> heads;
    std::uint64_t seed = 0;
    double recall = 0;
    double selection_recall = 0;
};

// REFORM under each (head set x eviction policy) on the same NIAH grid.
inline std::vector<AblationRow> run_ablation(const Model& model, const Tokenizer& tok, std::string_view corpus,
                                             const PipelineConfig& base, const std::vector<HeadSet>& head_sets,
                                             const std::vector<EvictionPolicy>& policies, const NiahGridSpec& grid,
                                             std::size_t jobs = 1) {
    std::vector<AblationRow> rows;
    for (const auto& hs : head_sets) {
        for (auto p : policies) {
            PipelineConfig cfg = base;
            cfg.selected_heads = hs.heads;
            cfg.exit_layer = 0;
            cfg.eviction = p;
            const auto r = run_niah_grid(model, tok, corpus, cfg, Method::reform, grid, jobs);
            rows.push_back({hs.name, p, hs.heads, hs.seed, r.mean_recall(), r.mean_selection_recall()});
        }
    }
    return rows;
}

inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(10) << "heads" << std::setw(14) << "policy" << std::right << std::setw(10) << "recall"
       << std::setw(12) << "sel_recall" << "  specs\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& r : rows) {
        os << std::left << std::setw(10) << r.head_set << std::setw(14) << to_string(r.policy) << std::right
           << std::setw(10) << r.recall << std::setw(12) << r.selection_recall << "  " << format_head_specs(r.heads);
        if (r.head_set == "random") os << " (seed " << r.seed << ")";
        os << '\n';
    }
    return os.str();
}

inline Sidecar ablation_sidecar(const std::vector<AblationRow>& rows) {
    Sidecar sc;
    for (const auto& r : rows) {
        const std::string key = r.head_set + "." + std::string(to_string(r.policy));
        sc.add(key + ".heads", format_head_specs(r.heads));
        if (r.head_set == "random") sc.add(key + ".seed", r.seed);
        sc.add(key + ".recall", r.recall);
        sc.add(key + ".selection_recall", r.selection_recall);
    }
    return sc;
}

} // namespace reform

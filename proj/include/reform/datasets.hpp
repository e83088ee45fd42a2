#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "reform/error.hpp"
#include "reform/random.hpp"
#include "reform/tokenizer.hpp"

namespace reform {

struct PlantedSample {
    std::vector<TokenId> tokens;
    std::vector<bool> gold_mask;     // true on planted document / needle tokens
    std::size_t question_begin = 0;  // question occupies [question_begin, tokens.size())
    std::string answer;

    std::size_t question_end() const { return tokens.size(); }
    std::vector<std::pair<std::size_t, std::size_t>> gold_ranges() const {
        std::vector<std::pair<std::size_t, std::size_t>> out;
        for (std::size_t i = 0; i < gold_mask.size(); ++i) {
            if (!gold_mask[i]) continue;
            if (!out.empty() && out.back().second == i) {
                ++out.back().second;
            } else {
                out.emplace_back(i, i + 1);
            }
        }
        return out;
    }
};

struct PlantedDataset {
    std::string kind;          // kv, niah, qa
    std::string template_text;
    std::uint64_t seed = 0;
    std::size_t target_len = 0;
    std::vector<PlantedSample> samples;
};

// Lowercase-only lexicon: no capitals, digits or '=' ever appear in the
// synthetic filler, so planted alphanumeric payloads stay unique.
inline const std::vector<std::string_view>& filler_lexicon() {
    static const std::vector<std::string_view> words = {
        "the", "of", "and", "a", "in", "river", "stone", "cloud", "maple", "quiet", "north", "ember", "light",
        "sand", "window", "garden", "morning", "paper", "silver", "orchard", "valley", "lantern", "harbor",
        "meadow", "copper", "winter", "forest", "bridge", "candle", "market", "village", "thunder", "feather",
        "marble", "island", "kettle", "ribbon", "shadow", "willow", "summer", "pebble", "basket", "mirror",
        "tunnel", "castle", "ladder", "pepper", "saddle", "timber", "velvet", "walnut", "anchor", "blossom",
        "canyon", "desert", "glacier", "horizon", "jungle", "lagoon", "mountain", "ocean", "prairie", "reef",
        "savanna", "tundra", "volcano", "was", "is", "near", "under", "over", "beside", "through", "slowly",
        "quickly", "softly", "bright", "dark", "old", "new", "small", "large", "green", "blue", "red", "golden",
        "walked", "carried", "found", "built", "painted", "watched", "opened", "closed", "followed", "remembered"};
    return words;
}

// Seeded word salad with occasional sentence breaks.
inline std::string synthetic_corpus(std::size_t n_words, std::uint64_t seed) {
    const auto& lex = filler_lexicon();
    Rng rng(seed);
    std::string out;
    for (std::size_t i = 0; i < n_words; ++i) {
        out += lex[rng.below(lex.size())];
        out += rng.below(12) == 0 ? ". " : " ";
    }
    return out;
}

namespace detail {

inline std::vector<TokenId> take_filler(const std::vector<TokenId>& corpus, std::size_t len, Rng& rng) {
    if (corpus.size() < len) {
        throw DataError("corpus has " + std::to_string(corpus.size()) + " tokens, " + std::to_string(len) +
                        " filler tokens are needed");
    }
    const auto start = static_cast<std::size_t>(rng.below(corpus.size() - len + 1));
    return {corpus.begin() + static_cast<std::ptrdiff_t>(start),
            corpus.begin() + static_cast<std::ptrdiff_t>(start + len)};
}

inline std::string random_alnum(std::size_t n, Rng& rng) {
    static constexpr std::string_view chars = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
    std::string s(n, ' ');
    for (auto& c : s) c = chars[rng.below(chars.size())];
    return s;
}

// Inserts each document into the filler at its offset (offsets are filler
// indices, ascending) and appends the question. Documents flagged gold are
// marked in the mask.
struct Planting {
    std::size_t offset;
    std::vector<TokenId> tokens;
    bool gold;
};

inline PlantedSample assemble(const std::vector<TokenId>& filler, std::vector<Planting> docs,
                              const std::vector<TokenId>& question, std::string answer) {
    std::stable_sort(docs.begin(), docs.end(),
                     [](const Planting& a, const Planting& b) { return a.offset < b.offset; });
    PlantedSample s;
    std::size_t f = 0;
    for (const auto& d : docs) {
        for (; f < d.offset; ++f) {
            s.tokens.push_back(filler[f]);
            s.gold_mask.push_back(false);
        }
        s.tokens.insert(s.tokens.end(), d.tokens.begin(), d.tokens.end());
        s.gold_mask.insert(s.gold_mask.end(), d.tokens.size(), d.gold);
    }
    for (; f < filler.size(); ++f) {
        s.tokens.push_back(filler[f]);
        s.gold_mask.push_back(false);
    }
    s.question_begin = s.tokens.size();
    s.tokens.insert(s.tokens.end(), question.begin(), question.end());
    s.gold_mask.insert(s.gold_mask.end(), question.size(), false);
    s.answer = std::move(answer);
    return s;
}

inline std::vector<TokenId> question_tokens(const Tokenizer& tok, std::string_view text) {
    std::vector<TokenId> q{special::sep};
    const auto body = tok.encode(text);
    q.insert(q.end(), body.begin(), body.end());
    return q;
}

inline std::size_t filler_budget(std::size_t target_len, std::size_t planted) {
    if (planted >= target_len) {
        throw DataError("target length " + std::to_string(target_len) + " cannot hold " + std::to_string(planted) +
                        " planted tokens");
    }
    return target_len - planted;
}

} // namespace detail

inline constexpr std::string_view kKvTemplate = "The value corresponding to the id {key} is {value}.";

// Key-value pattern matching: n_pairs template sentences with random
// 10-character keys and values at random filler offsets; the question asks
// for one of them. Each sample is exactly target_len tokens.
inline PlantedDataset gen_kv_dataset(std::string_view corpus, const Tokenizer& tok, std::size_t n_pairs,
                                     std::size_t target_len, std::uint64_t seed, std::size_t n_samples = 1) {
    if (n_pairs == 0) {
        throw DataError("n_pairs must be positive");
    }
    const auto corpus_tokens = tok.encode(corpus);
    PlantedDataset ds{"kv", std::string(kKvTemplate), seed, target_len, {}};
    Rng rng(seed);
    for (std::size_t s = 0; s < n_samples; ++s) {
        std::vector<std::string> keys;
        std::vector<std::string> values;
        while (keys.size() < n_pairs) {
            auto k = detail::random_alnum(10, rng);
            if (std::find(keys.begin(), keys.end(), k) != keys.end()) continue;
            keys.push_back(std::move(k));
            values.push_back(detail::random_alnum(10, rng));
        }
        const auto target = static_cast<std::size_t>(rng.below(n_pairs));
        const auto question =
            detail::question_tokens(tok, "What is the value corresponding to the id " + keys[target] + "? The value is");
        std::vector<detail::Planting> docs;
        std::size_t planted = question.size();
        for (std::size_t p = 0; p < n_pairs; ++p) {
            auto t = tok.encode("The value corresponding to the id " + keys[p] + " is " + values[p] + ".");
            planted += t.size();
            docs.push_back({0, std::move(t), p == target});
        }
        const std::size_t filler_len = detail::filler_budget(target_len, planted);
        const auto filler = detail::take_filler(corpus_tokens, filler_len, rng);
        for (auto& d : docs) d.offset = static_cast<std::size_t>(rng.below(filler_len + 1));
        ds.samples.push_back(detail::assemble(filler, std::move(docs), question, values[target]));
    }
    return ds;
}

struct NiahSpec {
    std::string needle;
    std::string question;
    std::string answer; // payload expected in the output
};

inline NiahSpec default_niah_spec() {
    return {"The best thing to do in San Francisco is eat a sandwich and sit in Dolores Park on a sunny day.",
            "What is the best thing to do in San Francisco? The best thing to do in San Francisco is",
            "eat a sandwich and sit in Dolores Park"};
}

// Needle that the probe model can recall: the question is the needle's own
// prefix, and the payload is what followed it.
inline NiahSpec probe_niah_spec() { return {"X7QZ=M3RP9", "X7QZ=", "M3RP9"}; }

// Needle inserted at floor(depth/100 * filler_len) of the filler; the
// question (led by a separator token) closes the sample. Exactly target_len tokens.
inline PlantedDataset gen_niah(std::string_view corpus, const Tokenizer& tok, const NiahSpec& spec,
                               double depth_percent, std::size_t target_len, std::uint64_t seed,
                               std::size_t n_samples = 1) {
    if (!(depth_percent >= 0.0 && depth_percent <= 100.0)) {
        throw DataError("needle depth must lie in [0, 100]");
    }
    const auto corpus_tokens = tok.encode(corpus);
    const auto needle = tok.encode(spec.needle);
    const auto question = detail::question_tokens(tok, spec.question);
    const std::size_t filler_len = detail::filler_budget(target_len, needle.size() + question.size());
    const auto offset = static_cast<std::size_t>(std::floor(depth_percent / 100.0 * static_cast<double>(filler_len)));
    PlantedDataset ds{"niah", spec.needle, seed, target_len, {}};
    Rng rng(seed);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const auto filler = detail::take_filler(corpus_tokens, filler_len, rng);
        ds.samples.push_back(detail::assemble(filler, {{offset, needle, true}}, question, spec.answer));
    }
    return ds;
}

struct QaItem {
    std::vector<std::string> documents; // gold documents, all planted
    std::string question;
    std::string answer;
};

// Two-hop items: a person's birth city, and that city's country.
inline std::vector<QaItem> synthetic_qa_items(std::size_t count, std::uint64_t seed) {
    static constexpr std::string_view syllables[] = {"ka", "lo", "mi", "ren", "sa", "tor", "vi", "dun",
                                                     "el", "ba", "qui", "zan", "mor", "pe", "lin", "gra"};
    Rng rng(seed);
    const auto name = [&](std::size_t parts) {
        std::string s;
        for (std::size_t i = 0; i < parts; ++i) s += syllables[rng.below(std::size(syllables))];
        s[0] = static_cast<char>(s[0] - 'a' + 'A');
        return s;
    };
    std::vector<QaItem> items;
    for (std::size_t i = 0; i < count; ++i) {
        const auto person = name(3);
        const auto city = name(2) + "ville";
        const auto country = name(3) + "ia";
        items.push_back({{person + " was born in the city of " + city + ".",
                          "The city of " + city + " is located in the country of " + country + "."},
                         "In which country was " + person + " born? " + person + " was born in the country of",
                         country});
    }
    return items;
}

// Planted-document QA: one item per sample, its documents at random filler
// offsets (order shuffled), question appended.
inline PlantedDataset gen_qa_dataset(std::string_view corpus, const Tokenizer& tok, const std::vector<QaItem>& items,
                                     std::size_t target_len, std::uint64_t seed, std::size_t n_samples = 1) {
    if (items.empty()) {
        throw DataError("no QA items supplied");
    }
    const auto corpus_tokens = tok.encode(corpus);
    PlantedDataset ds{"qa", "documents + question", seed, target_len, {}};
    Rng rng(seed);
    for (std::size_t s = 0; s < n_samples; ++s) {
        const auto& item = items[rng.below(items.size())];
        const auto question = detail::question_tokens(tok, item.question);
        std::vector<detail::Planting> docs;
        std::size_t planted = question.size();
        for (const auto& d : item.documents) {
            auto t = tok.encode(d);
            planted += t.size();
            docs.push_back({0, std::move(t), true});
        }
        rng.shuffle(docs);
        const std::size_t filler_len = detail::filler_budget(target_len, planted);
        const auto filler = detail::take_filler(corpus_tokens, filler_len, rng);
        for (auto& d : docs) d.offset = static_cast<std::size_t>(rng.below(filler_len + 1));
        ds.samples.push_back(detail::assemble(filler, std::move(docs), question, item.answer));
    }
    return ds;
}

// Spill format, one record per line:
//   tokens=<id,id,...>\tgold=<b-e;b-e>\tquestion=<b-e>\tanswer=<escaped text>
// Lines starting with '#' carry dataset metadata.
namespace detail {

inline std::string escape_field(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\t': out += "\\t"; break;
        case '\n': out += "\\n"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string unescape_field(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size()) {
            const char n = s[++i];
            out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
        } else {
            out += s[i];
        }
    }
    return out;
}

inline std::size_t parse_spill_number(std::string_view s, std::size_t lineno) {
    std::size_t v = 0;
    if (s.empty()) throw FormatError("dataset line " + std::to_string(lineno) + ": empty number");
    for (char c : s) {
        if (c < '0' || c > '9') throw FormatError("dataset line " + std::to_string(lineno) + ": bad number");
        v = v * 10 + static_cast<std::size_t>(c - '0');
    }
    return v;
}

inline std::pair<std::size_t, std::size_t> parse_range(std::string_view s, std::size_t lineno) {
    const auto dash = s.find('-');
    if (dash == std::string_view::npos) throw FormatError("dataset line " + std::to_string(lineno) + ": bad range");
    return {parse_spill_number(s.substr(0, dash), lineno), parse_spill_number(s.substr(dash + 1), lineno)};
}

} // namespace detail

inline std::string encode_dataset(const PlantedDataset& ds) {
    std::ostringstream os;
    os << "# kind=" << ds.kind << " seed=" << ds.seed << " target_len=" << ds.target_len
       << " template=" << detail::escape_field(ds.template_text) << '\n';
    for (const auto& s : ds.samples) {
        os << "tokens=";
        for (std::size_t i = 0; i < s.tokens.size(); ++i) os << (i ? "," : "") << s.tokens[i];
        os << "\tgold=";
        const auto ranges = s.gold_ranges();
        for (std::size_t i = 0; i < ranges.size(); ++i) os << (i ? ";" : "") << ranges[i].first << '-' << ranges[i].second;
        os << "\tquestion=" << s.question_begin << '-' << s.question_end()
           << "\tanswer=" << detail::escape_field(s.answer) << '\n';
    }
    return os.str();
}

inline PlantedDataset decode_dataset(std::string_view text) {
    PlantedDataset ds;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream meta(line.substr(1));
            std::string kv;
            while (meta >> kv) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) continue;
                const auto key = kv.substr(0, eq);
                const auto val = kv.substr(eq + 1);
                if (key == "kind") ds.kind = val;
                else if (key == "seed") ds.seed = detail::parse_spill_number(val, lineno);
                else if (key == "target_len") ds.target_len = detail::parse_spill_number(val, lineno);
                else if (key == "template") {
                    std::string rest;
                    std::getline(meta, rest);
                    ds.template_text = detail::unescape_field(val + rest);
                }
            }
            continue;
        }
        PlantedSample s;
        std::vector<std::pair<std::size_t, std::size_t>> gold;
        std::pair<std::size_t, std::size_t> question{0, 0};
        bool seen_tokens = false;
        bool seen_question = false;
        std::string_view rest = line;
        while (!rest.empty()) {
            const auto tab = rest.find('\t');
            const auto field = rest.substr(0, tab);
            rest = tab == std::string_view::npos ? std::string_view{} : rest.substr(tab + 1);
            const auto eq = field.find('=');
            if (eq == std::string_view::npos) {
                throw FormatError("dataset line " + std::to_string(lineno) + ": field without '='");
            }
            const auto key = field.substr(0, eq);
            const auto val = field.substr(eq + 1);
            if (key == "tokens") {
                seen_tokens = true;
                std::size_t p = 0;
                while (p <= val.size() && !val.empty()) {
                    const auto comma = val.find(',', p);
                    const auto end = comma == std::string_view::npos ? val.size() : comma;
                    s.tokens.push_back(static_cast<TokenId>(detail::parse_spill_number(val.substr(p, end - p), lineno)));
                    if (comma == std::string_view::npos) break;
                    p = comma + 1;
                }
            } else if (key == "gold") {
                std::size_t p = 0;
                while (p < val.size()) {
                    const auto semi = val.find(';', p);
                    const auto end = semi == std::string_view::npos ? val.size() : semi;
                    gold.push_back(detail::parse_range(val.substr(p, end - p), lineno));
                    if (semi == std::string_view::npos) break;
                    p = semi + 1;
                }
            } else if (key == "question") {
                question = detail::parse_range(val, lineno);
                seen_question = true;
            } else if (key == "answer") {
                s.answer = detail::unescape_field(val);
            } else {
                throw FormatError("dataset line " + std::to_string(lineno) + ": unknown field '" + std::string(key) + "'");
            }
        }
        if (!seen_tokens || !seen_question || question.second != s.tokens.size() || question.first > question.second) {
            throw FormatError("dataset line " + std::to_string(lineno) + ": question span must end the token stream");
        }
        s.question_begin = question.first;
        s.gold_mask.assign(s.tokens.size(), false);
        for (const auto& [b, e] : gold) {
            if (b > e || e > s.tokens.size()) {
                throw FormatError("dataset line " + std::to_string(lineno) + ": gold range out of bounds");
            }
            for (std::size_t i = b; i < e; ++i) s.gold_mask[i] = true;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline void save_dataset(const std::filesystem::path& path, const PlantedDataset& ds) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write dataset file " + path.string());
    out << encode_dataset(ds);
    if (!out) throw IoError("write failed for dataset file " + path.string());
}

inline PlantedDataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_dataset(ss.str());
}

} // namespace reform

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "reform/error.hpp"

namespace reform {

using TokenId = std::uint32_t;

namespace special {
inline constexpr TokenId pad = 256;
inline constexpr TokenId bos = 257;
inline constexpr TokenId eos = 258;
inline constexpr TokenId sep = 259;
inline constexpr TokenId first = 256;
inline constexpr TokenId end = 264; // 260..263 reserved
} // namespace special

inline constexpr std::uint64_t kByteVocabSize = special::end;

inline bool is_special(TokenId t) { return t >= special::first && t < special::end; }

// Byte-level tokenizer by default: ids 0..255 are raw bytes, 256..263 are
// specials. An external vocab file (one token string per line, with \n, \t
// and \\ escapes) switches to greedy longest-match over the listed strings;
// specials keep their fixed ids and vocab lines are numbered from 264.
class Tokenizer {
public:
    Tokenizer() = default;

    static Tokenizer from_vocab_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw IoError("cannot open vocab file '" + path.string() + "'");
        }
        Tokenizer tok;
        std::string line;
        while (std::getline(in, line)) {
            std::string piece = unescape(line);
            if (piece.empty()) {
                throw FormatError("vocab file '" + path.string() + "' has an empty token line");
            }
            const auto id = static_cast<TokenId>(special::end + tok.pieces_.size());
            tok.lookup_.emplace(piece, id);
            tok.max_piece_ = std::max(tok.max_piece_, piece.size());
            tok.pieces_.push_back(std::move(piece));
        }
        return tok;
    }

    std::uint64_t vocab_size() const { return special::end + pieces_.size(); }
    bool byte_level() const { return pieces_.empty(); }

    std::vector<TokenId> encode(std::string_view text) const {
        std::vector<TokenId> out;
        out.reserve(text.size());
        if (byte_level()) {
            for (unsigned char c : text) {
                out.push_back(c);
            }
            return out;
        }
        std::size_t i = 0;
        while (i < text.size()) {
            std::optional<TokenId> hit;
            std::size_t hit_len = 0;
            for (std::size_t len = std::min(max_piece_, text.size() - i); len > 0; --len) {
                if (auto it = lookup_.find(std::string(text.substr(i, len))); it != lookup_.end()) {
                    hit = it->second;
                    hit_len = len;
                    break;
                }
            }
            if (!hit) {
                throw InputError("text at byte " + std::to_string(i) + " is not covered by the vocab");
            }
            out.push_back(*hit);
            i += hit_len;
        }
        return out;
    }

    // Like encode, but the literal markers <|sep|>, <|bos|> and <|eos|> map
    // to their special ids. Used for prompt files.
    std::vector<TokenId> encode_marked(std::string_view text) const {
        static constexpr std::pair<std::string_view, TokenId> markers[] = {
            {"<|sep|>", special::sep}, {"<|bos|>", special::bos}, {"<|eos|>", special::eos}};
        std::vector<TokenId> out;
        std::size_t start = 0;
        std::size_t i = 0;
        while (i < text.size()) {
            bool matched = false;
            for (const auto& [m, id] : markers) {
                if (text.substr(i, m.size()) == m) {
                    const auto part = encode(text.substr(start, i - start));
                    out.insert(out.end(), part.begin(), part.end());
                    out.push_back(id);
                    i += m.size();
                    start = i;
                    matched = true;
                    break;
                }
            }
            if (!matched) ++i;
        }
        const auto part = encode(text.substr(start));
        out.insert(out.end(), part.begin(), part.end());
        return out;
    }

    // Specials decode to nothing.
    std::string decode(const std::vector<TokenId>& tokens) const {
        std::string out;
        for (TokenId t : tokens) {
            if (is_special(t)) {
                continue;
            }
            if (byte_level()) {
                if (t < 256) {
                    out.push_back(static_cast<char>(t));
                }
            } else if (t >= special::end && t - special::end < pieces_.size()) {
                out += pieces_[t - special::end];
            }
        }
        return out;
    }

private:
    static std::string unescape(std::string_view s) {
        std::string out;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '\\' && i + 1 < s.size()) {
                const char n = s[++i];
                out.push_back(n == 'n' ? '\n' : n == 't' ? '\t' : n);
            } else {
                out.push_back(s[i]);
            }
        }
        return out;
    }

    std::vector<std::string> pieces_;
    std::unordered_map<std::string, TokenId> lookup_;
    std::size_t max_piece_ = 0;
};

} // namespace reform

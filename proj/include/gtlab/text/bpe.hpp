#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

namespace gtlab::text {

class VocabError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ids 0..255 are raw bytes, then special tokens, then one id per merge in
// merge order. encode() never emits a special id, so any byte string
// round-trips exactly.
struct Vocabulary {
  std::vector<std::pair<std::int32_t, std::int32_t>> merges;
  std::vector<std::string> id_to_token;
  std::vector<std::string> specials;

  std::size_t vocab_size() const { return id_to_token.size(); }
  std::size_t first_merge_id() const { return 256 + specials.size(); }

  std::int32_t special_id(std::string_view name) const {
    for (std::size_t i = 0; i < specials.size(); ++i) {
      if (specials[i] == name) {
        return static_cast<std::int32_t>(256 + i);
      }
    }
    throw VocabError("unknown special token " + std::string(name));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.merges == b.merges && a.id_to_token == b.id_to_token && a.specials == b.specials;
  }
};

inline constexpr std::string_view kEndOfText = "<|endoftext|>";

namespace detail {

enum class CharClass { space, newline, alpha, digit, punct };

inline CharClass char_class(unsigned char c) {
  if (c == '\n') return CharClass::newline;
  if (c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f') return CharClass::space;
  if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) return CharClass::alpha;
  if (c >= '0' && c <= '9') return CharClass::digit;
  return CharClass::punct;
}

inline std::uint64_t pair_key(std::int32_t a, std::int32_t b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

}  // namespace detail

// Splits text into merge domains: runs of one character class, with a single
// preceding space glued onto the run that follows it. Chunks concatenate back
// to the input exactly.
inline std::vector<std::string_view> pretokenize(std::string_view text) {
  using detail::CharClass;
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto cls = [&](std::size_t k) { return detail::char_class(static_cast<unsigned char>(text[k])); };
  auto wordish = [](CharClass c) { return c != CharClass::space && c != CharClass::newline; };
  while (i < n) {
    const std::size_t start = i;
    CharClass c = cls(i);
    if (text[i] == ' ' && i + 1 < n && wordish(cls(i + 1))) {
      ++i;
      c = cls(i);
    } else if (c == CharClass::space) {
      while (i < n && cls(i) == CharClass::space &&
             !(text[i] == ' ' && i + 1 < n && wordish(cls(i + 1)) && i > start)) {
        ++i;
      }
      out.push_back(text.substr(start, i - start));
      continue;
    }
    while (i < n && cls(i) == c) {
      ++i;
    }
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

// Deterministic BPE training: the most frequent adjacent pair wins, ties go to
// the smallest (left id, right id). Stops early when no pair remains.
inline Vocabulary train_tokenizer(const std::vector<std::string>& corpus, std::size_t vocab_size,
                                  std::vector<std::string> specials = {std::string(kEndOfText)}) {
  if (corpus.empty()) {
    throw VocabError("tokenizer corpus is empty");
  }
  Vocabulary vocab;
  vocab.specials = std::move(specials);
  for (int b = 0; b < 256; ++b) {
    vocab.id_to_token.emplace_back(1, static_cast<char>(b));
  }
  for (const auto& s : vocab.specials) {
    vocab.id_to_token.push_back(s);
  }
  if (vocab_size < vocab.id_to_token.size()) {
    throw VocabError("vocab_size " + std::to_string(vocab_size) + " is below the base alphabet of " +
                     std::to_string(vocab.id_to_token.size()));
  }

  std::map<std::string, std::int64_t> counts;  // ordered for determinism
  for (const auto& doc : corpus) {
    for (auto chunk : pretokenize(doc)) {
      ++counts[std::string(chunk)];
    }
  }
  std::vector<std::vector<std::int32_t>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [w, c] : counts) {
    std::vector<std::int32_t> ids;
    for (unsigned char ch : w) {
      ids.push_back(ch);
    }
    words.push_back(std::move(ids));
    freq.push_back(c);
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_count;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t k = 0; k + 1 < words[w].size(); ++k) {
      const auto key = detail::pair_key(words[w][k], words[w][k + 1]);
      pair_count[key] += freq[w];
      where[key].push_back(w);
    }
  }
  // Max-heap on count, then min key.
  using Entry = std::pair<std::int64_t, std::uint64_t>;
  auto worse = [](const Entry& a, const Entry& b) {
    return a.first != b.first ? a.first < b.first : a.second > b.second;
  };
  std::priority_queue<Entry, std::vector<Entry>, decltype(worse)> heap(worse);
  for (const auto& [k, c] : pair_count) {
    heap.push({c, k});
  }

  while (vocab.id_to_token.size() < vocab_size && !heap.empty()) {
    const auto [cnt, key] = heap.top();
    heap.pop();
    const auto it = pair_count.find(key);
    if (it == pair_count.end() || it->second != cnt || cnt <= 0) {
      continue;  // stale
    }
    const auto a = static_cast<std::int32_t>(key >> 32);
    const auto b = static_cast<std::int32_t>(key & 0xffffffffu);
    const auto z = static_cast<std::int32_t>(vocab.id_to_token.size());
    vocab.merges.emplace_back(a, b);
    vocab.id_to_token.push_back(vocab.id_to_token[a] + vocab.id_to_token[b]);

    auto affected = std::move(where[key]);
    where.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    std::unordered_set<std::uint64_t> touched;
    for (auto w : affected) {
      auto& ids = words[w];
      for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
        const auto pk = detail::pair_key(ids[k], ids[k + 1]);
        pair_count[pk] -= freq[w];
        touched.insert(pk);
      }
      std::vector<std::int32_t> merged;
      merged.reserve(ids.size());
      for (std::size_t k = 0; k < ids.size(); ++k) {
        if (k + 1 < ids.size() && ids[k] == a && ids[k + 1] == b) {
          merged.push_back(z);
          ++k;
        } else {
          merged.push_back(ids[k]);
        }
      }
      ids = std::move(merged);
      for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
        const auto pk = detail::pair_key(ids[k], ids[k + 1]);
        pair_count[pk] += freq[w];
        touched.insert(pk);
        if (ids[k] == z || ids[k + 1] == z) {
          where[pk].push_back(w);
        }
      }
    }
    pair_count.erase(key);
    for (auto pk : touched) {
      const auto pc = pair_count.find(pk);
      if (pc == pair_count.end()) {
        continue;
      }
      if (pc->second <= 0) {
        pair_count.erase(pc);
      } else {
        heap.push({pc->second, pk});
      }
    }
  }
  return vocab;
}

class Tokenizer {
 public:
  explicit Tokenizer(Vocabulary vocab) : vocab_(std::move(vocab)) {
    if (vocab_.id_to_token.size() != vocab_.first_merge_id() + vocab_.merges.size()) {
      throw VocabError("vocabulary table does not match its merge list");
    }
    for (std::size_t r = 0; r < vocab_.merges.size(); ++r) {
      const auto [a, b] = vocab_.merges[r];
      const auto z = static_cast<std::int32_t>(vocab_.first_merge_id() + r);
      if (a < 0 || b < 0 || a >= z || b >= z) {
        throw VocabError("merge " + std::to_string(r) + " references an undefined id");
      }
      rank_.emplace(detail::pair_key(a, b), static_cast<std::int32_t>(r));
    }
  }

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t vocab_size() const { return vocab_.vocab_size(); }

  std::vector<std::int32_t> encode(std::string_view text) const {
    std::vector<std::int32_t> out;
    std::vector<std::int32_t> ids;
    for (auto chunk : pretokenize(text)) {
      ids.clear();
      for (unsigned char ch : chunk) {
        ids.push_back(ch);
      }
      for (;;) {
        std::int32_t best = -1;
        for (std::size_t k = 0; k + 1 < ids.size(); ++k) {
          const auto it = rank_.find(detail::pair_key(ids[k], ids[k + 1]));
          if (it != rank_.end() && (best < 0 || it->second < best)) {
            best = it->second;
          }
        }
        if (best < 0) {
          break;
        }
        const auto [a, b] = vocab_.merges[static_cast<std::size_t>(best)];
        const auto z = static_cast<std::int32_t>(vocab_.first_merge_id()) + best;
        std::size_t w = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (k + 1 < ids.size() && ids[k] == a && ids[k + 1] == b) {
            ids[w++] = z;
            ++k;
          } else {
            ids[w++] = ids[k];
          }
        }
        ids.resize(w);
      }
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  std::string decode(std::span<const std::int32_t> ids) const {
    std::string out;
    for (auto id : ids) {
      out += token(id);
    }
    return out;
  }

  const std::string& token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.id_to_token.size()) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
    }
    return vocab_.id_to_token[static_cast<std::size_t>(id)];
  }

  std::int32_t special_id(std::string_view name) const { return vocab_.special_id(name); }

 private:
  Vocabulary vocab_;
  std::unordered_map<std::uint64_t, std::int32_t> rank_;
};

namespace detail {

// Printable ASCII except backslash is kept; every other byte becomes \xHH.
inline std::string escape_bytes(std::string_view s) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    if (c >= 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

inline std::string unescape_bytes(std::string_view s) {
  std::string out;
  auto nib = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw VocabError("bad escape in vocabulary token");
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\') {
      if (i + 3 >= s.size()) {
        throw VocabError("truncated escape in vocabulary token");
      }
      if (s[i + 1] != 'x') {
        throw VocabError("bad escape in vocabulary token");
      }
      out.push_back(static_cast<char>(nib(s[i + 2]) * 16 + nib(s[i + 3])));
      i += 3;
    } else {
      out.push_back(s[i]);
    }
  }
  return out;
}

}  // namespace detail

inline nlohmann::json vocab_to_json(const Vocabulary& v) {
  auto merges = nlohmann::json::array();
  for (const auto& [a, b] : v.merges) {
    merges.push_back({a, b});
  }
  auto tokens = nlohmann::json::array();
  for (const auto& t : v.id_to_token) {
    tokens.push_back(detail::escape_bytes(t));
  }
  return {{"format", "gtlab-vocab"}, {"version", 1},        {"vocab_size", v.vocab_size()},
          {"byte_fallback", true},   {"specials", v.specials}, {"merges", merges},
          {"tokens", tokens}};
}

inline Vocabulary vocab_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "gtlab-vocab" || j.value("version", 0) != 1) {
    throw VocabError("not a version 1 gtlab vocabulary");
  }
  Vocabulary v;
  v.specials = j.at("specials").get<std::vector<std::string>>();
  for (const auto& m : j.at("merges")) {
    v.merges.emplace_back(m.at(0).get<std::int32_t>(), m.at(1).get<std::int32_t>());
  }
  for (const auto& t : j.at("tokens")) {
    v.id_to_token.push_back(detail::unescape_bytes(t.get<std::string>()));
  }
  if (j.at("vocab_size").get<std::size_t>() != v.id_to_token.size()) {
    throw VocabError("vocab_size does not match the token table");
  }
  // The table is derivable from the merges; reject files where they disagree.
  for (int b = 0; b < 256; ++b) {
    if (v.id_to_token.at(static_cast<std::size_t>(b)) != std::string(1, static_cast<char>(b))) {
      throw VocabError("byte table corrupted");
    }
  }
  for (std::size_t r = 0; r < v.merges.size(); ++r) {
    const auto [a, b] = v.merges[r];
    const auto z = v.first_merge_id() + r;
    if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= z || static_cast<std::size_t>(b) >= z ||
        z >= v.id_to_token.size() ||
        v.id_to_token[z] != v.id_to_token[static_cast<std::size_t>(a)] +
                                v.id_to_token[static_cast<std::size_t>(b)]) {
      throw VocabError("merge " + std::to_string(r) + " disagrees with the token table");
    }
  }
  return v;
}

inline void save_vocab(const Vocabulary& v, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw VocabError("cannot write " + path.string());
  }
  out << vocab_to_json(v).dump(1) << '\n';
}

inline Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw VocabError("cannot open " + path.string());
  }
  try {
    return vocab_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw VocabError(path.string() + ": " + e.what());
  }
}

}  // namespace gtlab::text

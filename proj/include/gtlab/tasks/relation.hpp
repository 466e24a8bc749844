#pragma once

#include <algorithm>
#include <cctype>
#include <compare>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gtlab::tasks {

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Triplet {
  std::string head;
  std::string tail;
  std::string relation;
  auto operator<=>(const Triplet&) const = default;
};

using TripletSet = std::set<Triplet>;

inline constexpr std::string_view kNoRelation = "no relation";
inline constexpr std::string_view kClauseStart = "the relation between [";
inline constexpr std::string_view kClauseMid = "] and [";
inline constexpr std::string_view kClauseRel = "] is [";
inline constexpr std::string_view kClauseSep = "; ";

// Trim, collapse internal whitespace, ASCII case-fold.
inline std::string normalize_field(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) {
      out.push_back(' ');
      space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

inline Triplet normalize(const Triplet& t) {
  return {normalize_field(t.head), normalize_field(t.tail), normalize_field(t.relation)};
}

inline bool is_valid(const Triplet& t) {
  return !normalize_field(t.head).empty() && !normalize_field(t.tail).empty() &&
         !normalize_field(t.relation).empty();
}

namespace detail {

inline std::string escape_field(std::string_view s) {
  std::string out;
  for (char c : s) {
    out.push_back(c);
    if (c == ']' || c == '[') {
      out.push_back(c);
    }
  }
  return out;
}

// Reads an escaped field starting at pos; on success pos is left on the
// closing ']' (the single one that ends the field). A lone '[' means a new
// clause started inside what looked like a field, so the field is broken.
inline bool read_field(std::string_view text, std::size_t& pos, std::string& out) {
  out.clear();
  while (pos < text.size()) {
    if (text[pos] == '[') {
      if (pos + 1 < text.size() && text[pos + 1] == '[') {
        out.push_back('[');
        pos += 2;
        continue;
      }
      return false;
    }
    if (text[pos] == ']') {
      if (pos + 1 < text.size() && text[pos + 1] == ']') {
        out.push_back(']');
        pos += 2;
        continue;
      }
      return true;
    }
    out.push_back(text[pos++]);
  }
  return false;
}

inline bool expect(std::string_view text, std::size_t& pos, std::string_view lit) {
  if (text.substr(pos, lit.size()) != lit) {
    return false;
  }
  pos += lit.size();
  return true;
}

}  // namespace detail

// "the relation between [H] and [T] is [R]" per triplet, joined by "; ";
// literal brackets inside a field are doubled.
template <typename Range>
std::string serialize_triplets(const Range& triplets) {
  std::string out;
  for (const Triplet& t : triplets) {
    if (!is_valid(t)) {
      throw TaskError("triplet has an empty field");
    }
    if (!out.empty()) {
      out += kClauseSep;
    }
    out += kClauseStart;
    out += detail::escape_field(t.head);
    out += kClauseMid;
    out += detail::escape_field(t.tail);
    out += kClauseRel;
    out += detail::escape_field(t.relation);
    out += ']';
  }
  return out.empty() ? std::string(kNoRelation) : out;
}

struct ParseResult {
  TripletSet triplets;
  std::size_t malformed_regions = 0;
  std::vector<std::string> diagnostics;
};

// Lenient parser for model output. Text between well-formed clauses that is
// not just separators (whitespace, ';', '.', or the "no relation" sentinel)
// counts as one malformed region.
inline ParseResult parse_triplets(std::string_view text) {
  ParseResult r;
  auto note_gap = [&](std::size_t b, std::size_t e) {
    auto norm = normalize_field(text.substr(b, e - b));
    const auto first = norm.find_first_not_of(" ;.");
    if (first == std::string::npos) {
      return;
    }
    norm = norm.substr(first, norm.find_last_not_of(" ;.") - first + 1);
    if (norm == kNoRelation) {
      return;
    }
    ++r.malformed_regions;
    r.diagnostics.push_back("malformed text at offset " + std::to_string(b) + ": '" +
                            std::string(text.substr(b, std::min<std::size_t>(e - b, 60))) + "'");
  };

  std::size_t pos = 0;
  std::size_t gap_start = 0;
  while (pos < text.size()) {
    const auto at = text.find(kClauseStart, pos);
    if (at == std::string_view::npos) {
      break;
    }
    std::size_t p = at + kClauseStart.size();
    Triplet t;
    const bool ok = detail::read_field(text, p, t.head) && detail::expect(text, p, kClauseMid) &&
                    detail::read_field(text, p, t.tail) && detail::expect(text, p, kClauseRel) &&
                    detail::read_field(text, p, t.relation) && detail::expect(text, p, "]") &&
                    is_valid(t);
    if (!ok) {
      pos = at + 1;  // the broken clause stays inside the current gap
      continue;
    }
    note_gap(gap_start, at);
    r.triplets.insert(std::move(t));
    pos = p;
    gap_start = p;
  }
  note_gap(gap_start, text.size());
  return r;
}

struct ReScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  // Empty predictions score precision 0; empty gold scores recall 0; only
  // the both-empty case counts as perfect.
  static ReScore from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    ReScore s{0, 0, 0, tp, fp, fn};
    if (tp + fp + fn == 0) {
      s.precision = s.recall = s.f1 = 1.0;
      return s;
    }
    s.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = s.precision + s.recall > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    return s;
  }
};

struct ReCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

inline ReCounts count_matches(const TripletSet& gold, const TripletSet& pred) {
  TripletSet g;
  TripletSet p;
  for (const auto& t : gold) g.insert(normalize(t));
  for (const auto& t : pred) p.insert(normalize(t));
  ReCounts c;
  for (const auto& t : p) {
    if (g.count(t)) {
      ++c.tp;
    } else {
      ++c.fp;
    }
  }
  c.fn = g.size() - c.tp;
  return c;
}

// Exact match on normalized fields; duplicates collapse before counting.
inline ReScore score_re(const TripletSet& gold, const TripletSet& pred) {
  const auto c = count_matches(gold, pred);
  return ReScore::from_counts(c.tp, c.fp, c.fn);
}

// Micro-averaged over documents.
inline ReScore score_re_micro(const std::vector<std::pair<TripletSet, TripletSet>>& docs) {
  ReCounts total;
  for (const auto& [gold, pred] : docs) {
    const auto c = count_matches(gold, pred);
    total.tp += c.tp;
    total.fp += c.fp;
    total.fn += c.fn;
  }
  return ReScore::from_counts(total.tp, total.fp, total.fn);
}

struct ReExample {
  std::string text;
  TripletSet gold;
};

inline void to_json(nlohmann::json& j, const Triplet& t) {
  j = {{"head", t.head}, {"tail", t.tail}, {"relation", t.relation}};
}

inline void from_json(const nlohmann::json& j, Triplet& t) {
  t.head = j.at("head").get<std::string>();
  t.tail = j.at("tail").get<std::string>();
  t.relation = j.at("relation").get<std::string>();
}

// One {"text": ..., "triplets": [{head, tail, relation}, ...]} per line.
inline std::vector<ReExample> read_re_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw TaskError("cannot open " + path.string());
  }
  std::vector<ReExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ReExample ex{j.at("text").get<std::string>(), {}};
      for (const auto& t : j.at("triplets")) {
        ex.gold.insert(t.get<Triplet>());
      }
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw TaskError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline void write_re_jsonl(const std::vector<ReExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw TaskError("cannot write " + path.string());
  }
  for (const auto& ex : examples) {
    out << nlohmann::json{{"text", ex.text}, {"triplets", ex.gold}}.dump() << '\n';
  }
}

}  // namespace gtlab::tasks

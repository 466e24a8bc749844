#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gtlab/text/normalize.hpp"
#include "gtlab/util/digest.hpp"

namespace gtlab::text {

enum class Source { real, synthetic };

NLOHMANN_JSON_SERIALIZE_ENUM(Source, {{Source::real, "real"}, {Source::synthetic, "synthetic"}})

struct Section {
  std::string name;
  std::string text;
  friend bool operator==(const Section&, const Section&) = default;
};

struct NoteDocument {
  std::string doc_id;
  std::vector<Section> sections;
  Source source = Source::real;
  friend bool operator==(const NoteDocument&, const NoteDocument&) = default;
};

inline void to_json(nlohmann::json& j, const NoteDocument& d) {
  auto secs = nlohmann::json::array();
  for (const auto& s : d.sections) {
    secs.push_back({{"name", s.name}, {"text", s.text}});
  }
  j = {{"doc_id", d.doc_id}, {"sections", secs}, {"source", d.source}};
}

inline void from_json(const nlohmann::json& j, NoteDocument& d) {
  d.doc_id = j.at("doc_id").get<std::string>();
  d.source = j.value("source", Source::real);
  d.sections.clear();
  for (const auto& s : j.at("sections")) {
    d.sections.push_back({s.value("name", std::string{}), s.at("text").get<std::string>()});
  }
}

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON document per line; blank lines are skipped. doc_ids must be unique.
inline std::vector<NoteDocument> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw CorpusError("cannot open corpus " + path.string());
  }
  std::vector<NoteDocument> docs;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    NoteDocument d;
    try {
      d = nlohmann::json::parse(line).get<NoteDocument>();
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!ids.insert(d.doc_id).second) {
      throw CorpusError(path.string() + ":" + std::to_string(lineno) + ": duplicate doc_id " +
                        d.doc_id);
    }
    docs.push_back(std::move(d));
  }
  return docs;
}

inline void write_corpus(const std::vector<NoteDocument>& docs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw CorpusError("cannot write corpus " + path.string());
  }
  for (const auto& d : docs) {
    out << nlohmann::json(d).dump() << '\n';
  }
}

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; });
}

// Normalizes every section and drops sections that end up blank.
inline NoteDocument normalize_document(const NoteDocument& doc) {
  NoteDocument out{doc.doc_id, {}, doc.source};
  for (const auto& s : doc.sections) {
    auto t = normalize(s.text);
    if (!is_blank(t)) {
      out.sections.push_back({normalize(s.name), std::move(t)});
    }
  }
  return out;
}

inline std::string content_digest(const NoteDocument& doc) {
  Sha256 sha;
  for (const auto& s : doc.sections) {
    sha.update(s.name).update_pod('\0').update(s.text).update_pod('\x1e');
  }
  return sha.hex();
}

struct DedupReport {
  std::size_t empty_removed = 0;
  std::size_t duplicates_removed = 0;
};

// Normalizes, removes empty documents and keeps the first occurrence of each
// post-normalization content digest. Order of survivors is preserved.
inline std::vector<NoteDocument> dedup(const std::vector<NoteDocument>& corpus,
                                       DedupReport* report = nullptr) {
  DedupReport local;
  std::vector<NoteDocument> out;
  std::unordered_set<std::string> seen;
  for (const auto& doc : corpus) {
    auto norm = normalize_document(doc);
    if (norm.sections.empty()) {
      ++local.empty_removed;
      continue;
    }
    if (!seen.insert(content_digest(norm)).second) {
      ++local.duplicates_removed;
      continue;
    }
    out.push_back(std::move(norm));
  }
  if (report) {
    *report = local;
  }
  return out;
}

// Plain-text variant of dedup for line-oriented corpora.
inline std::vector<std::string> dedup_texts(const std::vector<std::string>& texts,
                                            DedupReport* report = nullptr) {
  DedupReport local;
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& t : texts) {
    auto norm = normalize(t);
    if (is_blank(norm)) {
      ++local.empty_removed;
      continue;
    }
    if (!seen.insert(sha256_hex(norm)).second) {
      ++local.duplicates_removed;
      continue;
    }
    out.push_back(std::move(norm));
  }
  if (report) {
    *report = local;
  }
  return out;
}

}  // namespace gtlab::text

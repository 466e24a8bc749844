#pragma once

// Synthetic corpus production: section-opening seeds, a deterministic
// seed x variant schedule, word-count targets and resumable JSONL output.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtlab/gen/sampler.hpp"
#include "gtlab/gpt/model.hpp"
#include "gtlab/numerics/rng.hpp"
#include "gtlab/text/bpe.hpp"
#include "gtlab/text/corpus.hpp"
#include "gtlab/text/normalize.hpp"
#include "gtlab/util/digest.hpp"

namespace gtlab::synth {

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kSeedTokens = 15;
inline constexpr std::size_t kMaxOutputTokens = 512;

struct SeedPrompt {
  std::string seed_id;
  std::string source_doc_id;
  std::string section_name;
  std::vector<std::int32_t> token_ids;
  std::string text;
  friend bool operator==(const SeedPrompt&, const SeedPrompt&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SeedPrompt, seed_id, source_doc_id, section_name, token_ids, text)

struct SeedReport {
  std::size_t sections = 0;
  std::size_t skipped_short = 0;
  std::size_t duplicates = 0;
};

inline std::string token_digest(std::span<const std::int32_t> ids) {
  Sha256 h;
  for (auto id : ids) {
    const auto u = static_cast<std::uint32_t>(id);
    const unsigned char b[4] = {static_cast<unsigned char>(u), static_cast<unsigned char>(u >> 8),
                                static_cast<unsigned char>(u >> 16), static_cast<unsigned char>(u >> 24)};
    h.update(b, 4);
  }
  return h.hex();
}

// One seed per section with at least kSeedTokens tokens, in corpus order.
// Later sections whose opening tokens repeat an earlier seed are dropped.
inline std::vector<SeedPrompt> extract_seeds(const std::vector<text::NoteDocument>& corpus,
                                             const text::Tokenizer& tok, SeedReport* report = nullptr) {
  SeedReport rep;
  std::set<std::string> seen;
  std::vector<SeedPrompt> out;
  for (const auto& doc : corpus) {
    for (std::size_t s = 0; s < doc.sections.size(); ++s) {
      ++rep.sections;
      auto ids = tok.encode(doc.sections[s].text);
      if (ids.size() < kSeedTokens) {
        ++rep.skipped_short;
        continue;
      }
      ids.resize(kSeedTokens);
      if (!seen.insert(token_digest(ids)).second) {
        ++rep.duplicates;
        continue;
      }
      out.push_back({doc.doc_id + "#" + std::to_string(s), doc.doc_id, doc.sections[s].name, ids, tok.decode(ids)});
    }
  }
  if (report) *report = rep;
  return out;
}

inline void write_seeds(const std::vector<SeedPrompt>& seeds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& s : seeds) out << nlohmann::json(s).dump() << '\n';
  if (!out) throw SynthError("cannot write " + path.string());
}

inline std::vector<SeedPrompt> read_seeds(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SynthError("cannot open " + path.string());
  std::vector<SeedPrompt> out;
  std::string line;
  while (std::getline(in, line)) {
    if (text::is_blank(line)) continue;
    auto s = nlohmann::json::parse(line).get<SeedPrompt>();
    if (s.token_ids.size() != kSeedTokens) throw SynthError("seed " + s.seed_id + " does not have 15 tokens");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::size_t word_count(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

struct GenerationRecord {
  std::uint64_t record_id = 0;
  std::string seed_id;
  std::uint64_t rng_seed = 0;
  double top_p = 0.9;
  double temperature = 1.2;
  std::size_t max_new_tokens = kMaxOutputTokens;
  std::string output_text;
  std::size_t output_token_count = 0;
  std::size_t word_count = 0;
  friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GenerationRecord, record_id, seed_id, rng_seed, top_p, temperature,
                                   max_new_tokens, output_text, output_token_count, word_count)

struct CorpusConfig {
  double top_p = 0.9;
  double temperature = 1.2;
  std::size_t max_new_tokens = kMaxOutputTokens;
  std::uint64_t target_words = 10'000;
  std::size_t variants_per_seed = 4;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;  // does not affect output
};

// Relative corpus sizes for a ladder of runs; multiply by a desk-scale base.
inline constexpr std::array<std::uint64_t, 4> kWordLadder{1, 5, 10, 20};

// Record r uses seed r mod n and variant r / n: every seed is visited once
// per pass, and a pass per variant.
struct ScheduleSlot {
  std::size_t seed_index;
  std::size_t variant;
};

inline ScheduleSlot schedule_slot(std::uint64_t record_id, std::size_t n_seeds) {
  return {static_cast<std::size_t>(record_id % n_seeds), static_cast<std::size_t>(record_id / n_seeds)};
}

inline std::uint64_t variant_seed(std::uint64_t base_seed, const std::string& seed_id, std::size_t variant) {
  return CounterRng::derive(CounterRng::derive(base_seed, "seed:" + seed_id), variant);
}

template <typename Real>
GenerationRecord generate_record(const Checkpoint<Real>& ckpt, const text::Tokenizer& tok,
                                 const std::vector<SeedPrompt>& seeds, const CorpusConfig& cfg,
                                 std::uint64_t record_id) {
  const auto slot = schedule_slot(record_id, seeds.size());
  const auto& seed = seeds[slot.seed_index];
  SamplerConfig sc;
  sc.top_p = cfg.top_p;
  sc.temperature = cfg.temperature;
  sc.max_new_tokens = cfg.max_new_tokens;
  sc.stop_ids = {tok.special_id(text::kEndOfText)};
  sc.rng_seed = variant_seed(cfg.base_seed, seed.seed_id, slot.variant);
  auto res = generate<Real>(ckpt, seed.token_ids, sc);
  if (res.stopped) res.tokens.pop_back();
  GenerationRecord r;
  r.record_id = record_id;
  r.seed_id = seed.seed_id;
  r.rng_seed = sc.rng_seed;
  r.top_p = sc.top_p;
  r.temperature = sc.temperature;
  r.max_new_tokens = sc.max_new_tokens;
  r.output_text = text::repair_utf8(tok.decode(res.tokens));
  r.output_token_count = res.tokens.size();
  r.word_count = word_count(r.output_text);
  return r;
}

struct CorpusStats {
  std::uint64_t records = 0;
  std::uint64_t total_words = 0;
  std::uint64_t total_tokens = 0;
  std::size_t distinct_seeds = 0;
  double duplicate_output_rate = 0.0;  // share of records whose output repeats an earlier one
  std::map<std::size_t, std::uint64_t> length_histogram;  // bucket start (tokens) -> records
  std::map<std::string, std::uint64_t> per_seed;
  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

inline constexpr std::size_t kHistogramBucket = 64;

inline CorpusStats corpus_stats(std::span<const GenerationRecord> records) {
  CorpusStats st;
  std::set<std::string> outputs;
  std::uint64_t dup = 0;
  for (const auto& r : records) {
    ++st.records;
    st.total_words += r.word_count;
    st.total_tokens += r.output_token_count;
    ++st.per_seed[r.seed_id];
    ++st.length_histogram[r.output_token_count / kHistogramBucket * kHistogramBucket];
    if (!outputs.insert(sha256_hex(r.output_text)).second) ++dup;
  }
  st.distinct_seeds = st.per_seed.size();
  st.duplicate_output_rate = st.records ? static_cast<double>(dup) / static_cast<double>(st.records) : 0.0;
  return st;
}

inline nlohmann::json stats_to_json(const CorpusStats& st) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, v] : st.length_histogram) hist[std::to_string(k)] = v;
  return {{"records", st.records},
          {"total_words", st.total_words},
          {"total_tokens", st.total_tokens},
          {"distinct_seeds", st.distinct_seeds},
          {"duplicate_output_rate", st.duplicate_output_rate},
          {"length_histogram", hist},
          {"per_seed", st.per_seed}};
}

template <typename Real>
std::string config_digest(const Checkpoint<Real>& ckpt, const text::Tokenizer& tok,
                          const std::vector<SeedPrompt>& seeds, const CorpusConfig& cfg) {
  Sha256 h;
  const nlohmann::json c = {{"top_p", cfg.top_p},
                            {"temperature", cfg.temperature},
                            {"max_new_tokens", cfg.max_new_tokens},
                            {"variants_per_seed", cfg.variants_per_seed},
                            {"base_seed", cfg.base_seed},
                            {"model", content_hash(ckpt)},
                            {"vocab", tok.vocab_size()}};
  h.update(c.dump());
  for (const auto& s : seeds) h.update(nlohmann::json(s).dump());
  return h.hex();
}

struct CorpusManifest {
  std::string config_digest;
  std::uint64_t target_words = 0;
  std::size_t n_seeds = 0;
  std::size_t variants_per_seed = 0;
  double top_p = 0;
  double temperature = 0;
  std::size_t max_new_tokens = 0;
  std::uint64_t base_seed = 0;
  CorpusStats stats;
  bool complete = false;
  std::uint64_t shortfall = 0;  // words missing when the schedule ran out
};

inline nlohmann::json manifest_to_json(const CorpusManifest& m) {
  return {{"format", "gtlab-synth-manifest"},
          {"version", 1},
          {"config_digest", m.config_digest},
          {"target_words", m.target_words},
          {"n_seeds", m.n_seeds},
          {"variants_per_seed", m.variants_per_seed},
          {"top_p", m.top_p},
          {"temperature", m.temperature},
          {"max_new_tokens", m.max_new_tokens},
          {"base_seed", m.base_seed},
          {"complete", m.complete},
          {"shortfall", m.shortfall},
          {"totals", stats_to_json(m.stats)}};
}

inline std::vector<GenerationRecord> read_records(const std::filesystem::path& path) {
  std::vector<GenerationRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (text::is_blank(line)) continue;
    out.push_back(nlohmann::json::parse(line).get<GenerationRecord>());
  }
  return out;
}

namespace detail {

inline void write_atomic(const std::filesystem::path& path, const std::string& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw SynthError("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string record_line(const GenerationRecord& r) { return nlohmann::json(r).dump() + "\n"; }

}  // namespace detail

// Output layout: <out>/records.jsonl and <out>/manifest.json. An existing
// directory with a matching config digest is resumed: records already on
// disk are kept (a torn final line is dropped) and generation continues at
// the next record id. The stream depends only on the inputs, so a resumed
// run and a fresh run produce identical files.
template <typename Real>
CorpusManifest generate_corpus(const Checkpoint<Real>& ckpt, const text::Tokenizer& tok,
                               const std::vector<SeedPrompt>& seeds, const CorpusConfig& cfg,
                               const std::filesystem::path& out_dir) {
  if (cfg.target_words < 1) throw SynthError("target_words must be at least 1");
  if (cfg.variants_per_seed < 1) throw SynthError("variants_per_seed must be at least 1");
  if (seeds.empty()) throw SynthError("no seeds");
  if (cfg.max_new_tokens > kMaxOutputTokens) throw SynthError("max_new_tokens above 512");
  for (const auto& s : seeds) {
    if (s.token_ids.size() != kSeedTokens) throw SynthError("seed " + s.seed_id + " does not have 15 tokens");
  }

  CorpusManifest m;
  m.config_digest = config_digest(ckpt, tok, seeds, cfg);
  m.target_words = cfg.target_words;
  m.n_seeds = seeds.size();
  m.variants_per_seed = cfg.variants_per_seed;
  m.top_p = cfg.top_p;
  m.temperature = cfg.temperature;
  m.max_new_tokens = cfg.max_new_tokens;
  m.base_seed = cfg.base_seed;

  std::filesystem::create_directories(out_dir);
  const auto rec_path = out_dir / "records.jsonl";
  const auto man_path = out_dir / "manifest.json";

  std::vector<GenerationRecord> records;
  if (std::filesystem::exists(man_path)) {
    std::ifstream in(man_path);
    const auto old = nlohmann::json::parse(in);
    if (old.at("config_digest").get<std::string>() != m.config_digest) {
      throw SynthError("output directory holds a corpus with a different configuration");
    }
    std::ifstream rin(rec_path);
    std::string line;
    while (std::getline(rin, line)) {
      if (rin.eof()) break;  // no trailing newline: torn write
      const auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded()) break;
      auto r = j.get<GenerationRecord>();
      if (r.record_id != records.size()) break;
      records.push_back(std::move(r));
    }
    std::string body;
    for (const auto& r : records) body += detail::record_line(r);
    detail::write_atomic(rec_path, body);
  } else {
    detail::write_atomic(rec_path, "");
  }

  std::uint64_t words = 0;
  for (const auto& r : records) words += r.word_count;
  const std::uint64_t capacity = static_cast<std::uint64_t>(seeds.size()) * cfg.variants_per_seed;
  const std::size_t workers = std::max<std::size_t>(1, cfg.workers);

  std::ofstream out(rec_path, std::ios::binary | std::ios::app);
  auto commit = [&] {
    m.stats = corpus_stats(records);
    detail::write_atomic(man_path, manifest_to_json(m).dump(2) + "\n");
  };
  while (words < cfg.target_words && records.size() < capacity) {
    const auto first = static_cast<std::uint64_t>(records.size());
    const auto last = std::min<std::uint64_t>(capacity, first + workers);
    std::vector<std::future<GenerationRecord>> batch;
    for (auto id = first; id < last; ++id) {
      batch.push_back(std::async(workers > 1 ? std::launch::async : std::launch::deferred,
                                 [&, id] { return generate_record<Real>(ckpt, tok, seeds, cfg, id); }));
    }
    // Commit in record-id order and stop at the target even mid-batch.
    for (auto& f : batch) {
      auto r = f.get();
      if (words >= cfg.target_words) continue;
      words += r.word_count;
      out << detail::record_line(r);
      out.flush();
      if (!out) throw SynthError("cannot append to " + rec_path.string());
      records.push_back(std::move(r));
    }
    commit();
  }
  m.complete = words >= cfg.target_words;
  m.shortfall = m.complete ? 0 : cfg.target_words - words;
  commit();
  if (!m.complete) {
    throw SynthError("seeds x variants exhausted after " + std::to_string(records.size()) + " records; " +
                     std::to_string(m.shortfall) + " words short of the target");
  }
  return m;
}

}  // namespace gtlab::synth

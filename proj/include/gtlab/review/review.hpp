#pragma once

// Blinded review sessions: passages of known origin are shuffled per rater,
// served without their origin, rated, and finally handed to the Turing-test
// statistics. Every mutation goes to an append-only journal (fsync'd before
// the call returns); a snapshot is written every few events so that restart
// replays only the journal tail.

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <regex>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "gtlab/eval/evalstats.hpp"
#include "gtlab/numerics/rng.hpp"
#include "gtlab/util/digest.hpp"

namespace gtlab::review {

enum class ErrorKind { invalid, not_found, conflict, finalized, incomplete };

class ReviewError : public std::runtime_error {
 public:
  ReviewError(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* error_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid: return "invalid";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::finalized: return "finalized";
    case ErrorKind::incomplete: return "incomplete";
  }
  return "error";
}

using eval::Origin;

enum class SessionState { open, finalized };
NLOHMANN_JSON_SERIALIZE_ENUM(SessionState, {{SessionState::open, "open"}, {SessionState::finalized, "finalized"}})

inline constexpr std::size_t kTokenCap = 512;
inline constexpr int kScaleMin = 1;
inline constexpr int kScaleMax = 9;

struct Passage {
  std::string text;
  std::string section_name;
};

struct ReviewItem {
  std::string item_id;
  std::string text;
  Origin hidden_origin = Origin::human;
  std::string section_name;
  friend bool operator==(const ReviewItem&, const ReviewItem&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReviewItem, item_id, text, hidden_origin, section_name)

struct Rating {
  std::string rater_id;
  std::string item_id;
  int readability = 0;
  int relevance = 0;
  Origin origin_guess = Origin::human;
  std::string submitted_at;
  friend bool operator==(const Rating&, const Rating&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Rating, rater_id, item_id, readability, relevance, origin_guess, submitted_at)

struct ReviewSession {
  std::string session_id;
  std::vector<ReviewItem> items;  // seeded interleaving of both origins
  std::vector<std::string> rater_ids;
  std::uint64_t shuffle_seed = 0;
  SessionState state = SessionState::open;
  bool partial = false;  // finalized with missing ratings
  std::string created_at;
  std::vector<Rating> ratings;  // submission order
  friend bool operator==(const ReviewSession&, const ReviewSession&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ReviewSession, session_id, items, rater_ids, shuffle_seed, state, partial,
                                   created_at, ratings)

// Removes markup: tags, entity-free angle brackets, markdown emphasis and
// headings, list bullets; collapses all whitespace to single spaces.
inline std::string strip_format(std::string_view text) {
  std::string s(text);
  s = std::regex_replace(s, std::regex("<[^<>]*>"), " ");
  s = std::regex_replace(s, std::regex(R"((^|\n)[ \t]*(#+|[-*•]|\d+[.)])[ \t]+)"), "$1");
  s = std::regex_replace(s, std::regex(R"([*_`|]+)"), "");
  s = std::regex_replace(s, std::regex(R"(\s+)"), " ");
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(' ') - b + 1);
}

using TokenCounter = std::function<std::size_t(std::string_view)>;
using Clock = std::function<std::string()>;

inline std::size_t whitespace_tokens(std::string_view s) {
  std::istringstream in{std::string(s)};
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SessionRequest {
  std::vector<Passage> ai;
  std::vector<Passage> human;
  std::vector<std::string> raters;
  std::uint64_t shuffle_seed = 0;
};

inline void to_json(nlohmann::json& j, const Passage& p) { j = {{"text", p.text}, {"section_name", p.section_name}}; }
inline void from_json(const nlohmann::json& j, Passage& p) {
  p.text = j.at("text").get<std::string>();
  p.section_name = j.value("section_name", std::string{});
}
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SessionRequest, ai, human, raters, shuffle_seed)

// Fisher-Yates driven by a counter RNG.
template <typename T>
void seeded_shuffle(std::vector<T>& v, CounterRng rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.below(i)]);
  }
}

// Indices into session.items in the order this rater sees them.
inline std::vector<std::size_t> rater_order(const ReviewSession& s, const std::string& rater) {
  std::vector<std::size_t> order(s.items.size());
  std::iota(order.begin(), order.end(), 0);
  seeded_shuffle(order, CounterRng(CounterRng::derive(s.shuffle_seed, "rater:" + rater)));
  return order;
}

struct BlindedItem {
  std::string item_id;
  std::string text;
};

struct Progress {
  std::size_t rated = 0;
  std::size_t total = 0;
};

struct NextItem {
  std::optional<BlindedItem> item;  // empty when the rater is done
  Progress progress;
};

// The only shape in which items leave the service towards raters.
inline nlohmann::json to_json(const NextItem& n) {
  nlohmann::json j{{"done", !n.item}, {"progress", {{"rated", n.progress.rated}, {"total", n.progress.total}}}};
  if (n.item) {
    j["item_id"] = n.item->item_id;
    j["text"] = n.item->text;
  }
  return j;
}

struct RatingInput {
  std::string rater_id;
  std::string item_id;
  int readability = 0;
  int relevance = 0;
  Origin origin_guess = Origin::human;
};

inline RatingInput rating_from_json(const nlohmann::json& j) {
  RatingInput r;
  try {
    r.rater_id = j.at("rater").get<std::string>();
    r.item_id = j.at("item_id").get<std::string>();
    r.readability = j.at("readability").get<int>();
    r.relevance = j.at("relevance").get<int>();
    r.origin_guess = j.at("origin_guess").get<Origin>();
    const auto g = j.at("origin_guess").get<std::string>();
    if (g != "AI" && g != "Human") throw ReviewError(ErrorKind::invalid, "origin_guess must be AI or Human");
  } catch (const nlohmann::json::exception& e) {
    throw ReviewError(ErrorKind::invalid, std::string("malformed rating: ") + e.what());
  }
  return r;
}

namespace detail {

// Appends and fsyncs before returning.
inline void append_durable(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error("cannot open journal " + path.string());
  const std::string buf = line + "\n";
  std::size_t done = 0;
  while (done < buf.size()) {
    const auto n = ::write(fd, buf.data() + done, buf.size() - done);
    if (n <= 0) {
      ::close(fd);
      throw std::runtime_error("journal write failed: " + path.string());
    }
    done += static_cast<std::size_t>(n);
  }
  const bool ok = ::fsync(fd) == 0;
  ::close(fd);
  if (!ok) throw std::runtime_error("journal fsync failed: " + path.string());
}

inline void write_atomic(const std::filesystem::path& path, const std::string& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << body;
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// ---- pure state transitions (shared by live calls and journal replay) -------

inline void check_rating(const ReviewSession& s, const RatingInput& r) {
  if (s.state == SessionState::finalized) throw ReviewError(ErrorKind::finalized, "session is finalized");
  if (std::find(s.rater_ids.begin(), s.rater_ids.end(), r.rater_id) == s.rater_ids.end()) {
    throw ReviewError(ErrorKind::not_found, "unknown rater '" + r.rater_id + "'");
  }
  if (std::none_of(s.items.begin(), s.items.end(), [&](const auto& it) { return it.item_id == r.item_id; })) {
    throw ReviewError(ErrorKind::not_found, "unknown item '" + r.item_id + "'");
  }
  for (int v : {r.readability, r.relevance}) {
    if (v < kScaleMin || v > kScaleMax) {
      throw ReviewError(ErrorKind::invalid, "ratings must lie in 1-9, got " + std::to_string(v));
    }
  }
  for (const auto& x : s.ratings) {
    if (x.rater_id == r.rater_id && x.item_id == r.item_id) {
      throw ReviewError(ErrorKind::conflict, "rater '" + r.rater_id + "' already rated '" + r.item_id + "'");
    }
  }
}

inline std::size_t missing_ratings(const ReviewSession& s) {
  return s.rater_ids.size() * s.items.size() - s.ratings.size();
}

inline void apply_event(ReviewSession& s, const nlohmann::json& ev) {
  const auto op = ev.at("op").get<std::string>();
  if (op == "create") {
    s = ev.at("session").get<ReviewSession>();
  } else if (op == "rating") {
    s.ratings.push_back(ev.at("rating").get<Rating>());
  } else if (op == "finalize") {
    s.state = SessionState::finalized;
    s.partial = ev.at("partial").get<bool>();
  } else {
    throw std::runtime_error("unknown journal op '" + op + "'");
  }
}

inline eval::TuringBundle to_bundle(const ReviewSession& s) {
  eval::TuringBundle b;
  b.raters = s.rater_ids;
  std::map<std::string, const ReviewItem*> by_id;
  for (const auto& it : s.items) by_id[it.item_id] = &it;
  for (const auto& rater : s.rater_ids) {
    for (const auto& r : s.ratings) {
      if (r.rater_id != rater) continue;
      b.ratings.push_back({r.rater_id, r.item_id, by_id.at(r.item_id)->hidden_origin, r.origin_guess, r.readability,
                           r.relevance});
    }
  }
  return b;
}

struct ServiceOptions {
  std::size_t token_cap = kTokenCap;
  TokenCounter count_tokens = whitespace_tokens;
  Clock clock = utc_now;
  std::size_t snapshot_every = 32;  // journal events between snapshots
};

// Sessions live under <data_dir>/<session_id>/{journal.jsonl,snapshot.json}.
// Each session has its own writer lock; readers take it shared.
class ReviewService {
 public:
  explicit ReviewService(std::filesystem::path data_dir, ServiceOptions opt = {})
      : dir_(std::move(data_dir)), opt_(std::move(opt)) {
    std::filesystem::create_directories(dir_);
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
      if (e.is_directory() && std::filesystem::exists(e.path() / "journal.jsonl")) {
        auto slot = std::make_shared<Slot>();
        load(e.path(), *slot);
        sessions_[slot->session.session_id] = slot;
      }
    }
  }

  ReviewSession create_session(const SessionRequest& req) {
    if (req.ai.empty() || req.human.empty()) {
      throw ReviewError(ErrorKind::invalid, "both AI and human passage lists must be non-empty");
    }
    if (req.raters.empty()) throw ReviewError(ErrorKind::invalid, "rater list is empty");
    if (std::set<std::string>(req.raters.begin(), req.raters.end()).size() != req.raters.size()) {
      throw ReviewError(ErrorKind::invalid, "rater ids must be unique");
    }
    for (const auto& r : req.raters) {
      if (r.empty()) throw ReviewError(ErrorKind::invalid, "empty rater id");
    }
    ReviewSession s;
    s.rater_ids = req.raters;
    s.shuffle_seed = req.shuffle_seed;
    std::set<std::string> digests;
    auto add = [&](const Passage& p, Origin o) {
      auto text = strip_format(p.text);
      if (text.empty()) throw ReviewError(ErrorKind::invalid, "passage is empty after format stripping");
      const auto n = opt_.count_tokens(text);
      if (n > opt_.token_cap) {
        throw ReviewError(ErrorKind::invalid, "passage has " + std::to_string(n) + " tokens; the cap is " +
                                                  std::to_string(opt_.token_cap) +
                                                  " - truncate it before ingest (review ingest --truncate)");
      }
      const auto d = sha256_hex(text);
      if (!digests.insert(d).second) {
        throw ReviewError(ErrorKind::conflict, "duplicate passage text (digest " + d.substr(0, 12) + ")");
      }
      s.items.push_back({"item-" + d.substr(0, 12), std::move(text), o, p.section_name});
    };
    for (const auto& p : req.ai) add(p, Origin::ai);
    for (const auto& p : req.human) add(p, Origin::human);
    seeded_shuffle(s.items, CounterRng(CounterRng::derive(req.shuffle_seed, "items")));

    Sha256 h;
    h.update(std::to_string(req.shuffle_seed));
    for (const auto& r : s.rater_ids) h.update("r:" + r);
    for (const auto& it : s.items) h.update("i:" + it.item_id);
    s.session_id = "s-" + h.hex().substr(0, 16);
    s.created_at = opt_.clock();

    std::unique_lock lock(map_mu_);
    if (sessions_.count(s.session_id)) {
      throw ReviewError(ErrorKind::conflict, "session " + s.session_id + " already exists");
    }
    auto slot = std::make_shared<Slot>();
    slot->session = s;
    std::filesystem::create_directories(dir_ / s.session_id);
    journal(*slot, {{"op", "create"}, {"session", s}});
    sessions_[s.session_id] = slot;
    return s;
  }

  NextItem next_item(const std::string& id, const std::string& rater) const {
    auto slot = find(id);
    std::shared_lock lock(slot->mu);
    const auto& s = slot->session;
    if (s.state == SessionState::finalized) throw ReviewError(ErrorKind::finalized, "session is finalized");
    if (std::find(s.rater_ids.begin(), s.rater_ids.end(), rater) == s.rater_ids.end()) {
      throw ReviewError(ErrorKind::not_found, "unknown rater '" + rater + "'");
    }
    std::set<std::string> rated;
    for (const auto& r : s.ratings) {
      if (r.rater_id == rater) rated.insert(r.item_id);
    }
    NextItem out;
    out.progress = {rated.size(), s.items.size()};
    for (auto i : rater_order(s, rater)) {
      if (!rated.count(s.items[i].item_id)) {
        out.item = BlindedItem{s.items[i].item_id, s.items[i].text};
        break;
      }
    }
    return out;
  }

  Progress submit_rating(const std::string& id, const RatingInput& in) {
    auto slot = find(id);
    std::unique_lock lock(slot->mu);
    check_rating(slot->session, in);
    const Rating r{in.rater_id, in.item_id, in.readability, in.relevance, in.origin_guess, opt_.clock()};
    journal(*slot, {{"op", "rating"}, {"rating", r}});
    Progress p{0, slot->session.items.size()};
    for (const auto& x : slot->session.ratings) p.rated += x.rater_id == in.rater_id;
    return p;
  }

  eval::TuringBundle finalize(const std::string& id, bool allow_partial = false) {
    auto slot = find(id);
    std::unique_lock lock(slot->mu);
    const auto& s = slot->session;
    if (s.state == SessionState::finalized) throw ReviewError(ErrorKind::finalized, "session is already finalized");
    const auto missing = missing_ratings(s);
    if (missing && !allow_partial) {
      throw ReviewError(ErrorKind::incomplete,
                        std::to_string(missing) + " ratings missing; pass partial=true to finalize anyway");
    }
    journal(*slot, {{"op", "finalize"}, {"partial", missing > 0}});
    return to_bundle(slot->session);
  }

  // Finalized sessions only: the bundle reveals origins.
  eval::TuringBundle bundle(const std::string& id) const {
    auto slot = find(id);
    std::shared_lock lock(slot->mu);
    if (slot->session.state != SessionState::finalized) {
      throw ReviewError(ErrorKind::incomplete, "session is not finalized");
    }
    return to_bundle(slot->session);
  }

  ReviewSession session(const std::string& id) const {
    auto slot = find(id);
    std::shared_lock lock(slot->mu);
    return slot->session;
  }

  std::vector<std::string> session_ids() const {
    std::shared_lock lock(map_mu_);
    std::vector<std::string> out;
    for (const auto& [k, v] : sessions_) out.push_back(k);
    return out;
  }

  // One rating per line, with the revealed origin; finalized sessions only.
  std::string export_ratings(const std::string& id) const {
    std::string out;
    for (const auto& r : bundle(id).ratings) out += nlohmann::json(r).dump() + "\n";
    return out;
  }

  const std::filesystem::path& data_dir() const { return dir_; }

 private:
  struct Slot {
    mutable std::shared_mutex mu;
    ReviewSession session;
    std::size_t events = 0;  // journal events applied
  };

  std::shared_ptr<Slot> find(const std::string& id) const {
    std::shared_lock lock(map_mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ReviewError(ErrorKind::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  void journal(Slot& slot, const nlohmann::json& ev) {
    const auto sdir = dir_ / slot.session.session_id;
    detail::append_durable(sdir / "journal.jsonl", ev.dump());
    if (ev.at("op") != "create") apply_event(slot.session, ev);
    ++slot.events;
    if (opt_.snapshot_every && slot.events % opt_.snapshot_every == 0) {
      detail::write_atomic(sdir / "snapshot.json",
                           nlohmann::json{{"events", slot.events}, {"session", slot.session}}.dump());
    }
  }

  // Snapshot first, then the journal tail. A torn final line (no newline)
  // was never acknowledged and is discarded.
  static void load(const std::filesystem::path& sdir, Slot& slot) {
    std::size_t skip = 0;
    if (std::filesystem::exists(sdir / "snapshot.json")) {
      std::ifstream in(sdir / "snapshot.json");
      const auto j = nlohmann::json::parse(in);
      slot.session = j.at("session").get<ReviewSession>();
      skip = j.at("events").get<std::size_t>();
    }
    std::ifstream in(sdir / "journal.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (in.eof()) break;
      if (n++ < skip) continue;
      apply_event(slot.session, nlohmann::json::parse(line));
    }
    slot.events = std::max(n, skip);
  }

  std::filesystem::path dir_;
  ServiceOptions opt_;
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

// Replays a session directory from its journal alone, ignoring snapshots.
inline ReviewSession replay_journal(const std::filesystem::path& session_dir) {
  ReviewSession s;
  std::ifstream in(session_dir / "journal.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (in.eof()) break;
    apply_event(s, nlohmann::json::parse(line));
  }
  return s;
}

}  // namespace gtlab::review

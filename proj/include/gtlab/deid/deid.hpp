#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gtlab::deid {

class DeidError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The 18 safe-harbor identifier categories.
enum class PhiCategory {
  name,
  location,
  date,
  phone,
  fax,
  email,
  ssn,
  mrn,
  health_plan,
  account,
  license,
  vehicle,
  device,
  url,
  ip,
  biometric,
  photo,
  other_id,
};

inline constexpr std::size_t kCategoryCount = 18;

inline constexpr std::array<std::string_view, kCategoryCount> kCategoryTags{
    "NAME",    "LOCATION", "DATE",    "PHONE",   "FAX",     "EMAIL", "SSN", "MRN",       "HEALTH_PLAN",
    "ACCOUNT", "LICENSE",  "VEHICLE", "DEVICE",  "URL",     "IP",    "BIOMETRIC", "PHOTO", "ID"};

// Ages are an element of the date category but keep their own tag.
inline constexpr std::string_view kAgeTag = "AGE";

inline std::string_view category_tag(PhiCategory c) { return kCategoryTags[static_cast<std::size_t>(c)]; }

inline PhiCategory category_from_tag(std::string_view tag) {
  for (std::size_t i = 0; i < kCategoryCount; ++i) {
    if (kCategoryTags[i] == tag) {
      return static_cast<PhiCategory>(i);
    }
  }
  throw DeidError("unknown PHI category '" + std::string(tag) + "'");
}

inline std::string surrogate(std::string_view tag) { return "[**" + std::string(tag) + "**]"; }

inline bool is_surrogate_tag(std::string_view tag) {
  return tag == kAgeTag || std::find(kCategoryTags.begin(), kCategoryTags.end(), tag) != kCategoryTags.end();
}

struct PhiSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  PhiCategory category = PhiCategory::name;
  std::string tag;  // surrogate tag, usually the category's own
  std::string matched_text;
  std::string rule_id;
};

struct Rule {
  std::string id;
  PhiCategory category = PhiCategory::name;
  std::string pattern;          // ECMAScript; may reference {{dictionary}} names
  std::size_t group = 0;        // capture group holding the PHI
  int priority = 100;           // lower wins among equal-length overlaps
  bool case_insensitive = false;
  std::optional<std::string> tag;  // overrides the category tag (ages)
};

class Ruleset {
 public:
  Ruleset() = default;

  Ruleset(std::vector<Rule> rules, std::map<std::string, std::vector<std::string>> dictionaries)
      : rules_(std::move(rules)), dictionaries_(std::move(dictionaries)) {
    compile();
  }

  const std::vector<Rule>& rules() const { return rules_; }
  const std::map<std::string, std::vector<std::string>>& dictionaries() const { return dictionaries_; }

  struct Compiled {
    std::size_t rule_index;
    std::regex re;
  };
  const std::vector<Compiled>& compiled() const { return compiled_; }

 private:
  static std::string escape_regex(std::string_view s) {
    static const std::string_view special = R"(\^$.|?*+()[]{}/)";
    std::string out;
    for (char c : s) {
      if (special.find(c) != std::string_view::npos) {
        out.push_back('\\');
      }
      out.push_back(c);
    }
    return out;
  }

  std::string expand(const Rule& r) const {
    std::string out;
    std::size_t i = 0;
    const auto& p = r.pattern;
    while (i < p.size()) {
      if (p.compare(i, 2, "{{") == 0) {
        const auto close = p.find("}}", i + 2);
        if (close == std::string::npos) {
          throw DeidError("rule " + r.id + ": unterminated dictionary reference");
        }
        const auto name = p.substr(i + 2, close - i - 2);
        const auto it = dictionaries_.find(name);
        if (it == dictionaries_.end() || it->second.empty()) {
          throw DeidError("rule " + r.id + ": unknown or empty dictionary '" + name + "'");
        }
        // Longest terms first so alternation prefers them.
        auto terms = it->second;
        std::sort(terms.begin(), terms.end(), [](const std::string& a, const std::string& b) {
          return a.size() != b.size() ? a.size() > b.size() : a < b;
        });
        out += "(?:";
        for (std::size_t k = 0; k < terms.size(); ++k) {
          out += (k ? "|" : "") + escape_regex(terms[k]);
        }
        out += ")";
        i = close + 2;
      } else {
        out.push_back(p[i++]);
      }
    }
    return out;
  }

  void compile() {
    std::set<std::string> ids;
    compiled_.clear();
    for (const auto& r : rules_) {
      if (r.id.empty() || !ids.insert(r.id).second) {
        throw DeidError("rule ids must be non-empty and unique ('" + r.id + "')");
      }
      if (r.tag && !is_surrogate_tag(*r.tag)) {
        throw DeidError("rule " + r.id + ": tag '" + *r.tag + "' is not a surrogate tag");
      }
      auto flags = std::regex::ECMAScript | std::regex::optimize;
      if (r.case_insensitive) {
        flags |= std::regex::icase;
      }
      try {
        std::regex re(expand(r), flags);
        if (r.group > re.mark_count()) {
          throw DeidError("rule " + r.id + ": group " + std::to_string(r.group) +
                          " exceeds the pattern's " + std::to_string(re.mark_count()) + " groups");
        }
        compiled_.push_back({compiled_.size(), std::move(re)});
      } catch (const std::regex_error& e) {
        throw DeidError("rule " + r.id + ": bad pattern: " + e.what());
      }
    }
  }

  std::vector<Rule> rules_;
  std::map<std::string, std::vector<std::string>> dictionaries_;
  std::vector<Compiled> compiled_;
};

// ---- ruleset files ---------------------------------------------------------

inline nlohmann::json ruleset_to_json(const Ruleset& rs) {
  auto rules = nlohmann::json::array();
  for (const auto& r : rs.rules()) {
    nlohmann::json j{{"id", r.id},
                     {"category", category_tag(r.category)},
                     {"pattern", r.pattern},
                     {"group", r.group},
                     {"priority", r.priority},
                     {"case_insensitive", r.case_insensitive}};
    if (r.tag) {
      j["tag"] = *r.tag;
    }
    rules.push_back(std::move(j));
  }
  return {{"format", "gtlab-deid-rules"},
          {"version", 1},
          {"dictionaries", rs.dictionaries()},
          {"rules", rules}};
}

inline Ruleset ruleset_from_json(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "gtlab-deid-rules" || j.value("version", 0) != 1) {
      throw DeidError("not a version 1 gtlab-deid-rules file");
    }
    std::vector<Rule> rules;
    for (const auto& r : j.at("rules")) {
      Rule rule;
      rule.id = r.at("id").get<std::string>();
      rule.category = category_from_tag(r.at("category").get<std::string>());
      rule.pattern = r.at("pattern").get<std::string>();
      rule.group = r.value("group", std::size_t{0});
      rule.priority = r.value("priority", 100);
      rule.case_insensitive = r.value("case_insensitive", false);
      if (r.contains("tag")) {
        rule.tag = r.at("tag").get<std::string>();
      }
      rules.push_back(std::move(rule));
    }
    auto dicts = j.value("dictionaries", std::map<std::string, std::vector<std::string>>{});
    return Ruleset(std::move(rules), std::move(dicts));
  } catch (const nlohmann::json::exception& e) {
    throw DeidError(std::string("malformed ruleset: ") + e.what());
  }
}

inline Ruleset load_ruleset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DeidError("cannot open ruleset " + path.string());
  }
  try {
    return ruleset_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw DeidError(path.string() + ": " + e.what());
  }
}

// ---- default rules ---------------------------------------------------------

inline Ruleset default_ruleset() {
  using C = PhiCategory;
  std::map<std::string, std::vector<std::string>> dicts{
      {"first_names",
       {"James", "John", "Robert", "Michael", "William", "David", "Richard", "Joseph", "Thomas",
        "Charles", "Mary", "Patricia", "Jennifer", "Linda", "Elizabeth", "Barbara", "Susan",
        "Jessica", "Sarah", "Karen", "Nancy", "Jane", "Maria", "Carlos", "Luis", "Wei", "Priya",
        "Ahmed", "Fatima", "Olga"}},
      {"last_names",
       {"Smith", "Johnson", "Williams", "Brown", "Jones", "Garcia", "Miller", "Davis",
        "Rodriguez", "Martinez", "Hernandez", "Lopez", "Gonzalez", "Wilson", "Anderson", "Taylor",
        "Moore", "Jackson", "Martin", "Lee", "Thompson", "White", "Harris", "Clark", "Lewis",
        "Doe", "Nguyen", "Patel", "Kim", "Chen"}},
      {"cities",
       {"Gainesville", "Jacksonville", "Orlando", "Tampa", "Miami", "Tallahassee", "Ocala",
        "Atlanta", "Savannah", "Pensacola", "Daytona Beach", "St. Augustine", "Lake City"}},
      {"states",
       {"FL", "GA", "AL", "SC", "NC", "TN", "NY", "CA", "TX", "Florida", "Georgia", "Alabama"}},
      {"facilities",
       {"Shands Hospital", "North Florida Regional Medical Center", "Malcom Randall VA Medical Center",
        "Memorial Hospital", "St. Vincent's Medical Center"}},
  };
  const std::string month =
      R"((?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?))";
  const std::string phone = R"((?:\(\d{3}\) ?|\b\d{3}[-. ])\d{3}[-.]\d{4}\b)";
  const std::string id_sep = R"((?:\s*(?:number|no\.?|#|num))?\s*[:#]?\s*)";
  std::vector<Rule> rules{
      // names
      {"name-title", C::name,
       R"(\b(?:Mr|Mrs|Ms|Miss|Dr|Prof)\.?\s+([A-Z][a-z'-]+(?:\s+[A-Z]\.)?(?:\s+[A-Z][a-z'-]+){0,2}))", 1,
       10},
      {"name-label", C::name,
       R"(\b(?:Patient|Name|Pt name|Attending|Resident|Nurse|Contact|Mother|Father|Spouse)\s*:\s*([A-Z][a-z'-]+(?:\s+[A-Z]\.)?(?:\s+[A-Z][a-z'-]+){1,2}))",
       1, 10},
      {"name-dict-full", C::name,
       R"(\b{{first_names}}(?:\s+[A-Z]\.)?\s+[A-Z][a-z'-]+\b)", 0, 20},
      {"name-dict-last", C::name, R"(\b{{last_names}}\b)", 0, 40},
      {"name-dict-first", C::name, R"(\b{{first_names}}\b)", 0, 40},
      // geography
      {"loc-street", C::location,
       R"(\b\d{1,5}\s+(?:[NSEW]\.?\s+)?(?:[A-Z][a-z]+\s+){1,3}(?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Drive|Dr|Lane|Ln|Court|Ct|Way|Place|Pl|Terrace|Circle)\b\.?(?:,?\s+(?:Apt|Suite|Unit)\.?\s*#?\w+)?)",
       0, 10},
      {"loc-city-state-zip", C::location,
       R"(\b(?:{{cities}}|[A-Z][a-z]+(?:\s[A-Z][a-z]+)?),\s+{{states}}(?:\s+\d{5}(?:-\d{4})?)?\b)", 0,
       10},
      {"loc-zip", C::location, R"(\b(?:zip(?:\s*code)?|postal code)\s*:?\s*(\d{5}(?:-\d{4})?)\b)", 1, 10,
       true},
      {"loc-city", C::location, R"(\b{{cities}}\b)", 0, 30},
      {"loc-facility", C::location, R"(\b{{facilities}})", 0, 20},
      // dates and ages
      {"date-numeric", C::date, R"(\b\d{1,2}[/-]\d{1,2}[/-](?:\d{4}|\d{2})\b)", 0, 10},
      {"date-iso", C::date, R"(\b(?:19|20)\d{2}-\d{2}-\d{2}\b)", 0, 10},
      {"date-month-day", C::date, "\\b" + month + R"(\.?\s+\d{1,2}(?:st|nd|rd|th)?(?:,?\s+\d{4})?\b)", 0,
       10},
      {"date-day-month", C::date, R"(\b\d{1,2}\s+)" + month + R"(\.?(?:,?\s+\d{4})?\b)", 0, 10},
      {"date-month-year", C::date, "\\b" + month + R"(\.?\s+(?:19|20)\d{2}\b)", 0, 12},
      {"age-year-old", C::date, R"(\b(\d{1,3})(?:-|\s)(?:year|yr)s?(?:-|\s)old\b)", 1, 10, true,
       std::string(kAgeTag)},
      {"age-yo", C::date, R"(\b(\d{1,3})\s?(?:y/o|yo|y\.o\.))", 1, 10, true, std::string(kAgeTag)},
      {"age-label", C::date, R"(\bage(?:d)?\s*:?\s*(\d{1,3})\b)", 1, 10, true, std::string(kAgeTag)},
      // contact numbers
      {"fax", C::fax, R"(\b(?:fax|facsimile)\s*(?:number|no\.?|#)?\s*:?\s*()" + phone + ")", 1, 5, true},
      {"phone", C::phone, phone, 0, 10},
      {"email", C::email, R"(\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b)", 0, 10},
      {"ssn", C::ssn, R"(\b\d{3}-\d{2}-\d{4}\b)", 0, 10},
      {"ssn-label", C::ssn, R"re(\b(?:SSN|social security))re" + id_sep + R"((\d{9})\b)", 1, 10, true},
      // record-style identifiers keyed by context words
      {"mrn", C::mrn, R"re(\b(?:MRN|medical record))re" + id_sep + R"(([A-Z]{0,2}\d{6,10})\b)", 1, 10, true},
      {"health-plan", C::health_plan,
       R"(\b(?:health plan|insurance|member|policy|beneficiary)\s*(?:id|number|no\.?|#)\s*:?\s*([A-Z]{0,4}\d[A-Z0-9-]{4,18})\b)",
       1, 10, true},
      {"account", C::account, R"re(\b(?:account|acct))re" + id_sep + R"((\d[\d-]{4,18}\d)\b)", 1, 10, true},
      {"license", C::license,
       R"re(\b(?:license|licence|DEA|NPI|certificate))re" + id_sep + R"(([A-Z]{0,2}\d{5,10})\b)", 1, 10,
       true},
      {"vehicle-vin", C::vehicle, R"(\bVIN\s*[:#]?\s*([A-HJ-NPR-Z0-9]{17})\b)", 1, 10, true},
      {"vehicle-plate", C::vehicle,
       R"(\b(?:license plate|plate)\s*(?:number|no\.?|#)?\s*:?\s*([A-Z0-9]{2,4}[- ]?[A-Z0-9]{2,4})\b)",
       1, 9, true},
      {"device", C::device,
       R"(\b(?:serial|device id|device identifier|implant id|UDI)\s*(?:number|no\.?|#)?\s*:?\s*([A-Z0-9][A-Z0-9-]{4,24})\b)",
       1, 10, true},
      {"url", C::url, R"(\b(?:https?://|www\.)[^\s<>"]*[^\s<>".,;:!?)\]])", 0, 10, true},
      {"ip", C::ip, R"(\b(?:(?:25[0-5]|2[0-4]\d|1?\d?\d)\.){3}(?:25[0-5]|2[0-4]\d|1?\d?\d)\b)", 0, 10},
      {"biometric", C::biometric,
       R"(\b(?:fingerprint|retina(?:l)? scan|iris scan|voiceprint|voice print|biometric)\s*(?:id|identifier|template|record)?\s*(?:number|no\.?|#)?\s*:?\s*([A-Z0-9][A-Z0-9-]{5,24})\b)",
       1, 10, true},
      {"photo", C::photo,
       R"(\b(?:full[- ]face photo(?:graph)?|photo(?:graph)?|image)\s*(?:file|id)?\s*:?\s*([A-Za-z0-9_./-]+\.(?:jpg|jpeg|png|tif|tiff|bmp|gif|dcm))\b)",
       1, 10, true},
      {"other-id", C::other_id,
       R"(\b(?:ID|identifier|study id|case id|record id|subject id)\s*[:#]\s*([A-Z0-9][A-Z0-9-]{3,24})\b)",
       1, 50, true},
  };
  return Ruleset(std::move(rules), std::move(dicts));
}

// ---- detection and redaction -----------------------------------------------

namespace detail {

inline const std::regex& surrogate_regex() {
  static const std::regex re(R"(\[\*\*[A-Z_]+\*\*\])");
  return re;
}

}  // namespace detail

// Candidate matches from every rule, minus any touching an existing
// surrogate; overlaps go to the longer span, then the lower priority, then
// the earlier rule, then the earlier start.
inline std::vector<PhiSpan> detect_phi(std::string_view text, const Ruleset& rules) {
  std::vector<std::pair<std::size_t, std::size_t>> masked;
  for (std::cregex_iterator it(text.begin(), text.end(), detail::surrogate_regex()), end; it != end;
       ++it) {
    const auto b = static_cast<std::size_t>(it->position(0));
    masked.emplace_back(b, b + static_cast<std::size_t>(it->length(0)));
  }
  auto touches_mask = [&](std::size_t b, std::size_t e) {
    return std::any_of(masked.begin(), masked.end(),
                       [&](const auto& m) { return b < m.second && m.first < e; });
  };

  struct Candidate {
    PhiSpan span;
    int priority;
    std::size_t rule_index;
  };
  std::vector<Candidate> cands;
  const auto& compiled = rules.compiled();
  for (std::size_t ri = 0; ri < compiled.size(); ++ri) {
    const auto& re = compiled[ri].re;
    const auto* rule = &rules.rules()[compiled[ri].rule_index];
    for (std::cregex_iterator it(text.begin(), text.end(), re), end; it != end; ++it) {
      const auto& m = *it;
      if (!m[rule->group].matched || m.length(rule->group) == 0) {
        continue;
      }
      const auto b = static_cast<std::size_t>(m.position(rule->group));
      const auto e = b + static_cast<std::size_t>(m.length(rule->group));
      if (touches_mask(b, e)) {
        continue;
      }
      PhiSpan s{b, e, rule->category,
                rule->tag ? *rule->tag : std::string(category_tag(rule->category)),
                std::string(text.substr(b, e - b)), rule->id};
      cands.push_back({std::move(s), rule->priority, ri});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    const auto la = a.span.end - a.span.start;
    const auto lb = b.span.end - b.span.start;
    if (la != lb) return la > lb;
    if (a.priority != b.priority) return a.priority < b.priority;
    if (a.rule_index != b.rule_index) return a.rule_index < b.rule_index;
    return a.span.start < b.span.start;
  });
  std::vector<PhiSpan> chosen;
  for (auto& c : cands) {
    const bool clash = std::any_of(chosen.begin(), chosen.end(), [&](const PhiSpan& s) {
      return c.span.start < s.end && s.start < c.span.end;
    });
    if (!clash) {
      chosen.push_back(std::move(c.span));
    }
  }
  std::sort(chosen.begin(), chosen.end(),
            [](const PhiSpan& a, const PhiSpan& b) { return a.start < b.start; });
  return chosen;
}

// Replaces each span by its surrogate; bytes outside spans are copied as is.
inline std::string redact(std::string_view text, const std::vector<PhiSpan>& spans) {
  std::string out;
  std::size_t pos = 0;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > text.size()) {
      throw DeidError("span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                      ") is empty or out of range");
    }
    if (s.start < pos) {
      throw DeidError("spans overlap or are unsorted at offset " + std::to_string(s.start));
    }
    if (!is_surrogate_tag(s.tag)) {
      throw DeidError("span carries unknown tag '" + s.tag + "'");
    }
    out.append(text.substr(pos, s.start - pos));
    out += surrogate(s.tag);
    pos = s.end;
  }
  out.append(text.substr(pos));
  return out;
}

struct DeidReport {
  std::map<std::string, std::size_t> counts;  // by surrogate tag
  std::size_t passes = 0;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [k, v] : counts) {
      n += v;
    }
    return n;
  }
};

// detect + redact until nothing new is found. Each pass replaces
// non-surrogate text that can never match again, so this terminates, and
// deidentify(deidentify(x)) == deidentify(x).
inline std::string deidentify(std::string_view text, const Ruleset& rules,
                              DeidReport* report = nullptr) {
  std::string cur(text);
  DeidReport local;
  for (;;) {
    const auto spans = detect_phi(cur, rules);
    ++local.passes;
    if (spans.empty()) {
      break;
    }
    for (const auto& s : spans) {
      ++local.counts[s.tag];
    }
    cur = redact(cur, spans);
  }
  if (report) {
    for (const auto& [k, v] : local.counts) {
      report->counts[k] += v;
    }
    report->passes += local.passes;
  }
  return cur;
}

// Every [**TAG**] in text, for checking that only known surrogates survive.
inline std::vector<std::string> surrogate_tags(std::string_view text) {
  std::vector<std::string> out;
  for (std::cregex_iterator it(text.begin(), text.end(), detail::surrogate_regex()), end; it != end;
       ++it) {
    const auto s = it->str(0);
    out.push_back(s.substr(3, s.size() - 6));
  }
  return out;
}

}  // namespace gtlab::deid

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gtlab/tasks/relation.hpp"

namespace gtlab::tasks {

enum class QaKind { multiple_choice, yes_no_maybe };

NLOHMANN_JSON_SERIALIZE_ENUM(QaKind, {{QaKind::multiple_choice, "multiple_choice"},
                                      {QaKind::yes_no_maybe, "yes_no_maybe"}})

// Choices are labeled A, B, C, ... in order. For yes_no_maybe the gold is
// the keyword itself ("yes", "no" or "maybe") and choices list the keywords.
struct QaExample {
  std::string question;
  std::vector<std::string> choices;
  std::optional<std::string> context;
  std::string gold;
  QaKind kind = QaKind::multiple_choice;
};

inline constexpr std::string_view kTargetStem = "the answer to the question given possible options is: ";

inline std::string choice_label(std::size_t i) {
  if (i >= 26) {
    throw TaskError("more than 26 choices");
  }
  return std::string(1, static_cast<char>('A' + i));
}

inline void validate(const QaExample& ex) {
  if (ex.kind == QaKind::multiple_choice) {
    if (ex.choices.size() < 2) {
      throw TaskError("multiple-choice example needs at least two choices");
    }
    bool found = false;
    for (std::size_t i = 0; i < ex.choices.size(); ++i) {
      found = found || choice_label(i) == ex.gold;
    }
    if (!found) {
      throw TaskError("gold label '" + ex.gold + "' is not a choice label");
    }
  } else if (ex.gold != "yes" && ex.gold != "no" && ex.gold != "maybe") {
    throw TaskError("yes/no/maybe gold must be one of yes, no, maybe");
  }
}

// [CONTEXT: ...\n]QUESTION: ...\nMULTIPLE CHOICES: (A) ...\n(B) ...\nTARGET: <stem>
inline std::string build_qa_prompt(const QaExample& ex) {
  validate(ex);
  std::vector<std::string> choices = ex.choices;
  if (ex.kind == QaKind::yes_no_maybe && choices.empty()) {
    choices = {"yes", "no", "maybe"};
  }
  std::string out;
  if (ex.context) {
    out += "CONTEXT: " + *ex.context + "\n";
  }
  out += "QUESTION: " + ex.question + "\nMULTIPLE CHOICES: ";
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) {
      out += "\n";
    }
    out += "(" + choice_label(i) + ") " + choices[i];
  }
  out += "\nTARGET: ";
  out += kTargetStem;
  return out;
}

namespace detail {

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// First choice letter (standing alone, e.g. "C" or "(C)") or yes/no/maybe
// keyword after the last target stem, or in the whole text if the stem is
// absent. Returns the example's label vocabulary: a letter for multiple
// choice, a keyword for yes/no/maybe.
inline std::optional<std::string> parse_answer(std::string_view generated, const QaExample& ex) {
  const auto stem = generated.rfind(kTargetStem);
  const auto tail = stem == std::string_view::npos ? generated
                                                   : generated.substr(stem + kTargetStem.size());
  const auto n_choices = ex.kind == QaKind::yes_no_maybe && ex.choices.empty() ? std::size_t{3}
                                                                               : ex.choices.size();
  static const std::array<std::string_view, 3> kKeywords{"yes", "no", "maybe"};
  const auto low = detail::lower(tail);
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (i > 0 && detail::word_char(tail[i - 1])) {
      continue;
    }
    const char c = tail[i];
    if (c >= 'A' && c < static_cast<char>('A' + n_choices) &&
        (i + 1 == tail.size() || !detail::word_char(tail[i + 1]))) {
      const auto idx = static_cast<std::size_t>(c - 'A');
      if (ex.kind == QaKind::multiple_choice) {
        return choice_label(idx);
      }
      const auto text = ex.choices.empty() ? std::string(kKeywords[idx]) : detail::lower(ex.choices[idx]);
      if (std::find(kKeywords.begin(), kKeywords.end(), text) != kKeywords.end()) {
        return text;
      }
      continue;
    }
    if (ex.kind == QaKind::yes_no_maybe) {
      for (auto kw : kKeywords) {
        if (low.compare(i, kw.size(), kw) == 0 &&
            (i + kw.size() == low.size() || !detail::word_char(low[i + kw.size()]))) {
          return std::string(kw);
        }
      }
    }
  }
  return std::nullopt;
}

struct QaScore {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t unparsed = 0;  // counted wrong
};

inline QaScore score_qa(const std::vector<std::pair<std::optional<std::string>, std::string>>& pairs) {
  QaScore s;
  s.total = pairs.size();
  for (const auto& [pred, gold] : pairs) {
    if (!pred) {
      ++s.unparsed;
    } else if (*pred == gold) {
      ++s.correct;
    }
  }
  s.accuracy = s.total ? static_cast<double>(s.correct) / static_cast<double>(s.total) : 0.0;
  return s;
}

// ---- task files ------------------------------------------------------------

inline void to_json(nlohmann::json& j, const QaExample& ex) {
  j = {{"question", ex.question}, {"choices", ex.choices}, {"gold", ex.gold}, {"kind", ex.kind}};
  if (ex.context) {
    j["context"] = *ex.context;
  }
}

inline void from_json(const nlohmann::json& j, QaExample& ex) {
  ex.question = j.at("question").get<std::string>();
  ex.choices = j.value("choices", std::vector<std::string>{});
  ex.gold = j.at("gold").get<std::string>();
  ex.kind = j.value("kind", QaKind::multiple_choice);
  ex.context.reset();
  if (j.contains("context") && !j["context"].is_null()) {
    ex.context = j["context"].get<std::string>();
  }
}

// MedQA (USMLE) line: {"question", "options": {"A": ..}, "answer_idx": "C"}.
inline QaExample from_medqa(const nlohmann::json& j) {
  QaExample ex;
  ex.question = j.at("question").get<std::string>();
  const auto& opts = j.at("options");
  for (std::size_t i = 0; i < opts.size(); ++i) {
    ex.choices.push_back(opts.at(choice_label(i)).get<std::string>());
  }
  ex.gold = j.at("answer_idx").get<std::string>();
  return ex;
}

// MedMCQA line: {"question", "opa".."opd", "cop": 1-based index}.
inline QaExample from_medmcqa(const nlohmann::json& j) {
  QaExample ex;
  ex.question = j.at("question").get<std::string>();
  for (const char* k : {"opa", "opb", "opc", "opd"}) {
    ex.choices.push_back(j.at(k).get<std::string>());
  }
  const auto cop = j.at("cop").get<int>();
  if (cop < 1 || cop > 4) {
    throw TaskError("cop out of range");
  }
  ex.gold = choice_label(static_cast<std::size_t>(cop - 1));
  return ex;
}

// PubMedQA record: {"QUESTION", "CONTEXTS": [..], "final_decision"}.
inline QaExample from_pubmedqa(const nlohmann::json& j) {
  QaExample ex;
  ex.kind = QaKind::yes_no_maybe;
  ex.question = j.at("QUESTION").get<std::string>();
  std::string ctx;
  for (const auto& c : j.at("CONTEXTS")) {
    if (!ctx.empty()) ctx += " ";
    ctx += c.get<std::string>();
  }
  ex.context = ctx;
  ex.choices = {"yes", "no", "maybe"};
  ex.gold = j.at("final_decision").get<std::string>();
  return ex;
}

enum class QaFormat { native, medqa, medmcqa, pubmedqa };

// JSONL in one of the formats above. A PubMedQA file may also be the
// original single JSON object keyed by PMID.
inline std::vector<QaExample> read_qa_file(const std::filesystem::path& path, QaFormat fmt) {
  std::ifstream in(path);
  if (!in) {
    throw TaskError("cannot open " + path.string());
  }
  auto convert = [&](const nlohmann::json& j) {
    QaExample ex;
    switch (fmt) {
      case QaFormat::native: ex = j.get<QaExample>(); break;
      case QaFormat::medqa: ex = from_medqa(j); break;
      case QaFormat::medmcqa: ex = from_medmcqa(j); break;
      case QaFormat::pubmedqa: ex = from_pubmedqa(j); break;
    }
    validate(ex);
    return ex;
  };
  std::vector<QaExample> out;
  try {
    if (fmt == QaFormat::pubmedqa && in.peek() == '{') {
      const auto all = nlohmann::json::parse(in);
      if (!all.contains("QUESTION")) {
        for (const auto& [pmid, rec] : all.items()) {
          out.push_back(convert(rec));
        }
        return out;
      }
      out.push_back(convert(all));
      return out;
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      out.push_back(convert(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw TaskError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace gtlab::tasks

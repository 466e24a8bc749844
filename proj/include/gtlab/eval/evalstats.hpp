#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

namespace gtlab::eval {

class StatsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Two raters, two categories. a = both High, b = rater2 High / rater1 Low,
// c = rater2 Low / rater1 High, d = both Low.
struct Table2x2 {
  std::uint64_t a = 0, b = 0, c = 0, d = 0;
  std::uint64_t n() const { return a + b + c + d; }
  friend bool operator==(const Table2x2&, const Table2x2&) = default;
};

inline double percent_agreement(const Table2x2& t) {
  if (t.n() == 0) {
    throw StatsError("empty contingency table");
  }
  return static_cast<double>(t.a + t.d) / static_cast<double>(t.n());
}

// Gwet's AC1, two-rater two-category form.
inline double gwet_ac1(const Table2x2& t) {
  const double pa = percent_agreement(t);
  const double n = static_cast<double>(t.n());
  const double pi = (static_cast<double>(t.a + t.b) / n + static_cast<double>(t.a + t.c) / n) / 2.0;
  const double pe = 2.0 * pi * (1.0 - pi);
  if (pe >= 1.0) {
    throw StatsError("AC1 undefined: chance agreement is 1");
  }
  return (pa - pe) / (1.0 - pe);
}

enum class Tail { two_sided, lower, upper };

NLOHMANN_JSON_SERIALIZE_ENUM(Tail, {{Tail::two_sided, "two_sided"}, {Tail::lower, "lower"}, {Tail::upper, "upper"}})

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Tail tail = Tail::two_sided;
  std::string method;
  std::optional<double> df;
};

inline void to_json(nlohmann::json& j, const TestResult& r) {
  j = {{"statistic", r.statistic}, {"p_value", r.p_value}, {"tail", r.tail}, {"method", r.method}};
  if (r.df) j["df"] = *r.df;
}

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
  std::size_t n = 0;
};

inline Summary summarize(std::span<const double> v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) {
    return s;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

// Welch's unequal-variance t-test with Satterthwaite df, two-sided.
inline TestResult welch_t(const Summary& a, const Summary& b) {
  if (a.n < 2 || b.n < 2) {
    throw StatsError("welch_t needs at least two observations per group");
  }
  const double va = a.sd * a.sd / static_cast<double>(a.n);
  const double vb = b.sd * b.sd / static_cast<double>(b.n);
  TestResult r{0.0, 1.0, Tail::two_sided, "welch_t", std::nullopt};
  if (va + vb == 0.0) {
    if (a.mean == b.mean) {
      return r;
    }
    throw StatsError("welch_t undefined: both groups have zero variance");
  }
  r.statistic = (a.mean - b.mean) / std::sqrt(va + vb);
  const double df = (va + vb) * (va + vb) /
                    (va * va / static_cast<double>(a.n - 1) + vb * vb / static_cast<double>(b.n - 1));
  r.df = df;
  const boost::math::students_t dist(df);
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic))));
  return r;
}

inline TestResult welch_t(std::span<const double> a, std::span<const double> b) {
  return welch_t(summarize(a), summarize(b));
}

// Exact binomial test. lower: P(X <= k); upper: P(X >= k), computed as
// 1 - P(X <= k-1) so that lower(k) + upper(k+1) is exactly 1; two-sided sums
// the masses no larger than P(X = k).
inline TestResult binom_test(std::uint64_t k, std::uint64_t n, double p0, Tail tail) {
  if (n == 0 || k > n) {
    throw StatsError("binom_test needs 0 <= k <= n and n > 0");
  }
  if (!(p0 > 0.0 && p0 < 1.0)) {
    throw StatsError("binom_test needs 0 < p0 < 1");
  }
  const boost::math::binomial_distribution<double> dist(static_cast<double>(n), p0);
  TestResult r{static_cast<double>(k), 1.0, tail, "binomial_exact", std::nullopt};
  auto lower = [&](std::uint64_t x) { return boost::math::cdf(dist, static_cast<double>(x)); };
  switch (tail) {
    case Tail::lower:
      r.p_value = lower(k);
      break;
    case Tail::upper:
      r.p_value = k == 0 ? 1.0 : 1.0 - lower(k - 1);
      break;
    case Tail::two_sided: {
      const double pk = boost::math::pdf(dist, static_cast<double>(k));
      double total = 0.0;
      for (std::uint64_t x = 0; x <= n; ++x) {
        const double px = boost::math::pdf(dist, static_cast<double>(x));
        if (px <= pk * (1.0 + 1e-7)) total += px;
      }
      r.p_value = std::min(1.0, total);
      break;
    }
  }
  return r;
}

// ---- Turing-test report ------------------------------------------------------

enum class Origin { ai, human };

NLOHMANN_JSON_SERIALIZE_ENUM(Origin, {{Origin::ai, "AI"}, {Origin::human, "Human"}})

struct RatedItem {
  std::string rater;
  std::string item_id;
  Origin origin = Origin::human;  // hidden truth
  Origin guess = Origin::human;
  int readability = 0;
  int relevance = 0;
};

inline void to_json(nlohmann::json& j, const RatedItem& r) {
  j = {{"rater", r.rater},     {"item_id", r.item_id},         {"origin", r.origin},
       {"guess", r.guess},     {"readability", r.readability}, {"relevance", r.relevance}};
}

inline void from_json(const nlohmann::json& j, RatedItem& r) {
  r.rater = j.at("rater").get<std::string>();
  r.item_id = j.at("item_id").get<std::string>();
  r.origin = j.at("origin").get<Origin>();
  r.guess = j.at("guess").get<Origin>();
  r.readability = j.at("readability").get<int>();
  r.relevance = j.at("relevance").get<int>();
}

// What a finalized review session hands over.
struct TuringBundle {
  std::vector<std::string> raters;
  std::vector<RatedItem> ratings;
};

struct ReportOptions {
  double p0 = 0.7;             // null rate of correct identification
  Tail tail = Tail::lower;
  int high_threshold = 7;      // rating >= threshold counts as High for AC1
};

struct IdentCell {
  double correct = 0.0;  // pooled cells are means across raters
  std::size_t total = 0;
  double percent() const { return total ? 100.0 * correct / static_cast<double>(total) : 0.0; }
};

struct RaterRow {
  std::string rater;
  IdentCell ai, human, overall;
};

struct MeasureRow {
  std::string measure;
  Summary ai, human;
  TestResult test;
};

struct AgreementRow {
  std::string measure;
  Table2x2 table;
  double percent_agreement = 0.0;
  double ac1 = 0.0;
};

struct TuringReport {
  std::vector<RaterRow> raters;
  RaterRow pooled;
  TestResult test_ai, test_human, test_overall;
  std::vector<MeasureRow> measures;
  std::vector<AgreementRow> agreement;  // only with exactly two raters
};

inline void validate(const TuringBundle& b) {
  if (b.raters.empty()) {
    throw StatsError("report needs at least one rater");
  }
  for (const auto& r : b.ratings) {
    if (std::find(b.raters.begin(), b.raters.end(), r.rater) == b.raters.end()) {
      throw StatsError("rating from unregistered rater '" + r.rater + "'");
    }
    if (r.readability < 1 || r.readability > 9 || r.relevance < 1 || r.relevance > 9) {
      throw StatsError("rating outside the 1-9 scale");
    }
  }
}

inline TuringReport turing_report(const TuringBundle& bundle, const ReportOptions& opt = {}) {
  validate(bundle);
  TuringReport rep;
  std::uint64_t k_ai = 0, n_ai = 0, k_h = 0, n_h = 0;
  for (const auto& rater : bundle.raters) {
    RaterRow row{rater, {}, {}, {}};
    for (const auto& r : bundle.ratings) {
      if (r.rater != rater) continue;
      auto& cell = r.origin == Origin::ai ? row.ai : row.human;
      cell.total += 1;
      cell.correct += r.guess == r.origin ? 1.0 : 0.0;
    }
    row.overall = {row.ai.correct + row.human.correct, row.ai.total + row.human.total};
    k_ai += static_cast<std::uint64_t>(row.ai.correct);
    n_ai += row.ai.total;
    k_h += static_cast<std::uint64_t>(row.human.correct);
    n_h += row.human.total;
    rep.raters.push_back(row);
  }
  const double nr = static_cast<double>(bundle.raters.size());
  rep.pooled.rater = "pooled";
  for (const auto& row : rep.raters) {
    rep.pooled.ai.correct += row.ai.correct / nr;
    rep.pooled.human.correct += row.human.correct / nr;
    rep.pooled.overall.correct += row.overall.correct / nr;
  }
  rep.pooled.ai.total = rep.raters.front().ai.total;
  rep.pooled.human.total = rep.raters.front().human.total;
  rep.pooled.overall.total = rep.raters.front().overall.total;
  if (n_ai > 0) rep.test_ai = binom_test(k_ai, n_ai, opt.p0, opt.tail);
  if (n_h > 0) rep.test_human = binom_test(k_h, n_h, opt.p0, opt.tail);
  if (n_ai + n_h > 0) rep.test_overall = binom_test(k_ai + k_h, n_ai + n_h, opt.p0, opt.tail);

  // Ratings are averaged per item across raters, then compared by origin.
  struct Acc {
    Origin origin;
    double read = 0, rel = 0;
    int n = 0;
  };
  std::map<std::string, Acc> items;
  for (const auto& r : bundle.ratings) {
    auto [it, fresh] = items.try_emplace(r.item_id, Acc{r.origin});
    if (!fresh && it->second.origin != r.origin) {
      throw StatsError("item '" + r.item_id + "' has conflicting origins");
    }
    it->second.read += r.readability;
    it->second.rel += r.relevance;
    it->second.n += 1;
  }
  for (const auto* measure : {"readability", "relevance"}) {
    std::vector<double> ai, human;
    for (const auto& [id, acc] : items) {
      const double v = (std::string(measure) == "readability" ? acc.read : acc.rel) / acc.n;
      (acc.origin == Origin::ai ? ai : human).push_back(v);
    }
    MeasureRow row{measure, summarize(ai), summarize(human), {}};
    if (ai.size() >= 2 && human.size() >= 2) {
      row.test = welch_t(std::span<const double>(ai), std::span<const double>(human));
    }
    rep.measures.push_back(row);
  }

  if (bundle.raters.size() == 2) {
    const auto& r1 = bundle.raters[0];
    const auto& r2 = bundle.raters[1];
    for (const auto* measure : {"readability", "relevance"}) {
      std::map<std::string, std::pair<std::optional<bool>, std::optional<bool>>> hi;
      for (const auto& r : bundle.ratings) {
        const int v = std::string(measure) == "readability" ? r.readability : r.relevance;
        auto& slot = hi[r.item_id];
        (r.rater == r1 ? slot.first : slot.second) = v >= opt.high_threshold;
      }
      Table2x2 t;
      for (const auto& [id, pr] : hi) {
        if (!pr.first || !pr.second) continue;
        const bool h1 = *pr.first, h2 = *pr.second;
        (h2 ? (h1 ? t.a : t.b) : (h1 ? t.c : t.d)) += 1;
      }
      if (t.n() > 0) {
        double ac1 = std::nan("");
        try {
          ac1 = gwet_ac1(t);
        } catch (const StatsError&) {
        }
        rep.agreement.push_back({measure, t, percent_agreement(t), ac1});
      }
    }
  }
  return rep;
}

inline nlohmann::json report_to_json(const TuringReport& r) {
  auto cell = [](const IdentCell& c) {
    return nlohmann::json{{"correct", c.correct}, {"total", c.total}, {"percent", c.percent()}};
  };
  auto row = [&](const RaterRow& x) {
    return nlohmann::json{{"rater", x.rater}, {"ai", cell(x.ai)}, {"human", cell(x.human)}, {"overall", cell(x.overall)}};
  };
  nlohmann::json j;
  for (const auto& x : r.raters) j["raters"].push_back(row(x));
  j["pooled"] = row(r.pooled);
  j["tests"] = {{"ai", r.test_ai}, {"human", r.test_human}, {"overall", r.test_overall}};
  for (const auto& m : r.measures) {
    j["measures"].push_back({{"measure", m.measure},
                             {"ai", {{"mean", m.ai.mean}, {"sd", m.ai.sd}, {"n", m.ai.n}}},
                             {"human", {{"mean", m.human.mean}, {"sd", m.human.sd}, {"n", m.human.n}}},
                             {"test", m.test}});
  }
  for (const auto& a : r.agreement) {
    j["agreement"].push_back({{"measure", a.measure},
                              {"table", {a.table.a, a.table.b, a.table.c, a.table.d}},
                              {"percent_agreement", a.percent_agreement},
                              {"ac1", a.ac1}});
  }
  return j;
}

inline std::string format_p(double p) {
  if (p < 0.001) return "< 0.001";
  std::ostringstream s;
  s << "= " << std::fixed << std::setprecision(3) << p;
  return s.str();
}

// Plain-text tables: identification counts, rating summaries, agreement.
inline std::string format_report(const TuringReport& r) {
  std::ostringstream out;
  auto num = [](double v, int prec) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  auto cell = [&](const IdentCell& c) {
    const bool whole = c.correct == std::floor(c.correct);
    return num(c.correct, whole ? 0 : 1) + " (" + num(c.percent(), 1) + "%)";
  };
  out << "Correct identification\n";
  out << std::left << std::setw(14) << "" << std::setw(18) << ("AI (n=" + std::to_string(r.pooled.ai.total) + ")")
      << std::setw(18) << ("Human (n=" + std::to_string(r.pooled.human.total) + ")")
      << ("Total (n=" + std::to_string(r.pooled.overall.total) + ")") << "\n";
  for (const auto& row : r.raters) {
    out << std::setw(14) << row.rater << std::setw(18) << cell(row.ai) << std::setw(18) << cell(row.human)
        << cell(row.overall) << "\n";
  }
  out << std::setw(14) << "pooled" << std::setw(18) << cell(r.pooled.ai) << std::setw(18) << cell(r.pooled.human)
      << cell(r.pooled.overall) << "\n";
  out << std::setw(14) << "p-value" << std::setw(18) << format_p(r.test_ai.p_value) << std::setw(18)
      << format_p(r.test_human.p_value) << format_p(r.test_overall.p_value) << "\n\n";
  out << "Ratings, mean (sd)\n";
  out << std::setw(14) << "" << std::setw(18) << "AI" << std::setw(18) << "Human" << "p-value\n";
  for (const auto& m : r.measures) {
    out << std::setw(14) << m.measure << std::setw(18) << (num(m.ai.mean, 2) + " (" + num(m.ai.sd, 2) + ")")
        << std::setw(18) << (num(m.human.mean, 2) + " (" + num(m.human.sd, 2) + ")") << num(m.test.p_value, 2)
        << "\n";
  }
  if (!r.agreement.empty()) {
    out << "\nInterrater agreement\n";
    for (const auto& a : r.agreement) {
      out << std::setw(14) << a.measure << "table " << a.table.a << "/" << a.table.b << "/" << a.table.c << "/"
          << a.table.d << "  agreement " << num(a.percent_agreement, 2) << "  AC1 " << num(a.ac1, 2) << "\n";
    }
  }
  return out.str();
}

}  // namespace gtlab::eval

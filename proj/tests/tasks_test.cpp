#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include "gtlab/numerics/rng.hpp"
#include "gtlab/tasks/qa.hpp"
#include "gtlab/tasks/relation.hpp"

using namespace gtlab;
using namespace gtlab::tasks;

namespace {

std::string random_field(CounterRng& rng) {
  static const std::string alphabet = "abcXYZ019 -_/()[]];.,'\"";
  std::string s;
  const auto n = 1 + rng.below(14);
  for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(alphabet.size())]);
  if (normalize_field(s).empty()) s += "q";
  return s;
}

QaExample mc_example() {
  QaExample ex;
  ex.question = "A 4-year-old presents with a rash after starting amoxicillin. Which cell type mediates this reaction?";
  ex.choices = {"Neutrophils", "Eosinophils", "T lymphocytes", "Mast cells"};
  ex.gold = "C";
  return ex;
}

}  // namespace

TEST(Serialize, SingleClause) {
  const std::vector<Triplet> t{{"Igmesine", "Opioid receptor sigma 1", "agonist"}};
  EXPECT_EQ(serialize_triplets(t),
            "the relation between [Igmesine] and [Opioid receptor sigma 1] is [agonist]");
}

TEST(Serialize, EmptyIsSentinel) {
  EXPECT_EQ(serialize_triplets(std::vector<Triplet>{}), "no relation");
  EXPECT_TRUE(parse_triplets("no relation").triplets.empty());
  EXPECT_EQ(parse_triplets("no relation").malformed_regions, 0u);
}

TEST(Serialize, TwoClausesInOrder) {
  const std::vector<Triplet> t{{"b", "c", "r1"}, {"a", "d", "r2"}};
  EXPECT_EQ(serialize_triplets(t),
            "the relation between [b] and [c] is [r1]; the relation between [a] and [d] is [r2]");
}

TEST(Serialize, EscapesBrackets) {
  const std::vector<Triplet> t{{"x]y", "z", "r"}};
  const auto s = serialize_triplets(t);
  EXPECT_EQ(s, "the relation between [x]]y] and [z] is [r]");
  EXPECT_EQ(parse_triplets(s).triplets, TripletSet(t.begin(), t.end()));
}

TEST(Serialize, RejectsEmptyField) {
  EXPECT_THROW(serialize_triplets(std::vector<Triplet>{{" ", "b", "c"}}), TaskError);
}

TEST(Parse, RoundTripThousandRandomSets) {
  CounterRng rng(CounterRng::derive(11, "triplets"));
  for (int trial = 0; trial < 1000; ++trial) {
    TripletSet set;
    const auto n = rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      set.insert({random_field(rng), random_field(rng), random_field(rng)});
    }
    const auto r = parse_triplets(serialize_triplets(set));
    ASSERT_EQ(r.triplets, set) << serialize_triplets(set);
    ASSERT_EQ(r.malformed_regions, 0u);
  }
}

TEST(Parse, GarbageAroundOneClause) {
  const auto r = parse_triplets(
      "blah [[ the relation between [a and junk the relation between [x] and [y] is [z] ");
  ASSERT_EQ(r.triplets.size(), 1u);
  EXPECT_EQ(*r.triplets.begin(), (Triplet{"x", "y", "z"}));
  EXPECT_EQ(r.malformed_regions, 1u);
  EXPECT_EQ(r.diagnostics.size(), 1u);
}

TEST(Parse, TrailingPeriodIsNotMalformed) {
  const auto r = parse_triplets("the relation between [x] and [y] is [z].");
  EXPECT_EQ(r.triplets.size(), 1u);
  EXPECT_EQ(r.malformed_regions, 0u);
}

TEST(Score, HalfAndHalf) {
  const Triplet t1{"a", "b", "r"}, t2{"c", "d", "r"}, t3{"e", "f", "r"};
  const auto s = score_re({t1, t2}, {t1, t3});
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_DOUBLE_EQ(s.f1, 0.5);
  EXPECT_EQ(s.tp, 1u);
  EXPECT_EQ(s.fp, 1u);
  EXPECT_EQ(s.fn, 1u);
}

TEST(Score, EqualSetsArePerfect) {
  const TripletSet g{{"a", "b", "r"}, {"c", "d", "s"}};
  const auto s = score_re(g, g);
  EXPECT_DOUBLE_EQ(s.f1, 1.0);
}

TEST(Score, EmptyPrediction) {
  const auto s = score_re({{"a", "b", "r"}}, {});
  EXPECT_EQ(s.precision, 0.0);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.f1, 0.0);
}

TEST(Score, NormalizedMatchingCollapsesDuplicates) {
  const auto s = score_re({{"Aspirin", "COX-1", "inhibitor"}},
                          {{" aspirin", "cox-1 ", "Inhibitor"}, {"ASPIRIN", "cox-1", "inhibitor"}});
  EXPECT_EQ(s.tp, 1u);
  EXPECT_EQ(s.fp, 0u);
}

TEST(Score, MicroAggregation) {
  const Triplet a{"a", "b", "r"}, b{"c", "d", "r"};
  const auto s = score_re_micro({{{a}, {a}}, {{b}, {}}, {{}, {a}}});
  EXPECT_EQ(s.tp, 1u);
  EXPECT_EQ(s.fp, 1u);
  EXPECT_EQ(s.fn, 1u);
}

TEST(ReFile, JsonlRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "gtlab_re_rt.jsonl";
  const std::vector<ReExample> ex{{"text one", {{"a", "b", "r"}}}, {"two", {}}};
  write_re_jsonl(ex, path);
  const auto back = read_re_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].gold, ex[0].gold);
  EXPECT_EQ(back[1].text, "two");
  std::filesystem::remove(path);
}

TEST(QaPrompt, TemplateBytes) {
  EXPECT_EQ(build_qa_prompt(mc_example()),
            "QUESTION: A 4-year-old presents with a rash after starting amoxicillin. Which cell type "
            "mediates this reaction?\nMULTIPLE CHOICES: (A) Neutrophils\n(B) Eosinophils\n(C) T "
            "lymphocytes\n(D) Mast cells\nTARGET: the answer to the question given possible options is: ");
}

TEST(QaPrompt, ContextFirstAndYesNoLabels) {
  QaExample ex;
  ex.kind = QaKind::yes_no_maybe;
  ex.question = "Does it work?";
  ex.choices = {"yes", "no"};
  ex.context = "Some abstract.";
  ex.gold = "no";
  const auto p = build_qa_prompt(ex);
  EXPECT_EQ(p.rfind("CONTEXT: Some abstract.\nQUESTION: Does it work?\nMULTIPLE CHOICES: (A) yes\n(B) no\n", 0), 0u);
  EXPECT_TRUE(p.ends_with(kTargetStem));
}

TEST(QaPrompt, InvalidExamples) {
  auto ex = mc_example();
  ex.choices = {"only"};
  EXPECT_THROW(build_qa_prompt(ex), TaskError);
  ex = mc_example();
  ex.gold = "E";
  EXPECT_THROW(build_qa_prompt(ex), TaskError);
}

TEST(QaParse, Cases) {
  const auto ex = mc_example();
  EXPECT_EQ(parse_answer("C", ex), "C");
  EXPECT_EQ(parse_answer(build_qa_prompt(ex) + "(B) Surface ectoderm", ex), "B");
  EXPECT_EQ(parse_answer(build_qa_prompt(ex) + "Clearly D.", ex), "D");
  EXPECT_FALSE(parse_answer(build_qa_prompt(ex) + "unsure", ex).has_value());
  EXPECT_FALSE(parse_answer("E", ex).has_value());

  QaExample ynm;
  ynm.kind = QaKind::yes_no_maybe;
  ynm.choices = {"yes", "no", "maybe"};
  ynm.gold = "maybe";
  EXPECT_EQ(parse_answer("Maybe, the data are mixed", ynm), "maybe");
  EXPECT_EQ(parse_answer("(B)", ynm), "no");
  EXPECT_EQ(parse_answer("nothing here", ynm), std::nullopt);
}

TEST(QaScore, Accuracy) {
  const auto ex = mc_example();
  std::vector<std::pair<std::optional<std::string>, std::string>> pairs;
  for (int i = 0; i < 5; ++i) pairs.emplace_back(parse_answer("C", ex), ex.gold);
  EXPECT_DOUBLE_EQ(score_qa(pairs).accuracy, 1.0);
  pairs.emplace_back(parse_answer("the answer is: (B) Surface ectoderm", ex), ex.gold);
  pairs.emplace_back(std::nullopt, ex.gold);
  auto s = score_qa(pairs);
  EXPECT_EQ(s.correct, 5u);
  EXPECT_EQ(s.unparsed, 1u);
  EXPECT_NEAR(s.accuracy, 5.0 / 7.0, 1e-12);
  std::reverse(pairs.begin(), pairs.end());
  EXPECT_DOUBLE_EQ(score_qa(pairs).accuracy, s.accuracy);
}

TEST(QaFile, Adapters) {
  const auto dir = std::filesystem::temp_directory_path();
  {
    std::ofstream(dir / "gt_medqa.jsonl")
        << R"({"question":"q?","options":{"A":"a","B":"b","C":"c","D":"d"},"answer_idx":"B"})" << "\n";
    std::ofstream(dir / "gt_mcqa.jsonl")
        << R"({"question":"q?","opa":"a","opb":"b","opc":"c","opd":"d","cop":4})" << "\n";
    std::ofstream(dir / "gt_pqa.json")
        << R"({"123":{"QUESTION":"q?","CONTEXTS":["c1","c2"],"final_decision":"yes"}})";
  }
  const auto medqa = read_qa_file(dir / "gt_medqa.jsonl", QaFormat::medqa);
  ASSERT_EQ(medqa.size(), 1u);
  EXPECT_EQ(medqa[0].gold, "B");
  EXPECT_EQ(read_qa_file(dir / "gt_mcqa.jsonl", QaFormat::medmcqa)[0].gold, "D");
  const auto pqa = read_qa_file(dir / "gt_pqa.json", QaFormat::pubmedqa);
  ASSERT_EQ(pqa.size(), 1u);
  EXPECT_EQ(pqa[0].context, "c1 c2");
  EXPECT_EQ(pqa[0].kind, QaKind::yes_no_maybe);
}

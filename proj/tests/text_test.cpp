#include <gtest/gtest.h>

#include <filesystem>
#include <string>
#include <vector>

#include "gtlab/numerics/rng.hpp"
#include "gtlab/text/bpe.hpp"
#include "gtlab/text/corpus.hpp"
#include "gtlab/text/normalize.hpp"
#include "gtlab/text/sentences.hpp"
#include "support/clinical_corpus.hpp"

using namespace gtlab;
using namespace gtlab::text;

namespace {

// Random byte strings biased toward the characters normalize() cares about.
std::string fuzz_string(CounterRng& rng) {
  static const std::vector<std::string> pieces = {
      "\xc2\xa0", "&amp;", "&", "&#38;", "&#x26;", "&nbsp;", "&lt;b&gt;", "\r\n", "\r",
      "\xe2\x80\x9c", "\xe2\x80\x99", "\xe2\x80\x94", "\xe2\x80\xa6", "\xef\xbb\xbf",
      "\xf0\x9f\x98\x80", "\xff", "\xc3", "\xed\xa0\x80", "\x01", "abc", " ", "\n", "[**NAME**]",
      "&#0;", "&#xD800;", "&bogus;", "&amp;amp;", "caf\xc3\xa9"};
  std::string s;
  const auto n = rng.below(20);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (rng.below(4) == 0) {
      s.push_back(static_cast<char>(rng.below(256)));
    } else {
      s += pieces[rng.below(pieces.size())];
    }
  }
  return s;
}

}  // namespace

TEST(Normalize, NoBreakSpaceBecomesSpace) {
  EXPECT_EQ(normalize("blood\xc2\xa0pressure"), "blood pressure");
}

TEST(Normalize, CleanAsciiUnchanged) {
  const std::string s = "Pt seen today. BP 120/80, HR 72.\n\tPlan: f/u 2 wk.";
  NormalizeReport r;
  EXPECT_EQ(normalize(s, &r), s);
  EXPECT_TRUE(r.clean());
}

TEST(Normalize, DecodesEntitiesAndMapsPunctuation) {
  EXPECT_EQ(normalize("A &amp; B"), "A & B");
  EXPECT_EQ(normalize("&#x26;&#38;"), "&&");
  EXPECT_EQ(normalize("\xe2\x80\x9cok\xe2\x80\x9d \xe2\x80\x94 fine\xe2\x80\xa6"), "\"ok\" - fine...");
  EXPECT_EQ(normalize("a\r\nb\rc"), "a\nb\nc");
  EXPECT_EQ(normalize("&unknown; &"), "&unknown; &");
}

TEST(Normalize, DropsIllegalUtf8) {
  NormalizeReport r;
  EXPECT_EQ(normalize("ok\xff\xc3(", &r), "ok(");
  EXPECT_EQ(r.invalid_bytes_dropped, 2u);
  EXPECT_EQ(normalize("\xed\xa0\x80x"), "x");  // encoded surrogate
  EXPECT_EQ(normalize("\xc0\xaf"), "");        // overlong
}

TEST(Normalize, IdempotentAndValidOnFuzzCorpus) {
  CounterRng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto s = fuzz_string(rng);
    const auto once = normalize(s);
    ASSERT_TRUE(is_valid_utf8(once)) << i;
    ASSERT_EQ(normalize(once), once) << i;
  }
}

namespace {

NoteDocument doc(std::string id, std::string text) {
  return {std::move(id), {{"NOTE", std::move(text)}}, Source::real};
}

}  // namespace

TEST(Dedup, DropsExactDuplicates) {
  auto out = dedup({doc("1", "alpha"), doc("2", "alpha"), doc("3", "beta")});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].doc_id, "1");
  EXPECT_EQ(out[1].doc_id, "3");
}

TEST(Dedup, DropsEmptyDocuments) {
  DedupReport r;
  auto out = dedup({doc("1", ""), doc("2", "alpha"), doc("3", " \n\xc2\xa0")}, &r);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].doc_id, "2");
  EXPECT_EQ(r.empty_removed, 2u);
}

TEST(Dedup, DuplicatesAfterNormalizationCollapse) {
  auto out = dedup({doc("1", "A\xc2\xa0&amp; B"), doc("2", "A & B")});
  EXPECT_EQ(out.size(), 1u);
}

TEST(Dedup, RemovesExactlyTheSeededDuplicates) {
  fixtures::NoteGenerator gen(3);
  auto base = gen.notes(300);
  std::vector<NoteDocument> corpus = base;
  CounterRng rng(5);
  std::size_t seeded = 0;
  for (int cluster = 0; cluster < 25; ++cluster) {
    const auto& src = base[rng.below(base.size())];
    const auto copies = 1 + rng.below(4);
    for (std::uint64_t c = 0; c < copies; ++c) {
      auto dup = src;
      dup.doc_id += "-dup" + std::to_string(seeded);
      corpus.insert(corpus.begin() + static_cast<std::ptrdiff_t>(rng.below(corpus.size() + 1)), dup);
      ++seeded;
    }
  }
  ASSERT_EQ(dedup(base).size(), base.size());  // the generator itself yields no duplicates
  DedupReport r;
  auto out = dedup(corpus, &r);
  EXPECT_EQ(out.size(), corpus.size() - seeded);
  EXPECT_EQ(r.duplicates_removed, seeded);
  EXPECT_EQ(dedup(out), out);
}

TEST(Corpus, JsonlRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "gtlab_corpus_test.jsonl";
  fixtures::NoteGenerator gen(1);
  auto docs = gen.notes(20);
  docs[3].source = Source::synthetic;
  write_corpus(docs, path);
  EXPECT_EQ(read_corpus(path), docs);
  std::filesystem::remove(path);
}

TEST(Sentences, SplitsSimplePair) {
  EXPECT_EQ(sentence_split("A. B."), (std::vector<std::string>{"A.", "B."}));
}

TEST(Sentences, AbbreviationsDoNotSplit) {
  EXPECT_EQ(sentence_split("Dr. Smith saw pt."), (std::vector<std::string>{"Dr. Smith saw pt."}));
  EXPECT_EQ(sentence_split("Take 5 mg. p.o. daily. Return prn."),
            (std::vector<std::string>{"Take 5 mg. p.o. daily.", "Return prn."}));
}

TEST(Sentences, EmptyInput) {
  EXPECT_TRUE(sentence_split("").empty());
  EXPECT_TRUE(sentence_split(" \n ").empty());
}

TEST(Sentences, DecimalsListsAndNewlines) {
  EXPECT_EQ(sentence_split("Temp 37.5 today. Stable!"),
            (std::vector<std::string>{"Temp 37.5 today.", "Stable!"}));
  EXPECT_EQ(sentence_split("1. aspirin\n2. statin"),
            (std::vector<std::string>{"1. aspirin", "2. statin"}));
  EXPECT_EQ(sentence_split("Is it? Yes (confirmed.) Done"),
            (std::vector<std::string>{"Is it?", "Yes (confirmed.)", "Done"}));
}

TEST(Sentences, SpansReconstructInput) {
  for (const auto& text : fixtures::clinical_texts(20000)) {
    const auto spans = sentence_spans(text);
    std::size_t pos = 0;
    std::string rebuilt;
    for (const auto& s : spans) {
      ASSERT_LT(s.begin, s.end);
      ASSERT_LE(pos, s.begin);
      for (std::size_t k = pos; k < s.begin; ++k) {
        ASSERT_TRUE(text[k] == ' ' || text[k] == '\n' || text[k] == '\t');
      }
      rebuilt += text.substr(pos, s.end - pos);
      pos = s.end;
    }
    rebuilt += text.substr(pos);
    EXPECT_EQ(rebuilt, text);
  }
}

class Bpe : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    vocab_ = new Vocabulary(train_tokenizer(fixtures::clinical_texts(200000), 768));
  }
  static void TearDownTestSuite() { delete vocab_; }
  static Vocabulary* vocab_;
};
Vocabulary* Bpe::vocab_ = nullptr;

TEST_F(Bpe, ReachesRequestedSizeWithDenseIds) {
  EXPECT_EQ(vocab_->vocab_size(), 768u);
  EXPECT_EQ(vocab_->id_to_token.size(), vocab_->first_merge_id() + vocab_->merges.size());
}

TEST_F(Bpe, RoundTripFuzz) {
  Tokenizer tok(*vocab_);
  CounterRng rng(21);
  const std::vector<std::string> extras = {"\xf0\x9f\x98\x80", "\xf0\x9f\xa9\xba", "[**NAME**]",
                                           "[**DATE**]", " the patient", "\xff\xfe", "mg"};
  for (int i = 0; i < 10000; ++i) {
    std::string s;
    const auto n = rng.below(12);
    for (std::uint64_t k = 0; k < n; ++k) {
      const auto r = rng.below(3);
      if (r == 0) {
        s.push_back(static_cast<char>(rng.below(256)));
      } else if (r == 1) {
        s += extras[rng.below(extras.size())];
      } else {
        s += static_cast<char>('a' + rng.below(26));
        s += ' ';
      }
    }
    const auto ids = tok.encode(s);
    for (auto id : ids) {
      ASSERT_LT(static_cast<std::size_t>(id), tok.vocab_size());
    }
    ASSERT_EQ(tok.decode(ids), s) << i;
  }
}

TEST_F(Bpe, SingleByteMapsToItsByteId) {
  Tokenizer tok(*vocab_);
  EXPECT_EQ(tok.encode("x"), (std::vector<std::int32_t>{'x'}));
  EXPECT_EQ(tok.encode("\x80"), (std::vector<std::int32_t>{0x80}));
}

TEST_F(Bpe, CompressesInDomainText) {
  Tokenizer tok(*vocab_);
  const std::string s = "The patient reports shortness of breath and denies chest pain.";
  EXPECT_LT(tok.encode(s).size(), s.size() / 2);
}

TEST_F(Bpe, TrainingIsDeterministic) {
  EXPECT_EQ(train_tokenizer(fixtures::clinical_texts(200000), 768), *vocab_);
}

TEST_F(Bpe, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "gtlab_vocab_test.json";
  save_vocab(*vocab_, path);
  EXPECT_EQ(load_vocab(path), *vocab_);
  std::filesystem::remove(path);
}

TEST(BpeErrors, RejectsTinyVocabAndEmptyCorpus) {
  EXPECT_THROW(train_tokenizer({"abc"}, 100), VocabError);
  EXPECT_THROW(train_tokenizer({}, 1000), VocabError);
}

TEST(BpeErrors, StopsEarlyWhenPairsRunOut) {
  const auto v = train_tokenizer({"abab"}, 1000);
  // ab, then abab; nothing further to merge.
  EXPECT_EQ(v.merges.size(), 2u);
  EXPECT_EQ(Tokenizer(v).encode("abab"), (std::vector<std::int32_t>{258}));
}

TEST(BpeErrors, RejectsCorruptedTable) {
  auto v = train_tokenizer({"aaaa bbbb aaaa"}, 260);
  auto j = vocab_to_json(v);
  j["tokens"][258] = "zz";
  EXPECT_THROW(vocab_from_json(j), VocabError);
}

TEST(Pretokenize, ChunksConcatenateToInput) {
  const std::string s = "  Pt  has 12mg\n\n [**NAME**] ok.";
  std::string joined;
  for (auto c : pretokenize(s)) {
    joined += c;
  }
  EXPECT_EQ(joined, s);
  const auto chunks = pretokenize("saw pt");
  EXPECT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[1], " pt");
}

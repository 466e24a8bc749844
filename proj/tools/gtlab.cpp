// gtlab command-line front end. Checkpoints are float32; tokenizers,
// prompts and configs are JSON; data files are JSON lines.

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "gtlab/deid/deid.hpp"
#include "gtlab/eval/evalstats.hpp"
#include "gtlab/gen/sampler.hpp"
#include "gtlab/gpt/checkpoint_io.hpp"
#include "gtlab/gpt/train.hpp"
#include "gtlab/ptuning/ptuning.hpp"
#include "gtlab/review/http.hpp"
#include "gtlab/review/review.hpp"
#include "gtlab/synth/synthgen.hpp"
#include "gtlab/tasks/qa.hpp"
#include "gtlab/tasks/relation.hpp"
#include "gtlab/text/bpe.hpp"
#include "gtlab/text/corpus.hpp"
#include "gtlab/text/normalize.hpp"

using namespace gtlab;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_text(const fs::path& p, const std::string& s) {
  if (p.empty() || p == "-") {
    std::cout << s;
    return;
  }
  std::ofstream out(p, std::ios::binary);
  out << s;
  if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!text::is_blank(line)) out.push_back(line);
  }
  return out;
}

// A .jsonl corpus is read as notes (sections flattened); anything else is
// plain text with one document per line.
std::vector<std::string> read_texts(const fs::path& p) {
  if (p.extension() != ".jsonl") return read_lines(p);
  std::vector<std::string> out;
  for (const auto& d : text::read_corpus(p)) {
    std::string t;
    for (const auto& s : d.sections) t += (s.name.empty() ? "" : s.name + ":\n") + s.text + "\n";
    out.push_back(std::move(t));
  }
  return out;
}

text::Tokenizer load_tokenizer(const fs::path& p) { return text::Tokenizer(text::load_vocab(p)); }

void check_vocab(const Checkpoint<float>& ckpt, const text::Tokenizer& tok) {
  if (ckpt.config.vocab_size != tok.vocab_size()) {
    throw std::runtime_error("checkpoint vocab_size " + std::to_string(ckpt.config.vocab_size) +
                             " does not match tokenizer size " + std::to_string(tok.vocab_size()));
  }
}

// ---- vocab -------------------------------------------------------------------

struct VocabArgs {
  fs::path corpus, out;
  std::size_t size = 8192;
};

void run_vocab(const VocabArgs& a) {
  std::vector<std::string> texts;
  for (const auto& t : read_texts(a.corpus)) texts.push_back(text::normalize(t));
  const auto v = text::train_tokenizer(texts, a.size);
  text::save_vocab(v, a.out);
  std::cerr << "vocabulary: " << v.vocab_size() << " entries -> " << a.out << "\n";
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  fs::path config, corpus, tokenizer, out, init;
  std::size_t steps = 300, batch = 8;
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t warmup = 30;
};

void run_train(const TrainArgs& a) {
  const auto tok = load_tokenizer(a.tokenizer);
  const auto eot = tok.special_id(text::kEndOfText);
  std::vector<std::int32_t> stream;
  for (const auto& t : read_texts(a.corpus)) {
    const auto ids = tok.encode(text::normalize(t));
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(eot);
  }
  Checkpoint<float> start;
  if (!a.init.empty()) {
    start = load_checkpoint<float>(a.init);
  } else {
    auto cfg = a.config.empty() ? ModelConfig{} : read_json(a.config).get<ModelConfig>();
    cfg.vocab_size = tok.vocab_size();
    start = init_model<float>(cfg);
  }
  check_vocab(start, tok);
  StreamSource<float> source(stream, start.config.context_len, a.seed);
  TrainOptions opt;
  opt.steps = a.steps;
  opt.batch = a.batch;
  opt.seed = a.seed;
  opt.schedule = {.peak_lr = a.lr, .warmup_steps = std::min(a.warmup, a.steps - 1), .total_steps = a.steps,
                  .min_lr = 0.0};
  opt.log_interval = std::max<std::size_t>(1, a.steps / 20);
  const auto res = train(start, source, opt);
  for (const auto& p : res.trace) {
    std::cerr << "step " << p.step << " lr " << p.lr << " train "
              << (p.train_loss ? std::to_string(*p.train_loss) : std::string("-")) << " val " << p.val_loss << "\n";
  }
  save_checkpoint(res.ckpt, a.out);
  std::cerr << "saved " << a.out << " (" << param_count(res.ckpt.config) << " parameters)\n";
}

// ---- generate ----------------------------------------------------------------

struct GenerateArgs {
  fs::path ckpt, tokenizer, prompts, out;
  double top_p = 0.9, temperature = 1.2;
  std::size_t max_tokens = 512, variants = 1;
  std::uint64_t seed = 0;
};

void run_generate(const GenerateArgs& a) {
  const auto ckpt = load_checkpoint<float>(a.ckpt);
  const auto tok = load_tokenizer(a.tokenizer);
  check_vocab(ckpt, tok);
  std::string out;
  std::uint64_t record = 0;
  const auto prompts = read_lines(a.prompts);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto ids = tok.encode(prompts[i]);
    const auto pid = "prompt-" + std::to_string(i);
    for (std::size_t v = 0; v < a.variants; ++v) {
      SamplerConfig sc;
      sc.top_p = a.top_p;
      sc.temperature = a.temperature;
      sc.max_new_tokens = a.max_tokens;
      sc.stop_ids = {tok.special_id(text::kEndOfText)};
      sc.rng_seed = synth::variant_seed(a.seed, pid, v);
      auto res = generate<float>(ckpt, ids, sc);
      if (res.stopped) res.tokens.pop_back();
      synth::GenerationRecord r{record++, pid, sc.rng_seed, sc.top_p, sc.temperature, sc.max_new_tokens,
                                text::repair_utf8(tok.decode(res.tokens)), res.tokens.size(), 0};
      r.word_count = synth::word_count(r.output_text);
      out += json(r).dump() + "\n";
    }
  }
  write_text(a.out, out);
}

// ---- seeds / generate-corpus ---------------------------------------------------

struct SeedsArgs {
  fs::path corpus, tokenizer, out;
};

void run_seeds(const SeedsArgs& a) {
  const auto tok = load_tokenizer(a.tokenizer);
  synth::SeedReport rep;
  const auto seeds = synth::extract_seeds(text::read_corpus(a.corpus), tok, &rep);
  synth::write_seeds(seeds, a.out);
  std::cerr << seeds.size() << " seeds from " << rep.sections << " sections (" << rep.skipped_short
            << " too short, " << rep.duplicates << " duplicate openings)\n";
}

struct CorpusArgs {
  fs::path ckpt, tokenizer, seeds, out;
  synth::CorpusConfig cfg;
};

void run_generate_corpus(const CorpusArgs& a) {
  const auto ckpt = load_checkpoint<float>(a.ckpt);
  const auto tok = load_tokenizer(a.tokenizer);
  check_vocab(ckpt, tok);
  const auto m = synth::generate_corpus(ckpt, tok, synth::read_seeds(a.seeds), a.cfg, a.out);
  std::cout << synth::manifest_to_json(m).dump(2) << "\n";
}

// ---- ptune / eval ------------------------------------------------------------

struct PtuneArgs {
  fs::path ckpt, tokenizer, data, out;
  std::string task = "re", encoder = "recurrent", format = "native";
  std::size_t n_virtual = 15, steps = 200, batch = 32, encoder_hidden = 2048;
  double lr = 1e-4;
  std::uint64_t seed = 0;
};

tasks::QaFormat qa_format(const std::string& s) {
  if (s == "medqa") return tasks::QaFormat::medqa;
  if (s == "medmcqa") return tasks::QaFormat::medmcqa;
  if (s == "pubmedqa") return tasks::QaFormat::pubmedqa;
  return tasks::QaFormat::native;
}

std::vector<PromptExample> task_examples(const PtuneArgs& a, const text::Tokenizer& tok) {
  const auto eot = tok.special_id(text::kEndOfText);
  std::vector<PromptExample> out;
  auto push = [&](const std::string& x, const std::string& y) {
    auto yi = tok.encode(y);
    yi.push_back(eot);
    out.push_back({tok.encode(x), std::move(yi)});
  };
  if (a.task == "re") {
    for (const auto& ex : tasks::read_re_jsonl(a.data)) push(ex.text, " " + tasks::serialize_triplets(ex.gold));
  } else {
    for (const auto& ex : tasks::read_qa_file(a.data, qa_format(a.format))) push(tasks::build_qa_prompt(ex), ex.gold);
  }
  return out;
}

void run_ptune(const PtuneArgs& a) {
  const auto ckpt = load_checkpoint<float>(a.ckpt);
  const auto tok = load_tokenizer(a.tokenizer);
  check_vocab(ckpt, tok);
  SoftPromptConfig spc;
  spc.n_virtual = a.n_virtual;
  spc.encoder_kind = a.encoder == "feedforward" ? EncoderKind::feedforward : EncoderKind::recurrent;
  spc.encoder_hidden = a.encoder_hidden;
  spc.task_name = a.task;
  spc.init_seed = a.seed;
  PtuneHyper hp;
  hp.steps = a.steps;
  hp.batch = a.batch;
  hp.seed = a.seed;
  hp.schedule = {.peak_lr = a.lr, .warmup_steps = std::min<std::size_t>(50, a.steps / 4), .total_steps = a.steps,
                 .min_lr = 0.0};
  const auto res = ptune_train(ckpt, task_examples(a, tok), spc, hp);
  for (std::size_t i = 0; i < res.loss_trace.size(); ++i) {
    if ((i + 1) % 10 == 0 || i + 1 == res.loss_trace.size()) {
      std::cerr << "step " << i + 1 << " loss " << res.loss_trace[i] << "\n";
    }
  }
  save_prompt(res.weights, a.out);
  std::cerr << "saved " << a.out << "\n";
}

struct EvalArgs {
  fs::path ckpt, tokenizer, prompt, data, out;
  std::string format = "native";
  std::size_t max_tokens = 64;
};

std::string infer_text(const Checkpoint<float>& ckpt, const PromptWeights<float>& w, const text::Tokenizer& tok,
                       const std::string& x, std::size_t max_tokens) {
  InferOptions opt;
  opt.stop_ids = {tok.special_id(text::kEndOfText)};
  const auto ids = tok.encode(x);
  opt.max_new_tokens = std::min(max_tokens, ckpt.config.context_len - w.config.n_virtual - ids.size());
  return tok.decode(ptune_infer(ckpt, w, std::span<const std::int32_t>(ids), opt));
}

void run_eval_re(const EvalArgs& a) {
  const auto ckpt = load_checkpoint<float>(a.ckpt);
  const auto tok = load_tokenizer(a.tokenizer);
  const auto w = load_prompt<float>(a.prompt);
  std::vector<std::pair<tasks::TripletSet, tasks::TripletSet>> docs;
  std::size_t malformed = 0;
  for (const auto& ex : tasks::read_re_jsonl(a.data)) {
    const auto parsed = tasks::parse_triplets(infer_text(ckpt, w, tok, ex.text, a.max_tokens));
    malformed += parsed.malformed_regions;
    docs.push_back({ex.gold, parsed.triplets});
  }
  const auto s = tasks::score_re_micro(docs);
  const json rep{{"task", "re"},    {"documents", docs.size()}, {"precision", s.precision}, {"recall", s.recall},
                 {"f1", s.f1},      {"tp", s.tp},               {"fp", s.fp},               {"fn", s.fn},
                 {"malformed_regions", malformed}};
  write_text(a.out, rep.dump(2) + "\n");
}

void run_eval_qa(const EvalArgs& a) {
  const auto ckpt = load_checkpoint<float>(a.ckpt);
  const auto tok = load_tokenizer(a.tokenizer);
  const auto w = load_prompt<float>(a.prompt);
  std::vector<std::pair<std::optional<std::string>, std::string>> pairs;
  for (const auto& ex : tasks::read_qa_file(a.data, qa_format(a.format))) {
    const auto gen = infer_text(ckpt, w, tok, tasks::build_qa_prompt(ex), a.max_tokens);
    pairs.push_back({tasks::parse_answer(gen, ex), ex.gold});
  }
  const auto s = tasks::score_qa(pairs);
  const json rep{{"task", "qa"},
                 {"accuracy", s.accuracy},
                 {"correct", s.correct},
                 {"total", s.total},
                 {"unparsed", s.unparsed}};
  write_text(a.out, rep.dump(2) + "\n");
}

// ---- deid --------------------------------------------------------------------

struct DeidArgs {
  fs::path in, out, rules, report;
};

void run_deid(const DeidArgs& a) {
  const auto rules = a.rules.empty() ? deid::default_ruleset() : deid::load_ruleset(a.rules);
  deid::DeidReport rep;
  if (a.in.extension() == ".jsonl") {
    auto docs = text::read_corpus(a.in);
    for (auto& d : docs) {
      for (auto& s : d.sections) s.text = deid::deidentify(s.text, rules, &rep);
    }
    text::write_corpus(docs, a.out);
  } else {
    write_text(a.out, deid::deidentify(slurp(a.in), rules, &rep));
  }
  const json counts(rep.counts);
  if (!a.report.empty()) write_text(a.report, json{{"counts", counts}, {"total", rep.total()}}.dump(2) + "\n");
  std::cerr << rep.total() << " PHI spans redacted\n";
}

// ---- review ------------------------------------------------------------------

std::vector<review::Passage> read_passages(const fs::path& p) {
  std::vector<review::Passage> out;
  for (const auto& line : read_lines(p)) out.push_back(json::parse(line).get<review::Passage>());
  return out;
}

std::string truncate_tokens(const text::Tokenizer& tok, const std::string& s, std::size_t cap) {
  auto ids = tok.encode(s);
  if (ids.size() <= cap) return s;
  ids.resize(cap);
  return text::repair_utf8(tok.decode(ids));
}

struct ReviewArgs {
  fs::path data_dir = "review-data", ai, human, tokenizer, session, out;
  std::vector<std::string> raters;
  std::uint64_t seed = 0;
  bool truncate = false, as_json = false;
  int port = 8080;
  std::string host = "127.0.0.1";
};

review::ServiceOptions service_options(const ReviewArgs& a, std::optional<text::Tokenizer>& tok) {
  review::ServiceOptions o;
  if (!a.tokenizer.empty()) {
    tok.emplace(load_tokenizer(a.tokenizer));
    o.count_tokens = [&tok](std::string_view s) { return tok->encode(s).size(); };
  }
  return o;
}

void run_review_ingest(const ReviewArgs& a) {
  std::optional<text::Tokenizer> tok;
  review::ReviewService svc(a.data_dir, service_options(a, tok));
  review::SessionRequest req{read_passages(a.ai), read_passages(a.human), a.raters, a.seed};
  if (a.truncate) {
    if (!tok) throw std::runtime_error("--truncate needs --tokenizer");
    for (auto* side : {&req.ai, &req.human}) {
      for (auto& p : *side) p.text = truncate_tokens(*tok, review::strip_format(p.text), review::kTokenCap);
    }
  }
  const auto s = svc.create_session(req);
  std::cout << s.session_id << "\n";
  std::cerr << s.items.size() << " items, raters:";
  for (const auto& r : s.rater_ids) std::cerr << " " << r;
  std::cerr << "\n";
}

httplib::Server* g_server = nullptr;

void run_review_serve(const ReviewArgs& a) {
  std::optional<text::Tokenizer> tok;
  review::ReviewService svc(a.data_dir, service_options(a, tok));
  httplib::Server srv;
  review::install_routes(srv, svc);
  g_server = &srv;
  std::signal(SIGINT, [](int) { g_server->stop(); });
  std::signal(SIGTERM, [](int) { g_server->stop(); });
  std::cerr << "serving " << svc.session_ids().size() << " sessions from " << a.data_dir << " on " << a.host << ":"
            << a.port << "\n";
  if (!srv.listen(a.host, a.port)) throw std::runtime_error("cannot listen on port " + std::to_string(a.port));
}

// Consumes an export (one rating per line).
void run_review_report(const ReviewArgs& a) {
  eval::TuringBundle b;
  for (const auto& line : read_lines(a.session)) {
    auto r = json::parse(line).get<eval::RatedItem>();
    if (std::find(b.raters.begin(), b.raters.end(), r.rater) == b.raters.end()) b.raters.push_back(r.rater);
    b.ratings.push_back(std::move(r));
  }
  const auto rep = eval::turing_report(b);
  write_text(a.out, a.as_json ? eval::report_to_json(rep).dump(2) + "\n" : eval::format_report(rep));
}

void run_review_export(const ReviewArgs& a, const std::string& id) {
  review::ReviewService svc(a.data_dir);
  write_text(a.out, svc.export_ratings(id));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gtlab: clinical GPT toolkit"};
  app.require_subcommand(1);

  VocabArgs va;
  auto* vocab = app.add_subcommand("vocab", "train a byte-level BPE vocabulary");
  vocab->add_option("--corpus", va.corpus, "notes (.jsonl) or text, one document per line")->required();
  vocab->add_option("--size", va.size, "target vocabulary size");
  vocab->add_option("--out", va.out)->required();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train or continue training a model");
  tr->add_option("--config", ta.config, "model config JSON (vocab_size is taken from the tokenizer)");
  tr->add_option("--init", ta.init, "continue from this checkpoint instead of --config");
  tr->add_option("--corpus", ta.corpus)->required();
  tr->add_option("--tokenizer", ta.tokenizer)->required();
  tr->add_option("--steps", ta.steps)->check(CLI::PositiveNumber);
  tr->add_option("--batch", ta.batch);
  tr->add_option("--lr", ta.lr, "peak learning rate");
  tr->add_option("--warmup", ta.warmup);
  tr->add_option("--seed", ta.seed);
  tr->add_option("--out", ta.out)->required();

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "sample continuations of prompts");
  gen->add_option("--ckpt", ga.ckpt)->required();
  gen->add_option("--tokenizer", ga.tokenizer)->required();
  gen->add_option("--prompt-file", ga.prompts, "one prompt per line")->required();
  gen->add_option("--top-p", ga.top_p);
  gen->add_option("--temperature", ga.temperature);
  gen->add_option("--max-tokens", ga.max_tokens)->check(CLI::Range(1, 512));
  gen->add_option("--seed", ga.seed);
  gen->add_option("--n-variants", ga.variants)->check(CLI::PositiveNumber);
  gen->add_option("--out", ga.out, "records file (default stdout)");

  SeedsArgs sa;
  auto* seeds = app.add_subcommand("seeds", "extract 15-token section seeds from a note corpus");
  seeds->add_option("--corpus", sa.corpus)->required();
  seeds->add_option("--tokenizer", sa.tokenizer)->required();
  seeds->add_option("--out", sa.out)->required();

  CorpusArgs ca;
  auto* gc = app.add_subcommand("generate-corpus", "produce a synthetic corpus up to a word target");
  gc->add_option("--ckpt", ca.ckpt)->required();
  gc->add_option("--tokenizer", ca.tokenizer)->required();
  gc->add_option("--seeds", ca.seeds)->required();
  gc->add_option("--target-words", ca.cfg.target_words)->required();
  gc->add_option("--variants", ca.cfg.variants_per_seed);
  gc->add_option("--top-p", ca.cfg.top_p);
  gc->add_option("--temperature", ca.cfg.temperature);
  gc->add_option("--max-tokens", ca.cfg.max_new_tokens)->check(CLI::Range(1, 512));
  gc->add_option("--seed", ca.cfg.base_seed);
  gc->add_option("--workers", ca.cfg.workers);
  gc->add_option("--out", ca.out, "output directory (resumed if present)")->required();

  PtuneArgs pa;
  auto* pt = app.add_subcommand("ptune", "train a soft prompt against a frozen checkpoint");
  pt->add_option("--ckpt", pa.ckpt)->required();
  pt->add_option("--tokenizer", pa.tokenizer)->required();
  pt->add_option("--task", pa.task)->check(CLI::IsMember({"re", "qa"}))->required();
  pt->add_option("--data", pa.data)->required();
  pt->add_option("--format", pa.format, "QA file format")->check(CLI::IsMember({"native", "medqa", "medmcqa", "pubmedqa"}));
  pt->add_option("--n-virtual", pa.n_virtual);
  pt->add_option("--encoder", pa.encoder)->check(CLI::IsMember({"recurrent", "feedforward"}));
  pt->add_option("--encoder-hidden", pa.encoder_hidden);
  pt->add_option("--steps", pa.steps)->check(CLI::PositiveNumber);
  pt->add_option("--batch", pa.batch);
  pt->add_option("--lr", pa.lr);
  pt->add_option("--seed", pa.seed);
  pt->add_option("--out", pa.out)->required();

  EvalArgs ea;
  auto add_eval = [&](const char* name, const char* help) {
    auto* e = app.add_subcommand(name, help);
    e->add_option("--ckpt", ea.ckpt)->required();
    e->add_option("--tokenizer", ea.tokenizer)->required();
    e->add_option("--prompt", ea.prompt, "soft prompt file")->required();
    e->add_option("--data", ea.data)->required();
    e->add_option("--max-tokens", ea.max_tokens);
    e->add_option("--out", ea.out, "metrics report (default stdout)");
    return e;
  };
  auto* ere = add_eval("eval-re", "relation extraction: micro precision/recall/F1");
  auto* eqa = add_eval("eval-qa", "question answering: accuracy");
  eqa->add_option("--format", ea.format)->check(CLI::IsMember({"native", "medqa", "medmcqa", "pubmedqa"}));

  DeidArgs da;
  auto* de = app.add_subcommand("deid", "redact PHI");
  de->add_option("--in", da.in, "notes (.jsonl) or a text file");
  de->add_option("--out", da.out);
  de->add_option("--rules", da.rules, "ruleset JSON (default: built-in)");
  de->add_option("--report", da.report, "per-category counts");
  fs::path rules_out;
  auto* dump = de->add_subcommand("dump-rules", "write the built-in ruleset for editing");
  dump->add_option("--out", rules_out);

  ReviewArgs ra;
  std::string export_id;
  auto* rv = app.add_subcommand("review", "blinded review sessions");
  rv->require_subcommand(1);
  auto* serve = rv->add_subcommand("serve", "run the review HTTP service");
  serve->add_option("--port", ra.port);
  serve->add_option("--host", ra.host);
  serve->add_option("--data-dir", ra.data_dir);
  serve->add_option("--tokenizer", ra.tokenizer, "count the 512-token cap with this vocabulary");
  auto* ingest = rv->add_subcommand("ingest", "create a session from passage files");
  ingest->add_option("--ai", ra.ai, "AI passages, one {text, section_name} per line")->required();
  ingest->add_option("--human", ra.human, "human passages, same format")->required();
  ingest->add_option("--raters", ra.raters)->required()->delimiter(',');
  ingest->add_option("--seed", ra.seed);
  ingest->add_option("--data-dir", ra.data_dir);
  ingest->add_option("--tokenizer", ra.tokenizer);
  ingest->add_flag("--truncate", ra.truncate, "cut passages to 512 tokens (needs --tokenizer)");
  auto* report = rv->add_subcommand("report", "Turing-test report from a session export");
  report->add_option("--session", ra.session, "export file, one rating per line")->required();
  report->add_flag("--json", ra.as_json);
  report->add_option("--out", ra.out);
  auto* exp = rv->add_subcommand("export", "write a finalized session's ratings, one per line");
  exp->add_option("--id", export_id)->required();
  exp->add_option("--data-dir", ra.data_dir);
  exp->add_option("--out", ra.out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (vocab->parsed()) run_vocab(va);
    if (tr->parsed()) {
      if (!ta.config.empty() && !ta.init.empty()) throw std::runtime_error("--config and --init conflict");
      run_train(ta);
    }
    if (gen->parsed()) run_generate(ga);
    if (seeds->parsed()) run_seeds(sa);
    if (gc->parsed()) run_generate_corpus(ca);
    if (pt->parsed()) run_ptune(pa);
    if (ere->parsed()) run_eval_re(ea);
    if (eqa->parsed()) run_eval_qa(ea);
    if (de->parsed()) {
      if (dump->parsed()) {
        write_text(rules_out, deid::ruleset_to_json(deid::default_ruleset()).dump(2) + "\n");
      } else {
        if (da.in.empty() || da.out.empty()) throw std::runtime_error("deid needs --in and --out");
        run_deid(da);
      }
    }
    if (serve->parsed()) run_review_serve(ra);
    if (ingest->parsed()) run_review_ingest(ra);
    if (report->parsed()) run_review_report(ra);
    if (exp->parsed()) run_review_export(ra, export_id);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

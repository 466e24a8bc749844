#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "gtlab/review/http.hpp"
#include "gtlab/review/review.hpp"
#include "support/turing_fixture.hpp"

using namespace gtlab;
using namespace gtlab::review;

namespace {

const char* kWords[] = {"patient", "denies", "fever", "stable", "reports", "pain", "mild", "chest", "follow",
                        "up", "normal", "exam", "lungs", "clear", "continue", "plan", "blood", "pressure"};

std::string passage(CounterRng& rng, std::size_t words) {
  std::string s;
  for (std::size_t i = 0; i < words; ++i) s += (i ? " " : "") + std::string(kWords[rng.below(std::size(kWords))]);
  return s;
}

SessionRequest request(std::size_t per_side = 30, std::uint64_t seed = 5) {
  CounterRng rng(CounterRng::derive(seed, "passages"));
  SessionRequest r;
  for (std::size_t i = 0; i < per_side; ++i) {
    r.ai.push_back({passage(rng, 20 + rng.below(40)), "HPI"});
    r.human.push_back({passage(rng, 20 + rng.below(40)), "HPI"});
  }
  r.raters = {"physician-1", "physician-2"};
  r.shuffle_seed = seed;
  return r;
}

ServiceOptions fixed_clock(std::size_t snapshot_every = 32) {
  ServiceOptions o;
  o.clock = [] { return std::string("2026-01-01T00:00:00Z"); };
  o.snapshot_every = snapshot_every;
  return o;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("gtlab_review_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Rates everything the rater is served, deterministically from the item id.
void rate_all(ReviewService& svc, const std::string& id, const std::string& rater, std::size_t limit = 1000) {
  for (std::size_t n = 0; n < limit; ++n) {
    const auto next = svc.next_item(id, rater);
    if (!next.item) return;
    const auto h = CounterRng::derive(7, rater + next.item->item_id);
    svc.submit_rating(id, {rater, next.item->item_id, 1 + static_cast<int>(h % 9), 1 + static_cast<int>((h >> 8) % 9),
                           (h >> 16) % 2 ? Origin::ai : Origin::human});
  }
}

}  // namespace

TEST(Session, BalancedAndDeterministic) {
  const auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  ReviewService a(d1, fixed_clock()), b(d2, fixed_clock());
  const auto s1 = a.create_session(request());
  const auto s2 = b.create_session(request());
  ASSERT_EQ(s1.items.size(), 60u);
  EXPECT_EQ(std::count_if(s1.items.begin(), s1.items.end(), [](const auto& i) { return i.hidden_origin == Origin::ai; }),
            30);
  EXPECT_EQ(s1.items, s2.items);
  EXPECT_EQ(s1.session_id, s2.session_id);
  // Not simply all AI followed by all human.
  std::size_t flips = 0;
  for (std::size_t i = 1; i < s1.items.size(); ++i) flips += s1.items[i].hidden_origin != s1.items[i - 1].hidden_origin;
  EXPECT_GT(flips, 5u);
  auto other = request();
  other.shuffle_seed = 6;
  EXPECT_NE(b.create_session(other).items, s1.items);
  EXPECT_THROW(a.create_session(request()), ReviewError);  // same session twice
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST(Session, RejectsBadRequests) {
  const auto d = fresh_dir("bad");
  ReviewService svc(d, fixed_clock());
  auto r = request(3);
  r.raters.clear();
  EXPECT_THROW(svc.create_session(r), ReviewError);
  r = request(3);
  r.ai.clear();
  EXPECT_THROW(svc.create_session(r), ReviewError);
  r = request(3);
  r.human.push_back(r.ai[0]);
  try {
    svc.create_session(r);
    FAIL();
  } catch (const ReviewError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::conflict);
  }
  r = request(3);
  r.ai[1].text = std::string(600 * 2, 'x');
  for (std::size_t i = 0; i < 600; ++i) r.ai[1].text[2 * i + 1] = ' ';
  try {
    svc.create_session(r);
    FAIL();
  } catch (const ReviewError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid);
    EXPECT_NE(std::string(e.what()).find("truncate"), std::string::npos);
  }
  std::filesystem::remove_all(d);
}

TEST(Session, FormatStripping) {
  EXPECT_EQ(strip_format("<b>Chest</b> pain,\n\n  **worse**  at night"), "Chest pain, worse at night");
  EXPECT_EQ(strip_format("# HPI\n- fever\n- cough\n1. rest"), "HPI fever cough rest");
  EXPECT_EQ(strip_format("  \n\t "), "");
}

TEST(Next, FollowsPerRaterOrder) {
  const auto d = fresh_dir("next");
  ReviewService svc(d, fixed_clock());
  const auto s = svc.create_session(request());
  const auto o1 = rater_order(s, "physician-1"), o2 = rater_order(s, "physician-2");
  EXPECT_NE(o1, o2);
  const auto n = svc.next_item(s.session_id, "physician-1");
  ASSERT_TRUE(n.item);
  EXPECT_EQ(n.item->item_id, s.items[o1[0]].item_id);
  EXPECT_EQ(n.progress.rated, 0u);
  svc.submit_rating(s.session_id, {"physician-1", n.item->item_id, 5, 5, Origin::ai});
  EXPECT_EQ(svc.next_item(s.session_id, "physician-1").item->item_id, s.items[o1[1]].item_id);
  EXPECT_EQ(svc.next_item(s.session_id, "physician-2").item->item_id, s.items[o2[0]].item_id);
  rate_all(svc, s.session_id, "physician-1");
  const auto done = svc.next_item(s.session_id, "physician-1");
  EXPECT_FALSE(done.item);
  EXPECT_EQ(done.progress.rated, 60u);
  EXPECT_THROW(svc.next_item(s.session_id, "nobody"), ReviewError);
  EXPECT_THROW(svc.next_item("s-missing", "physician-1"), ReviewError);
  std::filesystem::remove_all(d);
}

TEST(Ratings, Validation) {
  const auto d = fresh_dir("val");
  ReviewService svc(d, fixed_clock());
  const auto s = svc.create_session(request(3));
  const auto item = s.items[0].item_id;
  auto kind = [&](RatingInput r) {
    try {
      svc.submit_rating(s.session_id, r);
    } catch (const ReviewError& e) {
      return e.kind();
    }
    return ErrorKind{-1};
  };
  EXPECT_EQ(kind({"physician-1", item, 10, 5, Origin::ai}), ErrorKind::invalid);
  EXPECT_EQ(kind({"physician-1", item, 5, 0, Origin::ai}), ErrorKind::invalid);
  EXPECT_EQ(kind({"physician-1", "item-nope", 5, 5, Origin::ai}), ErrorKind::not_found);
  EXPECT_EQ(kind({"intruder", item, 5, 5, Origin::ai}), ErrorKind::not_found);
  svc.submit_rating(s.session_id, {"physician-1", item, 9, 1, Origin::human});
  EXPECT_EQ(kind({"physician-1", item, 5, 5, Origin::ai}), ErrorKind::conflict);
  EXPECT_EQ(svc.session(s.session_id).ratings.size(), 1u);
  std::filesystem::remove_all(d);
}

TEST(Finalize, CompletenessAndImmutability) {
  const auto d = fresh_dir("fin");
  ReviewService svc(d, fixed_clock());
  const auto s = svc.create_session(request());
  rate_all(svc, s.session_id, "physician-1");
  try {
    svc.finalize(s.session_id);
    FAIL();
  } catch (const ReviewError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::incomplete);
  }
  EXPECT_THROW(svc.bundle(s.session_id), ReviewError);
  rate_all(svc, s.session_id, "physician-2");
  const auto b = svc.finalize(s.session_id);
  EXPECT_EQ(b.ratings.size(), 120u);
  EXPECT_EQ(b.raters.size(), 2u);
  EXPECT_FALSE(svc.session(s.session_id).partial);
  EXPECT_EQ(eval::turing_report(b).raters.size(), 2u);
  const auto before = svc.session(s.session_id);
  try {
    svc.submit_rating(s.session_id, {"physician-1", s.items[0].item_id, 5, 5, Origin::ai});
    FAIL();
  } catch (const ReviewError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::finalized);
  }
  EXPECT_THROW(svc.finalize(s.session_id, true), ReviewError);
  EXPECT_THROW(svc.next_item(s.session_id, "physician-1"), ReviewError);
  EXPECT_EQ(svc.session(s.session_id), before);
  std::size_t lines = 0;
  for (char c : svc.export_ratings(s.session_id)) lines += c == '\n';
  EXPECT_EQ(lines, 120u);
  std::filesystem::remove_all(d);
}

TEST(Finalize, PartialFlag) {
  const auto d = fresh_dir("partial");
  ReviewService svc(d, fixed_clock());
  const auto s = svc.create_session(request());
  rate_all(svc, s.session_id, "physician-1", 10);
  const auto b = svc.finalize(s.session_id, true);
  EXPECT_EQ(b.ratings.size(), 10u);
  EXPECT_TRUE(svc.session(s.session_id).partial);
  std::filesystem::remove_all(d);
}

TEST(Durability, RestartReplaysJournal) {
  for (std::size_t snap : {0u, 7u, 1u}) {
    const auto d = fresh_dir("replay");
    std::string id;
    ReviewSession live;
    {
      ReviewService svc(d, fixed_clock(snap));
      id = svc.create_session(request()).session_id;
      rate_all(svc, id, "physician-1", 45);
      rate_all(svc, id, "physician-2", 13);
      live = svc.session(id);
    }
    ReviewService restarted(d, fixed_clock(snap));
    EXPECT_EQ(restarted.session(id), live) << "snapshot_every " << snap;
    EXPECT_EQ(replay_journal(d / id), live);
    // A write that never completed is not part of the state.
    { std::ofstream(d / id / "journal.jsonl", std::ios::app) << R"({"op":"rating","rating":{"rater_id")"; }
    ReviewService again(d, fixed_clock(snap));
    EXPECT_EQ(again.session(id), live);
    // The restarted service keeps going where the old one stopped.
    EXPECT_EQ(again.next_item(id, "physician-1").progress.rated, 45u);
    std::filesystem::remove_all(d);
  }
}

TEST(Durability, ConcurrentRatersSerialize) {
  const auto d = fresh_dir("conc");
  ReviewService svc(d, fixed_clock(5));
  auto req = request();
  req.raters = {"r1", "r2", "r3", "r4"};
  const auto id = svc.create_session(req).session_id;
  std::vector<std::thread> ts;
  for (const auto& r : req.raters) ts.emplace_back([&, r] { rate_all(svc, id, r); });
  for (auto& t : ts) t.join();
  EXPECT_EQ(svc.session(id).ratings.size(), 240u);
  ReviewService restarted(d, fixed_clock(5));
  EXPECT_EQ(restarted.session(id), svc.session(id));
  std::filesystem::remove_all(d);
}

TEST(Fixture, ReportThroughService) {
  const auto d = fresh_dir("fixture");
  ReviewService svc(d, fixed_clock());
  const auto items = fixtures::turing_items();
  SessionRequest req;
  std::map<std::string, std::string> text_of;
  for (const auto& it : items) {
    const auto text = "passage text for " + it.item_id;
    text_of[it.item_id] = text;
    (it.origin == Origin::ai ? req.ai : req.human).push_back({text, "HPI"});
  }
  req.raters = {"physician-1", "physician-2"};
  req.shuffle_seed = 1;
  const auto s = svc.create_session(req);
  std::map<std::string, std::string> service_id;
  for (const auto& it : s.items) {
    for (const auto& [fid, text] : text_of) {
      if (text == it.text) service_id[fid] = it.item_id;
    }
  }
  ASSERT_EQ(service_id.size(), 60u);
  for (const auto& r : fixtures::turing_ratings()) {
    svc.submit_rating(s.session_id,
                      {req.raters[r.rater], service_id.at(r.item_id), r.readability, r.relevance, r.guess});
  }
  const auto rep = eval::turing_report(svc.finalize(s.session_id));
  EXPECT_NEAR(rep.pooled.ai.percent(), 36.7, 0.05);
  EXPECT_NEAR(rep.pooled.human.percent(), 61.7, 0.05);
  EXPECT_NEAR(rep.pooled.overall.percent(), 49.2, 0.05);
  EXPECT_EQ(rep.agreement.at(0).table, fixtures::kReadabilityTable);
  EXPECT_EQ(rep.agreement.at(1).table, fixtures::kRelevanceTable);
  std::filesystem::remove_all(d);
}

// ---- HTTP -------------------------------------------------------------------

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fresh_dir("http");
    svc_ = std::make_unique<ReviewService>(dir_, fixed_clock());
    install_routes(srv_, *svc_);
    port_ = srv_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
  }
  void TearDown() override {
    srv_.stop();
    thread_.join();
    std::filesystem::remove_all(dir_);
  }
  httplib::Client client() { return httplib::Client("127.0.0.1", port_); }

  std::filesystem::path dir_;
  std::unique_ptr<ReviewService> svc_;
  httplib::Server srv_;
  int port_ = 0;
  std::thread thread_;
};

TEST_F(Http, BlindedPayloadsAcrossFuzzSession) {
  auto cli = client();
  const auto created = cli.Post("/sessions", nlohmann::json(request(30, 21)).dump(), "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 201);
  std::vector<std::string> rater_facing{created->body};
  const auto id = nlohmann::json::parse(created->body).at("session_id").get<std::string>();

  CounterRng rng(99);
  std::set<std::string> seen;
  for (const std::string rater : {"physician-1", "physician-2"}) {
    for (;;) {
      const auto next = cli.Get("/sessions/" + id + "/next?rater=" + rater);
      ASSERT_TRUE(next);
      ASSERT_EQ(next->status, 200);
      rater_facing.push_back(next->body);
      const auto j = nlohmann::json::parse(next->body);
      if (j.at("done").get<bool>()) break;
      seen.insert(j.at("item_id").get<std::string>());
      const nlohmann::json rating{{"rater", rater},
                                  {"item_id", j.at("item_id")},
                                  {"readability", 1 + rng.below(9)},
                                  {"relevance", 1 + rng.below(9)},
                                  {"origin_guess", rng.below(2) ? "AI" : "Human"}};
      const auto ack = cli.Post("/sessions/" + id + "/ratings", rating.dump(), "application/json");
      ASSERT_TRUE(ack);
      ASSERT_EQ(ack->status, 201);
      rater_facing.push_back(ack->body);
    }
  }
  EXPECT_EQ(seen.size(), 60u);
  ASSERT_EQ(rater_facing.size(), 1u + 2 * (60 * 2 + 1));
  for (const auto& body : rater_facing) {
    EXPECT_EQ(body.find("\"AI\""), std::string::npos) << body;
    EXPECT_EQ(body.find("\"Human\""), std::string::npos) << body;
    EXPECT_EQ(body.find("origin"), std::string::npos) << body;
  }

  const auto fin = cli.Post("/sessions/" + id + "/finalize", "{}", "application/json");
  ASSERT_TRUE(fin);
  EXPECT_EQ(fin->status, 200);
  const auto rep = cli.Get("/sessions/" + id + "/report");
  ASSERT_TRUE(rep);
  EXPECT_EQ(rep->status, 200);
  const auto rj = nlohmann::json::parse(rep->body);
  EXPECT_TRUE(rj.contains("report"));
  EXPECT_NE(rj.at("text").get<std::string>().find("AI"), std::string::npos);
  const auto exp = cli.Get("/sessions/" + id + "/export");
  ASSERT_TRUE(exp);
  EXPECT_EQ(std::count(exp->body.begin(), exp->body.end(), '\n'), 120);
}

TEST_F(Http, ErrorStatuses) {
  auto cli = client();
  EXPECT_EQ(cli.Post("/sessions", "not json", "application/json")->status, 400);
  auto bad = request(2);
  bad.raters.clear();
  EXPECT_EQ(cli.Post("/sessions", nlohmann::json(bad).dump(), "application/json")->status, 400);
  const auto created = cli.Post("/sessions", nlohmann::json(request(2)).dump(), "application/json");
  const auto id = nlohmann::json::parse(created->body).at("session_id").get<std::string>();
  EXPECT_EQ(cli.Get("/sessions/nope/next?rater=physician-1")->status, 404);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/next")->status, 400);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/next?rater=ghost")->status, 404);
  const auto item = svc_->session(id).items[0].item_id;
  auto rate = [&](int readability, const char* guess) {
    return cli
        .Post("/sessions/" + id + "/ratings",
              nlohmann::json{{"rater", "physician-1"},
                             {"item_id", item},
                             {"readability", readability},
                             {"relevance", 3},
                             {"origin_guess", guess}}
                  .dump(),
              "application/json")
        ->status;
  };
  EXPECT_EQ(rate(10, "AI"), 400);
  EXPECT_EQ(rate(5, "robot"), 400);
  EXPECT_EQ(rate(5, "AI"), 201);
  EXPECT_EQ(rate(5, "AI"), 409);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/report")->status, 409);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/finalize", "{}", "application/json")->status, 409);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/finalize", R"({"partial":true})", "application/json")->status, 200);
  EXPECT_EQ(rate(6, "Human"), 409);
}

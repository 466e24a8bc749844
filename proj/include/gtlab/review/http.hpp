#pragma once

// JSON-over-HTTP front end for ReviewService.
//
//   POST /sessions                      {ai, human, raters, shuffle_seed} -> 201 {session_id, items, raters}
//   GET  /sessions/{id}/next?rater=R    -> {done, item_id?, text?, progress}
//   POST /sessions/{id}/ratings         {rater, item_id, readability, relevance, origin_guess} -> 201 {progress}
//   POST /sessions/{id}/finalize        {partial?} -> {session_id, state, partial, ratings}
//   GET  /sessions/{id}/report          -> {report, text}   (finalized sessions only)
//   GET  /sessions/{id}/export          -> one rating per line (finalized sessions only)
//
// Errors come back as {error, message} with 400/404/409.

#include <memory>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "gtlab/eval/evalstats.hpp"
#include "gtlab/review/review.hpp"

namespace gtlab::review {

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict:
    case ErrorKind::finalized:
    case ErrorKind::incomplete: return 409;
  }
  return 500;
}

namespace detail {

inline void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ReviewError& e) {
    reply(res, http_status(e.kind()), {{"error", error_name(e.kind())}, {"message", e.what()}});
  } catch (const nlohmann::json::exception& e) {
    reply(res, 400, {{"error", "invalid"}, {"message", e.what()}});
  } catch (const eval::StatsError& e) {
    reply(res, 409, {{"error", "incomplete"}, {"message", e.what()}});
  }
}

inline nlohmann::json body_json(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ReviewError(ErrorKind::invalid, std::string("body is not JSON: ") + e.what());
  }
}

}  // namespace detail

inline void install_routes(httplib::Server& srv, ReviewService& svc) {
  using httplib::Request;
  using httplib::Response;
  using detail::guarded;
  using detail::reply;

  srv.Post("/sessions", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto s = svc.create_session(detail::body_json(req).get<SessionRequest>());
      reply(res, 201, {{"session_id", s.session_id}, {"items", s.items.size()}, {"raters", s.rater_ids}});
    });
  });
  srv.Get(R"(/sessions/([^/]+)/next)", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      if (!req.has_param("rater")) throw ReviewError(ErrorKind::invalid, "missing ?rater=");
      reply(res, 200, to_json(svc.next_item(req.matches[1], req.get_param_value("rater"))));
    });
  });
  srv.Post(R"(/sessions/([^/]+)/ratings)", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto p = svc.submit_rating(req.matches[1], rating_from_json(detail::body_json(req)));
      reply(res, 201, {{"status", "recorded"}, {"progress", {{"rated", p.rated}, {"total", p.total}}}});
    });
  });
  srv.Post(R"(/sessions/([^/]+)/finalize)", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto body = detail::body_json(req);
      const auto b = svc.finalize(req.matches[1], body.value("partial", false));
      const auto s = svc.session(req.matches[1]);
      reply(res, 200,
            {{"session_id", s.session_id}, {"state", s.state}, {"partial", s.partial}, {"ratings", b.ratings.size()}});
    });
  });
  srv.Get(R"(/sessions/([^/]+)/report)", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      const auto rep = eval::turing_report(svc.bundle(req.matches[1]));
      reply(res, 200, {{"report", eval::report_to_json(rep)}, {"text", eval::format_report(rep)}});
    });
  });
  srv.Get(R"(/sessions/([^/]+)/export)", [&svc](const Request& req, Response& res) {
    guarded(res, [&] {
      res.status = 200;
      res.set_content(svc.export_ratings(req.matches[1]), "application/x-ndjson");
    });
  });
}

}  // namespace gtlab::review

#include "inlineac/study_server.hpp"

#include <algorithm>
#include <random>

#include <httplib.h>

namespace inlineac::studysvc {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
  reply(res, status, {{"error", kind}, {"message", message}});
}

// Maps service exceptions onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const UnknownSession& e) {
    error(res, 404, "unknown_session", e.what());
  } catch (const OrderingError& e) {
    error(res, 409, "ordering", e.what());
  } catch (const SessionError& e) {
    error(res, 400, "session", e.what());
  } catch (const ConfigError& e) {
    error(res, 400, "config", e.what());
  } catch (const FormatError& e) {
    error(res, 400, "format", e.what());
  } catch (const json::exception& e) {
    error(res, 400, "format", e.what());
  } catch (const std::exception& e) {
    error(res, 500, "internal", e.what());
  }
}

json prompt_json(const Session& s) {
  json j = {{"session", s.id},
            {"status", s.status == SessionStatus::Active ? "active" : "complete"},
            {"instance", s.cursor},
            {"total", s.instances.size()},
            {"typed", s.typed}};
  if (s.status == SessionStatus::Active) {
    const auto& inst = s.instances[s.cursor];
    j["prompt"] = s.prompts[inst.prompt];
    j["condition"] = to_string(inst.condition);
  } else {
    j["prompt"] = nullptr;
    j["condition"] = nullptr;
  }
  return j;
}

json fatigue_json(const std::vector<FatigueBucket>& buckets) {
  json out = json::array();
  for (const auto& b : buckets) {
    out.push_back({{"bin_lo", b.bin_lo}, {"bin_hi", b.bin_hi}, {"rate", b.rate}, {"ci95", b.ci95}, {"n", b.n}});
  }
  return out;
}

}  // namespace

json analysis_json(std::span<const SessionLog> logs, std::size_t fatigue_bin_width) {
  const auto pairing = paired_samples(logs);
  json j;
  j["sessions"] = logs.size();
  j["pairing"] = {{"samples", pairing.samples.size()},
                  {"unmatched_with", pairing.unmatched_with},
                  {"unmatched_without", pairing.unmatched_without},
                  {"excluded", pairing.excluded}};
  try {
    j["load_estimate"] = estimate_load(pairing.samples).to_json();
  } catch (const EstimationError& e) {
    j["load_estimate"] = nullptr;
    j["load_error"] = e.what();
  }
  const auto curves = fatigue_curve(logs, {fatigue_bin_width});
  j["fatigue"] = {{"by_past_suggestions", fatigue_json(curves.by_past_suggestions)},
                  {"by_past_incorrect", fatigue_json(curves.by_past_incorrect)}};
  std::size_t shown = 0, accepted = 0;
  for (const auto& log : logs) {
    for (const auto& e : log.events) {
      if (e.condition != Condition::WithSuggestions || !e.suggestion_shown) continue;
      if (e.kind != KeyKind::Char && e.kind != KeyKind::Accept) continue;
      ++shown;
      if (e.accepted) ++accepted;
    }
  }
  j["suggestions_shown"] = shown;
  j["suggestions_accepted"] = accepted;
  j["acceptance_rate"] = shown ? static_cast<double>(accepted) / static_cast<double>(shown) : 0.0;
  return j;
}

void register_routes(httplib::Server& server, StudyService& service, ServerOptions options) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  auto pool = std::make_shared<const ServerOptions>(std::move(options));

  server.Post("/api/sessions", [&service, pool](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = req.body.empty() ? json::object() : json::parse(req.body);
      const auto seed = body.value("seed", std::uint64_t{std::random_device{}()});
      std::vector<std::string> prompts;
      if (body.contains("prompts")) {
        prompts = body.at("prompts").get<std::vector<std::string>>();
      } else {
        prompts = pool->prompt_pool;
        std::mt19937_64 rng(seed);
        std::shuffle(prompts.begin(), prompts.end(), rng);
        if (prompts.size() > pool->prompts_per_session) prompts.resize(pool->prompts_per_session);
      }
      const auto s = service.create_session(body.value("participant", std::string("anonymous")), std::move(prompts),
                                            body.value("policy", std::string()), seed);
      reply(res, 201, s.to_json());
    });
  });

  server.Get("/api/sessions/:id", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, service.session(req.path_params.at("id")).to_json()); });
  });

  server.Get("/api/sessions/:id/prompt", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, prompt_json(service.session(req.path_params.at("id")))); });
  });

  server.Post("/api/sessions/:id/suggest", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      const auto s = service.suggest(req.path_params.at("id"), body.at("context").get<std::string>());
      json out;
      if (s.candidate) {
        out["suggestion"] = {{"completion", suggested_words(*s.candidate)},
                             {"insertion", s.insertion},
                             {"raw_prob", s.candidate->raw_prob}};
      } else {
        out["suggestion"] = nullptr;
      }
      reply(res, 200, out);
    });
  });

  server.Post("/api/sessions/:id/events", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = json::parse(req.body);
      std::vector<KeyEvent> events;
      for (const auto& e : body.at("events")) events.push_back(KeyEvent::from_json(e));
      std::sort(events.begin(), events.end(), [](const KeyEvent& a, const KeyEvent& b) { return a.seq < b.seq; });
      const auto ack = service.record_events(req.path_params.at("id"), events);
      reply(res, 200,
            {{"applied", ack.applied},
             {"duplicates", ack.duplicates},
             {"instance", ack.instance},
             {"typed", ack.typed},
             {"status", ack.status == SessionStatus::Active ? "active" : "complete"}});
    });
  });

  server.Get("/api/sessions/:id/analysis", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto log = service.snapshot(req.path_params.at("id"));
      reply(res, 200, analysis_json(std::span<const SessionLog>(&log, 1)));
    });
  });

  server.Get("/api/analysis", [&service](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      const auto logs = service.snapshot_all();
      reply(res, 200, analysis_json(logs));
    });
  });
}

void serve(StudyService& service, ServerOptions options, const std::string& host, int port) {
  httplib::Server server;
  register_routes(server, service, std::move(options));
  if (!server.listen(host, port)) throw SessionError("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace inlineac::studysvc

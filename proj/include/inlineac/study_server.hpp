#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "inlineac/studysvc.hpp"

namespace httplib {
class Server;
}

namespace inlineac::studysvc {

struct ServerOptions {
  /// Prompts drawn for sessions created without an explicit list.
  std::vector<std::string> prompt_pool;
  std::size_t prompts_per_session = 42;
};

/// JSON over HTTP, all under /api:
///   POST /sessions                 {participant, prompts?, policy?, seed?}
///   GET  /sessions/:id
///   GET  /sessions/:id/prompt
///   POST /sessions/:id/suggest     {context}
///   POST /sessions/:id/events      {events: [{seq, timestamp_ms, key, suggestion}]}
///   GET  /sessions/:id/analysis
///   GET  /analysis
void register_routes(httplib::Server& server, StudyService& service, ServerOptions options);

/// Blocks until the server stops.
void serve(StudyService& service, ServerOptions options, const std::string& host, int port);

/// Analysis payload shared by the HTTP endpoints and the CLI.
nlohmann::json analysis_json(std::span<const SessionLog> logs, std::size_t fatigue_bin_width = 10);

}  // namespace inlineac::studysvc

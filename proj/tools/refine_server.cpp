// Reference refinement server for the external proposer backend.
//
//   POST /refine   {"source": "...", "n": 4, "seed": 7, "temperature": 1.0}
//   response       {"candidates": ["...", ...]}
//
// Proposals come from the corpus's own one-edit rule, so every candidate is
// valid by construction and candidate i depends only on (source, seed, i) —
// the same contract the in-process backends keep. An unparseable source
// yields n empty strings rather than an error, mirroring how the loop treats
// a refiner that cannot propose.
//
// The chosen port is printed to stdout (useful with --port 0); request logs
// go to stderr.

#include <csignal>
#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "respec/http.hpp"

#include <json.hpp>

#include "respec/errors.hpp"
#include "respec/refiner.hpp"

using nlohmann::json;
using namespace respec;

namespace {

httplib::Server* g_server = nullptr;

void handle_stop(int) {
  if (g_server) g_server->stop();
}

void handle_refine(const httplib::Request& req, httplib::Response& res) {
  json body = json::parse(req.body, nullptr, /*allow_exceptions=*/false);
  int n = body.is_object() ? body.value("n", 1) : 1;
  uint64_t seed = body.is_object() ? body.value("seed", uint64_t{0}) : 0;
  std::string source = body.is_object() ? body.value("source", "") : "";
  if (n < 0) n = 0;

  json resp;
  refine::OracleRefiner oracle;
  try {
    resp["candidates"] = oracle.refine(source, n, seed);
  } catch (const InvalidSource&) {
    resp["candidates"] = std::vector<std::string>(static_cast<size_t>(n));
  }
  res.set_content(resp.dump() + "\n", "application/json");
  std::cerr << "refine: n=" << n << " seed=" << seed << " source_bytes=" << source.size() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-edit refinement server (external proposer backend)"};
  std::string host = "127.0.0.1";
  int port = 8700;
  app.add_option("--host", host, "address to bind")->default_str(host);
  app.add_option("--port", port, "port to bind (0 = pick a free one)")->default_str("8700");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e), 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e), 2;
  }

  httplib::Server server;
  g_server = &server;
  server.Post("/refine", handle_refine);

  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
    if (bound < 0) {
      std::cerr << "error: cannot bind to " << host << "\n";
      return 1;
    }
  } else if (!server.bind_to_port(host, port)) {
    std::cerr << "error: cannot bind to " << host << ":" << port << "\n";
    return 1;
  }

  std::signal(SIGINT, handle_stop);
  std::signal(SIGTERM, handle_stop);
  std::cout << bound << std::endl;  // announce the port, then serve
  std::cerr << "listening on " << host << ":" << bound << " (POST /refine)\n";
  server.listen_after_bind();
  return 0;
}

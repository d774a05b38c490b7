#include "candlab/review_server.hpp"

#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "candlab/error.hpp"
#include "candlab/png_io.hpp"

namespace candlab {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kFallbackIndex =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>candlab review</title></head>"
    "<body><h1>candlab review service</h1><p>No UI bundle was configured (use --static). "
    "API: GET /api/pairs/next?reviewer=NAME, GET /api/images/ID, POST /api/decisions, GET /api/progress.</p>"
    "</body></html>";

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

}  // namespace

struct ReviewServer::Impl {
  ReviewSession& session;
  std::unordered_map<std::string, const Image*> images;
  httplib::Server server;
  int port = -1;

  Impl(ReviewSession& s, const CandidateDataset& test, const CandidateDataset& train,
       const std::filesystem::path& static_dir)
      : session(s) {
    for (const auto& r : train.records) images[r.id] = &r.image;
    for (const auto& r : test.records) images[r.id] = &r.image;
    routes(static_dir);
  }

  void routes(const std::filesystem::path& static_dir) {
    server.Get("/api/pairs/next", [this](const httplib::Request& req, httplib::Response& res) {
      const auto reviewer = req.get_param_value("reviewer");
      if (reviewer.empty()) return send_error(res, 400, "reviewer parameter is required");
      const auto pair = session.next_pair(reviewer);
      if (!pair) {
        res.status = 204;
        return;
      }
      send_json(res, 200,
                json{{"pair_id", pair->pair_id},
                     {"test_id", pair->test_id},
                     {"train_id", pair->train_id},
                     {"l2", pair->l2_distance},
                     {"ssim", pair->ssim}});
    });

    server.Get(R"(/api/images/(.+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto it = images.find(req.matches[1].str());
      if (it == images.end()) return send_error(res, 404, "unknown image id");
      const auto png = encode_png(*it->second);
      res.status = 200;
      res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
    });

    server.Post("/api/decisions", [this](const httplib::Request& req, httplib::Response& res) {
      ReviewDecision decision;
      try {
        const auto body = json::parse(req.body);
        decision.pair_id = body.at("pair_id").get<std::string>();
        const auto verdict = parse_verdict(body.at("verdict").get<std::string>());
        if (!verdict) return send_error(res, 400, "verdict must be 'similar' or 'distinct'");
        decision.verdict = *verdict;
        decision.reviewer = body.value("reviewer", std::string{});
      } catch (const json::exception& e) {
        return send_error(res, 400, std::string("invalid body: ") + e.what());
      }
      if (!session.contains(decision.pair_id)) return send_error(res, 400, "unknown pair_id");
      try {
        const auto stored = session.record_decision(decision);
        send_json(res, 201, json::parse(decision_to_json(stored)));
      } catch (const InvalidArgument& e) {
        send_error(res, 400, e.what());
      }
    });

    server.Get("/api/progress", [this](const httplib::Request&, httplib::Response& res) {
      const auto p = session.progress();
      send_json(res, 200, json{{"total", p.total}, {"decided", p.decided}, {"pending", p.pending}, {"leased", p.leased}});
    });

    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string message = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        message = e.what();
      } catch (...) {
      }
      send_error(res, 500, message);
    });

    if (!static_dir.empty() && std::filesystem::is_directory(static_dir)) {
      server.set_mount_point("/", static_dir.string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kFallbackIndex, "text/html");
      });
    }
  }
};

ReviewServer::ReviewServer(ReviewSession& session, const CandidateDataset& test, const CandidateDataset& train,
                           std::filesystem::path static_dir)
    : impl_(std::make_unique<Impl>(session, test, train, static_dir)) {}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return impl_->port;
}

void ReviewServer::run() {
  if (impl_->port < 0) throw InvalidArgument("server is not bound");
  impl_->server.listen_after_bind();
}

void ReviewServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace candlab

#pragma once

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace fx {

/// Local scoring server on an ephemeral port. The handler maps the request
/// samples to the scores to send back.
class StubScorer {
 public:
  using Handler = std::function<std::vector<double>(const std::string& condition,
                                                    const std::vector<std::vector<double>>& samples)>;

  explicit StubScorer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const auto body = nlohmann::json::parse(req.body);
      const auto samples = body.at("samples").get<std::vector<std::vector<double>>>();
      nlohmann::json reply;
      reply["scores"] = handler_(body.at("condition").get<std::string>(), samples);
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubScorer() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_.load(); }

 private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::atomic<int> requests_{0};
};

}  // namespace fx

#pragma once

// JSON-over-HTTP generation backend: POSTs {"prompt", "image_ref",
// "max_tokens"} and expects {"text": ...}; an optional "refused": true marks
// a refusal with partial text.

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "kgrag/generation.hpp"

namespace kgrag {

class HttpBackend : public GenerationBackend {
 public:
  /// `url` is "http://host:port/path".
  explicit HttpBackend(const std::string& url, std::size_t max_in_flight = 4) : max_in_flight_(max_in_flight) {
    const std::string scheme = "http://";
    if (!url.starts_with(scheme)) throw Error(Errc::InvalidConfig, "backend url must start with http://");
    auto slash = url.find('/', scheme.size());
    host_port_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
  }

  std::string id() const override { return "http:" + host_port_ + path_; }
  std::size_t max_in_flight() const override { return max_in_flight_; }

  GenerationResponse complete(const GenerationRequest& req) override {
    httplib::Client cli(host_port_);
    const auto secs = static_cast<time_t>(req.timeout_ms / 1000);
    const auto usecs = static_cast<time_t>((req.timeout_ms % 1000) * 1000);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);

    nlohmann::json body = {{"prompt", req.prompt}, {"max_tokens", req.max_tokens}};
    body["image_ref"] = req.image_ref ? nlohmann::json(*req.image_ref) : nlohmann::json(nullptr);
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res) throw Error(Errc::BackendUnavailable, id() + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(Errc::BackendUnavailable, id() + ": HTTP " + std::to_string(res->status));

    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("text") || !j["text"].is_string())
      throw Error(Errc::BackendUnavailable, id() + ": response lacks a string \"text\" field");
    GenerationResponse out;
    out.text = j["text"].get<std::string>();
    out.refused = j.value("refused", false);
    return out;
  }

 private:
  std::string host_port_;
  std::string path_;
  std::size_t max_in_flight_;
};

}  // namespace kgrag

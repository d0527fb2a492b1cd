#pragma once

// Read-only JSON-over-HTTP retrieval service.
//
//   POST /v1/retrieve  {"embedding": [f32...] | "embedding_b64": "<LE f32 bytes>", "k": int}
//                      -> {"hits": [{"id", "score", "text"}]}
//   POST /v1/prompt    {"embedding" | "embedding_b64", "pathologies": [{"label", "certainty"}],
//                       "k": int, "template_index": int} -> {"prompt": str}
//   GET  /healthz      -> {"status": "ok", "index_count": n}
//
// Errors are {"code": "...", "message": "..."} with HTTP 400 (503 while the
// index is still loading). Stored vectors and source ids never leave the
// process.

#include <atomic>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <absl/strings/escaping.h>
#include <httplib.h>
#include <json.hpp>

#include "kgrag/errors.hpp"
#include "kgrag/pathology_head.hpp"
#include "kgrag/prompt_forge.hpp"
#include "kgrag/vector_index.hpp"

namespace kgrag {

struct ServiceReply {
  int status = 200;
  std::string body;
};

/// Little-endian f32 payload as base64, the lossless request encoding.
inline std::string encode_embedding_b64(std::span<const float> v) {
  std::string raw(v.size() * sizeof(float), '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &v[i], sizeof bits);
    for (int b = 0; b < 4; ++b) raw[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return absl::Base64Escape(raw);
}

inline std::vector<float> decode_embedding_b64(std::string_view b64) {
  std::string raw;
  if (!absl::Base64Unescape(absl::string_view(b64.data(), b64.size()), &raw))
    throw Error(Errc::InvalidArgument, "embedding_b64 is not valid base64");
  if (raw.size() % sizeof(float) != 0)
    throw Error(Errc::InvalidArgument, "embedding_b64 length is not a multiple of 4 bytes");
  std::vector<float> out(raw.size() / sizeof(float));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[i * 4 + b])) << (8 * b);
    std::memcpy(&out[i], &bits, sizeof bits);
  }
  return out;
}

/// `{"hits": [...]}` exactly as the service emits it.
inline std::string hits_body(std::span<const RetrievalHit> hits, const ContextStore& store) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& h : hits) arr.push_back({{"id", h.id}, {"score", h.score}, {"text", store.at(h.id)}});
  return nlohmann::json{{"hits", std::move(arr)}}.dump();
}

class RetrievalService {
 public:
  struct Options {
    PromptStyle style = PromptStyle::Kg;
    std::size_t default_k = kDefaultTopK;
  };

  RetrievalService() = default;
  explicit RetrievalService(Options opts) : opts_(opts) {}
  RetrievalService(const RetrievalService&) = delete;
  RetrievalService& operator=(const RetrievalService&) = delete;

  /// Installs the immutable index; requests are served from then on.
  void load(LoadedIndex index, ContextStore store) {
    if (store.size() < index.size())
      throw Error(Errc::IdMismatch, "context store smaller than the index");
    auto s = std::make_shared<const Loaded>(Loaded{std::move(index), std::move(store)});
    std::atomic_store(&loaded_, s);
    ready_.store(true);
  }

  bool ready() const noexcept { return ready_.load(); }
  std::uint64_t requests_served() const noexcept { return served_.load(); }
  std::uint64_t requests_failed() const noexcept { return failed_.load(); }

  ServiceReply healthz() {
    auto s = snapshot();
    if (!s) return not_ready();
    ++served_;
    return {200, nlohmann::json{{"status", "ok"}, {"index_count", s->index.size()}}.dump()};
  }

  ServiceReply retrieve(std::string_view body) {
    return guarded([&](const Loaded& s, const nlohmann::json& req) {
      auto hits = s.index.search(query_of(req), k_of(req));
      return hits_body(hits, s.store);
    }, body);
  }

  ServiceReply prompt(std::string_view body) {
    return guarded([&](const Loaded& s, const nlohmann::json& req) {
      std::vector<PathologyPrediction> preds;
      if (!req.contains("pathologies") || !req["pathologies"].is_array())
        throw Error(Errc::InvalidArgument, "\"pathologies\" must be an array");
      for (const auto& p : req["pathologies"]) {
        PathologyPrediction pred;
        pred.label = p.at("label").get<std::string>();
        auto c = parse_certainty(p.at("certainty").get<std::string>());
        if (!c) throw Error(Errc::InvalidArgument, "bad certainty for '" + pred.label + "'");
        pred.certainty = *c;
        preds.push_back(std::move(pred));
      }
      const std::uint64_t tmpl = req.value("template_index", std::uint64_t{0});
      std::vector<RetrievalHit> hits;
      if (opts_.style != PromptStyle::None) hits = s.index.search(query_of(req), k_of(req));
      auto phrase = render_pathology_phrase(preds);
      auto bundle = assemble_prompt(select_template(tmpl, phrase), hits, s.store, opts_.style, phrase);
      return nlohmann::json{{"prompt", bundle.rendered}}.dump();
    }, body);
  }

  /// Binds and blocks until `stop()`. `threads` workers share a queue of at
  /// most `max_queued` pending connections.
  bool serve(const std::string& host, int port, std::size_t threads = 4, std::size_t max_queued = 64,
             std::chrono::milliseconds request_timeout = std::chrono::milliseconds(30000)) {
    return bind(host, port, threads, max_queued, request_timeout) >= 0 && listen_bound();
  }

  /// Returns the bound port (useful with port 0) or -1.
  int bind(const std::string& host, int port, std::size_t threads = 4, std::size_t max_queued = 64,
           std::chrono::milliseconds request_timeout = std::chrono::milliseconds(30000)) {
    server_ = std::make_unique<httplib::Server>();
    server_->new_task_queue = [threads, max_queued] { return new httplib::ThreadPool(threads, max_queued); };
    server_->set_read_timeout(request_timeout);
    server_->set_write_timeout(request_timeout);
    auto reply = [](httplib::Response& res, const ServiceReply& r) {
      res.status = r.status;
      res.set_content(r.body, "application/json");
    };
    server_->Get("/healthz", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, healthz()); });
    server_->Post("/v1/retrieve",
                  [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, retrieve(req.body)); });
    server_->Post("/v1/prompt",
                  [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, prompt(req.body)); });
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
  }

  bool listen_bound() { return server_ && server_->listen_after_bind(); }
  void wait_until_listening() const {
    if (server_) server_->wait_until_ready();
  }
  void stop() {
    if (server_) server_->stop();
  }

 private:
  struct Loaded {
    LoadedIndex index;
    ContextStore store;
  };

  std::shared_ptr<const Loaded> snapshot() const { return std::atomic_load(&loaded_); }

  ServiceReply not_ready() {
    ++failed_;
    return {503, error_body("NOT_READY", "index is still loading")};
  }

  static std::string error_body(std::string_view code, const std::string& message) {
    return nlohmann::json{{"code", code}, {"message", message}}.dump();
  }

  std::size_t k_of(const nlohmann::json& req) const {
    if (!req.contains("k")) return opts_.default_k;
    const auto& k = req["k"];
    if (!k.is_number_integer() || k.get<std::int64_t>() < 1 || k.get<std::int64_t>() > static_cast<std::int64_t>(kMaxTopK))
      throw Error(Errc::InvalidArgument, "k must be an integer in [1, " + std::to_string(kMaxTopK) + "]");
    return k.get<std::size_t>();
  }

  static std::vector<float> query_of(const nlohmann::json& req) {
    if (req.contains("embedding_b64")) return decode_embedding_b64(req.at("embedding_b64").get<std::string>());
    if (!req.contains("embedding") || !req["embedding"].is_array())
      throw Error(Errc::InvalidArgument, "request needs \"embedding\" or \"embedding_b64\"");
    std::vector<float> q;
    for (const auto& x : req["embedding"]) {
      if (!x.is_number()) throw Error(Errc::InvalidArgument, "embedding entries must be numbers");
      q.push_back(x.get<float>());
    }
    return q;
  }

  template <class Handler>
  ServiceReply guarded(Handler&& handle, std::string_view body) {
    auto s = snapshot();
    if (!s) return not_ready();
    auto req = nlohmann::json::parse(body, nullptr, false);
    if (req.is_discarded() || !req.is_object()) {
      ++failed_;
      return {400, error_body("BAD_JSON", "request body is not a JSON object")};
    }
    try {
      auto out = handle(*s, req);
      ++served_;
      return {200, std::move(out)};
    } catch (const Error& e) {
      ++failed_;
      return {400, error_body(errc_name(e.code()), e.what())};
    } catch (const nlohmann::json::exception& e) {
      ++failed_;
      return {400, error_body("BAD_JSON", e.what())};
    }
  }

  Options opts_;
  std::shared_ptr<const Loaded> loaded_;
  std::atomic<bool> ready_{false};
  std::atomic<std::uint64_t> served_{0}, failed_{0};
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace kgrag

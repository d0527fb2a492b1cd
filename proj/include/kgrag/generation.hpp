#pragma once

// Generation-backend boundary. `generate` enforces the per-request timeout and
// the backend's in-flight limit; the backend call itself runs on a worker
// thread so a stalled backend never blocks the caller past the deadline.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "kgrag/errors.hpp"
#include "kgrag/hash.hpp"

namespace kgrag {

struct GenerationRequest {
  std::string prompt;
  std::optional<std::string> image_ref;
  std::uint32_t max_tokens = 128;
  std::uint32_t timeout_ms = 30000;
};

struct GenerationResponse {
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  bool refused = false;
};

/// Raised when a backend declines a prompt; `partial_text` holds whatever it
/// produced before refusing.
class RefusalError : public Error {
 public:
  RefusalError(const std::string& what, std::string partial)
      : Error(Errc::BackendRefusal, what), partial_text_(std::move(partial)) {}
  const std::string& partial_text() const noexcept { return partial_text_; }
  bool has_partial_text() const noexcept { return !partial_text_.empty(); }

 private:
  std::string partial_text_;
};

class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string id() const = 0;
  virtual std::size_t max_in_flight() const { return 4; }
  /// Blocking call. Report refusal by setting `refused`; throw
  /// Error(BackendUnavailable) when the backend cannot be reached.
  virtual GenerationResponse complete(const GenerationRequest& req) = 0;
};

/// Deterministic in-process backend: "STUB:" + first 32 hex chars of
/// SHA-256(prompt). An optional delay simulates a slow model.
class StubBackend : public GenerationBackend {
 public:
  explicit StubBackend(std::chrono::milliseconds delay = std::chrono::milliseconds(0)) : delay_(delay) {}

  static std::string reply_for(std::string_view prompt) { return "STUB:" + sha256_hex(prompt).substr(0, 32); }

  std::string id() const override { return "stub"; }
  GenerationResponse complete(const GenerationRequest& req) override {
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    return {reply_for(req.prompt), id(), 0, false};
  }

 private:
  std::chrono::milliseconds delay_;
};

/// Deterministic in-process backend that answers with the prompt's context
/// block (or the question when there is none). Gives sweeps a reply that
/// varies with the retrieved context.
class EchoContextBackend : public GenerationBackend {
 public:
  static std::string reply_for(std::string_view prompt) {
    constexpr std::string_view kCtx = "Context: ", kQ = "Question: ";
    if (prompt.starts_with(kCtx)) {
      auto end = prompt.find("\nQuestion: ");
      return std::string(prompt.substr(kCtx.size(), end == std::string_view::npos ? std::string_view::npos : end - kCtx.size()));
    }
    if (prompt.starts_with(kQ)) return std::string(prompt.substr(kQ.size()));
    return std::string(prompt);
  }

  std::string id() const override { return "echo"; }
  GenerationResponse complete(const GenerationRequest& req) override { return {reply_for(req.prompt), id(), 0, false}; }
};

/// Shared handle: owns the backend and its in-flight slots.
class BackendHandle {
 public:
  explicit BackendHandle(std::shared_ptr<GenerationBackend> backend) : state_(std::make_shared<State>()) {
    if (!backend) throw Error(Errc::BackendUnavailable, "no backend registered");
    state_->backend = std::move(backend);
    state_->free_slots = std::max<std::size_t>(1, state_->backend->max_in_flight());
  }

  GenerationBackend& backend() const { return *state_->backend; }

  /// Forwards `req` and waits at most `req.timeout_ms` overall, including
  /// time spent waiting for a free slot.
  GenerationResponse generate(const GenerationRequest& req) const {
    if (req.timeout_ms == 0) throw Error(Errc::InvalidArgument, "timeout_ms must be positive");
    if (req.max_tokens == 0) throw Error(Errc::InvalidArgument, "max_tokens must be positive");
    const auto start = std::chrono::steady_clock::now();
    const auto deadline = start + std::chrono::milliseconds(req.timeout_ms);

    {
      std::unique_lock lock(state_->mu);
      if (!state_->cv.wait_until(lock, deadline, [&] { return state_->free_slots > 0; }))
        throw Error(Errc::BackendTimeout, "no free backend slot within " + std::to_string(req.timeout_ms) + " ms");
      --state_->free_slots;
    }

    auto promise = std::make_shared<std::promise<GenerationResponse>>();
    auto future = promise->get_future();
    std::thread([state = state_, promise, req] {
      try {
        promise->set_value(state->backend->complete(req));
      } catch (...) {
        promise->set_exception(std::current_exception());
      }
      {
        std::lock_guard lock(state->mu);
        ++state->free_slots;
      }
      state->cv.notify_one();
    }).detach();

    if (future.wait_until(deadline) != std::future_status::ready)
      throw Error(Errc::BackendTimeout, state_->backend->id() + " did not answer within " + std::to_string(req.timeout_ms) + " ms");

    GenerationResponse resp = future.get();
    resp.backend_id = state_->backend->id();
    resp.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    if (resp.refused) throw RefusalError(resp.backend_id + " refused the prompt", resp.text);
    return resp;
  }

 private:
  struct State {
    std::shared_ptr<GenerationBackend> backend;
    std::mutex mu;
    std::condition_variable cv;
    std::size_t free_slots = 1;
  };
  std::shared_ptr<State> state_;
};

inline GenerationResponse generate(const BackendHandle& backend, const GenerationRequest& req) {
  return backend.generate(req);
}

}  // namespace kgrag

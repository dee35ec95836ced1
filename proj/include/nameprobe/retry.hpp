#pragma once

#include <chrono>
#include <string>
#include <thread>

#include "nameprobe/errors.hpp"
#include "nameprobe/logging.hpp"

namespace nameprobe {

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
};

// Calls fn() until it returns without a TransportError or the attempt budget
// is spent; the last TransportError propagates. Other errors are not retried.
template <typename Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      return fn();
    } catch (const TransportError& e) {
      if (attempt >= policy.attempts) throw;
      log_warning(std::string(e.what()) + " (attempt " + std::to_string(attempt) + ", retrying)");
      std::this_thread::sleep_for(backoff);
      backoff = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier));
    }
  }
}

}  // namespace nameprobe

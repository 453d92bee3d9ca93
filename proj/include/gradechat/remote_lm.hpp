#pragma once

#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <unordered_map>

#include "gradechat/lm.hpp"

namespace gradechat {

struct RemoteConfig {
  std::string base_url;  // e.g. https://api.example.com/v1
  std::string model;
  std::string api_key_env = "GRADECHAT_API_KEY";
  // Whether the endpoint returns top_logprobs; without it FUDGE is unavailable.
  bool supports_logprobs = false;
  // Providers cap top_logprobs; FUDGE over a remote model is limited to this k.
  std::size_t max_top_logprobs = 20;
  int max_retries = 3;
  double backoff_initial_s = 0.5;
  double backoff_max_s = 8.0;
  std::ptrdiff_t max_in_flight = 4;
  double timeout_s = 60.0;
  // Send top_k and repetition_penalty (vLLM-style servers accept them; strict
  // OpenAI endpoints reject unknown fields).
  bool extended_sampling = true;
};

// Client for an OpenAI-compatible /chat/completions endpoint.
class RemoteChatModel final : public LanguageModel {
 public:
  explicit RemoteChatModel(RemoteConfig config);
  ~RemoteChatModel() override;

  std::string name() const override { return "remote:" + config_.model; }
  bool supports_distribution() const override { return config_.supports_logprobs; }
  // Best effort: k is capped at max_top_logprobs and the prefix is sent as a
  // partial assistant message to be continued.
  NextTokenDistribution next_distribution(const ChatContext& context,
                                          std::span<const TokenId> prefix,
                                          std::size_t k) const override;
  std::string complete(const ChatContext& context) const override;
  std::string detokenize(std::span<const TokenId> tokens) const override;

  // JSON request body for a chat completion (exposed for tests).
  std::string build_request(const ChatContext& context, std::size_t top_logprobs,
                               std::string_view assistant_prefix) const;

 private:
  std::string post_with_retry(const std::string& body) const;
  TokenId intern(const std::string& text) const;

  RemoteConfig config_;
  mutable std::counting_semaphore<64> in_flight_;
  mutable std::mutex intern_mu_;
  mutable std::unordered_map<std::string, TokenId> ids_;
  mutable std::vector<std::string> texts_;
};

}  // namespace gradechat

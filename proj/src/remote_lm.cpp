#include "gradechat/remote_lm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "gradechat/errors.hpp"

namespace gradechat {
using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host:port
  std::string path;    // /v1/chat/completions
};

Endpoint parse_endpoint(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("remote base_url needs a scheme: '" + base_url + "'");
  const auto path_start = base_url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  e.path = prefix + "/chat/completions";
  return e;
}

// Releases the in-flight slot on every exit path.
struct SlotGuard {
  std::counting_semaphore<64>& sem;
  explicit SlotGuard(std::counting_semaphore<64>& s) : sem(s) { sem.acquire(); }
  ~SlotGuard() { sem.release(); }
};

}  // namespace

RemoteChatModel::RemoteChatModel(RemoteConfig config)
    : config_(std::move(config)),
      in_flight_(std::clamp<std::ptrdiff_t>(config_.max_in_flight, 1, 64)) {
  if (config_.base_url.empty()) throw ValidationError("remote provider needs a base_url");
  if (config_.model.empty()) throw ValidationError("remote provider needs a model name");
  parse_endpoint(config_.base_url);
}

RemoteChatModel::~RemoteChatModel() = default;

std::string RemoteChatModel::build_request(const ChatContext& context, std::size_t top_logprobs,
                                           std::string_view assistant_prefix) const {
  json messages = json::array();
  if (!context.system_prompt().empty()) {
    messages.push_back({{"role", "system"}, {"content", context.system_prompt()}});
  }
  // From the speaker's point of view its own turns are the assistant's.
  for (const auto& t : context.turns()) {
    messages.push_back({{"role", t.role == context.speaker() ? "assistant" : "user"}, {"content", t.text}});
  }
  const GenerationConfig& g = context.generation;
  json req = {{"model", config_.model},
              {"messages", messages},
              {"temperature", g.temperature},
              {"top_p", g.top_p},
              {"max_tokens", g.max_tokens}};
  if (config_.extended_sampling) {
    req["top_k"] = g.top_k;
    req["repetition_penalty"] = g.repetition_penalty;
  }
  if (g.seed) req["seed"] = *g.seed;
  if (top_logprobs > 0) {
    req["logprobs"] = true;
    req["top_logprobs"] = top_logprobs;
    req["max_tokens"] = 1;
  }
  if (!assistant_prefix.empty()) {
    req["messages"].push_back({{"role", "assistant"}, {"content", std::string(assistant_prefix)}});
    req["continue_final_message"] = true;
    req["add_generation_prompt"] = false;
  }
  return req.dump();
}

std::string RemoteChatModel::post_with_retry(const std::string& body) const {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (!key || !*key) throw AuthError("credential variable " + config_.api_key_env + " is not set", 0);
  const Endpoint ep = parse_endpoint(config_.base_url);

  SlotGuard slot(in_flight_);
  double backoff = config_.backoff_initial_s;
  for (int attempt = 0;; ++attempt) {
    httplib::Client client(ep.origin);
    const auto secs = static_cast<time_t>(config_.timeout_s);
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    client.set_write_timeout(secs);
    client.set_bearer_token_auth(key);
    auto res = client.Post(ep.path, body, "application/json");

    std::optional<TransportError> failure;
    if (!res) {
      failure.emplace("request to " + ep.origin + " failed: " + httplib::to_string(res.error()), 0, true);
    } else if (res->status == 401 || res->status == 403) {
      throw AuthError("remote provider rejected credentials (HTTP " + std::to_string(res->status) + ")",
                      res->status);
    } else if (res->status == 429 || res->status >= 500) {
      double retry_after = 0.0;
      if (res->has_header("Retry-After")) {
        try {
          retry_after = std::stod(res->get_header_value("Retry-After"));
        } catch (...) {
        }
      }
      failure.emplace("remote provider answered HTTP " + std::to_string(res->status), res->status, true,
                      retry_after);
    } else if (res->status != 200) {
      throw TransportError("remote provider answered HTTP " + std::to_string(res->status) + ": " + res->body,
                           res->status, false);
    } else {
      return res->body;
    }
    if (attempt >= config_.max_retries) throw *failure;
    const double wait = std::min(config_.backoff_max_s, std::max(backoff, failure->retry_after_s));
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    backoff = std::min(config_.backoff_max_s, backoff * 2.0);
  }
}

std::string RemoteChatModel::complete(const ChatContext& context) const {
  context.generation.validate();
  const std::string reply = post_with_retry(build_request(context, 0, ""));
  try {
    const json j = json::parse(reply);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw TransportError(std::string("malformed chat completion: ") + e.what(), 200, false);
  }
}

TokenId RemoteChatModel::intern(const std::string& text) const {
  std::lock_guard lock(intern_mu_);
  auto [it, inserted] = ids_.emplace(text, static_cast<TokenId>(texts_.size()));
  if (inserted) texts_.push_back(text);
  return it->second;
}

NextTokenDistribution RemoteChatModel::next_distribution(const ChatContext& context,
                                                         std::span<const TokenId> prefix,
                                                         std::size_t k) const {
  if (!config_.supports_logprobs) return LanguageModel::next_distribution(context, prefix, k);
  if (k < 1) throw ValidationError("k must be at least 1");
  const std::size_t width = std::min(k, config_.max_top_logprobs);
  const std::string reply = post_with_retry(build_request(context, width, detokenize(prefix)));
  NextTokenDistribution d;
  d.k = width;
  try {
    const json j = json::parse(reply);
    const auto& content = j.at("choices").at(0).at("logprobs").at("content");
    if (content.empty()) return d;
    for (const auto& alt : content.at(0).at("top_logprobs")) {
      const std::string tok = alt.at("token");
      d.candidates.push_back(Candidate{intern(tok), tok, alt.at("logprob").get<double>()});
    }
  } catch (const json::exception& e) {
    throw CapabilityError(std::string("remote provider returned no usable top_logprobs: ") + e.what());
  }
  d.sort();
  return truncate(std::move(d), width);
}

std::string RemoteChatModel::detokenize(std::span<const TokenId> tokens) const {
  std::lock_guard lock(intern_mu_);
  std::string out;
  for (TokenId t : tokens) out += texts_.at(static_cast<std::size_t>(t));
  return out;
}

}  // namespace gradechat

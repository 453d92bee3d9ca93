#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace gradechat {

class Rng;

using TokenId = std::int32_t;

struct Candidate {
  TokenId id = 0;
  std::string text;
  double log_prob = 0.0;
};

// Truncated next-token distribution. Candidates are ordered by log_prob,
// descending, ties broken by ascending token id.
struct NextTokenDistribution {
  std::vector<Candidate> candidates;
  std::size_t k = 0;
  bool renormalized = false;

  Eigen::VectorXd log_probs() const;
  // Σ exp(log_prob).
  double mass() const;
  void sort();
};

NextTokenDistribution renormalize(NextTokenDistribution dist);
// Keep the first k candidates (the list is already sorted).
NextTokenDistribution truncate(NextTokenDistribution dist, std::size_t k);

// Divide positive logits / multiply negative logits of tokens already present
// in `history` by `penalty`, then re-sort.
NextTokenDistribution apply_repetition_penalty(NextTokenDistribution dist,
                                               std::span<const TokenId> history, double penalty);

enum class Role { student, tutor };
std::string to_string(Role r);
Role role_from_string(std::string_view s);

struct GenerationConfig {
  double temperature = 0.7;
  double top_p = 0.8;
  std::size_t top_k = 20;
  double repetition_penalty = 1.05;
  std::size_t max_tokens = 48;
  std::optional<std::uint64_t> seed;

  static GenerationConfig tutor_defaults() { return {}; }
  static GenerationConfig student_defaults() {
    GenerationConfig g;
    g.temperature = 0.7;
    g.top_p = 1.0;
    return g;
  }
  void validate() const;  // throws ValidationError
};

struct ChatTurn {
  Role role;
  std::string text;
};

// Conversation as seen by the agent speaking next (`speaker`).
class ChatContext {
 public:
  ChatContext() = default;
  ChatContext(std::string system_prompt, Role speaker, GenerationConfig generation = {});

  void set_system_prompt(std::string prompt);  // only once
  // Appends a turn; roles must alternate.
  void add_turn(Role role, std::string text);

  const std::string& system_prompt() const { return system_prompt_; }
  const std::vector<ChatTurn>& turns() const { return turns_; }
  Role speaker() const { return speaker_; }
  void set_speaker(Role r) { speaker_ = r; }
  GenerationConfig generation;

 private:
  std::string system_prompt_;
  bool prompt_set_ = false;
  std::vector<ChatTurn> turns_;
  Role speaker_ = Role::tutor;
};

// Common provider interface. Local providers expose full next-token
// distributions; remote chat APIs may only expose completions.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::string name() const = 0;
  virtual bool supports_distribution() const { return false; }

  // Top-k of the untruncated distribution after `prefix` (tokens of the
  // utterance being generated). Throws CapabilityError by default.
  virtual NextTokenDistribution next_distribution(const ChatContext& context,
                                                  std::span<const TokenId> prefix,
                                                  std::size_t k) const;

  virtual std::string complete(const ChatContext& context) const = 0;

  virtual std::optional<TokenId> end_token() const { return std::nullopt; }
  virtual std::string detokenize(std::span<const TokenId> tokens) const;

  // log P(next | history) over the provider's own token units. Used for
  // perplexity; throws CapabilityError by default.
  virtual double token_log_prob(std::span<const std::string> history, std::string_view next) const;
  virtual std::size_t vocabulary_size() const { return 0; }
};

bool is_sentence_final(std::string_view token_text);

using DistributionObserver = std::function<void(const NextTokenDistribution&)>;
// Hook applied to the penalized base distribution before sampling.
using Reweighter =
    std::function<NextTokenDistribution(const NextTokenDistribution&, std::span<const TokenId>)>;

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::string text;
};

// Shared autoregressive loop: next_distribution(k) → repetition penalty →
// renormalize → optional reweight → sample. Stops on the end token,
// max_tokens, or sentence-final punctuation after at least 3 tokens.
DecodeResult decode(const LanguageModel& lm, const ChatContext& context, std::size_t k,
                    const Reweighter& reweight = {}, const DistributionObserver& observer = {});

// Temperature → top-k → nucleus → draw.
TokenId sample_token(const NextTokenDistribution& dist, const GenerationConfig& config, Rng& rng);

// exp(mean NLL) over `tokens` under `model`; +inf when a token has zero
// probability.
double perplexity(const LanguageModel& model, std::span<const std::string> tokens);

// Uniform distribution over a fixed vocabulary; mostly a test fixture.
class UniformModel final : public LanguageModel {
 public:
  explicit UniformModel(std::vector<std::string> vocabulary, bool last_is_end = false);
  std::string name() const override { return "uniform"; }
  bool supports_distribution() const override { return true; }
  NextTokenDistribution next_distribution(const ChatContext&, std::span<const TokenId>,
                                          std::size_t k) const override;
  std::string complete(const ChatContext& context) const override;
  std::optional<TokenId> end_token() const override;
  std::string detokenize(std::span<const TokenId> tokens) const override;
  double token_log_prob(std::span<const std::string>, std::string_view next) const override;
  std::size_t vocabulary_size() const override { return vocabulary_.size(); }

 private:
  std::vector<std::string> vocabulary_;
  bool last_is_end_;
};

}  // namespace gradechat

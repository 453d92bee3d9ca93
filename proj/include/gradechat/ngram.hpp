#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gradechat/lm.hpp"

namespace gradechat {

struct NgramConfig {
  int order = 2;
  // Additive smoothing δ. 0 gives maximum likelihood.
  double delta = 1.0;
  // Pad each sentence with <s> history and append </s> as a predictable token.
  bool mark_boundaries = true;
  // Inserted between tokens when rendering a completion.
  std::string joiner;
};

// Additively smoothed n-gram model over whole tokens (lemmas):
//   P(w | h) = (c(h, w) + δ) / (c(h) + δ |V|)
// with h the last order-1 tokens. Immutable after training.
class NgramModel final : public LanguageModel {
 public:
  static constexpr const char* kEnd = "</s>";
  static constexpr TokenId kBegin = -1;

  static NgramModel train(std::span<const std::vector<std::string>> sentences,
                          const NgramConfig& config);

  std::string name() const override { return "ngram"; }
  bool supports_distribution() const override { return true; }
  NextTokenDistribution next_distribution(const ChatContext& context,
                                          std::span<const TokenId> prefix,
                                          std::size_t k) const override;
  std::string complete(const ChatContext& context) const override;
  std::optional<TokenId> end_token() const override;
  std::string detokenize(std::span<const TokenId> tokens) const override;
  double token_log_prob(std::span<const std::string> history, std::string_view next) const override;
  std::size_t vocabulary_size() const override { return vocabulary_.size(); }

  // P(next | prefix) where prefix is the utterance so far (padding implicit).
  double probability(std::span<const TokenId> prefix, TokenId next) const;

  std::optional<TokenId> id_of(std::string_view token) const;
  const std::string& token_text(TokenId id) const { return vocabulary_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const NgramConfig& config() const { return config_; }

  // Raw counts c(h, w) and c(h) for oracle comparisons.
  std::uint64_t count(std::span<const TokenId> history, TokenId next) const;
  std::uint64_t context_count(std::span<const TokenId> history) const;

  std::string to_json() const;
  static NgramModel from_json(std::string_view json);
  void save(const std::string& path) const;
  static NgramModel load(const std::string& path);

 private:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
  };

  NgramModel() = default;
  std::vector<TokenId> history_key(std::span<const TokenId> prefix) const;
  void build_index();

  NgramConfig config_;
  std::vector<std::string> vocabulary_;  // sorted; </s> included when mark_boundaries
  std::unordered_map<std::string, TokenId> index_;
  std::map<std::vector<TokenId>, ContextCounts> counts_;
};

}  // namespace gradechat

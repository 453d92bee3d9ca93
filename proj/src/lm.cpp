#include "gradechat/lm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradechat/errors.hpp"
#include "gradechat/rng.hpp"

namespace gradechat {

Eigen::VectorXd NextTokenDistribution::log_probs() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) v[static_cast<Eigen::Index>(i)] = candidates[i].log_prob;
  return v;
}

double NextTokenDistribution::mass() const {
  if (candidates.empty()) return 0.0;
  return log_probs().array().exp().sum();
}

void NextTokenDistribution::sort() {
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.id < b.id;
  });
}

NextTokenDistribution renormalize(NextTokenDistribution dist) {
  if (dist.candidates.empty()) throw ValidationError("cannot renormalize an empty distribution");
  const Eigen::VectorXd lp = dist.log_probs();
  const double mx = lp.maxCoeff();
  if (!std::isfinite(mx)) throw ValidationError("distribution has no finite log-probability");
  const double lse = mx + std::log((lp.array() - mx).exp().sum());
  // Already normalized up to rounding: leave the values alone so that
  // renormalizing twice is a no-op.
  if (std::abs(lse) > 4.0 * std::numeric_limits<double>::epsilon()) {
    for (auto& c : dist.candidates) c.log_prob -= lse;
  }
  dist.renormalized = true;
  return dist;
}

NextTokenDistribution truncate(NextTokenDistribution dist, std::size_t k) {
  if (dist.candidates.size() > k) dist.candidates.resize(k);
  dist.k = k;
  return dist;
}

NextTokenDistribution apply_repetition_penalty(NextTokenDistribution dist, std::span<const TokenId> history,
                                               double penalty) {
  if (penalty == 1.0 || history.empty()) return dist;
  for (auto& c : dist.candidates) {
    if (std::find(history.begin(), history.end(), c.id) == history.end()) continue;
    c.log_prob = c.log_prob > 0 ? c.log_prob / penalty : c.log_prob * penalty;
  }
  dist.renormalized = false;
  dist.sort();
  return dist;
}

std::string to_string(Role r) { return r == Role::student ? "student" : "tutor"; }

Role role_from_string(std::string_view s) {
  if (s == "student") return Role::student;
  if (s == "tutor") return Role::tutor;
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

void GenerationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be positive");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
  if (top_k < 1) throw ValidationError("top_k must be at least 1");
  if (!(repetition_penalty >= 1.0)) throw ValidationError("repetition_penalty must be >= 1");
  if (max_tokens < 1) throw ValidationError("max_tokens must be at least 1");
}

ChatContext::ChatContext(std::string system_prompt, Role speaker, GenerationConfig gen)
    : generation(gen), speaker_(speaker) {
  set_system_prompt(std::move(system_prompt));
}

void ChatContext::set_system_prompt(std::string prompt) {
  if (prompt_set_) throw ValidationError("system prompt already set");
  system_prompt_ = std::move(prompt);
  prompt_set_ = true;
}

void ChatContext::add_turn(Role role, std::string text) {
  if (!turns_.empty() && turns_.back().role == role) {
    throw ValidationError("turns must alternate between student and tutor");
  }
  turns_.push_back(ChatTurn{role, std::move(text)});
}

NextTokenDistribution LanguageModel::next_distribution(const ChatContext&, std::span<const TokenId>,
                                                       std::size_t) const {
  throw CapabilityError("provider '" + name() +
                        "' does not expose next-token distributions; use a prompt-only method "
                        "(baseline, detailed, overgenerate)");
}

std::string LanguageModel::detokenize(std::span<const TokenId>) const {
  throw CapabilityError("provider '" + name() + "' has no token-level interface");
}

double LanguageModel::token_log_prob(std::span<const std::string>, std::string_view) const {
  throw CapabilityError("provider '" + name() + "' cannot score tokens (perplexity unavailable)");
}

bool is_sentence_final(std::string_view t) {
  return t == "。" || t == "！" || t == "？" || t == "!" || t == "?" || t == ".";
}

TokenId sample_token(const NextTokenDistribution& dist, const GenerationConfig& config, Rng& rng) {
  const auto& cs = dist.candidates;
  if (cs.empty()) throw ValidationError("cannot sample from an empty distribution");
  const std::size_t n = std::min(cs.size(), config.top_k);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, cs[i].log_prob);
  if (!std::isfinite(mx)) return cs[0].id;

  std::vector<double> w(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp((cs[i].log_prob - mx) / config.temperature);
    total += w[i];
  }
  // Nucleus: smallest prefix whose mass reaches top_p.
  std::size_t keep = n;
  if (config.top_p < 1.0) {
    double cum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cum += w[i] / total;
      if (cum >= config.top_p) {
        keep = i + 1;
        break;
      }
    }
  }
  double kept = 0.0;
  for (std::size_t i = 0; i < keep; ++i) kept += w[i];
  const double u = rng.uniform() * kept;
  double cum = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    cum += w[i];
    if (u < cum) return cs[i].id;
  }
  return cs[keep - 1].id;
}

DecodeResult decode(const LanguageModel& lm, const ChatContext& context, std::size_t k,
                    const Reweighter& reweight, const DistributionObserver& observer) {
  const GenerationConfig& gen = context.generation;
  gen.validate();
  if (k < 1) throw ValidationError("k must be at least 1");
  Rng rng(gen.seed.value_or(0));
  const auto end = lm.end_token();
  DecodeResult out;
  while (out.tokens.size() < gen.max_tokens) {
    NextTokenDistribution dist = lm.next_distribution(context, out.tokens, k);
    dist = renormalize(apply_repetition_penalty(std::move(dist), out.tokens, gen.repetition_penalty));
    if (reweight) dist = reweight(dist, out.tokens);
    if (observer) observer(dist);
    const TokenId id = sample_token(dist, gen, rng);
    if (end && id == *end) break;
    out.tokens.push_back(id);
    const auto it = std::find_if(dist.candidates.begin(), dist.candidates.end(),
                                 [id](const Candidate& c) { return c.id == id; });
    if (out.tokens.size() >= 3 && it != dist.candidates.end() && is_sentence_final(it->text)) break;
  }
  out.text = lm.detokenize(out.tokens);
  return out;
}

double perplexity(const LanguageModel& model, std::span<const std::string> tokens) {
  if (tokens.empty()) throw ValidationError("perplexity needs at least one token");
  double nll = 0.0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const double lp = model.token_log_prob(tokens.subspan(0, i), tokens[i]);
    if (!std::isfinite(lp)) return std::numeric_limits<double>::infinity();
    nll -= lp;
  }
  return std::exp(nll / static_cast<double>(tokens.size()));
}

// ---- Uniform model ----------------------------------------------------------

UniformModel::UniformModel(std::vector<std::string> vocabulary, bool last_is_end)
    : vocabulary_(std::move(vocabulary)), last_is_end_(last_is_end) {
  if (vocabulary_.empty()) throw ValidationError("uniform model needs a vocabulary");
}

NextTokenDistribution UniformModel::next_distribution(const ChatContext&, std::span<const TokenId>,
                                                      std::size_t k) const {
  if (k < 1) throw ValidationError("k must be at least 1");
  NextTokenDistribution d;
  d.k = k;
  const double lp = -std::log(static_cast<double>(vocabulary_.size()));
  for (std::size_t i = 0; i < std::min(k, vocabulary_.size()); ++i) {
    d.candidates.push_back(Candidate{static_cast<TokenId>(i), vocabulary_[i], lp});
  }
  return d;
}

std::string UniformModel::complete(const ChatContext& context) const {
  return decode(*this, context, vocabulary_.size()).text;
}

std::optional<TokenId> UniformModel::end_token() const {
  if (!last_is_end_) return std::nullopt;
  return static_cast<TokenId>(vocabulary_.size() - 1);
}

std::string UniformModel::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) out += vocabulary_.at(static_cast<std::size_t>(t));
  return out;
}

double UniformModel::token_log_prob(std::span<const std::string>, std::string_view next) const {
  if (std::find(vocabulary_.begin(), vocabulary_.end(), next) == vocabulary_.end()) {
    return -std::numeric_limits<double>::infinity();
  }
  return -std::log(static_cast<double>(vocabulary_.size()));
}

}  // namespace gradechat

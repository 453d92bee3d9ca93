#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradechat/classifier.hpp"
#include "gradechat/level.hpp"
#include "gradechat/lexicon.hpp"
#include "gradechat/lm.hpp"
#include "gradechat/tokenizer.hpp"
#include "gradechat/transcript.hpp"

namespace gradechat {

// ---- Prompts ---------------------------------------------------------------

enum class PromptRole { tutor_baseline, tutor_detailed, student };

struct LevelProfile {
  std::string level_word;
  std::string guidelines;
  std::vector<std::string> description;  // bullet points
  std::string example_dialogue;          // six short turns
};

const LevelProfile& level_profile(Level level);

struct PromptSpec {
  std::string language = "Japanese";
  Level level;
  std::string level_word;
  std::string level_description;
  std::string level_guidelines;
  std::string example_dialogue;
  std::vector<std::string> known_expressions;
  std::optional<std::string> topic;
  PromptRole role = PromptRole::tutor_baseline;
};

// Fills level word/description/guidelines/example from the bundled profile.
PromptSpec make_prompt_spec(PromptRole role, Level level, std::vector<std::string> known_expressions = {},
                            std::optional<std::string> topic = std::nullopt,
                            std::string language = "Japanese");

// Throws ValidationError naming the first missing placeholder.
std::string build_prompt(const PromptSpec& spec);

// Seeded sample of `count` lemmas binned at exactly `level`; all of them when
// fewer exist. Returned in sampled order.
std::vector<std::string> sample_known_expressions(const LevelLexicon& heuristic, Level level,
                                                  std::size_t count, std::uint64_t seed);

// ---- Methods ---------------------------------------------------------------

struct FudgeConfig {
  double lambda = 0.8;
  std::size_t top_k = 50;
  Level target_level;
  void validate() const;
};

struct RerankConfig {
  std::size_t n_candidates = 5;
  const LevelLexicon* lexicon = nullptr;  // heuristic bins
  Level user_level;
  const Tokenizer* tokenizer = nullptr;
  void validate() const;
};

// Single completion; the last turn must be a non-empty student turn.
std::string generate_baseline(const ChatContext& context, const LanguageModel& lm);

struct ScoredCandidate {
  std::size_t index = 0;
  std::string text;
  double tmr = 0.0;
  std::size_t tokens = 0;
};

struct OvergenerateResult {
  std::string chosen;
  std::size_t chosen_index = 0;
  std::vector<ScoredCandidate> candidates;
};

// Lexicographic minimum of (tmr, tokens, index) among non-empty candidates.
// Throws ValidationError when every candidate is empty.
std::size_t select_candidate(std::span<const ScoredCandidate> candidates);

OvergenerateResult generate_overgenerate(const ChatContext& context, const LanguageModel& lm,
                                         const RerankConfig& config);

// ŷ = λ·a + (1 − λ)·x over the candidates of `base`, where x are the base
// log-probabilities and a the predictor's log P(target | prefix + token);
// renormalized over the candidates.
NextTokenDistribution fudge_step(const NextTokenDistribution& base, const Predictor& predictor,
                                 std::span<const std::string> prefix, const FudgeConfig& config);
NextTokenDistribution fudge_step(const NextTokenDistribution& base, const Predictor& predictor,
                                 const Predictor::PrefixState& state, const FudgeConfig& config,
                                 std::optional<TokenId> end_token = std::nullopt);

// Throws CapabilityError when `lm` has no distribution access.
DecodeResult generate_fudge(const ChatContext& context, const LanguageModel& lm,
                            const Predictor& predictor, const FudgeConfig& config,
                            const DistributionObserver& observer = {});

// ---- Tutors ----------------------------------------------------------------

struct TutorReply {
  std::string text;
  std::optional<OvergenerateResult> rerank;
};

class Tutor {
 public:
  virtual ~Tutor() = default;
  virtual const std::string& system_prompt() const = 0;
  virtual TutorReply respond(const ChatContext& context) const = 0;
  virtual MethodSpec method() const = 0;
};

struct TutorResources {
  const LanguageModel* lm = nullptr;
  const Predictor* predictor = nullptr;          // fudge
  const LevelLexicon* heuristic_lexicon = nullptr;  // overgenerate, detailed prompt
  const Tokenizer* tokenizer = nullptr;          // overgenerate
  std::string language = "Japanese";
  std::size_t known_expressions = 100;
  std::size_t n_candidates = 5;
  std::size_t fudge_top_k = 50;
};

// Validates that the resources the method needs are present (CapabilityError
// otherwise) and builds its system prompt.
std::unique_ptr<Tutor> make_tutor(const MethodSpec& method, Level user_level,
                                  const TutorResources& resources, std::uint64_t seed);

}  // namespace gradechat

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gradechat/classifier.hpp"
#include "gradechat/level.hpp"
#include "gradechat/lexicon.hpp"
#include "gradechat/tokenizer.hpp"
#include "gradechat/transcript.hpp"

namespace gradechat {

class LanguageModel;

struct FlaggedToken {
  std::size_t index;
  std::optional<Level> level;  // nullopt = unbinned
  bool operator==(const FlaggedToken&) const = default;
};

struct TmrBreakdown {
  std::size_t total_tokens = 0;
  std::size_t cnt_above = 0;
  std::size_t cnt_unbinned = 0;
  double tmr = 0.0;
  // Above-level and unbinned tokens, in order.
  std::vector<FlaggedToken> flagged;
};

// cnt_above / total_tokens. Unbinned tokens count in the denominator only.
TmrBreakdown token_miss_rate(std::span<const std::string> lemmas, const LevelLexicon& lexicon,
                             Level user_level);
TmrBreakdown token_miss_rate(const TokenizedUtterance& utterance, const LevelLexicon& lexicon,
                             Level user_level);

double control_error(double score, Level target);

// Distinct / total sliding trigrams; 1.0 below three tokens.
double trigram_diversity(std::span<const std::string> tokens);
double trigram_diversity(const TokenizedUtterance& utterance);

// A token is missed iff its span overlaps any highlighted range.
// Throws ValidationError on reversed or out-of-bounds ranges.
TmrBreakdown tmr_from_annotation(const TokenizedUtterance& utterance,
                                 std::span<const Span> highlighted);

class ReadabilityScorer {
 public:
  virtual ~ReadabilityScorer() = default;
  virtual std::string name() const = 0;
  virtual double score(const TokenizedUtterance& utterance) const = 0;
};

// Stand-in readability score, higher = easier:
//   intercept − length_weight · mean sentence length − hard_weight · share above N3
// It is not JReadability and reports itself as such.
class SurrogateReadability final : public ReadabilityScorer {
 public:
  explicit SurrogateReadability(const LevelLexicon& lexicon) : lexicon_(lexicon) {}
  std::string name() const override { return "surrogate-readability (NOT-JReadability)"; }
  double score(const TokenizedUtterance& utterance) const override;

  double intercept = 6.0;
  double length_weight = 0.05;
  double hard_weight = 5.0;

 private:
  const LevelLexicon& lexicon_;
};

enum class TmrPooling { macro, micro };
std::string to_string(TmrPooling p);

struct MetricsDeps {
  const Tokenizer* tokenizer = nullptr;
  const LevelLexicon* lexicon = nullptr;     // gold lexicon for TMR
  const Predictor* predictor = nullptr;      // s(x) for ControlError
  const LanguageModel* ppl_model = nullptr;  // perplexity
  const ReadabilityScorer* readability = nullptr;  // optional
  ScoreMode score_mode = ScoreMode::expectation;
  TmrPooling pooling = TmrPooling::macro;

  // Throws CapabilityError naming the metric that cannot be computed.
  void require_complete() const;
};

// One aggregate row per method, the columns of kReportColumns.
struct MetricsReport {
  std::string model;
  std::size_t n_utterances = 0;
  double avg_length = 0.0;
  double avg_ppl = 0.0;
  double div3 = 0.0;
  std::optional<double> readability;
  std::string readability_scorer;
  double tmr_percent = 0.0;
  double control_error = 0.0;
  std::string score_mode;
  std::string tmr_pooling;
  std::vector<TurnMetrics> turns;
};

TurnMetrics score_turn(const TokenizedUtterance& utterance, std::size_t turn_index,
                       Level user_level, const MetricsDeps& deps);

// Averages over the given turns (must be non-empty).
MetricsReport aggregate_turns(const std::string& model, std::span<const TurnMetrics> turns,
                              const MetricsDeps& deps);

// Scores tutor turns only.
MetricsReport score_transcript(const DialogueTranscript& transcript, const MetricsDeps& deps,
                               Level user_level);

inline constexpr const char* kReportColumns[] = {"Model", "Avg. Length", "Avg. PPL", "div@3",
                                                 "Readability", "TMR", "ControlError"};

std::string reports_to_csv(std::span<const MetricsReport> rows);
std::string format_number(double v, int precision = 6);

}  // namespace gradechat

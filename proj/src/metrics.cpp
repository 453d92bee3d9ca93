#include "gradechat/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include "gradechat/errors.hpp"
#include "gradechat/lm.hpp"
#include "gradechat/text.hpp"

namespace gradechat {

TmrBreakdown token_miss_rate(std::span<const std::string> lemmas, const LevelLexicon& lexicon, Level user_level) {
  TmrBreakdown b;
  b.total_tokens = lemmas.size();
  for (std::size_t i = 0; i < lemmas.size(); ++i) {
    const auto level = lexicon.lookup(lemmas[i]);
    if (!level) {
      ++b.cnt_unbinned;
      b.flagged.push_back(FlaggedToken{i, std::nullopt});
    } else if (*level > user_level) {
      ++b.cnt_above;
      b.flagged.push_back(FlaggedToken{i, level});
    }
  }
  b.tmr = b.total_tokens ? static_cast<double>(b.cnt_above) / static_cast<double>(b.total_tokens) : 0.0;
  return b;
}

TmrBreakdown token_miss_rate(const TokenizedUtterance& u, const LevelLexicon& lexicon, Level user_level) {
  const auto lemmas = u.lemmas();
  return token_miss_rate(lemmas, lexicon, user_level);
}

double control_error(double score, Level target) {
  const double d = score - static_cast<double>(target.value());
  return d * d;
}

double trigram_diversity(std::span<const std::string> tokens) {
  if (tokens.size() < 3) return 1.0;
  std::set<std::tuple<std::string_view, std::string_view, std::string_view>> seen;
  for (std::size_t i = 0; i + 2 < tokens.size(); ++i) seen.emplace(tokens[i], tokens[i + 1], tokens[i + 2]);
  return static_cast<double>(seen.size()) / static_cast<double>(tokens.size() - 2);
}

double trigram_diversity(const TokenizedUtterance& u) {
  const auto lemmas = u.lemmas();
  return trigram_diversity(lemmas);
}

TmrBreakdown tmr_from_annotation(const TokenizedUtterance& u, std::span<const Span> highlighted) {
  const std::size_t n = text::length(u.source);
  for (const auto& s : highlighted) {
    if (s.start >= s.end) throw ValidationError("highlight range must have start < end");
    if (s.end > n) throw ValidationError("highlight range ends beyond the utterance");
  }
  TmrBreakdown b;
  b.total_tokens = u.tokens.size();
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const Span& t = u.tokens[i].span;
    for (const auto& s : highlighted) {
      if (t.start < s.end && s.start < t.end) {
        ++b.cnt_above;
        b.flagged.push_back(FlaggedToken{i, std::nullopt});
        break;
      }
    }
  }
  b.tmr = b.total_tokens ? static_cast<double>(b.cnt_above) / static_cast<double>(b.total_tokens) : 0.0;
  return b;
}

double SurrogateReadability::score(const TokenizedUtterance& u) const {
  if (u.tokens.empty()) return intercept;
  std::size_t sentences = 0;
  for (char32_t c : text::decode_utf8(u.source)) {
    if (c == U'。' || c == U'！' || c == U'？' || c == U'!' || c == U'?') ++sentences;
  }
  sentences = std::max<std::size_t>(sentences, 1);
  std::size_t hard = 0;
  for (const auto& t : u.tokens) {
    const auto level = lexicon_.lookup(t.lemma);
    if (level && level->value() > 3) ++hard;
  }
  const double n = static_cast<double>(u.tokens.size());
  return intercept - length_weight * n / static_cast<double>(sentences) - hard_weight * static_cast<double>(hard) / n;
}

std::string to_string(TmrPooling p) { return p == TmrPooling::macro ? "macro" : "micro"; }

void MetricsDeps::require_complete() const {
  if (!tokenizer) throw CapabilityError("no tokenizer configured: all metrics skipped");
  if (!lexicon) throw CapabilityError("no lexicon configured: TMR cannot be computed");
  if (!predictor) throw CapabilityError("no difficulty predictor configured: ControlError cannot be computed");
  if (!ppl_model) throw CapabilityError("no language model configured: Avg. PPL cannot be computed");
}

TurnMetrics score_turn(const TokenizedUtterance& u, std::size_t turn_index, Level user_level, const MetricsDeps& deps) {
  deps.require_complete();
  if (u.tokens.empty()) throw ValidationError("cannot score an utterance with no tokens");
  const auto lemmas = u.lemmas();
  const TmrBreakdown b = token_miss_rate(lemmas, *deps.lexicon, user_level);
  TurnMetrics m;
  m.turn_index = turn_index;
  m.length = lemmas.size();
  m.cnt_above = b.cnt_above;
  m.cnt_unbinned = b.cnt_unbinned;
  m.tmr = b.tmr;
  m.ppl = perplexity(*deps.ppl_model, lemmas);
  m.div3 = trigram_diversity(lemmas);
  m.difficulty = score_tokens(*deps.predictor, lemmas, deps.score_mode);
  m.control_error = control_error(m.difficulty, user_level);
  if (deps.readability) m.readability = deps.readability->score(u);
  return m;
}

MetricsReport aggregate_turns(const std::string& model, std::span<const TurnMetrics> turns, const MetricsDeps& deps) {
  if (turns.empty()) throw ValidationError("no turns to aggregate for '" + model + "'");
  MetricsReport r;
  r.model = model;
  r.n_utterances = turns.size();
  r.score_mode = to_string(deps.score_mode);
  r.tmr_pooling = to_string(deps.pooling);
  const double n = static_cast<double>(turns.size());
  double len = 0, ppl = 0, div = 0, tmr = 0, ce = 0, read = 0;
  std::size_t above = 0, total = 0;
  bool have_read = true;
  for (const auto& t : turns) {
    len += static_cast<double>(t.length);
    ppl += t.ppl;
    div += t.div3;
    tmr += t.tmr;
    ce += t.control_error;
    above += t.cnt_above;
    total += t.length;
    if (t.readability) {
      read += *t.readability;
    } else {
      have_read = false;
    }
  }
  r.avg_length = len / n;
  r.avg_ppl = ppl / n;
  r.div3 = div / n;
  r.control_error = ce / n;
  r.tmr_percent = 100.0 * (deps.pooling == TmrPooling::macro
                               ? tmr / n
                               : (total ? static_cast<double>(above) / static_cast<double>(total) : 0.0));
  if (have_read) {
    r.readability = read / n;
    r.readability_scorer = deps.readability ? deps.readability->name() : "external";
  }
  r.turns.assign(turns.begin(), turns.end());
  return r;
}

MetricsReport score_transcript(const DialogueTranscript& transcript, const MetricsDeps& deps, Level user_level) {
  std::vector<TurnMetrics> turns;
  std::size_t tutor_index = 0;
  for (const auto& t : transcript.turns) {
    if (t.role != Role::tutor) continue;
    ++tutor_index;
    turns.push_back(t.metrics ? *t.metrics : score_turn(t.tokens, tutor_index, user_level, deps));
  }
  if (turns.empty()) throw ValidationError("transcript has no tutor turns");
  return aggregate_turns(transcript.spec.method.label(), turns, deps);
}

std::string format_number(double v, int precision) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

std::string reports_to_csv(std::span<const MetricsReport> rows) {
  std::string out;
  for (std::size_t i = 0; i < std::size(kReportColumns); ++i) {
    if (i) out += ',';
    out += kReportColumns[i];
  }
  out += '\n';
  for (const auto& r : rows) {
    std::string model = r.model;
    if (model.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : model) {
        if (c == '"') q += '"';
        q += c;
      }
      model = q + "\"";
    }
    out += model + ',' + format_number(r.avg_length) + ',' + format_number(r.avg_ppl) + ',' +
           format_number(r.div3) + ',' + (r.readability ? format_number(*r.readability) : "") + ',' +
           format_number(r.tmr_percent) + ',' + format_number(r.control_error) + '\n';
  }
  return out;
}

}  // namespace gradechat

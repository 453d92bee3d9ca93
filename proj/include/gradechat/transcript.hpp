#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradechat/level.hpp"
#include "gradechat/lm.hpp"
#include "gradechat/tokenizer.hpp"

namespace gradechat {

// Wire-visible method selector: baseline | detailed | overgenerate | fudge.
enum class MethodKind { baseline, detailed, overgenerate, fudge };
std::string to_string(MethodKind m);
std::optional<MethodKind> method_from_string(std::string_view s);
inline constexpr const char* kValidMethods = "baseline, detailed, overgenerate, fudge";

struct MethodSpec {
  MethodKind kind = MethodKind::baseline;
  double lambda = 0.8;  // fudge only

  // "fudge(lambda=0.8)" for fudge, otherwise the method name.
  std::string label() const;
  // Accepts "baseline", "fudge", "fudge:0.8".
  static MethodSpec parse(std::string_view s);
  bool operator==(const MethodSpec&) const = default;
};

struct DialogueSpec {
  Level tutor_level;  // control target
  Level student_level;
  std::string topic;
  MethodSpec method;
  std::size_t turns = 6;
  std::uint64_t seed = 0;
};

struct TurnMetrics {
  std::size_t turn_index = 0;  // 1-based tutor turn
  std::size_t length = 0;      // content tokens
  std::size_t cnt_above = 0;
  std::size_t cnt_unbinned = 0;
  double tmr = 0.0;
  double ppl = 0.0;
  double div3 = 1.0;
  double difficulty = 0.0;  // s(x)
  double control_error = 0.0;
  std::optional<double> readability;
};

struct TranscriptTurn {
  Role role;
  std::string text;
  TokenizedUtterance tokens;
  std::optional<TurnMetrics> metrics;  // tutor turns
};

enum class TranscriptStatus { complete, aborted };

struct DialogueTranscript {
  DialogueSpec spec;
  std::vector<TranscriptTurn> turns;
  TranscriptStatus status = TranscriptStatus::complete;
  std::string abort_reason;

  std::vector<const TurnMetrics*> tutor_metrics() const;
};

}  // namespace gradechat

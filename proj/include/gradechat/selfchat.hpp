#pragma once

#include <array>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gradechat/control.hpp"
#include "gradechat/metrics.hpp"
#include "gradechat/transcript.hpp"

namespace gradechat {

// Topics per level, index = Level::index().
using TopicTable = std::array<std::vector<std::string>, Level::kCount>;

// Three topics per level used by the automatic evaluation.
const TopicTable& selfchat_topics();
// Larger pools offered to human participants.
const TopicTable& study_topics();

// 5 × 5 × dialogues_per_pair specs per method, ordered method → tutor level →
// student level → topic. Topics are the first dialogues_per_pair of the
// student level's list.
std::vector<DialogueSpec> plan_suite(std::span<const MethodSpec> methods, const TopicTable& topics,
                                     std::size_t dialogues_per_pair = 3, std::size_t turns = 6,
                                     std::uint64_t seed = 0);

// The student opens; each round is one student turn and one tutor turn.
// Agent failures end the dialogue with status aborted and keep what was said.
DialogueTranscript run_dialogue(const DialogueSpec& spec, const Tutor& tutor,
                                const LanguageModel& student_lm, const MetricsDeps& deps,
                                const std::string& language = "Japanese");

using TutorFactory = std::function<std::unique_ptr<Tutor>(const DialogueSpec&)>;

// Runs dialogues on up to `jobs` worker threads; results are in spec order.
std::vector<DialogueTranscript> run_suite(std::span<const DialogueSpec> specs,
                                          const TutorFactory& make_tutor,
                                          const LanguageModel& student_lm, const MetricsDeps& deps,
                                          std::size_t jobs = 1);

struct DriftPoint {
  std::size_t turn_index;
  double mean_tmr;
  std::size_t n;
};

struct MethodRow {
  std::string method;
  std::optional<MetricsReport> report;  // absent when no transcript completed
  std::size_t complete = 0;
  std::size_t aborted = 0;
  std::vector<DriftPoint> drift;
};

struct SuiteReport {
  std::vector<MethodRow> rows;  // in first-seen method order
};

SuiteReport aggregate_suite(std::span<const DialogueTranscript> transcripts, const MetricsDeps& deps);

// ---- Persistence ------------------------------------------------------------

inline constexpr int kTranscriptSchemaVersion = 1;

std::string transcript_to_jsonl(const DialogueTranscript& transcript);
DialogueTranscript transcript_from_jsonl(std::string_view line);
void append_transcript(const std::string& path, const DialogueTranscript& transcript);
std::vector<DialogueTranscript> load_transcripts(const std::string& path);

std::string suite_report_json(const SuiteReport& report);
std::string suite_report_csv(const SuiteReport& report);
std::string drift_csv(const SuiteReport& report);
// report.json, report.csv, drift.csv; returns written paths.
std::vector<std::string> write_suite_report(const SuiteReport& report, const std::string& dir);

}  // namespace gradechat

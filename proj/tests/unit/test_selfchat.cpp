#include <doctest.h>

#include <cmath>
#include <set>

#include "gradechat/errors.hpp"
#include "gradechat/selfchat.hpp"
#include "gradechat/text.hpp"
#include "gradechat/toy_world.hpp"
#include "test_util.hpp"

using namespace gradechat;

namespace {

const ToyWorld& world() {
  static const ToyWorld w = [] {
    ToyWorldConfig cfg;
    cfg.seed = 1;
    cfg.sentences_per_level = 40;
    return build_toy_world(cfg);
  }();
  return w;
}

MetricsDeps deps_for(const ToyWorld& w) {
  MetricsDeps d;
  d.tokenizer = w.tokenizer.get();
  d.lexicon = &w.gold;
  d.predictor = w.predictor.get();
  d.ppl_model = w.lm.get();
  return d;
}

TutorResources resources_for(const ToyWorld& w) {
  TutorResources r;
  r.lm = w.lm.get();
  r.predictor = w.predictor.get();
  r.heuristic_lexicon = &w.heuristic;
  r.tokenizer = w.tokenizer.get();
  r.known_expressions = 5;
  return r;
}

DialogueSpec spec_of(MethodSpec m, std::size_t turns = 3) {
  return DialogueSpec{Level::from_value(2), Level::from_value(1), "weekend", m, turns, 42};
}

struct SilentModel final : LanguageModel {
  mutable int calls = 0;
  int speak_for;
  explicit SilentModel(int n) : speak_for(n) {}
  std::string name() const override { return "silent"; }
  std::string complete(const ChatContext&) const override { return calls++ < speak_for ? "学校です。" : ""; }
};

}  // namespace

TEST_SUITE("selfchat") {
  TEST_CASE("method specs parse and label") {
    CHECK(MethodSpec::parse("baseline") == MethodSpec{MethodKind::baseline, 0.8});
    CHECK(MethodSpec::parse("fudge:0.25").lambda == 0.25);
    CHECK(MethodSpec::parse("fudge").label() == "fudge(lambda=0.8)");
    CHECK(MethodSpec::parse("fudge:1").label() == "fudge(lambda=1)");
    CHECK(MethodSpec::parse("overgenerate").label() == "overgenerate");
    CHECK_THROWS_WITH_AS(MethodSpec::parse("beam"), doctest::Contains(kValidMethods), ValidationError);
    CHECK_THROWS_AS(MethodSpec::parse("baseline:0.5"), ValidationError);
    CHECK_THROWS_AS(MethodSpec::parse("fudge:"), ValidationError);
    CHECK_THROWS_AS(MethodSpec::parse("fudge:0.5x"), ValidationError);
    CHECK_THROWS_AS(MethodSpec::parse("fudge:1.5"), ValidationError);
  }

  TEST_CASE("suite plan covers every pair and pairs seeds across methods") {
    const std::vector<MethodSpec> methods = {MethodSpec::parse("baseline"), MethodSpec::parse("fudge")};
    const auto specs = plan_suite(methods, selfchat_topics(), 3, 6, 9);
    REQUIRE(specs.size() == 150);
    std::set<std::tuple<int, int, std::string>> slots;
    for (std::size_t i = 0; i < 75; ++i) {
      const auto& a = specs[i];
      const auto& b = specs[75 + i];
      CHECK(a.method.kind == MethodKind::baseline);
      CHECK(b.method.kind == MethodKind::fudge);
      CHECK(a.seed == b.seed);
      CHECK(a.topic == b.topic);
      slots.emplace(a.tutor_level.value(), a.student_level.value(), a.topic);
      CHECK(a.topic == selfchat_topics()[static_cast<std::size_t>(a.student_level.index())][i % 3]);
    }
    CHECK(slots.size() == 75);
    CHECK(specs[0].tutor_level == Level::from_value(1));
    CHECK(specs[3].student_level == Level::from_value(2));
    CHECK_THROWS_AS(plan_suite(methods, selfchat_topics(), 4), ValidationError);
    CHECK_THROWS_AS(plan_suite(std::vector<MethodSpec>{}, selfchat_topics()), ValidationError);
  }

  TEST_CASE("topic tables") {
    for (Level l : Level::all()) {
      CHECK(selfchat_topics()[static_cast<std::size_t>(l.index())].size() == 3);
      CHECK(study_topics()[static_cast<std::size_t>(l.index())].size() >= 3);
    }
  }

  TEST_CASE("dialogue alternates with the student first and scores tutor turns") {
    const auto& w = world();
    const auto deps = deps_for(w);
    const auto spec = spec_of(MethodSpec::parse("fudge:0.5"));
    const auto tutor = make_tutor(spec.method, spec.tutor_level, resources_for(w), spec.seed);
    const auto tr = run_dialogue(spec, *tutor, *w.lm, deps);
    CHECK(tr.status == TranscriptStatus::complete);
    REQUIRE(tr.turns.size() == 6);
    for (std::size_t i = 0; i < tr.turns.size(); ++i) {
      CHECK(tr.turns[i].role == (i % 2 == 0 ? Role::student : Role::tutor));
      CHECK(tr.turns[i].metrics.has_value() == (i % 2 == 1));
    }
    const auto ms = tr.tutor_metrics();
    REQUIRE(ms.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ms[i]->turn_index == i + 1);
      const auto& t = tr.turns[2 * i + 1];
      CHECK(ms[i]->length == t.tokens.size());
      const auto b = token_miss_rate(t.tokens, w.gold, spec.tutor_level);
      CHECK(ms[i]->tmr == b.tmr);
      CHECK(ms[i]->control_error == doctest::Approx(std::pow(ms[i]->difficulty - 2.0, 2)));
    }
    const auto again = run_dialogue(spec, *tutor, *w.lm, deps);
    CHECK(transcript_to_jsonl(again) == transcript_to_jsonl(tr));
  }

  TEST_CASE("an empty agent turn aborts and keeps what was said") {
    const auto& w = world();
    const auto deps = deps_for(w);
    const auto spec = spec_of(MethodSpec::parse("baseline"), 4);
    const auto tutor = make_tutor(spec.method, spec.tutor_level, resources_for(w), spec.seed);
    SilentModel student(2);
    const auto tr = run_dialogue(spec, *tutor, student, deps);
    CHECK(tr.status == TranscriptStatus::aborted);
    CHECK(tr.abort_reason == "student produced an empty turn");
    CHECK(tr.turns.size() == 4);
  }

  TEST_CASE("worker count does not change results") {
    const auto& w = world();
    const auto deps = deps_for(w);
    const std::vector<MethodSpec> methods = {MethodSpec::parse("overgenerate"), MethodSpec::parse("fudge")};
    auto specs = plan_suite(methods, selfchat_topics(), 1, 2, 5);
    specs.resize(12);
    const TutorFactory factory = [&](const DialogueSpec& s) {
      return make_tutor(s.method, s.tutor_level, resources_for(w), s.seed);
    };
    const auto one = run_suite(specs, factory, *w.lm, deps, 1);
    const auto four = run_suite(specs, factory, *w.lm, deps, 4);
    REQUIRE(one.size() == four.size());
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(transcript_to_jsonl(one[i]) == transcript_to_jsonl(four[i]));

    const TutorFactory broken = [](const DialogueSpec&) -> std::unique_ptr<Tutor> {
      throw CapabilityError("no backend");
    };
    CHECK_THROWS_AS(run_suite(specs, broken, *w.lm, deps, 2), CapabilityError);
  }

  TEST_CASE("suite aggregation pools turns and tracks drift") {
    const auto& w = world();
    const auto deps = deps_for(w);
    auto make = [](const char* method, std::vector<double> tmrs, bool aborted) {
      DialogueTranscript tr;
      tr.spec.method = MethodSpec::parse(method);
      tr.status = aborted ? TranscriptStatus::aborted : TranscriptStatus::complete;
      for (std::size_t i = 0; i < tmrs.size(); ++i) {
        TurnMetrics m;
        m.turn_index = i + 1;
        m.length = 4;
        m.tmr = tmrs[i];
        m.cnt_above = static_cast<std::size_t>(tmrs[i] * 4);
        m.ppl = 10;
        tr.turns.push_back(TranscriptTurn{Role::student, "s", {}, std::nullopt});
        tr.turns.push_back(TranscriptTurn{Role::tutor, "t", {}, m});
      }
      return tr;
    };
    const std::vector<DialogueTranscript> trs = {
        make("baseline", {0.5, 0.25}, false), make("baseline", {0.0, 0.75}, false),
        make("baseline", {1.0}, true), make("fudge", {0.0}, true)};
    const auto rep = aggregate_suite(trs, deps);
    REQUIRE(rep.rows.size() == 2);
    const auto& b = rep.rows[0];
    CHECK(b.method == "baseline");
    CHECK(b.complete == 2);
    CHECK(b.aborted == 1);
    REQUIRE(b.report);
    CHECK(b.report->n_utterances == 4);
    CHECK(b.report->tmr_percent == doctest::Approx(37.5));
    REQUIRE(b.drift.size() == 2);
    CHECK(b.drift[0].mean_tmr == doctest::Approx(0.25));
    CHECK(b.drift[1].mean_tmr == doctest::Approx(0.5));
    CHECK(b.drift[1].n == 2);
    CHECK_FALSE(rep.rows[1].report);

    const std::string csv = suite_report_csv(rep);
    CHECK(csv.find("fudge(lambda=0.8),,,,,,\n") != std::string::npos);
    CHECK(drift_csv(rep) == "method,turn_index,mean_tmr,n\nbaseline,1,0.250000,2\nbaseline,2,0.500000,2\n");
    const std::string js = suite_report_json(rep);
    CHECK(js.find("\"absent\": true") != std::string::npos);

    test_util::TempDir dir;
    const auto paths = write_suite_report(rep, (dir.path / "out").string());
    CHECK(paths.size() == 3);
    CHECK(test_util::read(paths[1]) == csv);
  }

  TEST_CASE("transcripts round trip through jsonl") {
    const auto& w = world();
    const auto deps = deps_for(w);
    const auto spec = spec_of(MethodSpec::parse("overgenerate"), 2);
    const auto tutor = make_tutor(spec.method, spec.tutor_level, resources_for(w), spec.seed);
    auto tr = run_dialogue(spec, *tutor, *w.lm, deps);
    tr.turns[1].metrics->ppl = INFINITY;
    const std::string line = transcript_to_jsonl(tr);
    CHECK(line.find('\n') == std::string::npos);
    const auto back = transcript_from_jsonl(line);
    CHECK(transcript_to_jsonl(back) == line);
    CHECK(std::isinf(back.turns[1].metrics->ppl));
    CHECK(back.spec.method == spec.method);

    test_util::TempDir dir;
    const auto path = (dir.path / "t.jsonl").string();
    append_transcript(path, tr);
    append_transcript(path, back);
    CHECK(load_transcripts(path).size() == 2);

    CHECK_THROWS_AS(transcript_from_jsonl("{}"), ValidationError);
    CHECK_THROWS_WITH_AS(transcript_from_jsonl(R"({"schema_version":2})"), doctest::Contains("schema version 2"),
                         ValidationError);
  }
}

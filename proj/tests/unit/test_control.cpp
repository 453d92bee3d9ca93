#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gradechat/control.hpp"
#include "gradechat/errors.hpp"
#include "gradechat/ngram.hpp"

using namespace gradechat;

namespace {

Predictor tiny_predictor(const std::vector<std::string>& vocab, std::uint64_t seed) {
  Rng rng(seed);
  PredictorParams p;
  p.embedding.resize(3, static_cast<Eigen::Index>(vocab.size()));
  for (Eigen::Index i = 0; i < p.embedding.size(); ++i) p.embedding.data()[i] = rng.normal();
  p.weights.resize(Level::kCount, 3);
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) p.weights.data()[i] = rng.normal();
  p.bias.setZero();
  return Predictor(vocab, p, "t");
}

NextTokenDistribution base_dist(const std::vector<std::string>& vocab) {
  NextTokenDistribution d;
  double w = 1.0;
  for (std::size_t i = 0; i < vocab.size(); ++i, w *= 0.7) {
    d.candidates.push_back(Candidate{static_cast<TokenId>(i), vocab[i], std::log(w)});
  }
  d.k = vocab.size();
  d.sort();
  return renormalize(d);
}

ChatContext student_said(std::string text, std::uint64_t seed = 3) {
  ChatContext ctx("p", Role::tutor);
  ctx.add_turn(Role::student, std::move(text));
  ctx.generation.seed = seed;
  return ctx;
}

LevelLexicon lexicon_with(std::vector<std::pair<std::string, int>> words) {
  std::map<std::string, LexiconEntry> e;
  for (auto& [w, v] : words) e.emplace(w, LexiconEntry{w, Level::from_value(v), std::nullopt});
  return LevelLexicon(e, Provenance::corpus_heuristic, "h");
}

}  // namespace

TEST_SUITE("control") {
  TEST_CASE("fudge step is the interpolation of base and predictor log-probs") {
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e", "f"};
    const Predictor pred = tiny_predictor(vocab, 4);
    const auto base = base_dist(vocab);
    const std::vector<std::string> prefix = {"c", "a"};
    for (double lam : {0.0, 0.3, 0.8, 1.0}) {
      CAPTURE(lam);
      FudgeConfig cfg;
      cfg.lambda = lam;
      cfg.target_level = Level::from_value(2);
      const auto y = fudge_step(base, pred, prefix, cfg);
      CHECK(y.mass() == doctest::Approx(1.0).epsilon(1e-12));
      // oracle: unnormalized y_i from independent predictor calls, then normalize
      std::map<TokenId, double> want;
      double mx = -INFINITY;
      for (const auto& c : base.candidates) {
        auto longer = prefix;
        longer.push_back(c.text);
        const double a = pred.predict_prefix(longer).log_prob(cfg.target_level);
        want[c.id] = lam * a + (1 - lam) * c.log_prob;
        mx = std::max(mx, want[c.id]);
      }
      double z = 0;
      for (auto& [id, v] : want) z += std::exp(v - mx);
      for (const auto& c : y.candidates) CHECK(c.log_prob == doctest::Approx(want[c.id] - mx - std::log(z)).epsilon(1e-10));
      CHECK(std::is_sorted(y.candidates.begin(), y.candidates.end(),
                           [](const Candidate& p, const Candidate& q) { return p.log_prob > q.log_prob; }));
    }
  }

  TEST_CASE("lambda zero leaves the base distribution untouched") {
    const std::vector<std::string> vocab = {"a", "b", "c", "d"};
    const Predictor pred = tiny_predictor(vocab, 9);
    const auto base = base_dist(vocab);
    FudgeConfig cfg;
    cfg.lambda = 0.0;
    const auto y = fudge_step(base, pred, std::vector<std::string>{"a"}, cfg);
    REQUIRE(y.candidates.size() == base.candidates.size());
    for (std::size_t i = 0; i < y.candidates.size(); ++i) {
      CHECK(y.candidates[i].id == base.candidates[i].id);
      CHECK(y.candidates[i].log_prob == base.candidates[i].log_prob);
    }
  }

  TEST_CASE("top-k truncation and the end token") {
    const std::vector<std::string> vocab = {"a", "b", "c", "d", "e"};
    const Predictor pred = tiny_predictor(vocab, 2);
    const auto base = base_dist(vocab);
    FudgeConfig cfg;
    cfg.lambda = 1.0;
    cfg.top_k = 3;
    cfg.target_level = Level::from_value(4);
    auto state = pred.empty_state();
    pred.extend(state, "b");
    const auto y = fudge_step(base, pred, state, cfg, TokenId{1});
    CHECK(y.candidates.size() == 3);
    // with λ = 1 the end token is scored by the prefix as it stands
    std::map<TokenId, double> a;
    for (TokenId id : {0, 1, 2}) {
      std::vector<std::string> longer = {"b"};
      if (id != 1) longer.push_back(vocab[static_cast<std::size_t>(id)]);
      a[id] = pred.predict_prefix(longer).log_prob(cfg.target_level);
    }
    for (const auto& c : y.candidates) {
      for (const auto& d : y.candidates) {
        CHECK(c.log_prob - d.log_prob == doctest::Approx(a[c.id] - a[d.id]).epsilon(1e-10));
      }
    }
    FudgeConfig bad;
    bad.lambda = 1.5;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = {};
    bad.top_k = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("candidate selection is the lexicographic minimum") {
    std::vector<ScoredCandidate> c = {
        {0, "x", 0.2, 5}, {1, "y", 0.1, 7}, {2, "z", 0.1, 4}, {3, "", 0.0, 0}, {4, "w", 0.1, 4},
    };
    CHECK(select_candidate(c) == 2);
    std::vector<ScoredCandidate> empty = {{0, "", 0.0, 0}, {1, "", 0.0, 0}};
    CHECK_THROWS_AS(select_candidate(empty), ValidationError);
  }

  TEST_CASE("overgenerate keeps the easiest candidate") {
    const std::vector<std::vector<std::string>> sents = {{"猫", "が", "好き", "。"}, {"懸念", "が", "ある", "。"}};
    const NgramModel lm = NgramModel::train(sents, NgramConfig{2, 0.5, true, ""});
    const auto lex = lexicon_with({{"猫", 1}, {"が", 1}, {"好き", 1}, {"懸念", 5}, {"ある", 1}});
    BuiltinTokenizer tok({"猫", "が", "好き", "懸念", "ある"});
    RerankConfig cfg;
    cfg.n_candidates = 8;
    cfg.lexicon = &lex;
    cfg.tokenizer = &tok;
    cfg.user_level = Level::from_value(1);
    const auto r = generate_overgenerate(student_said("こんにちは"), lm, cfg);
    CHECK(r.candidates.size() == 8);
    double best = 1.0;
    for (const auto& c : r.candidates)
      if (c.tokens) best = std::min(best, c.tmr);
    CHECK(r.candidates[r.chosen_index].tmr == best);
    CHECK(r.chosen == r.candidates[r.chosen_index].text);
    // seeded: same context, same candidates
    const auto again = generate_overgenerate(student_said("こんにちは"), lm, cfg);
    CHECK(again.chosen == r.chosen);

    RerankConfig missing = cfg;
    missing.tokenizer = nullptr;
    CHECK_THROWS_AS(generate_overgenerate(student_said("x"), lm, missing), CapabilityError);
  }

  TEST_CASE("the tutor replies only to a student turn") {
    UniformModel lm({"a", "。"});
    ChatContext ctx("p", Role::tutor);
    CHECK_THROWS_AS(generate_baseline(ctx, lm), ValidationError);
    ctx.add_turn(Role::student, "   ");
    CHECK_THROWS_AS(generate_baseline(ctx, lm), ValidationError);
  }

  TEST_CASE("known expressions are a seeded sample of one level") {
    const auto lex = lexicon_with({{"あ", 1}, {"い", 1}, {"う", 1}, {"え", 1}, {"お", 2}});
    const auto s = sample_known_expressions(lex, Level::from_value(1), 3, 7);
    CHECK(s.size() == 3);
    CHECK(std::set<std::string>(s.begin(), s.end()).size() == 3);
    for (const auto& w : s) CHECK(lex.lookup(w) == Level::from_value(1));
    CHECK(sample_known_expressions(lex, Level::from_value(1), 3, 7) == s);
    CHECK(sample_known_expressions(lex, Level::from_value(2), 10, 7) == std::vector<std::string>{"お"});
    CHECK(sample_known_expressions(lex, Level::from_value(3), 10, 7).empty());
  }

  TEST_CASE("prompts fill every placeholder") {
    for (Level level : Level::all()) {
      const auto baseline = build_prompt(make_prompt_spec(PromptRole::tutor_baseline, level));
      CHECK(baseline.find(level_profile(level).level_word) != std::string::npos);
      CHECK(baseline.find('{') == std::string::npos);
      const auto detailed =
          build_prompt(make_prompt_spec(PromptRole::tutor_detailed, level, {"猫", "犬"}));
      CHECK(detailed.find("猫, 犬") != std::string::npos);
      CHECK(detailed.find(level_profile(level).example_dialogue) != std::string::npos);
      const auto student = build_prompt(make_prompt_spec(PromptRole::student, level, {}, "school"));
      CHECK(student.find("The topic of this conversation is: school.") != std::string::npos);
    }
    CHECK_THROWS_WITH_AS(build_prompt(make_prompt_spec(PromptRole::student, Level::from_value(1))),
                         "prompt placeholder {topic} is missing", ValidationError);
    CHECK_THROWS_WITH_AS(build_prompt(make_prompt_spec(PromptRole::tutor_detailed, Level::from_value(1))),
                         "prompt placeholder {known_expressions} is missing", ValidationError);
    CHECK_THROWS_WITH_AS(build_prompt(make_prompt_spec(PromptRole::tutor_baseline, Level::from_value(1), {},
                                                       std::nullopt, "")),
                         "prompt placeholder {language} is missing", ValidationError);
    CHECK(build_prompt(make_prompt_spec(PromptRole::tutor_baseline, Level::from_value(1), {}, std::nullopt,
                                        "Korean"))
              .find("speak in Korean and Korean only") != std::string::npos);
  }

  TEST_CASE("tutor factory checks capabilities") {
    struct PromptOnly final : LanguageModel {
      std::string name() const override { return "remote-chat"; }
      std::string complete(const ChatContext&) const override { return "はい。"; }
    } remote;
    const std::vector<std::string> vocab = {"a"};
    const Predictor pred = tiny_predictor(vocab, 1);
    TutorResources res;
    CHECK_THROWS_AS(make_tutor(MethodSpec{MethodKind::baseline}, Level::from_value(1), res, 0), CapabilityError);
    res.lm = &remote;
    CHECK_NOTHROW(make_tutor(MethodSpec{MethodKind::baseline}, Level::from_value(1), res, 0));
    CHECK_THROWS_AS(make_tutor(MethodSpec{MethodKind::detailed}, Level::from_value(1), res, 0), CapabilityError);
    CHECK_THROWS_AS(make_tutor(MethodSpec{MethodKind::overgenerate}, Level::from_value(1), res, 0), CapabilityError);
    CHECK_THROWS_AS(make_tutor(MethodSpec{MethodKind::fudge}, Level::from_value(1), res, 0), CapabilityError);
    res.predictor = &pred;
    CHECK_THROWS_WITH_AS(make_tutor(MethodSpec{MethodKind::fudge}, Level::from_value(1), res, 0),
                         doctest::Contains("remote-chat"), CapabilityError);

    const auto lex = lexicon_with({{"猫", 2}});
    res.heuristic_lexicon = &lex;
    CHECK_THROWS_WITH_AS(make_tutor(MethodSpec{MethodKind::detailed}, Level::from_value(1), res, 0),
                         doctest::Contains("no N5 entries"), CapabilityError);
    const auto tutor = make_tutor(MethodSpec{MethodKind::detailed}, Level::from_value(2), res, 0);
    CHECK(tutor->system_prompt().find("猫") != std::string::npos);
    CHECK(tutor->method() == MethodSpec{MethodKind::detailed});
    CHECK(tutor->respond(student_said("こんにちは")).text == "はい。");
  }

  TEST_CASE("fudge tutor decodes through the predictor") {
    const std::vector<std::vector<std::string>> sents = {{"猫", "が", "好き", "。"}, {"懸念", "が", "ある", "。"}};
    const NgramModel lm = NgramModel::train(sents, NgramConfig{2, 0.5, true, ""});
    const Predictor pred = tiny_predictor(lm.vocabulary(), 5);
    TutorResources res;
    res.lm = &lm;
    res.predictor = &pred;
    const auto tutor = make_tutor(MethodSpec{MethodKind::fudge, 0.5}, Level::from_value(1), res, 0);
    CHECK(tutor->method().lambda == 0.5);
    const auto a = tutor->respond(student_said("やあ", 8));
    const auto b = tutor->respond(student_said("やあ", 8));
    CHECK(a.text == b.text);
    CHECK_FALSE(a.rerank);
    CHECK_THROWS_AS(make_tutor(MethodSpec{MethodKind::fudge, 2.0}, Level::from_value(1), res, 0), ValidationError);
  }
}

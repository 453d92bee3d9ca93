#include "gradechat/control.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

#include "gradechat/errors.hpp"
#include "gradechat/metrics.hpp"
#include "gradechat/rng.hpp"

namespace gradechat {

// ---- Level profiles ---------------------------------------------------------

namespace {

const std::array<LevelProfile, Level::kCount> kProfiles = {{
    {"beginner",
     "You should use only very basic vocabulary and simple sentence structures understandable in everyday "
     "situations.",
     {"can understand only very basic Japanese",
      "very easy expressions and sentences written in hiragana, katakana, and basic kanji",
      "very short and easy conversations spoken slowly about topics regularly encountered in daily life and "
      "classroom situations"},
     "A: こんにちは。げんきですか。\n"
     "B: はい、げんきです。あなたは？\n"
     "A: わたしもげんきです。きょうはなにをしますか。\n"
     "B: としょかんでほんをよみます。\n"
     "A: いいですね。どんなほんがすきですか。\n"
     "B: どうぶつのほんがすきです。"},
    {"pre-intermediate",
     "You should use simple grammar and vocabulary related to familiar daily topics, avoiding compound or "
     "abstract expressions.",
     {"can understand basic Japanese",
      "can read and understand passages on familiar daily topics using basic vocabulary and kanji",
      "can follow conversations in daily life, if spoken slowly"},
     "A: 週末は何をしましたか。\n"
     "B: 友達と買い物に行きました。\n"
     "A: いいですね。何を買いましたか。\n"
     "B: 新しいくつを買いました。とても安かったです。\n"
     "A: よかったですね。どこで買いましたか。\n"
     "B: 駅の近くの店で買いました。"},
    {"intermediate",
     "You should use mostly everyday language and expressions, with slightly more complex phrasing only if "
     "the context makes the meaning clear.",
     {"can understand Japanese used in everyday situations to a certain degree",
      "can read and understand materials with specific content about daily topics and slightly difficult texts",
      "can follow coherent conversations at near-natural speed, and grasp the main points and relationships"},
     "A: 最近、旅行に行きましたか。\n"
     "B: はい、先月家族と京都に行ってきました。\n"
     "A: いいですね。どこが一番印象に残りましたか。\n"
     "B: 古いお寺がたくさんあって、雰囲気がとてもよかったです。\n"
     "A: 秋だったら紅葉もきれいだったでしょうね。\n"
     "B: そうなんです。また行きたいと思っています。"},
    {"upper-intermediate",
     "You should use coherent and natural language on a variety of everyday and workplace-related topics.",
     {"can understand Japanese used in everyday situations and a variety of contexts to a fair degree",
      "can read and understand articles, commentaries, and critiques on general topics",
      "can follow conversations and news reports at nearly natural speed, understanding both main ideas and "
      "relationships"},
     "A: 最近気になったニュースはありますか。\n"
     "B: 在宅勤務を続ける会社が増えているという記事を読みました。\n"
     "A: そうですか。通勤の負担が減るのは大きいですよね。\n"
     "B: ええ。ただ、同僚との意思疎通が難しくなるという意見もあるそうです。\n"
     "A: 確かに、直接話す機会が少ないと誤解が生じやすいかもしれませんね。\n"
     "B: だからこそ、定期的に顔を合わせる工夫が必要だと思います。"},
    {"advanced",
     "You should use advanced vocabulary and logical, abstract expressions appropriate for discussing "
     "complex or specialized topics.",
     {"can understand Japanese used in a wide range of situations",
      "can read logically complex or abstract texts such as editorials, critiques, and essays, and understand "
      "the writer's intent",
      "can follow fast, coherent conversations, lectures, and reports and comprehend both content and nuance"},
     "A: 再生医療の進歩については、どのようにお考えですか。\n"
     "B: 治療の可能性が飛躍的に広がる一方で、倫理的な議論が追いついていない印象を受けます。\n"
     "A: 確かに、技術の発展に制度の整備が後れを取っている面は否めませんね。\n"
     "B: 特に、患者の同意の在り方や費用負担の公平性は慎重に検討すべき課題です。\n"
     "A: 社会全体で合意を形成するには、専門家と市民の対話が不可欠でしょう。\n"
     "B: おっしゃる通りです。透明性の高い情報発信が鍵になると思います。"},
}};

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

const LevelProfile& level_profile(Level level) { return kProfiles[static_cast<std::size_t>(level.index())]; }

PromptSpec make_prompt_spec(PromptRole role, Level level, std::vector<std::string> known_expressions,
                            std::optional<std::string> topic, std::string language) {
  const LevelProfile& p = level_profile(level);
  PromptSpec spec;
  spec.language = std::move(language);
  spec.level = level;
  spec.level_word = p.level_word;
  spec.level_description = join(p.description, "; ");
  spec.level_guidelines = p.guidelines;
  spec.example_dialogue = p.example_dialogue;
  spec.known_expressions = std::move(known_expressions);
  spec.topic = std::move(topic);
  spec.role = role;
  return spec;
}

std::string build_prompt(const PromptSpec& s) {
  auto need = [](bool ok, const char* placeholder) {
    if (!ok) throw ValidationError(std::string("prompt placeholder {") + placeholder + "} is missing");
  };
  need(!s.language.empty(), "language");
  need(!s.level_word.empty(), "level_word");
  const std::string& lang = s.language;

  switch (s.role) {
    case PromptRole::student: {
      need(s.topic && !s.topic->empty(), "topic");
      need(!s.level_description.empty(), "desc");
      const std::string& topic = *s.topic;
      return "You are roleplaying as a student learning " + lang + " at the " + s.level_word + " level.\n" +
             "You are having a conversation with your language partner (i.e. the user) to practice " + lang +
             ".\n" + "The topic of this conversation is: " + topic + ".\n" + "As a " + s.level_word +
             " student, you are: " + s.level_description + ".\n" +
             "You must speak using only the vocabulary and grammar allowed at this level.\n"
             "You are not in a formal class - this is casual language practice with someone your age.\n"
             "\n"
             "You should ALWAYS follow the rules below:\n"
             "1. You should stick to using only the vocabulary and grammar allowed at your level mentioned above.\n"
             "2. Do not ask the user to teach you things. Just bring up the topic naturally and continue the "
             "conversation.\n"
             "3. Your conversation should revolve around the topic of: " +
             topic +
             ". Respond one idea at a time.\n"
             "4. You must keep the conversation going. Do not assume the conversation is over just because a few "
             "turns have passed.\n"
             "5. DO NOT say anything like 'goodbye', 'see you next time', or anything else that signals the end "
             "of this conversation. You MUST keep the conversation going.\n"
             "6. You should speak in " +
             lang + " and " + lang + " only.";
    }
    case PromptRole::tutor_baseline:
      return "You are a " + lang + " language tutor.\n" + "Your goal is to help the user improve their " + lang +
             " conversation skills through a natural, back-and-forth dialogue.\n" + "You are a native " + lang +
             " speaker, around the same age as the user, and you're acting as their language partner.\n" +
             "The user you are speaking with is at the " + s.level_word + " level.\n" +
             "Please be aware of the user's level at all times and ensure that all of your responses stay within "
             "a level that is understandable to a user at this proficiency.\n"
             "Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own.\n"
             "Stay on the user's topic and follow their lead throughout the conversation.\n"
             "Don't pick on small mistakes the user makes. If the user makes a really big grammar mistake, remind "
             "the user by saying the corrected version of the sentence. DO NOT try to explain their mistake.\n"
             "You should keep the conversation going back and forth.\n"
             "You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the end "
             "of the conversation unless the user initiates it.\n"
             "You should speak in " +
             lang + " and " + lang + " only.";
    case PromptRole::tutor_detailed:
      need(!s.level_description.empty(), "level_description");
      need(!s.example_dialogue.empty(), "level_conv_example");
      need(!s.level_guidelines.empty(), "level_guidelines");
      need(!s.known_expressions.empty(), "known_expressions");
      return "You are a " + lang + " language tutor.\n" + "Your goal is to help the user improve their " + lang +
             " conversation skills through a natural, back-and-forth dialogue.\n" + "You are a native " + lang +
             " speaker, around the same age as the user, and you're acting as their language partner.\n" +
             "The user you are speaking with is at the " + s.level_word + " level.\n" +
             "This means that they: " + s.level_description + ".\n" +
             "An example of a short dialogue at the user's comprehension level is:\n" + s.example_dialogue +
             "\n\n"
             "Please be aware of the user's level at all times and ensure that all of your responses stay within "
             "a level that is understandable to a user at this proficiency. \n"
             "\n"
             "You should ALWAYS follow the rules below:\n"
             "1. " +
             s.level_guidelines +
             "\n"
             "2. Remember, the user is a language learner, not a native speaker. You should make sure that you are "
             "speaking in a way that the user could understand with their current " +
             lang +
             " level.\n"
             "3. You should try to match the user's abilities of understanding and speaking: if the user only uses "
             "simple expressions, you should only use simple expressions as well.\n"
             "4. During the conversation, don't pick on small mistakes the user makes. If the user makes a really "
             "big grammar mistake, remind the user by saying the corrected version of the sentence. DO NOT try to "
             "explain their mistake.\n"
             "5. Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own. "
             "Stay on the user's topic and follow their lead throughout the conversation.\n"
             "6. You should keep the conversation going back and forth.\n"
             "7. You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the "
             "end of the conversation unless the user initiates it.\n"
             "8. You should speak in " +
             lang + " and " + lang +
             " only.\n"
             "9. Here are some expressions the user knows: " +
             join(s.known_expressions, ", ") +
             ". Restrict your speaking to use these words and other words of similar or lower difficulty.";
  }
  throw ValidationError("unknown prompt role");
}

std::vector<std::string> sample_known_expressions(const LevelLexicon& heuristic, Level level, std::size_t count,
                                                  std::uint64_t seed) {
  std::vector<std::string> pool = heuristic.lemmas_at(level);
  const std::size_t take = std::min(count, pool.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  return pool;
}

// ---- Methods ----------------------------------------------------------------

void FudgeConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must be in [0, 1]");
  if (top_k < 1) throw ValidationError("FUDGE top_k must be at least 1");
}

void RerankConfig::validate() const {
  if (n_candidates < 1) throw ValidationError("n_candidates must be at least 1");
  if (!lexicon) throw CapabilityError("overgenerate needs a heuristic lexicon");
  if (!tokenizer) throw CapabilityError("overgenerate needs a tokenizer");
}

namespace {
void require_student_turn(const ChatContext& ctx) {
  if (ctx.turns().empty() || ctx.turns().back().role != Role::student) {
    throw ValidationError("the tutor replies to a student turn");
  }
  if (ctx.turns().back().text.find_first_not_of(" \t\r\n") == std::string::npos) {
    throw ValidationError("student turn is empty");
  }
}
}  // namespace

std::string generate_baseline(const ChatContext& context, const LanguageModel& lm) {
  require_student_turn(context);
  return lm.complete(context);
}

std::size_t select_candidate(std::span<const ScoredCandidate> candidates) {
  const ScoredCandidate* best = nullptr;
  for (const auto& c : candidates) {
    if (c.tokens == 0) continue;
    if (!best || std::tie(c.tmr, c.tokens, c.index) < std::tie(best->tmr, best->tokens, best->index)) best = &c;
  }
  if (!best) throw ValidationError("every overgenerate candidate was empty");
  return static_cast<std::size_t>(best - candidates.data());
}

OvergenerateResult generate_overgenerate(const ChatContext& context, const LanguageModel& lm,
                                         const RerankConfig& config) {
  config.validate();
  require_student_turn(context);
  const std::uint64_t base = context.generation.seed.value_or(0);
  OvergenerateResult result;
  for (std::size_t i = 0; i < config.n_candidates; ++i) {
    ChatContext c = context;
    c.generation.seed = derive_seed(base, {0x6f76657267656eULL, i});
    ScoredCandidate sc;
    sc.index = i;
    sc.text = lm.complete(c);
    const auto toks = config.tokenizer->tokenize(sc.text);
    sc.tokens = toks.size();
    sc.tmr = token_miss_rate(toks, *config.lexicon, config.user_level).tmr;
    result.candidates.push_back(std::move(sc));
  }
  const std::size_t pos = select_candidate(result.candidates);
  result.chosen_index = result.candidates[pos].index;
  result.chosen = result.candidates[pos].text;
  return result;
}

NextTokenDistribution fudge_step(const NextTokenDistribution& base, const Predictor& predictor,
                                 const Predictor::PrefixState& state, const FudgeConfig& config,
                                 std::optional<TokenId> end_token) {
  config.validate();
  NextTokenDistribution x = base.candidates.size() > config.top_k ? truncate(base, config.top_k) : base;
  if (x.candidates.empty()) throw ValidationError("FUDGE needs at least one candidate");
  if (!x.renormalized) x = renormalize(std::move(x));

  std::vector<std::string> texts;
  texts.reserve(x.candidates.size());
  for (const auto& c : x.candidates) texts.push_back(c.text);
  const Eigen::VectorXd a = predictor.extension_log_probs(state, texts, config.target_level);
  // Ending the utterance adds no token: score the prefix as it stands.
  const double a_end = predictor.predict(state).log_prob(config.target_level);

  const double lam = config.lambda;
  NextTokenDistribution y = x;
  for (std::size_t i = 0; i < y.candidates.size(); ++i) {
    auto& c = y.candidates[i];
    const double ai = end_token && c.id == *end_token ? a_end : a(static_cast<Eigen::Index>(i));
    c.log_prob = lam * ai + (1.0 - lam) * c.log_prob;
  }
  y.sort();
  y.k = x.k;
  return renormalize(std::move(y));
}

NextTokenDistribution fudge_step(const NextTokenDistribution& base, const Predictor& predictor,
                                 std::span<const std::string> prefix, const FudgeConfig& config) {
  Predictor::PrefixState state = predictor.empty_state();
  for (const auto& t : prefix) predictor.extend(state, t);
  return fudge_step(base, predictor, state, config);
}

DecodeResult generate_fudge(const ChatContext& context, const LanguageModel& lm, const Predictor& predictor,
                            const FudgeConfig& config, const DistributionObserver& observer) {
  config.validate();
  if (!lm.supports_distribution()) {
    throw CapabilityError("FUDGE needs next-token distributions, which provider '" + lm.name() +
                          "' does not expose; use baseline, detailed or overgenerate");
  }
  const auto end = lm.end_token();
  Predictor::PrefixState state = predictor.empty_state();
  std::size_t consumed = 0;
  Reweighter reweight = [&](const NextTokenDistribution& dist, std::span<const TokenId> prefix) {
    for (; consumed < prefix.size(); ++consumed) {
      const TokenId id = prefix[consumed];
      predictor.extend(state, lm.detokenize(std::span<const TokenId>(&id, 1)));
    }
    return fudge_step(dist, predictor, state, config, end);
  };
  return decode(lm, context, config.top_k, reweight, observer);
}

// ---- Tutors -----------------------------------------------------------------

namespace {

class PromptTutor final : public Tutor {
 public:
  PromptTutor(MethodSpec method, std::string prompt, const LanguageModel& lm)
      : method_(method), prompt_(std::move(prompt)), lm_(lm) {}
  const std::string& system_prompt() const override { return prompt_; }
  TutorReply respond(const ChatContext& ctx) const override { return {generate_baseline(ctx, lm_), std::nullopt}; }
  MethodSpec method() const override { return method_; }

 private:
  MethodSpec method_;
  std::string prompt_;
  const LanguageModel& lm_;
};

class OvergenerateTutor final : public Tutor {
 public:
  OvergenerateTutor(std::string prompt, const LanguageModel& lm, RerankConfig cfg)
      : prompt_(std::move(prompt)), lm_(lm), cfg_(cfg) {}
  const std::string& system_prompt() const override { return prompt_; }
  TutorReply respond(const ChatContext& ctx) const override {
    auto r = generate_overgenerate(ctx, lm_, cfg_);
    std::string text = r.chosen;
    return {std::move(text), std::move(r)};
  }
  MethodSpec method() const override { return {MethodKind::overgenerate, 0.8}; }

 private:
  std::string prompt_;
  const LanguageModel& lm_;
  RerankConfig cfg_;
};

class FudgeTutor final : public Tutor {
 public:
  FudgeTutor(std::string prompt, const LanguageModel& lm, const Predictor& predictor, FudgeConfig cfg)
      : prompt_(std::move(prompt)), lm_(lm), predictor_(predictor), cfg_(cfg) {}
  const std::string& system_prompt() const override { return prompt_; }
  TutorReply respond(const ChatContext& ctx) const override {
    require_student_turn(ctx);
    return {generate_fudge(ctx, lm_, predictor_, cfg_).text, std::nullopt};
  }
  MethodSpec method() const override { return {MethodKind::fudge, cfg_.lambda}; }

 private:
  std::string prompt_;
  const LanguageModel& lm_;
  const Predictor& predictor_;
  FudgeConfig cfg_;
};

}  // namespace

std::unique_ptr<Tutor> make_tutor(const MethodSpec& method, Level user_level, const TutorResources& res,
                                  std::uint64_t seed) {
  if (!res.lm) throw CapabilityError("no language model configured for the tutor");
  const std::string baseline_prompt =
      build_prompt(make_prompt_spec(PromptRole::tutor_baseline, user_level, {}, std::nullopt, res.language));
  switch (method.kind) {
    case MethodKind::baseline:
      return std::make_unique<PromptTutor>(method, baseline_prompt, *res.lm);
    case MethodKind::detailed: {
      if (!res.heuristic_lexicon) throw CapabilityError("the detailed prompt needs a heuristic lexicon");
      auto known = sample_known_expressions(*res.heuristic_lexicon, user_level, res.known_expressions,
                                            derive_seed(seed, {0x6b6e6f776eULL}));
      if (known.empty()) {
        throw CapabilityError("heuristic lexicon has no " + user_level.label() + " entries for the detailed prompt");
      }
      auto prompt = build_prompt(
          make_prompt_spec(PromptRole::tutor_detailed, user_level, std::move(known), std::nullopt, res.language));
      return std::make_unique<PromptTutor>(method, std::move(prompt), *res.lm);
    }
    case MethodKind::overgenerate: {
      RerankConfig cfg;
      cfg.n_candidates = res.n_candidates;
      cfg.lexicon = res.heuristic_lexicon;
      cfg.user_level = user_level;
      cfg.tokenizer = res.tokenizer;
      cfg.validate();
      return std::make_unique<OvergenerateTutor>(baseline_prompt, *res.lm, cfg);
    }
    case MethodKind::fudge: {
      if (!res.predictor) throw CapabilityError("FUDGE needs a trained difficulty predictor");
      if (!res.lm->supports_distribution()) {
        throw CapabilityError("FUDGE needs next-token distributions, which provider '" + res.lm->name() +
                              "' does not expose; use baseline, detailed or overgenerate");
      }
      FudgeConfig cfg;
      cfg.lambda = method.lambda;
      cfg.top_k = res.fudge_top_k;
      cfg.target_level = user_level;
      cfg.validate();
      return std::make_unique<FudgeTutor>(baseline_prompt, *res.lm, *res.predictor, cfg);
    }
  }
  throw ValidationError("unknown method");
}

}  // namespace gradechat

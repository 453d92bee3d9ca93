#include "gradechat/toy_world.hpp"

#include <sstream>

#include "gradechat/errors.hpp"
#include "gradechat/rng.hpp"

namespace gradechat {

const std::array<std::vector<std::string>, Level::kCount>& toy_content_words() {
  // Two-kanji nouns only: no word is a prefix of another, so longest-match
  // segmentation of the joined text recovers the tokens exactly.
  static const std::array<std::vector<std::string>, Level::kCount> words = {{
      {"学校", "先生", "友達", "電車", "天気", "映画", "音楽", "料理", "部屋", "毎日", "写真", "時間"},
      {"会議", "旅行", "説明", "準備", "経験", "趣味", "住所", "予定", "約束", "文化", "季節", "交通"},
      {"環境", "状況", "判断", "影響", "努力", "記録", "感情", "制度", "目標", "材料", "原因", "結果"},
      {"傾向", "対策", "需要", "効率", "規模", "分析", "推測", "妥協", "概念", "貢献", "維持", "措置"},
      {"懸念", "是正", "顕著", "逸脱", "斡旋", "払拭", "遵守", "脆弱", "均衡", "趨勢", "齟齬", "踏襲"},
  }};
  return words;
}

const std::vector<std::string>& toy_function_words() {
  static const std::vector<std::string> words = {"は", "を", "に", "で", "が", "と", "も", "の", "です", "ね", "よ"};
  return words;
}

namespace {

// "C" marks a content slot.
const std::vector<std::vector<std::string>>& templates() {
  static const std::vector<std::vector<std::string>> t = {
      {"C", "は", "C", "です", "。"},
      {"C", "で", "C", "を", "C", "ね", "。"},
      {"C", "と", "C", "が", "C", "です", "よ", "。"},
      {"C", "の", "C", "に", "C", "も", "C", "です", "。"},
      {"C", "も", "C", "です", "ね", "。"},
  };
  return t;
}

std::vector<Level> active_levels(const ToyWorldConfig& c) {
  if (c.two_register) return {Level::from_value(1), Level::from_value(5)};
  const auto all = Level::all();
  return {all.begin(), all.end()};
}

std::string pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.below(v.size())]; }

}  // namespace

std::vector<ToySentence> toy_corpus(const ToyWorldConfig& config) {
  if (config.own_level_share < 0.0 || config.own_level_share > 1.0) {
    throw ValidationError("own_level_share must be in [0, 1]");
  }
  if (config.sentences_per_level == 0) throw ValidationError("sentences_per_level must be positive");
  const auto& words = toy_content_words();
  Rng rng(derive_seed(config.seed, {0x746f79ULL}));
  std::vector<ToySentence> out;
  for (Level level : active_levels(config)) {
    for (std::size_t i = 0; i < config.sentences_per_level; ++i) {
      const auto& tpl = templates()[rng.below(templates().size())];
      ToySentence s;
      s.level = level;
      for (const auto& slot : tpl) {
        if (slot != "C") {
          s.tokens.push_back(slot);
          continue;
        }
        int from = level.index();
        // Harder text reuses easier words, never the reverse, so every word
        // first shows up at its own level. Two registers share only the easy
        // words; a middle word seen twice is noise no predictor can learn.
        if (from > 0 && rng.uniform() >= config.own_level_share) {
          from = config.two_register ? 0 : static_cast<int>(rng.below(from));
        }
        s.tokens.push_back(pick(rng, words[static_cast<std::size_t>(from)]));
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens, const std::string& joiner) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += joiner;
    out += tokens[i];
  }
  return out;
}

ToyWorld build_toy_world(const ToyWorldConfig& config) {
  ToyWorld w;
  w.config = config;
  w.corpus = toy_corpus(config);

  std::map<std::string, LexiconEntry> gold;
  for (Level level : Level::all()) {
    for (const auto& word : toy_content_words()[static_cast<std::size_t>(level.index())]) {
      gold[word] = LexiconEntry{word, level, std::nullopt};
    }
  }
  for (const auto& fw : toy_function_words()) gold[fw] = LexiconEntry{fw, Level::from_value(1), std::nullopt};
  std::ostringstream digest;
  digest << "toy-world:" << config.seed << ":" << config.two_register;
  w.gold = LevelLexicon(gold, Provenance::gold_deck, digest.str());

  std::vector<std::string> lemmas;
  for (const auto& [lemma, entry] : gold) lemmas.push_back(lemma);
  w.tokenizer = std::make_shared<BuiltinTokenizer>(lemmas);

  CorpusStatsBuilder stats(*w.tokenizer);
  std::vector<std::vector<std::string>> sentences;
  std::map<Level, std::vector<std::vector<std::string>>> by_level;
  for (const auto& s : w.corpus) {
    const auto u = w.tokenizer->tokenize(join_tokens(s.tokens));
    auto lemmas_seen = u.lemmas();
    std::vector<std::string> expected;
    for (const auto& t : s.tokens) {
      if (t != "。") expected.push_back(t);
    }
    if (lemmas_seen != expected) throw ValidationError("toy vocabulary does not segment unambiguously");
    stats.add_tokens(s.tokens, s.level);
    sentences.push_back(s.tokens);
    by_level[s.level].push_back(s.tokens);
  }
  w.heuristic = derive_heuristic_bins(stats.stats());

  NgramConfig ng;
  ng.order = config.ngram_order;
  ng.delta = config.ngram_delta;
  w.lm = std::make_shared<NgramModel>(NgramModel::train(sentences, ng));

  std::vector<PrefixExample> examples;
  for (const auto& [level, group] : balance_by_downsampling(by_level, config.predictor.seed)) {
    for (const auto& tokens : group) {
      auto ex = expand_prefixes(tokens, level);
      examples.insert(examples.end(), ex.begin(), ex.end());
    }
  }
  w.predictor = std::make_shared<Predictor>(train_predictor(examples, config.predictor));
  return w;
}

}  // namespace gradechat

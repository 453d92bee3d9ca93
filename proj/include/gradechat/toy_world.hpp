#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "gradechat/classifier.hpp"
#include "gradechat/lexicon.hpp"
#include "gradechat/ngram.hpp"
#include "gradechat/tokenizer.hpp"

namespace gradechat {

// A small, fully synthetic "register" world: per-level content words, shared
// function words, and sentences whose level is determined by the vocabulary
// they draw from. Used for the offline demo suite and for tests.

struct ToyWorldConfig {
  std::uint64_t seed = 0;
  std::size_t sentences_per_level = 200;
  // Only N5 and N1 sentences (easy vs hard register).
  bool two_register = false;
  // Share of content words drawn from the sentence's own level.
  double own_level_share = 0.7;
  int ngram_order = 2;
  double ngram_delta = 0.1;
  TrainingConfig predictor{.epochs = 3,
                           .batch_size = 16,
                           .learning_rate = 1e-2,
                           .embedding_dim = 16};
};

struct ToySentence {
  std::vector<std::string> tokens;  // includes final 。
  Level level;
};

const std::array<std::vector<std::string>, Level::kCount>& toy_content_words();
const std::vector<std::string>& toy_function_words();

std::vector<ToySentence> toy_corpus(const ToyWorldConfig& config);
std::string join_tokens(const std::vector<std::string>& tokens, const std::string& joiner = "");

struct ToyWorld {
  ToyWorldConfig config;
  std::vector<ToySentence> corpus;
  LevelLexicon gold;       // content words at their level, function words at N5
  LevelLexicon heuristic;  // binned from corpus statistics
  std::shared_ptr<BuiltinTokenizer> tokenizer;
  std::shared_ptr<NgramModel> lm;
  std::shared_ptr<Predictor> predictor;
};

ToyWorld build_toy_world(const ToyWorldConfig& config = {});

}  // namespace gradechat

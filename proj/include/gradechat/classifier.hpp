#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "gradechat/errors.hpp"
#include "gradechat/level.hpp"
#include "gradechat/rng.hpp"

namespace gradechat {

class Tokenizer;

using LevelVector = Eigen::Matrix<double, Level::kCount, 1>;

// Prefix of a sentence labeled with the level of the full sentence.
struct PrefixExample {
  std::vector<std::string> prefix;
  Level label;
};

struct DifficultyDistribution {
  LevelVector log_probs;

  LevelVector probs() const { return log_probs.array().exp().matrix(); }
  Level argmax() const;
  // Σ ℓ · P(ℓ), in [1, 5].
  double expected_level() const;
  double log_prob(Level level) const { return log_probs(level.index()); }
};

// Numerically stable log-softmax over the level axis.
LevelVector log_softmax(const LevelVector& logits);

std::vector<PrefixExample> expand_prefixes(std::span<const std::string> sentence, Level label);

// Downsample every group to the size of the smallest one, uniformly without
// replacement. Survivors keep their original relative order.
template <class T>
std::map<Level, std::vector<T>> balance_by_downsampling(const std::map<Level, std::vector<T>>& groups,
                                                        std::uint64_t seed) {
  if (groups.empty()) throw ValidationError("no level groups to balance");
  std::size_t target = static_cast<std::size_t>(-1);
  for (const auto& [level, items] : groups) {
    if (items.empty()) throw ValidationError("level " + level.label() + " has no examples");
    target = std::min(target, items.size());
  }
  std::map<Level, std::vector<T>> out;
  for (const auto& [level, items] : groups) {
    Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(level.value())}));
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Partial Fisher-Yates: the first `target` slots become the sample.
    for (std::size_t i = 0; i < target; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
      std::swap(order[i], order[j]);
    }
    order.resize(target);
    std::sort(order.begin(), order.end());
    auto& dst = out[level];
    dst.reserve(target);
    for (auto idx : order) dst.push_back(items[idx]);
  }
  return out;
}

// How token embeddings are combined into the prefix summary h. Mean divides
// by the prefix length, unknown tokens included. Max takes the per-dimension
// maximum over known tokens, so one hard word still dominates after a long
// easy prefix; sum and mean saturate there.
enum class Pooling { sum, mean, max };
std::string to_string(Pooling p);
Pooling pooling_from_string(std::string_view s);

struct TrainingConfig {
  int epochs = 3;
  int batch_size = 16;
  double learning_rate = 5e-5;
  int embedding_dim = 32;
  double init_scale = 0.1;
  Pooling pooling = Pooling::max;
  // AdamW moments and decoupled weight decay.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  std::string digest() const;
  void validate() const;
};

// Bag-of-embeddings prefix classifier:
//   h = pooled embedding columns of the prefix tokens (unknown tokens skipped)
//   P(level | prefix) = softmax(W h + b)
struct PredictorParams {
  Eigen::MatrixXd embedding;                                // dim × |V|
  Eigen::Matrix<double, Level::kCount, Eigen::Dynamic> weights;  // 5 × dim
  LevelVector bias;
  Pooling pooling = Pooling::max;  // not part of flatten()

  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  Eigen::Index size() const { return embedding.size() + weights.size() + bias.size(); }
};

// Examples with tokens mapped to vocabulary indices (-1 = unknown).
struct EncodedExample {
  std::vector<int> ids;
  int label_index;
};

// Σ_x −log P(label | x) over `examples`; fills `gradient` (same shapes as
// params) when non-null.
double cross_entropy(const PredictorParams& params, std::span<const EncodedExample> examples,
                     PredictorParams* gradient);

class Predictor {
 public:
  // Running prefix summary so that scoring k one-token extensions costs O(k).
  struct PrefixState {
    Eigen::VectorXd pooled;  // running sum, or running max
    std::size_t count = 0;
    std::size_t known = 0;
  };

  Predictor() = default;
  Predictor(std::vector<std::string> vocabulary, PredictorParams params, std::string config_digest);

  PrefixState empty_state() const;
  void extend(PrefixState& state, std::string_view token) const;
  // Distribution for the prefix summarized by `state` (bias only when empty).
  DifficultyDistribution predict(const PrefixState& state) const;
  // log P(target | prefix + c) for each candidate token c.
  Eigen::VectorXd extension_log_probs(const PrefixState& state,
                                      std::span<const std::string> candidates, Level target) const;

  // Throws ValidationError on an empty prefix.
  DifficultyDistribution predict_prefix(std::span<const std::string> prefix) const;

  int index_of(std::string_view token) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const PredictorParams& params() const { return params_; }
  const std::string& config_digest() const { return config_digest_; }
  int embedding_dim() const { return static_cast<int>(params_.embedding.rows()); }

  std::string to_json() const;
  static Predictor from_json(std::string_view json);
  void save(const std::string& path) const;
  static Predictor load(const std::string& path);

 private:
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, int> index_;
  PredictorParams params_;
  std::string config_digest_;
};

struct TrainingReport {
  std::vector<double> epoch_loss;  // mean loss per example, measured after each epoch
};

// Mini-batch AdamW on the cross-entropy loss. Needs at least two distinct labels.
Predictor train_predictor(std::span<const PrefixExample> examples, const TrainingConfig& config,
                          TrainingReport* report = nullptr);

enum class ScoreMode { expectation, argmax };
std::string to_string(ScoreMode m);

// Whole-utterance difficulty s(x) in [1, 5].
double score_tokens(const Predictor& predictor, std::span<const std::string> tokens,
                    ScoreMode mode = ScoreMode::expectation);
double score_utterance(const Predictor& predictor, const Tokenizer& tokenizer, std::string_view text,
                       ScoreMode mode = ScoreMode::expectation);

}  // namespace gradechat

#include "gradechat/classifier.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gradechat/text.hpp"
#include "gradechat/tokenizer.hpp"

namespace gradechat {
using nlohmann::json;

Level DifficultyDistribution::argmax() const {
  Eigen::Index best = 0;
  log_probs.maxCoeff(&best);
  return Level::from_value(static_cast<int>(best) + 1);
}

double DifficultyDistribution::expected_level() const {
  const LevelVector p = probs();
  double e = 0.0;
  for (int i = 0; i < Level::kCount; ++i) e += (i + 1) * p(i);
  return e;
}

LevelVector log_softmax(const LevelVector& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

std::vector<PrefixExample> expand_prefixes(std::span<const std::string> sentence, Level label) {
  if (sentence.empty()) throw ValidationError("cannot expand an empty sentence");
  std::vector<PrefixExample> out;
  out.reserve(sentence.size());
  for (std::size_t i = 1; i <= sentence.size(); ++i) {
    out.push_back(PrefixExample{std::vector<std::string>(sentence.begin(), sentence.begin() + static_cast<std::ptrdiff_t>(i)), label});
  }
  return out;
}

std::string TrainingConfig::digest() const {
  std::ostringstream os;
  os.precision(17);
  os << epochs << '|' << batch_size << '|' << learning_rate << '|' << embedding_dim << '|' << init_scale
     << '|' << beta1 << '|' << beta2 << '|' << epsilon << '|' << weight_decay << '|' << seed << '|'
     << to_string(pooling);
  return text::Digest().update(os.str()).hex();
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw ValidationError("epochs must be at least 1");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (embedding_dim < 1) throw ValidationError("embedding_dim must be at least 1");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
}

Eigen::VectorXd PredictorParams::flatten() const {
  Eigen::VectorXd v(size());
  v << Eigen::Map<const Eigen::VectorXd>(embedding.data(), embedding.size()),
      Eigen::Map<const Eigen::VectorXd>(weights.data(), weights.size()), bias;
  return v;
}

void PredictorParams::assign(const Eigen::VectorXd& flat) {
  if (flat.size() != size()) throw ValidationError("parameter vector has the wrong size");
  Eigen::Index off = 0;
  embedding = Eigen::Map<const Eigen::MatrixXd>(flat.data(), embedding.rows(), embedding.cols());
  off += embedding.size();
  weights = Eigen::Map<const Eigen::Matrix<double, Level::kCount, Eigen::Dynamic>>(flat.data() + off, Level::kCount,
                                                                                  weights.cols());
  off += weights.size();
  bias = flat.segment<Level::kCount>(off);
}

namespace {

PredictorParams zero_like(const PredictorParams& p) {
  PredictorParams g;
  g.embedding = Eigen::MatrixXd::Zero(p.embedding.rows(), p.embedding.cols());
  g.weights = Eigen::Matrix<double, Level::kCount, Eigen::Dynamic>::Zero(Level::kCount, p.weights.cols());
  g.bias = LevelVector::Zero();
  return g;
}

}  // namespace

std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::sum: return "sum";
    case Pooling::mean: return "mean";
    case Pooling::max: return "max";
  }
  return "?";
}

Pooling pooling_from_string(std::string_view s) {
  if (s == "sum") return Pooling::sum;
  if (s == "mean") return Pooling::mean;
  if (s == "max") return Pooling::max;
  throw ValidationError("unknown pooling '" + std::string(s) + "' (sum, mean, max)");
}

namespace {
double pool_scale(Pooling p, std::size_t n) { return p == Pooling::mean ? 1.0 / static_cast<double>(n) : 1.0; }

// Folds one embedding into the pooled vector; `first` when nothing known yet.
void pool_into(Eigen::VectorXd& pooled, const Eigen::VectorXd& e, Pooling p, bool first) {
  if (p != Pooling::max) {
    pooled += e;
  } else if (first) {
    pooled = e;
  } else {
    pooled = pooled.cwiseMax(e);
  }
}
}  // namespace

double cross_entropy(const PredictorParams& params, std::span<const EncodedExample> examples,
                     PredictorParams* gradient) {
  if (gradient) *gradient = zero_like(params);
  const Eigen::Index dim = params.embedding.rows();
  const bool use_max = params.pooling == Pooling::max;
  double loss = 0.0;
  Eigen::VectorXd h(dim);
  std::vector<int> winner(static_cast<std::size_t>(dim));
  for (const auto& ex : examples) {
    if (ex.ids.empty()) throw ValidationError("empty prefix in training data");
    h.setZero();
    std::fill(winner.begin(), winner.end(), -1);
    for (int id : ex.ids) {
      if (id < 0) continue;
      if (!use_max) {
        h += params.embedding.col(id);
        continue;
      }
      for (Eigen::Index d = 0; d < dim; ++d) {
        auto& w = winner[static_cast<std::size_t>(d)];
        if (w < 0 || params.embedding(d, id) > h(d)) {
          h(d) = params.embedding(d, id);
          w = id;
        }
      }
    }
    const double scale = pool_scale(params.pooling, ex.ids.size());
    h *= scale;
    const LevelVector lp = log_softmax(params.weights * h + params.bias);
    loss -= lp(ex.label_index);
    if (!gradient) continue;
    LevelVector dz = lp.array().exp().matrix();
    dz(ex.label_index) -= 1.0;
    gradient->weights.noalias() += dz * h.transpose();
    gradient->bias += dz;
    const Eigen::VectorXd dh = params.weights.transpose() * dz * scale;
    if (use_max) {
      for (Eigen::Index d = 0; d < dim; ++d) {
        const int w = winner[static_cast<std::size_t>(d)];
        if (w >= 0) gradient->embedding(d, w) += dh(d);
      }
      continue;
    }
    for (int id : ex.ids) {
      if (id >= 0) gradient->embedding.col(id) += dh;
    }
  }
  return loss;
}

// ---- Predictor --------------------------------------------------------------

Predictor::Predictor(std::vector<std::string> vocabulary, PredictorParams params, std::string config_digest)
    : vocabulary_(std::move(vocabulary)), params_(std::move(params)), config_digest_(std::move(config_digest)) {
  if (params_.embedding.cols() != static_cast<Eigen::Index>(vocabulary_.size()) ||
      params_.weights.cols() != params_.embedding.rows()) {
    throw ValidationError("predictor parameter shapes do not match the vocabulary");
  }
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_.emplace(vocabulary_[i], static_cast<int>(i));
}

int Predictor::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> Predictor::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(index_of(t));
  return ids;
}

Predictor::PrefixState Predictor::empty_state() const {
  return PrefixState{Eigen::VectorXd::Zero(params_.embedding.rows()), 0, 0};
}

void Predictor::extend(PrefixState& state, std::string_view token) const {
  const int id = index_of(token);
  if (id >= 0) {
    pool_into(state.pooled, params_.embedding.col(id), params_.pooling, state.known == 0);
    ++state.known;
  }
  ++state.count;
}

DifficultyDistribution Predictor::predict(const PrefixState& state) const {
  if (state.count == 0) return DifficultyDistribution{log_softmax(params_.bias)};
  const Eigen::VectorXd h = state.pooled * pool_scale(params_.pooling, state.count);
  return DifficultyDistribution{log_softmax(params_.weights * h + params_.bias)};
}

Eigen::VectorXd Predictor::extension_log_probs(const PrefixState& state, std::span<const std::string> candidates,
                                               Level target) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(candidates.size()));
  const double scale = pool_scale(params_.pooling, state.count + 1);
  // Sum and mean: W (sum + e_c) = W sum + W e_c, and W sum is shared.
  const LevelVector base = params_.weights * state.pooled;
  Eigen::VectorXd h;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int id = index_of(candidates[i]);
    LevelVector z;
    if (params_.pooling == Pooling::max) {
      h = state.pooled;
      if (id >= 0) pool_into(h, params_.embedding.col(id), Pooling::max, state.known == 0);
      z = params_.weights * h;
    } else {
      z = base;
      if (id >= 0) z.noalias() += params_.weights * params_.embedding.col(id);
    }
    z = z * scale + params_.bias;
    out(static_cast<Eigen::Index>(i)) = log_softmax(z)(target.index());
  }
  return out;
}

DifficultyDistribution Predictor::predict_prefix(std::span<const std::string> prefix) const {
  if (prefix.empty()) throw ValidationError("prefix must contain at least one token");
  PrefixState s = empty_state();
  for (const auto& t : prefix) extend(s, t);
  return predict(s);
}

std::string Predictor::to_json() const {
  auto vec = [](const auto& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
  };
  json j = {{"format", "gradechat-predictor"},
            {"version", 1},
            {"config_digest", config_digest_},
            {"embedding_dim", params_.embedding.rows()},
            {"pooling", to_string(params_.pooling)},
            {"vocabulary", vocabulary_},
            {"embedding", vec(params_.embedding)},
            {"weights", vec(params_.weights)},
            {"bias", vec(params_.bias)}};
  return j.dump() + "\n";
}

Predictor Predictor::from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "gradechat-predictor") throw ValidationError("not a predictor file");
    if (j.at("version") != 1) throw ValidationError("unsupported predictor version");
    auto vocab = j.at("vocabulary").get<std::vector<std::string>>();
    const Eigen::Index dim = j.at("embedding_dim").get<Eigen::Index>();
    const auto e = j.at("embedding").get<std::vector<double>>();
    const auto w = j.at("weights").get<std::vector<double>>();
    const auto b = j.at("bias").get<std::vector<double>>();
    const auto v = static_cast<Eigen::Index>(vocab.size());
    if (static_cast<Eigen::Index>(e.size()) != dim * v || static_cast<Eigen::Index>(w.size()) != dim * Level::kCount ||
        b.size() != Level::kCount) {
      throw ValidationError("predictor file has inconsistent shapes");
    }
    PredictorParams p;
    p.embedding = Eigen::Map<const Eigen::MatrixXd>(e.data(), dim, v);
    p.weights = Eigen::Map<const Eigen::Matrix<double, Level::kCount, Eigen::Dynamic>>(w.data(), Level::kCount, dim);
    p.bias = Eigen::Map<const LevelVector>(b.data());
    p.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    return Predictor(std::move(vocab), std::move(p), j.at("config_digest").get<std::string>());
  } catch (const json::exception& ex) {
    throw ValidationError(std::string("malformed predictor file: ") + ex.what());
  }
}

void Predictor::save(const std::string& path) const { text::write_file(path, to_json()); }
Predictor Predictor::load(const std::string& path) { return from_json(text::read_file(path)); }

// ---- Training ---------------------------------------------------------------

Predictor train_predictor(std::span<const PrefixExample> examples, const TrainingConfig& config,
                          TrainingReport* report) {
  config.validate();
  if (examples.empty()) throw ValidationError("no training examples");
  std::set<int> labels;
  std::set<std::string> vocab_set;
  for (const auto& ex : examples) {
    if (ex.prefix.empty()) throw ValidationError("training prefix must contain at least one token");
    labels.insert(ex.label.index());
    vocab_set.insert(ex.prefix.begin(), ex.prefix.end());
  }
  if (labels.size() < 2) throw ValidationError("training needs at least two distinct levels");

  std::vector<std::string> vocab(vocab_set.begin(), vocab_set.end());
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));
  std::vector<EncodedExample> encoded;
  encoded.reserve(examples.size());
  for (const auto& ex : examples) {
    EncodedExample e{{}, ex.label.index()};
    for (const auto& t : ex.prefix) e.ids.push_back(index.at(t));
    encoded.push_back(std::move(e));
  }

  const Eigen::Index dim = config.embedding_dim;
  const auto v = static_cast<Eigen::Index>(vocab.size());
  Rng rng(derive_seed(config.seed, {0x7072656400ULL}));
  PredictorParams params;
  params.embedding.resize(dim, v);
  for (Eigen::Index c = 0; c < v; ++c)
    for (Eigen::Index r = 0; r < dim; ++r) params.embedding(r, c) = rng.normal() * config.init_scale;
  params.weights.resize(Level::kCount, dim);
  for (Eigen::Index c = 0; c < dim; ++c)
    for (Eigen::Index r = 0; r < Level::kCount; ++r) params.weights(r, c) = rng.normal() * config.init_scale;
  params.bias.setZero();
  params.pooling = config.pooling;

  Eigen::VectorXd theta = params.flatten();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(theta.size());
  std::vector<std::size_t> order(encoded.size());
  std::vector<EncodedExample> batch;
  std::uint64_t step = 0;
  PredictorParams grad;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(encoded[order[i]]);
      cross_entropy(params, batch, &grad);
      const Eigen::VectorXd g = grad.flatten() / static_cast<double>(batch.size());
      ++step;
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      s = config.beta2 * s + (1.0 - config.beta2) * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      theta *= 1.0 - config.learning_rate * config.weight_decay;
      theta.array() -= config.learning_rate * (m.array() / bc1) / ((s.array() / bc2).sqrt() + config.epsilon);
      params.assign(theta);
    }
    if (report) {
      report->epoch_loss.push_back(cross_entropy(params, encoded, nullptr) / static_cast<double>(encoded.size()));
    }
  }
  return Predictor(std::move(vocab), std::move(params), config.digest());
}

std::string to_string(ScoreMode m) { return m == ScoreMode::expectation ? "expectation" : "argmax"; }

double score_tokens(const Predictor& predictor, std::span<const std::string> tokens, ScoreMode mode) {
  if (tokens.empty()) throw ValidationError("cannot score an utterance with no tokens");
  const auto d = predictor.predict_prefix(tokens);
  return mode == ScoreMode::expectation ? d.expected_level() : static_cast<double>(d.argmax().value());
}

double score_utterance(const Predictor& predictor, const Tokenizer& tokenizer, std::string_view text,
                       ScoreMode mode) {
  const auto lemmas = tokenizer.tokenize(text).lemmas();
  return score_tokens(predictor, lemmas, mode);
}

}  // namespace gradechat

#include "gradechat/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "gradechat/errors.hpp"
#include "gradechat/text.hpp"

namespace gradechat {

namespace {
// History slot for a token the model has never seen.
constexpr TokenId kUnknown = -2;
}  // namespace

void NgramModel::build_index() {
  index_.clear();
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) index_.emplace(vocabulary_[i], static_cast<TokenId>(i));
}

NgramModel NgramModel::train(std::span<const std::vector<std::string>> sentences, const NgramConfig& config) {
  if (config.order < 1) throw ValidationError("n-gram order must be at least 1");
  if (!(config.delta >= 0.0)) throw ValidationError("smoothing delta must be non-negative");
  std::set<std::string> vocab;
  for (const auto& s : sentences) vocab.insert(s.begin(), s.end());
  if (vocab.empty()) throw ValidationError("cannot train an n-gram model on an empty corpus");
  if (config.mark_boundaries) vocab.insert(kEnd);

  NgramModel m;
  m.config_ = config;
  m.vocabulary_.assign(vocab.begin(), vocab.end());
  m.build_index();

  const auto h = static_cast<std::size_t>(config.order - 1);
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    std::vector<TokenId> seq;
    for (const auto& t : s) seq.push_back(m.index_.at(t));
    if (config.mark_boundaries) seq.push_back(m.index_.at(kEnd));
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (!config.mark_boundaries && i < h) continue;
      auto key = m.history_key(std::span<const TokenId>(seq).subspan(0, i));
      auto& cc = m.counts_[key];
      ++cc.total;
      ++cc.next[seq[i]];
    }
  }
  return m;
}

std::vector<TokenId> NgramModel::history_key(std::span<const TokenId> prefix) const {
  const auto h = static_cast<std::size_t>(config_.order - 1);
  std::vector<TokenId> key(h, kBegin);
  const std::size_t take = std::min(h, prefix.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            key.end() - static_cast<std::ptrdiff_t>(take));
  return key;
}

double NgramModel::probability(std::span<const TokenId> prefix, TokenId next) const {
  const double v = static_cast<double>(vocabulary_.size());
  if (next < 0 || static_cast<std::size_t>(next) >= vocabulary_.size()) return 0.0;
  auto it = counts_.find(history_key(prefix));
  const double ch = it == counts_.end() ? 0.0 : static_cast<double>(it->second.total);
  double chw = 0.0;
  if (it != counts_.end()) {
    auto jt = it->second.next.find(next);
    if (jt != it->second.next.end()) chw = static_cast<double>(jt->second);
  }
  const double denom = ch + config_.delta * v;
  if (denom == 0.0) return 1.0 / v;  // unseen context under maximum likelihood
  return (chw + config_.delta) / denom;
}

NextTokenDistribution NgramModel::next_distribution(const ChatContext&, std::span<const TokenId> prefix,
                                                    std::size_t k) const {
  if (k < 1) throw ValidationError("k must be at least 1");
  NextTokenDistribution d;
  d.k = k;
  d.candidates.reserve(vocabulary_.size());
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    const double p = probability(prefix, id);
    if (p <= 0.0) continue;
    d.candidates.push_back(Candidate{id, vocabulary_[i], std::log(p)});
  }
  d.sort();
  return truncate(std::move(d), k);
}

std::string NgramModel::complete(const ChatContext& context) const {
  return decode(*this, context, vocabulary_.size()).text;
}

std::optional<TokenId> NgramModel::end_token() const {
  if (!config_.mark_boundaries) return std::nullopt;
  return index_.at(kEnd);
}

std::string NgramModel::detokenize(std::span<const TokenId> tokens) const {
  std::string out;
  bool first = true;
  for (TokenId t : tokens) {
    const auto& s = token_text(t);
    if (s == kEnd) continue;
    if (!first) out += config_.joiner;
    out += s;
    first = false;
  }
  return out;
}

double NgramModel::token_log_prob(std::span<const std::string> history, std::string_view next) const {
  const auto nid = id_of(next);
  if (!nid) return -std::numeric_limits<double>::infinity();
  std::vector<TokenId> prefix;
  for (const auto& h : history) prefix.push_back(id_of(h).value_or(kUnknown));
  const double p = probability(prefix, *nid);
  return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

std::optional<TokenId> NgramModel::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t NgramModel::count(std::span<const TokenId> history, TokenId next) const {
  auto it = counts_.find(history_key(history));
  if (it == counts_.end()) return 0;
  auto jt = it->second.next.find(next);
  return jt == it->second.next.end() ? 0 : jt->second;
}

std::uint64_t NgramModel::context_count(std::span<const TokenId> history) const {
  auto it = counts_.find(history_key(history));
  return it == counts_.end() ? 0 : it->second.total;
}

std::string NgramModel::to_json() const {
  using nlohmann::json;
  json counts = json::array();
  for (const auto& [key, cc] : counts_) {
    json next = json::array();
    for (const auto& [id, c] : cc.next) next.push_back({id, c});
    counts.push_back({{"history", key}, {"next", next}});
  }
  json j = {{"format", "gradechat-ngram"},
            {"version", 1},
            {"order", config_.order},
            {"delta", config_.delta},
            {"mark_boundaries", config_.mark_boundaries},
            {"joiner", config_.joiner},
            {"vocabulary", vocabulary_},
            {"counts", counts}};
  return j.dump() + "\n";
}

NgramModel NgramModel::from_json(std::string_view text) {
  using nlohmann::json;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "gradechat-ngram") throw ValidationError("not an n-gram model file");
    if (j.at("version") != 1) throw ValidationError("unsupported n-gram model version");
    NgramModel m;
    m.config_.order = j.at("order");
    m.config_.delta = j.at("delta");
    m.config_.mark_boundaries = j.at("mark_boundaries");
    m.config_.joiner = j.at("joiner");
    m.vocabulary_ = j.at("vocabulary").get<std::vector<std::string>>();
    m.build_index();
    for (const auto& row : j.at("counts")) {
      auto key = row.at("history").get<std::vector<TokenId>>();
      auto& cc = m.counts_[key];
      for (const auto& pair : row.at("next")) {
        const TokenId id = pair.at(0);
        const std::uint64_t c = pair.at(1);
        cc.next[id] = c;
        cc.total += c;
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed n-gram model: ") + e.what());
  }
}

void NgramModel::save(const std::string& path) const { text::write_file(path, to_json()); }

NgramModel NgramModel::load(const std::string& path) { return from_json(text::read_file(path)); }

}  // namespace gradechat

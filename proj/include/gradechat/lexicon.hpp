#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradechat/level.hpp"

namespace gradechat {

class Tokenizer;

struct LexiconEntry {
  std::string lemma;  // NFKC, no tab/newline
  Level level;
  std::optional<std::string> meaning;

  bool operator==(const LexiconEntry&) const = default;
};

enum class Provenance { gold_deck, corpus_heuristic };
std::string to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

// Immutable lemma → level map. Each lemma lives at exactly one level.
class LevelLexicon {
 public:
  LevelLexicon() = default;
  LevelLexicon(std::map<std::string, LexiconEntry> entries, Provenance provenance,
               std::string source_digest);

  // Exact match after NFKC; absent lemmas are unbinned (nullopt).
  std::optional<Level> lookup(std::string_view lemma) const;
  const LexiconEntry* find(std::string_view lemma) const;

  const std::map<std::string, LexiconEntry>& entries() const { return entries_; }
  Provenance provenance() const { return provenance_; }
  const std::string& source_digest() const { return source_digest_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  // Lemmas at exactly `level`, sorted.
  std::vector<std::string> lemmas_at(Level level) const;

  bool operator==(const LevelLexicon&) const = default;

 private:
  std::map<std::string, LexiconEntry> entries_;
  Provenance provenance_ = Provenance::gold_deck;
  std::string source_digest_;
};

// ---- Gold flashcard decks -------------------------------------------------

struct DeckCard {
  std::string expression;
  std::optional<std::string> reading;
  std::string gloss;
};

struct Deck {
  Level level;
  std::vector<DeckCard> cards;
  std::string origin;  // file name or fixture tag, folded into the digest
};

// Result of normalizing one flashcard. `skip_reason` is set for malformed
// cards; the batch carries on without them.
struct DeckParse {
  std::vector<LexiconEntry> entries;
  std::optional<std::string> skip_reason;
};

DeckParse parse_deck_entry(std::string_view raw_expression,
                           std::optional<std::string_view> raw_reading, std::string_view gloss,
                           Level level = Level::from_value(1));

// Union of all decks; a lemma seen at several levels keeps the easiest one.
// Throws ValidationError("no vocabulary parsed") when nothing survives.
LevelLexicon build_gold_lexicon(std::span<const Deck> decks);

// Deck files: n5.json … n1.json ({expr: {"meaning": ..., "reading"?: ...}})
// or n5.tsv … (expression \t reading \t gloss). Level comes from the file name.
Deck load_deck_file(const std::string& path);
std::vector<Deck> load_deck_dir(const std::string& dir);
std::optional<Level> level_from_filename(std::string_view filename);

// ---- Corpus heuristics ------------------------------------------------------

struct CorpusLevelStats {
  std::map<std::string, std::array<std::uint64_t, Level::kCount>> counts;
  std::array<std::uint64_t, Level::kCount> total_tokens{};
  std::uint64_t grand_total = 0;

  std::uint64_t count(std::string_view lemma, Level level) const;
};

struct LeveledSentence {
  std::string text;
  Level level;
};

class CorpusStatsBuilder {
 public:
  explicit CorpusStatsBuilder(const Tokenizer& tokenizer) : tokenizer_(tokenizer) {}
  void add(std::string_view sentence, Level level);
  // Pre-tokenized variant; the script whitelist still applies.
  void add_tokens(std::span<const std::string> lemmas, Level level);
  const CorpusLevelStats& stats() const { return stats_; }
  CorpusLevelStats take() { return std::move(stats_); }

 private:
  const Tokenizer& tokenizer_;
  CorpusLevelStats stats_;
};

CorpusLevelStats accumulate_corpus_stats(std::span<const LeveledSentence> sentences,
                                         const Tokenizer& tokenizer);

struct HeuristicThresholds {
  double global_floor = 1e-6;
  double level_floor = 1e-6;
  double assign_threshold = 1e-6;
};

LevelLexicon derive_heuristic_bins(const CorpusLevelStats& stats,
                                   const HeuristicThresholds& thresholds = {});

// Corpus directory layout: n5.txt … n1.txt, one sentence per line.
std::vector<LeveledSentence> load_corpus_dir(const std::string& dir, bool require_all_levels);

// ---- Persistence ------------------------------------------------------------

// Per-level JSON, keys sorted, two-space indent, trailing newline.
std::string serialize_level(const LevelLexicon& lexicon, Level level);
std::string serialize_meta(const LevelLexicon& lexicon);
// Writes n5.json … n1.json and lexicon.meta.json into `dir`; returns written paths.
std::vector<std::string> save_lexicon(const LevelLexicon& lexicon, const std::string& dir);
LevelLexicon load_lexicon(const std::string& dir);

}  // namespace gradechat

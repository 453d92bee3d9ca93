#include "gradechat/lexicon.hpp"

#include <algorithm>
#include <filesystem>

#include <json.hpp>

#include "gradechat/errors.hpp"
#include "gradechat/text.hpp"
#include "gradechat/tokenizer.hpp"

namespace gradechat {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Provenance p) {
  return p == Provenance::gold_deck ? "gold_deck" : "corpus_heuristic";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "gold_deck") return Provenance::gold_deck;
  if (s == "corpus_heuristic") return Provenance::corpus_heuristic;
  throw ValidationError("unknown lexicon provenance '" + std::string(s) + "'");
}

LevelLexicon::LevelLexicon(std::map<std::string, LexiconEntry> entries, Provenance provenance,
                           std::string source_digest)
    : entries_(std::move(entries)), provenance_(provenance), source_digest_(std::move(source_digest)) {}

const LexiconEntry* LevelLexicon::find(std::string_view lemma) const {
  if (lemma.empty() || !text::is_valid_utf8(lemma)) return nullptr;
  auto it = entries_.find(text::nfkc(lemma));
  return it == entries_.end() ? nullptr : &it->second;
}

std::optional<Level> LevelLexicon::lookup(std::string_view lemma) const {
  if (const auto* e = find(lemma)) return e->level;
  return std::nullopt;
}

std::vector<std::string> LevelLexicon::lemmas_at(Level level) const {
  std::vector<std::string> out;
  for (const auto& [lemma, entry] : entries_) {
    if (entry.level == level) out.push_back(lemma);
  }
  return out;
}

// ---- Deck parsing -----------------------------------------------------------

namespace {

bool is_tilde_like(char32_t c) {
  return c == U'~' || c == U'〜' || c == U'〰' || c == U'∼' || c == U'～' ||
         c == U'⁓' || c == U'˜';
}

bool is_alternative_separator(char32_t c) {
  return c == U';' || c == U',' || c == U'、' || c == U'/';
}

// NFKC, Japanese parentheses to ASCII, tilde-like characters removed.
std::u32string normalize_field(std::string_view raw) {
  std::u32string out;
  for (char32_t c : text::decode_utf8(text::nfkc(raw))) {
    if (is_tilde_like(c)) continue;
    if (c == U'（') c = U'(';
    if (c == U'）') c = U')';
    out.push_back(c);
  }
  return out;
}

std::vector<std::u32string> split_alternatives(const std::u32string& s) {
  std::vector<std::u32string> parts(1);
  int depth = 0;
  for (char32_t c : s) {
    if (c == U'(') ++depth;
    if (c == U')') --depth;
    if (depth == 0 && is_alternative_separator(c)) {
      parts.emplace_back();
    } else {
      parts.back().push_back(c);
    }
  }
  return parts;
}

struct Expansion {
  std::string outside;
  std::string full;
  bool malformed = false;
};

// 話す(こと) → outside 話す, full 話すこと. Whitespace is dropped from both.
Expansion expand_parentheticals(const std::u32string& s) {
  Expansion e;
  std::u32string outside, full;
  bool open = false;
  for (char32_t c : s) {
    if (c == U'(') {
      if (open) {
        e.malformed = true;
        return e;
      }
      open = true;
      continue;
    }
    if (c == U')') {
      if (!open) {
        e.malformed = true;
        return e;
      }
      open = false;
      continue;
    }
    if (text::is_space(c) || c == U'\t' || c == U'\n' || c == U'\r') continue;
    full.push_back(c);
    if (!open) outside.push_back(c);
  }
  if (open) {
    e.malformed = true;
    return e;
  }
  e.outside = text::encode_utf8(outside);
  e.full = text::encode_utf8(full);
  return e;
}

void push_unique(std::vector<std::string>& v, const std::string& s) {
  if (!s.empty() && std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

// Expanded forms of a field; nullopt when any alternative is malformed.
std::optional<std::vector<std::string>> expand_field(std::string_view raw) {
  std::vector<std::string> forms;
  for (const auto& alt : split_alternatives(normalize_field(raw))) {
    const Expansion e = expand_parentheticals(alt);
    if (e.malformed) return std::nullopt;
    push_unique(forms, e.outside);
    push_unique(forms, e.full);
  }
  return forms;
}

bool too_short_reading(const std::string& form) {
  // Single kana such as の carry no information on their own.
  return text::length(form) <= 1;
}

}  // namespace

DeckParse parse_deck_entry(std::string_view raw_expression,
                           std::optional<std::string_view> raw_reading, std::string_view gloss,
                           Level level) {
  DeckParse result;
  if (!text::is_valid_utf8(raw_expression) || !text::is_valid_utf8(gloss) ||
      (raw_reading && !text::is_valid_utf8(*raw_reading))) {
    result.skip_reason = "invalid UTF-8";
    return result;
  }
  if (text::trim(raw_expression).empty()) {
    result.skip_reason = "missing expression";
    return result;
  }
  const std::string meaning = text::trim(gloss);
  if (meaning.empty()) {
    result.skip_reason = "missing meaning";
    return result;
  }

  auto forms = expand_field(raw_expression);
  if (!forms) {
    result.skip_reason = "unbalanced parentheses in expression";
    return result;
  }
  std::vector<std::string> lemmas = *forms;

  if (raw_reading && !text::trim(*raw_reading).empty()) {
    if (auto readings = expand_field(*raw_reading)) {
      for (const auto& r : *readings) {
        if (too_short_reading(r)) continue;
        // A reading equal to one of the expression's own forms adds nothing.
        if (std::find(forms->begin(), forms->end(), r) != forms->end()) continue;
        push_unique(lemmas, r);
      }
    }
  }

  for (auto& lemma : lemmas) {
    result.entries.push_back(LexiconEntry{lemma, level, meaning});
  }
  if (result.entries.empty()) result.skip_reason = "nothing left after normalization";
  return result;
}

LevelLexicon build_gold_lexicon(std::span<const Deck> decks) {
  std::map<std::string, LexiconEntry> entries;
  text::Digest digest;
  for (const auto& deck : decks) {
    digest.update(deck.origin).update(deck.level.label());
    for (const auto& card : deck.cards) {
      digest.update(card.expression).update(card.reading.value_or("\x01")).update(card.gloss);
      const DeckParse parsed = parse_deck_entry(
          card.expression,
          card.reading ? std::optional<std::string_view>(*card.reading) : std::nullopt, card.gloss,
          deck.level);
      for (const auto& entry : parsed.entries) {
        auto it = entries.find(entry.lemma);
        if (it == entries.end()) {
          entries.emplace(entry.lemma, entry);
        } else if (entry.level < it->second.level) {
          it->second = entry;
        }
      }
    }
  }
  if (entries.empty()) throw ValidationError("no vocabulary parsed");
  return LevelLexicon(std::move(entries), Provenance::gold_deck, digest.hex());
}

std::optional<Level> level_from_filename(std::string_view filename) {
  const std::string stem = fs::path(std::string(filename)).stem().string();
  if (stem.size() != 2) return std::nullopt;
  return Level::parse(stem);
}

Deck load_deck_file(const std::string& path) {
  const auto level = level_from_filename(fs::path(path).filename().string());
  if (!level) throw ValidationError("deck file name must be n5..n1: '" + path + "'");
  Deck deck{*level, {}, fs::path(path).filename().string()};
  const std::string contents = text::read_file(path);
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".json") {
    json j;
    try {
      j = json::parse(contents);
    } catch (const json::exception& e) {
      throw ValidationError("malformed deck JSON '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ValidationError("deck JSON must be an object: '" + path + "'");
    for (const auto& [expr, value] : j.items()) {
      DeckCard card{expr, std::nullopt, ""};
      if (value.is_object()) {
        if (value.contains("meaning") && value["meaning"].is_string()) card.gloss = value["meaning"];
        if (value.contains("reading") && value["reading"].is_string()) {
          card.reading = value["reading"].get<std::string>();
        }
      }
      deck.cards.push_back(std::move(card));
    }
  } else if (ext == ".tsv") {
    for (const auto& line : text::split_lines(contents)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> fields;
      std::size_t start = 0;
      while (true) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      DeckCard card;
      card.expression = fields[0];
      if (fields.size() >= 3) {
        card.reading = fields[1];
        card.gloss = fields[2];
      } else if (fields.size() == 2) {
        card.gloss = fields[1];
      }
      deck.cards.push_back(std::move(card));
    }
  } else {
    throw ValidationError("unsupported deck format '" + ext + "' (use .json or .tsv)");
  }
  return deck;
}

std::vector<Deck> load_deck_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("deck directory not found: '" + dir + "'");
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    const auto ext = entry.path().extension().string();
    if ((ext == ".json" || ext == ".tsv") && level_from_filename(name)) paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ValidationError("no n5..n1 deck files in '" + dir + "'");
  std::vector<Deck> decks;
  for (const auto& p : paths) decks.push_back(load_deck_file(p));
  // Easiest level first so that ties on meaning resolve the same way every run.
  std::stable_sort(decks.begin(), decks.end(), [](const Deck& a, const Deck& b) { return a.level < b.level; });
  return decks;
}

// ---- Corpus statistics ------------------------------------------------------

std::uint64_t CorpusLevelStats::count(std::string_view lemma, Level level) const {
  auto it = counts.find(std::string(lemma));
  return it == counts.end() ? 0 : it->second[static_cast<std::size_t>(level.index())];
}

void CorpusStatsBuilder::add_tokens(std::span<const std::string> lemmas, Level level) {
  const auto li = static_cast<std::size_t>(level.index());
  for (const auto& raw : lemmas) {
    if (raw.empty() || !text::is_valid_utf8(raw)) continue;
    std::string lemma = text::nfkc(raw);
    if (!text::all_japanese_script(lemma)) continue;
    auto& row = stats_.counts[lemma];
    ++row[li];
    ++stats_.total_tokens[li];
    ++stats_.grand_total;
  }
}

void CorpusStatsBuilder::add(std::string_view sentence, Level level) {
  const auto lemmas = tokenizer_.tokenize(sentence).lemmas();
  add_tokens(lemmas, level);
}

CorpusLevelStats accumulate_corpus_stats(std::span<const LeveledSentence> sentences,
                                         const Tokenizer& tokenizer) {
  CorpusStatsBuilder builder(tokenizer);
  for (const auto& s : sentences) builder.add(s.text, s.level);
  return builder.take();
}

LevelLexicon derive_heuristic_bins(const CorpusLevelStats& stats, const HeuristicThresholds& th) {
  if (stats.grand_total == 0) throw ValidationError("corpus statistics are empty");
  std::map<std::string, LexiconEntry> entries;
  text::Digest digest;
  const auto grand = static_cast<double>(stats.grand_total);
  for (const auto& [lemma, row] : stats.counts) {
    std::uint64_t total = 0;
    for (auto c : row) total += c;
    if (static_cast<double>(total) / grand <= th.global_floor) continue;

    bool level_ok = false;
    std::optional<Level> assigned;
    for (Level level : Level::all()) {
      const auto li = static_cast<std::size_t>(level.index());
      if (stats.total_tokens[li] == 0) continue;
      const double score = static_cast<double>(row[li]) / static_cast<double>(stats.total_tokens[li]);
      if (score > th.level_floor) level_ok = true;
      if (!assigned && score > th.assign_threshold) assigned = level;
    }
    if (!level_ok || !assigned) continue;
    entries.emplace(lemma, LexiconEntry{lemma, *assigned, std::nullopt});
    digest.update(lemma);
    for (auto c : row) digest.update(std::to_string(c));
  }
  digest.update(std::to_string(th.global_floor))
      .update(std::to_string(th.level_floor))
      .update(std::to_string(th.assign_threshold));
  return LevelLexicon(std::move(entries), Provenance::corpus_heuristic, digest.hex());
}

std::vector<LeveledSentence> load_corpus_dir(const std::string& dir, bool require_all_levels) {
  if (!fs::is_directory(dir)) throw IoError("corpus directory not found: '" + dir + "'");
  std::vector<LeveledSentence> out;
  for (Level level : Level::all()) {
    std::string label = level.label();
    label[0] = 'n';
    const fs::path p = fs::path(dir) / (label + ".txt");
    if (!fs::exists(p)) {
      if (require_all_levels) throw ValidationError("corpus missing level " + level.label() + " (" + p.string() + ")");
      continue;
    }
    std::size_t before = out.size();
    for (auto& line : text::split_lines(text::read_file(p.string()))) {
      if (text::trim(line).empty()) continue;
      out.push_back(LeveledSentence{std::move(line), level});
    }
    if (require_all_levels && out.size() == before) {
      throw ValidationError("corpus missing level " + level.label() + " (no sentences in " + p.string() + ")");
    }
  }
  return out;
}

// ---- Persistence ------------------------------------------------------------

std::string serialize_level(const LevelLexicon& lexicon, Level level) {
  json j = json::object();
  for (const auto& [lemma, entry] : lexicon.entries()) {
    if (entry.level != level) continue;
    json value = json::object();
    if (entry.meaning) value["meaning"] = *entry.meaning;
    j[lemma] = std::move(value);
  }
  return j.dump(2, ' ', false) + "\n";
}

std::string serialize_meta(const LevelLexicon& lexicon) {
  json j = {{"format", "gradechat-lexicon"},
            {"version", 1},
            {"provenance", to_string(lexicon.provenance())},
            {"source_digest", lexicon.source_digest()},
            {"entries", lexicon.size()}};
  return j.dump(2) + "\n";
}

namespace {
std::string level_file(Level level) {
  std::string label = level.label();
  label[0] = 'n';
  return label + ".json";
}
}  // namespace

std::vector<std::string> save_lexicon(const LevelLexicon& lexicon, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  std::vector<std::string> written;
  for (Level level : Level::all()) {
    const auto path = (fs::path(dir) / level_file(level)).string();
    text::write_file(path, serialize_level(lexicon, level));
    written.push_back(path);
  }
  const auto meta = (fs::path(dir) / "lexicon.meta.json").string();
  text::write_file(meta, serialize_meta(lexicon));
  written.push_back(meta);
  return written;
}

LevelLexicon load_lexicon(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("lexicon directory not found: '" + dir + "'");
  std::map<std::string, LexiconEntry> entries;
  text::Digest digest;
  bool any = false;
  for (Level level : Level::all()) {
    const auto path = (fs::path(dir) / level_file(level)).string();
    if (!fs::exists(path)) continue;
    any = true;
    const std::string contents = text::read_file(path);
    digest.update(contents);
    json j;
    try {
      j = json::parse(contents);
    } catch (const json::exception& e) {
      throw ValidationError("malformed lexicon file '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw ValidationError("lexicon file must be an object: '" + path + "'");
    for (const auto& [lemma, value] : j.items()) {
      if (lemma.empty() || lemma.find_first_of("\t\n") != std::string::npos) {
        throw ValidationError("invalid lemma in '" + path + "'");
      }
      LexiconEntry entry{lemma, level, std::nullopt};
      if (value.is_object() && value.contains("meaning") && value["meaning"].is_string()) {
        entry.meaning = value["meaning"].get<std::string>();
      }
      if (!entries.emplace(lemma, entry).second) {
        throw ValidationError("lemma '" + lemma + "' appears at more than one level");
      }
    }
  }
  if (!any) throw ValidationError("no n5..n1 lexicon files in '" + dir + "'");

  Provenance provenance = Provenance::gold_deck;
  std::string source = digest.hex();
  const auto meta_path = (fs::path(dir) / "lexicon.meta.json").string();
  if (fs::exists(meta_path)) {
    const json meta = json::parse(text::read_file(meta_path));
    provenance = provenance_from_string(meta.value("provenance", "gold_deck"));
    source = meta.value("source_digest", source);
  }
  return LevelLexicon(std::move(entries), provenance, std::move(source));
}

}  // namespace gradechat

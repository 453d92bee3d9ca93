#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gradechat {

struct Span {
  std::size_t start = 0;  // code points, half-open
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

struct Token {
  std::string surface;
  std::string lemma;
  Span span;
  bool is_content = true;
};

struct TokenizedUtterance {
  std::string source;
  std::vector<Token> tokens;  // content tokens only

  std::vector<std::string> lemmas() const;
  std::size_t size() const { return tokens.size(); }
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::string name() const = 0;
  // Every segment of the source including dropped punctuation/whitespace,
  // in order, spans tiling the source.
  virtual std::vector<Token> segment(std::string_view text) const = 0;
  // Content tokens only.
  TokenizedUtterance tokenize(std::string_view text) const;
};

// Greedy longest-match over a lemma dictionary plus a small polite-form
// inflection table. Runs of unknown characters become one token with
// lemma = surface.
class BuiltinTokenizer final : public Tokenizer {
 public:
  explicit BuiltinTokenizer(const std::vector<std::string>& lemmas);

  std::string name() const override { return "builtin"; }
  std::vector<Token> segment(std::string_view text) const override;

  std::size_t dictionary_size() const { return n_surfaces_; }

 private:
  struct Analysis {
    std::string lemma;
    // When set, the match is verb stem + polite suffix to be split in two
    // tokens at this code-point offset (suffix lemma ます).
    std::size_t split_at = 0;
  };
  struct Node {
    std::unordered_map<char32_t, std::unique_ptr<Node>> next;
    std::unique_ptr<Analysis> analysis;
  };

  void insert(std::u32string_view surface, Analysis analysis, bool overwrite);

  Node root_;
  std::size_t n_surfaces_ = 0;
};

// Generated surface forms for a dictionary-form verb (ます/ました/ましょう/ません
// attached to the continuative stem). Empty for non-verbs.
std::vector<std::pair<std::string, std::size_t>> polite_forms(std::string_view lemma);

// Adapter for an external morphological analyzer. The backend receives one
// line of text and answers with a JSON array of
// {"surface","lemma","start","end","pos"} objects.
class ExternalTokenizer final : public Tokenizer {
 public:
  enum class Transport { subprocess, http };

  // subprocess: `target` is an executable path (argv split on spaces),
  // one process per call. http: `target` is a URL the text is POSTed to.
  ExternalTokenizer(std::string name, Transport transport, std::string target);

  std::string name() const override { return name_; }
  std::vector<Token> segment(std::string_view text) const override;

 private:
  std::string call(std::string_view text) const;

  std::string name_;
  Transport transport_;
  std::string target_;
};

// Parses the adapter's JSON reply (exposed for tests).
std::vector<Token> parse_adapter_reply(std::string_view source, std::string_view json_reply);

class TokenizerRegistry {
 public:
  // Throws ValidationError on a duplicate name.
  void register_backend(const std::string& name, std::shared_ptr<const Tokenizer> backend);
  // `builtin` or `external:<name>`; throws ValidationError naming the backend.
  std::shared_ptr<const Tokenizer> resolve(std::string_view config_value) const;
  std::shared_ptr<const Tokenizer> get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Tokenizer>> backends_;
};

}  // namespace gradechat

#include "gradechat/tokenizer.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "gradechat/errors.hpp"
#include "gradechat/text.hpp"

namespace gradechat {

std::vector<std::string> TokenizedUtterance::lemmas() const {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.lemma);
  return out;
}

TokenizedUtterance Tokenizer::tokenize(std::string_view text) const {
  TokenizedUtterance out;
  out.source = std::string(text);
  for (auto& t : segment(text)) {
    if (t.is_content) out.tokens.push_back(std::move(t));
  }
  return out;
}

// ---- Polite forms -----------------------------------------------------------

namespace {

const std::u32string kIRow = U"いきしちにひみりぎじぢびぴ";
const std::u32string kERow = U"えけせてねへめれげぜでべぺ";

// Kanji + る verbs that conjugate as ichidan. Everything else with a kanji
// before る is treated as godan (帰る, 入る, 知る, 走る ...).
const std::u32string_view kIchidanKanjiRu[] = {U"見る", U"居る", U"寝る", U"出る", U"着る",
                                               U"似る", U"煮る", U"得る", U"経る", U"射る"};

char32_t godan_i_row(char32_t u) {
  switch (u) {
    case U'う': return U'い';
    case U'く': return U'き';
    case U'ぐ': return U'ぎ';
    case U'す': return U'し';
    case U'つ': return U'ち';
    case U'ぬ': return U'に';
    case U'ぶ': return U'び';
    case U'む': return U'み';
    case U'る': return U'り';
    default: return 0;
  }
}

std::optional<std::u32string> continuative_stem(const std::u32string& v) {
  if (v.size() < 2) return std::nullopt;
  if (v == U"する") return U"し";
  if (v == U"来る") return U"来";
  if (v == U"くる") return U"き";
  if (v.size() > 2 && v.ends_with(U"する")) return v.substr(0, v.size() - 2) + U"し";
  const char32_t last = v.back();
  const char32_t prev = v[v.size() - 2];
  if (last == U'る') {
    const bool kana_ichidan = kIRow.find(prev) != std::u32string::npos ||
                              kERow.find(prev) != std::u32string::npos;
    const bool kanji_ichidan =
        std::find(std::begin(kIchidanKanjiRu), std::end(kIchidanKanjiRu), v) != std::end(kIchidanKanjiRu);
    if (kana_ichidan || kanji_ichidan) return v.substr(0, v.size() - 1);
  }
  // Godan verbs need a kanji or kana stem in front of the ending; single
  // function words like で or か never get here because of the size check.
  const char32_t i_row = godan_i_row(last);
  if (!i_row) return std::nullopt;
  if (!text::is_japanese_script(prev)) return std::nullopt;
  return v.substr(0, v.size() - 1) + std::u32string(1, i_row);
}

}  // namespace

std::vector<std::pair<std::string, std::size_t>> polite_forms(std::string_view lemma) {
  if (!text::is_valid_utf8(lemma)) return {};
  const auto stem = continuative_stem(text::decode_utf8(lemma));
  if (!stem) return {};
  std::vector<std::pair<std::string, std::size_t>> out;
  for (std::u32string_view suffix : {U"ます", U"ました", U"ましょう", U"ません"}) {
    out.emplace_back(text::encode_utf8(*stem + std::u32string(suffix)), stem->size());
  }
  return out;
}

// ---- Builtin tokenizer ------------------------------------------------------

BuiltinTokenizer::BuiltinTokenizer(const std::vector<std::string>& lemmas) {
  bool has_masu = false;
  for (const auto& l : lemmas) has_masu = has_masu || l == "ます";
  for (const auto& raw : lemmas) {
    if (raw.empty() || !text::is_valid_utf8(raw)) continue;
    const std::string lemma = text::nfkc(raw);
    insert(text::decode_utf8(lemma), Analysis{lemma, 0}, true);
  }
  // Generated forms never shadow a real dictionary entry.
  for (const auto& raw : lemmas) {
    if (raw.empty() || !text::is_valid_utf8(raw)) continue;
    const std::string lemma = text::nfkc(raw);
    for (const auto& [surface, stem_len] : polite_forms(lemma)) {
      insert(text::decode_utf8(surface), Analysis{lemma, has_masu ? stem_len : 0}, false);
    }
  }
}

void BuiltinTokenizer::insert(std::u32string_view surface, Analysis analysis, bool overwrite) {
  Node* node = &root_;
  for (char32_t c : surface) {
    auto& child = node->next[c];
    if (!child) child = std::make_unique<Node>();
    node = child.get();
  }
  if (node->analysis && !overwrite) return;
  if (!node->analysis) ++n_surfaces_;
  node->analysis = std::make_unique<Analysis>(std::move(analysis));
}

std::vector<Token> BuiltinTokenizer::segment(std::string_view source) const {
  const std::u32string s = text::decode_utf8(source);
  std::vector<Token> out;
  const std::size_t n = s.size();

  // Longest dictionary match starting at i: (length, analysis).
  auto match = [&](std::size_t i) -> std::pair<std::size_t, const Analysis*> {
    const Node* node = &root_;
    std::pair<std::size_t, const Analysis*> best{0, nullptr};
    for (std::size_t j = i; j < n; ++j) {
      auto it = node->next.find(s[j]);
      if (it == node->next.end()) break;
      node = it->second.get();
      if (node->analysis) best = {j - i + 1, node->analysis.get()};
    }
    return best;
  };
  auto emit = [&](std::size_t b, std::size_t e, std::string lemma, bool content) {
    std::string surface = text::encode_utf8(std::u32string_view(s).substr(b, e - b));
    if (lemma.empty()) lemma = content ? text::nfkc(surface) : surface;
    out.push_back(Token{std::move(surface), std::move(lemma), Span{b, e}, content});
  };

  std::size_t i = 0;
  while (i < n) {
    if (text::is_punct_or_space(s[i])) {
      emit(i, i + 1, "", false);
      ++i;
      continue;
    }
    const auto [len, analysis] = match(i);
    if (len > 0) {
      if (analysis->split_at > 0 && analysis->split_at < len) {
        emit(i, i + analysis->split_at, analysis->lemma, true);
        emit(i + analysis->split_at, i + len, "ます", true);
      } else {
        emit(i, i + len, analysis->lemma, true);
      }
      i += len;
      continue;
    }
    // Unknown run: up to the next punctuation or the next dictionary hit.
    std::size_t j = i + 1;
    while (j < n && !text::is_punct_or_space(s[j]) && match(j).first == 0) ++j;
    emit(i, j, "", true);
    i = j;
  }
  return out;
}

// ---- External adapter -------------------------------------------------------

std::vector<Token> parse_adapter_reply(std::string_view source, std::string_view json_reply) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(json_reply);
  } catch (const json::exception& e) {
    throw BackendError(std::string("tokenizer backend returned malformed JSON: ") + e.what());
  }
  if (!j.is_array()) throw BackendError("tokenizer backend reply must be a JSON array");
  const std::size_t n = text::length(source);
  std::vector<Token> out;
  std::size_t last_end = 0;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("surface") || !item.contains("start") || !item.contains("end")) {
      throw BackendError("tokenizer backend token lacks surface/start/end");
    }
    Token t;
    try {
      t.surface = item.at("surface").get<std::string>();
      t.lemma = item.value("lemma", t.surface);
      t.span.start = item.at("start").get<std::size_t>();
      t.span.end = item.at("end").get<std::size_t>();
    } catch (const json::exception& e) {
      throw BackendError(std::string("tokenizer backend token has wrong field types: ") + e.what());
    }
    if (t.span.start >= t.span.end || t.span.end > n || t.span.start < last_end) {
      throw BackendError("tokenizer backend span out of order or out of range");
    }
    if (text::substr(source, t.span.start, t.span.end) != t.surface) {
      throw BackendError("tokenizer backend surface does not match its span");
    }
    last_end = t.span.end;
    const std::string pos = item.value("pos", "");
    bool all_punct = true;
    for (char32_t c : text::decode_utf8(t.surface)) all_punct = all_punct && text::is_punct_or_space(c);
    t.is_content = !(all_punct || pos == "punct" || pos == "symbol" || pos == "space");
    if (t.lemma.empty()) t.lemma = t.surface;
    t.lemma = text::nfkc(t.lemma);
    out.push_back(std::move(t));
  }
  return out;
}

ExternalTokenizer::ExternalTokenizer(std::string name, Transport transport, std::string target)
    : name_(std::move(name)), transport_(transport), target_(std::move(target)) {
  if (target_.empty()) throw ValidationError("external tokenizer '" + name_ + "' has no target");
}

namespace {

std::string run_subprocess(const std::string& command, std::string_view input, const std::string& name) {
  std::vector<std::string> argv_s;
  std::istringstream iss(command);
  for (std::string part; iss >> part;) argv_s.push_back(part);
  if (argv_s.empty()) throw ValidationError("external tokenizer '" + name + "' has an empty command");

  int in_pipe[2], out_pipe[2];
  if (pipe(in_pipe) != 0) throw BackendError("pipe failed: " + std::string(std::strerror(errno)));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw BackendError("pipe failed: " + std::string(std::strerror(errno)));
  }
  const pid_t pid = fork();
  if (pid < 0) throw BackendError("fork failed: " + std::string(std::strerror(errno)));
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    std::vector<char*> argv;
    for (auto& a : argv_s) argv.push_back(a.data());
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  std::string payload(input);
  payload.push_back('\n');
  std::size_t off = 0;
  while (off < payload.size()) {
    const ssize_t w = write(in_pipe[1], payload.data() + off, payload.size() - off);
    if (w <= 0) break;
    off += static_cast<std::size_t>(w);
  }
  close(in_pipe[1]);
  std::string reply;
  char buf[4096];
  for (ssize_t r; (r = read(out_pipe[0], buf, sizeof buf)) > 0;) reply.append(buf, static_cast<std::size_t>(r));
  close(out_pipe[0]);
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw BackendError("external tokenizer '" + name + "' exited with status " +
                       std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));
  }
  return reply;
}

std::string post_http(const std::string& url, std::string_view input, const std::string& name) {
  // http://host:port/path
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
  httplib::Client client(origin);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  auto res = client.Post(path, std::string(input), "text/plain; charset=utf-8");
  if (!res) {
    throw BackendError("external tokenizer '" + name + "' unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw BackendError("external tokenizer '" + name + "' answered HTTP " + std::to_string(res->status));
  }
  return res->body;
}

}  // namespace

std::string ExternalTokenizer::call(std::string_view text) const {
  return transport_ == Transport::subprocess ? run_subprocess(target_, text, name_)
                                             : post_http(target_, text, name_);
}

std::vector<Token> ExternalTokenizer::segment(std::string_view source) const {
  if (!text::is_valid_utf8(source)) throw ValidationError("tokenizer input is not valid UTF-8");
  if (source.find('\n') != std::string_view::npos) {
    throw ValidationError("external tokenizer input must be a single line");
  }
  return parse_adapter_reply(source, call(source));
}

// ---- Registry ---------------------------------------------------------------

void TokenizerRegistry::register_backend(const std::string& name, std::shared_ptr<const Tokenizer> backend) {
  if (!backend) throw ValidationError("tokenizer backend '" + name + "' is null");
  std::lock_guard lock(mu_);
  if (!backends_.emplace(name, std::move(backend)).second) {
    throw ValidationError("tokenizer backend '" + name + "' is already registered");
  }
}

std::shared_ptr<const Tokenizer> TokenizerRegistry::get(const std::string& name) const {
  std::lock_guard lock(mu_);
  auto it = backends_.find(name);
  if (it == backends_.end()) throw ValidationError("unknown tokenizer backend '" + name + "'");
  return it->second;
}

std::shared_ptr<const Tokenizer> TokenizerRegistry::resolve(std::string_view value) const {
  if (value == "builtin") return get("builtin");
  constexpr std::string_view prefix = "external:";
  if (value.starts_with(prefix) && value.size() > prefix.size()) {
    return get(std::string(value.substr(prefix.size())));
  }
  throw ValidationError("unknown tokenizer backend '" + std::string(value) +
                        "' (expected builtin or external:<name>)");
}

std::vector<std::string> TokenizerRegistry::names() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [k, v] : backends_) out.push_back(k);
  return out;
}

}  // namespace gradechat

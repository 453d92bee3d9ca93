// gradechat: command-line driver for vocabulary building, training, chat,
// self-chat evaluation, scoring and the study service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>

#include "gradechat/classifier.hpp"
#include "gradechat/control.hpp"
#include "gradechat/errors.hpp"
#include "gradechat/lexicon.hpp"
#include "gradechat/metrics.hpp"
#include "gradechat/ngram.hpp"
#include "gradechat/remote_lm.hpp"
#include "gradechat/selfchat.hpp"
#include "gradechat/service.hpp"
#include "gradechat/text.hpp"
#include "gradechat/tokenizer.hpp"
#include "gradechat/toy_world.hpp"

#ifndef GRADECHAT_VERSION
#define GRADECHAT_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace gradechat;

namespace {

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation:
    case ErrorKind::conflict:
    case ErrorKind::expired: return 2;
    case ErrorKind::capability:
    case ErrorKind::transport: return 3;
    case ErrorKind::io:
    case ErrorKind::not_found: return 4;
  }
  return 1;
}

// ---- config file + flag overrides ------------------------------------------

// Options not given on the command line (or through the environment) take
// their value from the config file, keyed by long option name.
void apply_config(CLI::App& sub, const Json& config) {
  for (CLI::Option* opt : sub.get_options()) {
    if (opt->count() > 0 || opt->get_lnames().empty()) continue;
    const std::string& key = opt->get_lnames().front();
    if (key == "help" || key == "config" || !config.contains(key)) continue;
    const Json& v = config.at(key);
    std::vector<std::string> values;
    if (v.is_array()) {
      for (const auto& x : v) values.push_back(x.is_string() ? x.get<std::string>() : x.dump());
    } else if (v.is_boolean()) {
      if (!v.get<bool>()) continue;
      values.push_back("true");
    } else {
      values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    }
    for (auto& s : values) opt->add_result(s);
    opt->run_callback();
  }
}

Json load_config(const std::string& path) {
  if (path.empty()) return Json::object();
  Json j;
  try {
    j = Json::parse(text::read_file(path));
  } catch (const Json::exception& e) {
    throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
  return j;
}

// Resolved option values, for the manifest.
Json resolved_options(const CLI::App& sub) {
  Json out = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& key = opt->get_lnames().front();
    if (key == "help") continue;
    const auto results = opt->results();
    if (results.empty()) {
      const std::string d = opt->get_default_str();
      out[key] = d.empty() ? Json(nullptr) : Json(d);
    } else if (results.size() == 1 && opt->get_items_expected_max() <= 1) {
      out[key] = results.front();
    } else {
      out[key] = results;
    }
  }
  return out;
}

std::string path_digest(const std::string& path) {
  text::Digest d;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      d.update(fs::relative(f, path).generic_string());
      d.update(std::string(1, '\0'));
      d.update(text::read_file(f.string()));
    }
  } else {
    d.update(text::read_file(path));
  }
  return d.hex();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_manifest(const std::string& out_dir, const std::string& subcommand, const CLI::App& sub,
                    const std::vector<std::string>& inputs, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  ensure_dir(out_dir);
  Json in = Json::array();
  for (const auto& p : inputs) {
    if (p.empty()) continue;
    if (!fs::exists(p)) throw IoError("input not found: '" + p + "'");
    in.push_back({{"path", p}, {"digest", path_digest(p)}});
  }
  Json m = {{"subcommand", subcommand},
            {"config", resolved_options(sub)},
            {"inputs", in},
            {"seed", seed},
            {"tool_version", GRADECHAT_VERSION},
            {"outputs", outputs}};
  text::write_file((fs::path(out_dir) / "manifest.json").string(), m.dump(2) + "\n");
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string join_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

// ---- runtime: models, lexicons, tokenizer ----------------------------------

struct ModelOptions {
  bool toy = false;
  bool toy_two_register = false;
  std::size_t toy_sentences = 200;
  std::string model_dir;
  std::string lm_provider = "builtin";  // builtin | remote
  std::string remote_url;
  std::string remote_model;
  std::string api_key_env = "GRADECHAT_API_KEY";
  bool remote_logprobs = false;
  std::size_t max_in_flight = 4;
  std::string tokenizer = "builtin";
  std::vector<std::string> external_tokenizers;  // name=subprocess:cmd | name=http:url
  std::size_t known_expressions = 100;
  std::size_t top_k = 50;
  std::size_t candidates = 5;
  std::string score_mode = "expectation";
  std::string pooling = "macro";
};

void add_model_options(CLI::App& sub, ModelOptions& m) {
  sub.add_flag("--toy", m.toy, "Use the built-in synthetic toy world instead of trained artifacts");
  sub.add_flag("--toy-two-register", m.toy_two_register, "Toy world with only N5 and N1 sentences");
  sub.add_option("--toy-sentences", m.toy_sentences, "Toy sentences per level")->capture_default_str();
  sub.add_option("--model-dir", m.model_dir, "Directory written by `gradechat train`");
  sub.add_option("--lm", m.lm_provider, "Generation LM provider: builtin | remote")
      ->envname("GRADECHAT_LM_PROVIDER")
      ->capture_default_str();
  sub.add_option("--remote-url", m.remote_url, "Base URL of an OpenAI-compatible endpoint");
  sub.add_option("--remote-model", m.remote_model, "Remote model name");
  sub.add_option("--api-key-env", m.api_key_env, "Environment variable holding the API key")
      ->envname("GRADECHAT_API_KEY_ENV")
      ->capture_default_str();
  sub.add_flag("--remote-logprobs", m.remote_logprobs, "Remote endpoint returns top_logprobs (enables fudge)");
  sub.add_option("--max-in-flight", m.max_in_flight, "Concurrent remote requests")->capture_default_str();
  sub.add_option("--tokenizer", m.tokenizer, "builtin | external:<name>")->capture_default_str();
  sub.add_option("--external-tokenizer", m.external_tokenizers,
                 "Register name=subprocess:<command> or name=http:<url>");
  sub.add_option("--known-expressions", m.known_expressions, "Known expressions in the detailed prompt")
      ->capture_default_str();
  sub.add_option("--top-k", m.top_k, "FUDGE candidate width")->capture_default_str();
  sub.add_option("--candidates", m.candidates, "Overgenerate candidates")->capture_default_str();
  sub.add_option("--score-mode", m.score_mode, "expectation | argmax")->capture_default_str();
  sub.add_option("--pooling", m.pooling, "TMR pooling: macro | micro")->capture_default_str();
}

struct Runtime {
  LevelLexicon gold;
  LevelLexicon heuristic;
  std::shared_ptr<const Tokenizer> tokenizer;
  std::shared_ptr<NgramModel> ngram;
  std::shared_ptr<Predictor> predictor;
  std::shared_ptr<LanguageModel> lm;  // generation
  std::unique_ptr<SurrogateReadability> readability;
  ModelOptions options;

  MetricsDeps deps() const {
    MetricsDeps d;
    d.tokenizer = tokenizer.get();
    d.lexicon = &gold;
    d.predictor = predictor.get();
    d.ppl_model = ngram.get();
    d.readability = readability.get();
    d.score_mode = options.score_mode == "argmax" ? ScoreMode::argmax : ScoreMode::expectation;
    d.pooling = options.pooling == "micro" ? TmrPooling::micro : TmrPooling::macro;
    return d;
  }

  TutorResources resources() const {
    TutorResources r;
    r.lm = lm.get();
    r.predictor = predictor.get();
    r.heuristic_lexicon = &heuristic;
    r.tokenizer = tokenizer.get();
    r.known_expressions = options.known_expressions;
    r.n_candidates = options.candidates;
    r.fudge_top_k = options.top_k;
    return r;
  }
};

std::shared_ptr<const Tokenizer> resolve_tokenizer(const ModelOptions& m, std::shared_ptr<const Tokenizer> builtin) {
  TokenizerRegistry reg;
  reg.register_backend("builtin", std::move(builtin));
  for (const auto& spec : m.external_tokenizers) {
    const auto eq = spec.find('=');
    const auto colon = spec.find(':', eq == std::string::npos ? 0 : eq);
    if (eq == std::string::npos || colon == std::string::npos) {
      throw ValidationError("external tokenizer must look like name=subprocess:<cmd> or name=http:<url>: '" + spec + "'");
    }
    const std::string name = spec.substr(0, eq);
    const std::string kind = spec.substr(eq + 1, colon - eq - 1);
    const std::string target = spec.substr(colon + 1);
    ExternalTokenizer::Transport t;
    if (kind == "subprocess") {
      t = ExternalTokenizer::Transport::subprocess;
    } else if (kind == "http") {
      t = ExternalTokenizer::Transport::http;
    } else {
      throw ValidationError("unknown tokenizer transport '" + kind + "' (subprocess, http)");
    }
    reg.register_backend("external:" + name, std::make_shared<ExternalTokenizer>(name, t, target));
  }
  return reg.resolve(m.tokenizer);
}

Runtime load_runtime(const ModelOptions& m, std::uint64_t seed) {
  Runtime rt;
  rt.options = m;
  if (m.score_mode != "expectation" && m.score_mode != "argmax") {
    throw ValidationError("score mode must be expectation or argmax");
  }
  if (m.pooling != "macro" && m.pooling != "micro") throw ValidationError("pooling must be macro or micro");
  std::shared_ptr<const Tokenizer> builtin;
  if (m.toy) {
    ToyWorldConfig cfg;
    cfg.seed = seed;
    cfg.two_register = m.toy_two_register;
    cfg.sentences_per_level = m.toy_sentences;
    cfg.predictor.seed = derive_seed(seed, {0x707265ULL});
    ToyWorld w = build_toy_world(cfg);
    rt.gold = std::move(w.gold);
    rt.heuristic = std::move(w.heuristic);
    rt.ngram = w.lm;
    rt.predictor = w.predictor;
    builtin = w.tokenizer;
  } else {
    if (m.model_dir.empty()) throw ValidationError("either --toy or --model-dir is required");
    if (!fs::is_directory(m.model_dir)) throw IoError("model directory not found: '" + m.model_dir + "'");
    rt.gold = load_lexicon(join_path(m.model_dir, "lexicon"));
    const std::string heur = join_path(m.model_dir, "heuristic");
    if (fs::is_directory(heur)) rt.heuristic = load_lexicon(heur);
    std::vector<std::string> lemmas;
    for (const auto& [lemma, e] : rt.gold.entries()) lemmas.push_back(lemma);
    for (const auto& [lemma, e] : rt.heuristic.entries()) lemmas.push_back(lemma);
    builtin = std::make_shared<BuiltinTokenizer>(lemmas);
    const std::string ngram = join_path(m.model_dir, "ngram.json");
    if (fs::exists(ngram)) rt.ngram = std::make_shared<NgramModel>(NgramModel::load(ngram));
    const std::string pred = join_path(m.model_dir, "predictor.json");
    if (fs::exists(pred)) rt.predictor = std::make_shared<Predictor>(Predictor::load(pred));
  }
  rt.tokenizer = resolve_tokenizer(m, builtin);
  rt.readability = std::make_unique<SurrogateReadability>(rt.gold);

  if (m.lm_provider == "builtin") {
    if (!rt.ngram) throw CapabilityError("no built-in language model (ngram.json) in '" + m.model_dir + "'");
    rt.lm = rt.ngram;
  } else if (m.lm_provider == "remote") {
    RemoteConfig rc;
    rc.base_url = m.remote_url;
    rc.model = m.remote_model;
    rc.api_key_env = m.api_key_env;
    rc.supports_logprobs = m.remote_logprobs;
    rc.max_in_flight = static_cast<std::ptrdiff_t>(m.max_in_flight);
    if (rc.base_url.empty() || rc.model.empty()) {
      throw ValidationError("remote provider needs --remote-url and --remote-model");
    }
    rt.lm = std::make_shared<RemoteChatModel>(rc);
  } else {
    throw ValidationError("unknown LM provider '" + m.lm_provider + "' (builtin, remote)");
  }
  return rt;
}

std::vector<std::string> model_inputs(const ModelOptions& m) {
  if (m.toy || m.model_dir.empty()) return {};
  return {m.model_dir};
}

// ---- subcommands ------------------------------------------------------------

struct BuildVocabOptions {
  std::string decks;
  std::string corpus;
  std::string out;
};

int cmd_build_vocab(const BuildVocabOptions& o, const CLI::App& sub) {
  if (!fs::is_directory(o.decks)) throw IoError("deck directory not found: '" + o.decks + "'");
  if (!o.corpus.empty() && !fs::is_directory(o.corpus)) throw IoError("corpus directory not found: '" + o.corpus + "'");
  std::vector<std::string> outputs;
  for (const auto& l : kLevelLabels) outputs.push_back(join_path(join_path(o.out, "lexicon"), lower(std::string(l)) + ".json"));
  if (!o.corpus.empty()) outputs.push_back(join_path(o.out, "heuristic"));
  write_manifest(o.out, "build-vocab", sub, {o.decks, o.corpus}, 0, outputs);

  const auto decks = load_deck_dir(o.decks);
  const LevelLexicon gold = build_gold_lexicon(decks);
  const auto written = save_lexicon(gold, join_path(o.out, "lexicon"));
  std::cerr << "gold lexicon: " << gold.size() << " lemmas -> " << join_path(o.out, "lexicon") << "\n";
  if (!o.corpus.empty()) {
    std::vector<std::string> lemmas;
    for (const auto& [lemma, e] : gold.entries()) lemmas.push_back(lemma);
    BuiltinTokenizer tok(lemmas);
    const auto sentences = load_corpus_dir(o.corpus, false);
    const LevelLexicon heur = derive_heuristic_bins(accumulate_corpus_stats(sentences, tok));
    save_lexicon(heur, join_path(o.out, "heuristic"));
    std::cerr << "heuristic bins: " << heur.size() << " lemmas -> " << join_path(o.out, "heuristic") << "\n";
  }
  return 0;
}

struct TrainOptions {
  std::string corpus;
  std::string lexicon;
  std::string out;
  std::uint64_t seed = 0;
  int order = 2;
  double delta = 0.1;
  // The shipped predictor is a small bag of embeddings; 5e-5 barely moves it.
  TrainingConfig predictor = ToyWorldConfig{}.predictor;
  std::string predictor_pooling = "max";
  bool toy = false;
  bool toy_two_register = false;
  std::size_t toy_sentences = 200;
};

void copy_lexicon(const LevelLexicon& lex, const std::string& dir) { save_lexicon(lex, dir); }

int cmd_train(TrainOptions o, const CLI::App& sub) {
  o.predictor.seed = derive_seed(o.seed, {0x707265ULL});
  o.predictor.pooling = pooling_from_string(o.predictor_pooling);
  o.predictor.validate();
  const std::vector<std::string> outputs = {join_path(o.out, "ngram.json"), join_path(o.out, "predictor.json"),
                                            join_path(o.out, "lexicon"), join_path(o.out, "heuristic")};
  if (o.toy) {
    write_manifest(o.out, "train", sub, {}, o.seed, outputs);
    ToyWorldConfig cfg;
    cfg.seed = o.seed;
    cfg.two_register = o.toy_two_register;
    cfg.sentences_per_level = o.toy_sentences;
    cfg.ngram_order = o.order;
    cfg.ngram_delta = o.delta;
    cfg.predictor = o.predictor;
    const ToyWorld w = build_toy_world(cfg);
    w.lm->save(outputs[0]);
    w.predictor->save(outputs[1]);
    copy_lexicon(w.gold, outputs[2]);
    copy_lexicon(w.heuristic, outputs[3]);
    std::cerr << "toy world: " << w.corpus.size() << " sentences -> " << o.out << "\n";
    return 0;
  }
  if (o.corpus.empty() || o.lexicon.empty()) throw ValidationError("train needs --corpus and --lexicon (or --toy)");
  if (!fs::is_directory(o.corpus)) throw IoError("corpus directory not found: '" + o.corpus + "'");
  if (!fs::is_directory(o.lexicon)) throw IoError("lexicon directory not found: '" + o.lexicon + "'");
  write_manifest(o.out, "train", sub, {o.corpus, o.lexicon}, o.seed, outputs);

  const LevelLexicon gold = load_lexicon(o.lexicon);
  std::vector<std::string> lemmas;
  for (const auto& [lemma, e] : gold.entries()) lemmas.push_back(lemma);
  BuiltinTokenizer tok(lemmas);
  const auto sentences = load_corpus_dir(o.corpus, true);

  // LM over surfaces (punctuation kept so sentences can end); predictor over lemmas.
  std::vector<std::vector<std::string>> lm_sentences;
  std::map<Level, std::vector<std::vector<std::string>>> by_level;
  for (const auto& s : sentences) {
    std::vector<std::string> surfaces;
    for (const auto& t : tok.segment(s.text)) {
      if (!text::trim(t.surface).empty()) surfaces.push_back(t.surface);
    }
    if (surfaces.empty()) continue;
    lm_sentences.push_back(std::move(surfaces));
    auto lem = tok.tokenize(s.text).lemmas();
    if (!lem.empty()) by_level[s.level].push_back(std::move(lem));
  }
  NgramConfig ng;
  ng.order = o.order;
  ng.delta = o.delta;
  const NgramModel lm = NgramModel::train(lm_sentences, ng);
  std::vector<PrefixExample> examples;
  for (const auto& [level, group] : balance_by_downsampling(by_level, o.predictor.seed)) {
    for (const auto& toks : group) {
      auto ex = expand_prefixes(toks, level);
      examples.insert(examples.end(), ex.begin(), ex.end());
    }
  }
  TrainingReport report;
  const Predictor predictor = train_predictor(examples, o.predictor, &report);
  lm.save(outputs[0]);
  predictor.save(outputs[1]);
  copy_lexicon(gold, outputs[2]);
  const LevelLexicon heur = derive_heuristic_bins(accumulate_corpus_stats(sentences, tok));
  copy_lexicon(heur, outputs[3]);
  for (std::size_t e = 0; e < report.epoch_loss.size(); ++e) {
    std::cerr << "epoch " << e + 1 << " loss " << format_number(report.epoch_loss[e]) << "\n";
  }
  std::cerr << "trained on " << lm_sentences.size() << " sentences, " << examples.size() << " prefixes -> " << o.out << "\n";
  return 0;
}

struct ChatOptions {
  std::string method = "fudge";
  double lambda = 0.8;
  std::string level = "N5";
  std::string target_level;
  std::string transcript;
  std::string topic = "free conversation";
  std::uint64_t seed = 0;
  ModelOptions model;
};

MethodSpec method_with_lambda(const std::string& s, double lambda, bool lambda_given) {
  MethodSpec m = MethodSpec::parse(s);
  if (m.kind == MethodKind::fudge && s.find(':') == std::string::npos && lambda_given) m.lambda = lambda;
  if (m.lambda < 0.0 || m.lambda > 1.0) throw ValidationError("lambda must be in [0, 1]");
  return m;
}

int cmd_chat(const ChatOptions& o, const CLI::App& sub) {
  const MethodSpec method = method_with_lambda(o.method, o.lambda, sub.get_option("--lambda")->count() > 0);
  const auto level = Level::parse(o.level);
  if (!level) throw ValidationError("level must be one of N5, N4, N3, N2, N1");
  Level target = *level;
  if (!o.target_level.empty()) {
    const auto t = Level::parse(o.target_level);
    if (!t) throw ValidationError("target level must be one of N5, N4, N3, N2, N1");
    target = *t;
  }
  if (!o.transcript.empty()) {
    const auto parent = fs::path(o.transcript).parent_path();
    write_manifest(parent.empty() ? "." : parent.string(), "chat", sub, model_inputs(o.model), o.seed, {o.transcript});
  }
  Runtime rt = load_runtime(o.model, o.seed);
  const auto tutor = make_tutor(method, target, rt.resources(), derive_seed(o.seed, {0x636861ULL}));
  const MetricsDeps deps = rt.deps();

  DialogueTranscript tr;
  tr.spec = DialogueSpec{target, *level, o.topic, method, 0, o.seed};
  ChatContext ctx(tutor->system_prompt(), Role::tutor, GenerationConfig::tutor_defaults());
  std::cout << "[" << method.label() << ", " << target.label() << "] type a message, empty line or EOF to quit\n";
  std::string line;
  std::size_t round = 0;
  while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
    if (text::trim(line).empty()) break;
    ++round;
    ctx.add_turn(Role::student, line);
    ctx.generation.seed = derive_seed(o.seed, {round, 0x74});
    const std::string reply = tutor->respond(ctx).text;
    ctx.add_turn(Role::tutor, reply);
    auto st = rt.tokenizer->tokenize(line);
    tr.turns.push_back(TranscriptTurn{Role::student, line, std::move(st), std::nullopt});
    auto tt = rt.tokenizer->tokenize(reply);
    std::optional<TurnMetrics> m;
    if (!tt.tokens.empty() && deps.predictor && deps.ppl_model) m = score_turn(tt, round, target, deps);
    std::cout << reply << "\n";
    if (m) std::cout << "  (TMR " << format_number(100.0 * m->tmr, 1) << "%)\n";
    tr.turns.push_back(TranscriptTurn{Role::tutor, reply, std::move(tt), m});
  }
  tr.spec.turns = round;
  if (!o.transcript.empty() && round > 0) {
    append_transcript(o.transcript, tr);
    std::cerr << "transcript appended to " << o.transcript << "\n";
  }
  return 0;
}

struct SelfchatOptions {
  std::vector<std::string> methods = {"baseline", "detailed", "overgenerate", "fudge:0.8"};
  std::size_t turns = 6;
  std::string pairs = "all";
  std::size_t per_pair = 3;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::string out;
  ModelOptions model;
};

std::vector<MethodSpec> parse_methods(const std::vector<std::string>& names) {
  std::vector<MethodSpec> out;
  for (const auto& raw : names) {
    for (const auto& part : split(raw, ',')) {
      const std::string p = text::trim(part);
      if (!p.empty()) out.push_back(MethodSpec::parse(p));
    }
  }
  if (out.empty()) throw ValidationError(std::string("no methods given (valid: ") + kValidMethods + ")");
  return out;
}

// "all" or a comma list of tutor:student pairs such as N5:N5,N5:N4.
std::set<std::pair<int, int>> parse_pairs(const std::string& s) {
  std::set<std::pair<int, int>> out;
  if (s == "all") {
    for (Level a : Level::all()) {
      for (Level b : Level::all()) out.emplace(a.value(), b.value());
    }
    return out;
  }
  for (const auto& part : split(s, ',')) {
    const auto colon = part.find(':');
    const auto a = colon == std::string::npos ? std::nullopt : Level::parse(text::trim(part.substr(0, colon)));
    const auto b = colon == std::string::npos ? std::nullopt : Level::parse(text::trim(part.substr(colon + 1)));
    if (!a || !b) throw ValidationError("pair '" + part + "' must look like N5:N4 (tutor:student)");
    out.emplace(a->value(), b->value());
  }
  return out;
}

int cmd_selfchat_eval(const SelfchatOptions& o, const CLI::App& sub) {
  const auto methods = parse_methods(o.methods);
  const auto pairs = parse_pairs(o.pairs);
  const std::string transcripts = join_path(o.out, "transcripts.jsonl");
  write_manifest(o.out, "selfchat-eval", sub, model_inputs(o.model), o.seed,
                 {transcripts, join_path(o.out, "report.json"), join_path(o.out, "report.csv"), join_path(o.out, "drift.csv")});
  Runtime rt = load_runtime(o.model, o.seed);
  const MetricsDeps deps = rt.deps();
  std::vector<DialogueSpec> specs;
  for (auto& s : plan_suite(methods, selfchat_topics(), o.per_pair, o.turns, o.seed)) {
    if (pairs.count({s.tutor_level.value(), s.student_level.value()})) specs.push_back(std::move(s));
  }
  const TutorResources res = rt.resources();
  const auto results = run_suite(
      specs,
      [&](const DialogueSpec& s) { return make_tutor(s.method, s.tutor_level, res, derive_seed(s.seed, {0x747574ULL})); },
      *rt.lm, deps, o.jobs);
  // Rewritten whole so a rerun does not accumulate records.
  std::string all;
  for (const auto& t : results) all += transcript_to_jsonl(t) + "\n";
  text::write_file(transcripts, all);
  const SuiteReport report = aggregate_suite(results, deps);
  write_suite_report(report, o.out);
  std::size_t aborted = 0;
  for (const auto& t : results) aborted += t.status == TranscriptStatus::aborted;
  std::cerr << results.size() << " dialogues (" << aborted << " aborted) -> " << o.out << "\n";
  std::cout << suite_report_csv(report);
  return 0;
}

struct ReportOptions {
  std::string transcripts;
  std::string out;
  bool plot = false;
  ModelOptions model;
};

int cmd_report(const ReportOptions& o, const CLI::App& sub) {
  if (!fs::exists(o.transcripts)) throw IoError("transcript file not found: '" + o.transcripts + "'");
  std::vector<std::string> outputs = {join_path(o.out, "report.json"), join_path(o.out, "report.csv")};
  if (o.plot) outputs.push_back(join_path(o.out, "drift.csv"));
  auto inputs = model_inputs(o.model);
  inputs.push_back(o.transcripts);
  write_manifest(o.out, "report", sub, inputs, 0, outputs);
  const auto transcripts = load_transcripts(o.transcripts);
  // Stored per-turn metrics are reused; scorers are only needed for names.
  MetricsDeps deps;
  std::unique_ptr<Runtime> rt;
  if (o.model.toy || !o.model.model_dir.empty()) {
    rt = std::make_unique<Runtime>(load_runtime(o.model, 0));
    deps = rt->deps();
  } else {
    deps.score_mode = o.model.score_mode == "argmax" ? ScoreMode::argmax : ScoreMode::expectation;
    deps.pooling = o.model.pooling == "micro" ? TmrPooling::micro : TmrPooling::macro;
  }
  const SuiteReport report = aggregate_suite(transcripts, deps);
  text::write_file(outputs[0], suite_report_json(report));
  text::write_file(outputs[1], suite_report_csv(report));
  if (o.plot) text::write_file(outputs[2], drift_csv(report));
  std::cout << suite_report_csv(report);
  return 0;
}

struct ScoreOptions {
  std::string study;
  std::string out;
  ModelOptions model;
};

// Average ranks (ties share the mean rank).
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return r;
}

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return std::nullopt;
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += rx[i], my += ry[i];
  mx /= n, my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

// Per-method human evaluation table from a study export.
int cmd_score(const ScoreOptions& o, const CLI::App& sub) {
  if (!fs::exists(o.study)) throw IoError("study export not found: '" + o.study + "'");
  auto inputs = model_inputs(o.model);
  inputs.push_back(o.study);
  const std::string json_out = join_path(o.out, "human_eval.json");
  const std::string csv_out = join_path(o.out, "human_eval.csv");
  write_manifest(o.out, "score", sub, inputs, 0, {json_out, csv_out});
  Json study;
  try {
    study = Json::parse(text::read_file(o.study));
  } catch (const Json::exception& e) {
    throw ValidationError("study export is not valid JSON: " + std::string(e.what()));
  }
  if (study.value("format", "") != "gradechat-study-export") throw ValidationError("not a gradechat study export");

  std::unique_ptr<Runtime> rt;
  if (o.model.toy || !o.model.model_dir.empty()) rt = std::make_unique<Runtime>(load_runtime(o.model, 0));

  struct Acc {
    std::size_t rounds = 0, not_understood = 0;
    double tmr = 0, readability = 0, ctl = 0;
    std::size_t auto_n = 0;
    std::array<double, 5> survey{};
    std::size_t surveys = 0;
  };
  std::vector<std::string> order;
  std::map<std::string, Acc> acc;
  std::vector<double> all_tmr, all_not;
  for (const auto& s : study.at("sessions")) {
    const std::string method = s.at("method_label");
    if (!acc.count(method)) order.push_back(method);
    Acc& a = acc[method];
    const Level level = Level::from_label(s.at("level").get<std::string>());
    // Latest annotation per turn wins.
    std::map<std::size_t, Json> latest;
    for (const auto& ann : s.at("annotations")) latest[ann.at("turn_index")] = ann;
    for (const auto& [turn, ann] : latest) {
      ++a.rounds;
      const bool nu = !ann.at("understood_overall").get<bool>();
      a.not_understood += nu;
      a.tmr += ann.at("tmr").get<double>();
      all_tmr.push_back(ann.at("tmr"));
      all_not.push_back(nu ? 1.0 : 0.0);
    }
    if (rt && rt->predictor) {
      for (const auto& t : s.at("turns")) {
        const auto u = rt->tokenizer->tokenize(t.at("tutor").get<std::string>());
        if (u.tokens.empty()) continue;
        a.readability += rt->readability->score(u);
        const double sx = score_tokens(*rt->predictor, u.lemmas(), rt->deps().score_mode);
        a.ctl += control_error(sx, level);
        ++a.auto_n;
      }
    }
    if (!s.at("survey").is_null()) {
      for (std::size_t i = 0; i < kSurveyQuestions.size(); ++i) a.survey[i] += s.at("survey").at(kSurveyQuestions[i]).get<double>();
      ++a.surveys;
    }
  }
  auto cell = [](bool ok, double v, int prec) { return ok ? format_number(v, prec) : std::string(); };
  std::string csv = "Model,%Rounds Not Understood,TMR,Readability,CtlError,Understood?,Effortful?,Natural?\n";
  Json rows = Json::array();
  for (const auto& m : order) {
    const Acc& a = acc[m];
    const bool r = a.rounds > 0, au = a.auto_n > 0, sv = a.surveys > 0;
    const double pnu = r ? 100.0 * a.not_understood / a.rounds : 0, tmr = r ? 100.0 * a.tmr / a.rounds : 0;
    const double rd = au ? a.readability / a.auto_n : 0, ce = au ? a.ctl / a.auto_n : 0;
    std::array<double, 5> sm{};
    for (std::size_t i = 0; i < 5; ++i) sm[i] = sv ? a.survey[i] / a.surveys : 0;
    csv += m + "," + cell(r, pnu, 1) + "," + cell(r, tmr, 1) + "," + cell(au, rd, 2) + "," + cell(au, ce, 2) + "," +
           cell(sv, sm[0], 2) + "," + cell(sv, sm[1], 2) + "," + cell(sv, sm[3], 2) + "\n";
    Json row = {{"method", m}, {"rounds", a.rounds}, {"surveys", a.surveys}};
    row["pct_rounds_not_understood"] = r ? Json(pnu) : Json(nullptr);
    row["tmr_percent"] = r ? Json(tmr) : Json(nullptr);
    row["readability"] = au ? Json(rd) : Json(nullptr);
    row["control_error"] = au ? Json(ce) : Json(nullptr);
    Json survey = Json::object();
    for (std::size_t i = 0; i < 5; ++i) survey[kSurveyQuestions[i]] = sv ? Json(sm[i]) : Json(nullptr);
    row["survey_means"] = survey;
    rows.push_back(row);
  }
  const auto rho = spearman(all_tmr, all_not);
  Json out = {{"rows", rows},
              {"readability_scorer", rt ? Json(rt->readability->name()) : Json(nullptr)},
              {"spearman_tmr_not_understood", rho ? Json(*rho) : Json(nullptr)}};
  text::write_file(json_out, out.dump(2) + "\n");
  text::write_file(csv_out, csv);
  std::cout << csv;
  return 0;
}

struct ServeOptions {
  std::string bind = "127.0.0.1:8080";
  std::string data_dir = "gradechat-data";
  std::size_t turn_limit = 6;
  double idle_hours = 24.0;
  double lambda = 0.8;
  std::uint64_t seed = 0;
  ModelOptions model;
};

HttpApi* g_api = nullptr;

int cmd_serve(const ServeOptions& o, const CLI::App& sub) {
  const auto colon = o.bind.rfind(':');
  if (colon == std::string::npos) throw ValidationError("bind address must look like host:port");
  const std::string host = o.bind.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(o.bind.substr(colon + 1));
  } catch (const std::exception&) {
    throw ValidationError("bad port in bind address '" + o.bind + "'");
  }
  if (o.turn_limit < 1) throw ValidationError("turn limit must be at least 1");
  if (o.idle_hours <= 0) throw ValidationError("idle hours must be positive");
  write_manifest(o.data_dir, "serve", sub, model_inputs(o.model), o.seed, {join_path(o.data_dir, "sessions")});

  auto rt = std::make_shared<Runtime>(load_runtime(o.model, o.seed));
  ServiceConfig cfg;
  cfg.data_dir = o.data_dir;
  cfg.turn_limit = o.turn_limit;
  cfg.idle_expiry = std::chrono::seconds(static_cast<std::int64_t>(o.idle_hours * 3600.0));
  cfg.seed = o.seed;
  cfg.fudge_lambda = o.lambda;
  const TutorResources res = rt->resources();
  StudyService service(
      cfg, [rt, res](const MethodSpec& m, Level l, std::uint64_t seed) { return make_tutor(m, l, res, seed); },
      rt->tokenizer);
  HttpApi api(service);
  if (!api.bind(host, port)) throw IoError("cannot bind " + o.bind);
  g_api = &api;
  std::signal(SIGINT, [](int) { if (g_api) g_api->stop(); });
  std::signal(SIGTERM, [](int) { if (g_api) g_api->stop(); });
  // Tests and scripts parse this line to find the port.
  std::cout << "listening on " << host << ":" << api.port() << std::endl;
  api.listen_after_bind();
  g_api = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradechat: difficulty-controlled conversation for Japanese learners"};
  app.set_version_flag("--version", GRADECHAT_VERSION);
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; keys are long option names, flags win")
      ->check(CLI::ExistingFile);

  BuildVocabOptions bv;
  auto* s_bv = app.add_subcommand("build-vocab", "Build per-level lexicons from flashcard decks");
  s_bv->add_option("--decks", bv.decks, "Deck directory (n5.json/n5.tsv ...)")->required();
  s_bv->add_option("--corpus", bv.corpus, "Leveled corpus directory for heuristic bins");
  s_bv->add_option("--out", bv.out, "Output directory")->required();

  TrainOptions tr;
  auto* s_tr = app.add_subcommand("train", "Train the n-gram LM and the difficulty predictor");
  s_tr->add_option("--corpus", tr.corpus, "Leveled corpus directory (n5.txt ... n1.txt)");
  s_tr->add_option("--lexicon", tr.lexicon, "Gold lexicon directory from build-vocab");
  s_tr->add_option("--out", tr.out, "Output directory")->required();
  s_tr->add_option("--seed", tr.seed)->capture_default_str();
  s_tr->add_option("--order", tr.order, "n-gram order")->capture_default_str();
  s_tr->add_option("--delta", tr.delta, "Additive smoothing")->capture_default_str();
  s_tr->add_option("--epochs", tr.predictor.epochs)->capture_default_str();
  s_tr->add_option("--batch-size", tr.predictor.batch_size)->capture_default_str();
  s_tr->add_option("--lr", tr.predictor.learning_rate)->capture_default_str();
  s_tr->add_option("--dim", tr.predictor.embedding_dim, "Embedding size")->capture_default_str();
  s_tr->add_option("--weight-decay", tr.predictor.weight_decay)->capture_default_str();
  s_tr->add_option("--predictor-pooling", tr.predictor_pooling, "sum | mean | max")->capture_default_str();
  s_tr->add_flag("--toy", tr.toy, "Write the synthetic toy world's artifacts instead");
  s_tr->add_flag("--toy-two-register", tr.toy_two_register);
  s_tr->add_option("--toy-sentences", tr.toy_sentences)->capture_default_str();

  ChatOptions ch;
  auto* s_ch = app.add_subcommand("chat", "Interactive terminal chat with a tutor");
  s_ch->add_option("--method", ch.method, std::string("Tutor method: ") + kValidMethods)->capture_default_str();
  s_ch->add_option("--lambda", ch.lambda, "FUDGE interpolation weight")->capture_default_str();
  s_ch->add_option("--level", ch.level, "Learner level")->capture_default_str();
  s_ch->add_option("--target-level", ch.target_level, "Control target (defaults to --level)");
  s_ch->add_option("--transcript", ch.transcript, "Append the conversation to this JSONL file");
  s_ch->add_option("--seed", ch.seed)->capture_default_str();
  add_model_options(*s_ch, ch.model);

  SelfchatOptions sc;
  auto* s_sc = app.add_subcommand("selfchat-eval", "Simulated tutor/student dialogues over all level pairs");
  s_sc->add_option("--methods", sc.methods, "Methods, e.g. baseline,fudge:0.8")->delimiter(',')->capture_default_str();
  s_sc->add_option("--turns", sc.turns, "Tutor turns per dialogue")->capture_default_str();
  s_sc->add_option("--pairs", sc.pairs, "all, or tutor:student list such as N5:N5,N5:N4")->capture_default_str();
  s_sc->add_option("--per-pair", sc.per_pair, "Dialogues per level pair")->capture_default_str();
  s_sc->add_option("--jobs", sc.jobs, "Concurrent dialogues")->capture_default_str();
  s_sc->add_option("--seed", sc.seed)->capture_default_str();
  s_sc->add_option("--out", sc.out, "Output directory")->required();
  add_model_options(*s_sc, sc.model);

  ScoreOptions so;
  auto* s_so = app.add_subcommand("score", "Per-method human evaluation table from a study export");
  s_so->add_option("--study", so.study, "Export from GET /export")->required();
  s_so->add_option("--out", so.out, "Output directory")->required();
  add_model_options(*s_so, so.model);

  ReportOptions rp;
  auto* s_rp = app.add_subcommand("report", "Aggregate a transcript file into a report");
  s_rp->add_option("--transcripts", rp.transcripts, "transcripts.jsonl")->required();
  s_rp->add_option("--out", rp.out, "Output directory")->required();
  s_rp->add_flag("--plot", rp.plot, "Also write the per-turn drift series (drift.csv)");
  add_model_options(*s_rp, rp.model);

  ServeOptions sv;
  auto* s_sv = app.add_subcommand("serve", "Run the study HTTP service");
  s_sv->add_option("--bind", sv.bind, "host:port (port 0 picks a free one)")->envname("GRADECHAT_BIND")->capture_default_str();
  s_sv->add_option("--data-dir", sv.data_dir, "Session store")->envname("GRADECHAT_DATA_DIR")->capture_default_str();
  s_sv->add_option("--turn-limit", sv.turn_limit)->capture_default_str();
  s_sv->add_option("--idle-hours", sv.idle_hours, "Session expiry after inactivity")->capture_default_str();
  s_sv->add_option("--lambda", sv.lambda, "FUDGE weight for blind sessions")->capture_default_str();
  s_sv->add_option("--seed", sv.seed)->capture_default_str();
  add_model_options(*s_sv, sv.model);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const Json config = load_config(config_path);
    CLI::App* sub = app.get_subcommands().front();
    apply_config(*sub, config);
    if (sub == s_bv) return cmd_build_vocab(bv, *sub);
    if (sub == s_tr) return cmd_train(tr, *sub);
    if (sub == s_ch) return cmd_chat(ch, *sub);
    if (sub == s_sc) return cmd_selfchat_eval(sc, *sub);
    if (sub == s_so) return cmd_score(so, *sub);
    if (sub == s_rp) return cmd_report(rp, *sub);
    if (sub == s_sv) return cmd_serve(sv, *sub);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "gradechat/selfchat.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <thread>

#include <json.hpp>

#include "gradechat/errors.hpp"
#include "gradechat/rng.hpp"
#include "gradechat/text.hpp"

namespace gradechat {
using nlohmann::json;

const TopicTable& selfchat_topics() {
  static const TopicTable t = {{
      {"introduce yourself (such as your name, job/school, where you're from, etc.)",
       "describe what you usually do in the morning and evening",
       "talk about your favorite food and where you usually eat it"},
      {"explain what you will do this weekend and with whom", "describe your favorite hobby and how often you do it",
       "talk about a typical day at school or work, including schedule and people you meet"},
      {"describe a travel experience: where you went, what you saw, and who you went with",
       "talk about planning a birthday party: location, food, and guests",
       "describe your favorite movie: the story, characters, and why you like it"},
      {"describe a recent news story you found interesting, and why it caught your attention",
       "explain one cultural difference between Japan and your country, and how it affects communication",
       "discuss a challenge people face when communicating in a Japanese workplace"},
      {"discuss recent advancements in regenerative medicine and their ethical implications in Japan",
       "explain the role of quantum computing in future communication technologies and how Japan is preparing "
       "for it",
       "analyze the impact of declining biodiversity on Japan's agricultural sustainability and food security"},
  }};
  return t;
}

const TopicTable& study_topics() {
  static const std::vector<std::string> n5 = {"Summer vacation plans",
                                              "Weekend hobbies or routines",
                                              "Favorite movie or TV show",
                                              "Favorite book, story, or folklore",
                                              "Favorite sport or physical activity",
                                              "A memorable trip or vacation",
                                              "A time you got sick",
                                              "A favorite holiday or festival"};
  static const std::vector<std::string> n4 = {"A time something was stolen",
                                              "A time you were hurt or injured",
                                              "Doing house chores",
                                              "A habit that annoys you",
                                              "A time you reported a crime or accident",
                                              "A favor you asked from someone",
                                              "A time you had to say goodbye",
                                              "A promise or decision you made",
                                              "A future goal that you have",
                                              "A region in Japan you want to visit",
                                              "A famous place you've been to",
                                              "A local food or specialty you like",
                                              "A festival you've attended or want to see",
                                              "Your hometown and what it's known for",
                                              "A memorable travel story",
                                              "A seasonal event you enjoy",
                                              "A travel recommendation for a friend"};
  static const std::vector<std::string> n2 = {
      "Describe a recent news story you found interesting, and why it caught your attention",
      "Explain one cultural difference between Japan and your country, and how it affects communication",
      "Discuss a challenge people face when communicating in a Japanese workplace",
      "Talk about a social issue you care about and why it's important to you",
      "Describe a time you had to be polite in a difficult situation",
      "Compare education systems in Japan and your home country",
      "Share your opinion on using AI or technology in daily life",
      "Describe a tradition or custom from your country and how it's changing",
      "Talk about how your communication style changes depending on the situation",
      "Discuss the pros and cons of working remotely or studying online",
      "Talk about a piece of Japanese literature you like",
      "Discuss how Japanese society is addressing the social issue of aging population"};
  // N3 learners draw from the N4 / early N3 pool; N1 has no pool of its own.
  static const TopicTable t = {{n5, n4, n4, n2, n2}};
  return t;
}

std::vector<DialogueSpec> plan_suite(std::span<const MethodSpec> methods, const TopicTable& topics,
                                     std::size_t dialogues_per_pair, std::size_t turns, std::uint64_t seed) {
  if (methods.empty()) throw ValidationError("no methods to evaluate");
  if (dialogues_per_pair < 1) throw ValidationError("dialogues_per_pair must be at least 1");
  if (turns < 1) throw ValidationError("turns must be at least 1");
  for (Level l : Level::all()) {
    if (topics[static_cast<std::size_t>(l.index())].size() < dialogues_per_pair) {
      throw ValidationError("topic table has fewer than " + std::to_string(dialogues_per_pair) + " topics for " +
                            l.label());
    }
  }
  std::vector<DialogueSpec> specs;
  for (const auto& method : methods) {
    for (Level tutor : Level::all()) {
      for (Level student : Level::all()) {
        const auto& pool = topics[static_cast<std::size_t>(student.index())];
        for (std::size_t i = 0; i < dialogues_per_pair; ++i) {
          // Same seed for the same dialogue slot across methods, so methods are compared on paired draws.
          const auto s = derive_seed(seed, {static_cast<std::uint64_t>(tutor.value()),
                                            static_cast<std::uint64_t>(student.value()), i});
          specs.push_back(DialogueSpec{tutor, student, pool[i], method, turns, s});
        }
      }
    }
  }
  return specs;
}

DialogueTranscript run_dialogue(const DialogueSpec& spec, const Tutor& tutor, const LanguageModel& student_lm,
                                const MetricsDeps& deps, const std::string& language) {
  deps.require_complete();
  DialogueTranscript tr;
  tr.spec = spec;
  ChatContext student_ctx(build_prompt(make_prompt_spec(PromptRole::student, spec.student_level, {}, spec.topic, language)),
                          Role::student, GenerationConfig::student_defaults());
  ChatContext tutor_ctx(tutor.system_prompt(), Role::tutor, GenerationConfig::tutor_defaults());
  std::size_t tutor_turns = 0;
  try {
    for (std::size_t round = 1; round <= spec.turns; ++round) {
      student_ctx.generation.seed = derive_seed(spec.seed, {round, 0x73});
      std::string said = student_lm.complete(student_ctx);
      if (text::trim(said).empty()) throw ValidationError("student produced an empty turn");
      auto student_tokens = deps.tokenizer->tokenize(said);
      student_ctx.add_turn(Role::student, said);
      tutor_ctx.add_turn(Role::student, said);
      tr.turns.push_back(TranscriptTurn{Role::student, std::move(said), std::move(student_tokens), std::nullopt});

      tutor_ctx.generation.seed = derive_seed(spec.seed, {round, 0x74});
      std::string reply = tutor.respond(tutor_ctx).text;
      auto tokens = deps.tokenizer->tokenize(reply);
      TurnMetrics m = score_turn(tokens, tutor_turns + 1, spec.tutor_level, deps);
      student_ctx.add_turn(Role::tutor, reply);
      tutor_ctx.add_turn(Role::tutor, reply);
      tr.turns.push_back(TranscriptTurn{Role::tutor, std::move(reply), std::move(tokens), m});
      ++tutor_turns;
    }
  } catch (const std::exception& e) {
    tr.status = TranscriptStatus::aborted;
    tr.abort_reason = e.what();
  }
  return tr;
}

std::vector<DialogueTranscript> run_suite(std::span<const DialogueSpec> specs, const TutorFactory& make_tutor,
                                          const LanguageModel& student_lm, const MetricsDeps& deps,
                                          std::size_t jobs) {
  deps.require_complete();
  std::vector<DialogueTranscript> out(specs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < specs.size();) {
      try {
        const auto tutor = make_tutor(specs[i]);
        out[i] = run_dialogue(specs[i], *tutor, student_lm, deps);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = specs.size();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, specs.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

SuiteReport aggregate_suite(std::span<const DialogueTranscript> transcripts, const MetricsDeps& deps) {
  SuiteReport report;
  std::map<std::string, std::size_t> row_of;
  std::vector<std::vector<TurnMetrics>> pooled;
  for (const auto& tr : transcripts) {
    const std::string label = tr.spec.method.label();
    auto [it, inserted] = row_of.emplace(label, report.rows.size());
    if (inserted) {
      report.rows.push_back(MethodRow{label, std::nullopt, 0, 0, {}});
      pooled.emplace_back();
    }
    MethodRow& row = report.rows[it->second];
    if (tr.status == TranscriptStatus::aborted) {
      ++row.aborted;
      continue;
    }
    ++row.complete;
    for (const auto* m : tr.tutor_metrics()) pooled[it->second].push_back(*m);
  }
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    auto& row = report.rows[r];
    const auto& turns = pooled[r];
    if (turns.empty()) continue;
    row.report = aggregate_turns(row.method, turns, deps);
    std::map<std::size_t, std::pair<double, std::size_t>> by_turn;
    for (const auto& t : turns) {
      auto& acc = by_turn[t.turn_index];
      acc.first += t.tmr;
      ++acc.second;
    }
    for (const auto& [idx, acc] : by_turn) {
      row.drift.push_back(DriftPoint{idx, acc.first / static_cast<double>(acc.second), acc.second});
    }
  }
  return report;
}

// ---- Persistence ------------------------------------------------------------

namespace {

json metrics_to_json(const TurnMetrics& m) {
  json j = {{"turn_index", m.turn_index}, {"length", m.length},   {"cnt_above", m.cnt_above},
            {"cnt_unbinned", m.cnt_unbinned}, {"tmr", m.tmr},     {"ppl", m.ppl},
            {"div3", m.div3},             {"difficulty", m.difficulty}, {"control_error", m.control_error}};
  if (m.readability) j["readability"] = *m.readability;
  return j;
}

double number_or_inf(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
}

TurnMetrics metrics_from_json(const json& j) {
  TurnMetrics m;
  m.turn_index = j.at("turn_index");
  m.length = j.at("length");
  m.cnt_above = j.at("cnt_above");
  m.cnt_unbinned = j.at("cnt_unbinned");
  m.tmr = j.at("tmr");
  m.ppl = number_or_inf(j.at("ppl"));
  m.div3 = j.at("div3");
  m.difficulty = j.at("difficulty");
  m.control_error = j.at("control_error");
  if (j.contains("readability")) m.readability = j.at("readability").get<double>();
  return m;
}

}  // namespace

std::string transcript_to_jsonl(const DialogueTranscript& tr) {
  json turns = json::array();
  for (const auto& t : tr.turns) {
    json toks = json::array();
    for (const auto& k : t.tokens.tokens) {
      toks.push_back({{"surface", k.surface}, {"lemma", k.lemma}, {"start", k.span.start}, {"end", k.span.end}});
    }
    json jt = {{"role", to_string(t.role)}, {"text", t.text}, {"tokens", toks}};
    if (t.metrics) jt["metrics"] = metrics_to_json(*t.metrics);
    turns.push_back(std::move(jt));
  }
  const auto& s = tr.spec;
  json j = {{"schema_version", kTranscriptSchemaVersion},
            {"spec",
             {{"tutor_level", s.tutor_level.label()},
              {"student_level", s.student_level.label()},
              {"topic", s.topic},
              {"method", to_string(s.method.kind)},
              {"lambda", s.method.lambda},
              {"label", s.method.label()},
              {"turns", s.turns},
              {"seed", s.seed}}},
            {"status", tr.status == TranscriptStatus::complete ? "complete" : "aborted"},
            {"abort_reason", tr.abort_reason},
            {"turns", turns}};
  return j.dump();
}

DialogueTranscript transcript_from_jsonl(std::string_view line) {
  try {
    const json j = json::parse(line);
    if (j.at("schema_version") != kTranscriptSchemaVersion) {
      throw ValidationError("unsupported transcript schema version " + j.at("schema_version").dump());
    }
    DialogueTranscript tr;
    const auto& s = j.at("spec");
    tr.spec.tutor_level = Level::from_label(s.at("tutor_level").get<std::string>());
    tr.spec.student_level = Level::from_label(s.at("student_level").get<std::string>());
    tr.spec.topic = s.at("topic");
    const auto kind = method_from_string(s.at("method").get<std::string>());
    if (!kind) throw ValidationError("unknown method in transcript");
    tr.spec.method = MethodSpec{*kind, s.at("lambda").get<double>()};
    tr.spec.turns = s.at("turns");
    tr.spec.seed = s.at("seed");
    const std::string status = j.at("status");
    tr.status = status == "complete" ? TranscriptStatus::complete : TranscriptStatus::aborted;
    tr.abort_reason = j.value("abort_reason", "");
    for (const auto& jt : j.at("turns")) {
      TranscriptTurn t{role_from_string(jt.at("role").get<std::string>()), jt.at("text"), {}, std::nullopt};
      t.tokens.source = t.text;
      for (const auto& k : jt.at("tokens")) {
        t.tokens.tokens.push_back(Token{k.at("surface"), k.at("lemma"), Span{k.at("start"), k.at("end")}, true});
      }
      if (jt.contains("metrics")) t.metrics = metrics_from_json(jt.at("metrics"));
      tr.turns.push_back(std::move(t));
    }
    return tr;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed transcript record: ") + e.what());
  }
}

void append_transcript(const std::string& path, const DialogueTranscript& tr) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  if (!f) throw IoError("cannot open '" + path + "' for appending");
  f << transcript_to_jsonl(tr) << '\n';
  if (!f) throw IoError("write to '" + path + "' failed");
}

std::vector<DialogueTranscript> load_transcripts(const std::string& path) {
  std::vector<DialogueTranscript> out;
  for (const auto& line : text::split_lines(text::read_file(path))) {
    if (text::trim(line).empty()) continue;
    out.push_back(transcript_from_jsonl(line));
  }
  return out;
}

std::string suite_report_json(const SuiteReport& report) {
  json rows = json::array();
  json drift = json::object();
  for (const auto& row : report.rows) {
    json r = {{"Model", row.method}, {"complete", row.complete}, {"aborted", row.aborted}};
    if (row.report) {
      const auto& m = *row.report;
      r["Avg. Length"] = m.avg_length;
      r["Avg. PPL"] = m.avg_ppl;
      r["div@3"] = m.div3;
      r["Readability"] = m.readability ? json(*m.readability) : json(nullptr);
      r["readability_scorer"] = m.readability_scorer;
      r["TMR"] = m.tmr_percent;
      r["ControlError"] = m.control_error;
      r["n_utterances"] = m.n_utterances;
      r["score_mode"] = m.score_mode;
      r["tmr_pooling"] = m.tmr_pooling;
      r["length_unit"] = "content tokens";
    } else {
      r["absent"] = true;
    }
    rows.push_back(std::move(r));
    json series = json::array();
    for (const auto& d : row.drift) series.push_back({{"turn_index", d.turn_index}, {"mean_tmr", d.mean_tmr}, {"n", d.n}});
    drift[row.method] = std::move(series);
  }
  json columns = json::array();
  for (const char* c : kReportColumns) columns.push_back(c);
  return json{{"columns", columns}, {"rows", rows}, {"drift", drift}}.dump(2) + "\n";
}

std::string suite_report_csv(const SuiteReport& report) {
  std::string out;
  for (std::size_t i = 0; i < std::size(kReportColumns); ++i) {
    if (i) out += ',';
    out += kReportColumns[i];
  }
  out += '\n';
  for (const auto& row : report.rows) {
    if (row.report) {
      const std::string csv = reports_to_csv(std::span<const MetricsReport>(&*row.report, 1));
      out += csv.substr(csv.find('\n') + 1);
    } else {
      out += row.method + ",,,,,,\n";
    }
  }
  return out;
}

std::string drift_csv(const SuiteReport& report) {
  std::string out = "method,turn_index,mean_tmr,n\n";
  for (const auto& row : report.rows) {
    for (const auto& d : row.drift) {
      out += row.method + ',' + std::to_string(d.turn_index) + ',' + format_number(d.mean_tmr) + ',' +
             std::to_string(d.n) + '\n';
    }
  }
  return out;
}

std::vector<std::string> write_suite_report(const SuiteReport& report, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const auto p = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
  text::write_file(p("report.json"), suite_report_json(report));
  text::write_file(p("report.csv"), suite_report_csv(report));
  text::write_file(p("drift.csv"), drift_csv(report));
  return {p("report.json"), p("report.csv"), p("drift.csv")};
}

}  // namespace gradechat

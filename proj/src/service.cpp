#include "gradechat/service.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <random>
#include <set>

#include "gradechat/errors.hpp"
#include "gradechat/rng.hpp"
#include "gradechat/text.hpp"

namespace gradechat {
namespace fs = std::filesystem;

namespace {

constexpr std::array<MethodKind, 4> kStudyMethods = {MethodKind::baseline, MethodKind::detailed,
                                                     MethodKind::overgenerate, MethodKind::fudge};

std::string random_id() {
  std::random_device rd;
  std::uint64_t hi = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  std::uint64_t lo = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  char buf[33];
  std::snprintf(buf, sizeof buf, "%016llx%016llx", static_cast<unsigned long long>(hi),
                static_cast<unsigned long long>(lo));
  return buf;
}

std::uint64_t text_seed(std::string_view s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

void fsync_dir(const std::string& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

void write_all(int fd, const std::string& data, const std::string& path) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t w = ::write(fd, data.data() + off, data.size() - off);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw IoError("write to '" + path + "' failed: " + std::strerror(errno));
    }
    off += static_cast<std::size_t>(w);
  }
}

const Json& field(const Json& body, const char* name) {
  if (!body.is_object() || !body.contains(name)) throw ValidationError(std::string("missing field '") + name + "'");
  return body.at(name);
}

std::string string_field(const Json& body, const char* name) {
  const Json& v = field(body, name);
  if (!v.is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

Json spans_to_json(const std::vector<Span>& spans) {
  Json a = Json::array();
  for (const auto& s : spans) a.push_back({{"start", s.start}, {"end", s.end}});
  return a;
}

Json annotation_to_json(const StudyAnnotation& a) {
  Json j = {{"id", a.id},
            {"turn_index", a.turn_index},
            {"understood_overall", a.understood_overall},
            {"spans", spans_to_json(a.spans)},
            {"total_tokens", a.total_tokens},
            {"missed", a.missed},
            {"tmr", a.tmr},
            {"at", a.at}};
  j["supersedes"] = a.supersedes ? Json(*a.supersedes) : Json(nullptr);
  return j;
}

StudyAnnotation annotation_from_json(const Json& j) {
  StudyAnnotation a;
  a.id = j.at("id");
  a.turn_index = j.at("turn_index");
  a.understood_overall = j.at("understood_overall");
  for (const auto& s : j.at("spans")) a.spans.push_back(Span{s.at("start"), s.at("end")});
  a.total_tokens = j.at("total_tokens");
  a.missed = j.at("missed");
  a.tmr = j.at("tmr");
  a.at = j.at("at");
  if (j.contains("supersedes") && !j.at("supersedes").is_null()) a.supersedes = j.at("supersedes").get<std::size_t>();
  return a;
}

Json survey_to_json(const std::array<int, 5>& answers) {
  Json j = Json::object();
  for (std::size_t i = 0; i < answers.size(); ++i) j[kSurveyQuestions[i]] = answers[i];
  return j;
}

}  // namespace

Json session_to_json(const StudySession& s) {
  Json turns = Json::array();
  for (const auto& t : s.turns) turns.push_back({{"index", t.index}, {"student", t.student}, {"tutor", t.tutor}, {"at", t.at}});
  Json anns = Json::array();
  for (const auto& a : s.annotations) anns.push_back(annotation_to_json(a));
  return Json{{"id", s.id},
              {"participant", s.participant},
              {"level", s.level.label()},
              {"method", to_string(s.method.kind)},
              {"lambda", s.method.lambda},
              {"blind", s.blind},
              {"label", s.label},
              {"offered_topics", s.offered_topics},
              {"topic", s.topic ? Json(*s.topic) : Json(nullptr)},
              {"turns", turns},
              {"annotations", anns},
              {"survey", s.survey ? survey_to_json(*s.survey) : Json(nullptr)},
              {"created_at", s.created_at},
              {"last_active", s.last_active}};
}

StudySession session_from_json(const Json& j) {
  StudySession s;
  s.id = j.at("id");
  s.participant = j.at("participant");
  s.level = Level::from_label(j.at("level").get<std::string>());
  const auto kind = method_from_string(j.at("method").get<std::string>());
  if (!kind) throw ValidationError("unknown method in session record");
  s.method = MethodSpec{*kind, j.at("lambda").get<double>()};
  s.blind = j.at("blind");
  s.label = j.at("label");
  s.offered_topics = j.at("offered_topics").get<std::vector<std::string>>();
  if (!j.at("topic").is_null()) s.topic = j.at("topic").get<std::string>();
  for (const auto& t : j.at("turns")) s.turns.push_back(StudyTurn{t.at("index"), t.at("student"), t.at("tutor"), t.at("at")});
  for (const auto& a : j.at("annotations")) s.annotations.push_back(annotation_from_json(a));
  if (!j.at("survey").is_null()) {
    std::array<int, 5> answers{};
    for (std::size_t i = 0; i < answers.size(); ++i) answers[i] = j.at("survey").at(kSurveyQuestions[i]);
    s.survey = answers;
  }
  s.created_at = j.at("created_at");
  s.last_active = j.at("last_active");
  return s;
}

// ---- StudyService -----------------------------------------------------------

StudyService::StudyService(ServiceConfig config, TutorProvider tutors, std::shared_ptr<const Tokenizer> tokenizer,
                           ClockFn clock)
    : config_(std::move(config)), tutors_(std::move(tutors)), tokenizer_(std::move(tokenizer)), clock_(std::move(clock)) {
  if (config_.data_dir.empty()) throw ValidationError("service needs a data directory");
  if (!tutors_) throw ValidationError("service needs a tutor provider");
  if (!tokenizer_) throw ValidationError("service needs a tokenizer");
  if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
  std::error_code ec;
  fs::create_directories(fs::path(config_.data_dir) / "sessions", ec);
  if (ec) throw IoError("cannot create data directory '" + config_.data_dir + "': " + ec.message());
  load();
}

std::string StudyService::log_path(const std::string& id) const {
  return (fs::path(config_.data_dir) / "sessions" / (id + ".jsonl")).string();
}

std::int64_t StudyService::now_s() const {
  return std::chrono::duration_cast<std::chrono::seconds>(clock_().time_since_epoch()).count();
}

std::string StudyService::now_iso() const {
  const std::time_t t = static_cast<std::time_t>(now_s());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

// Applies one logged event to the in-memory record.
void apply_event(StudySession& s, const Json& e) {
  const std::string type = e.at("type");
  if (type == "created" || type == "snapshot") {
    const std::size_t events = s.log_events;
    s = session_from_json(e.at("session"));
    s.log_events = events;
  } else if (type == "topic") {
    s.topic = e.at("topic").get<std::string>();
  } else if (type == "turn") {
    s.turns.push_back(StudyTurn{e.at("index"), e.at("student"), e.at("tutor"), e.at("at")});
  } else if (type == "annotation") {
    s.annotations.push_back(annotation_from_json(e.at("annotation")));
  } else if (type == "survey") {
    std::array<int, 5> answers{};
    for (std::size_t i = 0; i < answers.size(); ++i) answers[i] = e.at("answers").at(kSurveyQuestions[i]);
    s.survey = answers;
  } else {
    throw ValidationError("unknown event type '" + type + "'");
  }
  if (e.contains("ts")) s.last_active = e.at("ts");
  ++s.log_events;
}

}  // namespace

void StudyService::load() {
  const fs::path dir = fs::path(config_.data_dir) / "sessions";
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const auto lines = text::split_lines(text::read_file(p.string()));
    auto slot = std::make_shared<Slot>();
    bool created = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (text::trim(lines[i]).empty()) continue;
      Json e;
      try {
        e = Json::parse(lines[i]);
      } catch (const Json::exception&) {
        // A torn final line from a crash mid-append was never acknowledged.
        if (i + 1 == lines.size()) break;
        throw ValidationError("corrupt event log '" + p.string() + "' at line " + std::to_string(i + 1));
      }
      apply_event(slot->data, e);
      created = true;
    }
    if (created) sessions_.emplace(slot->data.id, slot);
  }
}

void StudyService::append_event(Slot& slot, const Json& event) {
  const std::string path = log_path(slot.data.id);
  const bool fresh = !fs::exists(path);
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw IoError("cannot open event log '" + path + "': " + std::strerror(errno));
  try {
    write_all(fd, event.dump() + "\n", path);
    if (::fsync(fd) != 0) throw IoError("fsync of '" + path + "' failed: " + std::strerror(errno));
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  if (fresh) fsync_dir(fs::path(path).parent_path().string());
}

std::shared_ptr<StudyService::Slot> StudyService::slot(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

void StudyService::check_active(const StudySession& s) const {
  if (now_s() - s.last_active > config_.idle_expiry.count()) {
    throw ExpiredError("session '" + s.id + "' expired after inactivity");
  }
}

Json StudyService::session_view(const StudySession& s) const {
  Json turns = Json::array();
  for (const auto& t : s.turns) turns.push_back({{"turn_index", t.index}, {"student", t.student}, {"tutor", t.tutor}});
  Json anns = Json::array();
  for (const auto& a : s.annotations) anns.push_back(annotation_to_json(a));
  Json j = {{"session_id", s.id},
            {"participant", s.participant},
            {"level", s.level.label()},
            {"blind", s.blind},
            {"offered_topics", s.offered_topics},
            {"topic", s.topic ? Json(*s.topic) : Json(nullptr)},
            {"turn_limit", config_.turn_limit},
            {"turns", turns},
            {"annotations", anns},
            {"survey", s.survey ? survey_to_json(*s.survey) : Json(nullptr)},
            {"created_at", s.created_at},
            {"expired", now_s() - s.last_active > config_.idle_expiry.count()}};
  if (s.blind) {
    j["label"] = s.label;
  } else {
    j["method"] = s.method.label();
  }
  return j;
}

Json StudyService::create_session(const Json& body) {
  const std::string participant = text::trim(string_field(body, "participant"));
  if (participant.empty()) throw ValidationError("participant must not be empty");
  const auto level = Level::parse(string_field(body, "level"));
  if (!level) throw ValidationError("level must be one of N5, N4, N3, N2, N1");
  if (!body.contains("consent") || body.at("consent") != true) {
    throw ValidationError("consent must be acknowledged (\"consent\": true)");
  }
  const std::string method_field = body.contains("method") ? string_field(body, "method") : "blind";

  StudySession s;
  s.id = random_id();
  s.participant = participant;
  s.level = *level;
  s.created_at = now_iso();
  s.last_active = now_s();

  std::set<std::string> used;
  std::size_t blind_before = 0;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, other] : sessions_) {
      std::lock_guard l2(other->mu);
      if (other->data.participant != participant) continue;
      if (other->data.topic) used.insert(*other->data.topic);
      if (other->data.blind) ++blind_before;
    }
  }

  if (method_field == "blind") {
    // Each participant meets the four methods in a private shuffled order,
    // labelled A, B, C, D in the order they are met.
    std::array<MethodKind, 4> order = kStudyMethods;
    Rng rng(derive_seed(config_.seed, {text_seed(participant), 0x626c696e64ULL}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t k = blind_before % order.size();
    s.method = MethodSpec{order[k], config_.fudge_lambda};
    s.blind = true;
    s.label = std::string(1, static_cast<char>('A' + k));
  } else {
    s.method = MethodSpec::parse(method_field);
    if (s.method.kind == MethodKind::fudge && method_field.find(':') == std::string::npos) {
      s.method.lambda = config_.fudge_lambda;
    }
  }

  const auto& pool = study_topics()[static_cast<std::size_t>(level->index())];
  std::vector<std::string> fresh;
  for (const auto& t : pool) {
    if (!used.count(t)) fresh.push_back(t);
  }
  if (fresh.empty()) throw ConflictError("no unused topics left for this participant at " + level->label());
  Rng rng(derive_seed(config_.seed, {text_seed(s.id), 0x746f706963ULL}));
  const std::size_t take = std::min<std::size_t>(3, fresh.size());
  for (std::size_t i = 0; i < take; ++i) std::swap(fresh[i], fresh[i + rng.below(fresh.size() - i)]);
  fresh.resize(take);
  s.offered_topics = fresh;

  // Fail now rather than on the first turn when the method cannot run.
  tutors_(s.method, s.level, derive_seed(config_.seed, {text_seed(s.id)}));

  auto slot = std::make_shared<Slot>();
  slot->data = s;
  append_event(*slot, Json{{"type", "created"}, {"ts", s.last_active}, {"session", session_to_json(s)}});
  slot->data.log_events = 1;
  Json view = session_view(slot->data);
  {
    std::lock_guard lock(mu_);
    sessions_.emplace(s.id, slot);
  }
  return view;
}

Json StudyService::choose_topic(const std::string& id, const Json& body) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  check_active(sl->data);
  const std::string topic = string_field(body, "topic");
  if (sl->data.topic) throw ConflictError("topic already chosen");
  const auto& offered = sl->data.offered_topics;
  if (std::find(offered.begin(), offered.end(), topic) == offered.end()) {
    throw ValidationError("topic is not one of the offered topics");
  }
  const auto ts = now_s();
  append_event(*sl, Json{{"type", "topic"}, {"ts", ts}, {"topic", topic}});
  sl->data.topic = topic;
  sl->data.last_active = ts;
  ++sl->data.log_events;
  return session_view(sl->data);
}

Json StudyService::get_session(const std::string& id) const {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  return session_view(sl->data);
}

Json StudyService::post_turn(const std::string& id, const Json& body) {
  auto sl = slot(id);
  std::unique_lock turn_lock(sl->turn_mu, std::try_to_lock);
  if (!turn_lock.owns_lock()) throw ConflictError("another turn is already in progress for this session");

  const std::string student = string_field(body, "text");
  if (text::trim(student).empty()) throw ValidationError("text must not be empty");
  if (!text::is_valid_utf8(student)) throw ValidationError("text is not valid UTF-8");

  StudySession snapshot;
  {
    std::lock_guard lock(sl->mu);
    check_active(sl->data);
    if (sl->data.turns.size() >= config_.turn_limit) {
      throw ConflictError("turn limit of " + std::to_string(config_.turn_limit) + " reached");
    }
    snapshot = sl->data;
  }

  const std::uint64_t seed = derive_seed(config_.seed, {text_seed(snapshot.id)});
  const auto tutor = tutors_(snapshot.method, snapshot.level, seed);
  ChatContext ctx(tutor->system_prompt(), Role::tutor, GenerationConfig::tutor_defaults());
  for (const auto& t : snapshot.turns) {
    ctx.add_turn(Role::student, t.student);
    ctx.add_turn(Role::tutor, t.tutor);
  }
  ctx.add_turn(Role::student, student);
  const std::size_t index = snapshot.turns.size() + 1;
  ctx.generation.seed = derive_seed(seed, {index});
  // A generation failure propagates before anything is written.
  const std::string reply = tutor->respond(ctx).text;

  std::lock_guard lock(sl->mu);
  const auto ts = now_s();
  StudyTurn turn{index, student, reply, now_iso()};
  append_event(*sl, Json{{"type", "turn"}, {"ts", ts}, {"index", index}, {"student", student}, {"tutor", reply}, {"at", turn.at}});
  sl->data.turns.push_back(turn);
  sl->data.last_active = ts;
  ++sl->data.log_events;
  if (sl->data.log_events >= config_.compact_after_events) {
    // Compaction needs the slot lock, which we already hold.
    const std::string path = log_path(id);
    const std::string tmp = path + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      write_all(fd, Json{{"type", "snapshot"}, {"ts", ts}, {"session", session_to_json(sl->data)}}.dump() + "\n", tmp);
      ::fsync(fd);
      ::close(fd);
      fs::rename(tmp, path);
      fsync_dir(fs::path(path).parent_path().string());
      sl->data.log_events = 1;
    }
  }
  return Json{{"turn_index", index},
              {"tutor", reply},
              {"remaining_turns", config_.turn_limit - index}};
}

Json StudyService::post_annotation(const std::string& id, const Json& body) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  check_active(sl->data);
  const Json& ti = field(body, "turn_index");
  if (!ti.is_number_integer() || ti.get<long long>() < 1) throw ValidationError("turn_index must be a positive integer");
  const auto turn_index = ti.get<std::size_t>();
  if (turn_index > sl->data.turns.size()) throw ValidationError("turn " + std::to_string(turn_index) + " does not exist");
  bool understood = true;
  if (body.contains("understood_overall")) {
    if (!body.at("understood_overall").is_boolean()) throw ValidationError("understood_overall must be a boolean");
    understood = body.at("understood_overall");
  }
  std::vector<Span> spans;
  if (body.contains("spans")) {
    if (!body.at("spans").is_array()) throw ValidationError("spans must be an array");
    for (const auto& sp : body.at("spans")) {
      // In-process callers build signed integers; parsed JSON yields unsigned ones.
      const auto offset_ok = [&](const char* k) {
        return sp.contains(k) && sp.at(k).is_number_integer() && sp.at(k).get<long long>() >= 0;
      };
      if (!sp.is_object() || !offset_ok("start") || !offset_ok("end")) {
        throw ValidationError("each span needs non-negative integer start and end");
      }
      spans.push_back(Span{sp.at("start").get<std::size_t>(), sp.at("end").get<std::size_t>()});
    }
  }
  std::optional<std::size_t> supersedes;
  if (body.contains("supersedes") && !body.at("supersedes").is_null()) {
    supersedes = body.at("supersedes").get<std::size_t>();
    const auto& anns = sl->data.annotations;
    const bool ok = std::any_of(anns.begin(), anns.end(), [&](const StudyAnnotation& a) {
      return a.id == *supersedes && a.turn_index == turn_index;
    });
    if (!ok) throw ValidationError("supersedes must name an earlier annotation of the same turn");
  }

  const std::string& tutor_text = sl->data.turns[turn_index - 1].tutor;
  const TokenizedUtterance u = tokenizer_->tokenize(tutor_text);
  const TmrBreakdown b = tmr_from_annotation(u, spans);  // validates the ranges

  StudyAnnotation a;
  a.id = sl->data.annotations.size() + 1;
  a.turn_index = turn_index;
  a.understood_overall = understood;
  a.spans = spans;
  a.total_tokens = b.total_tokens;
  a.missed = b.cnt_above;
  a.tmr = b.tmr;
  a.supersedes = supersedes;
  a.at = now_iso();
  const auto ts = now_s();
  append_event(*sl, Json{{"type", "annotation"}, {"ts", ts}, {"annotation", annotation_to_json(a)}});
  sl->data.annotations.push_back(a);
  sl->data.last_active = ts;
  ++sl->data.log_events;
  Json out = annotation_to_json(a);
  out["annotation_id"] = a.id;
  return out;
}

Json StudyService::post_survey(const std::string& id, const Json& body) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  check_active(sl->data);
  if (sl->data.turns.empty()) throw ValidationError("survey needs at least one completed turn");
  if (sl->data.survey) throw ConflictError("survey already submitted for this session");
  std::array<int, 5> answers{};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    const Json& v = field(body, kSurveyQuestions[i]);
    if (!v.is_number_integer()) throw ValidationError(std::string("answer '") + kSurveyQuestions[i] + "' must be an integer");
    const auto x = v.get<long long>();
    if (x < 1 || x > 10) throw ValidationError(std::string("answer '") + kSurveyQuestions[i] + "' must be in 1..10");
    answers[i] = static_cast<int>(x);
  }
  const auto ts = now_s();
  append_event(*sl, Json{{"type", "survey"}, {"ts", ts}, {"answers", survey_to_json(answers)}});
  sl->data.survey = answers;
  sl->data.last_active = ts;
  ++sl->data.log_events;
  return Json{{"accepted", true}, {"survey", survey_to_json(answers)}};
}

Json StudyService::export_study() const {
  std::vector<StudySession> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& [id, sl] : sessions_) {
      std::lock_guard l2(sl->mu);
      all.push_back(sl->data);
    }
  }
  std::sort(all.begin(), all.end(), [](const StudySession& a, const StudySession& b) {
    return std::tie(a.created_at, a.id) < std::tie(b.created_at, b.id);
  });
  std::map<std::string, std::string> alias;
  Json sessions = Json::array();
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& s = all[i];
    auto [it, inserted] = alias.emplace(s.participant, "P" + std::to_string(alias.size() + 1));
    Json turns = Json::array();
    for (const auto& t : s.turns) {
      const auto u = tokenizer_->tokenize(t.tutor);
      turns.push_back({{"turn_index", t.index}, {"student", t.student}, {"tutor", t.tutor}, {"tutor_tokens", u.size()}});
    }
    Json anns = Json::array();
    for (const auto& a : s.annotations) {
      Json ja = annotation_to_json(a);
      ja.erase("at");
      anns.push_back(std::move(ja));
    }
    sessions.push_back({{"session", "S" + std::to_string(i + 1)},
                        {"participant", it->second},
                        {"level", s.level.label()},
                        {"method", to_string(s.method.kind)},
                        {"method_label", s.method.label()},
                        {"blind_label", s.blind ? Json(s.label) : Json(nullptr)},
                        {"topic", s.topic ? Json(*s.topic) : Json(nullptr)},
                        {"turns", turns},
                        {"annotations", anns},
                        {"survey", s.survey ? survey_to_json(*s.survey) : Json(nullptr)}});
  }
  Json questions = Json::array();
  for (const char* q : kSurveyQuestions) questions.push_back(q);
  return Json{{"format", "gradechat-study-export"},
              {"version", 1},
              {"survey_questions", questions},
              {"sessions", sessions}};
}

std::string StudyService::export_study_text() const { return export_study().dump(2) + "\n"; }

std::optional<StudySession> StudyService::session(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) return std::nullopt;
  std::lock_guard l2(it->second->mu);
  return it->second->data;
}

void StudyService::compact(const std::string& id) {
  auto sl = slot(id);
  std::lock_guard lock(sl->mu);
  const std::string path = log_path(id);
  const std::string tmp = path + ".tmp";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw IoError("cannot write '" + tmp + "': " + std::strerror(errno));
  try {
    write_all(fd, Json{{"type", "snapshot"}, {"ts", sl->data.last_active}, {"session", session_to_json(sl->data)}}.dump() + "\n", tmp);
    if (::fsync(fd) != 0) throw IoError("fsync of '" + tmp + "' failed");
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace '" + path + "': " + ec.message());
  fsync_dir(fs::path(path).parent_path().string());
  sl->data.log_events = 1;
}

std::size_t StudyService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

int http_status(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::validation: return 400;
    case ErrorKind::not_found: return 404;
    case ErrorKind::conflict: return 409;
    case ErrorKind::expired: return 410;
    case ErrorKind::capability: return 501;
    case ErrorKind::transport: return 502;
    case ErrorKind::io: return 500;
  }
  return 500;
}

}  // namespace gradechat

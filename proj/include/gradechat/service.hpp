#pragma once

#include <array>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradechat/control.hpp"
#include "gradechat/metrics.hpp"
#include "gradechat/selfchat.hpp"

namespace httplib {
class Server;
}

namespace gradechat {

using Json = nlohmann::json;

inline constexpr std::array<const char*, 5> kSurveyQuestions = {"understand", "effort", "comfort",
                                                                "natural", "again"};

struct ServiceConfig {
  std::string data_dir;
  std::size_t turn_limit = 6;
  std::chrono::seconds idle_expiry{24 * 3600};
  std::uint64_t seed = 0;
  double fudge_lambda = 0.8;
  // Rewrite a session log as one snapshot once it holds this many events.
  std::size_t compact_after_events = 32;
  std::string language = "Japanese";
};

struct StudyTurn {
  std::size_t index = 0;  // 1-based tutor turn
  std::string student;
  std::string tutor;
  std::string at;
};

struct StudyAnnotation {
  std::size_t id = 0;
  std::size_t turn_index = 0;
  bool understood_overall = true;
  std::vector<Span> spans;
  std::size_t total_tokens = 0;
  std::size_t missed = 0;
  double tmr = 0.0;
  std::optional<std::size_t> supersedes;
  std::string at;
};

struct StudySession {
  std::string id;
  std::string participant;
  Level level;
  MethodSpec method;
  bool blind = false;
  std::string label;  // A–D in blind mode
  std::vector<std::string> offered_topics;
  std::optional<std::string> topic;
  std::vector<StudyTurn> turns;
  std::vector<StudyAnnotation> annotations;
  std::optional<std::array<int, 5>> survey;
  std::string created_at;
  std::int64_t last_active = 0;  // unix seconds
  std::size_t log_events = 0;
};

using TutorProvider =
    std::function<std::unique_ptr<Tutor>(const MethodSpec&, Level, std::uint64_t seed)>;
using ClockFn = std::function<std::chrono::system_clock::time_point()>;

// Human-study backend. Every mutation is appended (and fsync'd) to the
// session's event log before the call returns.
class StudyService {
 public:
  StudyService(ServiceConfig config, TutorProvider tutors, std::shared_ptr<const Tokenizer> tokenizer,
               ClockFn clock = {});

  // Request/response bodies are the JSON documents of docs/api.md.
  Json create_session(const Json& body);
  Json choose_topic(const std::string& session_id, const Json& body);
  Json get_session(const std::string& session_id) const;
  Json post_turn(const std::string& session_id, const Json& body);
  Json post_annotation(const std::string& session_id, const Json& body);
  Json post_survey(const std::string& session_id, const Json& body);
  Json export_study() const;
  std::string export_study_text() const;

  std::optional<StudySession> session(const std::string& session_id) const;
  void compact(const std::string& session_id);
  std::size_t session_count() const;

 private:
  struct Slot {
    std::mutex turn_mu;
    mutable std::mutex mu;
    StudySession data;
  };

  std::shared_ptr<Slot> slot(const std::string& session_id) const;
  void load();
  void append_event(Slot& slot, const Json& event);
  std::string log_path(const std::string& session_id) const;
  std::string now_iso() const;
  std::int64_t now_s() const;
  void check_active(const StudySession& s) const;
  Json session_view(const StudySession& s) const;

  ServiceConfig config_;
  TutorProvider tutors_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  ClockFn clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Slot>> sessions_;
};

Json session_to_json(const StudySession& s);
StudySession session_from_json(const Json& j);

// HTTP front end over StudyService (cpp-httplib).
class HttpApi {
 public:
  explicit HttpApi(StudyService& service);
  ~HttpApi();
  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  // Blocks until stop(). Port 0 picks a free port (see port()).
  bool listen(const std::string& host, int port);
  bool bind(const std::string& host, int port);
  bool listen_after_bind();
  int port() const { return port_; }
  void stop();

 private:
  StudyService& service_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
};

int http_status(const Error& e);

}  // namespace gradechat

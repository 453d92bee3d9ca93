// Eigen must be seen before httplib: <resolv.h> defines a _res macro.
#include "gradechat/service.hpp"

#include <httplib.h>

namespace gradechat {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  send_json(res, status, Json{{"error", kind}, {"message", message}});
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::capability: return "capability";
    case ErrorKind::io: return "io";
    case ErrorKind::transport: return "transport";
    case ErrorKind::not_found: return "not_found";
    case ErrorKind::conflict: return "conflict";
    case ErrorKind::expired: return "expired";
  }
  return "internal";
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    Json j = Json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

// Wraps a handler so library errors become JSON error documents.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e), kind_name(e.kind()), e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, "validation", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

HttpApi::HttpApi(StudyService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  auto& s = *server_;
  StudyService* svc = &service_;
  const std::string id = R"(([0-9a-fA-F]{1,64}))";

  s.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, Json{{"status", "ok"}});
        }));
  s.Post("/sessions", guarded([svc](const httplib::Request& req, httplib::Response& res) {
           send_json(res, 201, svc->create_session(parse_body(req)));
         }));
  s.Get("/sessions/" + id, guarded([svc](const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, svc->get_session(req.matches[1]));
        }));
  s.Post("/sessions/" + id + "/topic", guarded([svc](const httplib::Request& req, httplib::Response& res) {
           send_json(res, 200, svc->choose_topic(req.matches[1], parse_body(req)));
         }));
  s.Post("/sessions/" + id + "/turns", guarded([svc](const httplib::Request& req, httplib::Response& res) {
           send_json(res, 201, svc->post_turn(req.matches[1], parse_body(req)));
         }));
  s.Post("/sessions/" + id + "/annotations", guarded([svc](const httplib::Request& req, httplib::Response& res) {
           send_json(res, 201, svc->post_annotation(req.matches[1], parse_body(req)));
         }));
  s.Post("/sessions/" + id + "/survey", guarded([svc](const httplib::Request& req, httplib::Response& res) {
           send_json(res, 201, svc->post_survey(req.matches[1], parse_body(req)));
         }));
  s.Get("/export", guarded([svc](const httplib::Request&, httplib::Response& res) {
          res.status = 200;
          res.set_content(svc->export_study_text(), "application/json; charset=utf-8");
        }));
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, res.status == 404 ? "not_found" : "http", httplib::status_message(res.status));
    }
  });
}

HttpApi::~HttpApi() { stop(); }

bool HttpApi::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
    return port_ > 0;
  }
  if (!server_->bind_to_port(host, port)) return false;
  port_ = port;
  return true;
}

bool HttpApi::listen_after_bind() { return server_->listen_after_bind(); }

bool HttpApi::listen(const std::string& host, int port) {
  if (!bind(host, port)) return false;
  return listen_after_bind();
}

void HttpApi::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace gradechat

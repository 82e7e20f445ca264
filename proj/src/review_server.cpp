#include <httplib.h>

#include "echo/miner.hpp"
#include "echo/review_service.hpp"

namespace echo {

namespace {

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError(std::string("request body is not JSON: ") + e.what());
    }
}

int int_param(const httplib::Request& req, const char* name, std::optional<int> fallback) {
    if (!req.has_param(name)) {
        if (fallback) return *fallback;
        throw SchemaError(std::string("missing query parameter '") + name + "'");
    }
    const auto value = req.get_param_value(name);
    try {
        std::size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used == value.size()) return v;
    } catch (const std::exception&) {
    }
    throw SchemaError(std::string("query parameter '") + name + "' must be an integer");
}

nlohmann::json to_json(const SuggestResult& r) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& s : r.suggestions)
        list.push_back({{"annotation_id", s.annotation_id},
                        {"text", s.text},
                        {"combined", s.combined},
                        {"pattern_score", s.pattern_score},
                        {"unique_fraction", s.unique_fraction}});
    nlohmann::json out{{"generation", r.generation}, {"suggestions", std::move(list)}};
    if (!r.reason.empty()) out["reason"] = r.reason;
    return out;
}

nlohmann::json to_json(const SessionStatus& s) {
    nlohmann::json out{{"session_id", s.id},
                       {"exercise", s.exercise},
                       {"grammar", s.grammar},
                       {"generation", s.generation},
                       {"instances", s.instances},
                       {"trained_instances", s.trained_instances},
                       {"rebuilding", s.rebuilding}};
    if (s.rebuild_error) out["rebuild_error"] = *s.rebuild_error;
    return out;
}

}  // namespace

std::pair<int, nlohmann::json> problem_detail(const std::exception& e) {
    int status = 500;
    std::string code = "InternalError";
    nlohmann::json extra = nlohmann::json::object();
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        code = err->code();
        if (const auto* x = dynamic_cast<const PatternExplosion*>(&e)) {
            status = 503;
            extra["annotation_id"] = x->annotation_id();
        } else if (dynamic_cast<const UnknownSession*>(&e) || dynamic_cast<const UnknownSubmission*>(&e) ||
                   dynamic_cast<const UnknownAnnotation*>(&e)) {
            status = 404;
        } else if (const auto* d = dynamic_cast<const DanglingReference*>(&e)) {
            status = 400;
            extra["references"] = d->references();
        } else if (dynamic_cast<const BadLine*>(&e) || dynamic_cast<const SchemaError*>(&e)) {
            status = 400;
        }
    } else if (dynamic_cast<const nlohmann::json::exception*>(&e)) {
        status = 400;
        code = "SchemaError";
    }
    nlohmann::json body{{"status", status}, {"code", code}, {"message", e.what()}};
    body.update(extra);
    return {status, body};
}

ReviewServer::ReviewServer(ReviewService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto& svc = service_;
    auto wrap = [](Handler fn) -> Handler {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const std::exception& e) {
                auto [status, body] = problem_detail(e);
                res.status = status;
                res.set_content(body.dump(), "application/problem+json");
            }
        };
    };
    auto& s = *server_;

    s.Post("/v1/sessions", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
        send_json(res, {{"session_id", svc.create_session(parse_body(req))}}, 201);
    }));
    s.Get("/v1/sessions", wrap([&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, {{"sessions", svc.session_ids()}});
    }));
    s.Get(R"(/v1/sessions/([^/]+))", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
        send_json(res, to_json(svc.status(req.matches[1])));
    }));
    s.Get(R"(/v1/sessions/([^/]+)/submissions)", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& sub : svc.submissions(req.matches[1]))
            list.push_back(
                {{"id", sub.id}, {"path", sub.path}, {"instances", sub.instances}, {"reviewed", sub.reviewed}});
        send_json(res, {{"submissions", std::move(list)}});
    }));
    s.Get(R"(/v1/sessions/([^/]+)/submissions/(.+)/source)",
          wrap([&svc](const httplib::Request& req, httplib::Response& res) {
              const auto& sub = svc.submission(req.matches[1], req.matches[2]);
              send_json(res, {{"source", sub.source}, {"grammar", svc.status(req.matches[1]).grammar}});
          }));
    s.Get(R"(/v1/sessions/([^/]+)/submissions/(.+)/suggest)",
          wrap([&svc](const httplib::Request& req, httplib::Response& res) {
              const int line = int_param(req, "line", std::nullopt);
              const int top = int_param(req, "top", 5);
              if (top < 1) throw SchemaError("'top' must be positive");
              send_json(res, to_json(svc.suggest(req.matches[1], req.matches[2], line, static_cast<std::size_t>(top))));
          }));
    s.Post(R"(/v1/sessions/([^/]+)/submissions/(.+)/instances)",
           wrap([&svc](const httplib::Request& req, httplib::Response& res) {
               const auto body = parse_body(req);
               if (!body.is_object() || !body.contains("line") || !body["line"].is_number_integer())
                   throw SchemaError("body needs an integer 'line'");
               std::optional<std::string> annotation_id, text;
               if (body.contains("annotation_id")) annotation_id = body["annotation_id"].get<std::string>();
               if (body.contains("text")) text = body["text"].get<std::string>();
               const auto r = svc.record_instance(req.matches[1], req.matches[2], body["line"].get<int>(),
                                                  annotation_id, text);
               send_json(res,
                         {{"instance_id", r.instance_id},
                          {"annotation_id", r.annotation_id},
                          {"minted", r.minted},
                          {"context_extracted", r.context_extracted}},
                         201);
           }));
    s.Post(R"(/v1/sessions/([^/]+)/rebuild)", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
        send_json(res, {{"generation", svc.rebuild(req.matches[1])}});
    }));
    s.Get(R"(/v1/sessions/([^/]+)/annotations)", wrap([&svc](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& a : svc.annotations(req.matches[1])) list.push_back({{"id", a.id}, {"text", a.text}});
        send_json(res, {{"annotations", std::move(list)}});
    }));
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        nlohmann::json body{{"status", res.status}, {"code", res.status == 404 ? "NotFound" : "HttpError"},
                            {"message", httplib::status_message(res.status)}};
        res.set_content(body.dump(), "application/problem+json");
    });
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

bool ReviewServer::listen() { return server_->listen_after_bind(); }

void ReviewServer::stop() {
    if (server_->is_running()) server_->stop();
}

}  // namespace echo

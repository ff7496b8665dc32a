#include "distill/errors.hpp"
#include "distill/logging.hpp"
#include "distill/rating_service.hpp"

#include <httplib.h>

#include <thread>

namespace distill {

namespace {

int status_for(const Error& e) {
    const auto& code = e.code();
    if (code == "UnknownSessionError" || code == "UnknownItemError") {
        return 404;
    }
    if (code == "DuplicateRatingError" || code == "SessionClosedError") {
        return 409;
    }
    if (code == "UnbalancedPoolError") {
        return 422;
    }
    if (e.category() == ErrorCategory::provider) {
        return 502;
    }
    return 400;
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, status, {{"code", code}, {"message", message}});
}

template <typename F>
httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
        try {
            f(req, res);
        } catch (const Error& e) {
            send_error(res, status_for(e), e.code(), e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "SchemaError", std::string("bad request body: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "InternalError", e.what());
        }
    };
}

json parse_request(const httplib::Request& req) {
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) {
            throw SchemaError("request body must be a JSON object");
        }
        return j;
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("request body is not JSON: ") + e.what());
    }
}

}  // namespace

struct RatingServer::Impl {
    RatingService& service;
    httplib::Server server;
    std::thread thread;

    explicit Impl(RatingService& s) : service(s) {}
};

RatingServer::RatingServer(RatingService& service, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    auto& svc = impl_->service;

    srv.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                 auto body = parse_request(req);
                 auto pool = body.at("pool").get<std::string>();
                 auto rater = body.at("rater").get<std::string>();
                 auto seed = body.at("seed").get<std::uint64_t>();
                 auto s = svc.create_session(pool, rater, seed);
                 auto summary = session_wire_summary(s);
                 summary["seed"] = s.seed;
                 send_json(res, 201, summary);
             }));

    srv.Get(R"(/sessions/([^/]+)/next)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                auto id = req.matches[1].str();
                auto item = svc.next_item(id);
                if (item) {
                    send_json(res, 200, {{"done", false}, {"item", *item}});
                } else {
                    send_json(res, 200, {{"done", true}, {"summary", session_wire_summary(svc.session(id))}});
                }
            }));

    srv.Post(R"(/sessions/([^/]+)/ratings)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                 auto id = req.matches[1].str();
                 auto body = parse_request(req);
                 const auto& value = body.at("value");
                 if (!value.is_number_integer()) {
                     throw RangeError("rating must be an integer 1..5");
                 }
                 auto s = svc.submit_rating(id, body.at("item").get<std::string>(), value.get<int>());
                 send_json(res, 200, session_wire_summary(s));
             }));

    srv.Get(R"(/sessions/([^/]+)/summary)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                send_json(res, 200, session_wire_summary(svc.session(req.matches[1].str())));
            }));

    srv.Get("/export", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
                auto flag = req.get_param_value("partial");
                bool partial = flag == "1" || flag == "true";
                auto sessions =
                    svc.export_sessions(partial, req.get_param_value("rater"), req.get_param_value("pool"));
                json out = json::array();
                for (const auto& s : sessions) {
                    out.push_back(to_json(s));
                }
                send_json(res, 200, {{"sessions", std::move(out)}});
            }));

    if (static_dir) {
        if (!srv.set_mount_point("/ui", static_dir->string())) {
            throw ConfigError("static directory " + static_dir->string() + " does not exist");
        }
    }

    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) {
            send_error(res, res.status, res.status == 404 ? "NotFound" : "HttpError", "no such route");
        }
    });
}

RatingServer::~RatingServer() {
    stop();
}

int RatingServer::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) {
        throw ConfigError("cannot bind rating server to " + host + ":" + std::to_string(port));
    }
    impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    log_event(LogLevel::info, "rating_server_started", {{"host", host}, {"port", bound}});
    return bound;
}

void RatingServer::run(const std::string& host, int port) {
    auto& srv = impl_->server;
    log_event(LogLevel::info, "rating_server_starting", {{"host", host}, {"port", port}});
    if (!srv.listen(host, port)) {
        throw ConfigError("cannot serve on " + host + ":" + std::to_string(port));
    }
}

void RatingServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    }
}

}  // namespace distill

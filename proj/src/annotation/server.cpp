#include "mitodpm/annotation/server.hpp"

#include <chrono>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mitodpm/errors.hpp"

using nlohmann::json;

namespace mitodpm::annotation {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        auto body = json::parse(req.body);
        if (!body.is_object()) throw ValidationError("request body must be a JSON object");
        return body;
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("malformed JSON body: ") + e.what());
    }
}

std::string annotator_of(const httplib::Request& req, const json& body) {
    if (body.contains("annotator_id") && body["annotator_id"].is_string()) return body["annotator_id"].get<std::string>();
    return req.get_header_value("X-Annotator-Id");
}

std::optional<std::size_t> optional_index(const json& body, const char* key) {
    if (!body.contains(key) || body[key].is_null()) return std::nullopt;
    if (!body[key].is_number_integer() || body[key].get<long long>() < 0) {
        throw ValidationError(std::string(key) + " must be a non-negative integer or null");
    }
    return body[key].get<std::size_t>();
}

json session_json(const Session& s) {
    return {{"session_id", s.session_id},
            {"annotator_id", s.annotator_id},
            {"total", s.queue.size()},
            {"cursor", s.cursor},
            {"repeats", s.repeats},
            {"patches", s.patches},
            {"status", s.status == SessionStatus::open ? "open" : "closed"}};
}

// Maps library exceptions onto HTTP statuses.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const ValidationError& e) {
            send_json(res, 400, {{"error", e.what()}});
        } catch (const json::exception& e) {
            send_json(res, 400, {{"error", e.what()}});
        } catch (const NotFoundError& e) {
            send_json(res, 404, {{"error", e.what()}});
        } catch (const ConflictError& e) {
            send_json(res, 409, {{"error", e.what()}});
        } catch (const StateError& e) {
            send_json(res, 409, {{"error", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        }
    };
}

}  // namespace

AnnotationServer::AnnotationServer(AnnotationStore& store)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
    // The library default adds SO_REUSEPORT, which would let a second server
    // share the port instead of failing to bind.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
    });
    install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
    auto& srv = *server_;
    srv.Get("/health", guarded([](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}});
    }));

    srv.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        auto patch_ids = body.contains("patch_ids") ? body["patch_ids"].get<std::vector<std::string>>() : store_.patch_ids();
        const int repeats = body.value("repeats", 3);
        const auto seed = body.value("seed", std::uint64_t{0});
        const auto session = store_.create_session(annotator_of(req, body), patch_ids, repeats, seed);
        send_json(res, 201, session_json(session));
    }));

    srv.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, session_json(store_.session(req.matches[1])));
    }));

    srv.Get(R"(/sessions/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto item = store_.next_item(id);
        if (!item) {
            const auto s = store_.session(id);
            send_json(res, 200, {{"session_id", id}, {"complete", true}, {"progress", {{"done", s.cursor}, {"total", s.queue.size()}}}});
            return;
        }
        send_json(res, 200,
                  {{"session_id", item->session_id},
                   {"complete", false},
                   {"patch_id", item->patch_id},
                   {"position", item->position},
                   {"round", item->round},
                   {"progress", {{"done", item->position}, {"total", item->total}}},
                   {"image_png_base64",
                    httplib::detail::base64_encode(std::string(item->image_png.begin(), item->image_png.end()))}});
    }));

    srv.Post(R"(/sessions/([^/]+)/votes)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        if (!body.contains("patch_id") || !body.contains("value")) throw ValidationError("vote needs patch_id and value");
        if (!body["value"].is_number()) throw ValidationError("vote value must be a number");
        const auto ack = store_.submit_vote(req.matches[1], body["patch_id"].get<std::string>(),
                                            body["value"].get<double>(), optional_index(body, "position"));
        send_json(res, 200, {{"cursor", ack.cursor}, {"total", ack.total}, {"complete", ack.complete}, {"duplicate", ack.duplicate}});
    }));

    srv.Get(R"(/patches/([^/]+)/label)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto label = store_.get_label(req.matches[1]);
        send_json(res, 200,
                  {{"patch_id", label.patch_id},
                   {"label", label.label},
                   {"votes", label.votes},
                   {"histogram", {{"0", label.histogram[0]}, {"0.5", label.histogram[1]}, {"1", label.histogram[2]}}}});
    }));

    srv.Get(R"(/series/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
        send_json(res, 200, store_.get_series(req.matches[1]));
    }));

    srv.Post(R"(/series/([^/]+)/marks)", guarded([this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req);
        const std::string series_id = req.matches[1];
        const auto marks = store_.mark_series(series_id, annotator_of(req, body), optional_index(body, "earliest"),
                                              optional_index(body, "convincing"));
        auto idx = [](const std::optional<std::size_t>& i) { return i ? json(*i) : json(nullptr); };
        send_json(res, 200,
                  {{"series_id", series_id},
                   {"annotator_id", marks.annotator_id},
                   {"earliest", idx(marks.earliest)},
                   {"convincing", idx(marks.convincing)}});
    }));

    srv.Get("/export/votes.csv", guarded([this](const httplib::Request&, httplib::Response& res) {
        res.set_content(store_.export_votes_csv(), "text/csv");
    }));
}

int AnnotationServer::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = server_->bind_to_any_port(host);
        if (bound < 0) throw std::runtime_error("cannot bind " + host);
        return bound;
    }
    if (!server_->bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port) + " (address in use?)");
    }
    return port;
}

void AnnotationServer::run() {
    run_active_ = true;
    if (!stop_requested_) server_->listen_after_bind();
    run_active_ = false;
}

void AnnotationServer::stop() {
    stop_requested_ = true;
    // The listen loop flags itself as running only after it starts; wait for
    // that so the shutdown is not lost.
    while (run_active_) {
        if (server_->is_running()) {
            server_->stop();
            return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
}

bool AnnotationServer::running() const { return server_->is_running(); }

}  // namespace mitodpm::annotation

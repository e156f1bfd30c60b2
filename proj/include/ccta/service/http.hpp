#pragma once

#include <string>

#include <httplib.h>
#include <json.hpp>

#include "ccta/service/service.hpp"

namespace ccta::service {

inline int http_status_for(ErrorKind k) {
    switch (k) {
    case ErrorKind::UnknownCase:
    case ErrorKind::UnknownExtraction: return 404;
    case ErrorKind::DuplicateCase:
    case ErrorKind::InvalidState: return 409;
    case ErrorKind::Io: return 500;
    default: return 400;
    }
}

inline void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

inline void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
    send_json(res, {{"error", kind}, {"message", message}}, status);
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        send_error(res, http_status_for(e.kind()), to_string(e.kind()), e.what());
    } catch (const nlohmann::json::exception& e) {
        send_error(res, 400, "MalformedInput", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
    }
}

/// Multipart form field, or an empty optional.
inline std::optional<std::string> form_field(const httplib::Request& req, const std::string& key) {
    if (!req.has_file(key)) return std::nullopt;
    return req.get_file_value(key).content;
}

inline void register_routes(httplib::Server& server, Service& svc) {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) { send_json(res, {{"status", "ok"}}); });

    server.Post("/studies", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            require(req.is_multipart_form_data(), ErrorKind::MalformedInput,
                    "expected multipart/form-data with header, volume, metadata and phase_pct");
            const auto header = form_field(req, "header");
            const auto volume = form_field(req, "volume");
            const auto metadata = form_field(req, "metadata");
            const auto phase = form_field(req, "phase_pct");
            require(header && volume && metadata && phase, ErrorKind::MalformedInput,
                    "fields header, volume, metadata and phase_pct are required");
            double phase_pct = 0;
            try {
                phase_pct = std::stod(*phase);
            } catch (const std::logic_error&) {
                throw Error(ErrorKind::MalformedInput, "phase_pct is not a number");
            }
            const auto id = svc.ingest_study(*header, *volume, nlohmann::json::parse(*metadata), phase_pct);
            send_json(res, {{"job_id", id}}, 202);
        });
    });

    server.Get(R"(/jobs/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, to_json(svc.job(req.matches[1]))); });
    });

    server.Get("/cases", [&svc](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.worklist()); });
    });

    server.Get(R"(/cases/([^/]+)/result)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.result_json(req.matches[1])); });
    });

    server.Get(R"(/cases/([^/]+)/mpv/([^/]+)/sidecar)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.mpv(req.matches[1], req.matches[2]).second); });
    });

    server.Get(R"(/cases/([^/]+)/mpv/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            auto [png, sidecar] = svc.mpv(req.matches[1], req.matches[2]);
            res.set_header("X-MPV-Sidecar", sidecar.dump());
            res.set_content(png, "image/png");
        });
    });

    server.Get(R"(/cases/([^/]+)/adjudication)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& a : svc.adjudication_history(req.matches[1])) out.push_back(to_json(a));
            send_json(res, out);
        });
    });

    server.Post(R"(/cases/([^/]+)/adjudication)", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto body = nlohmann::json::parse(req.body);
            const auto rec = svc.adjudicate(req.matches[1], body.at("decision").get<std::string>(),
                                            body.at("reviewer").get<std::string>(), body.value("note", ""));
            send_json(res, to_json(rec), 201);
        });
    });

    server.Get("/metrics/cohort", [&svc](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc.cohort_metrics(req.has_param("set") ? req.get_param_value("set") : "live")); });
    });
}

}  // namespace ccta::service

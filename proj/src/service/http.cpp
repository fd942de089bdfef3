#include "triage/service/http.hpp"

#include "triage/error.hpp"
#include "triage/volume_io.hpp"

#include "httplib.h"

#include <atomic>
#include <fstream>

namespace triage::service {

using nlohmann::json;
namespace fs = std::filesystem;

int http_status(ErrorCode code)
{
    switch (code) {
    case ErrorCode::UnknownStudy: return 404;
    case ErrorCode::NotScored: return 409;
    case ErrorCode::SliceOutOfRange:
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnreadableFile: return 400;
    default: return 500;
    }
}

namespace {

void send_json(httplib::Response& res, const json& j, int status = 200)
{
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message)
{
    send_json(res, {{"error", code}, {"message", message}}, status);
}

// Runs a handler, mapping library errors onto HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& f)
{
    try {
        f();
    } catch (const Error& e) {
        send_error(res, http_status(e.code()), to_string(e.code()), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "InvalidArgument", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
    }
}

std::string safe_name(const std::string& name)
{
    std::string base = fs::path(name).filename().string();
    std::string out;
    for (char c : base)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_' ? c : '_');
    if (out.empty() || out == "." || out == "..")
        out = "upload.nii";
    return out;
}

void write_file(const fs::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out)
        throw Error(ErrorCode::IOFailure, "cannot write upload " + p.string());
}

} // namespace

ApiServer::ApiServer(TriageService& svc) : svc_(svc), server_(std::make_unique<httplib::Server>())
{
    auto& s = *server_;
    s.set_payload_max_length(std::size_t(2) << 30);
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });

    s.Post("/studies", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (!req.is_multipart_form_data() || !req.has_file("volume"))
                throw Error(ErrorCode::InvalidArgument, "expected multipart field 'volume'");
            static std::atomic<unsigned long long> counter{0};
            const auto vol = req.get_file_value("volume");
            const fs::path dir = svc_.store_dir() / "uploads" / std::to_string(counter++);
            fs::create_directories(dir);
            const fs::path file = dir / safe_name(vol.filename);
            write_file(file, vol.content);
            if (req.has_file("header"))
                write_file(raw_header_path(file), req.get_file_value("header").content);
            std::string id;
            try {
                id = svc_.ingest(file, vol.filename);
            } catch (...) {
                fs::remove_all(dir);
                throw;
            }
            fs::remove_all(dir);
            const StudyRecord r = svc_.study(id);
            send_json(res, {{"study_id", id}, {"status", to_string(r.status)}}, 202);
        });
    });

    s.Get("/worklist", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string mode = req.has_param("mode") ? req.get_param_value("mode") : "identification";
            send_json(res, to_json(svc_.worklist(rank_mode_from_string(mode))));
        });
    });

    s.Get(R"(/studies/([0-9A-Za-z]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, to_json(svc_.study(req.matches[1]))); });
    });

    s.Post(R"(/studies/([0-9A-Za-z]+)/read)", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            std::optional<std::string> note;
            if (!req.body.empty()) {
                const json body = json::parse(req.body);
                if (body.contains("note") && !body.at("note").is_null())
                    note = body.at("note").get<std::string>();
            }
            send_json(res, to_json(svc_.mark_read(req.matches[1], note)));
        });
    });

    s.Get(R"(/studies/([0-9A-Za-z]+)/slices/(-?[0-9]+)/overlay)",
          [this](const httplib::Request& req, httplib::Response& res) {
              guarded(res, [&] {
                  const OverlayStyle style = req.has_param("style")
                                                 ? overlay_style_from_string(req.get_param_value("style"))
                                                 : OverlayStyle::Fill;
                  const int k = std::stoi(req.matches[2]);
                  res.set_content(encode_bmp(svc_.overlay(req.matches[1], k, style)), "image/bmp");
              });
          });

    s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send_json(res, svc_.health()); });
    });
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port)
{
    if (port == 0)
        return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

void ApiServer::listen() { server_->listen_after_bind(); }

void ApiServer::stop()
{
    if (server_)
        server_->stop();
}

} // namespace triage::service

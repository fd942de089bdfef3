#pragma once

#include "triage/error.hpp"
#include "triage/service/service.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace triage::service {

// HTTP status for a library error code (404 unknown study, 409 not scored,
// 400 bad input, 500 otherwise).
int http_status(ErrorCode code);

// Routes:
//   POST /studies                          multipart, file field "volume" (+ "header" for .raw)
//   GET  /worklist?mode=identification|severity
//   GET  /studies/{id}
//   POST /studies/{id}/read                JSON body {"note": "..."} or empty
//   GET  /studies/{id}/slices/{k}/overlay  ?style=fill|contour, image/bmp
//   GET  /healthz
// Errors come back as {"error": code, "message": text}.
class ApiServer {
public:
    explicit ApiServer(TriageService& svc);
    ~ApiServer();

    // port 0 binds an ephemeral port; returns the bound port or -1.
    int bind(const std::string& host, int port);
    void listen(); // blocks until stop()
    void stop();

private:
    TriageService& svc_;
    std::unique_ptr<httplib::Server> server_;
};

} // namespace triage::service

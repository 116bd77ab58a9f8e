#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "mitodpm/annotation/store.hpp"

namespace httplib {
class Server;
}

namespace mitodpm::annotation {

// HTTP+JSON front end over an AnnotationStore.
//
//   GET  /health
//   POST /sessions                 {annotator_id, patch_ids?, repeats?, seed?}
//   GET  /sessions/{id}
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/votes      {patch_id, value, position?}
//   GET  /patches/{id}/label
//   GET  /series/{id}
//   POST /series/{id}/marks        {annotator_id, earliest, convincing}
//   GET  /export/votes.csv
//
// The annotator id may also come from the X-Annotator-Id header. Errors are
// {"error": "..."} with 400 (validation), 404 (unknown id) or 409 (conflict).
class AnnotationServer {
public:
    explicit AnnotationServer(AnnotationStore& store);
    ~AnnotationServer();

    AnnotationServer(const AnnotationServer&) = delete;
    AnnotationServer& operator=(const AnnotationServer&) = delete;

    // Returns the bound port (useful with port 0). Throws std::runtime_error
    // when the address is unavailable.
    int bind(const std::string& host, int port);
    // Blocks until stop() is called. A stop() issued before run() has started
    // listening makes run() return immediately.
    void run();
    void stop();
    bool running() const;

private:
    void install_routes();

    AnnotationStore& store_;
    std::unique_ptr<httplib::Server> server_;
    std::atomic<bool> stop_requested_{false};
    std::atomic<bool> run_active_{false};
};

}  // namespace mitodpm::annotation

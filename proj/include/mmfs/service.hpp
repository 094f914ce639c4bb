#pragma once

#include "mmfs/config.hpp"
#include "mmfs/data.hpp"
#include "mmfs/models.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace mmfs {

struct ServiceOptions {
    std::chrono::seconds wplus_ttl{3600};
    // Iterations of a fine-tune job unless the request overrides them.
    int64_t finetune_iterations = 200;
    uint64_t finetune_seed = 0;
    // Real faces used by fine-tune jobs; procedural faces when null.
    std::shared_ptr<ImageSet> real_faces;
    std::string cors_origin = "*";
};

enum class JobStatus { queued, running, done, failed };
std::string to_string(JobStatus status);

struct JobRecord {
    std::string job_id;
    std::string kind;  // finetune_zero | finetune_one
    std::string base_model_id;
    JobStatus status = JobStatus::queued;
    int64_t step = 0;
    int64_t total = 0;
    std::string result_model_id;
    std::string error;
    std::vector<double> loss_trace;
    nlohmann::json to_json() const;
};

// Result of dispatching one request: HTTP status plus JSON body.
struct ServiceReply {
    int status = 200;
    nlohmann::json body;
};

// HTTP/JSON front end over immutable model snapshots. Requests can also be
// dispatched without a socket through handle().
class InferenceService {
public:
    InferenceService(ModelSet base, ServiceOptions options = {});
    ~InferenceService();
    InferenceService(const InferenceService&) = delete;
    InferenceService& operator=(const InferenceService&) = delete;

    ServiceReply handle(const std::string& method, const std::string& path, const std::string& body);

    // Binds and serves on a background thread; port 0 picks a free port.
    // Returns the bound port.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stop() is called.
    void listen(const std::string& host, int port);
    void stop();

    static constexpr const char* kBaseModelId = "base";

private:
    struct Snapshot {
        std::string id;
        std::string parent;
        std::string stage;
        std::string prompt;
        ModelSet models;
    };
    struct StoredStyle {
        torch::Tensor wplus;  // [n_l, d_w]
        std::string model_id;
        std::chrono::steady_clock::time_point expires;
    };

    ServiceReply stylize(const nlohmann::json& req);
    ServiceReply interpolate(const nlohmann::json& req);
    ServiceReply submit_finetune(const nlohmann::json& req);
    ServiceReply job(const std::string& id);
    ServiceReply health();
    ServiceReply models();

    std::shared_ptr<const Snapshot> snapshot(const std::string& id) const;
    std::string store_style(const torch::Tensor& wplus, const std::string& model_id);
    std::optional<StoredStyle> find_style(const std::string& id);
    void worker_loop();
    void install_routes();

    ServiceOptions options_;
    std::shared_ptr<ImageSet> real_faces_;

    mutable std::mutex models_mutex_;
    std::map<std::string, std::shared_ptr<const Snapshot>> models_;

    std::mutex styles_mutex_;
    std::map<std::string, StoredStyle> styles_;

    std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::map<std::string, JobRecord> jobs_;
    std::map<std::string, nlohmann::json> job_requests_;
    std::deque<std::string> queue_;
    int64_t next_job_ = 1;
    std::atomic<bool> stopping_{false};
    std::thread worker_;

    std::unique_ptr<httplib::Server> server_;
    std::thread listener_;
};

} // namespace mmfs

#include "mmfs/service.hpp"

#include "mmfs/errors.hpp"
#include "mmfs/generator.hpp"
#include "mmfs/guidance.hpp"
#include "mmfs/image_io.hpp"
#include "mmfs/training.hpp"
#include "mmfs/util.hpp"

#include <httplib.h>

#include <set>

namespace mmfs {

using nlohmann::json;

std::string to_string(JobStatus status) {
    switch (status) {
        case JobStatus::queued: return "queued";
        case JobStatus::running: return "running";
        case JobStatus::done: return "done";
        case JobStatus::failed: return "failed";
    }
    return "unknown";
}

json JobRecord::to_json() const {
    return {{"job_id", job_id},
            {"kind", kind},
            {"base_model_id", base_model_id},
            {"status", mmfs::to_string(status)},
            {"progress", {{"step", step}, {"total", total}}},
            {"result_model_id", result_model_id.empty() ? json(nullptr) : json(result_model_id)},
            {"error", error},
            {"loss_trace", loss_trace}};
}

namespace {

// Request errors carry their HTTP status.
struct RequestError : std::runtime_error {
    RequestError(int status, const std::string& what) : std::runtime_error(what), status(status) {}
    int status;
};

ServiceReply error_reply(int status, const std::string& message) { return {status, {{"error", message}}}; }

void require_fields(const json& req, const std::set<std::string>& required, const std::set<std::string>& optional) {
    if (!req.is_object()) throw RequestError(400, "request body must be a JSON object");
    for (const auto& key : required) {
        if (!req.contains(key)) throw RequestError(400, "missing field '" + key + "'");
    }
    for (const auto& [key, value] : req.items()) {
        if (!required.contains(key) && !optional.contains(key)) {
            throw RequestError(400, "field '" + key + "' is not accepted here");
        }
    }
}

std::string string_field(const json& req, const std::string& key) {
    const auto& v = req.at(key);
    if (!v.is_string()) throw RequestError(400, "field '" + key + "' must be a string");
    return v.get<std::string>();
}

uint64_t seed_field(const json& req) {
    if (!req.contains("seed")) return 0;
    const auto& v = req.at("seed");
    if (!v.is_number_integer() || v.get<int64_t>() < 0) throw RequestError(400, "seed must be a non-negative integer");
    return v.get<uint64_t>();
}

torch::Tensor image_field(const json& req, const std::string& key, int64_t side) {
    const auto text = string_field(req, key);
    try {
        auto bytes = base64_decode(text);
        return center_crop_resize(decode_image(bytes), side);
    } catch (const std::exception& e) {
        throw RequestError(422, "field '" + key + "' is not a decodable base64 PNG/JPEG image");
    }
}

std::string encode_image(const torch::Tensor& image) {
    auto png = encode_png(image);
    return base64_encode(png);
}

} // namespace

// ---------------------------------------------------------------------------

InferenceService::InferenceService(ModelSet base, ServiceOptions options) : options_(std::move(options)) {
    base.eval();
    real_faces_ = options_.real_faces;
    if (!real_faces_) {
        real_faces_ = std::make_shared<ProceduralFaces>(256, options_.finetune_seed + 17, FaceStyle::photo,
                                                        base.profile.resolution);
    }
    auto snap = std::make_shared<Snapshot>();
    snap->id = kBaseModelId;
    snap->stage = base.stage;
    snap->models = std::move(base);
    models_[kBaseModelId] = std::move(snap);
    worker_ = std::thread([this] { worker_loop(); });
}

InferenceService::~InferenceService() { stop(); }

std::shared_ptr<const InferenceService::Snapshot> InferenceService::snapshot(const std::string& id) const {
    std::lock_guard<std::mutex> lock(models_mutex_);
    auto it = models_.find(id);
    if (it == models_.end()) throw RequestError(404, "unknown model_id '" + id + "'");
    return it->second;
}

std::string InferenceService::store_style(const torch::Tensor& wplus, const std::string& model_id) {
    auto w = wplus.detach().to(torch::kFloat).contiguous();
    std::string key = model_id;
    key.push_back('\0');
    key.append(reinterpret_cast<const char*>(w.data_ptr<float>()), static_cast<size_t>(w.numel()) * sizeof(float));
    const auto id = "w_" + sha256_hex(key).substr(0, 24);
    std::lock_guard<std::mutex> lock(styles_mutex_);
    styles_[id] = StoredStyle{w.clone(), model_id, std::chrono::steady_clock::now() + options_.wplus_ttl};
    return id;
}

std::optional<InferenceService::StoredStyle> InferenceService::find_style(const std::string& id) {
    std::lock_guard<std::mutex> lock(styles_mutex_);
    const auto now = std::chrono::steady_clock::now();
    for (auto it = styles_.begin(); it != styles_.end();) {
        it = it->second.expires <= now ? styles_.erase(it) : std::next(it);
    }
    auto it = styles_.find(id);
    if (it == styles_.end()) return std::nullopt;
    return it->second;
}

ServiceReply InferenceService::handle(const std::string& method, const std::string& path, const std::string& body) {
    torch::NoGradGuard guard;
    try {
        auto parse = [&]() {
            auto j = json::parse(body, nullptr, false);
            if (j.is_discarded()) throw RequestError(400, "request body is not valid JSON");
            return j;
        };
        if (method == "OPTIONS") return {204, json::object()};
        if (path == "/stylize" || path == "/interpolate" || path == "/finetune") {
            if (method != "POST") return error_reply(405, "use POST for " + path);
            auto req = parse();
            if (path == "/stylize") return stylize(req);
            if (path == "/interpolate") return interpolate(req);
            return submit_finetune(req);
        }
        if (path == "/health" || path == "/models" || path.rfind("/jobs/", 0) == 0) {
            if (method != "GET") return error_reply(405, "use GET for " + path);
            if (path == "/health") return health();
            if (path == "/models") return models();
            return job(path.substr(6));
        }
        return error_reply(404, "no endpoint " + path);
    } catch (const RequestError& e) {
        return error_reply(e.status, e.what());
    } catch (const InvalidArgument& e) {
        return error_reply(400, e.what());
    } catch (const json::exception& e) {
        return error_reply(400, e.what());
    } catch (const std::exception& e) {
        return error_reply(500, e.what());
    }
}

ServiceReply InferenceService::stylize(const json& req) {
    if (!req.is_object() || !req.contains("mode") || !req.at("mode").is_string()) {
        throw RequestError(400, "field 'mode' (random|text|image|wplus) is required");
    }
    const auto mode = req.at("mode").get<std::string>();
    if (mode == "random") {
        require_fields(req, {"image", "mode"}, {"seed", "model_id"});
    } else if (mode == "text") {
        require_fields(req, {"image", "mode", "prompt"}, {"seed", "model_id"});
    } else if (mode == "image") {
        require_fields(req, {"image", "mode", "reference_image"}, {"seed", "model_id"});
    } else if (mode == "wplus") {
        require_fields(req, {"image", "mode", "wplus_id"}, {"model_id"});
    } else {
        throw RequestError(400, "unknown mode '" + mode + "'");
    }
    const auto model_id = req.contains("model_id") ? string_field(req, "model_id") : std::string(kBaseModelId);
    const auto seed = seed_field(req);
    auto snap = snapshot(model_id);
    const auto& m = snap->models;
    auto image = image_field(req, "image", m.profile.resolution);

    torch::Tensor wplus;  // [1, n_l, d_w]
    if (mode == "random") {
        wplus = random_wplus(m, seed);
    } else if (mode == "text") {
        const auto prompt = string_field(req, "prompt");
        if (prompt.empty()) throw RequestError(400, "prompt must not be empty");
        wplus = text_wplus(m, prompt);
    } else if (mode == "image") {
        auto ref = image_field(req, "reference_image", m.profile.resolution);
        wplus = image_wplus(m, ref);
    } else {
        auto stored = find_style(string_field(req, "wplus_id"));
        if (!stored) throw RequestError(404, "unknown wplus_id");
        wplus = stored->wplus.unsqueeze(0);
    }
    auto out = m.stylize(image, wplus);
    const auto id = store_style(wplus.squeeze(0), model_id);
    return {200, {{"image", encode_image(out[0])}, {"wplus_id", id}, {"model_id", model_id}}};
}

ServiceReply InferenceService::interpolate(const json& req) {
    require_fields(req, {"image", "wplus_a", "wplus_b", "alphas"}, {"model_id"});
    const auto model_id = req.contains("model_id") ? string_field(req, "model_id") : std::string(kBaseModelId);
    const auto& alphas = req.at("alphas");
    if (!alphas.is_array() || alphas.empty()) throw RequestError(400, "alphas must be a non-empty array");
    std::vector<double> values;
    for (const auto& a : alphas) {
        if (!a.is_number()) throw RequestError(400, "alphas must be numbers");
        const double v = a.get<double>();
        if (!(v >= 0.0 && v <= 1.0)) throw RequestError(400, "alpha " + std::to_string(v) + " outside [0, 1]");
        values.push_back(v);
    }
    auto a = find_style(string_field(req, "wplus_a"));
    auto b = find_style(string_field(req, "wplus_b"));
    if (!a) throw RequestError(404, "unknown wplus_a");
    if (!b) throw RequestError(404, "unknown wplus_b");
    auto snap = snapshot(model_id);
    const auto& m = snap->models;
    auto image = image_field(req, "image", m.profile.resolution);

    json images = json::array();
    for (double alpha : values) {
        auto w = interpolate_styles(a->wplus, b->wplus, alpha).unsqueeze(0);
        images.push_back(encode_image(m.stylize(image, w)[0]));
    }
    return {200, {{"images", images}, {"alphas", values}, {"model_id", model_id}}};
}

ServiceReply InferenceService::submit_finetune(const json& req) {
    if (!req.is_object() || !req.contains("mode") || !req.at("mode").is_string()) {
        throw RequestError(400, "field 'mode' (zero|one) is required");
    }
    const auto mode = req.at("mode").get<std::string>();
    if (mode == "zero") {
        require_fields(req, {"mode", "prompt"}, {"base_model_id", "iterations", "seed", "basis_tokens"});
        if (string_field(req, "prompt").empty()) throw RequestError(400, "prompt must not be empty");
    } else if (mode == "one") {
        require_fields(req, {"mode", "reference_image"}, {"base_model_id", "iterations", "seed", "basis_tokens"});
    } else {
        throw RequestError(400, "unknown fine-tune mode '" + mode + "'");
    }
    const auto base = req.contains("base_model_id") ? string_field(req, "base_model_id") : std::string(kBaseModelId);
    auto snap = snapshot(base);
    if (mode == "one") image_field(req, "reference_image", snap->models.profile.resolution);
    int64_t iterations = options_.finetune_iterations;
    if (req.contains("iterations")) {
        if (!req.at("iterations").is_number_integer() || req.at("iterations").get<int64_t>() < 1) {
            throw RequestError(400, "iterations must be a positive integer");
        }
        iterations = req.at("iterations").get<int64_t>();
    }
    if (req.contains("basis_tokens") && !req.at("basis_tokens").is_number_integer()) {
        throw RequestError(400, "basis_tokens must be an integer");
    }
    seed_field(req);

    std::lock_guard<std::mutex> lock(jobs_mutex_);
    for (const auto& [id, record] : jobs_) {
        if (record.base_model_id == base && (record.status == JobStatus::queued || record.status == JobStatus::running)) {
            return error_reply(409, "model '" + base + "' already has fine-tune job " + id);
        }
    }
    JobRecord record;
    record.job_id = "job-" + std::to_string(next_job_++);
    record.kind = mode == "zero" ? "finetune_zero" : "finetune_one";
    record.base_model_id = base;
    record.total = iterations;
    jobs_[record.job_id] = record;
    job_requests_[record.job_id] = req;
    queue_.push_back(record.job_id);
    jobs_cv_.notify_all();
    return {202, {{"job_id", record.job_id}}};
}

ServiceReply InferenceService::job(const std::string& id) {
    std::lock_guard<std::mutex> lock(jobs_mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return error_reply(404, "unknown job '" + id + "'");
    return {200, it->second.to_json()};
}

ServiceReply InferenceService::health() {
    int64_t active = 0;
    {
        std::lock_guard<std::mutex> lock(jobs_mutex_);
        for (const auto& [id, r] : jobs_) active += (r.status == JobStatus::queued || r.status == JobStatus::running);
    }
    std::lock_guard<std::mutex> lock(models_mutex_);
    return {200, {{"status", "ok"}, {"models", models_.size()}, {"active_jobs", active}}};
}

ServiceReply InferenceService::models() {
    std::lock_guard<std::mutex> lock(models_mutex_);
    json list = json::array();
    for (const auto& [id, snap] : models_) {
        list.push_back({{"id", id},
                        {"parent", snap->parent.empty() ? json(nullptr) : json(snap->parent)},
                        {"stage", snap->stage},
                        {"prompt", snap->prompt},
                        {"resolution", snap->models.profile.resolution}});
    }
    return {200, {{"models", list}}};
}

// ---------------------------------------------------------------------------

void InferenceService::worker_loop() {
    while (true) {
        std::string job_id;
        json req;
        {
            std::unique_lock<std::mutex> lock(jobs_mutex_);
            jobs_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            job_id = queue_.front();
            queue_.pop_front();
            req = job_requests_.at(job_id);
            jobs_.at(job_id).status = JobStatus::running;
        }
        try {
            torch::NoGradGuard outer;
            std::string base, kind;
            int64_t total;
            {
                std::lock_guard<std::mutex> lock(jobs_mutex_);
                const auto& r = jobs_.at(job_id);
                base = r.base_model_id;
                kind = r.kind;
                total = r.total;
            }
            auto snap = snapshot(base);
            const auto& m = snap->models;
            const auto stage = kind == "finetune_zero" ? Stage::finetune_zero : Stage::finetune_one;
            auto config = StageConfig::defaults(stage);
            config.iterations = total;
            config.seed = req.contains("seed") ? req.at("seed").get<uint64_t>() : options_.finetune_seed;
            if (req.contains("basis_tokens")) config.basis_tokens = req.at("basis_tokens").get<int64_t>();

            GuidancePrompt prompt;
            std::string label;
            if (stage == Stage::finetune_zero) {
                label = req.at("prompt").get<std::string>();
                prompt = GuidancePrompt::from_text(*m.clip, label);
            } else {
                label = "reference image";
                prompt = GuidancePrompt::from_image(*m.clip, image_field(req, "reference_image", m.profile.resolution));
            }
            torch::AutoGradMode enable(true);
            auto result = finetune(m, config, prompt, *real_faces_, [&](const LossRecord& r) {
                if (stopping_) throw std::runtime_error("service is shutting down");
                std::lock_guard<std::mutex> lock(jobs_mutex_);
                auto& rec = jobs_.at(job_id);
                rec.step = r.step + 1;
                rec.loss_trace.push_back(r.components.at("total"));
            });
            result.published.eval();

            auto next = std::make_shared<Snapshot>();
            next->id = "ft-" + job_id.substr(4);
            next->parent = base;
            next->stage = result.published.stage;
            next->prompt = label;
            next->models = std::move(result.published);
            {
                std::lock_guard<std::mutex> lock(models_mutex_);
                models_[next->id] = next;
            }
            std::lock_guard<std::mutex> lock(jobs_mutex_);
            auto& rec = jobs_.at(job_id);
            rec.result_model_id = next->id;
            rec.status = JobStatus::done;
        } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(jobs_mutex_);
            auto& rec = jobs_.at(job_id);
            rec.error = e.what();
            rec.status = JobStatus::failed;
        }
    }
}

void InferenceService::install_routes() {
    server_ = std::make_unique<httplib::Server>();
    server_->set_default_headers({{"Access-Control-Allow-Origin", options_.cors_origin},
                                  {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                  {"Access-Control-Allow-Headers", "Content-Type"}});
    auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
        auto reply = handle(req.method, req.path, req.body);
        res.status = reply.status;
        if (reply.status != 204) res.set_content(reply.body.dump(), "application/json");
    };
    server_->Get(R"(/.*)", dispatch);
    server_->Post(R"(/.*)", dispatch);
    server_->Options(R"(/.*)", dispatch);
    server_->Put(R"(/.*)", dispatch);
    server_->Delete(R"(/.*)", dispatch);
    server_->Patch(R"(/.*)", dispatch);
}

int InferenceService::start(const std::string& host, int port) {
    install_routes();
    int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    listener_ = std::thread([this] { server_->listen_after_bind(); });
    return bound;
}

void InferenceService::listen(const std::string& host, int port) {
    install_routes();
    if (!server_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void InferenceService::stop() {
    stopping_ = true;
    if (server_) server_->stop();
    if (listener_.joinable()) listener_.join();
    jobs_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

} // namespace mmfs

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "echo/annotation_model.hpp"
#include "echo/datasets.hpp"

namespace httplib {
class Server;
}

namespace echo {

class UnknownSession : public Error {
public:
    explicit UnknownSession(const std::string& id) : Error("UnknownSession", "unknown session '" + id + "'") {}
};

class UnknownSubmission : public Error {
public:
    explicit UnknownSubmission(const std::string& id)
        : Error("UnknownSubmission", "unknown submission '" + id + "'") {}
};

class BadLine : public Error {
public:
    BadLine(int line, std::size_t lines)
        : Error("BadLine", "line " + std::to_string(line) + " is outside 1.." + std::to_string(lines)) {}
};

struct ServiceConfig {
    std::filesystem::path data_dir = "sessions";
    ModelConfig model;
    /// Background rebuilds; off means only explicit rebuild() trains.
    bool auto_rebuild = true;
    /// Rebuild once this many instances arrived since the last generation...
    std::size_t rebuild_after_instances = 10;
    /// ...or when the reviewer moves on to another submission.
    bool rebuild_on_next_submission = true;
    /// Test seam: runs after training, before the new generation is published.
    std::function<void(const std::string& session, std::uint64_t generation)> before_publish;
};

/// A published model. Generation 0 is the empty, never-trained model.
struct Generation {
    std::uint64_t number = 0;
    std::shared_ptr<const AnnotationModel> model;
    /// Length of the instance log the model was trained on.
    std::size_t log_size = 0;
    /// Annotation texts as of the rebuild.
    std::map<std::string, std::string> texts;
};

struct RecordResult {
    std::uint64_t instance_id = 0;
    std::string annotation_id;
    bool minted = false;
    bool context_extracted = false;
};

struct Suggestion {
    std::string annotation_id;
    std::string text;
    double combined = 0.0;
    double pattern_score = 0.0;
    double unique_fraction = 0.0;
};

struct SuggestResult {
    std::uint64_t generation = 0;
    std::vector<Suggestion> suggestions;
    /// Why the list is empty, when it is.
    std::string reason;
};

struct SubmissionStatus {
    std::string id;
    std::string path;
    std::size_t instances = 0;
    bool reviewed = false;
};

struct SessionStatus {
    std::string id;
    std::string exercise;
    std::string grammar;
    std::uint64_t generation = 0;
    std::size_t instances = 0;
    std::size_t trained_instances = 0;
    bool rebuilding = false;
    std::optional<std::string> rebuild_error;
};

class ReviewSession;

/// Live review sessions persisted under data_dir/<id>/ as the manifest plus
/// an append-only events.jsonl. Thread-safe; suggest never waits on rebuild.
class ReviewService {
public:
    /// Replays every session found in data_dir.
    explicit ReviewService(ServiceConfig config);
    ~ReviewService();
    ReviewService(const ReviewService&) = delete;
    ReviewService& operator=(const ReviewService&) = delete;

    const ServiceConfig& config() const noexcept { return config_; }

    std::string create_session(const nlohmann::json& manifest);
    std::vector<std::string> session_ids() const;
    SessionStatus status(const std::string& session) const;

    std::vector<SubmissionStatus> submissions(const std::string& session) const;
    const SubmissionRecord& submission(const std::string& session, const std::string& submission_id) const;
    std::vector<Annotation> annotations(const std::string& session) const;

    /// Exactly one of `annotation_id` and `text` is set; text mints a new annotation.
    RecordResult record_instance(const std::string& session, const std::string& submission_id, int line,
                                 const std::optional<std::string>& annotation_id,
                                 const std::optional<std::string>& text);

    SuggestResult suggest(const std::string& session, const std::string& submission_id, int line,
                          std::size_t top_k = 5) const;

    /// Full retrain on the current log; returns the new generation number.
    /// PatternExplosion propagates and leaves the served generation as is.
    std::uint64_t rebuild(const std::string& session);

    Generation current(const std::string& session) const;

    /// Blocks until no background rebuild is queued or running.
    void wait_idle(const std::string& session) const;

private:
    std::shared_ptr<ReviewSession> find(const std::string& session) const;

    ServiceConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<ReviewSession>> sessions_;
};

/// Problem-detail body {status, code, message} for an exception.
std::pair<int, nlohmann::json> problem_detail(const std::exception& e);

/// The /v1 HTTP API over a ReviewService.
class ReviewServer {
public:
    explicit ReviewServer(ReviewService& service);
    ~ReviewServer();

    /// Binds (port 0 picks a free one) and returns the bound port, or -1.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    bool listen();
    void stop();

private:
    ReviewService& service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace echo

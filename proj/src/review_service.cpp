#include "echo/review_service.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

namespace echo {

namespace {

std::size_t line_count(std::string_view source) {
    if (source.empty()) return 0;
    const auto newlines = static_cast<std::size_t>(std::count(source.begin(), source.end(), '\n'));
    return source.back() == '\n' ? newlines : newlines + 1;
}

double to_double(const Rational& r) { return r.convert_to<double>(); }

std::string session_name(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "session-%04zu", n);
    return buf;
}

}  // namespace

class ReviewSession {
public:
    ReviewSession(std::string id, std::filesystem::path dir, ExerciseDataset dataset, const ServiceConfig& config)
        : id_(std::move(id)),
          dir_(std::move(dir)),
          dataset_(std::move(dataset)),
          parsed_(parse_submissions(dataset_)),
          config_(config),
          log_(dataset_.instances),
          library_(dataset_.annotations),
          current_(std::make_shared<Generation>(Generation{0, std::make_shared<AnnotationModel>(), 0, {}})) {
        for (const auto& a : library_) library_ids_.insert(a.id);
        for (const auto& s : dataset_.submissions) lines_[s.id] = line_count(s.source);
    }

    ~ReviewSession() {
        {
            std::lock_guard lk(worker_mu_);
            stopping_ = true;
        }
        worker_cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    const std::string& id() const { return id_; }
    const ExerciseDataset& dataset() const { return dataset_; }

    /// Applies events.jsonl, then trains the restored log.
    void replay() {
        std::ifstream in(dir_ / "events.jsonl");
        std::vector<std::string> lines;
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) lines.push_back(line);
        std::uint64_t logged_generation = 0;
        std::size_t logged_size = 0;
        for (std::size_t k = 0; k < lines.size(); ++k) {
            nlohmann::json e;
            try {
                e = nlohmann::json::parse(lines[k]);
            } catch (const nlohmann::json::parse_error&) {
                if (k + 1 == lines.size()) break;  // torn final write
                throw SchemaError("session '" + id_ + "': corrupt event " + std::to_string(k + 1));
            }
            const auto kind = e.value("event", "");
            if (kind == "annotation") {
                add_annotation({e.at("id").get<std::string>(), e.at("text").get<std::string>()});
            } else if (kind == "instance") {
                log_.push_back({e.at("annotation").get<std::string>(), e.at("submission").get<std::string>(),
                                e.at("line").get<int>()});
            } else if (kind == "generation") {
                logged_generation = e.at("generation").get<std::uint64_t>();
                logged_size = e.at("log_size").get<std::size_t>();
            }
        }
        open_events();
        last_generation_ = logged_generation;
        if (log_.empty() && logged_generation == 0) return;
        // A log that ends at its last generation restores that generation.
        const bool same = logged_generation > 0 && logged_size == log_.size();
        if (same) --last_generation_;
        try {
            rebuild(/*publish_hook=*/false, /*log_event=*/!same);
        } catch (const PatternExplosion&) {
            if (same) ++last_generation_;
        }
    }

    void open_events() {
        events_.open(dir_ / "events.jsonl", std::ios::app | std::ios::binary);
        if (!events_) throw IoError("cannot open event log in '" + dir_.string() + "'");
    }

    std::vector<SubmissionStatus> submissions() const {
        std::map<std::string, std::size_t> counts;
        {
            std::lock_guard lk(write_mu_);
            for (const auto& i : log_) ++counts[i.submission_id];
        }
        std::vector<SubmissionStatus> out;
        for (const auto& s : dataset_.submissions) {
            const auto n = counts.count(s.id) ? counts[s.id] : 0;
            out.push_back({s.id, s.path, n, n > 0});
        }
        return out;
    }

    std::vector<Annotation> annotations() const {
        std::lock_guard lk(write_mu_);
        return library_;
    }

    const SubmissionRecord& submission(const std::string& sid) const {
        const auto* s = dataset_.find_submission(sid);
        if (!s) throw UnknownSubmission(sid);
        return *s;
    }

    void check_line(const std::string& sid, int line) const {
        auto it = lines_.find(sid);
        if (it == lines_.end()) throw UnknownSubmission(sid);
        if (line < 1 || static_cast<std::size_t>(line) > it->second) throw BadLine(line, it->second);
    }

    RecordResult record(const std::string& sid, int line, const std::optional<std::string>& annotation_id,
                        const std::optional<std::string>& text) {
        check_line(sid, line);
        if (annotation_id.has_value() == text.has_value())
            throw SchemaError("give exactly one of 'annotation_id' and 'text'");
        RecordResult result;
        bool trigger = false;
        {
            std::lock_guard lk(write_mu_);
            if (annotation_id) {
                if (!library_ids_.count(*annotation_id)) throw UnknownAnnotation(*annotation_id);
                result.annotation_id = *annotation_id;
            } else {
                if (text->empty()) throw SchemaError("annotation text is empty");
                std::string minted;
                do minted = "custom-" + std::to_string(++minted_); while (library_ids_.count(minted));
                append({{"event", "annotation"}, {"id", minted}, {"text", *text}});
                add_annotation({minted, *text});
                result.annotation_id = minted;
                result.minted = true;
            }
            result.instance_id = log_.size() + 1;
            append({{"event", "instance"},
                    {"instance_id", result.instance_id},
                    {"annotation", result.annotation_id},
                    {"submission", sid},
                    {"line", line}});
            log_.push_back({result.annotation_id, sid, line});
            ++since_rebuild_;
            trigger = since_rebuild_ >= std::max<std::size_t>(config_.rebuild_after_instances, 1) ||
                      (config_.rebuild_on_next_submission && last_submission_ && *last_submission_ != sid);
            last_submission_ = sid;
        }
        result.context_extracted = extract_line_context(parsed_.at(sid).tree, line - 1).has_value();
        if (trigger && config_.auto_rebuild) request_rebuild();
        return result;
    }

    std::shared_ptr<const Generation> snapshot() const {
        std::lock_guard lk(model_mu_);
        return current_;
    }

    SuggestResult suggest(const std::string& sid, int line, std::size_t top_k) const {
        check_line(sid, line);
        const auto generation = snapshot();
        SuggestResult result;
        result.generation = generation->number;
        const auto context = extract_line_context(parsed_.at(sid).tree, line - 1);
        if (!context) {
            result.reason = "no extractable context on this line";
            return result;
        }
        const auto& model = *generation->model;
        if (model.empty()) {
            result.reason = "no trained model yet";
            return result;
        }
        for (const auto& r : model.rank(model.encode_query(*context), top_k)) {
            auto text = generation->texts.find(r.annotation_id);
            result.suggestions.push_back({r.annotation_id, text == generation->texts.end() ? "" : text->second,
                                          r.combined, to_double(r.pattern_score), to_double(r.unique_fraction)});
        }
        return result;
    }

    std::uint64_t rebuild(bool publish_hook = true, bool log_event = true) {
        std::lock_guard rebuild_lock(rebuild_mu_);
        std::vector<AnnotationInstance> prefix;
        std::map<std::string, std::string> texts;
        {
            std::lock_guard lk(write_mu_);
            prefix = log_;
            for (const auto& a : library_) texts[a.id] = a.text;
            since_rebuild_ = 0;
        }
        std::shared_ptr<const AnnotationModel> model;
        try {
            model = std::make_shared<AnnotationModel>(train(prefix, parsed_, config_.model, nullptr, &cache_));
            cache_.prune();
        } catch (const EmptyTrainingSet&) {
            model = std::make_shared<AnnotationModel>();
        } catch (const PatternExplosion& e) {
            std::lock_guard lk(model_mu_);
            rebuild_error_ = e.what();
            throw;
        }
        const std::uint64_t number = ++last_generation_;
        if (publish_hook && config_.before_publish) config_.before_publish(id_, number);
        auto generation = std::make_shared<Generation>(Generation{number, model, prefix.size(), std::move(texts)});
        {
            std::lock_guard lk(model_mu_);
            current_ = std::move(generation);
            rebuild_error_.reset();
        }
        if (log_event) {
            std::lock_guard lk(write_mu_);
            append({{"event", "generation"}, {"generation", number}, {"log_size", prefix.size()}});
        }
        return number;
    }

    void request_rebuild() {
        {
            std::lock_guard lk(worker_mu_);
            requested_ = true;
            if (!worker_.joinable()) worker_ = std::thread([this] { work(); });
        }
        worker_cv_.notify_all();
    }

    void wait_idle() const {
        std::unique_lock lk(worker_mu_);
        idle_cv_.wait(lk, [&] { return !requested_ && !busy_; });
    }

    SessionStatus status() const {
        SessionStatus s;
        s.id = id_;
        s.exercise = dataset_.exercise;
        s.grammar = dataset_.grammar;
        {
            std::lock_guard lk(write_mu_);
            s.instances = log_.size();
        }
        {
            std::lock_guard lk(model_mu_);
            s.generation = current_->number;
            s.trained_instances = current_->log_size;
            s.rebuild_error = rebuild_error_;
        }
        {
            std::lock_guard lk(worker_mu_);
            s.rebuilding = requested_ || busy_;
        }
        return s;
    }

private:
    void add_annotation(Annotation a) {
        library_ids_.insert(a.id);
        library_.push_back(std::move(a));
    }

    // Caller holds write_mu_ (or is still constructing).
    void append(const nlohmann::json& event) {
        events_ << event.dump() << '\n';
        events_.flush();
        if (!events_) throw IoError("cannot append to the event log of session '" + id_ + "'");
    }

    void work() {
        std::unique_lock lk(worker_mu_);
        while (true) {
            worker_cv_.wait(lk, [&] { return requested_ || stopping_; });
            if (stopping_) return;
            requested_ = false;
            busy_ = true;
            lk.unlock();
            try {
                rebuild();
            } catch (const std::exception&) {
                // Kept in rebuild_error_ (or retried on the next trigger).
            }
            lk.lock();
            busy_ = false;
            idle_cv_.notify_all();
        }
    }

    const std::string id_;
    const std::filesystem::path dir_;
    const ExerciseDataset dataset_;
    const std::map<std::string, ParsedSubmission> parsed_;
    std::map<std::string, std::size_t> lines_;
    const ServiceConfig& config_;

    mutable std::mutex write_mu_;
    std::vector<AnnotationInstance> log_;
    std::vector<Annotation> library_;
    std::set<std::string> library_ids_;
    std::size_t since_rebuild_ = 0;
    std::size_t minted_ = 0;
    std::optional<std::string> last_submission_;
    std::ofstream events_;

    mutable std::mutex model_mu_;
    std::shared_ptr<const Generation> current_;
    std::optional<std::string> rebuild_error_;

    std::mutex rebuild_mu_;
    std::uint64_t last_generation_ = 0;
    MiningCache cache_;

    mutable std::mutex worker_mu_;
    std::condition_variable worker_cv_;
    mutable std::condition_variable idle_cv_;
    bool requested_ = false, busy_ = false, stopping_ = false;
    std::thread worker_;
};

ReviewService::ReviewService(ServiceConfig config) : config_(std::move(config)) {
    std::filesystem::create_directories(config_.data_dir);
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(config_.data_dir))
        if (entry.is_directory() && std::filesystem::is_regular_file(entry.path() / "manifest.json"))
            dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        auto session = std::make_shared<ReviewSession>(dir.filename().string(), dir, load_manifest(dir / "manifest.json"),
                                                       config_);
        session->replay();
        sessions_.emplace(session->id(), std::move(session));
    }
}

ReviewService::~ReviewService() = default;

std::shared_ptr<ReviewSession> ReviewService::find(const std::string& session) const {
    std::lock_guard lk(mutex_);
    auto it = sessions_.find(session);
    if (it == sessions_.end()) throw UnknownSession(session);
    return it->second;
}

std::string ReviewService::create_session(const nlohmann::json& manifest) {
    auto dataset = dataset_from_json(manifest, std::filesystem::current_path());
    std::shared_ptr<ReviewSession> session;
    {
        std::lock_guard lk(mutex_);
        std::size_t n = sessions_.size() + 1;
        while (sessions_.count(session_name(n)) || std::filesystem::exists(config_.data_dir / session_name(n))) ++n;
        const auto id = session_name(n);
        const auto dir = config_.data_dir / id;
        std::filesystem::create_directories(dir);
        {
            std::ofstream out(dir / "manifest.json", std::ios::binary);
            out << to_json(dataset, true).dump(2) << '\n';
            if (!out) throw IoError("cannot write manifest for '" + id + "'");
        }
        session = std::make_shared<ReviewSession>(id, dir, std::move(dataset), config_);
        session->open_events();
        sessions_.emplace(id, session);
    }
    if (!session->dataset().instances.empty()) {
        try {
            session->rebuild();
        } catch (const PatternExplosion&) {
            // The session exists; its status carries the error.
        }
    }
    return session->id();
}

std::vector<std::string> ReviewService::session_ids() const {
    std::lock_guard lk(mutex_);
    std::vector<std::string> ids;
    for (const auto& [id, s] : sessions_) ids.push_back(id);
    return ids;
}

SessionStatus ReviewService::status(const std::string& session) const { return find(session)->status(); }

std::vector<SubmissionStatus> ReviewService::submissions(const std::string& session) const {
    return find(session)->submissions();
}

const SubmissionRecord& ReviewService::submission(const std::string& session, const std::string& submission_id) const {
    return find(session)->submission(submission_id);
}

std::vector<Annotation> ReviewService::annotations(const std::string& session) const {
    return find(session)->annotations();
}

RecordResult ReviewService::record_instance(const std::string& session, const std::string& submission_id, int line,
                                            const std::optional<std::string>& annotation_id,
                                            const std::optional<std::string>& text) {
    return find(session)->record(submission_id, line, annotation_id, text);
}

SuggestResult ReviewService::suggest(const std::string& session, const std::string& submission_id, int line,
                                     std::size_t top_k) const {
    return find(session)->suggest(submission_id, line, top_k);
}

std::uint64_t ReviewService::rebuild(const std::string& session) { return find(session)->rebuild(); }

Generation ReviewService::current(const std::string& session) const { return *find(session)->snapshot(); }

void ReviewService::wait_idle(const std::string& session) const { find(session)->wait_idle(); }

}  // namespace echo

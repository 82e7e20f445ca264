#include "echo/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>

namespace echo {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::vector<AnnotationInstance> instances_of(const ExerciseDataset& dataset, const std::set<std::string>& submissions) {
    std::vector<AnnotationInstance> out;
    for (const auto& i : dataset.instances)
        if (submissions.count(i.submission_id)) out.push_back(i);
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write '" + path.string() + "'");
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string fixed(double v, int digits = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string records_csv(const std::vector<EvalRecord>& records, bool with_step) {
    std::string out = with_step ? "step," : "";
    out += "submission,line,annotation,outcome,rank,train_size\n";
    for (const auto& r : records) {
        if (with_step) out += std::to_string(r.step) + ",";
        out += csv_field(r.instance.submission_id) + "," + std::to_string(r.instance.line) + "," +
               csv_field(r.instance.annotation_id) + "," + std::string(to_string(r.outcome)) + "," +
               std::to_string(r.rank) + "," + std::to_string(r.train_size) + "\n";
    }
    return out;
}

std::string summary_csv(const OutcomeCounts& c, std::size_t top_k) {
    auto row = [&](const std::string& name, std::size_t n) {
        const double fraction = c.total ? static_cast<double>(n) / static_cast<double>(c.total) : 0.0;
        return name + "," + std::to_string(n) + "," + fixed(fraction) + "\n";
    };
    std::string out = "category,count,fraction\n";
    out += row("top1", c.top1);
    out += row("top2_" + std::to_string(top_k), c.top2_to_k);
    out += row("not_in_top" + std::to_string(top_k), c.not_in_top_k);
    out += row("no_training_instances", c.no_training);
    out += row("no_patterns", c.no_patterns);
    out += row("total", c.total);
    return out;
}

nlohmann::json to_json(const OutcomeCounts& c) {
    return {{"total", c.total},           {"top1", c.top1},
            {"top2_to_k", c.top2_to_k},   {"not_in_top_k", c.not_in_top_k},
            {"no_training_instances", c.no_training}, {"no_patterns", c.no_patterns}};
}

nlohmann::json to_json(const TimingSummary& t) {
    return {{"count", t.count}, {"min_ms", t.min_ms}, {"mean_ms", t.mean_ms}, {"median_ms", t.median_ms}, {"max_ms", t.max_ms}};
}

nlohmann::json to_json(const EvalRecord& r) {
    return {{"submission", r.instance.submission_id},
            {"line", r.instance.line},
            {"annotation", r.instance.annotation_id},
            {"outcome", to_string(r.outcome)},
            {"rank", r.rank},
            {"train_size", r.train_size},
            {"step", r.step},
            {"predict_ms", r.predict_ms}};
}

}  // namespace

std::string_view to_string(Outcome outcome) {
    switch (outcome) {
        case Outcome::Ranked: return "ranked";
        case Outcome::NotInTopK: return "not_in_top_k";
        case Outcome::NoTrainingInstances: return "no_training_instances";
        case Outcome::NoPatterns: return "no_patterns";
    }
    return "unknown";
}

void OutcomeCounts::add(const EvalRecord& r) {
    ++total;
    switch (r.outcome) {
        case Outcome::Ranked: (r.rank == 1 ? top1 : top2_to_k) += 1; break;
        case Outcome::NotInTopK: ++not_in_top_k; break;
        case Outcome::NoTrainingInstances: ++no_training; break;
        case Outcome::NoPatterns: ++no_patterns; break;
    }
}

TimingSummary summarize_times(std::vector<double> ms) {
    TimingSummary t;
    t.count = ms.size();
    if (ms.empty()) return t;
    std::sort(ms.begin(), ms.end());
    t.min_ms = ms.front();
    t.max_ms = ms.back();
    t.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
    const std::size_t mid = ms.size() / 2;
    t.median_ms = ms.size() % 2 ? ms[mid] : (ms[mid - 1] + ms[mid]) / 2.0;
    return t;
}

EvalRecord evaluate_instance(const AnnotationModel& model, const AnnotationInstance& instance,
                             const ParsedSubmission& submission, std::size_t top_k) {
    EvalRecord r;
    r.instance = instance;
    const auto start = Clock::now();
    const auto* entry = model.find(instance.annotation_id);
    if (!entry) {
        r.outcome = Outcome::NoTrainingInstances;
    } else if (auto context = extract_line_context(submission.tree, instance.line - 1)) {
        const auto ranked = model.rank_all(model.encode_query(*context));
        for (std::size_t k = 0; k < ranked.size(); ++k) {
            if (ranked[k].annotation_id == instance.annotation_id) {
                r.rank = k + 1;
                break;
            }
        }
        r.outcome = r.rank <= top_k ? Outcome::Ranked : Outcome::NotInTopK;
    }
    if (entry && r.outcome != Outcome::Ranked && entry->patterns.empty() && entry->unique_nodes.empty())
        r.outcome = Outcome::NoPatterns;
    r.predict_ms = elapsed_ms(start);
    return r;
}

SplitResult eval_split(const ExerciseDataset& dataset, const std::map<std::string, ParsedSubmission>& parsed,
                       const EvalConfig& config) {
    if (!(config.split > 0.0 && config.split < 1.0)) throw Error("InvalidConfig", "split must be in (0, 1)");
    SplitResult result;
    const std::size_t n = dataset.submissions.size();
    result.train_submissions =
        std::min(n, static_cast<std::size_t>(std::ceil(config.split * static_cast<double>(n) - 1e-9)));
    result.test_submissions = n - result.train_submissions;
    std::set<std::string> train_ids, test_ids;
    for (std::size_t i = 0; i < n; ++i)
        (i < result.train_submissions ? train_ids : test_ids).insert(dataset.submissions[i].id);

    const auto start = Clock::now();
    result.model = train(instances_of(dataset, train_ids), parsed, config.model, &result.training_report);
    result.train_ms = elapsed_ms(start);

    for (const auto& inst : instances_of(dataset, test_ids)) {
        auto r = evaluate_instance(result.model, inst, parsed.at(inst.submission_id), config.top_k);
        r.train_size = result.train_submissions;
        result.counts.add(r);
        result.records.push_back(std::move(r));
    }
    return result;
}

LongitudinalResult eval_longitudinal(const ExerciseDataset& dataset,
                                     const std::map<std::string, ParsedSubmission>& parsed, const EvalConfig& config) {
    std::map<std::string, std::vector<AnnotationInstance>> by_submission;
    for (const auto& i : dataset.instances) by_submission[i.submission_id].push_back(i);
    std::vector<const SubmissionRecord*> order;
    for (const auto& s : dataset.submissions)
        if (!config.drop_unannotated || by_submission.count(s.id)) order.push_back(&s);
    if (by_submission.size() < 2) throw EmptyTrainingSet();

    LongitudinalResult result;
    AnnotationModel model;
    std::vector<AnnotationInstance> seen;
    std::set<std::string> seen_annotations;
    std::deque<std::pair<std::size_t, std::size_t>> window;  // (hits, instances) per step
    bool stale = false;
    MiningCache cache;

    for (std::size_t k = 0; k < order.size(); ++k) {
        StepStats step;
        step.step = k;
        step.submission_id = order[k]->id;
        step.train_size = k;
        if (stale) {
            const auto start = Clock::now();
            try {
                model = train(seen, parsed, config.model, nullptr, &cache);
                cache.prune();
            } catch (const EmptyTrainingSet&) {
                model = AnnotationModel{};
            }
            step.train_ms = elapsed_ms(start);
            stale = false;
        }
        std::vector<double> times;
        const auto it = by_submission.find(order[k]->id);
        const std::vector<AnnotationInstance> none;
        for (const auto& inst : it == by_submission.end() ? none : it->second) {
            auto r = evaluate_instance(model, inst, parsed.at(inst.submission_id), config.top_k);
            r.train_size = k;
            r.step = k;
            step.counts.add(r);
            result.counts.add(r);
            times.push_back(r.predict_ms);
            result.records.push_back(std::move(r));
        }
        step.predict = summarize_times(std::move(times));

        window.emplace_back(step.counts.in_top_k(), step.counts.total);
        if (window.size() > config.rolling_window) window.pop_front();
        std::size_t hits = 0, total = 0;
        for (const auto& [h, t] : window) {
            hits += h;
            total += t;
        }
        if (total) step.rolling_top_k = static_cast<double>(hits) / static_cast<double>(total);

        if (it != by_submission.end()) {
            for (const auto& inst : it->second) {
                seen.push_back(inst);
                seen_annotations.insert(inst.annotation_id);
            }
            stale = true;
        }
        step.annotations_seen = seen_annotations.size();
        result.steps.push_back(std::move(step));
    }
    return result;
}

nlohmann::json to_json(const EvalConfig& config) {
    return {{"model", to_json(config.model)},
            {"split", config.split},
            {"top_k", config.top_k},
            {"drop_unannotated", config.drop_unannotated},
            {"rolling_window", config.rolling_window},
            {"seed", config.seed}};
}

void write_split_report(const std::filesystem::path& dir, const ExerciseDataset& dataset, const EvalConfig& config,
                        const SplitResult& result) {
    std::filesystem::create_directories(dir);
    write_file(dir / "model.json", result.model.serialize() + "\n");
    write_file(dir / "records.csv", records_csv(result.records, false));
    write_file(dir / "summary.csv", summary_csv(result.counts, config.top_k));

    std::string timings = "submission,line,annotation,predict_ms\n";
    std::vector<double> ms;
    for (const auto& r : result.records) {
        timings += csv_field(r.instance.submission_id) + "," + std::to_string(r.instance.line) + "," +
                   csv_field(r.instance.annotation_id) + "," + fixed(r.predict_ms, 3) + "\n";
        ms.push_back(r.predict_ms);
    }
    write_file(dir / "timings.csv", timings);

    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : result.records) records.push_back(to_json(r));
    nlohmann::json dropped = nlohmann::json::array();
    for (const auto& d : result.training_report.dropped)
        dropped.push_back({{"annotation", d.annotation_id}, {"submission", d.submission_id}, {"line", d.line}});
    const nlohmann::json report{{"protocol", "split"},
                                {"exercise", dataset.exercise},
                                {"config", to_json(config)},
                                {"train_submissions", result.train_submissions},
                                {"test_submissions", result.test_submissions},
                                {"train_ms", result.train_ms},
                                {"predict", to_json(summarize_times(ms))},
                                {"counts", to_json(result.counts)},
                                {"dropped_training_instances", std::move(dropped)},
                                {"records", std::move(records)}};
    write_file(dir / "report.json", report.dump(2) + "\n");
}

void write_longitudinal_report(const std::filesystem::path& dir, const ExerciseDataset& dataset,
                               const EvalConfig& config, const LongitudinalResult& result) {
    std::filesystem::create_directories(dir);
    write_file(dir / "records.csv", records_csv(result.records, true));
    write_file(dir / "summary.csv", summary_csv(result.counts, config.top_k));

    const std::string k = std::to_string(config.top_k);
    std::string outcomes = "step,submission,train_size,top1,top2_" + k + ",not_in_top" + k +
                           ",no_training_instances,no_patterns\n";
    std::string curves = "step,train_size,annotations_seen,rolling_top" + k + "\n";
    std::string timings = "step,train_size,train_ms,predictions,predict_min_ms,predict_mean_ms,predict_max_ms\n";
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : result.steps) {
        const auto& c = s.counts;
        outcomes += std::to_string(s.step) + "," + csv_field(s.submission_id) + "," + std::to_string(s.train_size) +
                    "," + std::to_string(c.top1) + "," + std::to_string(c.top2_to_k) + "," +
                    std::to_string(c.not_in_top_k) + "," + std::to_string(c.no_training) + "," +
                    std::to_string(c.no_patterns) + "\n";
        curves += std::to_string(s.step) + "," + std::to_string(s.train_size) + "," +
                  std::to_string(s.annotations_seen) + "," + (s.rolling_top_k ? fixed(*s.rolling_top_k) : "") + "\n";
        timings += std::to_string(s.step) + "," + std::to_string(s.train_size) + "," + fixed(s.train_ms, 3) + "," +
                   std::to_string(s.predict.count) + "," + fixed(s.predict.min_ms, 3) + "," +
                   fixed(s.predict.mean_ms, 3) + "," + fixed(s.predict.max_ms, 3) + "\n";
        steps.push_back({{"step", s.step},
                         {"submission", s.submission_id},
                         {"train_size", s.train_size},
                         {"counts", to_json(s.counts)},
                         {"annotations_seen", s.annotations_seen},
                         {"rolling_top_k", s.rolling_top_k ? nlohmann::json(*s.rolling_top_k) : nlohmann::json()},
                         {"train_ms", s.train_ms},
                         {"predict", to_json(s.predict)}});
    }
    write_file(dir / "outcomes_by_step.csv", outcomes);
    write_file(dir / "learning_curve.csv", curves);
    write_file(dir / "timings.csv", timings);

    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : result.records) records.push_back(to_json(r));
    const nlohmann::json report{{"protocol", "longitudinal"},
                                {"exercise", dataset.exercise},
                                {"config", to_json(config)},
                                {"counts", to_json(result.counts)},
                                {"steps", std::move(steps)},
                                {"records", std::move(records)}};
    write_file(dir / "report.json", report.dump(2) + "\n");
}

}  // namespace echo

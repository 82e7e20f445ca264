#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "echo/annotation_model.hpp"
#include "echo/datasets.hpp"

namespace echo {

enum class Outcome { Ranked, NotInTopK, NoTrainingInstances, NoPatterns };

std::string_view to_string(Outcome outcome);

/// Outcome of one test instance, in precedence order: the annotation is
/// absent from the model; it is ranked within top_k; it has no patterns
/// and no unique nodes to score with; otherwise it is not in the top k.
struct EvalRecord {
    AnnotationInstance instance;
    Outcome outcome = Outcome::NotInTopK;
    /// 1-based rank among all annotations; 0 when not ranked.
    std::size_t rank = 0;
    double predict_ms = 0.0;
    /// Submissions in the training set.
    std::size_t train_size = 0;
    /// Longitudinal step (index of the predicted submission); 0 for splits.
    std::size_t step = 0;
};

struct EvalConfig {
    ModelConfig model;
    double split = 0.5;
    std::size_t top_k = 5;
    /// Longitudinal: skip submissions that carry no instances.
    bool drop_unannotated = false;
    /// Longitudinal: steps in the trailing window of the rolling top-k rate.
    std::size_t rolling_window = 20;
    /// Recorded in reports; evaluation itself draws no random numbers.
    std::uint64_t seed = 42;
};

struct OutcomeCounts {
    std::size_t total = 0;
    std::size_t top1 = 0;
    std::size_t top2_to_k = 0;
    std::size_t not_in_top_k = 0;
    std::size_t no_training = 0;
    std::size_t no_patterns = 0;

    void add(const EvalRecord& r);
    std::size_t in_top_k() const { return top1 + top2_to_k; }
};

struct TimingSummary {
    std::size_t count = 0;
    double min_ms = 0, mean_ms = 0, median_ms = 0, max_ms = 0;
};
TimingSummary summarize_times(std::vector<double> ms);

/// Classifies `instance` against `model` (which may be empty).
EvalRecord evaluate_instance(const AnnotationModel& model, const AnnotationInstance& instance,
                             const ParsedSubmission& submission, std::size_t top_k);

struct SplitResult {
    std::size_t train_submissions = 0;
    std::size_t test_submissions = 0;
    AnnotationModel model;
    TrainingReport training_report;
    double train_ms = 0.0;
    std::vector<EvalRecord> records;
    OutcomeCounts counts;
};

/// First ceil(split * N) submissions in review order train, the rest test.
SplitResult eval_split(const ExerciseDataset& dataset, const std::map<std::string, ParsedSubmission>& parsed,
                       const EvalConfig& config);

struct StepStats {
    std::size_t step = 0;
    std::string submission_id;
    std::size_t train_size = 0;
    OutcomeCounts counts;
    std::size_t annotations_seen = 0;
    /// Top-k rate over the trailing window; none while the window is empty.
    std::optional<double> rolling_top_k;
    double train_ms = 0.0;
    TimingSummary predict;
};

struct LongitudinalResult {
    std::vector<EvalRecord> records;
    std::vector<StepStats> steps;
    OutcomeCounts counts;
};

/// Step k trains on submissions [0, k) and predicts submission k, starting
/// from k = 0 with an empty model. Needs instances on at least two
/// submissions (EmptyTrainingSet otherwise).
LongitudinalResult eval_longitudinal(const ExerciseDataset& dataset,
                                     const std::map<std::string, ParsedSubmission>& parsed, const EvalConfig& config);

/// Reports: deterministic files (model.json, records.csv, summary.csv and the
/// plot CSVs) are separate from wall-clock ones (timings.csv, report.json).
void write_split_report(const std::filesystem::path& dir, const ExerciseDataset& dataset, const EvalConfig& config,
                        const SplitResult& result);
void write_longitudinal_report(const std::filesystem::path& dir, const ExerciseDataset& dataset,
                               const EvalConfig& config, const LongitudinalResult& result);

nlohmann::json to_json(const EvalConfig& config);

}  // namespace echo

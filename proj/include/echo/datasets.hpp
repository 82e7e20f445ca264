#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "echo/annotation_model.hpp"
#include "echo/ingest.hpp"

namespace echo {

class SchemaError : public Error {
public:
    explicit SchemaError(const std::string& message) : Error("SchemaError", message) {}
};

class DanglingReference : public Error {
public:
    explicit DanglingReference(std::vector<std::string> references);
    const std::vector<std::string>& references() const noexcept { return references_; }

private:
    std::vector<std::string> references_;
};

struct SubmissionRecord {
    std::string id;
    /// As written in the manifest (relative paths resolve against it).
    std::string path;
    std::string source;
};

/// One exercise: submissions in review order, its annotations and instances.
struct ExerciseDataset {
    std::string exercise;
    std::string grammar = "python";
    std::vector<SubmissionRecord> submissions;
    std::vector<Annotation> annotations;
    std::vector<AnnotationInstance> instances;

    const SubmissionRecord* find_submission(std::string_view id) const;
    const Annotation* find_annotation(std::string_view id) const;
};

/// Every unresolved reference, duplicate id or out-of-range line.
std::vector<std::string> reference_errors(const ExerciseDataset& dataset);
/// Throws DanglingReference listing every problem reference_errors finds.
void check_references(const ExerciseDataset& dataset);

/// Reads the manifest; submission sources come from an inline "source"
/// field or from "path" relative to `base_dir`.
ExerciseDataset dataset_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExerciseDataset load_manifest(const std::filesystem::path& path);

/// Manifest form; sources are written inline when `inline_sources` is set.
nlohmann::json to_json(const ExerciseDataset& dataset, bool inline_sources);
/// Writes the manifest plus one file per submission path under `dir`.
void write_dataset(const ExerciseDataset& dataset, const std::filesystem::path& dir,
                   const std::string& manifest_name = "manifest.json");

std::map<std::string, ParsedSubmission> parse_submissions(const ExerciseDataset& dataset,
                                                          const GrammarRegistry& registry = default_registry());

struct DatasetStats {
    std::size_t submissions = 0;
    std::size_t annotations = 0;
    std::size_t instances = 0;

    bool operator==(const DatasetStats&) const = default;
};
DatasetStats stats(const ExerciseDataset& dataset);

/// Linter message ids that say nothing about code structure.
const std::set<std::string>& default_linter_exclusions();

struct LinterImport {
    std::vector<Annotation> annotations;
    std::vector<AnnotationInstance> instances;
    std::size_t excluded = 0;
};

/// Reads a JSON array of {"path", "line", "message-id" | "symbol", "message"}.
/// One annotation per distinct message id, one instance per kept entry; the
/// submission id is the entry's path.
LinterImport import_linter_report(const nlohmann::json& report,
                                  const std::set<std::string>& exclusions = default_linter_exclusions());

/// Dataset over `paths` (ids = paths) annotated from a linter report.
ExerciseDataset dataset_from_linter_report(const std::string& exercise, const std::vector<std::string>& paths,
                                           const nlohmann::json& report,
                                           const std::set<std::string>& exclusions = default_linter_exclusions());

/// Generator for planted-motif corpora: every annotation is tied to one
/// distinctive statement shape, instances sit on lines carrying it.
struct SynthConfig {
    std::size_t submissions = 200;
    std::size_t annotations = 40;
    std::size_t instances = 400;
    std::uint64_t seed = 42;
    /// Annotation popularity ~ 1 / rank^skew (0 = uniform).
    double popularity_skew = 1.0;
    /// Instances every annotation gets before the popularity draw.
    std::size_t min_instances = 5;
    /// Filler statements per submission (inclusive range).
    std::size_t min_filler = 6;
    std::size_t max_filler = 14;
};

ExerciseDataset synthesize_dataset(const SynthConfig& config);

/// Linter-style report over a synthetic corpus: `kept` entries spread over
/// `message_ids` structural ids plus `excluded_entries` entries carrying
/// the default exclusions.
struct SynthLinterReport {
    std::vector<SubmissionRecord> submissions;
    nlohmann::json report;
};
SynthLinterReport synthesize_linter_report(std::size_t submissions, std::size_t message_ids, std::size_t kept,
                                           std::size_t excluded_entries, std::uint64_t seed);

}  // namespace echo

#include "echo/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace echo {

namespace {

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::size_t line_count(std::string_view source) {
    if (source.empty()) return 0;
    const auto newlines = static_cast<std::size_t>(std::count(source.begin(), source.end(), '\n'));
    return source.back() == '\n' ? newlines : newlines + 1;
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw SchemaError(where + ": missing '" + key + "'");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw SchemaError(where + ": '" + key + "' has the wrong type");
    }
}

const nlohmann::json& array_field(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_array()) throw SchemaError(std::string("manifest: '") + key + "' must be an array");
    return *it;
}

}  // namespace

DanglingReference::DanglingReference(std::vector<std::string> references)
    : Error("DanglingReference", "broken references: " + join(references, "; ")), references_(std::move(references)) {}

const SubmissionRecord* ExerciseDataset::find_submission(std::string_view id) const {
    for (const auto& s : submissions)
        if (s.id == id) return &s;
    return nullptr;
}

const Annotation* ExerciseDataset::find_annotation(std::string_view id) const {
    for (const auto& a : annotations)
        if (a.id == id) return &a;
    return nullptr;
}

std::vector<std::string> reference_errors(const ExerciseDataset& dataset) {
    std::vector<std::string> errors;
    std::map<std::string, std::size_t> lines;
    for (const auto& s : dataset.submissions)
        if (!lines.emplace(s.id, line_count(s.source)).second) errors.push_back("duplicate submission '" + s.id + "'");
    std::set<std::string> annotations;
    for (const auto& a : dataset.annotations)
        if (!annotations.insert(a.id).second) errors.push_back("duplicate annotation '" + a.id + "'");
    for (std::size_t i = 0; i < dataset.instances.size(); ++i) {
        const auto& inst = dataset.instances[i];
        const std::string where = "instance " + std::to_string(i);
        if (!annotations.count(inst.annotation_id))
            errors.push_back(where + ": unknown annotation '" + inst.annotation_id + "'");
        auto it = lines.find(inst.submission_id);
        if (it == lines.end()) {
            errors.push_back(where + ": unknown submission '" + inst.submission_id + "'");
        } else if (inst.line < 1 || static_cast<std::size_t>(inst.line) > it->second) {
            errors.push_back(where + ": line " + std::to_string(inst.line) + " outside submission '" +
                             inst.submission_id + "'");
        }
    }
    return errors;
}

void check_references(const ExerciseDataset& dataset) {
    auto errors = reference_errors(dataset);
    if (!errors.empty()) throw DanglingReference(std::move(errors));
}

ExerciseDataset dataset_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    if (!j.is_object()) throw SchemaError("manifest must be a JSON object");
    ExerciseDataset d;
    d.exercise = field<std::string>(j, "exercise", "manifest");
    d.grammar = j.contains("grammar") ? field<std::string>(j, "grammar", "manifest") : "python";
    std::vector<std::string> missing;
    for (const auto& s : array_field(j, "submissions")) {
        SubmissionRecord rec;
        rec.id = field<std::string>(s, "id", "submission");
        if (s.contains("source")) {
            rec.source = field<std::string>(s, "source", "submission '" + rec.id + "'");
            rec.path = s.contains("path") ? field<std::string>(s, "path", "submission '" + rec.id + "'") : rec.id;
        } else {
            rec.path = field<std::string>(s, "path", "submission '" + rec.id + "'");
            const auto full = base_dir / rec.path;
            if (!std::filesystem::is_regular_file(full)) {
                missing.push_back("submission '" + rec.id + "': file '" + rec.path + "' not found");
            } else {
                rec.source = read_text_file(full);
            }
        }
        d.submissions.push_back(std::move(rec));
    }
    for (const auto& a : array_field(j, "annotations"))
        d.annotations.push_back({field<std::string>(a, "id", "annotation"),
                                 a.contains("text") ? field<std::string>(a, "text", "annotation") : std::string()});
    for (const auto& i : array_field(j, "instances"))
        d.instances.push_back({field<std::string>(i, "annotation", "instance"),
                               field<std::string>(i, "submission", "instance"), field<int>(i, "line", "instance")});
    auto errors = reference_errors(d);
    missing.insert(missing.end(), errors.begin(), errors.end());
    if (!missing.empty()) throw DanglingReference(std::move(missing));
    return d;
}

ExerciseDataset load_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw SchemaError("manifest '" + path.string() + "': " + e.what());
    }
    return dataset_from_json(j, path.parent_path());
}

nlohmann::json to_json(const ExerciseDataset& dataset, bool inline_sources) {
    nlohmann::json subs = nlohmann::json::array();
    for (const auto& s : dataset.submissions) {
        nlohmann::json e{{"id", s.id}, {"path", s.path}};
        if (inline_sources) e["source"] = s.source;
        subs.push_back(std::move(e));
    }
    nlohmann::json anns = nlohmann::json::array();
    for (const auto& a : dataset.annotations) anns.push_back({{"id", a.id}, {"text", a.text}});
    nlohmann::json insts = nlohmann::json::array();
    for (const auto& i : dataset.instances)
        insts.push_back({{"annotation", i.annotation_id}, {"submission", i.submission_id}, {"line", i.line}});
    return {{"exercise", dataset.exercise},
            {"grammar", dataset.grammar},
            {"submissions", std::move(subs)},
            {"annotations", std::move(anns)},
            {"instances", std::move(insts)}};
}

void write_dataset(const ExerciseDataset& dataset, const std::filesystem::path& dir, const std::string& manifest_name) {
    std::filesystem::create_directories(dir);
    for (const auto& s : dataset.submissions) {
        const auto full = dir / s.path;
        std::filesystem::create_directories(full.parent_path());
        std::ofstream out(full, std::ios::binary);
        out << s.source;
        if (!out) throw IoError("cannot write '" + full.string() + "'");
    }
    std::ofstream out(dir / manifest_name, std::ios::binary);
    out << to_json(dataset, false).dump(2) << '\n';
    if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
}

std::map<std::string, ParsedSubmission> parse_submissions(const ExerciseDataset& dataset,
                                                          const GrammarRegistry& registry) {
    std::map<std::string, ParsedSubmission> out;
    for (const auto& s : dataset.submissions)
        out.emplace(s.id, ParsedSubmission{s.id, s.source, parse_and_postprocess(s.source, dataset.grammar, registry)});
    return out;
}

DatasetStats stats(const ExerciseDataset& dataset) {
    return {dataset.submissions.size(), dataset.annotations.size(), dataset.instances.size()};
}

const std::set<std::string>& default_linter_exclusions() {
    static const std::set<std::string> ids = {"line-too-long",           "trailing-whitespace",
                                              "trailing-newlines",       "missing-module-docstring",
                                              "missing-class-docstring", "missing-function-docstring"};
    return ids;
}

LinterImport import_linter_report(const nlohmann::json& report, const std::set<std::string>& exclusions) {
    if (!report.is_array()) throw SchemaError("linter report must be a JSON array");
    LinterImport out;
    std::map<std::string, std::string> texts;
    for (std::size_t k = 0; k < report.size(); ++k) {
        const auto& e = report[k];
        const std::string where = "report entry " + std::to_string(k);
        if (!e.is_object()) throw SchemaError(where + " is not an object");
        const auto path = field<std::string>(e, "path", where);
        const auto line = field<int>(e, "line", where);
        // Pylint puts the readable name in "symbol" and a code in "message-id".
        std::string id, code;
        if (e.contains("message-id")) code = field<std::string>(e, "message-id", where);
        id = e.contains("symbol") ? field<std::string>(e, "symbol", where) : code;
        if (id.empty()) throw SchemaError(where + ": missing 'message-id'");
        if (exclusions.count(id) || (!code.empty() && exclusions.count(code))) {
            ++out.excluded;
            continue;
        }
        const auto message = e.contains("message") ? field<std::string>(e, "message", where) : id;
        texts.emplace(id, message);
        out.instances.push_back({id, path, line});
    }
    for (const auto& [id, text] : texts) out.annotations.push_back({id, text});
    return out;
}

ExerciseDataset dataset_from_linter_report(const std::string& exercise, const std::vector<std::string>& paths,
                                           const nlohmann::json& report, const std::set<std::string>& exclusions) {
    ExerciseDataset d;
    d.exercise = exercise;
    for (const auto& p : paths) d.submissions.push_back({p, p, read_text_file(p)});
    auto imported = import_linter_report(report, exclusions);
    d.annotations = std::move(imported.annotations);
    d.instances = std::move(imported.instances);
    check_references(d);
    return d;
}

namespace {

const std::vector<std::string> kVocabulary = {"x", "y", "i", "n", "data", "result", "values", "count", "item", "total",
                                              "key", "row"};
const std::vector<std::string> kStems = {"scale", "merge", "parse", "clamp", "render", "probe", "shift", "fold",
                                         "split", "pack"};

// {f}: the annotation's own name; {v}, {w}: vocabulary; {n}: small integer.
const std::vector<std::string> kMotifs = {
    "{v} = {f}({w}) + {n}",
    "for {v} in {f}({w}): total += {v}",
    "if {v} > {f}: {w} = {n}",
    "{v}.{f}({n}, {w})",
    "{v} = [{w} for {w} in {f} if {w}]",
    "while {f}({v}) < {n}: {v} -= 1",
    "{v} = {f}[{w}:{n}]",
    "assert {f}({v}) == {w}, 'check'",
};

const std::vector<std::string> kFiller = {
    "{v} = {w} + {n}",   "{v} = len({w})",      "print({v})",         "{v}.append({w})",
    "{v} += {n}",        "if {v}: {w} = {v}",   "for {v} in range({n}): print({v})",
    "{v} = {w} * {n}",   "{v} = [{n}, {w}]",    "{v} = {w}[{n}]",     "# {v} {w}",
    "",
};

std::string fill_shape(std::string_view shape, const std::string& f, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> word(0, kVocabulary.size() - 1);
    std::uniform_int_distribution<int> number(0, 9);
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (shape[i] == '{' && i + 2 < shape.size() && shape[i + 2] == '}') {
            switch (shape[i + 1]) {
                case 'f': out += f; break;
                case 'v':
                case 'w': out += kVocabulary[word(rng)]; break;
                case 'n': out += std::to_string(number(rng)); break;
                default: out += shape.substr(i, 3);
            }
            i += 2;
        } else {
            out += shape[i];
        }
    }
    return out;
}

std::string pad(std::size_t value, int width) {
    std::string s = std::to_string(value);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

ExerciseDataset synthesize_dataset(const SynthConfig& config) {
    const std::size_t floor = std::max<std::size_t>(config.min_instances, 1);
    if (config.annotations == 0 || config.submissions == 0 || config.instances < config.annotations * floor)
        throw Error("InvalidConfig", "synthetic corpus needs instances >= annotations * min_instances");
    std::mt19937_64 rng(config.seed);
    ExerciseDataset d;
    d.exercise = "synthetic-" + std::to_string(config.seed);

    std::vector<std::string> names;
    for (std::size_t a = 0; a < config.annotations; ++a) {
        const std::string id = "motif-" + pad(a, 3);
        names.push_back(kStems[a % kStems.size()] + "_" + std::to_string(a));
        d.annotations.push_back({id, "Shape " + std::to_string(a % kMotifs.size()) + " using " + names.back()});
    }

    // Every annotation gets `floor` instances; the rest follow popularity.
    std::vector<std::size_t> owner;
    for (std::size_t a = 0; a < config.annotations; ++a) owner.insert(owner.end(), floor, a);
    std::vector<double> popularity;
    for (std::size_t a = 0; a < config.annotations; ++a)
        popularity.push_back(1.0 / std::pow(static_cast<double>(a + 1), config.popularity_skew));
    std::discrete_distribution<std::size_t> any_annotation(popularity.begin(), popularity.end());
    while (owner.size() < config.instances) owner.push_back(any_annotation(rng));
    std::shuffle(owner.begin(), owner.end(), rng);

    std::vector<std::vector<std::size_t>> planted(config.submissions);
    std::uniform_int_distribution<std::size_t> any_submission(0, config.submissions - 1);
    for (std::size_t a : owner) planted[any_submission(rng)].push_back(a);

    std::uniform_int_distribution<std::size_t> filler_count(config.min_filler, config.max_filler);
    std::uniform_int_distribution<std::size_t> filler_shape(0, kFiller.size() - 1);
    const int width = static_cast<int>(std::to_string(config.submissions).size());
    for (std::size_t s = 0; s < config.submissions; ++s) {
        // (text, annotation index or -1)
        std::vector<std::pair<std::string, long>> body;
        const std::size_t fillers = filler_count(rng);
        for (std::size_t k = 0; k < fillers; ++k) body.emplace_back(fill_shape(kFiller[filler_shape(rng)], "", rng), -1);
        for (std::size_t a : planted[s])
            body.emplace_back(fill_shape(kMotifs[a % kMotifs.size()], names[a], rng), static_cast<long>(a));
        std::shuffle(body.begin(), body.end(), rng);

        SubmissionRecord rec;
        rec.id = "s" + pad(s, width);
        rec.path = "submissions/" + rec.id + ".py";
        rec.source = "def solve(data, n):\n";
        rec.source += "    total = 0\n";
        int line = 2;
        for (const auto& [text, a] : body) {
            ++line;
            rec.source += text.empty() ? "\n" : "    " + text + "\n";
            if (a >= 0)
                d.instances.push_back({d.annotations[static_cast<std::size_t>(a)].id, rec.id, line});
        }
        rec.source += "    return total\n";
        d.submissions.push_back(std::move(rec));
    }
    // Instances in review order, then by line.
    return d;
}

SynthLinterReport synthesize_linter_report(std::size_t submissions, std::size_t message_ids, std::size_t kept,
                                           std::size_t excluded_entries, std::uint64_t seed) {
    SynthConfig config;
    config.submissions = submissions;
    config.annotations = message_ids;
    config.instances = kept;
    config.min_instances = 1;
    config.seed = seed;
    auto d = synthesize_dataset(config);

    SynthLinterReport out;
    out.submissions = d.submissions;
    std::map<std::string, std::string> path_of;
    for (const auto& s : d.submissions) path_of[s.id] = s.path;
    for (auto& s : out.submissions) s.id = s.path;

    auto entry = [](const std::string& path, int line, const std::string& symbol, const std::string& code,
                    const std::string& message) {
        return nlohmann::json{{"type", "convention"}, {"path", path},         {"line", line},
                              {"column", 0},          {"symbol", symbol},     {"message-id", code},
                              {"message", message},   {"module", path}};
    };
    for (const auto& inst : d.instances) {
        const auto index = inst.annotation_id.substr(inst.annotation_id.find('-') + 1);
        out.report.push_back(entry(path_of[inst.submission_id], inst.line, "structural-rule-" + index, "R" + index,
                                   d.find_annotation(inst.annotation_id)->text));
    }
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const std::vector<std::string> excluded(default_linter_exclusions().begin(), default_linter_exclusions().end());
    std::uniform_int_distribution<std::size_t> any_submission(0, d.submissions.size() - 1);
    for (std::size_t k = 0; k < excluded_entries; ++k) {
        const auto& s = d.submissions[any_submission(rng)];
        out.report.push_back(entry(s.path, 1, excluded[k % excluded.size()], "C0" + std::to_string(300 + k % excluded.size()),
                                   excluded[k % excluded.size()]));
    }
    return out;
}

}  // namespace echo

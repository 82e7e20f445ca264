#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>

#include "echo/evaluation.hpp"
#include "echo/matcher.hpp"
#include "echo/miner.hpp"
#include "echo/review_service.hpp"

using namespace echo;
using nlohmann::json;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    return lines;
}

json read_json(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write '" + path + "'");
}

struct ModelOptions {
    double min_support = 0.8;
    bool strict = false;
    std::size_t max_patterns = 0;
    double alpha = 0.5;
    unsigned threads = 0;

    void add_to(CLI::App* app) {
        app->add_option("--min-support", min_support, "Minimum pattern support in [0, 1]")->capture_default_str();
        app->add_flag("--strict-support", strict, "Require support strictly above the threshold");
        app->add_option("--max-patterns", max_patterns, "Pattern cap per annotation (0 = none)")
            ->capture_default_str();
        app->add_option("--alpha", alpha, "Weight of the pattern score in the combined score")
            ->capture_default_str();
        app->add_option("--threads", threads, "Training threads (0 = hardware)")->capture_default_str();
    }
    ModelConfig config() const {
        ModelConfig c;
        c.miner.min_support = min_support;
        c.miner.strict_support = strict;
        c.miner.max_patterns = max_patterns;
        c.alpha = alpha;
        c.threads = threads;
        return c;
    }
};

ReviewServer* running_server = nullptr;

void stop_server(int) {
    if (running_server) running_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"echo: annotation suggestions from mined syntax-tree patterns"};
    app.require_subcommand(1);

    // ingest
    std::string grammar = "python", out_path;
    std::vector<std::string> files;
    bool contexts = false;
    auto* ingest = app.add_subcommand("ingest", "Parse files into syntax-tree interchange JSON, one per line");
    ingest->add_option("--grammar", grammar)->capture_default_str();
    ingest->add_option("--out", out_path, "Output file (default stdout)");
    ingest->add_flag("--contexts", contexts, "Emit the context tree of every line instead");
    ingest->add_option("files", files)->required()->check(CLI::ExistingFile);

    // mine
    std::string forest_path;
    double mine_support = 0.8;
    bool mine_strict = false, with_support = false;
    auto* mine = app.add_subcommand("mine", "Mine frequent patterns from a forest (JSON lines of trees)");
    mine->add_option("--min-support", mine_support)->capture_default_str();
    mine->add_flag("--strict-support", mine_strict);
    mine->add_flag("--with-support", with_support, "Add the per-tree support to each pattern");
    mine->add_option("forest", forest_path)->required()->check(CLI::ExistingFile);

    // match
    std::string pattern_path, tree_path;
    auto* match = app.add_subcommand("match", "Does the pattern embed in the tree? Prints true/false");
    match->add_option("pattern", pattern_path)->required()->check(CLI::ExistingFile);
    match->add_option("tree", tree_path)->required()->check(CLI::ExistingFile);

    // train
    std::string manifest_path, model_path;
    ModelOptions model_options;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a dataset manifest");
    train_cmd->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--out", model_path)->required();
    model_options.add_to(train_cmd);

    // suggest
    std::string file_path;
    int line = 0;
    std::size_t top = 5;
    auto* suggest = app.add_subcommand("suggest", "Rank annotations for one line of a file");
    suggest->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    suggest->add_option("--file", file_path)->required()->check(CLI::ExistingFile);
    suggest->add_option("--line", line, "1-based line")->required();
    suggest->add_option("--top", top)->capture_default_str();
    suggest->add_option("--grammar", grammar)->capture_default_str();

    // eval
    EvalConfig eval_config;
    ModelOptions eval_model;
    std::string report_dir;
    auto* eval = app.add_subcommand("eval", "Evaluation protocols");
    eval->require_subcommand(1);
    auto* split = eval->add_subcommand("split", "Train on the first part of the review order, test on the rest");
    split->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    split->add_option("--split", eval_config.split)->capture_default_str();
    split->add_option("--top", eval_config.top_k)->capture_default_str();
    split->add_option("--seed", eval_config.seed, "Recorded in the report")->capture_default_str();
    split->add_option("--report", report_dir)->required();
    eval_model.add_to(split);
    auto* longitudinal = eval->add_subcommand("longitudinal", "Train on submissions [0, k), predict submission k");
    longitudinal->add_option("--manifest", manifest_path)->required()->check(CLI::ExistingFile);
    longitudinal->add_option("--top", eval_config.top_k)->capture_default_str();
    longitudinal->add_option("--window", eval_config.rolling_window, "Rolling top-k window in steps")
        ->capture_default_str();
    longitudinal->add_flag("--drop-unannotated", eval_config.drop_unannotated);
    longitudinal->add_option("--seed", eval_config.seed, "Recorded in the report")->capture_default_str();
    longitudinal->add_option("--report", report_dir)->required();
    eval_model.add_to(longitudinal);

    // serve
    int port = 8080;
    std::string host = "127.0.0.1", data_dir = "sessions";
    ModelOptions serve_model;
    std::size_t rebuild_after = 10;
    bool no_auto_rebuild = false;
    auto* serve = app.add_subcommand("serve", "Run the review HTTP API");
    serve->add_option("--port", port)->capture_default_str();
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--data-dir", data_dir)->capture_default_str();
    serve->add_option("--rebuild-after", rebuild_after, "Rebuild after this many new instances")
        ->capture_default_str();
    serve->add_flag("--no-auto-rebuild", no_auto_rebuild);
    serve_model.add_to(serve);

    // synth
    SynthConfig synth_config;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Write a synthetic planted-motif dataset");
    synth->add_option("--out", synth_out, "Directory for manifest.json and sources")->required();
    synth->add_option("--submissions", synth_config.submissions)->capture_default_str();
    synth->add_option("--annotations", synth_config.annotations)->capture_default_str();
    synth->add_option("--instances", synth_config.instances)->capture_default_str();
    synth->add_option("--min-instances", synth_config.min_instances)->capture_default_str();
    synth->add_option("--skew", synth_config.popularity_skew, "Popularity ~ 1/rank^skew")->capture_default_str();
    synth->add_option("--seed", synth_config.seed)->capture_default_str();

    // import-linter
    std::string lint_report, exercise = "linter";
    std::vector<std::string> lint_files;
    std::vector<std::string> extra_exclusions;
    bool no_default_exclusions = false;
    auto* lint = app.add_subcommand("import-linter", "Build a dataset from a linter JSON report");
    lint->add_option("--report", lint_report)->required()->check(CLI::ExistingFile);
    lint->add_option("--exercise", exercise)->capture_default_str();
    lint->add_option("--out", synth_out, "Directory for manifest.json and sources")->required();
    lint->add_option("--exclude", extra_exclusions, "Additional message ids to drop");
    lint->add_flag("--no-default-exclusions", no_default_exclusions);
    lint->add_option("files", lint_files, "Submission files (default: every path in the report)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*ingest) {
            std::string text;
            for (const auto& f : files) {
                const auto tree = parse_and_postprocess(read_text_file(f), grammar);
                if (!contexts) {
                    text += to_json(tree).dump() + "\n";
                    continue;
                }
                const int lines = tree.span.end_line + 1;
                for (int l = 0; l < lines; ++l)
                    if (auto c = extract_line_context(tree, l))
                        text += json{{"file", f}, {"line", l + 1}, {"context", to_json(*c)}}.dump() + "\n";
            }
            write_text(out_path, text);
        } else if (*mine) {
            LabelTable table;
            std::vector<EncodedTree> forest;
            for (const auto& l : read_lines(forest_path))
                forest.push_back(validate(labeled_tree_from_json(json::parse(l), true).intern_into(table)));
            MinerConfig config;
            config.min_support = mine_support;
            config.strict_support = mine_strict;
            for (const auto& p : mine_patterns_with_support(forest, config)) {
                auto j = to_json(to_labeled(p.pattern.items(), table));
                if (with_support) j["support"] = p.support;
                std::cout << j.dump() << "\n";
            }
        } else if (*match) {
            LabelTable table;
            const auto p = canonical_pattern(labeled_tree_from_json(read_json(pattern_path), false).intern_into(table));
            const auto t = validate(labeled_tree_from_json(read_json(tree_path), true).intern_into(table));
            std::cout << (pattern_matches(p, t) ? "true" : "false") << "\n";
        } else if (*train_cmd) {
            const auto dataset = load_manifest(manifest_path);
            TrainingReport report;
            const auto model = train(dataset.instances, parse_submissions(dataset), model_options.config(), &report);
            write_text(model_path, model.serialize() + "\n");
            std::cerr << "trained " << model.entries().size() << " annotations";
            if (!report.dropped.empty()) std::cerr << ", " << report.dropped.size() << " instances without context";
            std::cerr << "\n";
        } else if (*suggest) {
            const auto model = AnnotationModel::from_json(read_json(model_path));
            const auto tree = parse_and_postprocess(read_text_file(file_path), grammar);
            const auto context = extract_line_context(tree, line - 1);
            json out{{"line", line}, {"suggestions", json::array()}};
            if (!context) {
                out["reason"] = "no extractable context on this line";
            } else {
                for (const auto& r : model.rank(model.encode_query(*context), top))
                    out["suggestions"].push_back({{"annotation_id", r.annotation_id},
                                                  {"combined", r.combined},
                                                  {"pattern_score", to_string(r.pattern_score)},
                                                  {"unique_fraction", to_string(r.unique_fraction)}});
            }
            std::cout << out.dump(2) << "\n";
        } else if (*split) {
            eval_config.model = eval_model.config();
            const auto dataset = load_manifest(manifest_path);
            const auto result = eval_split(dataset, parse_submissions(dataset), eval_config);
            write_split_report(report_dir, dataset, eval_config, result);
            const auto& c = result.counts;
            std::cout << "test instances " << c.total << ": top1 " << c.top1 << ", top" << eval_config.top_k << " "
                      << c.in_top_k() << ", not in top" << eval_config.top_k << " " << c.not_in_top_k
                      << ", no training instances " << c.no_training << ", no patterns " << c.no_patterns << "\n";
        } else if (*longitudinal) {
            eval_config.model = eval_model.config();
            const auto dataset = load_manifest(manifest_path);
            const auto result = eval_longitudinal(dataset, parse_submissions(dataset), eval_config);
            write_longitudinal_report(report_dir, dataset, eval_config, result);
            const auto& c = result.counts;
            std::cout << "steps " << result.steps.size() << ", instances " << c.total << ": top" << eval_config.top_k
                      << " " << c.in_top_k() << ", no training instances " << c.no_training << "\n";
        } else if (*serve) {
            ServiceConfig config;
            config.data_dir = data_dir;
            config.model = serve_model.config();
            config.rebuild_after_instances = rebuild_after;
            config.auto_rebuild = !no_auto_rebuild;
            ReviewService service(config);
            ReviewServer server(service);
            const int bound = server.bind(host, port);
            if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
            running_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            std::cerr << "listening on " << host << ":" << bound << "\n";
            server.listen();
            running_server = nullptr;
        } else if (*synth) {
            const auto dataset = synthesize_dataset(synth_config);
            write_dataset(dataset, synth_out);
            const auto s = stats(dataset);
            std::cout << s.submissions << " submissions, " << s.annotations << " annotations, " << s.instances
                      << " instances\n";
        } else if (*lint) {
            const auto report = read_json(lint_report);
            std::set<std::string> exclusions;
            if (!no_default_exclusions) exclusions = default_linter_exclusions();
            exclusions.insert(extra_exclusions.begin(), extra_exclusions.end());
            if (lint_files.empty() && report.is_array()) {
                std::set<std::string> seen;
                for (const auto& e : report)
                    if (e.contains("path") && seen.insert(e["path"].get<std::string>()).second)
                        lint_files.push_back(e["path"].get<std::string>());
            }
            auto dataset = dataset_from_linter_report(exercise, lint_files, report, exclusions);
            // Ids stay the report paths; stored copies live under the output directory.
            for (std::size_t k = 0; k < dataset.submissions.size(); ++k) {
                auto& sub = dataset.submissions[k];
                sub.path = "submissions/" + std::to_string(k) + "_" +
                           std::filesystem::path(sub.id).filename().string();
            }
            write_dataset(dataset, synth_out);
            const auto s = stats(dataset);
            std::cout << s.submissions << " submissions, " << s.annotations << " annotations, " << s.instances
                      << " instances\n";
        }
    } catch (const Error& e) {
        std::cerr << e.code() << ": " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

#include "echo/annotation_model.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

namespace echo {

std::string to_string(const Rational& r) {
    const auto num = boost::multiprecision::numerator(r);
    const auto den = boost::multiprecision::denominator(r);
    if (den == 1) return num.str();
    return num.str() + "/" + den.str();
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// by index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1U, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    std::vector<std::exception_ptr> errors(n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        for (unsigned t = 0; t < threads; ++t) {
            workers.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& w : workers) w.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

std::optional<std::vector<LabeledTree>> MiningCache::find(const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    used_.insert(key);
    return it->second;
}

void MiningCache::store(const std::string& key, std::vector<LabeledTree> patterns) {
    std::lock_guard lock(mutex_);
    used_.insert(key);
    entries_[key] = std::move(patterns);
}

std::size_t MiningCache::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

void MiningCache::prune() {
    std::lock_guard lock(mutex_);
    std::erase_if(entries_, [&](const auto& e) { return !used_.count(e.first); });
    used_.clear();
}

std::string MiningCache::key(const std::vector<LabeledTree>& forest, const MinerConfig& config) {
    std::string out = std::to_string(config.min_support) + (config.strict_support ? ">" : ">=") +
                      std::to_string(config.max_patterns);
    for (const auto& t : forest) {
        out += '\n';
        for (Item i : t.items) {
            out += is_up(i) ? std::string("\x01") : t.labels.at(static_cast<std::size_t>(i));
            out += '\0';
        }
    }
    return out;
}

AnnotationModel AnnotationModel::build(const TrainingSet& training, const ModelConfig& config, MiningCache* cache) {
    AnnotationModel model;
    model.config_ = config;

    // Interning in sorted text order makes ids independent of tree order.
    std::set<std::string> texts;
    for (const auto& [id, trees] : training)
        for (const auto& t : trees)
            for (const auto& l : t.labels) texts.insert(l);
    for (const auto& t : texts) model.labels_.intern(t);

    for (const auto& [id, trees] : training) {
        if (trees.empty()) continue;
        Entry entry;
        entry.id = id;
        for (const auto& t : trees) entry.trees.push_back(EncodedTree::validate(t.intern_into(model.labels_)));
        model.entries_.push_back(std::move(entry));
    }

    auto& entries = model.entries_;
    std::vector<std::vector<Pattern>> mined(entries.size());
    parallel_for(entries.size(), config.threads, [&](std::size_t i) {
        if (entries[i].trees.size() < config.min_trees) return;
        std::string key;
        if (cache) {
            key = MiningCache::key(training.at(entries[i].id), config.miner);
            if (auto hit = cache->find(key)) {
                // Ids differ between builds; re-intern and restore item order.
                LabelTable scratch = model.labels_;
                for (const auto& p : *hit) mined[i].push_back(Pattern::canonical(p.intern_into(scratch)));
                std::sort(mined[i].begin(), mined[i].end());
                return;
            }
        }
        try {
            mined[i] = mine_patterns(entries[i].trees, config.miner);
        } catch (const PatternExplosion& e) {
            throw PatternExplosion(e.limit(), entries[i].id);
        }
        if (cache) {
            std::vector<LabeledTree> texts;
            texts.reserve(mined[i].size());
            for (const auto& p : mined[i]) texts.push_back(to_labeled(p.items(), model.labels_));
            cache->store(key, std::move(texts));
        }
    });

    std::unordered_map<Pattern, std::size_t, PatternHash> occurrences;
    for (const auto& set : mined)
        for (const auto& p : set) ++occurrences[p];
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (auto& p : mined[i]) {
            const std::size_t occ = occurrences.at(p);
            entries[i].patterns.push_back(WeightedPattern{std::move(p), occ});
        }
    }

    std::vector<std::set<Item>> forest_labels;
    std::unordered_map<Item, std::size_t> annotations_with_label;
    for (const auto& e : entries) {
        std::set<Item> distinct;
        for (const auto& t : e.trees)
            for (Item i : labels_of(t)) distinct.insert(i);
        for (Item i : distinct) ++annotations_with_label[i];
        forest_labels.push_back(std::move(distinct));
    }
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto& e = entries[k];
        for (Item i : forest_labels[k]) {
            const std::size_t others = annotations_with_label.at(i) - 1;
            if (others < config.unique_exclusion) e.unique_nodes.push_back(i);
        }
    }

    model.prepare();
    return model;
}

void AnnotationModel::prepare() {
    prepared_.clear();
    prepared_.reserve(entries_.size());
    for (const auto& e : entries_) {
        Prepared p;
        p.patterns.reserve(e.patterns.size());
        for (const auto& wp : e.patterns) p.patterns.emplace_back(wp.pattern);
        prepared_.push_back(std::move(p));
    }
}

const AnnotationModel::Entry* AnnotationModel::find(std::string_view annotation_id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), annotation_id,
                               [](const Entry& e, std::string_view id) { return e.id < id; });
    if (it == entries_.end() || it->id != annotation_id) return nullptr;
    return &*it;
}

TrainingSet AnnotationModel::training_set() const {
    TrainingSet out;
    for (const auto& e : entries_) {
        auto& trees = out[e.id];
        for (const auto& t : e.trees) trees.push_back(to_labeled(t.items(), labels_));
    }
    return out;
}

EncodedTree AnnotationModel::encode_query(const LabeledTree& tree) const {
    std::vector<Item> local;
    local.reserve(tree.labels.size());
    Item next_unknown = static_cast<Item>(labels_.size());
    for (const auto& l : tree.labels) {
        if (auto id = labels_.find(l)) {
            local.push_back(*id);
        } else {
            local.push_back(next_unknown++);
        }
    }
    std::vector<Item> items;
    items.reserve(tree.items.size());
    for (Item i : tree.items) items.push_back(is_up(i) ? kUp : local.at(static_cast<std::size_t>(i)));
    return EncodedTree::validate(std::move(items));
}

Score AnnotationModel::score_entry(std::size_t index, const PreparedTree& subtree) const {
    const auto& entry = entries_[index];
    const auto& prepared = prepared_[index];
    Score s;
    if (!entry.patterns.empty()) {
        // Matched weights are size/occurrences; sum sizes per denominator
        // and combine exactly at the end.
        std::map<std::size_t, long long> sizes_by_occurrences;
        for (std::size_t k = 0; k < entry.patterns.size(); ++k) {
            const auto& pp = prepared.patterns[k];
            if (!label_prefilter(pp, subtree) || !pattern_matches(pp, subtree)) continue;
            sizes_by_occurrences[entry.patterns[k].occurrences] += static_cast<long long>(entry.patterns[k].pattern.size());
        }
        Rational total = 0;
        for (const auto& [occ, size] : sizes_by_occurrences) total += Rational(size, static_cast<long long>(occ));
        s.pattern_score = total / static_cast<long long>(entry.patterns.size());
    }
    if (!entry.unique_nodes.empty()) {
        long long hits = 0;
        for (Item i : entry.unique_nodes)
            if (subtree.labels.contains(i)) ++hits;
        s.unique_fraction = Rational(hits, static_cast<long long>(entry.unique_nodes.size()));
    }
    return s;
}

Score AnnotationModel::score(std::string_view annotation_id, const EncodedTree& subtree) const {
    const Entry* e = find(annotation_id);
    if (!e) throw UnknownAnnotation(std::string(annotation_id));
    return score_entry(static_cast<std::size_t>(e - entries_.data()), PreparedTree(subtree));
}

std::vector<RankedSuggestion> AnnotationModel::rank_all(const EncodedTree& subtree) const {
    const PreparedTree prepared(subtree);
    std::vector<RankedSuggestion> out;
    out.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        auto s = score_entry(i, prepared);
        const double combined = config_.alpha * s.pattern_score.convert_to<double>() +
                                (1.0 - config_.alpha) * s.unique_fraction.convert_to<double>();
        out.push_back({entries_[i].id, combined, std::move(s.pattern_score), std::move(s.unique_fraction)});
    }
    std::stable_sort(out.begin(), out.end(), [](const RankedSuggestion& a, const RankedSuggestion& b) {
        if (a.combined != b.combined) return a.combined > b.combined;
        return a.annotation_id < b.annotation_id;
    });
    return out;
}

std::vector<RankedSuggestion> AnnotationModel::rank(const EncodedTree& subtree, std::size_t top_k) const {
    auto out = rank_all(subtree);
    if (out.size() > top_k) out.resize(top_k);
    return out;
}

nlohmann::json to_json(const ModelConfig& config) {
    return nlohmann::json{{"alpha", config.alpha},
                          {"max_patterns", config.miner.max_patterns},
                          {"min_support", config.miner.min_support},
                          {"min_trees", config.min_trees},
                          {"strict_support", config.miner.strict_support},
                          {"unique_exclusion", config.unique_exclusion}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.alpha = j.value("alpha", c.alpha);
    c.miner.max_patterns = j.value("max_patterns", c.miner.max_patterns);
    c.miner.min_support = j.value("min_support", c.miner.min_support);
    c.min_trees = j.value("min_trees", c.min_trees);
    c.miner.strict_support = j.value("strict_support", c.miner.strict_support);
    c.unique_exclusion = j.value("unique_exclusion", c.unique_exclusion);
    return c;
}

nlohmann::json AnnotationModel::to_json() const {
    nlohmann::json annotations = nlohmann::json::array();
    for (const auto& e : entries_) {
        nlohmann::json patterns = nlohmann::json::array();
        for (const auto& wp : e.patterns) {
            const Rational w = wp.weight();
            patterns.push_back(nlohmann::json::array(
                {wp.pattern.items(), boost::multiprecision::numerator(w).convert_to<long long>(),
                 boost::multiprecision::denominator(w).convert_to<long long>()}));
        }
        nlohmann::json trees = nlohmann::json::array();
        for (const auto& t : e.trees) trees.push_back(t.items());
        annotations.push_back(
            {{"id", e.id}, {"patterns", std::move(patterns)}, {"trees", std::move(trees)}, {"unique_nodes", e.unique_nodes}});
    }
    return nlohmann::json{{"annotations", std::move(annotations)},
                          {"config", echo::to_json(config_)},
                          {"labels", labels_.names()}};
}

AnnotationModel AnnotationModel::from_json(const nlohmann::json& j) {
    AnnotationModel model;
    try {
        model.config_ = model_config_from_json(j.at("config"));
        for (const auto& l : j.at("labels")) model.labels_.intern(l.get<std::string>());
        for (const auto& a : j.at("annotations")) {
            Entry e;
            e.id = a.at("id").get<std::string>();
            for (const auto& t : a.at("trees")) e.trees.push_back(EncodedTree::validate(t.get<std::vector<Item>>()));
            for (const auto& p : a.at("patterns")) {
                auto pattern = Pattern::canonical(p.at(0).get<std::vector<Item>>());
                const auto num = p.at(1).get<long long>();
                const auto den = p.at(2).get<long long>();
                const long long size = static_cast<long long>(pattern.size());
                if (num <= 0 || den <= 0 || (size * den) % num != 0)
                    throw Error("SchemaError", "pattern weight is not size/occurrences");
                e.patterns.push_back(WeightedPattern{std::move(pattern), static_cast<std::size_t>(size * den / num)});
            }
            e.unique_nodes = a.at("unique_nodes").get<std::vector<Item>>();
            model.entries_.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("SchemaError", std::string("model: ") + e.what());
    }
    std::sort(model.entries_.begin(), model.entries_.end(), [](const Entry& a, const Entry& b) { return a.id < b.id; });
    model.prepare();
    return model;
}

TrainingSet collect_training_set(const std::vector<AnnotationInstance>& instances,
                                 const std::map<std::string, ParsedSubmission>& submissions,
                                 TrainingReport* report) {
    TrainingSet out;
    for (const auto& inst : instances) {
        auto it = submissions.find(inst.submission_id);
        if (it == submissions.end()) throw Error("DanglingReference", "unknown submission '" + inst.submission_id + "'");
        auto context = extract_line_context(it->second.tree, inst.line - 1);
        if (!context) {
            if (report) report->dropped.push_back(inst);
            continue;
        }
        out[inst.annotation_id].push_back(std::move(*context));
    }
    return out;
}

AnnotationModel train(const std::vector<AnnotationInstance>& instances,
                      const std::map<std::string, ParsedSubmission>& submissions, const ModelConfig& config,
                      TrainingReport* report, MiningCache* cache) {
    auto training = collect_training_set(instances, submissions, report);
    if (training.empty()) throw EmptyTrainingSet();
    return AnnotationModel::build(training, config, cache);
}

AnnotationModel retrain(const AnnotationModel& model, const std::vector<AnnotationInstance>& new_instances,
                        const std::map<std::string, ParsedSubmission>& submissions, TrainingReport* report,
                        MiningCache* cache) {
    auto training = model.training_set();
    for (auto& [id, trees] : collect_training_set(new_instances, submissions, report))
        for (auto& t : trees) training[id].push_back(std::move(t));
    if (training.empty()) throw EmptyTrainingSet();
    return AnnotationModel::build(training, model.config(), cache);
}

}  // namespace echo

#include <doctest.h>

#include <random>

#include "echo/annotation_model.hpp"
#include "model_fixtures.hpp"
#include "oracle.hpp"

using namespace echo;
using fixtures::labeled;

namespace {

std::vector<LabeledTree> copies(std::string_view debug_form, int n) {
    return std::vector<LabeledTree>(static_cast<std::size_t>(n), labeled(debug_form));
}

EncodedTree query(const AnnotationModel& model, std::string_view debug_form) {
    return model.encode_query(labeled(debug_form));
}

const WeightedPattern* find_pattern(const AnnotationModel& model, std::string_view id, std::string_view debug_form) {
    LabelTable scratch = model.labels();
    const auto items = parse_items(debug_form, scratch);
    for (const auto& wp : model.find(id)->patterns)
        if (wp.pattern.items() == items) return &wp;
    return nullptr;
}

ModelConfig full_support() {
    ModelConfig c;
    c.miner.min_support = 1.0;
    return c;
}

}  // namespace

TEST_CASE("weights and scores on a two-annotation model") {
    TrainingSet training{{"A", copies("a b UP", 3)}, {"B", copies("a c UP", 3)}};
    auto model = AnnotationModel::build(training, full_support());
    REQUIRE(model.entries().size() == 2);
    CHECK(model.find("A")->patterns.size() == 3);
    CHECK(find_pattern(model, "A", "a")->weight() == Rational(1, 2));
    CHECK(find_pattern(model, "A", "b")->weight() == 1);
    CHECK(find_pattern(model, "A", "a b")->weight() == 2);
    CHECK(fixtures::weights_exact(model));

    auto q = query(model, "a b UP");
    auto a = model.score("A", q);
    auto b = model.score("B", q);
    CHECK(a.pattern_score == Rational(7, 6));
    CHECK(b.pattern_score == Rational(1, 6));
    CHECK(a.unique_fraction == 1);
    CHECK(b.unique_fraction == Rational(1, 2));

    auto ranked = model.rank(q, 5);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].annotation_id == "A");
    CHECK(ranked[0].combined == doctest::Approx(0.5 * 7.0 / 6.0 + 0.5));
    CHECK(ranked[1].combined == doctest::Approx(1.0 / 3.0));
    CHECK(model.rank(q, 1).size() == 1);

    CHECK_THROWS_AS(model.score("C", q), UnknownAnnotation);
}

TEST_CASE("a size-4 pattern shared by two annotations weighs 2") {
    TrainingSet training{{"A", copies("r a b c UP UP UP", 3)}, {"B", copies("r a b c UP UP UP", 3)}};
    auto model = AnnotationModel::build(training, full_support());
    auto wp = find_pattern(model, "A", "r a b c");
    REQUIRE(wp);
    CHECK(wp->occurrences == 2);
    CHECK(wp->weight() == 2);
}

TEST_CASE("pattern score from matched weights over pattern count") {
    TrainingSet training{{"A", copies("x y UP", 3)}, {"B", copies("x", 3)}};
    auto model = AnnotationModel::build(training, full_support());
    // A: x (1/2), y (1), x y (2). Query with only x: (1/2) / 3.
    CHECK(model.score("A", query(model, "x")).pattern_score == Rational(1, 6));
    CHECK(model.score("A", query(model, "z")).pattern_score == 0);
    CHECK(model.score("B", query(model, "z y UP")).pattern_score == 0);
}

TEST_CASE("fewer than three trees means no patterns, but unique nodes still count") {
    TrainingSet training{{"A", copies("while_statement block UP", 2)}, {"B", copies("call", 3)}};
    auto model = AnnotationModel::build(training, full_support());
    CHECK(model.find("A")->patterns.empty());
    CHECK(model.find("A")->unique_nodes.size() == 2);
    CHECK(model.find("B")->patterns.size() == 1);
    auto s = model.score("A", query(model, "while_statement x UP"));
    CHECK(s.pattern_score == 0);
    CHECK(s.unique_fraction == Rational(1, 2));

    // A third instance flips the pattern set from empty to mined.
    training["A"].push_back(labeled("while_statement block UP"));
    CHECK_FALSE(AnnotationModel::build(training, full_support()).find("A")->patterns.empty());
}

TEST_CASE("labels in three or more other forests are not unique") {
    TrainingSet training{{"A", {labeled("while_statement call UP")}},
                         {"B", {labeled("call")}},
                         {"C", {labeled("call x UP")}},
                         {"D", {labeled("call")}},
                         {"E", {labeled("y")}}};
    auto model = AnnotationModel::build(training, ModelConfig{});
    const Item w = *model.labels().find("while_statement");
    const Item call = *model.labels().find("call");
    for (const auto& e : model.entries()) {
        CHECK(std::find(e.unique_nodes.begin(), e.unique_nodes.end(), call) == e.unique_nodes.end());
    }
    const auto& ua = model.find("A")->unique_nodes;
    CHECK(std::find(ua.begin(), ua.end(), w) != ua.end());

    // Label in exactly two other forests stays unique.
    TrainingSet three{{"A", {labeled("k")}}, {"B", {labeled("k")}}, {"C", {labeled("k")}}};
    CHECK(AnnotationModel::build(three, ModelConfig{}).find("A")->unique_nodes.size() == 1);
}

TEST_CASE("unique fraction is a set intersection") {
    TrainingSet training{{"A", {labeled("x y UP z UP")}}, {"B", {labeled("w")}}};
    auto model = AnnotationModel::build(training, ModelConfig{});
    CHECK(model.score("A", query(model, "x z UP q UP")).unique_fraction == Rational(2, 3));
}

TEST_CASE("ranking ties break by id and singletons rank first") {
    TrainingSet training{{"beta", {labeled("p")}}, {"alpha", {labeled("q")}}};
    auto model = AnnotationModel::build(training, ModelConfig{});
    auto ranked = model.rank(query(model, "z"), 5);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].annotation_id == "alpha");
    CHECK(ranked[1].annotation_id == "beta");

    TrainingSet one{{"only", {labeled("p")}}};
    auto single = AnnotationModel::build(one, ModelConfig{});
    auto r = single.rank(query(single, "nothing"), 5);
    REQUIRE(r.size() == 1);
    CHECK(r[0].annotation_id == "only");

    CHECK(AnnotationModel{}.rank(validate({0}), 5).empty());
}

TEST_CASE("planted motif ranks its annotation first") {
    // A's trees all hold motif m1(m2, m3); B and C share generic structure.
    TrainingSet training{
        {"A", {labeled("s m1 m2 UP m3 UP UP x UP"), labeled("s x UP m1 m2 UP m3 UP UP"), labeled("s m1 m2 UP m3 UP UP")}},
        {"B", {labeled("s x UP y UP"), labeled("s x UP"), labeled("s y UP x UP")}},
        {"C", {labeled("s y UP"), labeled("s y z UP UP"), labeled("s y UP")}},
    };
    auto model = AnnotationModel::build(training, ModelConfig{});
    auto q = query(model, "s x UP m1 m2 UP m3 UP UP y UP");
    const auto expected = fixtures::reference_scores(training, ModelConfig{}, labeled("s x UP m1 m2 UP m3 UP UP y UP"));
    for (const auto& [id, s] : expected) {
        CHECK(model.score(id, q).pattern_score == s.pattern_score);
        CHECK(model.score(id, q).unique_fraction == s.unique_fraction);
    }
    CHECK(model.rank(q, 3).front().annotation_id == "A");
}

TEST_CASE("scores equal the formula reference on random fixtures") {
    std::mt19937_64 rng(2024);
    for (int round = 0; round < 60; ++round) {
        CAPTURE(round);
        auto f = fixtures::random_score_fixture(rng);
        auto model = AnnotationModel::build(f.training, f.config);
        REQUIRE(fixtures::weights_exact(model));
        const auto q = model.encode_query(f.query);
        for (const auto& [id, expected] : fixtures::reference_scores(f.training, f.config, f.query)) {
            const auto got = model.score(id, q);
            REQUIRE(got.pattern_score == expected.pattern_score);
            REQUIRE(got.unique_fraction == expected.unique_fraction);
        }
    }
}

TEST_CASE("score bounds and scaling invariance") {
    std::mt19937_64 rng(77);
    for (int round = 0; round < 20; ++round) {
        auto f = fixtures::random_score_fixture(rng);
        auto model = AnnotationModel::build(f.training, f.config);
        const auto q = model.encode_query(f.query);
        const PreparedTree pt(q);
        std::vector<std::pair<Rational, Rational>> plain_and_scaled;
        for (const auto& e : model.entries()) {
            auto s = model.score(e.id, q);
            Rational max_weight = 0, scaled = 0;
            for (const auto& wp : e.patterns) {
                max_weight = std::max(max_weight, wp.weight());
                if (pattern_matches(wp.pattern, q)) scaled += wp.weight() * 7;
            }
            if (!e.patterns.empty()) scaled /= static_cast<long long>(e.patterns.size());
            CHECK(s.pattern_score >= 0);
            CHECK(s.pattern_score <= max_weight);
            CHECK(s.unique_fraction >= 0);
            CHECK(s.unique_fraction <= 1);
            plain_and_scaled.emplace_back(s.pattern_score, scaled);
        }
        for (const auto& [x1, y1] : plain_and_scaled)
            for (const auto& [x2, y2] : plain_and_scaled) CHECK((x1 < x2) == (y1 < y2));
    }
}

TEST_CASE("train, collect and retrain") {
    std::mt19937_64 rng(3);
    for (int round = 0; round < 10; ++round) {
        auto corpus = fixtures::random_corpus(rng, 8, 4, 30);
        const std::size_t half = corpus.instances.size() / 2;
        std::vector<AnnotationInstance> first(corpus.instances.begin(), corpus.instances.begin() + static_cast<long>(half));
        std::vector<AnnotationInstance> second(corpus.instances.begin() + static_cast<long>(half), corpus.instances.end());
        TrainingReport report;
        auto all = train(corpus.instances, corpus.submissions, ModelConfig{}, &report);
        auto base = train(first, corpus.submissions, ModelConfig{});
        CHECK(retrain(base, second, corpus.submissions) == all);
        CHECK(retrain(all, {}, corpus.submissions) == all);
        CHECK(retrain(all, {}, corpus.submissions).serialize() == all.serialize());
        CHECK(fixtures::weights_exact(all));
        // Blank lines in the pool are dropped and reported.
        for (const auto& d : report.dropped) {
            const auto& src = corpus.submissions.at(d.submission_id).tree;
            CHECK_FALSE(extract_line_context(src, d.line - 1));
        }
    }
}

TEST_CASE("training errors") {
    std::map<std::string, ParsedSubmission> subs;
    subs["s"] = ParsedSubmission{"s", "x = 1\n\n", parse_and_postprocess("x = 1\n\n", "python")};
    CHECK_THROWS_AS(train({{"a", "s", 2}}, subs, ModelConfig{}), EmptyTrainingSet);
    CHECK_THROWS_AS(train({}, subs, ModelConfig{}), EmptyTrainingSet);
    CHECK_THROWS_WITH_AS(train({{"a", "missing", 1}}, subs, ModelConfig{}), doctest::Contains("missing"), Error);

    TrainingSet big{{"wide", copies("a b c d e f g h UP UP UP UP UP UP UP", 3)}};
    ModelConfig capped;
    capped.miner.max_patterns = 10;
    try {
        AnnotationModel::build(big, capped);
        FAIL("expected PatternExplosion");
    } catch (const PatternExplosion& e) {
        CHECK(e.annotation_id() == "wide");
    }
}

TEST_CASE("serialization is canonical and round-trips") {
    std::mt19937_64 rng(9);
    auto corpus = fixtures::random_corpus(rng, 10, 5, 40);
    auto model = train(corpus.instances, corpus.submissions, ModelConfig{});
    const auto text = model.serialize();
    auto back = AnnotationModel::from_json(nlohmann::json::parse(text));
    CHECK(back == model);
    CHECK(back.serialize() == text);

    // Instance order inside one annotation's forest does not change ids or patterns.
    auto shuffled = corpus.instances;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto other = train(shuffled, corpus.submissions, ModelConfig{});
    CHECK(other.labels() == model.labels());
    for (std::size_t i = 0; i < model.entries().size(); ++i)
        CHECK(other.entries()[i].patterns == model.entries()[i].patterns);

    // Thread count does not matter.
    ModelConfig threaded;
    threaded.threads = 4;
    CHECK(train(corpus.instances, corpus.submissions, threaded).serialize() == text);

    CHECK_THROWS_AS(AnnotationModel::from_json(nlohmann::json::parse(R"({"labels": 3})")), Error);
}

TEST_CASE("unknown query labels never match") {
    TrainingSet training{{"A", copies("a b UP", 3)}};
    auto model = AnnotationModel::build(training, full_support());
    auto q = query(model, "zz yy UP");
    CHECK(model.score("A", q).pattern_score == 0);
    CHECK(model.score("A", q).unique_fraction == 0);
    CHECK(model.labels().size() == 2);
}

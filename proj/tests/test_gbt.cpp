#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <random>

#include "egocast/error.hpp"
#include "egocast/gbt.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace egocast;
using namespace egocast::gbt;

namespace {

struct Data {
    std::vector<double> x;
    std::vector<double> y;
    std::size_t rows = 0, cols = 0;
    MatrixView view() const { return {x, rows, cols}; }
};

// Smooth nonlinear target with a few missing cells.
Data friedman(std::size_t n, std::uint64_t seed, double missing = 0.05) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> eps(0, 0.5);
    Data d;
    d.rows = n;
    d.cols = 5;
    for (std::size_t i = 0; i < n; ++i) {
        double v[5];
        for (double& c : v) c = u(rng);
        d.y.push_back(10 * std::sin(3.14159 * v[0] * v[1]) + 20 * (v[2] - 0.5) * (v[2] - 0.5) + 10 * v[3] + 5 * v[4] +
                      eps(rng));
        for (double c : v) d.x.push_back(u(rng) < missing ? kMissing : c);
    }
    return d;
}

TrainConfig quick() {
    TrainConfig c;
    c.learning_rate = 0.1;
    c.n_estimators = 150;
    c.max_depth = 6;
    c.early_stopping_rounds = 20;
    return c;
}

bool leaves_respect(const Tree& t, double min_cover, int max_depth) {
    for (const auto& n : t.nodes) {
        if (n.depth > max_depth) return false;
        if (n.is_leaf() && n.cover < min_cover) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("leaf weight") {
    CHECK(leaf_weight(10, 5, 5, 1) == doctest::Approx(-0.9));
    CHECK(leaf_weight(0.5, 5, 5, 1) == 0.0);
    CHECK(leaf_weight(-10, 5, 5, 1) == doctest::Approx(0.9));
    CHECK(soft_threshold(-0.5, 1) == 0.0);
    CHECK(soft_threshold(3, 1) == 2);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> g(-100, 100), h(0, 50), reg(0, 10);
    for (int i = 0; i < 2000; ++i) {
        const double G = g(rng), H = h(rng), L = reg(rng) + 0.01, A = reg(rng);
        REQUIRE(leaf_weight(G, H, L, A) == doctest::Approx(oracle::argmin_leaf_objective(G, H, L, A)).epsilon(1e-6).scale(1));
    }
}

TEST_CASE("split gain") {
    CHECK(split_gain(-4, 2, 6, 3, 5, 0, 0) == doctest::Approx(3.1929).epsilon(1e-4));
    CHECK(split_gain(-4, 2, 6, 3, 5, 0, 10) == doctest::Approx(3.1929 - 10).epsilon(1e-4));
    CHECK(split_gain(3, 4, 3, 4, 0, 0, 0) == doctest::Approx(0).scale(1));
    CHECK(structure_score(4, 2, 5, 1) == doctest::Approx(9.0 / 7));

    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> g(-50, 50), h(1, 40), reg(0, 6);
    for (int i = 0; i < 500; ++i) {
        const double gl = g(rng), hl = h(rng), gr = g(rng), hr = h(rng), l = reg(rng) + 0.1, a = reg(rng), gm = reg(rng);
        REQUIRE(split_gain(gl, hl, gr, hr, l, a, gm) ==
                doctest::Approx(oracle::objective_drop(gl, hl, gr, hr, l, a, gm)).epsilon(1e-6).scale(1));
    }
}

TEST_CASE("training preconditions") {
    const Data d = friedman(50, 1);
    CHECK_THROWS_AS(train({}, {}, d.view(), d.y, quick()), ValidationError);
    TrainConfig bad = quick();
    bad.learning_rate = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = quick();
    bad.max_depth = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = quick();
    bad.early_stopping_rounds = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("constant target gives a base-score model") {
    Data d = friedman(60, 2);
    std::fill(d.y.begin(), d.y.end(), 100.0);
    const auto m = train(d.view(), d.y, d.view(), d.y, quick());
    CHECK(m.trees.empty());
    CHECK(m.base_score == 100.0);
    CHECK(m.predict(d.view().row(3)) == 100.0);
}

TEST_CASE("step function converges") {
    Data d;
    d.rows = 200;
    d.cols = 1;
    for (int i = 0; i < 200; ++i) {
        const double x = -1.0 + 2.0 * i / 199.0;
        d.x.push_back(x);
        d.y.push_back(x < 0 ? 10.0 : 20.0);
    }
    TrainConfig c;
    c.learning_rate = 0.01;
    c.n_estimators = 2000;
    const auto m = train(d.view(), d.y, d.view(), d.y, c);
    double sse = 0;
    for (std::size_t i = 0; i < d.rows; ++i) sse += std::pow(m.predict(d.view().row(i)) - d.y[i], 2);
    CHECK(std::sqrt(sse / d.rows) < 0.5);
    CHECK(m.trees.front().nodes.front().threshold == doctest::Approx(0).scale(0.02));
}

TEST_CASE("trees respect depth and child weight") {
    const Data d = friedman(600, 3);
    const Data v = friedman(200, 4);
    TrainConfig c = quick();
    c.max_depth = 20;
    c.min_child_weight = 3;
    c.n_estimators = 40;
    const auto m = train(d.view(), d.y, v.view(), v.y, c);
    REQUIRE_FALSE(m.trees.empty());
    for (const auto& t : m.trees) {
        CHECK(leaves_respect(t, 3.0, 20));
        CHECK(t.depth() <= 20);
        // node expectations are cover-weighted means of their children
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) {
                const auto& l = t.nodes[static_cast<std::size_t>(n.left)];
                const auto& r = t.nodes[static_cast<std::size_t>(n.right)];
                CHECK(n.cover == doctest::Approx(l.cover + r.cover));
                CHECK(n.expected == doctest::Approx((l.cover * l.expected + r.cover * r.expected) / n.cover));
            }
    }
}

TEST_CASE("early stopping keeps the best validation round") {
    const Data d = friedman(300, 5);
    const Data v = friedman(150, 6);
    TrainConfig c = quick();
    c.learning_rate = 0.3;
    c.max_depth = 8;
    c.n_estimators = 400;
    c.early_stopping_rounds = 15;
    const auto m = train(d.view(), d.y, v.view(), v.y, c);
    const auto& mae = m.metadata.validation_mae;
    REQUIRE(mae.size() == static_cast<std::size_t>(m.metadata.rounds_trained) + 1);
    const auto best = std::min_element(mae.begin(), mae.end()) - mae.begin();
    CHECK(m.metadata.best_rounds == best);
    CHECK(m.trees.size() == static_cast<std::size_t>(best));
    CHECK(m.metadata.rounds_trained < c.n_estimators);
    CHECK(m.metadata.rounds_trained - m.metadata.best_rounds == c.early_stopping_rounds);

    double err = 0;
    for (std::size_t i = 0; i < v.rows; ++i) err += std::abs(m.predict(v.view().row(i)) - v.y[i]);
    CHECK(err / v.rows == doctest::Approx(mae[static_cast<std::size_t>(best)]).epsilon(1e-9));
}

TEST_CASE("missing values learn a default direction") {
    Data d;
    d.cols = 1;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 300; ++i) {
        const bool miss = i % 3 == 0;
        const double x = u(rng);
        d.x.push_back(miss ? kMissing : x);
        d.y.push_back(miss ? 50.0 : (x < 0.5 ? 0.0 : 10.0));
    }
    d.rows = 300;
    TrainConfig c = quick();
    c.n_estimators = 300;
    const auto m = train(d.view(), d.y, d.view(), d.y, c);
    const double nan_row[] = {kMissing};
    const double low[] = {0.2};
    const double high[] = {0.8};
    CHECK(m.predict(nan_row) == doctest::Approx(50).epsilon(0.02));
    CHECK(m.predict(low) == doctest::Approx(0).scale(1).epsilon(0.5));
    CHECK(m.predict(high) == doctest::Approx(10).epsilon(0.05));
}

TEST_CASE("prediction") {
    TreeEnsemble empty;
    empty.base_score = 42;
    empty.feature_names = {"a"};
    const double x[] = {1.0};
    CHECK(empty.predict(x) == 42);

    TreeEnsemble one;
    one.base_score = 100;
    one.learning_rate = 0.001;
    one.feature_names = {"a"};
    Tree t;
    TreeNode leaf;
    leaf.weight = 2;
    t.nodes.push_back(leaf);
    one.trees.push_back(t);
    CHECK(one.predict(x) == doctest::Approx(100.002).epsilon(1e-12));
    const double wrong[] = {1.0, 2.0};
    CHECK_THROWS_AS(one.predict(wrong), ValidationError);

    const Data d = friedman(400, 9);
    const auto m = train(d.view(), d.y, d.view(), d.y, quick());
    const Data probe = friedman(1000, 10, 0.2);
    const auto batch = m.predict(probe.view());
    for (std::size_t i = 0; i < probe.rows; ++i) {
        const auto row = probe.view().row(i);
        REQUIRE(m.predict(row) == doctest::Approx(oracle::predict(m, row)).epsilon(1e-12));
        REQUIRE(batch[i] == m.predict(row));
    }
}

TEST_CASE("deterministic across runs and thread counts") {
    const Data d = friedman(500, 11);
    const Data v = friedman(100, 12);
    TrainConfig c = quick();
    const auto a = to_json(train(d.view(), d.y, v.view(), v.y, c));
    c.threads = 4;
    const auto b = to_json(train(d.view(), d.y, v.view(), v.y, c));
    CHECK(a == b);
}

TEST_CASE("model persistence") {
    egotest::TempDir dir("gbt");
    const Data d = friedman(400, 13);
    auto m = train(d.view(), d.y, d.view(), d.y, quick(), {"a", "b", "c", "d", "e"});
    save_model(m, dir / "m.json");
    const auto back = load_model(dir / "m.json");
    CHECK(back.feature_names == m.feature_names);
    CHECK(back.trees.size() == m.trees.size());
    CHECK(back.metadata.best_rounds == m.metadata.best_rounds);
    REQUIRE(back.feature_gain.size() == m.feature_gain.size());
    for (std::size_t f = 0; f < m.feature_gain.size(); ++f)
        CHECK(back.feature_gain[f] == doctest::Approx(m.feature_gain[f]).epsilon(1e-12));
    const Data probe = friedman(10000, 14, 0.1);
    CHECK(back.predict(probe.view()) == m.predict(probe.view()));
    CHECK(to_json(back) == to_json(m));

    SUBCASE("truncated file") {
        const auto text = to_json(m);
        std::ofstream(dir / "cut.json") << text.substr(0, text.size() / 2);
        CHECK_THROWS_AS(load_model(dir / "cut.json"), LoadError);
    }
    SUBCASE("wrong version") {
        auto text = to_json(m);
        const auto pos = text.find("\"version\"");
        REQUIRE(pos != std::string::npos);
        const auto digit = text.find('1', pos);
        text[digit] = '9';
        std::ofstream(dir / "v9.json") << text;
        CHECK_THROWS_AS(load_model(dir / "v9.json"), LoadError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_model(dir / "nope.json"), LoadError); }
    SUBCASE("empty ensemble") {
        TreeEnsemble e;
        e.base_score = 7.5;
        e.feature_names = {"a"};
        save_model(e, dir / "e.json");
        const auto eb = load_model(dir / "e.json");
        CHECK(eb.trees.empty());
        const double x[] = {3.0};
        CHECK(eb.predict(x) == 7.5);
    }
}

TEST_CASE("importance totals") {
    const Data d = friedman(400, 15, 0);
    auto m = train(d.view(), d.y, d.view(), d.y, quick());
    double gain = 0;
    std::size_t splits = 0;
    for (const auto& t : m.trees)
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) {
                gain += n.gain;
                ++splits;
            }
    double total_gain = 0;
    std::size_t total_splits = 0;
    for (std::size_t f = 0; f < m.feature_count(); ++f) {
        total_gain += m.feature_gain[f];
        total_splits += m.feature_splits[f];
    }
    CHECK(total_gain == doctest::Approx(gain));
    CHECK(total_splits == splits);
    // x3 carries twice the linear effect of x4
    CHECK(m.feature_gain[3] > m.feature_gain[4]);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "egocast/error.hpp"
#include "egocast/evaluation.hpp"
#include "support.hpp"

using namespace egocast;

namespace {

gbt::TreeEnsemble stump(double gain) {
    gbt::TreeEnsemble m;
    m.base_score = 100;
    m.learning_rate = 0.5;
    m.feature_names = {"a", "b"};
    gbt::Tree t;
    gbt::TreeNode root, l, r;
    root.feature = 1;
    root.threshold = 0.5;
    root.left = 1;
    root.right = 2;
    root.cover = 4;
    root.gain = gain;
    l.weight = -2;
    l.cover = 1;
    l.expected = -2;
    l.depth = 1;
    r.weight = 6;
    r.cover = 3;
    r.expected = 6;
    r.depth = 1;
    root.expected = (1 * -2.0 + 3 * 6.0) / 4;
    t.nodes = {root, l, r};
    m.trees.push_back(t);
    m.recompute_importance();
    return m;
}

}  // namespace

TEST_CASE("mean absolute error") {
    const double y[] = {100, 200}, p[] = {90, 220};
    CHECK(mae(y, p) == 15.0);
    CHECK(mae(y, y) == 0.0);
    const double y3[] = {100, 200, 400}, p3[] = {110, 150, 440};
    CHECK(mae(y3, p3) == doctest::Approx(33.333333333333).epsilon(1e-12));
    CHECK_THROWS_AS(mae({}, {}), ValidationError);
    CHECK_THROWS_AS(mae(y, p3), ValidationError);
}

TEST_CASE("median absolute percentage error") {
    const double y3[] = {100, 200, 400}, p3[] = {110, 150, 440};
    CHECK(mdape(y3, p3) == doctest::Approx(10.0));
    const double one[] = {250000};
    CHECK(mdape(one, one) == 0.0);
    const double y2[] = {100, 100}, p2[] = {90, 130};
    CHECK(mdape(y2, p2) == doctest::Approx(20.0));
    const double zero[] = {0, 100}, pz[] = {1, 100};
    CHECK_THROWS_AS(mdape(zero, pz), ValidationError);
    CHECK_THROWS_AS(mdape({}, {}), ValidationError);
}

TEST_CASE("mdape ignores the price scale") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> price(5e4, 2e6), err(0.6, 1.4), scale(1e-3, 1e3);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        std::vector<double> y(n), p(n), ys(n), ps(n);
        const double s = scale(rng);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = price(rng);
            p[i] = y[i] * err(rng);
            ys[i] = y[i] * s;
            ps[i] = p[i] * s;
        }
        REQUIRE(mdape(ys, ps) == doctest::Approx(mdape(y, p)).epsilon(1e-9));
        REQUIRE(mae(ys, ps) == doctest::Approx(s * mae(y, p)).epsilon(1e-9));
    }
}

TEST_CASE("path contributions") {
    SUBCASE("zero trees") {
        gbt::TreeEnsemble m;
        m.base_score = 12;
        m.feature_names = {"a"};
        const double x[] = {1};
        const auto r = path_contributions(m, x);
        CHECK(r.bias == 12);
        CHECK(r.contributions == std::vector<double>{0.0});
        CHECK(r.prediction == 12);
        CHECK(r.top_positive.empty());
    }
    SUBCASE("a stump credits its split feature") {
        const auto m = stump(3.19);
        const double right[] = {9, 1.0};
        const auto r = path_contributions(m, right);
        CHECK(r.bias == doctest::Approx(100 + 0.5 * 4));
        CHECK(r.contributions[0] == 0);
        CHECK(r.contributions[1] == doctest::Approx(r.prediction - r.bias));
        CHECK(r.prediction == doctest::Approx(103));
        CHECK(r.top_positive == std::vector<std::size_t>{1});
        const double left[] = {9, 0.0};
        const auto l = path_contributions(m, left);
        CHECK(l.contributions[1] == doctest::Approx(-3));
        CHECK(l.top_negative == std::vector<std::size_t>{1});
        CHECK(l.total() == doctest::Approx(l.prediction));
    }
    SUBCASE("arity") {
        const double x[] = {1.0};
        CHECK_THROWS_AS(path_contributions(stump(1), x), ValidationError);
    }
}

TEST_CASE("sum property on a trained model") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> x, y;
    const std::size_t n = 500, cols = 4;
    for (std::size_t i = 0; i < n; ++i) {
        double row[cols];
        for (double& v : row) v = u(rng);
        y.push_back(3e5 + 1e5 * row[0] - 5e4 * row[1] * row[2] + 2e4 * (row[3] > 0));
        for (double v : row) x.push_back(u(rng) < 0.05 ? kMissing : v);
    }
    gbt::TrainConfig c;
    c.learning_rate = 0.1;
    c.n_estimators = 100;
    c.max_depth = 6;
    const gbt::MatrixView view(x, n, cols);
    const auto m = gbt::train(view, y, view, y, c);
    for (int i = 0; i < 1000; ++i) {
        double probe[cols];
        for (double& v : probe) v = u(rng) < 0.1 ? kMissing : 1.2 * u(rng);
        const auto r = path_contributions(m, probe);
        REQUIRE(std::abs(r.total() - m.predict(probe)) <= 1e-6 * std::max(1.0, std::abs(r.prediction)));
    }
}

TEST_CASE("importance and group shares") {
    const auto m = stump(3.19);
    const auto t = feature_importance(m);
    CHECK(t.rows[0].feature == "b");
    CHECK(t.rows[0].gain == doctest::Approx(3.19));
    CHECK(t.rows[0].splits == 1);
    CHECK(t.rows[1].gain == 0);

    const std::vector<std::string> groups{"neighborhood", "property"};
    const auto g = feature_importance(m, &groups);
    CHECK(g.group_share.at("property") == doctest::Approx(1.0));
    CHECK(g.group_share.at("neighborhood") == 0.0);

    const double x[] = {0, 1.0};
    const ContributionReport reps[] = {path_contributions(m, x)};
    const auto cs = contribution_group_shares(reps, groups);
    CHECK(cs.at("property") == doctest::Approx(1.0));
    const std::vector<std::string> short_groups{"property"};
    CHECK_THROWS_AS(feature_importance(m, &short_groups), ValidationError);
}

TEST_CASE("run evaluation") {
    std::vector<RotationPredictions> rots(5);
    for (int r = 0; r < 5; ++r)
        for (int i = 0; i < 3; ++i) {
            rots[static_cast<std::size_t>(r)].ids.push_back("L" + std::to_string(r * 3 + i));
            rots[static_cast<std::size_t>(r)].y.push_back(1e5 * (i + 1));
            rots[static_cast<std::size_t>(r)].prediction.push_back(1e5 * (i + 1));
        }
    auto rep = evaluate_run(rots);
    CHECK(rep.pooled_mae == 0);
    CHECK(rep.pooled_mdape == 0);
    CHECK(rep.pooled_count == 15);

    rots[2].prediction = {1.1e5, 1.5e5, 3.3e5};
    rep = evaluate_run(rots);
    CHECK(rep.rotation_mae[2] == doctest::Approx((1e4 + 5e4 + 3e4) / 3));
    CHECK(rep.pooled_mae == doctest::Approx((1e4 + 5e4 + 3e4) / 15));
    CHECK(rep.rotation_count[2] == 3);

    egotest::TempDir dir("eval");
    write_predictions(dir / "p.csv", rots);
    const auto back = read_predictions(dir / "p.csv");
    REQUIRE(back.size() == 5);
    const auto rep2 = evaluate_run(back);
    CHECK(rep2.pooled_mae == doctest::Approx(rep.pooled_mae).epsilon(1e-12));
    CHECK(rep2.pooled_mdape == doctest::Approx(rep.pooled_mdape).epsilon(1e-12));

    const std::string table = format_comparison({{"Property", rep}, {"Property + Neighborhood", rep2}});
    CHECK(table.find("II ") != std::string::npos);
    CHECK(table.find("Property + Neighborhood") != std::string::npos);
    CHECK(table.find("6,000") != std::string::npos);

    rots.pop_back();
    CHECK_THROWS_AS(evaluate_run(rots), ValidationError);
    rots.push_back({});
    CHECK_THROWS_AS(evaluate_run(rots), ValidationError);
}

TEST_CASE("explanation text") {
    const auto m = stump(2);
    const double x[] = {kMissing, 1.0};
    auto r = path_contributions(m, x);
    r.listing_id = "L000123";
    const auto text = format_explanation(r, m, x);
    CHECK(text.find("L000123") != std::string::npos);
    CHECK(text.find("+ b") != std::string::npos);
    CHECK(text.find("103 EUR") != std::string::npos);
}

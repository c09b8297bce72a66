#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "egocast/egohood.hpp"
#include "egocast/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace egotest;

namespace {

FeatureTable table(const std::vector<std::vector<double>>& rows) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < rows.size(); ++i) ids.push_back("B" + std::to_string(i));
    std::vector<ColumnInfo> cols;
    for (std::size_t c = 0; c < rows.front().size(); ++c) cols.push_back({"f" + std::to_string(c), "", ""});
    FeatureTable t(ids, cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[i].size(); ++c) t.at(i, c) = rows[i][c];
    return t;
}

const std::vector<Vec2> kLine{{0, 0}, {800, 0}, {1600, 0}};

}  // namespace

TEST_CASE("contiguity by centroid distance") {
    const auto w = build_contiguity(std::span<const Vec2>(kLine));
    CHECK(w.at(0, 1) == 1);
    CHECK(w.at(0, 2) == 0);
    CHECK(w.at(1, 0) == 1);
    CHECK(w.at(1, 2) == 1);
    CHECK(w.at(2, 1) == 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.at(i, i) == 0);

    const std::vector<Vec2> one{{5, 5}};
    const auto single = build_contiguity(std::span<const Vec2>(one));
    CHECK(single.size() == 1);
    CHECK(single.nonzeros() == 0);

    const std::vector<Vec2> pair{{0, 0}, {1000, 0}};
    CHECK(build_contiguity(std::span<const Vec2>(pair)).nonzeros() == 0);
}

TEST_CASE("row normalization") {
    const auto wn = row_normalize(build_contiguity(std::span<const Vec2>(kLine)));
    CHECK(wn.row_normalized());
    CHECK(wn.at(1, 0) == 0.5);
    CHECK(wn.at(1, 2) == 0.5);
    CHECK(wn.at(0, 1) == 1.0);

    const std::vector<Vec2> apart{{0, 0}, {5000, 0}};
    const auto iso = row_normalize(build_contiguity(std::span<const Vec2>(apart)));
    CHECK(iso.isolated(0));
    CHECK(iso.row_sum(0) == 0);
}

TEST_CASE("egohood aggregation on the line fixture") {
    const auto wn = row_normalize(build_contiguity(std::span<const Vec2>(kLine)));
    const auto e = egohood_features(wn, table({{1}, {2}, {9}}));
    CHECK(e.at(0, 0) == 2);
    CHECK(e.at(1, 0) == 5);
    CHECK(e.at(2, 0) == 2);

    const std::vector<Vec2> apart{{0, 0}, {5000, 0}, {0, 9000}};
    const auto f = table({{1, 4}, {2, kMissing}, {3, 6}});
    const auto same = egohood_features(row_normalize(build_contiguity(std::span<const Vec2>(apart))), f);
    CHECK(same == f);

    CHECK_THROWS_AS(egohood_features(wn, table({{1}, {2}})), ValidationError);
}

TEST_CASE("missing neighbour values are skipped with renormalized weights") {
    const auto wn = row_normalize(build_contiguity(std::span<const Vec2>(kLine)));
    const auto e = egohood_features(wn, table({{1}, {kMissing}, {9}}));
    CHECK(e.at(1, 0) == 5);
    CHECK(is_missing(e.at(0, 0)));
}

TEST_CASE("random instances match the brute-force neighbour average") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> coord(0, 4000), val(-50, 50), u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 50;
        const std::size_t cols = 1 + rng() % 5;
        std::vector<Vec2> pts(n);
        for (auto& p : pts) p = {coord(rng), coord(rng)};
        std::vector<std::vector<double>> f(n, std::vector<double>(cols));
        for (auto& row : f)
            for (auto& v : row) v = u(rng) < 0.1 ? kMissing : val(rng);

        const auto w = build_contiguity(std::span<const Vec2>(pts));
        const auto wn = row_normalize(w);
        std::vector<std::vector<int>> adj(n, std::vector<int>(n, 0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) adj[i][j] = i != j && distance(pts[i], pts[j]) < 1000.0;

        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                REQUIRE(w.at(i, j) == adj[i][j]);
                REQUIRE(w.at(i, j) == w.at(j, i));
            }
            if (!wn.isolated(i)) REQUIRE(wn.row_sum(i) == doctest::Approx(1.0).epsilon(1e-12));
        }

        const auto e = egohood_features(wn, table(f));
        const auto ref = oracle::neighbour_average(adj, f);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cols; ++c) {
                if (is_missing(ref[i][c])) {
                    REQUIRE(is_missing(e.at(i, c)));
                    continue;
                }
                REQUIRE(e.at(i, c) == doctest::Approx(ref[i][c]).epsilon(1e-9));
                // averaging bound
                double lo = ref[i][c], hi = ref[i][c];
                for (std::size_t j = 0; j < n; ++j)
                    if (adj[i][j] && !is_missing(f[j][c])) {
                        lo = std::min(lo, f[j][c]);
                        hi = std::max(hi, f[j][c]);
                    }
                CHECK(e.at(i, c) >= lo - 1e-9);
                CHECK(e.at(i, c) <= hi + 1e-9);
            }
    }
}

TEST_CASE("aggregation is invariant to block order") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> coord(0, 3000);
    std::vector<CensusBlock> blocks;
    for (int i = 0; i < 40; ++i) {
        const double x = coord(rng), y = coord(rng);
        blocks.push_back(block("B" + std::to_string(100 + i), x, y, 50));
    }
    std::vector<std::vector<double>> vals;
    for (int i = 0; i < 40; ++i) vals.push_back({double(i), double(i * i % 17)});
    auto compute = [&](const std::vector<std::size_t>& order) {
        std::vector<CensusBlock> b;
        std::vector<std::vector<double>> v;
        std::vector<std::string> ids;
        for (auto k : order) {
            b.push_back(blocks[k]);
            v.push_back(vals[k]);
            ids.push_back(blocks[k].id);
        }
        FeatureTable f(ids, {{"a", "", ""}, {"b", "", ""}});
        for (std::size_t i = 0; i < v.size(); ++i)
            for (std::size_t c = 0; c < 2; ++c) f.at(i, c) = v[i][c];
        return egohood_features(row_normalize(build_contiguity(b)), f);
    };
    std::vector<std::size_t> order(40);
    std::iota(order.begin(), order.end(), 0);
    const auto base = compute(order);
    std::shuffle(order.begin(), order.end(), rng);
    const auto shuffled = compute(order);
    for (std::size_t i = 0; i < 40; ++i) {
        const auto r = *base.row_index(shuffled.row_ids()[i]);
        for (std::size_t c = 0; c < 2; ++c) CHECK(shuffled.at(i, c) == doctest::Approx(base.at(r, c)).epsilon(1e-12));
    }
}

TEST_CASE("design matrix concatenates property, ego-place and egohood columns") {
    const auto f = table({{1, 2}, {3, 4}});
    FeatureTable e(f.row_ids(), f.columns());
    e.at(0, 0) = 10;
    e.at(0, 1) = 20;
    e.at(1, 0) = 30;
    e.at(1, 1) = 40;

    Listing l;
    l.id = "L1";
    l.asked_price = 123456;
    l.attributes.fill(kMissing);
    l.attributes[property_attribute_index("energy_class")] = 2;
    l.attributes[property_attribute_index("rooms")] = 3;
    l.ego_place_id = "B1";
    Listing lost = l;
    lost.id = "L2";
    lost.ego_place_id = "B9";

    DesignLog log;
    const auto dm = assemble_design_matrix({l, lost}, f, e, &log);
    const std::size_t p = property_column_names().size();
    REQUIRE(dm.rows() == 1);
    REQUIRE(dm.cols() == p + 4);
    CHECK(log.excluded_ids == std::vector<std::string>{"L2"});
    CHECK(dm.columns[p - 1].group == FeatureGroup::Property);
    CHECK(dm.columns[p].group == FeatureGroup::EgoPlace);
    CHECK(dm.columns[p + 2].group == FeatureGroup::Egohood);
    CHECK(dm.columns[p].qualified() == "ego_place:f0");
    CHECK(dm.at(0, p) == 3);
    CHECK(dm.at(0, p + 3) == 40);
    CHECK(dm.targets[0] == 123456);

    const auto names = dm.qualified_names();
    auto col = [&](const std::string& n) {
        return static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
    };
    double ones = 0;
    for (const char* lvl : {"A", "B", "C", "D", "E", "F", "G"}) ones += dm.at(0, col(std::string("property:energy_class=") + lvl));
    CHECK(ones == 1);
    CHECK(dm.at(0, col("property:energy_class=C")) == 1);
    double heating = 0;
    for (const char* lvl : {"autonomous", "centralized", "none"}) heating += dm.at(0, col(std::string("property:heating_type=") + lvl));
    CHECK(heating == 0);
    CHECK(dm.at(0, col("property:rooms")) == 3);
    CHECK(is_missing(dm.at(0, col("property:floor"))));
}

TEST_CASE("design matrix csv round-trip") {
    TempDir dir("design");
    DesignMatrix dm;
    dm.listing_ids = {"L1", "L2"};
    dm.block_ids = {"B1", "B2"};
    dm.columns = {{"rooms", FeatureGroup::Property}, {"lum", FeatureGroup::EgoPlace}, {"lum", FeatureGroup::Egohood}};
    dm.values = {3, 0.5, kMissing, 4, 0.1 + 0.2, 0.25};
    dm.targets = {100000, kMissing};
    dm.write_csv(dir / "design.csv");
    dm.write_targets(dir / "targets.csv");
    const auto back = DesignMatrix::read_csv(dir / "design.csv", dir / "targets.csv");
    CHECK(back.listing_ids == dm.listing_ids);
    CHECK(back.block_ids == dm.block_ids);
    CHECK(back.qualified_names() == dm.qualified_names());
    for (std::size_t i = 0; i < dm.values.size(); ++i) {
        if (is_missing(dm.values[i]))
            CHECK(is_missing(back.values[i]));
        else
            CHECK(back.values[i] == dm.values[i]);
    }
    CHECK(back.targets[0] == 100000);
    CHECK(is_missing(back.targets[1]));

    const std::size_t keep[] = {2, 0};
    const auto sub = dm.select(keep);
    CHECK(sub.cols() == 2);
    CHECK(sub.at(1, 0) == 0.25);
    CHECK(sub.at(1, 1) == 4);
}

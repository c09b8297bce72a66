#include "egocast/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "egocast/error.hpp"
#include "egocast/log.hpp"
#include "egocast/parallel.hpp"
#include "egocast/roadnet.hpp"

namespace egocast {

std::size_t WalkParams::k_for(AmenityCategory c) const {
    auto it = k_by_category.find(c);
    return it == k_by_category.end() ? default_k : it->second;
}

void WalkParams::validate() const {
    if (!(max_distance_m > 0)) throw ValidationError("maximum walking distance must be positive");
    if (default_k < 1) throw ValidationError("default k must be at least 1");
    for (const auto& [cat, k] : k_by_category)
        if (k < 1) throw ValidationError("k for '" + std::string(to_string(cat)) + "' must be at least 1");
}

double decay_score(double distance_m, const WalkParams& params) {
    if (distance_m < 0 || std::isnan(distance_m)) throw ValidationError("distance must be non-negative");
    if (distance_m > params.max_distance_m) return 0.0;
    const double r = distance_m / params.max_distance_m;
    const double r2 = r * r;
    return std::exp(-5.0 * r2 * r2 * r);
}

double category_walkability(std::span<const double> distances, const WalkParams& params) {
    if (distances.empty()) return 0.0;
    double acc = 0.0;
    for (double d : distances) acc += decay_score(d, params);
    return acc / static_cast<double>(distances.size());
}

double land_use_mix(std::span<const double, kLandUseClassCount> areas) {
    double total = 0.0;
    for (double a : areas) {
        if (a < 0 || std::isnan(a)) throw ValidationError("land-use areas must be non-negative");
        total += a;
    }
    if (total <= 0) return kMissing;
    double h = 0.0;
    for (double a : areas) {
        if (a <= 0) continue;
        const double p = a / total;
        h -= p * std::log(p);
    }
    return std::clamp(h / std::log(static_cast<double>(kLandUseClassCount)), 0.0, 1.0);
}

namespace {

std::optional<int> leading_year(std::string_view s) {
    int y = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), y);
    if (res.ec != std::errc{} || res.ptr - s.data() != 4) return std::nullopt;
    return y;
}

std::optional<int> trailing_year(std::string_view s) {
    if (s.size() < 4) return std::nullopt;
    return leading_year(s.substr(s.size() - 4));
}

bool starts_with_any(std::string_view s, std::initializer_list<std::string_view> prefixes) {
    for (auto p : prefixes)
        if (s.starts_with(p)) return true;
    return false;
}

}  // namespace

double bracket_midpoint(std::string_view label) {
    auto bad = [&] { return ValidationError("unrecognised year bracket '" + std::string(label) + "'"); };
    if (starts_with_any(label, {"before", "pre"})) {
        auto y = trailing_year(label);
        if (!y) throw bad();
        return *y - 9.0;
    }
    if (starts_with_any(label, {"after", "post"})) {
        auto y = trailing_year(label);
        if (!y) throw bad();
        return *y + 5.0;
    }
    auto first = leading_year(label);
    if (!first) throw bad();
    if (label.size() == 4) return *first;
    if (label.size() == 5 && label[4] == 's') return *first + 5.0;
    if (label.size() == 9 && (label[4] == '_' || label[4] == '-')) {
        auto second = trailing_year(label);
        if (!second || *second < *first) throw bad();
        return 0.5 * (*first + *second);
    }
    throw bad();
}

YearMoments building_year_moments(const std::map<std::string, std::int64_t>& brackets) {
    double n = 0, sum = 0;
    for (const auto& [label, count] : brackets) {
        n += static_cast<double>(count);
        sum += static_cast<double>(count) * bracket_midpoint(label);
    }
    if (n <= 0) return {};
    const double mean = sum / n;
    double ss = 0;
    for (const auto& [label, count] : brackets) {
        const double d = bracket_midpoint(label) - mean;
        ss += static_cast<double>(count) * d * d;
    }
    return {mean, std::sqrt(ss / n)};
}

bool is_cultural_ateco(int division) {
    switch (division) {
        case 58: case 59: case 62: case 63: case 71: case 73: case 74: case 90: case 91: return true;
        default: return false;
    }
}

double mean_score(std::span<const SecurityPoint> points) {
    if (points.empty()) return kMissing;
    double acc = 0.0;
    for (const auto& p : points) acc += p.score;
    return acc / static_cast<double>(points.size());
}

std::vector<std::string> year_brackets(const std::vector<CensusBlock>& blocks) {
    std::vector<std::string> out;
    for (const auto& b : blocks)
        for (const auto& [label, count] : b.buildings_by_year_bracket) out.push_back(label);
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
        const double ma = bracket_midpoint(a), mb = bracket_midpoint(b);
        return ma != mb ? ma < mb : a < b;
    });
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<ColumnInfo> block_feature_columns(const std::vector<std::string>& brackets) {
    std::vector<ColumnInfo> cols;
    for (auto c : kWalkCategories)
        cols.push_back({"walk_" + std::string(to_string(c)), "score", "amenities+roads"});
    cols.push_back({"dist_rail_m", "m", "amenities+roads"});
    cols.push_back({"dist_metro_m", "m", "amenities+roads"});
    cols.push_back({"dist_airport_m", "m", "amenities"});
    cols.push_back({"bus_stops", "count", "amenities"});
    cols.push_back({"lum", "entropy", "landuse"});
    cols.push_back({"area_urban", "m2", "landuse"});
    cols.push_back({"area_commercial", "m2", "landuse"});
    cols.push_back({"area_green", "m2", "landuse"});
    cols.push_back({"avg_block_size_m2", "m2", "blocks"});
    cols.push_back({"buildings_total", "count", "blocks"});
    cols.push_back({"buildings_residential", "count", "blocks"});
    cols.push_back({"buildings_commercial", "count", "blocks"});
    cols.push_back({"building_year_mean", "year", "blocks"});
    cols.push_back({"building_year_std", "year", "blocks"});
    for (const auto& b : brackets) cols.push_back({"buildings_" + b, "count", "blocks"});
    cols.push_back({"company_avg_size", "employees", "blocks"});
    cols.push_back({"companies", "count", "blocks"});
    cols.push_back({"employees", "count", "blocks"});
    cols.push_back({"shops", "count", "blocks"});
    cols.push_back({"population", "count", "blocks"});
    cols.push_back({"cultural_companies", "count", "companies"});
    cols.push_back({"heavy_industries", "count", "blocks"});
    cols.push_back({"dist_industrial_m", "m", "amenities+roads"});
    cols.push_back({"security_mean", "score", "security"});
    cols.push_back({"avg_property_tax", "euro", "blocks"});
    return cols;
}

FeatureTable compute_block_features(const CityDataset& ds, const FeatureConfig& config) {
    config.walk.validate();
    const auto& blocks = ds.blocks;
    const std::size_t n = blocks.size();
    const auto brackets = year_brackets(blocks);
    std::vector<std::string> ids;
    ids.reserve(n);
    for (const auto& b : blocks) ids.push_back(b.id);
    FeatureTable f(ids, block_feature_columns(brackets));
    auto col = [&](std::string_view name) { return *f.column_index(name); };

    // Egohood membership: the block itself plus its contiguity neighbours.
    const ContiguityMatrix w = build_contiguity(blocks, config.egohood_radius_m);
    const BlockIndex index(blocks);

    // Road network and snapped amenities.
    const bool have_roads = !ds.roads.empty();
    std::optional<RoadGraph> graph;
    std::optional<SnapIndex> snap;
    std::optional<AmenityLocator> locator;
    std::vector<NodeId> block_node(n, 0);
    if (have_roads) {
        graph = build_graph(ds.roads);
        snap.emplace(*graph);
        locator.emplace(*snap, ds.amenities);
        for (std::size_t i = 0; i < n; ++i) block_node[i] = snap->snap(blocks[i].centroid);
    }
    auto nearest_of = [&](AmenityCategory c) {
        const auto& srcs = locator->category_nodes(c);
        return srcs.empty() ? std::vector<double>(graph->node_count(), std::numeric_limits<double>::infinity())
                            : shortest_distances(*graph, srcs);
    };
    std::vector<double> rail, metro, industrial;
    if (have_roads) {
        rail = nearest_of(AmenityCategory::RailStation);
        metro = nearest_of(AmenityCategory::MetroStation);
        industrial = nearest_of(AmenityCategory::IndustrialArea);
    }

    std::vector<const Amenity*> airports, bus_stops;
    for (const auto& a : ds.amenities) {
        if (a.category == AmenityCategory::Airport) airports.push_back(&a);
        if (a.category == AmenityCategory::BusStop) bus_stops.push_back(&a);
    }

    // Land-use polygons with planar bounding boxes for the buffer query.
    struct LandUseBox {
        const LandUsePolygon* poly;
        Vec2 lo, hi;
    };
    std::vector<LandUseBox> lu_boxes;
    for (const auto& lu : ds.landuse) {
        const BBox bb = bbox_of(lu.polygon);
        lu_boxes.push_back({&lu, ds.projection.forward({bb.min_lon, bb.min_lat}),
                            ds.projection.forward({bb.max_lon, bb.max_lat})});
    }

    // Per-block point layers.
    std::vector<std::vector<SecurityPoint>> security(n);
    for (const auto& p : ds.security)
        if (auto b = index.containing(p.location)) security[*b].push_back(p);
    std::vector<std::int64_t> cultural(n, 0);
    for (const auto& c : ds.companies)
        if (is_cultural_ateco(c.ateco))
            if (auto b = index.locate(c.location)) ++cultural[*b];

    const double radius = config.egohood_radius_m;
    const double cutoff = config.walk.max_distance_m;
    auto finite_or_missing = [](double d) { return std::isfinite(d) ? d : kMissing; };

    parallel_for(n, [&](std::size_t i) {
        const CensusBlock& b = blocks[i];
        auto row = f.row(i);

        // Walkability.
        if (have_roads) {
            const NodeId src[] = {block_node[i]};
            const auto dist = shortest_distances(*graph, src, cutoff);
            for (std::size_t k = 0; k < kWalkCategories.size(); ++k) {
                const auto cat = kWalkCategories[k];
                const auto near = k_nearest_amenities(dist, *locator, cat, config.walk.k_for(cat), cutoff);
                row[k] = category_walkability(near, config.walk);
            }
            row[col("dist_rail_m")] = finite_or_missing(rail[block_node[i]]);
            row[col("dist_metro_m")] = finite_or_missing(metro[block_node[i]]);
            row[col("dist_industrial_m")] = finite_or_missing(industrial[block_node[i]]);
        } else {
            for (std::size_t k = 0; k < kWalkCategories.size(); ++k) row[k] = 0.0;
        }

        // Transit by great-circle distance.
        double airport = std::numeric_limits<double>::infinity();
        for (const auto* a : airports) airport = std::min(airport, haversine_m(b.centroid, a->location));
        row[col("dist_airport_m")] = finite_or_missing(airport);
        std::int64_t stops = 0;
        for (const auto* a : bus_stops)
            if (haversine_m(b.centroid, a->location) < radius) ++stops;
        row[col("bus_stops")] = static_cast<double>(stops);

        // Land use inside the egohood buffer.
        const Vec2 center = ds.projection.forward(b.centroid);
        std::array<double, kLandUseClassCount> areas{};
        for (const auto& box : lu_boxes) {
            if (box.hi.x < center.x - radius || box.lo.x > center.x + radius || box.hi.y < center.y - radius ||
                box.lo.y > center.y + radius)
                continue;
            areas[static_cast<std::size_t>(box.poly->klass)] +=
                polygon_disc_intersection_area(box.poly->polygon, ds.projection, center, radius);
        }
        row[col("lum")] = land_use_mix(areas);
        row[col("area_urban")] = areas[0];
        row[col("area_commercial")] = areas[1];
        row[col("area_green")] = areas[2];

        // Urban fabric and industry summed over the egohood.
        double area_sum = 0;
        std::int64_t total = 0, residential = 0, commercial = 0, companies = 0, employees = 0, shops = 0,
                     population = 0, heavy = 0, culture = 0;
        std::map<std::string, std::int64_t> bracket_sum;
        std::vector<std::size_t> members{i};
        for (const auto& e : w.row(i)) members.push_back(e.col);
        for (std::size_t j : members) {
            const CensusBlock& m = blocks[j];
            area_sum += m.area_m2;
            total += m.buildings_total;
            residential += m.buildings_residential;
            commercial += m.buildings_commercial;
            companies += m.companies;
            employees += m.employees;
            shops += m.shops;
            population += m.population;
            heavy += m.heavy_industries;
            culture += cultural[j];
            for (const auto& [label, count] : m.buildings_by_year_bracket) bracket_sum[label] += count;
        }
        row[col("avg_block_size_m2")] = area_sum / static_cast<double>(members.size());
        row[col("buildings_total")] = static_cast<double>(total);
        row[col("buildings_residential")] = static_cast<double>(residential);
        row[col("buildings_commercial")] = static_cast<double>(commercial);
        const auto moments = building_year_moments(bracket_sum);
        row[col("building_year_mean")] = moments.mean;
        row[col("building_year_std")] = moments.std;
        for (const auto& label : brackets) {
            auto it = bracket_sum.find(label);
            row[col("buildings_" + label)] = it == bracket_sum.end() ? 0.0 : static_cast<double>(it->second);
        }
        row[col("company_avg_size")] =
            companies > 0 ? static_cast<double>(employees) / static_cast<double>(companies) : 0.0;
        row[col("companies")] = static_cast<double>(companies);
        row[col("employees")] = static_cast<double>(employees);
        row[col("shops")] = static_cast<double>(shops);
        row[col("population")] = static_cast<double>(population);
        row[col("cultural_companies")] = static_cast<double>(culture);
        row[col("heavy_industries")] = static_cast<double>(heavy);

        // Ego-place level.
        row[col("security_mean")] = mean_score(security[i]);
        row[col("avg_property_tax")] = b.avg_property_tax;
    }, config.threads);

    log::info("computed ", f.cols(), " features for ", n, " blocks");
    return f;
}

}  // namespace egocast

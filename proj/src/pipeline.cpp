#include "egocast/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "egocast/csv.hpp"
#include "egocast/error.hpp"
#include "egocast/log.hpp"
#include "json.hpp"

namespace egocast {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Variants
// ---------------------------------------------------------------------------

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::Property: return "property";
        case Variant::Full: return "full";
        case Variant::Open: return "open";
    }
    return "";
}

std::string_view variant_label(Variant v) {
    switch (v) {
        case Variant::Property: return "Property";
        case Variant::Full: return "Property + Neighborhood";
        case Variant::Open: return "Property + Neighborhood (Open)";
    }
    return "";
}

Variant parse_variant(std::string_view s) {
    if (s == "property") return Variant::Property;
    if (s == "full" || s == "property+neighborhood") return Variant::Full;
    if (s == "open" || s == "property+neighborhood-open") return Variant::Open;
    throw ValidationError("unknown variant '" + std::string(s) + "' (allowed: property, full, open)");
}

bool closed_data_column(const DesignColumn& c) {
    if (c.group == FeatureGroup::Property) return c.name == "property_taxes";
    return c.name == "security_mean" || c.name == "avg_property_tax";
}

std::vector<std::size_t> variant_columns(const std::vector<DesignColumn>& columns, Variant v) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns.size(); ++i) {
        const auto& c = columns[i];
        if (v == Variant::Property && c.group != FeatureGroup::Property) continue;
        if (v == Variant::Open && closed_data_column(c)) continue;
        out.push_back(i);
    }
    return out;
}

std::vector<std::string> column_groups(const std::vector<DesignColumn>& columns, bool coarse) {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const auto& c : columns) {
        if (coarse) out.emplace_back(c.group == FeatureGroup::Property ? "property" : "neighborhood");
        else out.emplace_back(to_string(c.group));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        throw ValidationError("setting '" + std::string(key) + "': cannot parse '" + std::string(value) + "'");
    return out;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string num(double v) { return csv::format_double(v); }

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
    const std::string k = trim(key);
    const std::string v = trim(value);
    if (k == "data") data_dir = v;
    else if (k == "out") out_dir = v;
    else if (k == "seed") seed = parse_number<std::uint64_t>(k, v), train.seed = seed;
    else if (k == "variant") variant = parse_variant(v);
    else if (k == "threads") threads = std::max(1u, parse_number<unsigned>(k, v)), train.threads = threads;
    else if (k == "walk.max_distance_m") walk.max_distance_m = parse_number<double>(k, v);
    else if (k == "walk.default_k") walk.default_k = parse_number<std::size_t>(k, v);
    else if (k.rfind("walk.k.", 0) == 0) walk.k_by_category[parse_amenity_category(k.substr(7))] = parse_number<std::size_t>(k, v);
    else if (k == "egohood_radius_m") egohood_radius_m = parse_number<double>(k, v);
    else if (k == "tile_side_m") tile_side_m = parse_number<double>(k, v);
    else if (k == "reference_date") reference_date = parse_iso_date(v);
    else if (k == "max_age_days") max_age_days = parse_number<int>(k, v);
    else if (k == "learning_rate") train.learning_rate = parse_number<double>(k, v);
    else if (k == "lambda") train.lambda = parse_number<double>(k, v);
    else if (k == "alpha") train.alpha = parse_number<double>(k, v);
    else if (k == "min_child_weight") train.min_child_weight = parse_number<double>(k, v);
    else if (k == "max_depth") train.max_depth = parse_number<int>(k, v);
    else if (k == "n_estimators") train.n_estimators = parse_number<int>(k, v);
    else if (k == "early_stopping_rounds") train.early_stopping_rounds = parse_number<int>(k, v);
    else if (k == "gamma") train.gamma = parse_number<double>(k, v);
    else if (k == "base_score") train.base_score = parse_number<double>(k, v);
    else throw ValidationError("unknown setting '" + k + "'");
    walk.validate();
    train.validate();
    if (!(egohood_radius_m > 0)) throw ValidationError("egohood_radius_m must be positive");
    if (!(tile_side_m > 0)) throw ValidationError("tile_side_m must be positive");
    if (max_age_days < 0) throw ValidationError("max_age_days must be non-negative");
}

void RunConfig::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot read config file " + path.string());
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw LoadError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
        set(t.substr(0, eq), t.substr(eq + 1));
    }
}

std::map<std::string, std::string> RunConfig::describe() const {
    std::map<std::string, std::string> m;
    m["seed"] = std::to_string(seed);
    m["variant"] = to_string(variant);
    m["walk.max_distance_m"] = num(walk.max_distance_m);
    m["walk.default_k"] = std::to_string(walk.default_k);
    for (const auto& [c, k] : walk.k_by_category) m["walk.k." + std::string(to_string(c))] = std::to_string(k);
    m["egohood_radius_m"] = num(egohood_radius_m);
    m["tile_side_m"] = num(tile_side_m);
    m["reference_date"] = reference_date ? format_iso_date(*reference_date) : "latest";
    m["max_age_days"] = std::to_string(max_age_days);
    m["learning_rate"] = num(train.learning_rate);
    m["lambda"] = num(train.lambda);
    m["alpha"] = num(train.alpha);
    m["min_child_weight"] = num(train.min_child_weight);
    m["max_depth"] = std::to_string(train.max_depth);
    m["n_estimators"] = std::to_string(train.n_estimators);
    m["early_stopping_rounds"] = std::to_string(train.early_stopping_rounds);
    m["gamma"] = num(train.gamma);
    m["base_score"] = train.base_score ? num(*train.base_score) : "mean";
    return m;
}

// ---------------------------------------------------------------------------
// Oracle
// ---------------------------------------------------------------------------

namespace {

std::optional<std::size_t> design_column(const DesignMatrix& dm, std::string_view qualified) {
    for (std::size_t c = 0; c < dm.columns.size(); ++c)
        if (dm.columns[c].qualified() == qualified) return c;
    return std::nullopt;
}

double scaled(const OracleTerm& t, double v) {
    if (is_missing(v) || !(t.hi > t.lo)) return 0.0;
    const double s = std::clamp((v - t.lo) / (t.hi - t.lo), 0.0, 1.0);
    return t.invert ? 1.0 - s : s;
}

}  // namespace

std::pair<double, double> SynthOracle::components(const DesignMatrix& dm, std::size_t row) const {
    double f = intercept;
    for (const auto& [name, w] : property_weights) {
        const auto c = design_column(dm, name);
        if (!c) throw ValidationError("oracle column '" + name + "' not in design matrix");
        const double v = dm.at(row, *c);
        if (!is_missing(v)) f += w * v;
    }
    double g = 0.0;
    for (const auto& t : neighborhood) {
        const auto c = design_column(dm, t.column);
        if (!c) throw ValidationError("oracle column '" + t.column + "' not in design matrix");
        g += t.weight * scaled(t, dm.at(row, *c));
    }
    return {f, g};
}

double SynthOracle::price(const DesignMatrix& dm, std::size_t row) const {
    const auto [f, g] = components(dm, row);
    return f + g;
}

void write_oracle(const fs::path& path, const SynthOracle& o) {
    json terms = json::array();
    for (const auto& t : o.neighborhood)
        terms.push_back({{"column", t.column}, {"weight", t.weight}, {"lo", t.lo}, {"hi", t.hi}, {"invert", t.invert}});
    json doc = {{"intercept", o.intercept},
                {"property_weights", o.property_weights},
                {"neighborhood", terms},
                {"neighborhood_scale", o.neighborhood_scale},
                {"noise_scale", o.noise_scale},
                {"variance_share", o.variance_share},
                {"seed", o.seed}};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << doc.dump(2) << '\n';
}

SynthOracle read_oracle(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read " + path.string());
    try {
        const json doc = json::parse(in);
        SynthOracle o;
        o.intercept = doc.at("intercept").get<double>();
        o.property_weights = doc.at("property_weights").get<std::map<std::string, double>>();
        for (const auto& t : doc.at("neighborhood"))
            o.neighborhood.push_back({t.at("column").get<std::string>(), t.at("weight").get<double>(),
                                      t.at("lo").get<double>(), t.at("hi").get<double>(), t.at("invert").get<bool>()});
        o.neighborhood_scale = doc.at("neighborhood_scale").get<double>();
        o.noise_scale = doc.at("noise_scale").get<double>();
        o.variance_share = doc.at("variance_share").get<double>();
        o.seed = doc.at("seed").get<std::uint64_t>();
        return o;
    } catch (const json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Synthetic city
// ---------------------------------------------------------------------------

SynthSpec::SynthSpec() {
    using A = AmenityCategory;
    density_per_km2 = {{A::Coffee, 6.0},       {A::Entertainment, 2.0}, {A::Shopping, 8.0},
                       {A::RestaurantBar, 10.0}, {A::School, 1.5},      {A::Grocery, 4.0},
                       {A::Library, 0.5},      {A::Park, 1.0},          {A::MetroStation, 0.3},
                       {A::RailStation, 0.06}, {A::Airport, 0.008},     {A::BusStop, 6.0},
                       {A::IndustrialArea, 0.15}};
}

void SynthSpec::validate() const {
    if (blocks < 25) throw ValidationError("synth needs at least 25 blocks");
    if (!(block_side_m > 0)) throw ValidationError("block side must be positive");
    for (const auto& [c, d] : density_per_km2)
        if (!(d >= 0)) throw ValidationError("amenity density must be non-negative");
    if (!(security_spacing_m > 0) || !(landuse_cell_m > 0)) throw ValidationError("grid spacings must be positive");
    if (!(neighborhood_variance_share > 0 && neighborhood_variance_share < 1))
        throw ValidationError("neighborhood variance share must lie in (0, 1)");
    if (!(noise_scale >= 0) || !(missing_rate >= 0 && missing_rate < 1))
        throw ValidationError("noise scale and missing rate must be non-negative");
    parse_iso_date(reference_date);
}

namespace {

struct Bump {
    double x, y, sigma, amp;
    double at(double px, double py) const {
        const double dx = px - x, dy = py - y;
        return amp * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
    }
};

struct Field {
    std::vector<Bump> bumps;
    double at(double x, double y) const {
        double v = 0;
        for (const auto& b : bumps) v = std::max(v, b.at(x, y));
        return std::min(v, 1.0);
    }
};

class Synthesizer {
public:
    explicit Synthesizer(const SynthSpec& spec) : spec_(spec), rng_(spec.seed) {
        nx_ = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.blocks))));
        ny_ = (spec.blocks + nx_ - 1) / nx_;
        width_ = static_cast<double>(nx_) * spec.block_side_m;
        height_ = static_cast<double>(ny_) * spec.block_side_m;
        const double mid_lat = spec.origin.lat + 0.5 * height_ / (kEarthRadiusM * kPi / 180.0);
        proj_ = LocalProjection(spec.origin, mid_lat);

        centrality_.bumps.push_back({0.5 * width_, 0.55 * height_, 0.22 * width_, 1.0});
        for (int i = 0; i < 2; ++i)
            centrality_.bumps.push_back({uniform(0.15, 0.85) * width_, uniform(0.15, 0.85) * height_,
                                         0.1 * width_, 0.6});
        for (int i = 0; i < 4; ++i)
            green_.bumps.push_back({uniform(0, 1) * width_, uniform(0, 1) * height_, 0.12 * width_, 1.0});
        for (int i = 0; i < 2; ++i) {
            const bool west = uniform(0, 1) < 0.5;
            industry_.bumps.push_back({(west ? uniform(0.0, 0.2) : uniform(0.8, 1.0)) * width_,
                                       uniform(0.1, 0.9) * height_, 0.1 * width_, 1.0});
        }
    }

    CityDataset run() {
        CityDataset ds;
        make_blocks(ds);
        make_roads(ds);
        make_amenities(ds);
        make_landuse(ds);
        make_security(ds);
        make_companies(ds);
        make_listings(ds);
        return ds;
    }

private:
    double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
    bool chance(double p) { return uniform(0, 1) < p; }
    std::size_t pick(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

    std::size_t block_count() const { return spec_.blocks; }
    Vec2 block_origin(std::size_t i) const {
        return {static_cast<double>(i % nx_) * spec_.block_side_m, static_cast<double>(i / nx_) * spec_.block_side_m};
    }
    Vec2 block_center(std::size_t i) const {
        const Vec2 o = block_origin(i);
        return {o.x + 0.5 * spec_.block_side_m, o.y + 0.5 * spec_.block_side_m};
    }
    bool in_city(Vec2 p) const {
        if (p.x < 0 || p.y < 0 || p.x >= width_ || p.y >= height_) return false;
        const auto ix = static_cast<std::size_t>(p.x / spec_.block_side_m);
        const auto iy = static_cast<std::size_t>(p.y / spec_.block_side_m);
        return iy * nx_ + ix < spec_.blocks;
    }
    double area_km2() const { return static_cast<double>(spec_.blocks) * spec_.block_side_m * spec_.block_side_m / 1e6; }

    LonLat corner(std::size_t ix, std::size_t iy) const {
        return proj_.inverse({static_cast<double>(ix) * spec_.block_side_m, static_cast<double>(iy) * spec_.block_side_m});
    }

    Polygon square(Vec2 c, double side) const {
        const double h = 0.5 * side;
        return Polygon{{Ring{proj_.inverse({c.x - h, c.y - h}), proj_.inverse({c.x + h, c.y - h}),
                             proj_.inverse({c.x + h, c.y + h}), proj_.inverse({c.x - h, c.y + h})}}};
    }

    /// Random point inside a block drawn with probability proportional to weight(center).
    /// The block weights are cached until cumulative_ is cleared.
    template <typename W>
    Vec2 weighted_point(W&& weight, double margin = 0.0) {
        if (cumulative_.empty()) {
            cumulative_.resize(block_count());
            double acc = 0;
            for (std::size_t i = 0; i < block_count(); ++i) {
                const Vec2 c = block_center(i);
                acc += std::max(0.0, weight(c.x, c.y));
                cumulative_[i] = acc;
            }
        }
        const double u = uniform(0, cumulative_.back());
        auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
        const auto b = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), block_count() - 1);
        const Vec2 o = block_origin(b);
        const double s = spec_.block_side_m;
        return {o.x + uniform(margin, 1 - margin) * s, o.y + uniform(margin, 1 - margin) * s};
    }

    void make_blocks(CityDataset& ds) {
        static const std::array<std::string, 9> brackets{"pre1919",   "1919_1945", "1946_1960",
                                                         "1961_1970", "1971_1980", "1981_1990",
                                                         "1991_2000", "2001_2005", "post2005"};
        char id[16];
        for (std::size_t i = 0; i < block_count(); ++i) {
            const std::size_t ix = i % nx_, iy = i / nx_;
            const Vec2 c = block_center(i);
            const double cen = centrality_.at(c.x, c.y), grn = green_.at(c.x, c.y), ind = industry_.at(c.x, c.y);
            CensusBlock b;
            std::snprintf(id, sizeof(id), "B%05zu", i + 1);
            b.id = id;
            b.polygon = Polygon{{Ring{corner(ix, iy), corner(ix + 1, iy), corner(ix + 1, iy + 1), corner(ix, iy + 1)}}};
            b.centroid = proj_.inverse(c);
            b.area_m2 = polygon_area_m2(b.polygon, proj_);
            b.population = std::llround(150 + 900 * cen * (1 - 0.5 * grn) + uniform(0, 100));
            b.buildings_total = std::max<std::int64_t>(1, std::llround(8 + 25 * cen + uniform(0, 6)));
            b.buildings_residential = std::llround(static_cast<double>(b.buildings_total) * (0.85 - 0.3 * cen));
            b.buildings_commercial = b.buildings_total - b.buildings_residential;

            // Older stock near the centre.
            const double mu = 7.0 * (1.0 - cen) + uniform(-1, 1);
            std::array<double, 9> p{};
            double ps = 0;
            for (std::size_t k = 0; k < 9; ++k) ps += p[k] = std::exp(-std::pow(static_cast<double>(k) - mu, 2) / 4.0);
            std::array<std::int64_t, 9> counts{};
            std::int64_t left = b.buildings_total;
            for (std::size_t k = 0; k < 9; ++k) {
                counts[k] = std::min(left, static_cast<std::int64_t>(std::floor(p[k] / ps * static_cast<double>(b.buildings_total))));
                left -= counts[k];
            }
            counts[static_cast<std::size_t>(std::clamp(std::lround(mu), 0L, 8L))] += left;
            for (std::size_t k = 0; k < 9; ++k)
                if (counts[k] > 0) b.buildings_by_year_bracket[brackets[k]] = counts[k];

            b.companies = std::llround(2 + 40 * cen + 10 * ind + uniform(0, 4));
            b.employees = std::llround(static_cast<double>(b.companies) * (3 + 8 * ind + uniform(0, 3)));
            b.company_avg_size = static_cast<double>(b.employees) / static_cast<double>(b.companies);
            b.shops = std::llround(1 + 30 * cen + uniform(0, 3));
            b.heavy_industries = std::llround(6 * ind * ind + (chance(0.05) ? 1 : 0));
            b.avg_property_tax = std::round(500 + 1500 * cen + 300 * uniform(0, 1));
            ds.blocks.push_back(std::move(b));
        }
    }

    void make_roads(CityDataset& ds) {
        std::set<std::pair<std::pair<std::size_t, std::size_t>, std::pair<std::size_t, std::size_t>>> seen;
        char a[32], b[32];
        auto add = [&](std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
            if (!seen.insert({{x0, y0}, {x1, y1}}).second) return;
            std::snprintf(a, sizeof(a), "N%04zu_%04zu", x0, y0);
            std::snprintf(b, sizeof(b), "N%04zu_%04zu", x1, y1);
            RoadEdge e{a, b, corner(x0, y0), corner(x1, y1), 0.0};
            e.length_m = haversine_m(e.a, e.b);
            ds.roads.push_back(std::move(e));
        };
        for (std::size_t i = 0; i < block_count(); ++i) {
            const std::size_t ix = i % nx_, iy = i / nx_;
            add(ix, iy, ix + 1, iy);
            add(ix, iy + 1, ix + 1, iy + 1);
            add(ix, iy, ix, iy + 1);
            add(ix + 1, iy, ix + 1, iy + 1);
        }
    }

    void make_amenities(CityDataset& ds) {
        using A = AmenityCategory;
        auto density = [&](A c) {
            auto it = spec_.density_per_km2.find(c);
            return it == spec_.density_per_km2.end() ? 0.0 : it->second;
        };
        char id[32];
        std::size_t serial = 0;
        auto push = [&](A c, Vec2 p, std::optional<Polygon> poly) {
            std::snprintf(id, sizeof(id), "A%06zu", ++serial);
            Amenity a{id, c, proj_.inverse(p), std::move(poly)};
            ds.amenities.push_back(std::move(a));
        };
        for (std::size_t ci = 0; ci < kAmenityCategoryCount; ++ci) {
            const auto c = static_cast<A>(ci);
            const auto n = static_cast<std::size_t>(std::llround(density(c) * area_km2()));
            if (n == 0) continue;
            if (c == A::Airport) {
                for (std::size_t k = 0; k < n; ++k)
                    push(c, {width_ + 4000.0 + 2000.0 * static_cast<double>(k), -3000.0}, std::nullopt);
                continue;
            }
            std::function<double(double, double)> weight;
            switch (c) {
                case A::RestaurantBar:
                case A::Entertainment:
                    weight = [this](double x, double y) { return 0.03 + std::pow(centrality_.at(x, y), 2); };
                    break;
                case A::Coffee:
                case A::Shopping:
                case A::Grocery:
                    weight = [this](double x, double y) { return 0.1 + centrality_.at(x, y); };
                    break;
                case A::School:
                case A::Library:
                    weight = [this](double x, double y) { return 0.5 + 0.5 * centrality_.at(x, y); };
                    break;
                case A::MetroStation:
                    weight = [this](double x, double y) { return 0.01 + std::pow(centrality_.at(x, y), 3); };
                    break;
                case A::Park:
                    weight = [this](double x, double y) { return 0.05 + std::pow(green_.at(x, y), 2); };
                    break;
                case A::IndustrialArea:
                    weight = [this](double x, double y) { return 0.01 + std::pow(industry_.at(x, y), 2); };
                    break;
                default:
                    weight = [](double, double) { return 1.0; };
            }
            cumulative_.clear();
            for (std::size_t k = 0; k < n; ++k) {
                const Vec2 p = weighted_point(weight);
                if (c == A::Park) push(c, p, square(p, uniform(80, 200)));
                else if (c == A::IndustrialArea) push(c, p, square(p, uniform(200, 400)));
                else push(c, p, std::nullopt);
            }
        }
        for (auto& a : ds.amenities)
            if (a.polygon) {
                // Polygon amenities report the vertex mean as their location.
                double lon = 0, lat = 0;
                for (const auto& v : a.polygon->rings[0]) lon += v.lon, lat += v.lat;
                a.location = {lon / 4.0, lat / 4.0};
            }
    }

    void make_landuse(CityDataset& ds) {
        const double s = spec_.landuse_cell_m;
        const auto cx = static_cast<std::size_t>(std::ceil(width_ / s));
        const auto cy = static_cast<std::size_t>(std::ceil(height_ / s));
        for (std::size_t j = 0; j < cy; ++j)
            for (std::size_t i = 0; i < cx; ++i) {
                const double x0 = static_cast<double>(i) * s, y0 = static_cast<double>(j) * s;
                const double x1 = std::min(x0 + s, width_), y1 = std::min(y0 + s, height_);
                const Vec2 c{0.5 * (x0 + x1), 0.5 * (y0 + y1)};
                if (!in_city({x0 + 1e-6, y0 + 1e-6})) continue;
                const double cen = centrality_.at(c.x, c.y), grn = green_.at(c.x, c.y), ind = industry_.at(c.x, c.y);
                LandUseClass k = LandUseClass::Urban;
                if (grn > 0.55) k = LandUseClass::Green;
                else if (cen > 0.5 || ind > 0.5) k = LandUseClass::Commercial;
                if (chance(0.1)) k = static_cast<LandUseClass>(pick(kLandUseClassCount));
                LandUsePolygon lu;
                lu.klass = k;
                lu.polygon = Polygon{{Ring{proj_.inverse({x0, y0}), proj_.inverse({x1, y0}), proj_.inverse({x1, y1}),
                                           proj_.inverse({x0, y1})}}};
                lu.area_m2 = polygon_area_m2(lu.polygon, proj_);
                ds.landuse.push_back(std::move(lu));
            }
    }

    void make_security(CityDataset& ds) {
        const double s = spec_.security_spacing_m;
        for (double y = 0.5 * s; y < height_; y += s)
            for (double x = 0.5 * s; x < width_; x += s) {
                if (!in_city({x, y})) continue;
                const double safety = std::clamp(0.45 + 0.4 * centrality_.at(x, y) - 0.35 * industry_.at(x, y) +
                                                     0.2 * green_.at(x, y), 0.0, 1.0);
                const double score = std::clamp(1.0 + 8.0 * safety + 0.5 * normal(), 0.1, 9.9);
                ds.security.push_back({proj_.inverse({x, y}), std::round(score * 100) / 100});
            }
    }

    void make_companies(CityDataset& ds) {
        static const std::array<int, 9> cultural{58, 59, 62, 63, 71, 73, 74, 90, 91};
        static const std::array<int, 10> other{10, 25, 41, 45, 46, 47, 49, 56, 68, 86};
        const auto n = static_cast<std::size_t>(std::llround(spec_.companies_per_km2 * area_km2()));
        std::function<double(double, double)> weight = [this](double x, double y) {
            return 0.1 + centrality_.at(x, y);
        };
        cumulative_.clear();
        for (std::size_t k = 0; k < n; ++k) {
            const Vec2 p = weighted_point(weight, 0.05);
            const double cen = centrality_.at(p.x, p.y);
            const int code = chance(0.1 + 0.35 * cen) ? cultural[pick(cultural.size())] : other[pick(other.size())];
            ds.companies.push_back({proj_.inverse(p), code});
        }
    }

    void make_listings(CityDataset& ds) {
        const auto ref = parse_iso_date(spec_.reference_date);
        std::function<double(double, double)> weight = [this](double x, double y) {
            return 150 + 900 * centrality_.at(x, y) * (1 - 0.5 * green_.at(x, y));
        };
        cumulative_.clear();
        auto idx = [&](std::string_view name) { return property_attribute_index(name); };
        auto weighted_level = [&](std::initializer_list<double> probs) {
            double u = uniform(0, 1), acc = 0;
            std::size_t i = 0;
            for (double p : probs) {
                acc += p;
                if (u < acc) return static_cast<double>(i);
                ++i;
            }
            return static_cast<double>(i - 1);
        };
        const double m = spec_.missing_rate;
        auto maybe = [&](double v) { return chance(m) ? kMissing : v; };
        char id[32];
        for (std::size_t k = 0; k < spec_.listings; ++k) {
            Listing l;
            std::snprintf(id, sizeof(id), "L%06zu", k + 1);
            l.id = id;
            l.location = proj_.inverse(weighted_point(weight, 0.1));
            l.posted_date = ref - std::chrono::days(static_cast<int>(pick(300)));
            auto& a = l.attributes;
            a.fill(kMissing);
            const double sqm = std::clamp(std::round(85.0 * std::exp(0.35 * normal())), 25.0, 400.0);
            a[idx("square_meters")] = sqm;
            a[idx("built_year")] = maybe(static_cast<double>(1900 + pick(125)));
            a[idx("energy_class")] = maybe(static_cast<double>(pick(7)));
            a[idx("monthly_expenses")] = maybe(std::round(30 + 1.2 * sqm + uniform(0, 80)));
            a[idx("floor")] = maybe(static_cast<double>(pick(9)));
            a[idx("heating_type")] = maybe(weighted_level({0.55, 0.4, 0.05}));
            a[idx("fixtures")] = maybe(static_cast<double>(pick(3)));
            a[idx("garden")] = maybe(chance(0.15) ? 1.0 : 0.0);
            a[idx("furnished")] = maybe(chance(0.3) ? 1.0 : 0.0);
            a[idx("terrace")] = maybe(chance(0.35) ? 1.0 : 0.0);
            a[idx("sun_exposure")] = maybe(static_cast<double>(pick(4)));
            a[idx("kitchen_type")] = maybe(static_cast<double>(pick(3)));
            a[idx("spa")] = maybe(chance(0.02) ? 1.0 : 0.0);
            a[idx("cellar")] = maybe(chance(0.5) ? 1.0 : 0.0);
            a[idx("garage")] = maybe(chance(0.3) ? 1.0 : 0.0);
            a[idx("fireplace")] = maybe(chance(0.05) ? 1.0 : 0.0);
            a[idx("place_type")] = static_cast<double>(pick(3));
            a[idx("property_class")] = weighted_level({0.3, 0.55, 0.15});
            a[idx("property_type")] = weighted_level({0.9, 0.05, 0.05});
            a[idx("property_taxes")] = maybe(std::round(2 * sqm + uniform(0, 150)));
            a[idx("condition")] = static_cast<double>(pick(4));
            const double rooms = std::clamp(std::round(sqm / 25.0) + static_cast<double>(pick(3)) - 1.0, 1.0, 10.0);
            a[idx("rooms")] = rooms;
            a[idx("bathrooms")] = 1.0 + (sqm > 90 ? 1.0 : 0.0) + (sqm > 160 ? 1.0 : 0.0);
            a[idx("bedrooms")] = maybe(std::max(1.0, rooms - 1.0));
            a[idx("property_kind")] = weighted_level({0.7, 0.07, 0.05, 0.05, 0.06, 0.07});
            ds.listings.push_back(std::move(l));
        }
    }

    const SynthSpec& spec_;
    std::mt19937_64 rng_;
    std::size_t nx_ = 1, ny_ = 1;
    double width_ = 0, height_ = 0;
    LocalProjection proj_;
    Field centrality_, green_, industry_;
    std::vector<double> cumulative_;
};

SynthOracle base_oracle(const SynthSpec& spec) {
    SynthOracle o;
    o.intercept = 60000;
    o.property_weights = {
        {"property:square_meters", 1500},         {"property:bathrooms", 8000},
        {"property:garage", 12000},               {"property:terrace", 6000},
        {"property:garden", 10000},               {"property:fireplace", 5000},
        {"property:spa", 15000},                  {"property:condition=new", 25000},
        {"property:condition=excellent", 12000},  {"property:condition=to_renovate", -20000},
        {"property:property_class=luxury", 40000}, {"property:property_class=economy", -15000},
        {"property:energy_class=A", 10000},       {"property:energy_class=B", 6000},
        {"property:energy_class=G", -8000},       {"property:property_kind=detached", 30000},
        {"property:property_kind=attic", 10000},  {"property:property_type=bare_ownership", -40000},
    };
    o.neighborhood = {
        {"ego_place:walk_restaurant_bar", 1.0, 0, 1, false},
        {"ego_place:lum", 0.6, 0, 1, false},
        {"ego_place:security_mean", 0.8, 0, 1, false},
        {"ego_place:avg_property_tax", 0.6, 0, 1, false},
        {"ego_place:dist_metro_m", 0.8, 0, 1, true},
        {"ego_place:dist_industrial_m", 0.4, 0, 1, false},
        {"egohood:walk_coffee", 0.7, 0, 1, false},
        {"egohood:walk_park", 0.6, 0, 1, false},
        {"egohood:cultural_companies", 0.6, 0, 1, false},
        {"egohood:heavy_industries", 0.5, 0, 1, true},
        {"egohood:area_green", 0.4, 0, 1, false},
    };
    o.noise_scale = spec.noise_scale;
    o.seed = spec.seed;
    return o;
}

double variance(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size());
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - ma) * (b[i] - mb);
    return acc / static_cast<double>(a.size());
}

}  // namespace

CityDataset synth_city(const SynthSpec& spec, SynthOracle* oracle_out, unsigned threads) {
    spec.validate();
    CityDataset ds = Synthesizer(spec).run();
    finalize_dataset(ds);
    log::info("synth: ", ds.blocks.size(), " blocks, ", ds.roads.size(), " road edges, ", ds.amenities.size(),
              " amenities, ", ds.landuse.size(), " land-use polygons, ", ds.security.size(), " security points, ",
              ds.listings.size(), " listings");

    // Price the listings with features computed by the library itself.
    std::vector<Listing> assigned = ds.listings;
    const BlockIndex index(ds.blocks);
    assign_ego_places(assigned, index);
    if (assigned.size() != ds.listings.size()) throw Error("synth produced listings outside every block");
    FeatureConfig fc;
    fc.threads = threads;
    const FeatureTable place = compute_block_features(ds, fc);
    const FeatureTable ego = egohood_features(row_normalize(build_contiguity(ds.blocks)), place);
    const DesignMatrix dm = assemble_design_matrix(assigned, place, ego);

    SynthOracle o = base_oracle(spec);
    for (auto& t : o.neighborhood) {
        const auto c = design_column(dm, t.column);
        if (!c) throw Error("synth oracle column '" + t.column + "' missing");
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (std::size_t r = 0; r < dm.rows(); ++r) {
            const double v = dm.at(r, *c);
            if (is_missing(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        t.lo = std::isfinite(lo) ? lo : 0.0;
        t.hi = std::isfinite(hi) ? hi : 0.0;
    }
    std::vector<double> f(dm.rows()), g(dm.rows());
    for (std::size_t r = 0; r < dm.rows(); ++r) std::tie(f[r], g[r]) = o.components(dm, r);

    // Scale g so that Var(s g) / Var(f + s g) hits the requested share.
    const double vf = variance(f), vg = variance(g), cfg = covariance(f, g);
    const double share = spec.neighborhood_variance_share;
    double s = 0.0;
    if (vg > 0) {
        const double a = vg * (1 - share), b = -2 * cfg * share, c = -vf * share;
        s = (-b + std::sqrt(b * b - 4 * a * c)) / (2 * a);
    }
    o.neighborhood_scale = s;
    for (auto& t : o.neighborhood) t.weight *= s;
    std::vector<double> total(dm.rows()), gs(dm.rows());
    for (std::size_t r = 0; r < dm.rows(); ++r) {
        const auto [fr, gr] = o.components(dm, r);
        gs[r] = gr;
        total[r] = fr + gr;
    }
    o.variance_share = vg > 0 ? variance(gs) / variance(total) : 0.0;

    std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t r = 0; r < dm.rows(); ++r) {
        double price = total[r];
        if (spec.noise_scale > 0) price *= std::max(0.2, 1.0 + spec.noise_scale * noise(noise_rng));
        ds.listings[r].asked_price = price;
    }
    log::info("synth: neighborhood variance share ", o.variance_share);
    if (oracle_out) *oracle_out = std::move(o);
    return ds;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

FilterRules filter_rules(const RunConfig& config, const std::vector<Listing>& listings) {
    FilterRules rules;
    rules.max_age_days = config.max_age_days;
    if (config.reference_date) {
        rules.reference_date = *config.reference_date;
    } else {
        std::optional<std::chrono::sys_days> latest;
        for (const auto& l : listings)
            if (l.posted_date && (!latest || *l.posted_date > *latest)) latest = l.posted_date;
        rules.reference_date = latest.value_or(std::chrono::sys_days{});
    }
    return rules;
}

namespace {

FoldAssignment build_folds(const CityDataset& ds, const DesignMatrix& dm, const RunConfig& config, DiscardStats* stats) {
    const auto tiles = tile_blocks(ds.blocks, ds.projection, config.tile_side_m);
    std::vector<std::size_t> listing_block;
    listing_block.reserve(dm.rows());
    for (const auto& b : dm.block_ids) listing_block.push_back(*ds.block_index(b));
    FoldAssignment folds = assign_folds(tiles, dm.listing_ids, listing_block, config.seed);
    const DiscardStats s = enforce_constraints(folds, ds.blocks, config.egohood_radius_m);
    if (stats) *stats = s;
    return folds;
}

FeatureConfig feature_config(const RunConfig& config) {
    FeatureConfig fc;
    fc.walk = config.walk;
    fc.egohood_radius_m = config.egohood_radius_m;
    fc.threads = config.threads;
    return fc;
}

}  // namespace

Prepared prepare(CityDataset ds, const RunConfig& config) {
    Prepared p;
    const std::size_t raw = ds.listings.size();
    ds.listings = filter_listings(ds.listings, filter_rules(config, ds.listings));
    const std::size_t kept = ds.listings.size();
    {
        const BlockIndex index(ds.blocks);
        assign_ego_places(ds.listings, index);
    }
    log::info("listings: ", raw, " loaded, ", kept, " after filtering, ", ds.listings.size(), " assigned");
    p.place = compute_block_features(ds, feature_config(config));
    p.egohood = egohood_features(row_normalize(build_contiguity(ds.blocks, config.egohood_radius_m)), p.place);
    p.design = assemble_design_matrix(ds.listings, p.place, p.egohood);
    p.folds = build_folds(ds, p.design, config, &p.discards);
    p.dataset = std::move(ds);
    return p;
}

VariantRun run_variant(const DesignMatrix& design, const FoldAssignment& folds, Variant variant,
                       const gbt::TrainConfig& config) {
    if (folds.listing_ids != design.listing_ids)
        throw ValidationError("fold assignment and design matrix list different listings");
    VariantRun run;
    run.variant = variant;
    run.columns = variant_columns(design.columns, variant);
    const DesignMatrix x = design.select(run.columns);
    const auto names = x.qualified_names();

    auto gather = [&](const std::vector<std::size_t>& rows, std::vector<double>& values, std::vector<double>& y) {
        values.clear();
        y.clear();
        values.reserve(rows.size() * x.cols());
        for (std::size_t r : rows) {
            const auto row = x.row(r);
            values.insert(values.end(), row.begin(), row.end());
            y.push_back(x.targets[r]);
        }
    };

    for (int r = 0; r < kFolds; ++r) {
        const auto train_rows = folds.members(r, Role::Train);
        const auto val_rows = folds.members(r, Role::Validation);
        const auto hold_rows = folds.members(r, Role::Holdout);
        std::vector<double> xt, yt, xv, yv, xh, yh;
        gather(train_rows, xt, yt);
        gather(val_rows, xv, yv);
        gather(hold_rows, xh, yh);
        log::info("variant ", to_string(variant), " rotation ", r, ": ", train_rows.size(), " train, ",
                  val_rows.size(), " validation, ", hold_rows.size(), " hold-out rows, ", x.cols(), " columns");
        auto model = gbt::train({xt, train_rows.size(), x.cols()}, yt, {xv, val_rows.size(), x.cols()}, yv, config,
                                names);
        RotationPredictions pred;
        pred.y = yh;
        pred.prediction = model.predict(gbt::MatrixView{xh, hold_rows.size(), x.cols()});
        for (std::size_t h : hold_rows) pred.ids.push_back(x.listing_ids[h]);
        log::info("variant ", to_string(variant), " rotation ", r, ": ", model.trees.size(), " trees kept of ",
                  model.metadata.rounds_trained);
        run.models.push_back(std::move(model));
        run.holdout.push_back(std::move(pred));
    }
    run.report = evaluate_run(run.holdout);
    return run;
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 15];
    }
    return out;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha256_hex(bytes);
}

fs::path manifest_path(const fs::path& dir, std::string_view stage) {
    return dir / (std::string(stage) + ".manifest.json");
}

void write_manifest(const fs::path& dir, const Manifest& m) {
    const json doc = {{"stage", m.stage}, {"config", m.config}, {"inputs", m.inputs}, {"outputs", m.outputs}};
    std::ofstream out(manifest_path(dir, m.stage), std::ios::binary);
    if (!out) throw Error("cannot write manifest in " + dir.string());
    out << doc.dump(2) << '\n';
}

std::optional<Manifest> read_manifest(const fs::path& dir, std::string_view stage) {
    const fs::path path = manifest_path(dir, stage);
    if (!fs::exists(path)) return std::nullopt;
    std::ifstream in(path, std::ios::binary);
    try {
        const json doc = json::parse(in);
        Manifest m;
        m.stage = doc.at("stage").get<std::string>();
        m.config = doc.at("config").get<std::map<std::string, std::string>>();
        m.inputs = doc.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = doc.at("outputs").get<std::map<std::string, std::string>>();
        return m;
    } catch (const json::exception& e) {
        throw LoadError(path.string() + ": " + e.what());
    }
}

void require_fresh(const fs::path& dir, std::string_view producer, const std::vector<std::string>& files,
                   bool required) {
    const auto m = read_manifest(dir, producer);
    const std::string rerun = "rerun `egocast " + std::string(producer) + "`";
    if (!m) {
        if (!required) return;
        throw StaleArtifactError("no " + std::string(producer) + " manifest in " + dir.string() + "; " + rerun);
    }
    for (const auto& f : files) {
        auto it = m->outputs.find(f);
        if (it == m->outputs.end())
            throw StaleArtifactError((dir / f).string() + " is not recorded by stage " + std::string(producer) + "; " + rerun);
        if (!fs::exists(dir / f)) throw StaleArtifactError((dir / f).string() + " is missing; " + rerun);
        if (sha256_file(dir / f) != it->second)
            throw StaleArtifactError((dir / f).string() + " changed since stage " + std::string(producer) +
                                     " wrote it; " + rerun);
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

namespace {

const std::vector<std::string> kLayerFiles{"blocks.geojson", "listings.csv", "amenities.csv", "landuse.geojson",
                                           "security.csv",   "roads.csv",    "companies.csv"};

std::vector<std::string> present_layers(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& f : kLayerFiles)
        if (fs::exists(dir / f)) out.push_back(f);
    return out;
}

std::map<std::string, std::string> hashes(const fs::path& dir, const std::vector<std::string>& files) {
    std::map<std::string, std::string> out;
    for (const auto& f : files) out[f] = sha256_file(dir / f);
    return out;
}

std::map<std::string, std::string> stage_config(const RunConfig& config, std::initializer_list<const char*> keys) {
    const auto all = config.describe();
    std::map<std::string, std::string> out;
    for (const char* k : keys) {
        const std::string key = k;
        for (const auto& [name, value] : all)
            if (name == key || (key.back() == '.' && name.rfind(key, 0) == 0)) out[name] = value;
    }
    return out;
}

CityDataset load_layers(const RunConfig& config) {
    require_fresh(config.data_dir, "synth", present_layers(config.data_dir), false);
    return load_dataset(DatasetPaths::in_directory(config.data_dir));
}

std::vector<CensusBlock> load_sorted_blocks(const RunConfig& config, CityDataset* holder) {
    CityDataset ds;
    ds.blocks = load_blocks(config.data_dir / "blocks.geojson");
    finalize_dataset(ds);
    if (holder) *holder = ds;
    return ds.blocks;
}

void ensure_dir(const fs::path& dir) { fs::create_directories(dir); }

std::vector<Listing> read_assigned_listings(const fs::path& out) {
    auto listings = load_listings(out / "listings.csv");
    const auto t = csv::Table::read(out / "ego_places.csv");
    const std::size_t c_id = t.require("id"), c_block = t.require("block_id");
    std::map<std::string, std::string> place;
    for (std::size_t i = 0; i < t.rows(); ++i) place[t.row(i)[c_id]] = t.row(i)[c_block];
    for (auto& l : listings) {
        auto it = place.find(l.id);
        if (it != place.end()) l.ego_place_id = it->second;
    }
    return listings;
}

fs::path variant_dir(const RunConfig& config, Variant v) { return config.out_dir / std::string(to_string(v)); }

std::string model_file(int r) { return "model_r" + std::to_string(r) + ".json"; }

struct Trained {
    DesignMatrix design;
    FoldAssignment folds;
    std::vector<gbt::TreeEnsemble> models;
};

Trained load_trained(const RunConfig& config, Variant v) {
    const fs::path vdir = variant_dir(config, v);
    std::vector<std::string> files;
    for (int r = 0; r < kFolds; ++r) files.push_back(model_file(r));
    require_fresh(vdir, "train", files);
    require_fresh(config.out_dir, "egohood", {"design.csv", "targets.csv"});
    Trained t;
    t.design = DesignMatrix::read_csv(config.out_dir / "design.csv", config.out_dir / "targets.csv");
    for (int r = 0; r < kFolds; ++r) t.models.push_back(gbt::load_model(vdir / model_file(r)));
    return t;
}

gbt::TreeEnsemble concatenated(const std::vector<gbt::TreeEnsemble>& models) {
    gbt::TreeEnsemble all;
    all.feature_names = models.front().feature_names;
    all.learning_rate = models.front().learning_rate;
    for (const auto& m : models) all.trees.insert(all.trees.end(), m.trees.begin(), m.trees.end());
    all.recompute_importance();
    return all;
}

}  // namespace

void stage_synth(const SynthSpec& spec, const fs::path& out, unsigned threads) {
    ensure_dir(out);
    SynthOracle oracle;
    const CityDataset ds = synth_city(spec, &oracle, threads);
    DatasetPaths paths = DatasetPaths::in_directory(out);
    paths.companies = out / "companies.csv";
    write_dataset(paths, ds);
    write_oracle(out / "oracle.json", oracle);
    Manifest m;
    m.stage = "synth";
    m.config = {{"blocks", std::to_string(spec.blocks)},
                {"listings", std::to_string(spec.listings)},
                {"seed", std::to_string(spec.seed)},
                {"noise_scale", num(spec.noise_scale)},
                {"neighborhood_variance_share", num(spec.neighborhood_variance_share)},
                {"block_side_m", num(spec.block_side_m)},
                {"reference_date", spec.reference_date}};
    for (const auto& [c, d] : spec.density_per_km2) m.config["density." + std::string(to_string(c))] = num(d);
    auto files = present_layers(out);
    files.push_back("oracle.json");
    m.outputs = hashes(out, files);
    write_manifest(out, m);
    log::info("synth: wrote ", files.size(), " files to ", out.string());
}

void stage_ingest(const RunConfig& config) {
    ensure_dir(config.out_dir);
    CityDataset ds = load_layers(config);
    const std::size_t raw = ds.listings.size();
    auto listings = filter_listings(ds.listings, filter_rules(config, ds.listings));
    const std::size_t kept = listings.size();
    const BlockIndex index(ds.blocks);
    const auto log_out = assign_ego_places(listings, index);
    write_listings(config.out_dir / "listings.csv", listings);
    {
        std::ofstream out(config.out_dir / "ego_places.csv", std::ios::binary);
        csv::Writer w(out);
        w.row({"id", "block_id"});
        for (const auto& l : listings) w.row({l.id, *l.ego_place_id});
    }
    {
        std::ofstream out(config.out_dir / "excluded.csv", std::ios::binary);
        csv::Writer w(out);
        w.row({"id", "reason"});
        for (std::size_t i = 0; i < log_out.excluded_ids.size(); ++i)
            w.row({log_out.excluded_ids[i], log_out.reasons[i]});
    }
    log::info("ingest: ", raw, " listings, ", kept, " after filtering, ", listings.size(), " assigned");
    Manifest m;
    m.stage = "ingest";
    m.config = stage_config(config, {"reference_date", "max_age_days"});
    m.inputs = hashes(config.data_dir, present_layers(config.data_dir));
    m.outputs = hashes(config.out_dir, {"listings.csv", "ego_places.csv", "excluded.csv"});
    write_manifest(config.out_dir, m);
}

void stage_features(const RunConfig& config) {
    ensure_dir(config.out_dir);
    CityDataset ds = load_layers(config);
    const FeatureTable f = compute_block_features(ds, feature_config(config));
    f.write_csv(config.out_dir / "place_features.csv");
    f.write_schema(config.out_dir / "place_features.schema.csv");
    Manifest m;
    m.stage = "features";
    m.config = stage_config(config, {"walk.", "egohood_radius_m"});
    m.inputs = hashes(config.data_dir, present_layers(config.data_dir));
    m.outputs = hashes(config.out_dir, {"place_features.csv", "place_features.schema.csv"});
    write_manifest(config.out_dir, m);
}

void stage_egohood(const RunConfig& config) {
    require_fresh(config.out_dir, "features", {"place_features.csv"});
    require_fresh(config.out_dir, "ingest", {"listings.csv", "ego_places.csv"});
    const auto blocks = load_sorted_blocks(config, nullptr);
    const FeatureTable f = FeatureTable::read_csv(config.out_dir / "place_features.csv");
    if (f.row_ids().size() != blocks.size()) throw StaleArtifactError("place_features.csv does not match blocks; rerun `egocast features`");
    const FeatureTable e = egohood_features(row_normalize(build_contiguity(blocks, config.egohood_radius_m)), f);
    e.write_csv(config.out_dir / "egohood_features.csv");
    const auto listings = read_assigned_listings(config.out_dir);
    const DesignMatrix dm = assemble_design_matrix(listings, f, e);
    dm.write_csv(config.out_dir / "design.csv");
    dm.write_targets(config.out_dir / "targets.csv");
    log::info("egohood: design matrix ", dm.rows(), " x ", dm.cols());
    Manifest m;
    m.stage = "egohood";
    m.config = stage_config(config, {"egohood_radius_m"});
    m.inputs = hashes(config.out_dir, {"place_features.csv", "listings.csv", "ego_places.csv"});
    m.inputs["blocks.geojson"] = sha256_file(config.data_dir / "blocks.geojson");
    m.outputs = hashes(config.out_dir, {"egohood_features.csv", "design.csv", "targets.csv"});
    write_manifest(config.out_dir, m);
}

void stage_folds(const RunConfig& config) {
    require_fresh(config.out_dir, "egohood", {"design.csv", "targets.csv"});
    CityDataset ds;
    load_sorted_blocks(config, &ds);
    const DesignMatrix dm = DesignMatrix::read_csv(config.out_dir / "design.csv", config.out_dir / "targets.csv");
    DiscardStats stats;
    const FoldAssignment folds = build_folds(ds, dm, config, &stats);
    std::vector<std::string> ids;
    for (const auto& b : ds.blocks) ids.push_back(b.id);
    folds.write_csv(config.out_dir / "folds.csv", ids);
    const auto violations = verify_folds(folds, ds.blocks, config.egohood_radius_m);
    if (!violations.empty()) throw Error("fold constraints violated " + std::to_string(violations.size()) + " times");
    Manifest m;
    m.stage = "folds";
    m.config = stage_config(config, {"seed", "tile_side_m", "egohood_radius_m"});
    m.inputs = hashes(config.out_dir, {"design.csv", "targets.csv"});
    m.inputs["blocks.geojson"] = sha256_file(config.data_dir / "blocks.geojson");
    m.outputs = hashes(config.out_dir, {"folds.csv"});
    write_manifest(config.out_dir, m);
}

void stage_train(const RunConfig& config) {
    require_fresh(config.out_dir, "egohood", {"design.csv", "targets.csv"});
    require_fresh(config.out_dir, "folds", {"folds.csv"});
    CityDataset ds;
    load_sorted_blocks(config, &ds);
    std::vector<std::string> ids;
    for (const auto& b : ds.blocks) ids.push_back(b.id);
    const DesignMatrix dm = DesignMatrix::read_csv(config.out_dir / "design.csv", config.out_dir / "targets.csv");
    const FoldAssignment folds = FoldAssignment::read_csv(config.out_dir / "folds.csv", ids);
    gbt::TrainConfig tc = config.train;
    tc.seed = config.seed;
    tc.threads = config.threads;
    const VariantRun run = run_variant(dm, folds, config.variant, tc);

    const fs::path vdir = variant_dir(config, config.variant);
    ensure_dir(vdir);
    std::vector<std::string> files;
    for (int r = 0; r < kFolds; ++r) {
        gbt::save_model(run.models[static_cast<std::size_t>(r)], vdir / model_file(r));
        files.push_back(model_file(r));
    }
    write_predictions(vdir / "predictions.csv", run.holdout);

    std::vector<DesignColumn> cols;
    for (std::size_t c : run.columns) cols.push_back(dm.columns[c]);
    const auto coarse = column_groups(cols, true);
    const auto fine = column_groups(cols, false);
    const auto all = concatenated(run.models);
    write_importance(vdir / "importance.csv", feature_importance(all, &fine));

    // Grouped shares: gain and mean |contribution| over hold-out rows.
    std::map<std::string, double> gain_coarse = feature_importance(all, &coarse).group_share;
    std::map<std::string, double> gain_fine = feature_importance(all, &fine).group_share;
    std::vector<ContributionReport> reports;
    const DesignMatrix x = dm.select(run.columns);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < x.rows(); ++i) row_of[x.listing_ids[i]] = i;
    for (int r = 0; r < kFolds; ++r)
        for (const auto& id : run.holdout[static_cast<std::size_t>(r)].ids)
            reports.push_back(path_contributions(run.models[static_cast<std::size_t>(r)], x.row(row_of.at(id)), 0));
    const auto contrib_coarse = contribution_group_shares(reports, coarse);
    const auto contrib_fine = contribution_group_shares(reports, fine);
    {
        std::ofstream out(vdir / "importance_groups.csv", std::ios::binary);
        csv::Writer w(out);
        w.row({"group", "gain_share", "contribution_share"});
        for (const auto* pair : {&gain_coarse, &gain_fine}) {
            const auto& contrib = pair == &gain_coarse ? contrib_coarse : contrib_fine;
            for (const auto& [g, share] : *pair) {
                if (pair == &gain_fine && g == "property") continue;
                w.row({g, num(share), num(contrib.at(g))});
            }
        }
    }
    files.push_back("predictions.csv");
    files.push_back("importance.csv");
    files.push_back("importance_groups.csv");
    Manifest m;
    m.stage = "train";
    m.config = stage_config(config, {"seed", "variant", "learning_rate", "lambda", "alpha", "min_child_weight",
                                     "max_depth", "n_estimators", "early_stopping_rounds", "gamma", "base_score"});
    m.inputs = hashes(config.out_dir, {"design.csv", "targets.csv", "folds.csv"});
    m.outputs = hashes(vdir, files);
    write_manifest(vdir, m);
    log::info("train: variant ", to_string(config.variant), " pooled hold-out MAE ", run.report.pooled_mae,
              ", MdAPE ", run.report.pooled_mdape, "%");
}

std::string stage_evaluate(const RunConfig& config) {
    std::vector<std::pair<std::string, RunReport>> rows;
    std::ostringstream detail;
    std::ofstream metrics(config.out_dir / "metrics.csv", std::ios::binary);
    if (!metrics) throw Error("cannot write " + (config.out_dir / "metrics.csv").string());
    csv::Writer w(metrics);
    w.row({"variant", "rotation", "n", "mae", "mdape"});
    Manifest m;
    m.stage = "evaluate";
    for (Variant v : kVariants) {
        const fs::path vdir = variant_dir(config, v);
        if (!fs::exists(manifest_path(vdir, "train"))) continue;
        require_fresh(vdir, "train", {"predictions.csv", "importance_groups.csv"});
        const auto preds = read_predictions(vdir / "predictions.csv");
        const RunReport rep = evaluate_run(preds);
        for (std::size_t r = 0; r < rep.rotation_mae.size(); ++r)
            w.row({std::string(to_string(v)), std::to_string(r), std::to_string(rep.rotation_count[r]),
                   num(rep.rotation_mae[r]), num(rep.rotation_mdape[r])});
        w.row({std::string(to_string(v)), "pooled", std::to_string(rep.pooled_count), num(rep.pooled_mae),
               num(rep.pooled_mdape)});
        rows.emplace_back(std::string(variant_label(v)), rep);

        detail << "\n" << variant_label(v) << " grouped importance (gain share, contribution share)\n";
        const auto t = csv::Table::read(vdir / "importance_groups.csv");
        for (std::size_t i = 0; i < t.rows(); ++i) {
            char line[128];
            std::snprintf(line, sizeof(line), "  %-14s %7.3f %7.3f\n", t.row(i)[0].c_str(),
                          csv::parse_double(t.row(i)[1]).value_or(0.0), csv::parse_double(t.row(i)[2]).value_or(0.0));
            detail << line;
        }
        m.inputs[std::string(to_string(v)) + "/predictions.csv"] = sha256_file(vdir / "predictions.csv");
    }
    if (rows.empty()) throw StaleArtifactError("no trained variant in " + config.out_dir.string() + "; run `egocast train` first");
    metrics.close();
    const std::string report = format_comparison(rows) + detail.str();
    {
        std::ofstream out(config.out_dir / "report.txt", std::ios::binary);
        out << report;
    }
    m.outputs = hashes(config.out_dir, {"report.txt", "metrics.csv"});
    write_manifest(config.out_dir, m);
    return report;
}

void stage_nowcast(const RunConfig& config, const fs::path& listings_path, const fs::path& output) {
    require_fresh(config.out_dir, "features", {"place_features.csv"});
    require_fresh(config.out_dir, "egohood", {"egohood_features.csv", "design.csv"});
    const Trained t = load_trained(config, config.variant);
    const auto blocks = load_sorted_blocks(config, nullptr);
    auto listings = load_listings(listings_path);
    const BlockIndex index(blocks);
    assign_ego_places(listings, index);
    const FeatureTable f = FeatureTable::read_csv(config.out_dir / "place_features.csv");
    const FeatureTable e = FeatureTable::read_csv(config.out_dir / "egohood_features.csv");
    const DesignMatrix dm = assemble_design_matrix(listings, f, e);
    const DesignMatrix x = dm.select(variant_columns(dm.columns, config.variant));
    std::ofstream out(output, std::ios::binary);
    if (!out) throw Error("cannot write " + output.string());
    csv::Writer w(out);
    w.row({"id", "prediction"});
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double sum = 0;
        for (const auto& model : t.models) sum += model.predict(x.row(i));
        w.row({x.listing_ids[i], num(sum / static_cast<double>(t.models.size()))});
    }
    log::info("nowcast: ", x.rows(), " predictions written to ", output.string());
}

std::string stage_explain(const RunConfig& config, const std::string& listing_id, std::optional<int> rotation) {
    const Trained t = load_trained(config, config.variant);
    require_fresh(config.out_dir, "folds", {"folds.csv"});
    const DesignMatrix x = t.design.select(variant_columns(t.design.columns, config.variant));
    auto it = std::find(x.listing_ids.begin(), x.listing_ids.end(), listing_id);
    if (it == x.listing_ids.end()) throw ValidationError("listing '" + listing_id + "' is not in the design matrix");
    const auto row = static_cast<std::size_t>(it - x.listing_ids.begin());

    int r = 0;
    if (rotation) {
        r = *rotation;
        rotate(r);
    } else {
        CityDataset ds;
        load_sorted_blocks(config, &ds);
        std::vector<std::string> ids;
        for (const auto& b : ds.blocks) ids.push_back(b.id);
        const FoldAssignment folds = FoldAssignment::read_csv(config.out_dir / "folds.csv", ids);
        for (int k = 0; k < kFolds; ++k)
            if (folds.role(k, row) == Role::Holdout) r = k;
    }
    const auto& model = t.models[static_cast<std::size_t>(r)];
    ContributionReport rep = path_contributions(model, x.row(row));
    rep.listing_id = listing_id;
    std::string text = format_explanation(rep, model, x.row(row));
    text += "  model: " + std::string(to_string(config.variant)) + " rotation " + std::to_string(r) + "\n";
    if (!is_missing(x.targets[row])) {
        char line[96];
        std::snprintf(line, sizeof(line), "  asked price %.0f EUR\n", x.targets[row]);
        text += line;
    }
    const fs::path path = variant_dir(config, config.variant) / ("explain_" + listing_id + ".txt");
    std::ofstream out(path, std::ios::binary);
    out << text;
    return text;
}

}  // namespace egocast

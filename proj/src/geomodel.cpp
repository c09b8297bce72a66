#include "egocast/geomodel.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "egocast/csv.hpp"
#include "egocast/error.hpp"
#include "egocast/log.hpp"

namespace egocast {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

const std::array<AttributeSpec, kPropertyAttributeCount>& property_schema() {
    using K = AttributeKind;
    static const std::array<AttributeSpec, kPropertyAttributeCount> schema{{
        {"square_meters", K::Numeric, {}},
        {"built_year", K::Numeric, {}},
        {"energy_class", K::Categorical, {"A", "B", "C", "D", "E", "F", "G"}},
        {"monthly_expenses", K::Numeric, {}},
        {"floor", K::Numeric, {}},
        {"heating_type", K::Categorical, {"autonomous", "centralized", "none"}},
        {"fixtures", K::Categorical, {"wood", "metal", "pvc"}},
        {"garden", K::Boolean, {}},
        {"furnished", K::Boolean, {}},
        {"terrace", K::Boolean, {}},
        {"sun_exposure", K::Categorical, {"north", "east", "south", "west"}},
        {"kitchen_type", K::Categorical, {"eat_in", "kitchenette", "open"}},
        {"spa", K::Boolean, {}},
        {"cellar", K::Boolean, {}},
        {"garage", K::Boolean, {}},
        {"fireplace", K::Boolean, {}},
        {"place_type", K::Categorical, {"central", "semi_central", "peripheral"}},
        {"property_class", K::Categorical, {"economy", "standard", "luxury"}},
        {"property_type", K::Categorical, {"full_ownership", "bare_ownership", "partial_ownership"}},
        {"property_taxes", K::Numeric, {}},
        {"condition", K::Categorical, {"new", "excellent", "good", "to_renovate"}},
        {"rooms", K::Numeric, {}},
        {"bathrooms", K::Numeric, {}},
        {"bedrooms", K::Numeric, {}},
        {"property_kind", K::Categorical,
         {"apartment", "attic", "detached", "semi_detached", "loft", "open_space", "other"}},
    }};
    return schema;
}

std::size_t property_attribute_index(std::string_view name) {
    const auto& schema = property_schema();
    for (std::size_t i = 0; i < schema.size(); ++i)
        if (schema[i].name == name) return i;
    throw ValidationError("unknown property attribute '" + std::string(name) + "'");
}

namespace {

constexpr std::array<std::string_view, kAmenityCategoryCount> kCategoryNames{
    "coffee",       "entertainment", "shopping", "restaurant_bar", "school",   "grocery",        "library",
    "park",         "metro_station", "rail_station", "airport",    "bus_stop", "industrial_area"};

constexpr std::array<std::string_view, kLandUseClassCount> kLandUseNames{"urban", "commercial", "green"};

std::string join(std::span<const std::string_view> items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i];
    }
    return out;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

fs::path require_file(const fs::path& path, std::string_view layer) {
    if (path.empty() || !fs::exists(path))
        throw LoadError("layer '" + std::string(layer) + "': file not found: " + path.string());
    return path;
}

json read_json(const fs::path& path, std::string_view layer) {
    std::ifstream in(require_file(path, layer));
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw LoadError("layer '" + std::string(layer) + "': invalid JSON: " + e.what());
    }
}

std::string row_context(const csv::Table& t, std::size_t row) {
    return t.source() + " row " + std::to_string(row + 1);
}

double cell_number(const csv::Table& t, std::size_t row, std::size_t col, bool required) {
    const auto& cell = t.row(row)[col];
    try {
        auto v = csv::parse_double(cell);
        if (!v) {
            if (required)
                throw LoadError(row_context(t, row) + ": empty value in column '" + t.header()[col] + "'");
            return kMissing;
        }
        return *v;
    } catch (const std::invalid_argument&) {
        throw LoadError(row_context(t, row) + ": column '" + t.header()[col] + "': not a number: '" +
                        cell + "'");
    }
}

Ring parse_ring(const json& coords, const std::string& ctx) {
    Ring ring;
    if (!coords.is_array()) throw LoadError(ctx + ": ring is not an array");
    for (const auto& pt : coords) {
        if (!pt.is_array() || pt.size() < 2 || !pt[0].is_number() || !pt[1].is_number())
            throw LoadError(ctx + ": malformed coordinate");
        ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
    if (ring.size() < 3) throw LoadError(ctx + ": ring has fewer than 3 vertices");
    return ring;
}

Polygon parse_geometry(const json& feature, const std::string& ctx) {
    if (!feature.contains("geometry") || !feature["geometry"].is_object())
        throw LoadError(ctx + ": missing geometry");
    const auto& geom = feature["geometry"];
    if (geom.value("type", "") != "Polygon") throw LoadError(ctx + ": geometry must be a Polygon");
    Polygon poly;
    for (const auto& r : geom.at("coordinates")) poly.rings.push_back(parse_ring(r, ctx));
    if (poly.empty()) throw LoadError(ctx + ": empty polygon");
    return poly;
}

json geometry_json(const Polygon& poly) {
    json rings = json::array();
    for (const auto& ring : poly.rings) {
        json r = json::array();
        for (const auto& p : ring) r.push_back({p.lon, p.lat});
        if (!ring.empty()) r.push_back({ring.front().lon, ring.front().lat});
        rings.push_back(std::move(r));
    }
    return {{"type", "Polygon"}, {"coordinates", std::move(rings)}};
}

LonLat vertex_mean(const Polygon& poly) {
    LonLat acc{0, 0};
    const auto& ring = poly.rings.front();
    for (const auto& p : ring) {
        acc.lon += p.lon;
        acc.lat += p.lat;
    }
    return {acc.lon / ring.size(), acc.lat / ring.size()};
}

LonLat area_centroid(const Polygon& poly) {
    const auto& ring = poly.rings.front();
    double a = 0, cx = 0, cy = 0;
    for (std::size_t i = 0, j = ring.size() - 1; i < ring.size(); j = i++) {
        const double cross = ring[j].lon * ring[i].lat - ring[i].lon * ring[j].lat;
        a += cross;
        cx += (ring[j].lon + ring[i].lon) * cross;
        cy += (ring[j].lat + ring[i].lat) * cross;
    }
    if (std::abs(a) < 1e-18) return vertex_mean(poly);
    return {cx / (3 * a), cy / (3 * a)};
}

std::int64_t count_field(const json& props, const char* name, const std::string& ctx) {
    if (!props.contains(name) || props[name].is_null()) return 0;
    if (!props[name].is_number()) throw LoadError(ctx + ": field '" + name + "' is not a number");
    const double v = props[name].get<double>();
    if (v < 0 || v != std::floor(v))
        throw LoadError(ctx + ": field '" + name + "' must be a non-negative integer");
    return static_cast<std::int64_t>(v);
}

double real_field(const json& props, const char* name, const std::string& ctx) {
    if (!props.contains(name) || props[name].is_null()) return 0.0;
    if (!props[name].is_number()) throw LoadError(ctx + ": field '" + name + "' is not a number");
    const double v = props[name].get<double>();
    if (v < 0 || !std::isfinite(v)) throw LoadError(ctx + ": field '" + name + "' must be non-negative");
    return v;
}

double parse_attribute(const csv::Table& t, std::size_t row, std::size_t col, const AttributeSpec& spec) {
    const std::string& cell = t.row(row)[col];
    if (cell.empty()) return kMissing;
    switch (spec.kind) {
        case AttributeKind::Numeric: return cell_number(t, row, col, false);
        case AttributeKind::Boolean: {
            const std::string v = lower(cell);
            if (v == "1" || v == "true" || v == "yes") return 1.0;
            if (v == "0" || v == "false" || v == "no") return 0.0;
            throw LoadError(row_context(t, row) + ": column '" + std::string(spec.name) +
                            "' is not a boolean: '" + cell + "'");
        }
        case AttributeKind::Categorical: {
            for (std::size_t k = 0; k < spec.levels.size(); ++k)
                if (spec.levels[k] == cell) return static_cast<double>(k);
            throw LoadError(row_context(t, row) + ": column '" + std::string(spec.name) + "' value '" +
                            cell + "' not in {" + join(spec.levels) + "}");
        }
    }
    return kMissing;
}

bool parse_flag(const csv::Table& t, std::size_t row, std::optional<std::size_t> col) {
    if (!col) return false;
    const std::string v = lower(t.row(row)[*col]);
    return v == "1" || v == "true" || v == "yes";
}

template <typename Writer>
void write_text(const fs::path& path, Writer&& w) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    w(out);
}

}  // namespace

std::string_view to_string(AmenityCategory c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

AmenityCategory parse_amenity_category(std::string_view s) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i)
        if (kCategoryNames[i] == s) return static_cast<AmenityCategory>(i);
    throw ValidationError("unknown amenity category '" + std::string(s) + "'; allowed: " +
                          join(kCategoryNames));
}

bool is_polygon_category(AmenityCategory c) {
    return c == AmenityCategory::Park || c == AmenityCategory::IndustrialArea;
}

std::string_view to_string(LandUseClass c) { return kLandUseNames[static_cast<std::size_t>(c)]; }

LandUseClass parse_land_use_class(std::string_view s) {
    for (std::size_t i = 0; i < kLandUseNames.size(); ++i)
        if (kLandUseNames[i] == s) return static_cast<LandUseClass>(i);
    throw ValidationError("unknown land-use klass '" + std::string(s) + "'; allowed: " + join(kLandUseNames));
}

std::optional<std::size_t> CityDataset::block_index(std::string_view id) const {
    auto it = std::lower_bound(blocks.begin(), blocks.end(), id,
                               [](const CensusBlock& b, std::string_view v) { return b.id < v; });
    if (it == blocks.end() || it->id != id) return std::nullopt;
    return static_cast<std::size_t>(it - blocks.begin());
}

DatasetPaths DatasetPaths::in_directory(const fs::path& dir) {
    DatasetPaths p;
    p.blocks = dir / "blocks.geojson";
    p.listings = dir / "listings.csv";
    p.amenities = dir / "amenities.csv";
    p.landuse = dir / "landuse.geojson";
    p.security = dir / "security.csv";
    p.roads = dir / "roads.csv";
    if (fs::exists(dir / "companies.csv")) p.companies = dir / "companies.csv";
    return p;
}

// ---------------------------------------------------------------------------
// Dates and WKT
// ---------------------------------------------------------------------------

std::chrono::sys_days parse_iso_date(std::string_view s) {
    int y = 0;
    unsigned m = 0, d = 0;
    auto bad = [&] { return ValidationError("invalid ISO-8601 date '" + std::string(s) + "'"); };
    if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw bad();
    if (std::from_chars(s.data(), s.data() + 4, y).ec != std::errc{}) throw bad();
    if (std::from_chars(s.data() + 5, s.data() + 7, m).ec != std::errc{}) throw bad();
    if (std::from_chars(s.data() + 8, s.data() + 10, d).ec != std::errc{}) throw bad();
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) throw bad();
    return std::chrono::sys_days{ymd};
}

std::string format_iso_date(std::chrono::sys_days d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

Polygon parse_wkt_polygon(std::string_view wkt) {
    auto bad = [&](const char* why) {
        return ValidationError(std::string("invalid WKT polygon (") + why + ")");
    };
    std::size_t pos = 0;
    auto skip_ws = [&] {
        while (pos < wkt.size() && std::isspace(static_cast<unsigned char>(wkt[pos]))) ++pos;
    };
    skip_ws();
    if (lower(wkt.substr(pos, 7)) != "polygon") throw bad("expected POLYGON");
    pos += 7;
    skip_ws();
    if (pos >= wkt.size() || wkt[pos] != '(') throw bad("expected '('");
    ++pos;
    Polygon poly;
    for (;;) {
        skip_ws();
        if (pos >= wkt.size() || wkt[pos] != '(') throw bad("expected ring");
        ++pos;
        Ring ring;
        for (;;) {
            double xy[2];
            for (double& v : xy) {
                skip_ws();
                auto res = std::from_chars(wkt.data() + pos, wkt.data() + wkt.size(), v);
                if (res.ec != std::errc{}) throw bad("expected number");
                pos = static_cast<std::size_t>(res.ptr - wkt.data());
            }
            ring.push_back({xy[0], xy[1]});
            skip_ws();
            if (pos < wkt.size() && wkt[pos] == ',') {
                ++pos;
                continue;
            }
            if (pos < wkt.size() && wkt[pos] == ')') {
                ++pos;
                break;
            }
            throw bad("unterminated ring");
        }
        if (ring.size() > 1 && ring.front() == ring.back()) ring.pop_back();
        if (ring.size() < 3) throw bad("ring has fewer than 3 vertices");
        poly.rings.push_back(std::move(ring));
        skip_ws();
        if (pos < wkt.size() && wkt[pos] == ',') {
            ++pos;
            continue;
        }
        if (pos < wkt.size() && wkt[pos] == ')') break;
        throw bad("unterminated polygon");
    }
    return poly;
}

std::string to_wkt(const Polygon& poly) {
    std::string out = "POLYGON (";
    for (std::size_t r = 0; r < poly.rings.size(); ++r) {
        if (r) out += ", ";
        out += '(';
        const auto& ring = poly.rings[r];
        for (std::size_t i = 0; i <= ring.size(); ++i) {
            const auto& p = ring[i % ring.size()];
            if (i) out += ", ";
            out += csv::format_double(p.lon) + ' ' + csv::format_double(p.lat);
        }
        out += ')';
    }
    out += ')';
    return out;
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

std::vector<CensusBlock> load_blocks(const fs::path& path) {
    const json doc = read_json(path, "blocks");
    if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features"))
        throw LoadError("layer 'blocks': expected a FeatureCollection");
    std::vector<CensusBlock> blocks;
    std::unordered_set<std::string> seen;
    std::size_t idx = 0;
    for (const auto& f : doc["features"]) {
        const std::string ctx = "layer 'blocks' feature " + std::to_string(idx++);
        const json props = f.value("properties", json::object());
        CensusBlock b;
        if (!props.contains("id") || !props["id"].is_string()) throw LoadError(ctx + ": missing string 'id'");
        b.id = props["id"].get<std::string>();
        if (!seen.insert(b.id).second) throw LoadError(ctx + ": duplicate block id '" + b.id + "'");
        b.polygon = parse_geometry(f, ctx);
        if (props.contains("centroid")) {
            const auto& c = props["centroid"];
            if (!c.is_array() || c.size() != 2) throw LoadError(ctx + ": centroid must be [lon, lat]");
            b.centroid = {c[0].get<double>(), c[1].get<double>()};
        } else {
            b.centroid = area_centroid(b.polygon);
        }
        const BBox box = bbox_of(b.polygon);
        if (!box.contains(b.centroid)) throw LoadError(ctx + ": centroid outside polygon bounding box");
        if (props.contains("area_m2")) {
            b.area_m2 = real_field(props, "area_m2", ctx);
        } else {
            b.area_m2 = polygon_area_m2(b.polygon, LocalProjection::for_bbox(box));
        }
        if (!(b.area_m2 > 0)) throw LoadError(ctx + ": area_m2 must be positive");
        b.population = count_field(props, "population", ctx);
        b.buildings_total = count_field(props, "buildings_total", ctx);
        b.buildings_residential = count_field(props, "buildings_residential", ctx);
        b.buildings_commercial = count_field(props, "buildings_commercial", ctx);
        if (props.contains("buildings_by_year_bracket")) {
            const auto& br = props["buildings_by_year_bracket"];
            if (!br.is_object()) throw LoadError(ctx + ": buildings_by_year_bracket must be an object");
            for (auto it = br.begin(); it != br.end(); ++it) {
                const json wrapper = {{it.key(), it.value()}};
                b.buildings_by_year_bracket[it.key()] = count_field(wrapper, it.key().c_str(), ctx);
            }
        }
        b.companies = count_field(props, "companies", ctx);
        b.company_avg_size = real_field(props, "company_avg_size", ctx);
        b.employees = count_field(props, "employees", ctx);
        b.shops = count_field(props, "shops", ctx);
        b.heavy_industries = count_field(props, "heavy_industries", ctx);
        b.avg_property_tax = real_field(props, "avg_property_tax", ctx);
        blocks.push_back(std::move(b));
    }
    std::sort(blocks.begin(), blocks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return blocks;
}

std::vector<std::string> listing_columns() {
    std::vector<std::string> cols{"id", "lon", "lat", "asked_price", "posted_date"};
    for (const auto& a : property_schema()) cols.emplace_back(a.name);
    cols.emplace_back("auction");
    cols.emplace_back("under_construction");
    return cols;
}

std::vector<Listing> load_listings(const fs::path& path) {
    const auto t = csv::Table::read(require_file(path, "listings"));
    const std::size_t c_id = t.require("id");
    const std::size_t c_lon = t.require("lon");
    const std::size_t c_lat = t.require("lat");
    const std::size_t c_price = t.require("asked_price");
    const std::size_t c_date = t.require("posted_date");
    const auto& schema = property_schema();
    std::array<std::size_t, kPropertyAttributeCount> c_attr{};
    for (std::size_t a = 0; a < schema.size(); ++a) c_attr[a] = t.require(schema[a].name);
    const auto c_auction = t.find("auction");
    const auto c_construction = t.find("under_construction");

    std::vector<Listing> out;
    out.reserve(t.rows());
    std::unordered_set<std::string> seen;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto& row = t.row(r);
        Listing l;
        l.id = row[c_id];
        if (l.id.empty()) throw LoadError(row_context(t, r) + ": empty id");
        if (!seen.insert(l.id).second) throw LoadError(row_context(t, r) + ": duplicate listing id '" + l.id + "'");
        const double lon = cell_number(t, r, c_lon, false);
        const double lat = cell_number(t, r, c_lat, false);
        if (!is_missing(lon) && !is_missing(lat)) l.location = LonLat{lon, lat};
        const double price = cell_number(t, r, c_price, false);
        if (!is_missing(price)) {
            if (!(price > 0)) throw LoadError(row_context(t, r) + ": asked_price must be positive");
            l.asked_price = price;
        }
        if (!row[c_date].empty()) {
            try {
                l.posted_date = parse_iso_date(row[c_date]);
            } catch (const ValidationError& e) {
                throw LoadError(row_context(t, r) + ": " + e.what());
            }
        }
        for (std::size_t a = 0; a < schema.size(); ++a) l.attributes[a] = parse_attribute(t, r, c_attr[a], schema[a]);
        l.auction = parse_flag(t, r, c_auction);
        l.under_construction = parse_flag(t, r, c_construction);
        out.push_back(std::move(l));
    }
    return out;
}

std::vector<Amenity> load_amenities(const fs::path& path) {
    const auto t = csv::Table::read(require_file(path, "amenities"));
    const std::size_t c_id = t.require("id");
    const std::size_t c_cat = t.require("category");
    const std::size_t c_lon = t.require("lon");
    const std::size_t c_lat = t.require("lat");
    const auto c_wkt = t.find("wkt_polygon");
    std::vector<Amenity> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto& row = t.row(r);
        Amenity a;
        a.id = row[c_id];
        try {
            a.category = parse_amenity_category(row[c_cat]);
        } catch (const ValidationError& e) {
            throw LoadError(row_context(t, r) + ": " + e.what());
        }
        const std::string wkt = c_wkt ? row[*c_wkt] : std::string{};
        if (!wkt.empty()) {
            try {
                a.polygon = parse_wkt_polygon(wkt);
            } catch (const ValidationError& e) {
                throw LoadError(row_context(t, r) + ": " + e.what());
            }
        }
        if (is_polygon_category(a.category) && !a.polygon)
            throw LoadError(row_context(t, r) + ": category '" + std::string(to_string(a.category)) +
                            "' requires wkt_polygon with at least 3 vertices");
        const double lon = cell_number(t, r, c_lon, !a.polygon);
        const double lat = cell_number(t, r, c_lat, !a.polygon);
        a.location = (is_missing(lon) || is_missing(lat)) ? vertex_mean(*a.polygon) : LonLat{lon, lat};
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<LandUsePolygon> load_landuse(const fs::path& path) {
    const json doc = read_json(path, "landuse");
    if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features"))
        throw LoadError("layer 'landuse': expected a FeatureCollection");
    std::vector<LandUsePolygon> out;
    std::size_t idx = 0;
    for (const auto& f : doc["features"]) {
        const std::string ctx = "layer 'landuse' feature " + std::to_string(idx++);
        const json props = f.value("properties", json::object());
        LandUsePolygon lu;
        try {
            lu.klass = parse_land_use_class(props.value("klass", ""));
        } catch (const ValidationError& e) {
            throw LoadError(ctx + ": " + e.what());
        }
        lu.polygon = parse_geometry(f, ctx);
        lu.area_m2 = polygon_area_m2(lu.polygon, LocalProjection::for_bbox(bbox_of(lu.polygon)));
        if (!(lu.area_m2 > 0)) throw LoadError(ctx + ": polygon has zero area");
        out.push_back(std::move(lu));
    }
    return out;
}

std::vector<SecurityPoint> load_security(const fs::path& path) {
    const auto t = csv::Table::read(require_file(path, "security"));
    const std::size_t c_lon = t.require("lon");
    const std::size_t c_lat = t.require("lat");
    const std::size_t c_score = t.require("score");
    std::vector<SecurityPoint> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        SecurityPoint p;
        p.location = {cell_number(t, r, c_lon, true), cell_number(t, r, c_lat, true)};
        p.score = cell_number(t, r, c_score, true);
        if (!(p.score > 0 && p.score < 10))
            throw LoadError(row_context(t, r) + ": security score must lie in (0, 10)");
        out.push_back(p);
    }
    return out;
}

std::vector<RoadEdge> load_roads(const fs::path& path) {
    const auto t = csv::Table::read(require_file(path, "roads"));
    const std::size_t c_a = t.require("node_a_id");
    const std::size_t c_b = t.require("node_b_id");
    const std::size_t c_lon_a = t.require("lon_a");
    const std::size_t c_lat_a = t.require("lat_a");
    const std::size_t c_lon_b = t.require("lon_b");
    const std::size_t c_lat_b = t.require("lat_b");
    const std::size_t c_len = t.require("length_m");
    std::vector<RoadEdge> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto& row = t.row(r);
        RoadEdge e;
        e.node_a = row[c_a];
        e.node_b = row[c_b];
        if (e.node_a.empty() || e.node_b.empty()) throw LoadError(row_context(t, r) + ": empty node id");
        e.a = {cell_number(t, r, c_lon_a, true), cell_number(t, r, c_lat_a, true)};
        e.b = {cell_number(t, r, c_lon_b, true), cell_number(t, r, c_lat_b, true)};
        e.length_m = cell_number(t, r, c_len, true);
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Company> load_companies(const fs::path& path) {
    const auto t = csv::Table::read(require_file(path, "companies"));
    const std::size_t c_lon = t.require("lon");
    const std::size_t c_lat = t.require("lat");
    const std::size_t c_ateco = t.require("ateco");
    std::vector<Company> out;
    out.reserve(t.rows());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        Company c;
        c.location = {cell_number(t, r, c_lon, true), cell_number(t, r, c_lat, true)};
        const double code = cell_number(t, r, c_ateco, true);
        if (code < 1 || code > 99 || code != std::floor(code))
            throw LoadError(row_context(t, r) + ": ateco must be a two-digit division code");
        c.ateco = static_cast<int>(code);
        out.push_back(c);
    }
    return out;
}

void finalize_dataset(CityDataset& ds) {
    std::sort(ds.blocks.begin(), ds.blocks.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    BBox box;
    for (const auto& b : ds.blocks) box.extend(bbox_of(b.polygon));
    ds.projection = LocalProjection::for_bbox(box);
}

CityDataset load_dataset(const DatasetPaths& paths) {
    CityDataset ds;
    ds.blocks = load_blocks(paths.blocks);
    ds.listings = load_listings(paths.listings);
    ds.amenities = load_amenities(paths.amenities);
    ds.landuse = load_landuse(paths.landuse);
    ds.security = load_security(paths.security);
    ds.roads = load_roads(paths.roads);
    if (!paths.companies.empty()) ds.companies = load_companies(paths.companies);

    std::unordered_set<std::string> amenity_ids;
    for (const auto& a : ds.amenities)
        if (!amenity_ids.insert(a.id).second) throw LoadError("layer 'amenities': duplicate id '" + a.id + "'");
    for (const auto& l : ds.listings)
        if (l.ego_place_id && !ds.block_index(*l.ego_place_id))
            throw LoadError("layer 'listings': listing '" + l.id + "' references unknown block");
    finalize_dataset(ds);
    log::info("loaded dataset: ", ds.blocks.size(), " blocks, ", ds.listings.size(), " listings, ",
              ds.amenities.size(), " amenities, ", ds.roads.size(), " road edges");
    return ds;
}

// ---------------------------------------------------------------------------
// Writers
// ---------------------------------------------------------------------------

void write_blocks(const fs::path& path, const std::vector<CensusBlock>& blocks) {
    json features = json::array();
    for (const auto& b : blocks) {
        json brackets = json::object();
        for (const auto& [k, v] : b.buildings_by_year_bracket) brackets[k] = v;
        json props = {{"id", b.id},
                      {"centroid", {b.centroid.lon, b.centroid.lat}},
                      {"area_m2", b.area_m2},
                      {"population", b.population},
                      {"buildings_total", b.buildings_total},
                      {"buildings_residential", b.buildings_residential},
                      {"buildings_commercial", b.buildings_commercial},
                      {"buildings_by_year_bracket", std::move(brackets)},
                      {"companies", b.companies},
                      {"company_avg_size", b.company_avg_size},
                      {"employees", b.employees},
                      {"shops", b.shops},
                      {"heavy_industries", b.heavy_industries},
                      {"avg_property_tax", b.avg_property_tax}};
        features.push_back({{"type", "Feature"}, {"properties", std::move(props)}, {"geometry", geometry_json(b.polygon)}});
    }
    const json doc = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
    write_text(path, [&](std::ostream& out) { out << doc.dump() << '\n'; });
}

std::string format_attribute(std::size_t attr, double value) {
    if (is_missing(value)) return {};
    const auto& spec = property_schema()[attr];
    switch (spec.kind) {
        case AttributeKind::Numeric: return csv::format_double(value);
        case AttributeKind::Boolean: return value != 0 ? "1" : "0";
        case AttributeKind::Categorical: return std::string(spec.levels.at(static_cast<std::size_t>(value)));
    }
    return {};
}

void write_listings(const fs::path& path, const std::vector<Listing>& listings) {
    write_text(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row(listing_columns());
        for (const auto& l : listings) {
            std::vector<std::string> row{l.id,
                                         l.location ? csv::format_double(l.location->lon) : "",
                                         l.location ? csv::format_double(l.location->lat) : "",
                                         l.asked_price ? csv::format_double(*l.asked_price) : "",
                                         l.posted_date ? format_iso_date(*l.posted_date) : ""};
            for (std::size_t a = 0; a < kPropertyAttributeCount; ++a) row.push_back(format_attribute(a, l.attributes[a]));
            row.emplace_back(l.auction ? "1" : "0");
            row.emplace_back(l.under_construction ? "1" : "0");
            w.row(row);
        }
    });
}

void write_amenities(const fs::path& path, const std::vector<Amenity>& amenities) {
    write_text(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"id", "category", "lon", "lat", "wkt_polygon"});
        for (const auto& a : amenities)
            w.row({a.id, std::string(to_string(a.category)), csv::format_double(a.location.lon),
                   csv::format_double(a.location.lat), a.polygon ? to_wkt(*a.polygon) : ""});
    });
}

void write_landuse(const fs::path& path, const std::vector<LandUsePolygon>& landuse) {
    json features = json::array();
    for (const auto& lu : landuse)
        features.push_back({{"type", "Feature"},
                            {"properties", {{"klass", std::string(to_string(lu.klass))}}},
                            {"geometry", geometry_json(lu.polygon)}});
    const json doc = {{"type", "FeatureCollection"}, {"features", std::move(features)}};
    write_text(path, [&](std::ostream& out) { out << doc.dump() << '\n'; });
}

void write_security(const fs::path& path, const std::vector<SecurityPoint>& points) {
    write_text(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"lon", "lat", "score"});
        for (const auto& p : points)
            w.row({csv::format_double(p.location.lon), csv::format_double(p.location.lat), csv::format_double(p.score)});
    });
}

void write_roads(const fs::path& path, const std::vector<RoadEdge>& roads) {
    write_text(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"node_a_id", "node_b_id", "lon_a", "lat_a", "lon_b", "lat_b", "length_m"});
        for (const auto& e : roads)
            w.row({e.node_a, e.node_b, csv::format_double(e.a.lon), csv::format_double(e.a.lat),
                   csv::format_double(e.b.lon), csv::format_double(e.b.lat), csv::format_double(e.length_m)});
    });
}

void write_companies(const fs::path& path, const std::vector<Company>& companies) {
    write_text(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"lon", "lat", "ateco"});
        for (const auto& c : companies)
            w.row({csv::format_double(c.location.lon), csv::format_double(c.location.lat), std::to_string(c.ateco)});
    });
}

void write_dataset(const DatasetPaths& paths, const CityDataset& ds) {
    write_blocks(paths.blocks, ds.blocks);
    write_listings(paths.listings, ds.listings);
    write_amenities(paths.amenities, ds.amenities);
    write_landuse(paths.landuse, ds.landuse);
    write_security(paths.security, ds.security);
    write_roads(paths.roads, ds.roads);
    if (!paths.companies.empty()) write_companies(paths.companies, ds.companies);
}

// ---------------------------------------------------------------------------
// Filtering and assignment
// ---------------------------------------------------------------------------

std::vector<Listing> filter_listings(const std::vector<Listing>& listings, const FilterRules& rules) {
    static const std::size_t kind_attr = property_attribute_index("property_kind");
    const auto& kinds = property_schema()[kind_attr].levels;
    std::vector<Listing> out;
    for (const auto& l : listings) {
        if (!l.location || !l.asked_price || !(*l.asked_price > 0)) continue;
        const double kind = l.attributes[kind_attr];
        if (is_missing(kind) || !rules.allowed_kinds.contains(std::string(kinds[static_cast<std::size_t>(kind)])))
            continue;
        if (!l.posted_date) continue;
        const auto age = (rules.reference_date - *l.posted_date).count();
        if (age < 0 || age > rules.max_age_days) continue;
        if (rules.exclude_auctions && l.auction) continue;
        if (rules.exclude_under_construction && l.under_construction) continue;
        out.push_back(l);
    }
    return out;
}

BlockIndex::BlockIndex(const std::vector<CensusBlock>& blocks, double fallback_m)
    : blocks_(&blocks), fallback_m_(fallback_m) {
    boxes_.reserve(blocks.size());
    for (const auto& b : blocks) {
        boxes_.push_back(bbox_of(b.polygon));
        extent_.extend(boxes_.back());
    }
    if (!extent_.valid()) return;
    const int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(blocks.size()))));
    nx_ = side;
    ny_ = side;
    cells_.assign(static_cast<std::size_t>(nx_ * ny_), {});
    const double w = std::max(extent_.max_lon - extent_.min_lon, 1e-12);
    const double h = std::max(extent_.max_lat - extent_.min_lat, 1e-12);
    auto cx = [&](double lon) { return std::clamp(static_cast<int>((lon - extent_.min_lon) / w * nx_), 0, nx_ - 1); };
    auto cy = [&](double lat) { return std::clamp(static_cast<int>((lat - extent_.min_lat) / h * ny_), 0, ny_ - 1); };
    for (std::size_t i = 0; i < boxes_.size(); ++i) {
        const auto& bb = boxes_[i];
        for (int y = cy(bb.min_lat); y <= cy(bb.max_lat); ++y)
            for (int x = cx(bb.min_lon); x <= cx(bb.max_lon); ++x)
                cells_[static_cast<std::size_t>(y * nx_ + x)].push_back(i);
    }
}

std::vector<std::size_t> BlockIndex::candidates(LonLat p) const {
    if (!extent_.valid() || !extent_.contains(p)) return {};
    const double w = std::max(extent_.max_lon - extent_.min_lon, 1e-12);
    const double h = std::max(extent_.max_lat - extent_.min_lat, 1e-12);
    const double fx = (p.lon - extent_.min_lon) / w * nx_;
    const double fy = (p.lat - extent_.min_lat) / h * ny_;
    std::vector<std::size_t> out;
    // Points on a cell edge may belong to blocks registered in the neighbouring cell.
    const int x0 = std::clamp(static_cast<int>(std::floor(fx - 1e-9)), 0, nx_ - 1);
    const int x1 = std::clamp(static_cast<int>(std::floor(fx + 1e-9)), 0, nx_ - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(fy - 1e-9)), 0, ny_ - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor(fy + 1e-9)), 0, ny_ - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const auto& cell = cells_[static_cast<std::size_t>(y * nx_ + x)];
            out.insert(out.end(), cell.begin(), cell.end());
        }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::optional<std::size_t> BlockIndex::containing(LonLat p) const {
    // Boundary points may hit several blocks; the smallest id wins.
    std::optional<std::size_t> hit;
    const auto& blocks = *blocks_;
    for (std::size_t i : candidates(p)) {
        if (!boxes_[i].contains(p)) continue;
        if (hit && blocks[i].id >= blocks[*hit].id) continue;
        if (egocast::locate(p, blocks[i].polygon) != Containment::Outside) hit = i;
    }
    return hit;
}

std::optional<std::size_t> BlockIndex::locate(LonLat p) const {
    if (auto hit = containing(p)) return hit;
    std::optional<std::size_t> best;
    double best_d = fallback_m_;
    const auto& blocks = *blocks_;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const double d = haversine_m(p, blocks[i].centroid);
        if (d <= best_d && (!best || d < best_d)) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

std::string assign_ego_place(const Listing& listing, const BlockIndex& index) {
    if (!listing.location) throw ValidationError("listing '" + listing.id + "' has no coordinates");
    auto hit = index.locate(*listing.location);
    if (!hit)
        throw ValidationError("listing '" + listing.id + "' is unassignable: outside all blocks and beyond " +
                              std::to_string(static_cast<int>(kEgoPlaceFallbackM)) + " m of any centroid");
    return index.blocks()[*hit].id;
}

AssignmentLog assign_ego_places(std::vector<Listing>& listings, const BlockIndex& index) {
    AssignmentLog log_out;
    std::vector<Listing> kept;
    kept.reserve(listings.size());
    for (auto& l : listings) {
        try {
            l.ego_place_id = assign_ego_place(l, index);
            kept.push_back(std::move(l));
        } catch (const ValidationError& e) {
            log::warn(e.what());
            log_out.excluded_ids.push_back(l.id);
            log_out.reasons.emplace_back(e.what());
        }
    }
    listings = std::move(kept);
    return log_out;
}

}  // namespace egocast

#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "egocast/geo.hpp"

namespace egocast {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Census block: the ego-place unit. Counts are non-negative by construction.
struct CensusBlock {
    std::string id;
    Polygon polygon;
    LonLat centroid;
    double area_m2 = 0.0;
    std::int64_t population = 0;
    std::int64_t buildings_total = 0;
    std::int64_t buildings_residential = 0;
    std::int64_t buildings_commercial = 0;
    std::map<std::string, std::int64_t> buildings_by_year_bracket;
    std::int64_t companies = 0;
    double company_avg_size = 0.0;
    std::int64_t employees = 0;
    std::int64_t shops = 0;
    std::int64_t heavy_industries = 0;
    double avg_property_tax = 0.0;
};

enum class AttributeKind { Numeric, Boolean, Categorical };

struct AttributeSpec {
    std::string_view name;
    AttributeKind kind;
    std::vector<std::string_view> levels;  // categorical only
};

inline constexpr std::size_t kPropertyAttributeCount = 25;

/// The 25 listing attributes in canonical column order.
const std::array<AttributeSpec, kPropertyAttributeCount>& property_schema();

/// Index of a property attribute by name; throws ValidationError if unknown.
std::size_t property_attribute_index(std::string_view name);

/// Raw attribute values in schema order. Numeric and boolean attributes hold
/// their value, categorical ones the level index; kMissing when absent.
using PropertyAttributes = std::array<double, kPropertyAttributeCount>;

struct Listing {
    std::string id;
    std::optional<LonLat> location;
    std::optional<double> asked_price;
    std::optional<std::chrono::sys_days> posted_date;
    PropertyAttributes attributes{};
    bool auction = false;
    bool under_construction = false;
    std::optional<std::string> ego_place_id;
};

enum class AmenityCategory {
    Coffee,
    Entertainment,
    Shopping,
    RestaurantBar,
    School,
    Grocery,
    Library,
    Park,
    MetroStation,
    RailStation,
    Airport,
    BusStop,
    IndustrialArea,
};

inline constexpr std::size_t kAmenityCategoryCount = 13;

std::string_view to_string(AmenityCategory c);
/// Throws ValidationError listing the allowed values.
AmenityCategory parse_amenity_category(std::string_view s);
/// Categories stored as polygons (parks, industrial areas).
bool is_polygon_category(AmenityCategory c);

struct Amenity {
    std::string id;
    AmenityCategory category = AmenityCategory::Coffee;
    LonLat location;                 // point, or polygon vertex mean
    std::optional<Polygon> polygon;  // polygon categories only
};

enum class LandUseClass { Urban, Commercial, Green };
inline constexpr std::size_t kLandUseClassCount = 3;

std::string_view to_string(LandUseClass c);
LandUseClass parse_land_use_class(std::string_view s);

struct LandUsePolygon {
    LandUseClass klass = LandUseClass::Urban;
    Polygon polygon;
    double area_m2 = 0.0;
};

struct SecurityPoint {
    LonLat location;
    double score = 0.0;  // open interval (0, 10)
};

struct RoadEdge {
    std::string node_a;
    std::string node_b;
    LonLat a;
    LonLat b;
    double length_m = 0.0;
};

/// Company record tagged with its ATECO two-digit division.
struct Company {
    LonLat location;
    int ateco = 0;
};

/// All input layers of one city. Blocks are sorted by id. Immutable once
/// loaded, so it can be shared across threads.
struct CityDataset {
    std::vector<CensusBlock> blocks;
    std::vector<Listing> listings;
    std::vector<Amenity> amenities;
    std::vector<LandUsePolygon> landuse;
    std::vector<SecurityPoint> security;
    std::vector<RoadEdge> roads;
    std::vector<Company> companies;
    LocalProjection projection;

    std::optional<std::size_t> block_index(std::string_view id) const;
};

struct DatasetPaths {
    std::filesystem::path blocks;
    std::filesystem::path listings;
    std::filesystem::path amenities;
    std::filesystem::path landuse;
    std::filesystem::path security;
    std::filesystem::path roads;
    std::filesystem::path companies;  // optional layer, may be empty

    /// Conventional file names inside one directory.
    static DatasetPaths in_directory(const std::filesystem::path& dir);
};

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

std::vector<CensusBlock> load_blocks(const std::filesystem::path& path);
std::vector<Listing> load_listings(const std::filesystem::path& path);
std::vector<Amenity> load_amenities(const std::filesystem::path& path);
std::vector<LandUsePolygon> load_landuse(const std::filesystem::path& path);
std::vector<SecurityPoint> load_security(const std::filesystem::path& path);
std::vector<RoadEdge> load_roads(const std::filesystem::path& path);
std::vector<Company> load_companies(const std::filesystem::path& path);

/// Loads and validates every layer. Errors name the layer and the offending
/// row or feature index.
CityDataset load_dataset(const DatasetPaths& paths);

/// Recomputes the projection from the blocks' extent and sorts blocks by id.
void finalize_dataset(CityDataset& ds);

/// Parses "POLYGON ((lon lat, ...), (...))".
Polygon parse_wkt_polygon(std::string_view wkt);
std::string to_wkt(const Polygon& poly);

std::chrono::sys_days parse_iso_date(std::string_view s);
std::string format_iso_date(std::chrono::sys_days d);

// ---------------------------------------------------------------------------
// Writers (used by the synthetic generator and the pipeline)
// ---------------------------------------------------------------------------

void write_blocks(const std::filesystem::path& path, const std::vector<CensusBlock>& blocks);
void write_listings(const std::filesystem::path& path, const std::vector<Listing>& listings);
void write_amenities(const std::filesystem::path& path, const std::vector<Amenity>& amenities);
void write_landuse(const std::filesystem::path& path, const std::vector<LandUsePolygon>& landuse);
void write_security(const std::filesystem::path& path, const std::vector<SecurityPoint>& points);
void write_roads(const std::filesystem::path& path, const std::vector<RoadEdge>& roads);
void write_companies(const std::filesystem::path& path, const std::vector<Company>& companies);
void write_dataset(const DatasetPaths& paths, const CityDataset& ds);

/// Header of listings.csv.
std::vector<std::string> listing_columns();
std::string format_attribute(std::size_t attr, double value);

// ---------------------------------------------------------------------------
// Filtering and ego-place assignment
// ---------------------------------------------------------------------------

struct FilterRules {
    std::set<std::string> allowed_kinds{"apartment", "attic", "detached", "semi_detached", "loft",
                                        "open_space"};
    int max_age_days = 365;
    std::chrono::sys_days reference_date{};
    bool exclude_auctions = true;
    bool exclude_under_construction = true;
};

/// Keeps listings with coordinates, a positive price, an allowed kind and a
/// posting date inside the window. Order preserved.
std::vector<Listing> filter_listings(const std::vector<Listing>& listings, const FilterRules& rules);

inline constexpr double kEgoPlaceFallbackM = 250.0;

/// Point-in-polygon index over census blocks (uniform grid of bounding boxes).
class BlockIndex {
public:
    explicit BlockIndex(const std::vector<CensusBlock>& blocks, double fallback_m = kEgoPlaceFallbackM);

    /// Index of the containing block. Boundary ties go to the smallest id;
    /// otherwise the nearest centroid within the fallback radius.
    std::optional<std::size_t> locate(LonLat p) const;

    /// Index of the block whose polygon contains p (boundary included), no fallback.
    std::optional<std::size_t> containing(LonLat p) const;

    const std::vector<CensusBlock>& blocks() const { return *blocks_; }

private:
    std::vector<std::size_t> candidates(LonLat p) const;

    const std::vector<CensusBlock>* blocks_;
    double fallback_m_;
    BBox extent_;
    int nx_ = 1;
    int ny_ = 1;
    std::vector<BBox> boxes_;
    std::vector<std::vector<std::size_t>> cells_;
};

/// Block id for a listing; throws ValidationError when unassignable.
std::string assign_ego_place(const Listing& listing, const BlockIndex& index);

struct AssignmentLog {
    std::vector<std::string> excluded_ids;
    std::vector<std::string> reasons;
};

/// Assigns ego-places in place; unassignable listings are removed and logged.
AssignmentLog assign_ego_places(std::vector<Listing>& listings, const BlockIndex& index);

}  // namespace egocast

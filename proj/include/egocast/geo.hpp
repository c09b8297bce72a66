#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace egocast {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kPi = 3.14159265358979323846;

/// Missing-value marker for real-valued features. Nothing else in the
/// feature and design tables is allowed to be non-finite.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return std::isnan(v); }

struct LonLat {
    double lon = 0.0;
    double lat = 0.0;
    friend bool operator==(const LonLat&, const LonLat&) = default;
};

/// Planar coordinates in meters.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Great-circle distance in meters (haversine).
double haversine_m(LonLat a, LonLat b);

/// A closed ring of vertices; the closing vertex is implicit.
using Ring = std::vector<LonLat>;

/// First ring is the outer boundary, the rest are holes.
struct Polygon {
    std::vector<Ring> rings;

    bool empty() const { return rings.empty() || rings.front().empty(); }
};

struct BBox {
    double min_lon = std::numeric_limits<double>::infinity();
    double min_lat = std::numeric_limits<double>::infinity();
    double max_lon = -std::numeric_limits<double>::infinity();
    double max_lat = -std::numeric_limits<double>::infinity();

    void extend(LonLat p);
    void extend(const BBox& other);
    bool contains(LonLat p) const;
    bool valid() const { return min_lon <= max_lon && min_lat <= max_lat; }
};

BBox bbox_of(const Polygon& poly);

enum class Containment { Outside, Boundary, Inside };

/// Even-odd containment test with explicit boundary detection.
/// Points within `tol` degrees of an edge are reported as Boundary.
Containment locate(LonLat p, const Polygon& poly, double tol = 1e-12);

/// Equirectangular projection around a reference latitude. Distortion is
/// well below a tenth of a percent across a city-sized extent.
class LocalProjection {
public:
    LocalProjection() = default;
    LocalProjection(LonLat origin, double ref_lat_deg);

    /// Origin at the bounding box's south-west corner, scaled at its mid latitude.
    static LocalProjection for_bbox(const BBox& box);

    Vec2 forward(LonLat p) const;
    LonLat inverse(Vec2 v) const;
    LonLat origin() const { return origin_; }

private:
    LonLat origin_{};
    double meters_per_deg_lon_ = kEarthRadiusM * kPi / 180.0;
    double meters_per_deg_lat_ = kEarthRadiusM * kPi / 180.0;
};

using PlanarRing = std::vector<Vec2>;

/// Signed shoelace area (counter-clockwise positive).
double signed_area(std::span<const Vec2> ring);

/// Area in square meters of a polygon (outer ring minus holes).
double polygon_area_m2(const Polygon& poly, const LocalProjection& proj);

/// Area of the intersection between a polygon and a disc, with the disc
/// approximated by a regular `segments`-gon inscribed in the circle.
double polygon_disc_intersection_area(const Polygon& poly, const LocalProjection& proj,
                                      Vec2 center, double radius_m, int segments = 128);

/// Distance in meters from a point to a polygon's boundary (any ring).
double distance_to_boundary_m(Vec2 p, const Polygon& poly, const LocalProjection& proj);

}  // namespace egocast

#include "egocast/geo.hpp"

#include <algorithm>

namespace egocast {

namespace {

constexpr double kDegToRad = kPi / 180.0;

bool on_segment(LonLat p, LonLat a, LonLat b, double tol) {
    const double cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    const double len = std::hypot(b.lon - a.lon, b.lat - a.lat);
    if (std::abs(cross) > tol * std::max(len, 1.0)) return false;
    return p.lon >= std::min(a.lon, b.lon) - tol && p.lon <= std::max(a.lon, b.lon) + tol &&
           p.lat >= std::min(a.lat, b.lat) - tol && p.lat <= std::max(a.lat, b.lat) + tol;
}

// Sutherland-Hodgman clip of `subject` against the convex counter-clockwise `clip`.
PlanarRing clip_convex(const PlanarRing& subject, const PlanarRing& clip) {
    PlanarRing out = subject;
    const std::size_t m = clip.size();
    for (std::size_t e = 0; e < m && !out.empty(); ++e) {
        const Vec2 a = clip[e];
        const Vec2 b = clip[(e + 1) % m];
        auto side = [&](Vec2 p) { return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x); };
        PlanarRing in = std::move(out);
        out.clear();
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Vec2 cur = in[i];
            const Vec2 prev = in[(i + in.size() - 1) % in.size()];
            const double sc = side(cur);
            const double sp = side(prev);
            if (sc >= 0) {
                if (sp < 0) {
                    const double t = sp / (sp - sc);
                    out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
                }
                out.push_back(cur);
            } else if (sp >= 0) {
                const double t = sp / (sp - sc);
                out.push_back({prev.x + t * (cur.x - prev.x), prev.y + t * (cur.y - prev.y)});
            }
        }
    }
    return out;
}

PlanarRing project_ring(const Ring& ring, const LocalProjection& proj) {
    PlanarRing out;
    out.reserve(ring.size());
    for (const auto& p : ring) out.push_back(proj.forward(p));
    if (out.size() > 1 && out.front() == out.back()) out.pop_back();
    return out;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return distance(p, {a.x + t * dx, a.y + t * dy});
}

}  // namespace

double haversine_m(LonLat a, LonLat b) {
    const double phi1 = a.lat * kDegToRad;
    const double phi2 = b.lat * kDegToRad;
    const double dphi = (b.lat - a.lat) * kDegToRad;
    const double dlambda = (b.lon - a.lon) * kDegToRad;
    const double s1 = std::sin(dphi / 2);
    const double s2 = std::sin(dlambda / 2);
    const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

void BBox::extend(LonLat p) {
    min_lon = std::min(min_lon, p.lon);
    min_lat = std::min(min_lat, p.lat);
    max_lon = std::max(max_lon, p.lon);
    max_lat = std::max(max_lat, p.lat);
}

void BBox::extend(const BBox& other) {
    if (!other.valid()) return;
    extend(LonLat{other.min_lon, other.min_lat});
    extend(LonLat{other.max_lon, other.max_lat});
}

bool BBox::contains(LonLat p) const {
    return p.lon >= min_lon && p.lon <= max_lon && p.lat >= min_lat && p.lat <= max_lat;
}

BBox bbox_of(const Polygon& poly) {
    BBox box;
    if (!poly.rings.empty())
        for (const auto& p : poly.rings.front()) box.extend(p);
    return box;
}

Containment locate(LonLat p, const Polygon& poly, double tol) {
    bool inside = false;
    for (const auto& ring : poly.rings) {
        const std::size_t n = ring.size();
        if (n < 3) continue;
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
            const LonLat a = ring[i];
            const LonLat b = ring[j];
            if (on_segment(p, a, b, tol)) return Containment::Boundary;
            if ((a.lat > p.lat) != (b.lat > p.lat)) {
                const double x = (b.lon - a.lon) * (p.lat - a.lat) / (b.lat - a.lat) + a.lon;
                if (p.lon < x) inside = !inside;
            }
        }
    }
    return inside ? Containment::Inside : Containment::Outside;
}

LocalProjection::LocalProjection(LonLat origin, double ref_lat_deg)
    : origin_(origin),
      meters_per_deg_lon_(kEarthRadiusM * kDegToRad * std::cos(ref_lat_deg * kDegToRad)),
      meters_per_deg_lat_(kEarthRadiusM * kDegToRad) {}

LocalProjection LocalProjection::for_bbox(const BBox& box) {
    if (!box.valid()) return {};
    return LocalProjection({box.min_lon, box.min_lat}, 0.5 * (box.min_lat + box.max_lat));
}

Vec2 LocalProjection::forward(LonLat p) const {
    return {(p.lon - origin_.lon) * meters_per_deg_lon_, (p.lat - origin_.lat) * meters_per_deg_lat_};
}

LonLat LocalProjection::inverse(Vec2 v) const {
    return {origin_.lon + v.x / meters_per_deg_lon_, origin_.lat + v.y / meters_per_deg_lat_};
}

double signed_area(std::span<const Vec2> ring) {
    const std::size_t n = ring.size();
    if (n < 3) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++)
        acc += (ring[j].x * ring[i].y) - (ring[i].x * ring[j].y);
    return 0.5 * acc;
}

double polygon_area_m2(const Polygon& poly, const LocalProjection& proj) {
    double area = 0.0;
    for (std::size_t r = 0; r < poly.rings.size(); ++r) {
        const double a = std::abs(signed_area(project_ring(poly.rings[r], proj)));
        area += r == 0 ? a : -a;
    }
    return std::max(area, 0.0);
}

double polygon_disc_intersection_area(const Polygon& poly, const LocalProjection& proj,
                                      Vec2 center, double radius_m, int segments) {
    PlanarRing disc;
    disc.reserve(static_cast<std::size_t>(segments));
    for (int k = 0; k < segments; ++k) {
        const double t = 2.0 * kPi * k / segments;
        disc.push_back({center.x + radius_m * std::cos(t), center.y + radius_m * std::sin(t)});
    }
    double area = 0.0;
    for (std::size_t r = 0; r < poly.rings.size(); ++r) {
        const double a = std::abs(signed_area(clip_convex(project_ring(poly.rings[r], proj), disc)));
        area += r == 0 ? a : -a;
    }
    return std::max(area, 0.0);
}

double distance_to_boundary_m(Vec2 p, const Polygon& poly, const LocalProjection& proj) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& ring : poly.rings) {
        const PlanarRing pr = project_ring(ring, proj);
        const std::size_t n = pr.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++)
            best = std::min(best, point_segment_distance(p, pr[j], pr[i]));
    }
    return best;
}

}  // namespace egocast

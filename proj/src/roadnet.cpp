#include "egocast/roadnet.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>

#include "egocast/error.hpp"

namespace egocast {

std::optional<NodeId> RoadGraph::find(std::string_view id) const {
    auto it = lookup_.find(std::string(id));
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

NodeId RoadGraph::require(std::string_view id) const {
    if (auto n = find(id)) return *n;
    throw ValidationError("unknown road node '" + std::string(id) + "'");
}

RoadGraph build_graph(std::span<const RoadEdge> edges) {
    if (edges.empty()) throw ValidationError("road edge list is empty");
    std::map<std::string, LonLat> nodes;
    for (const auto& e : edges) {
        if (!(e.length_m > 0) || !std::isfinite(e.length_m))
            throw ValidationError("road edge (" + e.node_a + ", " + e.node_b + ") has non-positive length");
        nodes.emplace(e.node_a, e.a);
        nodes.emplace(e.node_b, e.b);
    }
    RoadGraph g;
    g.ids_.reserve(nodes.size());
    for (const auto& [id, pos] : nodes) {
        g.lookup_.emplace(id, g.ids_.size());
        g.ids_.push_back(id);
        g.positions_.push_back(pos);
    }

    std::map<std::pair<NodeId, NodeId>, double> unique;
    for (const auto& e : edges) {
        NodeId a = g.lookup_.at(e.node_a);
        NodeId b = g.lookup_.at(e.node_b);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        auto [it, fresh] = unique.emplace(std::pair{a, b}, e.length_m);
        if (!fresh) it->second = std::min(it->second, e.length_m);
    }
    g.edge_count_ = unique.size();

    std::vector<std::size_t> degree(g.ids_.size(), 0);
    for (const auto& [ab, len] : unique) {
        ++degree[ab.first];
        ++degree[ab.second];
    }
    g.offsets_.assign(g.ids_.size() + 1, 0);
    for (std::size_t i = 0; i < degree.size(); ++i) g.offsets_[i + 1] = g.offsets_[i] + degree[i];
    g.arcs_.resize(g.offsets_.back());
    std::vector<std::size_t> fill(g.offsets_.begin(), g.offsets_.end() - 1);
    for (const auto& [ab, len] : unique) {
        g.arcs_[fill[ab.first]++] = {ab.second, len};
        g.arcs_[fill[ab.second]++] = {ab.first, len};
    }
    return g;
}

std::vector<double> shortest_distances(const RoadGraph& g, std::span<const NodeId> sources, double cutoff_m) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(g.node_count(), inf);
    using Item = std::pair<double, NodeId>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    for (NodeId s : sources) {
        if (s >= g.node_count()) throw ValidationError("source node out of range");
        dist[s] = 0.0;
        heap.emplace(0.0, s);
    }
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (d > dist[u]) continue;
        for (const auto& arc : g.neighbors(u)) {
            const double nd = d + arc.length_m;
            if (nd <= cutoff_m && nd < dist[arc.to]) {
                dist[arc.to] = nd;
                heap.emplace(nd, arc.to);
            }
        }
    }
    return dist;
}

std::unordered_map<NodeId, double> network_distances(const RoadGraph& g, NodeId source, double cutoff_m) {
    if (source >= g.node_count()) throw ValidationError("unknown source node");
    if (!(cutoff_m > 0)) throw ValidationError("cutoff must be positive");
    const NodeId src[] = {source};
    const auto dense = shortest_distances(g, src, cutoff_m);
    std::unordered_map<NodeId, double> out;
    for (NodeId n = 0; n < dense.size(); ++n)
        if (dense[n] <= cutoff_m) out.emplace(n, dense[n]);
    return out;
}

// ---------------------------------------------------------------------------
// Snapping
// ---------------------------------------------------------------------------

SnapIndex::SnapIndex(const RoadGraph& g) : graph_(&g) {
    if (g.node_count() == 0) throw ValidationError("cannot snap to an empty graph");
    BBox box;
    for (const auto& p : g.positions()) box.extend(p);
    proj_ = LocalProjection::for_bbox(box);
    planar_.reserve(g.node_count());
    Vec2 hi{-1e300, -1e300};
    lo_ = {1e300, 1e300};
    for (const auto& p : g.positions()) {
        const Vec2 v = proj_.forward(p);
        planar_.push_back(v);
        lo_ = {std::min(lo_.x, v.x), std::min(lo_.y, v.y)};
        hi = {std::max(hi.x, v.x), std::max(hi.y, v.y)};
    }
    const double w = std::max(hi.x - lo_.x, 1.0);
    const double h = std::max(hi.y - lo_.y, 1.0);
    cell_m_ = std::max(std::sqrt(w * h / static_cast<double>(g.node_count())) * 2.0, 1.0);
    nx_ = static_cast<int>(w / cell_m_) + 1;
    ny_ = static_cast<int>(h / cell_m_) + 1;
    cells_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (NodeId n = 0; n < planar_.size(); ++n) {
        const int cx = std::clamp(static_cast<int>((planar_[n].x - lo_.x) / cell_m_), 0, nx_ - 1);
        const int cy = std::clamp(static_cast<int>((planar_[n].y - lo_.y) / cell_m_), 0, ny_ - 1);
        cells_[static_cast<std::size_t>(cy) * nx_ + cx].push_back(n);
    }
}

NodeId SnapIndex::snap(LonLat p) const {
    const Vec2 v = proj_.forward(p);
    const int cx = static_cast<int>(std::floor((v.x - lo_.x) / cell_m_));
    const int cy = static_cast<int>(std::floor((v.y - lo_.y) / cell_m_));
    NodeId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    auto consider = [&](NodeId n) {
        const double d = haversine_m(p, graph_->position(n));
        if (d < best_d || (d == best_d && n < best)) {
            best = n;
            best_d = d;
        }
    };
    // Expanding rings of cells; a ring r only holds points at planar distance
    // >= (r - 1) * cell, and planar and great-circle distances agree to well
    // under 1% at city scale.
    const int max_ring = std::max({nx_, ny_, std::abs(cx) + nx_, std::abs(cy) + ny_});
    for (int r = 0; r <= max_ring; ++r) {
        if (r > 0 && (r - 1) * cell_m_ > best_d * 1.01 + 1.0) break;
        for (int y = cy - r; y <= cy + r; ++y) {
            if (y < 0 || y >= ny_) continue;
            for (int x = cx - r; x <= cx + r; ++x) {
                if (x < 0 || x >= nx_) continue;
                if (std::max(std::abs(x - cx), std::abs(y - cy)) != r) continue;
                for (NodeId n : cells_[static_cast<std::size_t>(y) * nx_ + x]) consider(n);
            }
        }
    }
    return best;
}

NodeId SnapIndex::snap_polygon(const Polygon& poly) const {
    NodeId best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    // Candidates: nodes near any boundary vertex plus the polygon's bounding box.
    const BBox box = bbox_of(poly);
    const Vec2 a = proj_.forward({box.min_lon, box.min_lat});
    const Vec2 b = proj_.forward({box.max_lon, box.max_lat});
    const NodeId seed = snap(poly.rings.front().front());
    const double reach = haversine_m(poly.rings.front().front(), graph_->position(seed)) * 1.01 + cell_m_;
    const int x0 = std::clamp(static_cast<int>(std::floor((a.x - reach - lo_.x) / cell_m_)), 0, nx_ - 1);
    const int x1 = std::clamp(static_cast<int>(std::floor((b.x + reach - lo_.x) / cell_m_)), 0, nx_ - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor((a.y - reach - lo_.y) / cell_m_)), 0, ny_ - 1);
    const int y1 = std::clamp(static_cast<int>(std::floor((b.y + reach - lo_.y) / cell_m_)), 0, ny_ - 1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            for (NodeId n : cells_[static_cast<std::size_t>(y) * nx_ + x]) {
                const double d = distance_to_boundary_m(planar_[n], poly, proj_);
                if (d < best_d || (d == best_d && n < best)) {
                    best = n;
                    best_d = d;
                }
            }
    return best_d < std::numeric_limits<double>::infinity() ? best : seed;
}

// ---------------------------------------------------------------------------
// Amenity lookups
// ---------------------------------------------------------------------------

AmenityLocator::AmenityLocator(const SnapIndex& snap, std::span<const Amenity> amenities)
    : by_category_(kAmenityCategoryCount) {
    amenity_node_.reserve(amenities.size());
    for (const auto& a : amenities) {
        const NodeId n = a.polygon ? snap.snap_polygon(*a.polygon) : snap.snap(a.location);
        amenity_node_.push_back(n);
        by_category_[static_cast<std::size_t>(a.category)].push_back(n);
    }
}

std::vector<double> k_nearest_amenities(std::span<const double> dist, const AmenityLocator& amenities,
                                        AmenityCategory category, std::size_t k, double cutoff_m) {
    if (k == 0) throw ValidationError("k must be positive");
    std::vector<double> found;
    for (NodeId n : amenities.category_nodes(category))
        if (dist[n] <= cutoff_m) found.push_back(dist[n]);
    const std::size_t take = std::min(k, found.size());
    std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(take), found.end());
    found.resize(take);
    return found;
}

std::vector<double> k_nearest_amenities(const RoadGraph& g, NodeId origin, const AmenityLocator& amenities,
                                        AmenityCategory category, std::size_t k, double cutoff_m) {
    const NodeId src[] = {origin};
    const auto dist = shortest_distances(g, src, cutoff_m);
    return k_nearest_amenities(dist, amenities, category, k, cutoff_m);
}

}  // namespace egocast

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "egocast/geo.hpp"
#include "egocast/geomodel.hpp"

namespace egocast {

using NodeId = std::size_t;

/// Undirected road graph with strictly positive edge lengths. Nodes are
/// numbered in ascending order of their string ids, so node order doubles
/// as the id tie-breaker.
class RoadGraph {
public:
    struct Arc {
        NodeId to;
        double length_m;
    };

    std::size_t node_count() const { return ids_.size(); }
    std::size_t edge_count() const { return edge_count_; }

    const std::string& id(NodeId n) const { return ids_[n]; }
    LonLat position(NodeId n) const { return positions_[n]; }
    std::span<const LonLat> positions() const { return positions_; }
    std::span<const Arc> neighbors(NodeId n) const {
        return {arcs_.data() + offsets_[n], arcs_.data() + offsets_[n + 1]};
    }

    std::optional<NodeId> find(std::string_view id) const;
    /// Throws ValidationError for unknown ids.
    NodeId require(std::string_view id) const;

private:
    friend RoadGraph build_graph(std::span<const RoadEdge> edges);

    std::vector<std::string> ids_;
    std::vector<LonLat> positions_;
    std::unordered_map<std::string, NodeId> lookup_;
    std::vector<std::size_t> offsets_;  // CSR adjacency
    std::vector<Arc> arcs_;
    std::size_t edge_count_ = 0;
};

/// Builds the graph; duplicate edges collapse to their minimum length and
/// self-loops are dropped. Throws ValidationError on non-positive lengths.
RoadGraph build_graph(std::span<const RoadEdge> edges);

/// Shortest-path distance to every node within `cutoff_m` of `source`
/// (inclusive). Unreached nodes are absent.
std::unordered_map<NodeId, double> network_distances(const RoadGraph& g, NodeId source, double cutoff_m);

/// Dense variant: distance per node, +infinity when beyond the cutoff.
/// Multiple sources give the distance to the nearest of them.
std::vector<double> shortest_distances(const RoadGraph& g, std::span<const NodeId> sources,
                                       double cutoff_m = std::numeric_limits<double>::infinity());

/// Nearest-node lookup by great-circle distance; ties go to the smaller id.
class SnapIndex {
public:
    explicit SnapIndex(const RoadGraph& g);

    NodeId snap(LonLat p) const;
    /// Node nearest to a polygon's boundary (its stand-in entrance).
    NodeId snap_polygon(const Polygon& poly) const;

private:
    const RoadGraph* graph_;
    LocalProjection proj_;
    double cell_m_ = 1.0;
    Vec2 lo_{};
    int nx_ = 1;
    int ny_ = 1;
    std::vector<Vec2> planar_;
    std::vector<std::vector<NodeId>> cells_;
};

/// Amenities of every category snapped to road nodes.
class AmenityLocator {
public:
    AmenityLocator(const SnapIndex& snap, std::span<const Amenity> amenities);

    /// Snapped node of each amenity, in input order.
    const std::vector<NodeId>& nodes() const { return amenity_node_; }
    /// Nodes holding at least one amenity of the category (duplicates kept per amenity).
    const std::vector<NodeId>& category_nodes(AmenityCategory c) const {
        return by_category_[static_cast<std::size_t>(c)];
    }

private:
    std::vector<NodeId> amenity_node_;
    std::vector<std::vector<NodeId>> by_category_;
};

/// The k smallest network distances (ascending, each <= cutoff) from
/// `origin` to amenities of `category`. `dist` must come from a search
/// rooted at `origin` with at least the same cutoff.
std::vector<double> k_nearest_amenities(std::span<const double> dist, const AmenityLocator& amenities,
                                        AmenityCategory category, std::size_t k, double cutoff_m);

/// Convenience form that runs the search itself.
std::vector<double> k_nearest_amenities(const RoadGraph& g, NodeId origin, const AmenityLocator& amenities,
                                        AmenityCategory category, std::size_t k, double cutoff_m);

}  // namespace egocast

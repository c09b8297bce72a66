#include "egocast/egohood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "egocast/csv.hpp"
#include "egocast/error.hpp"
#include "egocast/log.hpp"

namespace egocast {

ContiguityMatrix::ContiguityMatrix(std::vector<std::vector<Entry>> rows, bool row_normalized)
    : rows_(std::move(rows)), row_normalized_(row_normalized) {
    for (auto& r : rows_)
        std::sort(r.begin(), r.end(), [](const Entry& a, const Entry& b) { return a.col < b.col; });
}

double ContiguityMatrix::at(std::size_t i, std::size_t j) const {
    const auto& r = rows_.at(i);
    auto it = std::lower_bound(r.begin(), r.end(), j, [](const Entry& e, std::size_t c) { return e.col < c; });
    return (it != r.end() && it->col == j) ? it->weight : 0.0;
}

double ContiguityMatrix::row_sum(std::size_t i) const {
    double s = 0.0;
    for (const auto& e : rows_.at(i)) s += e.weight;
    return s;
}

std::size_t ContiguityMatrix::nonzeros() const {
    std::size_t n = 0;
    for (const auto& r : rows_) n += r.size();
    return n;
}

namespace {

// Buckets planar points into square cells of side `cell` and calls
// visit(i, j) once for each unordered pair in the same or adjacent cells.
template <typename Visit>
void for_candidate_pairs(std::span<const Vec2> pts, double cell, Visit&& visit) {
    if (pts.empty()) return;
    double minx = pts[0].x, miny = pts[0].y;
    for (const auto& p : pts) {
        minx = std::min(minx, p.x);
        miny = std::min(miny, p.y);
    }
    std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < pts.size(); ++i)
        cells[{static_cast<long>(std::floor((pts[i].x - minx) / cell)),
               static_cast<long>(std::floor((pts[i].y - miny) / cell))}]
            .push_back(i);
    for (const auto& [key, members] : cells) {
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                auto it = cells.find({key.first + dx, key.second + dy});
                if (it == cells.end()) continue;
                for (std::size_t i : members)
                    for (std::size_t j : it->second)
                        if (i < j) visit(i, j);
            }
    }
}

ContiguityMatrix from_pairs(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    std::vector<std::vector<ContiguityMatrix::Entry>> rows(n);
    for (auto [i, j] : pairs) {
        rows[i].push_back({j, 1.0});
        rows[j].push_back({i, 1.0});
    }
    return ContiguityMatrix(std::move(rows));
}

}  // namespace

ContiguityMatrix build_contiguity(std::span<const Vec2> points, double radius_m) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for_candidate_pairs(points, radius_m, [&](std::size_t i, std::size_t j) {
        if (distance(points[i], points[j]) < radius_m) pairs.emplace_back(i, j);
    });
    return from_pairs(points.size(), pairs);
}

ContiguityMatrix build_contiguity(std::span<const LonLat> centroids, double radius_m) {
    BBox box;
    for (const auto& c : centroids) box.extend(c);
    const auto proj = LocalProjection::for_bbox(box);
    std::vector<Vec2> planar;
    planar.reserve(centroids.size());
    for (const auto& c : centroids) planar.push_back(proj.forward(c));
    // Cells slightly wider than the radius so projection error cannot hide a pair.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for_candidate_pairs(planar, radius_m * 1.01, [&](std::size_t i, std::size_t j) {
        if (haversine_m(centroids[i], centroids[j]) < radius_m) pairs.emplace_back(i, j);
    });
    return from_pairs(centroids.size(), pairs);
}

ContiguityMatrix build_contiguity(const std::vector<CensusBlock>& blocks, double radius_m) {
    std::vector<LonLat> c;
    c.reserve(blocks.size());
    for (const auto& b : blocks) c.push_back(b.centroid);
    return build_contiguity(std::span<const LonLat>(c), radius_m);
}

ContiguityMatrix row_normalize(const ContiguityMatrix& w) {
    std::vector<std::vector<ContiguityMatrix::Entry>> rows(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double s = w.row_sum(i);
        if (s == 0.0) continue;
        for (const auto& e : w.row(i)) rows[i].push_back({e.col, e.weight / s});
    }
    return ContiguityMatrix(std::move(rows), true);
}

FeatureTable egohood_features(const ContiguityMatrix& normalized, const FeatureTable& place_features) {
    if (normalized.size() != place_features.rows())
        throw ValidationError("contiguity matrix has " + std::to_string(normalized.size()) +
                              " rows but the feature table has " + std::to_string(place_features.rows()));
    FeatureTable e(place_features.row_ids(), place_features.columns());
    const std::size_t cols = place_features.cols();
    for (std::size_t i = 0; i < normalized.size(); ++i) {
        if (normalized.isolated(i)) {
            std::copy_n(place_features.row(i).begin(), cols, e.row(i).begin());
            continue;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            double weight = 0.0;
            for (const auto& entry : normalized.row(i)) {
                const double v = place_features.at(entry.col, c);
                if (is_missing(v)) continue;
                acc += entry.weight * v;
                weight += entry.weight;
            }
            e.at(i, c) = weight > 0 ? acc / weight : kMissing;
        }
    }
    return e;
}

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

std::string_view to_string(FeatureGroup g) {
    switch (g) {
        case FeatureGroup::Property: return "property";
        case FeatureGroup::EgoPlace: return "ego_place";
        case FeatureGroup::Egohood: return "egohood";
    }
    return "";
}

FeatureGroup parse_feature_group(std::string_view s) {
    if (s == "property") return FeatureGroup::Property;
    if (s == "ego_place") return FeatureGroup::EgoPlace;
    if (s == "egohood") return FeatureGroup::Egohood;
    throw ValidationError("unknown feature group '" + std::string(s) + "'");
}

std::string DesignColumn::qualified() const { return std::string(to_string(group)) + ":" + name; }

std::vector<std::string> DesignMatrix::qualified_names() const {
    std::vector<std::string> out;
    out.reserve(columns.size());
    for (const auto& c : columns) out.push_back(c.qualified());
    return out;
}

DesignMatrix DesignMatrix::select(std::span<const std::size_t> column_indices) const {
    DesignMatrix out;
    out.listing_ids = listing_ids;
    out.block_ids = block_ids;
    out.targets = targets;
    for (std::size_t c : column_indices) out.columns.push_back(columns.at(c));
    out.values.reserve(rows() * column_indices.size());
    for (std::size_t r = 0; r < rows(); ++r)
        for (std::size_t c : column_indices) out.values.push_back(at(r, c));
    return out;
}

void DesignMatrix::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    std::vector<std::string> header{"listing_id", "block_id"};
    for (const auto& c : columns) header.push_back(c.qualified());
    w.row(header);
    for (std::size_t r = 0; r < rows(); ++r) {
        std::vector<std::string> fields{listing_ids[r], block_ids[r]};
        for (double v : row(r)) fields.push_back(csv::format_double(v));
        w.row(fields);
    }
}

void DesignMatrix::write_targets(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    w.row({"id", "asked_price"});
    for (std::size_t r = 0; r < rows(); ++r) w.row({listing_ids[r], csv::format_double(targets[r])});
}

DesignMatrix DesignMatrix::read_csv(const std::filesystem::path& design, const std::filesystem::path& targets) {
    const auto t = csv::Table::read(design);
    if (t.header().size() < 2 || t.header()[0] != "listing_id" || t.header()[1] != "block_id")
        throw LoadError(design.string() + ": expected listing_id,block_id,... header");
    DesignMatrix m;
    for (std::size_t c = 2; c < t.header().size(); ++c) {
        const auto& h = t.header()[c];
        const auto colon = h.find(':');
        if (colon == std::string::npos) throw LoadError(design.string() + ": column '" + h + "' lacks a group tag");
        m.columns.push_back({h.substr(colon + 1), parse_feature_group(h.substr(0, colon))});
    }
    m.values.reserve(t.rows() * m.columns.size());
    for (std::size_t r = 0; r < t.rows(); ++r) {
        const auto& row = t.row(r);
        m.listing_ids.push_back(row[0]);
        m.block_ids.push_back(row[1]);
        for (std::size_t c = 2; c < row.size(); ++c) {
            auto v = csv::parse_double(row[c]);
            m.values.push_back(v ? *v : kMissing);
        }
    }
    const auto tt = csv::Table::read(targets);
    const std::size_t c_id = tt.require("id");
    const std::size_t c_price = tt.require("asked_price");
    if (tt.rows() != m.rows()) throw LoadError(targets.string() + ": row count differs from design matrix");
    for (std::size_t r = 0; r < tt.rows(); ++r) {
        if (tt.row(r)[c_id] != m.listing_ids[r]) throw LoadError(targets.string() + ": id order differs from design matrix");
        auto v = csv::parse_double(tt.row(r)[c_price]);
        m.targets.push_back(v ? *v : kMissing);
    }
    return m;
}

std::vector<std::string> property_column_names() {
    std::vector<std::string> names;
    for (const auto& spec : property_schema()) {
        if (spec.kind == AttributeKind::Categorical) {
            for (const auto& level : spec.levels) names.push_back(std::string(spec.name) + "=" + std::string(level));
        } else {
            names.emplace_back(spec.name);
        }
    }
    return names;
}

std::vector<double> encode_property_attributes(const PropertyAttributes& attrs) {
    std::vector<double> out;
    const auto& schema = property_schema();
    for (std::size_t a = 0; a < schema.size(); ++a) {
        const double v = attrs[a];
        switch (schema[a].kind) {
            case AttributeKind::Numeric: out.push_back(v); break;
            case AttributeKind::Boolean: out.push_back(is_missing(v) ? 0.0 : v); break;
            case AttributeKind::Categorical:
                for (std::size_t k = 0; k < schema[a].levels.size(); ++k)
                    out.push_back(!is_missing(v) && static_cast<std::size_t>(v) == k ? 1.0 : 0.0);
                break;
        }
    }
    return out;
}

DesignMatrix assemble_design_matrix(const std::vector<Listing>& listings, const FeatureTable& place_features,
                                    const FeatureTable& egohood, DesignLog* log_out) {
    if (place_features.row_ids() != egohood.row_ids() || place_features.cols() != egohood.cols())
        throw ValidationError("ego-place and egohood tables are not aligned");
    DesignMatrix m;
    for (const auto& n : property_column_names()) m.columns.push_back({n, FeatureGroup::Property});
    for (const auto& c : place_features.columns()) m.columns.push_back({c.name, FeatureGroup::EgoPlace});
    for (const auto& c : egohood.columns()) m.columns.push_back({c.name, FeatureGroup::Egohood});
    m.values.reserve(listings.size() * m.columns.size());
    for (const auto& l : listings) {
        std::optional<std::size_t> row;
        if (l.ego_place_id) row = place_features.row_index(*l.ego_place_id);
        if (!row) {
            const std::string reason = "listing '" + l.id + "' has no known ego-place";
            log::warn(reason);
            if (log_out) {
                log_out->excluded_ids.push_back(l.id);
                log_out->reasons.push_back(reason);
            }
            continue;
        }
        m.listing_ids.push_back(l.id);
        m.block_ids.push_back(*l.ego_place_id);
        m.targets.push_back(l.asked_price ? *l.asked_price : kMissing);
        const auto p = encode_property_attributes(l.attributes);
        m.values.insert(m.values.end(), p.begin(), p.end());
        const auto f = place_features.row(*row);
        m.values.insert(m.values.end(), f.begin(), f.end());
        const auto e = egohood.row(*row);
        m.values.insert(m.values.end(), e.begin(), e.end());
    }
    return m;
}

}  // namespace egocast

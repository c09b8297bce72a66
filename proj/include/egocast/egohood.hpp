#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "egocast/geo.hpp"
#include "egocast/geomodel.hpp"
#include "egocast/table.hpp"

namespace egocast {

inline constexpr double kEgohoodRadiusM = 1000.0;

/// Sparse n x n spatial weights matrix with zero diagonal. Rows store
/// sorted column indices with their weights.
class ContiguityMatrix {
public:
    struct Entry {
        std::size_t col;
        double weight;
    };

    ContiguityMatrix() = default;
    explicit ContiguityMatrix(std::vector<std::vector<Entry>> rows, bool row_normalized = false);

    std::size_t size() const { return rows_.size(); }
    std::span<const Entry> row(std::size_t i) const { return rows_[i]; }
    std::size_t degree(std::size_t i) const { return rows_[i].size(); }
    bool row_normalized() const { return row_normalized_; }
    bool isolated(std::size_t i) const { return rows_[i].empty(); }

    double at(std::size_t i, std::size_t j) const;
    double row_sum(std::size_t i) const;
    std::size_t nonzeros() const;

private:
    std::vector<std::vector<Entry>> rows_;
    bool row_normalized_ = false;
};

/// W_ij = 1 iff i != j and the centroids are closer than `radius_m`
/// (great-circle).
ContiguityMatrix build_contiguity(std::span<const LonLat> centroids, double radius_m = kEgohoodRadiusM);

/// Same rule on planar coordinates in meters.
ContiguityMatrix build_contiguity(std::span<const Vec2> points, double radius_m = kEgohoodRadiusM);

ContiguityMatrix build_contiguity(const std::vector<CensusBlock>& blocks, double radius_m = kEgohoodRadiusM);

/// Divides each non-empty row by its sum; isolated rows stay empty.
ContiguityMatrix row_normalize(const ContiguityMatrix& w);

/// E_i = sum_j W_ij F_j with missing cells excluded and the remaining weights
/// renormalized; isolated rows copy F_i. Throws ValidationError on a size
/// mismatch.
FeatureTable egohood_features(const ContiguityMatrix& normalized, const FeatureTable& place_features);

// ---------------------------------------------------------------------------
// Design matrix
// ---------------------------------------------------------------------------

enum class FeatureGroup { Property, EgoPlace, Egohood };

std::string_view to_string(FeatureGroup g);
FeatureGroup parse_feature_group(std::string_view s);

struct DesignColumn {
    std::string name;
    FeatureGroup group;

    /// `group:name`, unique across the matrix.
    std::string qualified() const;
};

/// Listings x columns model input, row-major, with targets.
struct DesignMatrix {
    std::vector<std::string> listing_ids;
    std::vector<std::string> block_ids;
    std::vector<DesignColumn> columns;
    std::vector<double> values;
    std::vector<double> targets;  // kMissing for listings without a price

    std::size_t rows() const { return listing_ids.size(); }
    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols(), cols()}; }

    std::vector<std::string> qualified_names() const;

    /// Copy restricted to the given columns, in the given order.
    DesignMatrix select(std::span<const std::size_t> column_indices) const;

    /// design.csv: `listing_id,block_id,group:name...`
    void write_csv(const std::filesystem::path& path) const;
    /// targets.csv: `id,asked_price`
    void write_targets(const std::filesystem::path& path) const;
    static DesignMatrix read_csv(const std::filesystem::path& design, const std::filesystem::path& targets);
};

/// Column names produced by one-hot/numeric encoding of the property attributes.
std::vector<std::string> property_column_names();

/// Encodes the 25 attributes: numeric as-is (missing stays missing),
/// booleans with missing as absent, categoricals one-hot (all zero when missing).
std::vector<double> encode_property_attributes(const PropertyAttributes& attrs);

struct DesignLog {
    std::vector<std::string> excluded_ids;
    std::vector<std::string> reasons;
};

/// X row per listing = property encoding ++ F row ++ E row of its ego-place.
DesignMatrix assemble_design_matrix(const std::vector<Listing>& listings, const FeatureTable& place_features,
                                    const FeatureTable& egohood, DesignLog* log = nullptr);

}  // namespace egocast

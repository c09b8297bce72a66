#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "egocast/egohood.hpp"
#include "egocast/geomodel.hpp"
#include "egocast/table.hpp"

namespace egocast {

/// One mile: the distance at which the walking decay has fallen to e^-5.
inline constexpr double kMaxWalkingDistanceM = 1609.34;

struct WalkParams {
    double max_distance_m = kMaxWalkingDistanceM;
    std::map<AmenityCategory, std::size_t> k_by_category{
        {AmenityCategory::RestaurantBar, 10}, {AmenityCategory::Shopping, 5}, {AmenityCategory::Park, 2}};
    std::size_t default_k = 1;

    std::size_t k_for(AmenityCategory c) const;
    /// Throws ValidationError unless max_distance_m > 0 and every k >= 1.
    void validate() const;
};

/// Categories scored for walkability, in column order.
inline constexpr std::array<AmenityCategory, 8> kWalkCategories{
    AmenityCategory::Coffee,  AmenityCategory::Entertainment, AmenityCategory::Shopping,
    AmenityCategory::RestaurantBar, AmenityCategory::School, AmenityCategory::Grocery,
    AmenityCategory::Library, AmenityCategory::Park};

/// exp(-5 (d/M)^5) for d <= M, exactly 0 beyond. Throws on negative d.
double decay_score(double distance_m, const WalkParams& params);

/// Mean decay score over the given (k nearest) distances; 0 when empty.
double category_walkability(std::span<const double> distances, const WalkParams& params);

/// Normalized land-use entropy over the three classes, from class areas or
/// shares. Missing when the total is zero.
double land_use_mix(std::span<const double, kLandUseClassCount> areas);

/// Representative construction year of a census year bracket label.
/// Accepts "1950s", "1961_1970", "before_1919"/"pre1919", "after_2005".
double bracket_midpoint(std::string_view label);

struct YearMoments {
    double mean = kMissing;
    double std = kMissing;
};

/// Count-weighted mean and population standard deviation of bracket midpoints.
YearMoments building_year_moments(const std::map<std::string, std::int64_t>& brackets);

/// ATECO divisions counted as cultural and creative industries.
bool is_cultural_ateco(int division);

/// Mean score of the points (missing when none).
double mean_score(std::span<const SecurityPoint> points);

struct FeatureConfig {
    WalkParams walk;
    double egohood_radius_m = kEgohoodRadiusM;
    unsigned threads = 1;
};

/// Column layout of the per-block feature table for a given set of year brackets.
std::vector<ColumnInfo> block_feature_columns(const std::vector<std::string>& brackets);

/// Sorted union of year-bracket labels present in the blocks.
std::vector<std::string> year_brackets(const std::vector<CensusBlock>& blocks);

/// Per-block feature rows F, one per block in id order.
FeatureTable compute_block_features(const CityDataset& ds, const FeatureConfig& config);

}  // namespace egocast

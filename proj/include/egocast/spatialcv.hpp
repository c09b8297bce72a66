#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "egocast/geo.hpp"
#include "egocast/geomodel.hpp"

namespace egocast {

inline constexpr int kFolds = 5;
inline constexpr double kTileSideM = 3000.0;

struct TileKey {
    long x = 0;
    long y = 0;
    friend auto operator<=>(const TileKey&, const TileKey&) = default;
};

/// Square tiling anchored at the points' south-west corner.
std::vector<TileKey> tile_blocks(std::span<const Vec2> centroids, double tile_side_m = kTileSideM);

/// Tiling of block centroids in the dataset's local projection.
std::vector<TileKey> tile_blocks(const std::vector<CensusBlock>& blocks, const LocalProjection& proj,
                                 double tile_side_m = kTileSideM);

enum class Role { Train, Validation, Holdout };
enum class Discard : std::uint8_t { Kept, NearTraining, NearValidation };

std::string_view to_string(Role r);
std::string_view to_string(Discard d);

struct Rotation {
    std::array<int, 3> train{};
    int validation = 0;
    int holdout = 0;

    Role role_of(int fold) const;
};

/// holdout = (4 + i) mod 5, validation = (3 + i) mod 5, train = the rest.
Rotation rotate(int iteration);

struct FoldAssignment {
    int k = kFolds;
    std::vector<int> block_fold;            // fold per block
    std::vector<std::string> listing_ids;   // listings under evaluation
    std::vector<std::size_t> listing_block; // ego-place index per listing
    std::array<std::vector<Discard>, kFolds> discard;  // per rotation, per listing

    Role role(int rotation, std::size_t listing) const {
        return rotate(rotation).role_of(block_fold[listing_block[listing]]);
    }
    bool kept(int rotation, std::size_t listing) const {
        return discard[static_cast<std::size_t>(rotation)][listing] == Discard::Kept;
    }
    /// Listings with the role in the rotation that survived the constraints.
    std::vector<std::size_t> members(int rotation, Role r) const;

    /// folds.csv: listing_id, fold, role per rotation, kept flag and reason per rotation.
    void write_csv(const std::filesystem::path& path, std::span<const std::string> block_ids) const;
    /// Blocks without listings come back with fold -1.
    static FoldAssignment read_csv(const std::filesystem::path& path, std::span<const std::string> block_ids);
};

/// Shuffles non-empty tiles by seed and gives each to the fold with the
/// fewest listings so far. Tiles without listings are dealt round-robin.
/// Throws ValidationError when fewer than K tiles hold listings.
FoldAssignment assign_folds(std::span<const TileKey> block_tiles, std::span<const std::string> listing_ids,
                            std::span<const std::size_t> listing_block, std::uint64_t seed, int k = kFolds);

struct DiscardStats {
    std::array<std::size_t, kFolds> near_training{};
    std::array<std::size_t, kFolds> near_validation{};
};

/// Discards validation/holdout listings whose block is within `radius_m` of
/// a training block, then holdout listings within `radius_m` of a surviving
/// validation block. Training listings are never discarded.
DiscardStats enforce_constraints(FoldAssignment& assignment, const std::vector<CensusBlock>& blocks,
                                 double radius_m = 1000.0);

struct Violation {
    int rotation = 0;
    int constraint = 0;  // 1: training vs validation/holdout, 2: validation vs holdout
    std::string block_a;
    std::string block_b;
    double distance_m = 0.0;
};

/// Exhaustive pairwise check over the blocks of kept listings.
std::vector<Violation> verify_folds(const FoldAssignment& assignment, const std::vector<CensusBlock>& blocks,
                                    double radius_m = 1000.0);

}  // namespace egocast

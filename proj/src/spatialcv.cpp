#include "egocast/spatialcv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "egocast/csv.hpp"
#include "egocast/egohood.hpp"
#include "egocast/error.hpp"
#include "egocast/log.hpp"

namespace egocast {

std::vector<TileKey> tile_blocks(std::span<const Vec2> centroids, double tile_side_m) {
    if (!(tile_side_m > 0)) throw ValidationError("tile side must be positive");
    std::vector<TileKey> out;
    if (centroids.empty()) return out;
    double minx = centroids[0].x, miny = centroids[0].y;
    for (const auto& c : centroids) {
        minx = std::min(minx, c.x);
        miny = std::min(miny, c.y);
    }
    out.reserve(centroids.size());
    for (const auto& c : centroids)
        out.push_back({static_cast<long>(std::floor((c.x - minx) / tile_side_m)),
                       static_cast<long>(std::floor((c.y - miny) / tile_side_m))});
    return out;
}

std::vector<TileKey> tile_blocks(const std::vector<CensusBlock>& blocks, const LocalProjection& proj,
                                 double tile_side_m) {
    std::vector<Vec2> planar;
    planar.reserve(blocks.size());
    for (const auto& b : blocks) planar.push_back(proj.forward(b.centroid));
    return tile_blocks(planar, tile_side_m);
}

std::string_view to_string(Role r) {
    switch (r) {
        case Role::Train: return "train";
        case Role::Validation: return "validation";
        case Role::Holdout: return "holdout";
    }
    return "";
}

std::string_view to_string(Discard d) {
    switch (d) {
        case Discard::Kept: return "kept";
        case Discard::NearTraining: return "near_training";
        case Discard::NearValidation: return "near_validation";
    }
    return "";
}

Role Rotation::role_of(int fold) const {
    if (fold == holdout) return Role::Holdout;
    if (fold == validation) return Role::Validation;
    return Role::Train;
}

Rotation rotate(int iteration) {
    if (iteration < 0 || iteration >= kFolds)
        throw ValidationError("rotation index " + std::to_string(iteration) + " outside 0..4");
    Rotation r;
    r.holdout = (4 + iteration) % kFolds;
    r.validation = (3 + iteration) % kFolds;
    for (int t = 0; t < 3; ++t) r.train[static_cast<std::size_t>(t)] = (iteration + t) % kFolds;
    return r;
}

std::vector<std::size_t> FoldAssignment::members(int rotation, Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t l = 0; l < listing_ids.size(); ++l)
        if (role(rotation, l) == r && kept(rotation, l)) out.push_back(l);
    return out;
}

FoldAssignment assign_folds(std::span<const TileKey> block_tiles, std::span<const std::string> listing_ids,
                            std::span<const std::size_t> listing_block, std::uint64_t seed, int k) {
    if (k != kFolds) throw ValidationError("only K = 5 folds are supported");
    if (listing_ids.size() != listing_block.size()) throw ValidationError("listing ids and blocks differ in length");

    std::map<TileKey, std::size_t> load;
    for (const auto& t : block_tiles) load.emplace(t, 0);
    for (std::size_t b : listing_block) {
        if (b >= block_tiles.size()) throw ValidationError("listing references an unknown block");
        ++load[block_tiles[b]];
    }
    std::vector<TileKey> busy, idle;
    for (const auto& [tile, count] : load) (count > 0 ? busy : idle).push_back(tile);
    if (busy.size() < static_cast<std::size_t>(k))
        throw ValidationError("only " + std::to_string(busy.size()) + " tiles hold listings but " + std::to_string(k) +
                              " folds are required; use a smaller tile side");

    // Fisher-Yates with raw engine output keeps the permutation identical
    // across standard library implementations.
    std::mt19937_64 rng(seed);
    for (std::size_t i = busy.size(); i > 1; --i) std::swap(busy[i - 1], busy[rng() % i]);

    std::map<TileKey, int> tile_fold;
    std::array<std::size_t, kFolds> fold_load{};
    for (const auto& tile : busy) {
        const auto lightest = std::min_element(fold_load.begin(), fold_load.end()) - fold_load.begin();
        tile_fold[tile] = static_cast<int>(lightest);
        fold_load[static_cast<std::size_t>(lightest)] += load[tile];
    }
    for (std::size_t i = 0; i < idle.size(); ++i) tile_fold[idle[i]] = static_cast<int>(i % kFolds);

    FoldAssignment a;
    a.k = k;
    a.block_fold.reserve(block_tiles.size());
    for (const auto& t : block_tiles) a.block_fold.push_back(tile_fold.at(t));
    a.listing_ids.assign(listing_ids.begin(), listing_ids.end());
    a.listing_block.assign(listing_block.begin(), listing_block.end());
    for (auto& d : a.discard) d.assign(listing_ids.size(), Discard::Kept);
    return a;
}

DiscardStats enforce_constraints(FoldAssignment& a, const std::vector<CensusBlock>& blocks, double radius_m) {
    if (a.block_fold.size() != blocks.size()) throw ValidationError("fold assignment does not match block count");
    const ContiguityMatrix near = build_contiguity(blocks, radius_m);
    DiscardStats stats;
    const std::size_t n_listings = a.listing_ids.size();
    for (int r = 0; r < kFolds; ++r) {
        auto& discard = a.discard[static_cast<std::size_t>(r)];
        discard.assign(n_listings, Discard::Kept);
        std::vector<char> train_block(blocks.size(), 0);
        for (std::size_t l = 0; l < n_listings; ++l)
            if (a.role(r, l) == Role::Train) train_block[a.listing_block[l]] = 1;

        auto touches = [&](std::size_t block, const std::vector<char>& mask) {
            if (mask[block]) return true;
            for (const auto& e : near.row(block))
                if (mask[e.col]) return true;
            return false;
        };

        // (i) validation and holdout listings away from training blocks.
        for (std::size_t l = 0; l < n_listings; ++l) {
            if (a.role(r, l) == Role::Train) continue;
            if (touches(a.listing_block[l], train_block)) {
                discard[l] = Discard::NearTraining;
                ++stats.near_training[static_cast<std::size_t>(r)];
            }
        }
        // (ii) holdout listings away from surviving validation blocks.
        std::vector<char> val_block(blocks.size(), 0);
        for (std::size_t l = 0; l < n_listings; ++l)
            if (a.role(r, l) == Role::Validation && discard[l] == Discard::Kept) val_block[a.listing_block[l]] = 1;
        for (std::size_t l = 0; l < n_listings; ++l) {
            if (a.role(r, l) != Role::Holdout || discard[l] != Discard::Kept) continue;
            if (touches(a.listing_block[l], val_block)) {
                discard[l] = Discard::NearValidation;
                ++stats.near_validation[static_cast<std::size_t>(r)];
            }
        }
        log::info("rotation ", r, ": discarded ", stats.near_training[static_cast<std::size_t>(r)],
                  " listings near training and ", stats.near_validation[static_cast<std::size_t>(r)],
                  " near validation");
    }
    return stats;
}

std::vector<Violation> verify_folds(const FoldAssignment& a, const std::vector<CensusBlock>& blocks, double radius_m) {
    std::vector<Violation> out;
    for (int r = 0; r < kFolds; ++r) {
        std::vector<std::size_t> train, val, hold;
        for (std::size_t l = 0; l < a.listing_ids.size(); ++l) {
            if (!a.kept(r, l)) continue;
            const std::size_t b = a.listing_block[l];
            switch (a.role(r, l)) {
                case Role::Train: train.push_back(b); break;
                case Role::Validation: val.push_back(b); break;
                case Role::Holdout: hold.push_back(b); break;
            }
        }
        for (auto* v : {&train, &val, &hold}) {
            std::sort(v->begin(), v->end());
            v->erase(std::unique(v->begin(), v->end()), v->end());
        }
        auto check = [&](const std::vector<std::size_t>& xs, const std::vector<std::size_t>& ys, int constraint) {
            for (std::size_t x : xs)
                for (std::size_t y : ys) {
                    const double d = x == y ? 0.0 : haversine_m(blocks[x].centroid, blocks[y].centroid);
                    if (d < radius_m) out.push_back({r, constraint, blocks[x].id, blocks[y].id, d});
                }
        };
        check(train, val, 1);
        check(train, hold, 1);
        check(val, hold, 2);
    }
    return out;
}

void FoldAssignment::write_csv(const std::filesystem::path& path, std::span<const std::string> block_ids) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    std::vector<std::string> header{"listing_id", "block_id", "fold"};
    for (int r = 0; r < kFolds; ++r) {
        header.push_back("role_r" + std::to_string(r));
        header.push_back("status_r" + std::to_string(r));
    }
    w.row(header);
    for (std::size_t l = 0; l < listing_ids.size(); ++l) {
        std::vector<std::string> row{listing_ids[l], block_ids[listing_block[l]],
                                     std::to_string(block_fold[listing_block[l]])};
        for (int r = 0; r < kFolds; ++r) {
            row.emplace_back(to_string(role(r, l)));
            row.emplace_back(to_string(discard[static_cast<std::size_t>(r)][l]));
        }
        w.row(row);
    }
}

FoldAssignment FoldAssignment::read_csv(const std::filesystem::path& path, std::span<const std::string> block_ids) {
    const auto t = csv::Table::read(path);
    FoldAssignment a;
    a.block_fold.assign(block_ids.size(), -1);
    const std::size_t c_id = t.require("listing_id");
    const std::size_t c_block = t.require("block_id");
    const std::size_t c_fold = t.require("fold");
    std::array<std::size_t, kFolds> c_status{};
    for (int r = 0; r < kFolds; ++r) c_status[static_cast<std::size_t>(r)] = t.require("status_r" + std::to_string(r));
    for (auto& d : a.discard) d.reserve(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const auto& row = t.row(i);
        auto it = std::lower_bound(block_ids.begin(), block_ids.end(), row[c_block]);
        if (it == block_ids.end() || *it != row[c_block])
            throw LoadError(path.string() + ": unknown block '" + row[c_block] + "'");
        const auto b = static_cast<std::size_t>(it - block_ids.begin());
        const int fold = std::stoi(row[c_fold]);
        if (fold < 0 || fold >= kFolds) throw LoadError(path.string() + ": fold out of range");
        a.block_fold[b] = fold;
        a.listing_ids.push_back(row[c_id]);
        a.listing_block.push_back(b);
        for (int r = 0; r < kFolds; ++r) {
            const auto& s = row[c_status[static_cast<std::size_t>(r)]];
            Discard d = Discard::Kept;
            if (s == "near_training") d = Discard::NearTraining;
            else if (s == "near_validation") d = Discard::NearValidation;
            else if (s != "kept") throw LoadError(path.string() + ": unknown status '" + s + "'");
            a.discard[static_cast<std::size_t>(r)].push_back(d);
        }
    }
    return a;
}

}  // namespace egocast

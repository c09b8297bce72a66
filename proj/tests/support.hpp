#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "egocast/geomodel.hpp"

namespace egotest {

using namespace egocast;

// Fixtures are laid out in meters on a plane around Turin.
inline const LocalProjection& plane() {
    static const LocalProjection p({7.6, 45.0}, 45.0);
    return p;
}

inline LonLat at(double x, double y) { return plane().inverse({x, y}); }

inline Polygon square(double x0, double y0, double side) {
    return Polygon{{{at(x0, y0), at(x0 + side, y0), at(x0 + side, y0 + side), at(x0, y0 + side)}}};
}

inline CensusBlock block(std::string id, double x0, double y0, double side) {
    CensusBlock b;
    b.id = std::move(id);
    b.polygon = square(x0, y0, side);
    b.centroid = at(x0 + side / 2, y0 + side / 2);
    b.area_m2 = side * side;
    return b;
}

inline RoadEdge edge(std::string a, std::string b, LonLat pa, LonLat pb, double length) {
    return RoadEdge{std::move(a), std::move(b), pa, pb, length};
}

inline std::chrono::sys_days day(int y, unsigned m, unsigned d) {
    return std::chrono::sys_days{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

// Scratch directory removed on scope exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path = std::filesystem::temp_directory_path() / ("egocast_" + tag + "_" + std::to_string(rng()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

}  // namespace egotest

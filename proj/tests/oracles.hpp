#pragma once

// Independent reference implementations used to cross-check the library.

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "egocast/egohood.hpp"
#include "egocast/gbt.hpp"
#include "egocast/roadnet.hpp"

namespace oracle {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// All-pairs shortest paths by Floyd-Warshall on a dense matrix.
inline std::vector<std::vector<double>> floyd_warshall(const egocast::RoadGraph& g) {
    const std::size_t n = g.node_count();
    std::vector<std::vector<double>> d(n, std::vector<double>(n, kInf));
    for (std::size_t i = 0; i < n; ++i) {
        d[i][i] = 0;
        for (const auto& a : g.neighbors(i)) d[i][a.to] = std::min(d[i][a.to], a.length_m);
    }
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < n; ++i)
            if (d[i][k] < kInf)
                for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
    return d;
}

/// Golden-section search for the minimizer of 0.5 (H + lambda) w^2 + G w + alpha |w|.
inline double argmin_leaf_objective(double g, double h, double lambda, double alpha) {
    auto f = [&](double w) { return 0.5 * (h + lambda) * w * w + g * w + alpha * std::abs(w); };
    const double span = (std::abs(g) + alpha) / (h + lambda) + 1.0;
    double lo = -span, hi = span;
    const double phi = (std::sqrt(5.0) - 1) / 2;
    double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    double fa = f(a), fb = f(b);
    for (int it = 0; it < 200; ++it) {
        if (fa < fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = f(b);
        }
    }
    return 0.5 * (lo + hi);
}

/// Minimum of the regularized leaf objective (numerically).
inline double min_leaf_objective(double g, double h, double lambda, double alpha) {
    const double w = argmin_leaf_objective(g, h, lambda, alpha);
    return 0.5 * (h + lambda) * w * w + g * w + alpha * std::abs(w);
}

/// Split gain as the drop in optimal objective from parent to children, minus gamma.
inline double objective_drop(double gl, double hl, double gr, double hr, double lambda, double alpha, double gamma) {
    const double parent = min_leaf_objective(gl + gr, hl + hr, lambda, alpha);
    const double children = min_leaf_objective(gl, hl, lambda, alpha) + min_leaf_objective(gr, hr, lambda, alpha);
    return parent - children - gamma;
}

/// Per-row neighbour mean over dense binary adjacency, skipping missing cells.
inline std::vector<std::vector<double>> neighbour_average(const std::vector<std::vector<int>>& adj,
                                                          const std::vector<std::vector<double>>& f) {
    const std::size_t n = f.size();
    std::vector<std::vector<double>> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cols = f[i].size();
        e[i].assign(cols, 0.0);
        bool any_neighbour = false;
        for (std::size_t j = 0; j < n; ++j) any_neighbour |= adj[i][j] != 0;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!any_neighbour) {
                e[i][c] = f[i][c];
                continue;
            }
            double sum = 0;
            int count = 0;
            for (std::size_t j = 0; j < n; ++j)
                if (adj[i][j] && !std::isnan(f[j][c])) {
                    sum += f[j][c];
                    ++count;
                }
            e[i][c] = count ? sum / count : std::nan("");
        }
    }
    return e;
}

/// Recursive tree walk, written independently of Tree::leaf_for.
inline double walk(const egocast::gbt::Tree& t, std::span<const double> x, int node = 0) {
    const auto& n = t.nodes.at(static_cast<std::size_t>(node));
    if (n.feature < 0) return n.weight;
    const double v = x[static_cast<std::size_t>(n.feature)];
    bool left;
    if (v != v)
        left = n.default_left;
    else
        left = !(v >= n.threshold);
    return walk(t, x, left ? n.left : n.right);
}

inline double predict(const egocast::gbt::TreeEnsemble& m, std::span<const double> x) {
    double s = 0;
    for (const auto& t : m.trees) s += walk(t, x);
    return m.base_score + m.learning_rate * s;
}

}  // namespace oracle

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egocast/gbt.hpp"

namespace egocast {

/// Mean absolute error. Throws ValidationError on empty or mismatched input.
double mae(std::span<const double> y, std::span<const double> prediction);

/// Median absolute percentage error (percent). Even-length inputs average
/// the two central values. Throws when any y is zero.
double mdape(std::span<const double> y, std::span<const double> prediction);

/// Prediction decomposed along each tree's decision path.
struct ContributionReport {
    std::string listing_id;
    double bias = 0.0;
    std::vector<double> contributions;  // per model feature
    double prediction = 0.0;
    std::vector<std::size_t> top_positive;  // feature indices, largest first
    std::vector<std::size_t> top_negative;  // feature indices, most negative first

    double total() const;
};

/// bias = base_score + lr * sum of root expected values; each split on the
/// path credits its feature with lr * (E[child] - E[node]).
ContributionReport path_contributions(const gbt::TreeEnsemble& model, std::span<const double> x,
                                      std::size_t top_k = 8);

struct ImportanceRow {
    std::string feature;
    double gain = 0.0;
    std::size_t splits = 0;
    std::string group;
};

struct ImportanceTable {
    std::vector<ImportanceRow> rows;             // ranked by gain, descending
    std::map<std::string, double> group_share;   // normalized gain per group
};

/// Total-gain importance; `groups` (one label per model feature) enables
/// the grouped shares.
ImportanceTable feature_importance(const gbt::TreeEnsemble& model,
                                   const std::vector<std::string>* groups = nullptr);

/// Share of mean absolute contribution per group over a set of reports.
std::map<std::string, double> contribution_group_shares(std::span<const ContributionReport> reports,
                                                        const std::vector<std::string>& groups);

struct RotationPredictions {
    std::vector<std::string> ids;
    std::vector<double> y;
    std::vector<double> prediction;
};

struct RunReport {
    std::vector<double> rotation_mae;
    std::vector<double> rotation_mdape;
    std::vector<std::size_t> rotation_count;
    double pooled_mae = 0.0;
    double pooled_mdape = 0.0;
    std::size_t pooled_count = 0;
};

/// Per-rotation and pooled hold-out metrics. Requires exactly five rotations.
RunReport evaluate_run(std::span<const RotationPredictions> rotations);

/// Model-comparison table: one row per variant with pooled MAE and MdAPE.
std::string format_comparison(const std::vector<std::pair<std::string, RunReport>>& variants);

/// Human-readable explanation: bias, prediction and the strongest positive
/// and negative contributions with the feature values that produced them.
std::string format_explanation(const ContributionReport& report, const gbt::TreeEnsemble& model,
                               std::span<const double> x);

void write_predictions(const std::filesystem::path& path, std::span<const RotationPredictions> rotations);
std::vector<RotationPredictions> read_predictions(const std::filesystem::path& path);
void write_contributions(const std::filesystem::path& path, std::span<const ContributionReport> reports,
                         const gbt::TreeEnsemble& model);
void write_importance(const std::filesystem::path& path, const ImportanceTable& table);

}  // namespace egocast

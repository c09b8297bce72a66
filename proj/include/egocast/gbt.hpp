#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace egocast::gbt {

/// Row-major view over a dense matrix. Missing values are NaN.
struct MatrixView {
    std::span<const double> values;
    std::size_t rows = 0;
    std::size_t cols = 0;

    MatrixView() = default;
    MatrixView(std::span<const double> v, std::size_t r, std::size_t c);

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return values.subspan(r * cols, cols); }
};

struct TrainConfig {
    double learning_rate = 0.001;
    double lambda = 5.0;
    double alpha = 1.0;
    double min_child_weight = 3.0;
    int max_depth = 20;
    int n_estimators = 4000;
    int early_stopping_rounds = 50;
    double gamma = 0.0;
    std::optional<double> base_score;  // mean of the training targets when unset
    std::uint64_t seed = 0;
    unsigned threads = 1;

    void validate() const;
};

/// Split nodes route x < threshold left; missing values follow default_left.
struct TreeNode {
    int feature = -1;  // -1 for leaves
    double threshold = 0.0;
    bool default_left = false;
    int left = -1;
    int right = -1;
    double weight = 0.0;    // leaf output before learning-rate scaling
    double cover = 0.0;     // sum of hessians
    double expected = 0.0;  // cover-weighted mean leaf weight of the subtree
    double gain = 0.0;      // split gain (splits only)
    int depth = 0;

    bool is_leaf() const { return feature < 0; }
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    int leaf_for(std::span<const double> x) const;
    double predict(std::span<const double> x) const { return nodes[static_cast<std::size_t>(leaf_for(x))].weight; }
    int depth() const;
};

struct TrainingMetadata {
    int rounds_trained = 0;            // trees grown before stopping
    int best_rounds = 0;               // trees kept (argmin of validation MAE)
    std::vector<double> validation_mae;  // index t: MAE with the first t trees
};

class TreeEnsemble {
public:
    double base_score = 0.0;
    double learning_rate = 0.001;
    std::vector<std::string> feature_names;
    std::vector<Tree> trees;
    std::vector<double> feature_gain;
    std::vector<std::size_t> feature_splits;
    TrainingMetadata metadata;

    std::size_t feature_count() const { return feature_names.size(); }

    /// base_score + learning_rate * sum of tree outputs. Throws on arity mismatch.
    double predict(std::span<const double> x) const;
    std::vector<double> predict(const MatrixView& x) const;

    /// Recomputes the per-feature gain and split totals from the trees.
    void recompute_importance();
};

double soft_threshold(double g, double alpha);

/// Minimizer of 0.5 (H + lambda) w^2 + G w + alpha |w|.
double leaf_weight(double g, double h, double lambda, double alpha);

/// Structure score soft_threshold(G, alpha)^2 / (H + lambda).
double structure_score(double g, double h, double lambda, double alpha);

double split_gain(double gl, double hl, double gr, double hr, double lambda, double alpha, double gamma);

/// Squared-error boosting with exact greedy splits and validation early
/// stopping on MAE; the result is truncated to the best validation round.
TreeEnsemble train(const MatrixView& x, std::span<const double> y, const MatrixView& x_val,
                   std::span<const double> y_val, const TrainConfig& config,
                   std::vector<std::string> feature_names = {});

inline constexpr int kModelFormatVersion = 1;

void save_model(const TreeEnsemble& model, const std::filesystem::path& path);
/// Throws LoadError on malformed, truncated or wrong-version files.
TreeEnsemble load_model(const std::filesystem::path& path);

std::string to_json(const TreeEnsemble& model);
TreeEnsemble from_json(std::string_view text);

}  // namespace egocast::gbt

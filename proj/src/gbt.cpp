#include "egocast/gbt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "egocast/error.hpp"
#include "egocast/log.hpp"
#include "egocast/parallel.hpp"

namespace egocast::gbt {

using nlohmann::json;

MatrixView::MatrixView(std::span<const double> v, std::size_t r, std::size_t c) : values(v), rows(r), cols(c) {
    if (v.size() != r * c) throw ValidationError("matrix storage does not match its shape");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw ValidationError("learning_rate must be positive");
    if (lambda < 0 || alpha < 0 || gamma < 0) throw ValidationError("regularization terms must be non-negative");
    if (min_child_weight < 0) throw ValidationError("min_child_weight must be non-negative");
    if (max_depth < 0) throw ValidationError("max_depth must be non-negative");
    if (n_estimators < 0) throw ValidationError("n_estimators must be non-negative");
    if (early_stopping_rounds < 1) throw ValidationError("early_stopping_rounds must be at least 1");
}

double soft_threshold(double g, double alpha) {
    if (g > alpha) return g - alpha;
    if (g < -alpha) return g + alpha;
    return 0.0;
}

double leaf_weight(double g, double h, double lambda, double alpha) {
    return -soft_threshold(g, alpha) / (h + lambda);
}

double structure_score(double g, double h, double lambda, double alpha) {
    const double t = soft_threshold(g, alpha);
    return t * t / (h + lambda);
}

double split_gain(double gl, double hl, double gr, double hr, double lambda, double alpha, double gamma) {
    return 0.5 * (structure_score(gl, hl, lambda, alpha) + structure_score(gr, hr, lambda, alpha) -
                  structure_score(gl + gr, hl + hr, lambda, alpha)) -
           gamma;
}

int Tree::leaf_for(std::span<const double> x) const {
    int i = 0;
    for (;;) {
        const TreeNode& n = nodes[static_cast<std::size_t>(i)];
        if (n.is_leaf()) return i;
        const double v = x[static_cast<std::size_t>(n.feature)];
        const bool left = std::isnan(v) ? n.default_left : v < n.threshold;
        i = left ? n.left : n.right;
    }
}

int Tree::depth() const {
    int d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
}

double TreeEnsemble::predict(std::span<const double> x) const {
    if (x.size() != feature_count())
        throw ValidationError("input has " + std::to_string(x.size()) + " features, model expects " +
                              std::to_string(feature_count()));
    double acc = 0.0;
    for (const auto& t : trees) acc += t.predict(x);
    return base_score + learning_rate * acc;
}

std::vector<double> TreeEnsemble::predict(const MatrixView& x) const {
    std::vector<double> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) out[r] = predict(x.row(r));
    return out;
}

void TreeEnsemble::recompute_importance() {
    feature_gain.assign(feature_count(), 0.0);
    feature_splits.assign(feature_count(), 0);
    for (const auto& t : trees)
        for (const auto& n : t.nodes)
            if (!n.is_leaf()) {
                feature_gain[static_cast<std::size_t>(n.feature)] += n.gain;
                ++feature_splits[static_cast<std::size_t>(n.feature)];
            }
}

namespace {

struct Candidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
    bool default_left = false;

    bool better_than(const Candidate& o) const {
        if (gain != o.gain) return gain > o.gain;
        if (feature != o.feature) return o.feature < 0 || (feature >= 0 && feature < o.feature);
        return threshold < o.threshold;
    }
};

struct SortedEntry {
    std::uint32_t row;
    double value;
};

class TreeGrower {
public:
    TreeGrower(const MatrixView& x, const std::vector<std::vector<SortedEntry>>& sorted,
               const std::vector<char>& has_missing, const TrainConfig& cfg)
        : x_(x), sorted_(sorted), has_missing_(has_missing), cfg_(cfg), active_(sorted.size()) {}

    /// Grows one tree; `leaf_of_row` receives the leaf reached by each training row.
    Tree grow(std::span<const double> grad, std::span<const double> hess, std::vector<int>& leaf_of_row) {
        const std::size_t n = x_.rows;
        Tree tree;
        std::vector<double> node_g{0.0}, node_h{0.0};
        for (std::size_t r = 0; r < n; ++r) {
            node_g[0] += grad[r];
            node_h[0] += hess[r];
        }
        tree.nodes.push_back(TreeNode{});
        // Rows leave the per-feature lists once their node stops splitting.
        for (std::size_t f = 0; f < sorted_.size(); ++f) active_[f] = sorted_[f];
        std::vector<int>& pos = leaf_of_row;
        pos.assign(n, 0);
        std::vector<int> frontier{0};

        while (!frontier.empty()) {
            std::vector<int> slot_of(tree.nodes.size(), -1);
            std::vector<int> expand;
            for (int id : frontier) {
                const auto& node = tree.nodes[static_cast<std::size_t>(id)];
                if (node.depth < cfg_.max_depth && node_h[static_cast<std::size_t>(id)] >= 2 * cfg_.min_child_weight) {
                    slot_of[static_cast<std::size_t>(id)] = static_cast<int>(expand.size());
                    expand.push_back(id);
                }
            }
            std::vector<Candidate> best(expand.size());
            if (!expand.empty()) find_splits(grad, hess, pos, slot_of, expand, node_g, node_h, best);

            std::vector<int> next;
            std::vector<int> child_of(tree.nodes.size(), -1);  // left child id per split node
            for (std::size_t s = 0; s < expand.size(); ++s) {
                if (!(best[s].gain > 0) || best[s].feature < 0) continue;
                const int id = expand[s];
                const int left = static_cast<int>(tree.nodes.size());
                const int depth = tree.nodes[static_cast<std::size_t>(id)].depth + 1;
                for (int k = 0; k < 2; ++k) {
                    TreeNode child;
                    child.depth = depth;
                    tree.nodes.push_back(child);
                    node_g.push_back(0.0);
                    node_h.push_back(0.0);
                }
                auto& node = tree.nodes[static_cast<std::size_t>(id)];
                node.feature = best[s].feature;
                node.threshold = best[s].threshold;
                node.default_left = best[s].default_left;
                node.gain = best[s].gain;
                node.left = left;
                node.right = left + 1;
                child_of[static_cast<std::size_t>(id)] = left;
                next.push_back(left);
                next.push_back(left + 1);
            }
            for (std::size_t r = 0; r < n; ++r) {
                const int id = pos[r];
                if (child_of[static_cast<std::size_t>(id)] < 0) continue;
                const auto& node = tree.nodes[static_cast<std::size_t>(id)];
                const double v = x_.at(r, static_cast<std::size_t>(node.feature));
                const bool go_left = std::isnan(v) ? node.default_left : v < node.threshold;
                const int child = go_left ? node.left : node.right;
                pos[r] = child;
                node_g[static_cast<std::size_t>(child)] += grad[r];
                node_h[static_cast<std::size_t>(child)] += hess[r];
            }
            frontier = std::move(next);
        }

        for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
            auto& node = tree.nodes[i];
            node.cover = node_h[i];
            if (node.is_leaf()) node.weight = leaf_weight(node_g[i], node_h[i], cfg_.lambda, cfg_.alpha);
        }
        // Children always follow their parent, so a reverse sweep is bottom-up.
        for (std::size_t i = tree.nodes.size(); i-- > 0;) {
            auto& node = tree.nodes[i];
            if (node.is_leaf()) {
                node.expected = node.weight;
            } else {
                const auto& l = tree.nodes[static_cast<std::size_t>(node.left)];
                const auto& r = tree.nodes[static_cast<std::size_t>(node.right)];
                node.expected = node.cover > 0 ? (l.cover * l.expected + r.cover * r.expected) / node.cover : 0.0;
            }
        }
        return tree;
    }

private:
    void find_splits(std::span<const double> grad, std::span<const double> hess, const std::vector<int>& pos,
                     const std::vector<int>& slot_of, const std::vector<int>& expand,
                     const std::vector<double>& node_g, const std::vector<double>& node_h,
                     std::vector<Candidate>& best) {
        const std::size_t slots = expand.size();
        std::vector<double> tot_g(slots), tot_h(slots);
        parent_score_.resize(slots);
        for (std::size_t s = 0; s < slots; ++s) {
            tot_g[s] = node_g[static_cast<std::size_t>(expand[s])];
            tot_h[s] = node_h[static_cast<std::size_t>(expand[s])];
            parent_score_[s] = structure_score(tot_g[s], tot_h[s], cfg_.lambda, cfg_.alpha);
        }
        row_slot_.resize(pos.size());
        for (std::size_t r = 0; r < pos.size(); ++r) row_slot_[r] = slot_of[static_cast<std::size_t>(pos[r])];
        const unsigned workers = std::max(1u, std::min<unsigned>(cfg_.threads, static_cast<unsigned>(x_.cols)));
        std::vector<std::vector<Candidate>> local(workers, std::vector<Candidate>(slots));
        const std::size_t per = (x_.cols + workers - 1) / workers;
        parallel_for(workers, [&](std::size_t w) {
            const std::size_t begin = w * per;
            const std::size_t end = std::min(x_.cols, begin + per);
            std::vector<double> nm_g(slots), nm_h(slots), gl(slots), hl(slots), last(slots);
            std::vector<char> seen(slots);
            for (std::size_t f = begin; f < end; ++f)
                scan_feature(f, grad, hess, tot_g, tot_h, nm_g, nm_h, gl, hl, last, seen, local[w]);
        }, workers);
        for (const auto& l : local)
            for (std::size_t s = 0; s < slots; ++s)
                if (l[s].better_than(best[s])) best[s] = l[s];
    }

    void scan_feature(std::size_t f, std::span<const double> grad, std::span<const double> hess,
                      const std::vector<double>& tot_g,
                      const std::vector<double>& tot_h, std::vector<double>& nm_g, std::vector<double>& nm_h,
                      std::vector<double>& gl, std::vector<double>& hl, std::vector<double>& last,
                      std::vector<char>& seen, std::vector<Candidate>& best) {
        auto& order = active_[f];
        const std::size_t slots = tot_g.size();
        const bool missing = has_missing_[f] != 0;
        std::fill(nm_g.begin(), nm_g.end(), 0.0);
        std::fill(nm_h.begin(), nm_h.end(), 0.0);
        std::size_t kept = 0;
        for (const SortedEntry& e : order) {
            const int s = row_slot_[e.row];
            if (s < 0) continue;
            order[kept++] = e;
            if (missing) {
                nm_g[static_cast<std::size_t>(s)] += grad[e.row];
                nm_h[static_cast<std::size_t>(s)] += hess[e.row];
            }
        }
        order.resize(kept);
        if (!missing) {
            nm_g = tot_g;
            nm_h = tot_h;
        }
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(hl.begin(), hl.end(), 0.0);
        std::fill(seen.begin(), seen.end(), 0);

        const double mcw = cfg_.min_child_weight;
        const double lambda = cfg_.lambda, alpha = cfg_.alpha, gamma = cfg_.gamma;
        auto score = [&](double g, double h) {
            const double t = g > alpha ? g - alpha : (g < -alpha ? g + alpha : 0.0);
            return t * t / (h + lambda);
        };
        auto offer = [&](std::size_t s, double threshold, double g_left, double h_left, bool default_left) {
            const double gain = 0.5 * (score(g_left, h_left) + score(tot_g[s] - g_left, tot_h[s] - h_left) -
                                       parent_score_[s]) -
                                gamma;
            if (gain < best[s].gain) return;
            const Candidate c{gain, static_cast<int>(f), threshold, default_left};
            if (c.better_than(best[s])) best[s] = c;
        };
        auto consider = [&](std::size_t s, double threshold, double g_left, double h_left) {
            const double h = tot_h[s];
            const double hm = h - nm_h[s];
            // Missing values routed right.
            if (h_left >= mcw && h - h_left >= mcw) offer(s, threshold, g_left, h_left, false);
            // Missing values routed left.
            if (hm > 0) {
                const double hl2 = h_left + hm;
                if (hl2 >= mcw && h - hl2 >= mcw) offer(s, threshold, g_left + (tot_g[s] - nm_g[s]), hl2, true);
            }
        };

        for (const SortedEntry& e : order) {
            const std::uint32_t r = e.row;
            const auto s = static_cast<std::size_t>(row_slot_[r]);
            const double v = e.value;
            if (seen[s] && v > last[s]) {
                double thr = last[s] + (v - last[s]) / 2;
                if (!(thr > last[s]) || thr > v) thr = v;
                consider(s, thr, gl[s], hl[s]);
            }
            gl[s] += grad[r];
            hl[s] += hess[r];
            last[s] = v;
            seen[s] = 1;
        }
        // All observed values on one side, missing values on the other.
        if (missing)
            for (std::size_t s = 0; s < slots; ++s) {
                if (!seen[s] || !(tot_h[s] - nm_h[s] > 0)) continue;
                const double h_left = nm_h[s];
                const double g_left = nm_g[s];
                if (h_left >= mcw && tot_h[s] - h_left >= mcw)
                    offer(s, std::numeric_limits<double>::max(), g_left, h_left, false);
            }
    }

    const MatrixView& x_;
    const std::vector<std::vector<SortedEntry>>& sorted_;
    const std::vector<char>& has_missing_;
    const TrainConfig& cfg_;
    std::vector<std::vector<SortedEntry>> active_;
    std::vector<double> parent_score_;
    std::vector<int> row_slot_;  // slot of each row's node in the current level, -1 when settled
};

double mean_abs_error(std::span<const double> pred, std::span<const double> y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - pred[i]);
    return acc / static_cast<double>(y.size());
}

}  // namespace

TreeEnsemble train(const MatrixView& x, std::span<const double> y, const MatrixView& x_val,
                   std::span<const double> y_val, const TrainConfig& config, std::vector<std::string> feature_names) {
    config.validate();
    if (x.rows == 0 || y.empty()) throw ValidationError("training set is empty");
    if (x.rows != y.size()) throw ValidationError("training rows and targets differ in length");
    if (x_val.rows == 0 || y_val.empty()) throw ValidationError("validation set is empty");
    if (x_val.rows != y_val.size()) throw ValidationError("validation rows and targets differ in length");
    if (x_val.cols != x.cols) throw ValidationError("validation set has a different number of features");
    if (x.rows > std::numeric_limits<std::uint32_t>::max()) throw ValidationError("too many training rows");
    for (double v : y)
        if (!std::isfinite(v)) throw ValidationError("training targets must be finite");
    if (feature_names.empty())
        for (std::size_t f = 0; f < x.cols; ++f) feature_names.push_back("f" + std::to_string(f));
    if (feature_names.size() != x.cols) throw ValidationError("feature name count does not match the matrix");

    TreeEnsemble model;
    model.learning_rate = config.learning_rate;
    model.feature_names = std::move(feature_names);
    const bool constant = std::all_of(y.begin(), y.end(), [&](double v) { return v == y[0]; });
    model.base_score = config.base_score.value_or(
        constant ? y[0] : std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size()));

    std::vector<double> pred(x.rows, model.base_score);
    std::vector<double> pred_val(x_val.rows, model.base_score);
    model.metadata.validation_mae.push_back(mean_abs_error(pred_val, y_val));
    if (constant && model.base_score == y[0]) {
        model.recompute_importance();
        return model;
    }

    std::vector<std::vector<SortedEntry>> sorted(x.cols);
    std::vector<char> has_missing(x.cols, 0);
    for (std::size_t f = 0; f < x.cols; ++f) {
        auto& order = sorted[f];
        for (std::size_t r = 0; r < x.rows; ++r) {
            const double v = x.at(r, f);
            if (std::isnan(v))
                has_missing[f] = 1;
            else
                order.push_back({static_cast<std::uint32_t>(r), v});
        }
        std::stable_sort(order.begin(), order.end(),
                         [](const SortedEntry& a, const SortedEntry& b) { return a.value < b.value; });
    }

    TreeGrower grower(x, sorted, has_missing, config);
    std::vector<double> grad(x.rows), hess(x.rows, 1.0);
    std::vector<int> leaf_of_row;
    int best_rounds = 0;
    double best_mae = model.metadata.validation_mae.front();
    for (int round = 0; round < config.n_estimators; ++round) {
        for (std::size_t r = 0; r < x.rows; ++r) grad[r] = pred[r] - y[r];
        Tree tree = grower.grow(grad, hess, leaf_of_row);
        for (std::size_t r = 0; r < x.rows; ++r)
            pred[r] += config.learning_rate * tree.nodes[static_cast<std::size_t>(leaf_of_row[r])].weight;
        for (std::size_t r = 0; r < x_val.rows; ++r) pred_val[r] += config.learning_rate * tree.predict(x_val.row(r));
        model.trees.push_back(std::move(tree));
        const double mae = mean_abs_error(pred_val, y_val);
        model.metadata.validation_mae.push_back(mae);
        const int rounds = round + 1;
        if (mae < best_mae) {
            best_mae = mae;
            best_rounds = rounds;
        } else if (rounds - best_rounds >= config.early_stopping_rounds) {
            break;
        }
    }
    model.metadata.rounds_trained = static_cast<int>(model.trees.size());
    model.metadata.best_rounds = best_rounds;
    model.trees.resize(static_cast<std::size_t>(best_rounds));
    model.recompute_importance();
    log::debug("trained ", model.metadata.rounds_trained, " rounds, kept ", best_rounds, " (validation MAE ",
               best_mae, ")");
    return model;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

json node_to_json(const Tree& t, int id) {
    const TreeNode& n = t.nodes[static_cast<std::size_t>(id)];
    json j = {{"cover", n.cover}, {"expected_value", n.expected}};
    if (n.is_leaf()) {
        j["leaf"] = n.weight;
        return j;
    }
    j["feature"] = n.feature;
    j["threshold"] = n.threshold;
    j["default_left"] = n.default_left;
    j["gain"] = n.gain;
    j["left"] = node_to_json(t, n.left);
    j["right"] = node_to_json(t, n.right);
    return j;
}

int node_from_json(const json& j, Tree& t, int depth, std::size_t n_features) {
    const int id = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    TreeNode n;
    n.depth = depth;
    n.cover = j.at("cover").get<double>();
    n.expected = j.at("expected_value").get<double>();
    if (j.contains("leaf")) {
        n.weight = j.at("leaf").get<double>();
        t.nodes[static_cast<std::size_t>(id)] = n;
        return id;
    }
    n.feature = j.at("feature").get<int>();
    if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= n_features)
        throw LoadError("model node references feature " + std::to_string(n.feature) + " out of range");
    n.threshold = j.at("threshold").get<double>();
    n.default_left = j.at("default_left").get<bool>();
    n.gain = j.at("gain").get<double>();
    t.nodes[static_cast<std::size_t>(id)] = n;
    const int left = node_from_json(j.at("left"), t, depth + 1, n_features);
    const int right = node_from_json(j.at("right"), t, depth + 1, n_features);
    t.nodes[static_cast<std::size_t>(id)].left = left;
    t.nodes[static_cast<std::size_t>(id)].right = right;
    return id;
}

}  // namespace

std::string to_json(const TreeEnsemble& model) {
    json trees = json::array();
    for (const auto& t : model.trees) trees.push_back(node_to_json(t, 0));
    json doc = {{"format", "egocast-gbt"},
                {"version", kModelFormatVersion},
                {"base_score", model.base_score},
                {"learning_rate", model.learning_rate},
                {"feature_names", model.feature_names},
                {"metadata",
                 {{"rounds_trained", model.metadata.rounds_trained},
                  {"best_rounds", model.metadata.best_rounds},
                  {"validation_mae", model.metadata.validation_mae}}},
                {"trees", std::move(trees)}};
    return doc.dump(1);
}

TreeEnsemble from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw LoadError(std::string("model file is not valid JSON: ") + e.what());
    }
    try {
        if (doc.value("format", "") != "egocast-gbt") throw LoadError("not an egocast model file");
        const int version = doc.at("version").get<int>();
        if (version != kModelFormatVersion)
            throw LoadError("model format version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kModelFormatVersion) + ")");
        TreeEnsemble m;
        m.base_score = doc.at("base_score").get<double>();
        m.learning_rate = doc.at("learning_rate").get<double>();
        m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
        const auto& meta = doc.at("metadata");
        m.metadata.rounds_trained = meta.at("rounds_trained").get<int>();
        m.metadata.best_rounds = meta.at("best_rounds").get<int>();
        m.metadata.validation_mae = meta.at("validation_mae").get<std::vector<double>>();
        for (const auto& t : doc.at("trees")) {
            Tree tree;
            node_from_json(t, tree, 0, m.feature_names.size());
            m.trees.push_back(std::move(tree));
        }
        m.recompute_importance();
        return m;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed model file: ") + e.what());
    }
}

void save_model(const TreeEnsemble& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json(model) << '\n';
}

TreeEnsemble load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open model file " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

}  // namespace egocast::gbt

#include "egocast/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "egocast/csv.hpp"
#include "egocast/error.hpp"

namespace egocast {

namespace {

void check_pairs(std::span<const double> y, std::span<const double> p) {
    if (y.empty()) throw ValidationError("metric over an empty set");
    if (y.size() != p.size()) throw ValidationError("targets and predictions differ in length");
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    const double hi = *mid;
    if (n % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

std::string euro(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.0f", v);
    std::string digits = buf;
    const bool neg = !digits.empty() && digits[0] == '-';
    if (neg) digits.erase(0, 1);
    std::string out;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i && (digits.size() - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return (neg ? "-" : "") + out;
}

template <typename Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    fn(out);
}

}  // namespace

double mae(std::span<const double> y, std::span<const double> prediction) {
    check_pairs(y, prediction);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += std::abs(y[i] - prediction[i]);
    return acc / static_cast<double>(y.size());
}

double mdape(std::span<const double> y, std::span<const double> prediction) {
    check_pairs(y, prediction);
    std::vector<double> p(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) throw ValidationError("MdAPE is undefined for a zero target");
        p[i] = std::abs((y[i] - prediction[i]) / y[i]);
    }
    return median(std::move(p)) * 100.0;
}

double ContributionReport::total() const {
    return bias + std::accumulate(contributions.begin(), contributions.end(), 0.0);
}

ContributionReport path_contributions(const gbt::TreeEnsemble& model, std::span<const double> x, std::size_t top_k) {
    if (x.size() != model.feature_count())
        throw ValidationError("input has " + std::to_string(x.size()) + " features, model expects " +
                              std::to_string(model.feature_count()));
    ContributionReport r;
    r.contributions.assign(model.feature_count(), 0.0);
    double roots = 0.0;
    for (const auto& tree : model.trees) {
        roots += tree.nodes.front().expected;
        int id = 0;
        for (;;) {
            const auto& node = tree.nodes[static_cast<std::size_t>(id)];
            if (node.is_leaf()) break;
            const double v = x[static_cast<std::size_t>(node.feature)];
            const int next = (std::isnan(v) ? node.default_left : v < node.threshold) ? node.left : node.right;
            const auto& child = tree.nodes[static_cast<std::size_t>(next)];
            r.contributions[static_cast<std::size_t>(node.feature)] +=
                model.learning_rate * (child.expected - node.expected);
            id = next;
        }
    }
    r.bias = model.base_score + model.learning_rate * roots;
    r.prediction = model.predict(x);

    std::vector<std::size_t> order(r.contributions.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return r.contributions[a] > r.contributions[b]; });
    for (std::size_t i : order)
        if (r.contributions[i] > 0 && r.top_positive.size() < top_k) r.top_positive.push_back(i);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (r.contributions[*it] < 0 && r.top_negative.size() < top_k) r.top_negative.push_back(*it);
    return r;
}

ImportanceTable feature_importance(const gbt::TreeEnsemble& model, const std::vector<std::string>* groups) {
    if (groups && groups->size() != model.feature_count())
        throw ValidationError("grouping must label every model feature");
    gbt::TreeEnsemble copy_stats;
    copy_stats.feature_names = model.feature_names;
    copy_stats.trees = model.trees;
    copy_stats.recompute_importance();

    ImportanceTable t;
    for (std::size_t f = 0; f < model.feature_count(); ++f)
        t.rows.push_back({model.feature_names[f], copy_stats.feature_gain[f], copy_stats.feature_splits[f],
                          groups ? (*groups)[f] : std::string{}});
    std::stable_sort(t.rows.begin(), t.rows.end(), [](const auto& a, const auto& b) { return a.gain > b.gain; });
    if (groups) {
        double total = 0.0;
        for (const auto& g : *groups) t.group_share.emplace(g, 0.0);
        for (const auto& row : t.rows) {
            t.group_share[row.group] += row.gain;
            total += row.gain;
        }
        if (total > 0)
            for (auto& [g, share] : t.group_share) share /= total;
    }
    return t;
}

std::map<std::string, double> contribution_group_shares(std::span<const ContributionReport> reports,
                                                        const std::vector<std::string>& groups) {
    std::map<std::string, double> out;
    for (const auto& g : groups) out.emplace(g, 0.0);
    double total = 0.0;
    for (const auto& r : reports) {
        if (r.contributions.size() != groups.size()) throw ValidationError("grouping must label every feature");
        for (std::size_t f = 0; f < groups.size(); ++f) {
            out[groups[f]] += std::abs(r.contributions[f]);
            total += std::abs(r.contributions[f]);
        }
    }
    if (total > 0)
        for (auto& [g, v] : out) v /= total;
    return out;
}

RunReport evaluate_run(std::span<const RotationPredictions> rotations) {
    if (rotations.size() != 5)
        throw ValidationError("expected 5 rotations, got " + std::to_string(rotations.size()));
    RunReport rep;
    std::vector<double> all_y, all_p;
    for (std::size_t i = 0; i < rotations.size(); ++i) {
        const auto& r = rotations[i];
        if (r.y.empty()) throw ValidationError("rotation " + std::to_string(i) + " has no hold-out predictions");
        rep.rotation_mae.push_back(mae(r.y, r.prediction));
        rep.rotation_mdape.push_back(mdape(r.y, r.prediction));
        rep.rotation_count.push_back(r.y.size());
        all_y.insert(all_y.end(), r.y.begin(), r.y.end());
        all_p.insert(all_p.end(), r.prediction.begin(), r.prediction.end());
    }
    rep.pooled_mae = mae(all_y, all_p);
    rep.pooled_mdape = mdape(all_y, all_p);
    rep.pooled_count = all_y.size();
    return rep;
}

std::string format_comparison(const std::vector<std::pair<std::string, RunReport>>& variants) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-4s %-32s %14s %10s %8s\n", "#", "Model", "MAE (EUR)", "MdAPE (%)", "n");
    os << line;
    static const char* roman[] = {"I", "II", "III", "IV", "V", "VI"};
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const auto& [name, rep] = variants[i];
        std::snprintf(line, sizeof(line), "%-4s %-32s %14s %10.2f %8zu\n", i < 6 ? roman[i] : "-", name.c_str(),
                      euro(rep.pooled_mae).c_str(), rep.pooled_mdape, rep.pooled_count);
        os << line;
    }
    return os.str();
}

std::string format_explanation(const ContributionReport& report, const gbt::TreeEnsemble& model,
                               std::span<const double> x) {
    std::ostringstream os;
    char line[200];
    auto value_of = [&](std::size_t f) {
        if (std::isnan(x[f])) return std::string("missing");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6g", x[f]);
        return std::string(buf);
    };
    os << "Listing " << report.listing_id << '\n';
    os << "  predicted price   " << euro(report.prediction) << " EUR\n";
    os << "  bias (average)    " << euro(report.bias) << " EUR\n";
    os << "  Top positive contributions\n";
    for (std::size_t f : report.top_positive) {
        std::snprintf(line, sizeof(line), "    + %-44s %14s  (value %s)\n", model.feature_names[f].c_str(),
                      euro(report.contributions[f]).c_str(), value_of(f).c_str());
        os << line;
    }
    os << "  Top negative contributions\n";
    for (std::size_t f : report.top_negative) {
        std::snprintf(line, sizeof(line), "    - %-44s %14s  (value %s)\n", model.feature_names[f].c_str(),
                      euro(report.contributions[f]).c_str(), value_of(f).c_str());
        os << line;
    }
    std::snprintf(line, sizeof(line), "  bias + contributions = %s EUR\n", euro(report.total()).c_str());
    os << line;
    return os.str();
}

void write_predictions(const std::filesystem::path& path, std::span<const RotationPredictions> rotations) {
    write_file(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"id", "rotation", "y", "prediction"});
        for (std::size_t r = 0; r < rotations.size(); ++r)
            for (std::size_t i = 0; i < rotations[r].ids.size(); ++i)
                w.row({rotations[r].ids[i], std::to_string(r), csv::format_double(rotations[r].y[i]),
                       csv::format_double(rotations[r].prediction[i])});
    });
}

std::vector<RotationPredictions> read_predictions(const std::filesystem::path& path) {
    const auto t = csv::Table::read(path);
    const std::size_t c_id = t.require("id");
    const std::size_t c_rot = t.require("rotation");
    const std::size_t c_y = t.require("y");
    const std::size_t c_p = t.require("prediction");
    std::vector<RotationPredictions> out;
    for (std::size_t i = 0; i < t.rows(); ++i) {
        const auto& row = t.row(i);
        const auto r = static_cast<std::size_t>(std::stoul(row[c_rot]));
        if (out.size() <= r) out.resize(r + 1);
        out[r].ids.push_back(row[c_id]);
        out[r].y.push_back(csv::parse_double(row[c_y]).value_or(0.0));
        out[r].prediction.push_back(csv::parse_double(row[c_p]).value_or(0.0));
    }
    return out;
}

void write_contributions(const std::filesystem::path& path, std::span<const ContributionReport> reports,
                         const gbt::TreeEnsemble& model) {
    write_file(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"id", "feature", "value"});
        for (const auto& r : reports) {
            w.row({r.listing_id, "(bias)", csv::format_double(r.bias)});
            for (std::size_t f = 0; f < r.contributions.size(); ++f)
                if (r.contributions[f] != 0.0)
                    w.row({r.listing_id, model.feature_names[f], csv::format_double(r.contributions[f])});
        }
    });
}

void write_importance(const std::filesystem::path& path, const ImportanceTable& table) {
    write_file(path, [&](std::ostream& out) {
        csv::Writer w(out);
        w.row({"feature", "gain", "splits", "group"});
        for (const auto& r : table.rows)
            w.row({r.feature, csv::format_double(r.gain), std::to_string(r.splits), r.group});
    });
}

}  // namespace egocast

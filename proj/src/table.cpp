#include "egocast/table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "egocast/csv.hpp"
#include "egocast/error.hpp"
#include "egocast/geo.hpp"

namespace egocast {

FeatureTable::FeatureTable(std::vector<std::string> row_ids, std::vector<ColumnInfo> columns)
    : row_ids_(std::move(row_ids)), columns_(std::move(columns)), values_(row_ids_.size() * columns_.size(), kMissing) {}

std::vector<std::string> FeatureTable::column_names() const {
    std::vector<std::string> out;
    out.reserve(columns_.size());
    for (const auto& c : columns_) out.push_back(c.name);
    return out;
}

std::optional<std::size_t> FeatureTable::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
        if (columns_[i].name == name) return i;
    return std::nullopt;
}

std::optional<std::size_t> FeatureTable::row_index(std::string_view id) const {
    auto it = std::lower_bound(row_ids_.begin(), row_ids_.end(), id);
    if (it != row_ids_.end() && *it == id) return static_cast<std::size_t>(it - row_ids_.begin());
    for (std::size_t i = 0; i < row_ids_.size(); ++i)
        if (row_ids_[i] == id) return i;
    return std::nullopt;
}

void FeatureTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    std::vector<std::string> header{"block_id"};
    for (const auto& c : columns_) header.push_back(c.name);
    w.row(header);
    for (std::size_t r = 0; r < rows(); ++r) {
        std::vector<std::string> fields{row_ids_[r]};
        for (double v : row(r)) fields.push_back(csv::format_double(v));
        w.row(fields);
    }
}

FeatureTable FeatureTable::read_csv(const std::filesystem::path& path) {
    const auto t = csv::Table::read(path);
    if (t.header().empty() || t.header().front() != "block_id")
        throw LoadError(path.string() + ": first column must be block_id");
    std::vector<ColumnInfo> cols;
    for (std::size_t c = 1; c < t.header().size(); ++c) cols.push_back({t.header()[c], "", ""});
    std::vector<std::string> ids;
    for (std::size_t r = 0; r < t.rows(); ++r) ids.push_back(t.row(r)[0]);
    FeatureTable table(std::move(ids), std::move(cols));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < table.cols(); ++c) {
            try {
                auto v = csv::parse_double(t.row(r)[c + 1]);
                table.at(r, c) = v ? *v : kMissing;
            } catch (const std::invalid_argument& e) {
                throw LoadError(path.string() + " row " + std::to_string(r + 1) + ": " + e.what());
            }
        }
    return table;
}

void FeatureTable::write_schema(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    csv::Writer w(out);
    w.row({"name", "unit", "source"});
    for (const auto& c : columns_) w.row({c.name, c.unit, c.source});
}

bool operator==(const FeatureTable& a, const FeatureTable& b) {
    if (a.row_ids_ != b.row_ids_ || a.cols() != b.cols()) return false;
    for (std::size_t c = 0; c < a.cols(); ++c)
        if (a.columns_[c].name != b.columns_[c].name) return false;
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
        const double x = a.values_[i];
        const double y = b.values_[i];
        if (std::isnan(x) != std::isnan(y)) return false;
        if (!std::isnan(x) && x != y) return false;
    }
    return true;
}

}  // namespace egocast

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace egocast {

struct ColumnInfo {
    std::string name;
    std::string unit;
    std::string source;
};

/// Dense blocks x features table (row-major). Missing cells hold kMissing.
class FeatureTable {
public:
    FeatureTable() = default;
    FeatureTable(std::vector<std::string> row_ids, std::vector<ColumnInfo> columns);

    std::size_t rows() const { return row_ids_.size(); }
    std::size_t cols() const { return columns_.size(); }

    const std::vector<std::string>& row_ids() const { return row_ids_; }
    const std::vector<ColumnInfo>& columns() const { return columns_; }
    std::vector<std::string> column_names() const;

    double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols(), cols()}; }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols(), cols()}; }

    std::optional<std::size_t> column_index(std::string_view name) const;
    std::optional<std::size_t> row_index(std::string_view id) const;

    /// CSV with a `block_id` column followed by the feature columns.
    void write_csv(const std::filesystem::path& path) const;
    static FeatureTable read_csv(const std::filesystem::path& path);

    /// Sidecar schema: one `name,unit,source` line per column.
    void write_schema(const std::filesystem::path& path) const;

    friend bool operator==(const FeatureTable& a, const FeatureTable& b);

private:
    std::vector<std::string> row_ids_;
    std::vector<ColumnInfo> columns_;
    std::vector<double> values_;
};

}  // namespace egocast

#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace egocast::csv {

/// In-memory CSV table with a header row. Quoted fields (RFC 4180) are
/// supported so WKT polygons can carry commas.
class Table {
public:
    static Table read(const std::filesystem::path& path);
    static Table parse(std::string_view text, std::string_view source = "<memory>");

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    const std::vector<std::string>& row(std::size_t i) const { return rows_[i]; }

    /// Column index by name, or nullopt.
    std::optional<std::size_t> find(std::string_view name) const;
    /// Column index by name; throws LoadError naming the source if absent.
    std::size_t require(std::string_view name) const;

    const std::string& source() const { return source_; }

private:
    std::string source_;
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Streams rows to a file; quotes fields only when needed.
class Writer {
public:
    explicit Writer(std::ostream& out) : out_(out) {}
    void row(const std::vector<std::string>& fields);

private:
    std::ostream& out_;
};

/// Shortest representation that round-trips exactly; empty for missing (NaN).
std::string format_double(double v);

/// Parses a real; empty cell yields nullopt. Throws std::invalid_argument on junk.
std::optional<double> parse_double(std::string_view s);

}  // namespace egocast::csv

#include "egocast/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "egocast/error.hpp"

namespace egocast::csv {

Table Table::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

Table Table::parse(std::string_view text, std::string_view source) {
    Table t;
    t.source_ = std::string(source);
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;
    std::size_t line = 1;

    auto finish_record = [&] {
        record.push_back(std::move(field));
        field.clear();
        const bool blank = record.size() == 1 && record.front().empty();
        if (!blank) {
            if (t.header_.empty()) {
                t.header_ = std::move(record);
            } else {
                if (record.size() != t.header_.size())
                    throw LoadError(t.source_ + ": row at line " + std::to_string(line) + " has " +
                                    std::to_string(record.size()) + " fields, expected " +
                                    std::to_string(t.header_.size()));
                t.rows_.push_back(std::move(record));
            }
        }
        record.clear();
        any = false;
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
            case '"': quoted = true; any = true; break;
            case ',': record.push_back(std::move(field)); field.clear(); any = true; break;
            case '\r': break;
            case '\n': finish_record(); ++line; break;
            default: field.push_back(c); any = true;
        }
    }
    if (quoted) throw LoadError(t.source_ + ": unterminated quoted field");
    if (any || !field.empty()) finish_record();
    return t;
}

std::optional<std::size_t> Table::find(std::string_view name) const {
    for (std::size_t i = 0; i < header_.size(); ++i)
        if (header_[i] == name) return i;
    return std::nullopt;
}

std::size_t Table::require(std::string_view name) const {
    if (auto i = find(name)) return *i;
    throw LoadError(source_ + ": missing column '" + std::string(name) + "'");
}

void Writer::row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out_ << ',';
        const auto& f = fields[i];
        if (f.find_first_of(",\"\n") == std::string::npos) {
            out_ << f;
            continue;
        }
        out_ << '"';
        for (char c : f) {
            if (c == '"') out_ << '"';
            out_ << c;
        }
        out_ << '"';
    }
    out_ << '\n';
}

std::string format_double(double v) {
    if (std::isnan(v)) return {};
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v))
        throw std::invalid_argument("not a number: '" + std::string(s) + "'");
    return v;
}

}  // namespace egocast::csv

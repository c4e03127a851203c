#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace readmit::csv {

/// Splits one CSV record. Handles RFC 4180 quoting; embedded newlines are not
/// supported (none of the input tables use them).
std::vector<std::string> split_record(std::string_view line);

std::string quote_field(std::string_view field);

/// Headered table reader with column lookup by name.
class Reader {
public:
    Reader(std::istream& in, const std::filesystem::path& origin);

    /// Index of a required column; throws SchemaError naming the column and file.
    std::size_t require(std::string_view column) const;
    std::optional<std::size_t> find(std::string_view column) const;

    /// Reads the next record into `fields`. Returns false at end of input.
    bool next(std::vector<std::string>& fields);

    std::size_t line_number() const { return line_; }

private:
    std::istream& in_;
    std::string origin_;
    std::unordered_map<std::string, std::size_t> columns_;
    std::size_t width_ = 0;
    std::size_t line_ = 0;
};

}  // namespace readmit::csv

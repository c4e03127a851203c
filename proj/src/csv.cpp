#include "readmit/csv.hpp"

#include <algorithm>
#include <cctype>

#include "readmit/error.hpp"

namespace readmit::csv {

namespace {

std::string upper_trimmed(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

}  // namespace

std::vector<std::string> split_record(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string quote_field(std::string_view field) {
    if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

Reader::Reader(std::istream& in, const std::filesystem::path& origin)
    : in_(in), origin_(origin.string()) {
    std::string header;
    if (!std::getline(in_, header)) throw SchemaError(origin_ + ": missing header row");
    ++line_;
    if (header.size() >= 3 && header.compare(0, 3, "\xEF\xBB\xBF") == 0) header.erase(0, 3);
    const auto names = split_record(header);
    width_ = names.size();
    for (std::size_t i = 0; i < names.size(); ++i) columns_.emplace(upper_trimmed(names[i]), i);
}

std::optional<std::size_t> Reader::find(std::string_view column) const {
    const auto it = columns_.find(upper_trimmed(column));
    if (it == columns_.end()) return std::nullopt;
    return it->second;
}

std::size_t Reader::require(std::string_view column) const {
    if (auto idx = find(column)) return *idx;
    throw SchemaError(origin_ + ": missing required column " + std::string(column));
}

bool Reader::next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_;
        if (line.empty() || line == "\r") continue;
        fields = split_record(line);
        if (fields.size() < width_) fields.resize(width_);
        return true;
    }
    return false;
}

}  // namespace readmit::csv

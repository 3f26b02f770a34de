#pragma once

// Artifact writers. Every file goes to a temporary sibling first and is
// renamed into place, so readers never observe a partial artifact.

#include "ccfold/app/config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace ccfold::app {

namespace fs = std::filesystem;

inline void write_atomic(const fs::path& path, const std::string& content)
{
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        CCFOLD_THROW_IF(!f, ErrorCode::Io, "cannot open '" + tmp.string() + "' for writing");
        f << content;
        f.flush();
        CCFOLD_THROW_IF(!f, ErrorCode::Io, "write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path, ec);
    CCFOLD_THROW_IF(ec, ErrorCode::Io, "cannot move '" + tmp.string() + "' into place: " + ec.message());
}

inline void write_json(const fs::path& path, const Json& j) { write_atomic(path, j.dump(2) + "\n"); }

inline std::string read_file(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    CCFOLD_THROW_IF(!f, ErrorCode::Io, "cannot read '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Shortest text that reads back to the same double.
inline std::string exact(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// Builds CSV text row by row.
class Csv {
public:
    explicit Csv(const std::vector<std::string>& header) { row_strings(header); }

    Csv& row_strings(const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
        return *this;
    }

    [[nodiscard]] std::string str() const { return out_.str(); }

private:
    std::ostringstream out_;
};

/// Splits CSV text into rows of cells; the header row is dropped.
inline std::vector<std::vector<std::string>> parse_csv_body(const std::string& text)
{
    std::vector<std::vector<std::string>> rows;
    std::stringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (header) {
            header = false;
            continue;
        }
        if (line.empty()) continue;
        rows.push_back(detail::split_list(line));
    }
    return rows;
}

} // namespace ccfold::app

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace wah {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(const std::filesystem::path& path);

// Vertical bar chart of one numeric series; labels drawn under the bars.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values);

// Line chart of one numeric series against row index.
std::string svg_line_chart(const std::string& title, const std::vector<double>& values);

// Emits one SVG per numeric column of the table (bar chart keyed by the
// first column) plus an aligned text rendering of the table.
std::string render_report(const std::filesystem::path& table_csv, const std::filesystem::path& out_dir);

}  // namespace wah

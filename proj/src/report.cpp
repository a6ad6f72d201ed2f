#include "wah/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace wah {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field.push_back(ch);
        }
    }
    out.push_back(field);
    return out;
}

bool parse_number(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

}  // namespace

int CsvTable::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_csv: cannot open " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            table.header = split_line(line);
            first = false;
        } else {
            table.rows.push_back(split_line(line));
        }
    }
    if (first) throw std::runtime_error("read_csv: empty file " + path.string());
    return table;
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
    if (labels.size() != values.size()) throw std::invalid_argument("svg_bar_chart: size mismatch");
    const int bar_w = 46, gap = 18, chart_h = 220, margin = 48, label_h = 70;
    const int width = margin * 2 + static_cast<int>(values.size()) * (bar_w + gap);
    const int height = margin + chart_h + label_h;
    double vmax = 1e-12;
    for (double v : values) vmax = std::max(vmax, v);

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n";
    svg << "<text x='" << margin << "' y='24' font-size='15' font-family='sans-serif'>" << title
        << "</text>\n";
    svg << "<line x1='" << margin << "' y1='" << margin + chart_h << "' x2='" << width - margin / 2
        << "' y2='" << margin + chart_h << "' stroke='#444'/>\n";
    for (size_t i = 0; i < values.size(); ++i) {
        double h = values[i] / vmax * (chart_h - 10);
        int x = margin + static_cast<int>(i) * (bar_w + gap);
        double y = margin + chart_h - h;
        svg << "<rect x='" << x << "' y='" << fmt(y) << "' width='" << bar_w << "' height='"
            << fmt(h) << "' fill='#4878a8'/>\n";
        svg << "<text x='" << x + bar_w / 2 << "' y='" << fmt(y - 4)
            << "' font-size='11' text-anchor='middle' font-family='sans-serif'>" << fmt(values[i])
            << "</text>\n";
        svg << "<text x='" << x + bar_w / 2 << "' y='" << margin + chart_h + 14
            << "' font-size='10' text-anchor='end' font-family='sans-serif' transform='rotate(-35 "
            << x + bar_w / 2 << " " << margin + chart_h + 14 << ")'>" << labels[i] << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string svg_line_chart(const std::string& title, const std::vector<double>& values) {
    const int width = 640, height = 300, margin = 44;
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n";
    svg << "<text x='" << margin << "' y='24' font-size='15' font-family='sans-serif'>" << title
        << "</text>\n";
    if (!values.empty()) {
        double vmin = values[0], vmax = values[0];
        for (double v : values) {
            vmin = std::min(vmin, v);
            vmax = std::max(vmax, v);
        }
        if (vmax - vmin < 1e-12) vmax = vmin + 1e-12;
        svg << "<polyline fill='none' stroke='#a84848' stroke-width='1.5' points='";
        for (size_t i = 0; i < values.size(); ++i) {
            double x = margin + (width - 2.0 * margin) * i / std::max<size_t>(1, values.size() - 1);
            double y = height - margin - (height - 2.0 * margin) * (values[i] - vmin) / (vmax - vmin);
            svg << fmt(x) << "," << fmt(y) << " ";
        }
        svg << "'/>\n";
        svg << "<text x='" << margin << "' y='" << height - 8
            << "' font-size='11' font-family='sans-serif'>min " << fmt(vmin) << ", max " << fmt(vmax)
            << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string render_report(const std::filesystem::path& table_csv,
                          const std::filesystem::path& out_dir) {
    CsvTable table = read_csv(table_csv);
    std::filesystem::create_directories(out_dir);

    std::ostringstream text;
    std::vector<size_t> widths(table.header.size());
    for (size_t c = 0; c < table.header.size(); ++c) {
        widths[c] = table.header[c].size();
        for (const auto& row : table.rows)
            if (c < row.size()) widths[c] = std::max(widths[c], row[c].size());
    }
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (size_t c = 0; c < table.header.size(); ++c) {
            std::string cell = c < row.size() ? row[c] : "";
            text << cell << std::string(widths[c] - cell.size() + 2, ' ');
        }
        text << "\n";
    };
    emit_row(table.header);
    for (const auto& row : table.rows) emit_row(row);

    for (size_t c = 1; c < table.header.size(); ++c) {
        std::vector<std::string> labels;
        std::vector<double> values;
        bool numeric = !table.rows.empty();
        for (const auto& row : table.rows) {
            double v;
            if (c >= row.size() || !parse_number(row[c], v)) {
                numeric = false;
                break;
            }
            labels.push_back(row.empty() ? "" : row[0]);
            values.push_back(v);
        }
        if (!numeric || values.empty()) continue;
        std::string name = table.header[c];
        std::ofstream os(out_dir / (name + ".svg"));
        os << svg_bar_chart(table_csv.filename().string() + ": " + name, labels, values);
        std::ofstream ls(out_dir / (name + "_line.svg"));
        ls << svg_line_chart(table_csv.filename().string() + ": " + name, values);
    }
    return text.str();
}

}  // namespace wah

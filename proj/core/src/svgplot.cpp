#include "moerlab/svgplot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "moerlab/config.hpp"
#include "moerlab/matrix.hpp"

namespace moerlab {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&apos;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmtg(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

std::vector<PlotSeries> load_plot_series(const std::vector<std::string>& csv_paths) {
    if (csv_paths.empty())
        throw ConfigError("plot: no input files");

    std::vector<PlotSeries> series;
    for (const std::string& path : csv_paths) {
        std::ifstream in(path);
        if (!in)
            throw ConfigError("plot: cannot open '" + path + "'");
        std::string header;
        if (!std::getline(in, header))
            throw ConfigError("plot: '" + path + "' is empty");
        const auto columns = split_csv_line(header);
        std::size_t step_col = columns.size(), value_col = columns.size();
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == "step")
                step_col = i;
            if (columns[i] == "eval_loss" || columns[i] == "mean_eval_loss")
                value_col = i;
        }
        if (step_col == columns.size() || value_col == columns.size())
            throw ConfigError("plot: '" + path +
                              "' lacks step and eval_loss/mean_eval_loss columns");

        PlotSeries s;
        s.label = std::filesystem::path(path).stem().string();
        std::string line;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty())
                continue;
            const auto fields = split_csv_line(line);
            if (fields.size() != columns.size())
                throw ConfigError("plot: '" + path + "' line " + std::to_string(lineno) +
                                  ": field count mismatch");
            try {
                s.points.emplace_back(std::stod(fields[step_col]), std::stod(fields[value_col]));
            } catch (const std::exception&) {
                throw ConfigError("plot: '" + path + "' line " + std::to_string(lineno) +
                                  ": non-numeric value");
            }
        }
        if (s.points.empty())
            throw ConfigError("plot: '" + path + "' has no data rows");
        series.push_back(std::move(s));
    }

    // All plotted files must share one step grid.
    for (std::size_t i = 1; i < series.size(); ++i) {
        bool same = series[i].points.size() == series[0].points.size();
        for (std::size_t p = 0; same && p < series[i].points.size(); ++p)
            same = series[i].points[p].first == series[0].points[p].first;
        if (!same)
            throw ConfigError("plot: '" + csv_paths[i] + "' has a different step grid than '" +
                              csv_paths[0] + "'");
    }
    return series;
}

void write_loss_svg(const std::vector<PlotSeries>& series, std::ostream& out) {
    require(!series.empty(), "write_loss_svg: no series");
    for (const PlotSeries& s : series)
        require(!s.points.empty(), "write_loss_svg: empty series");

    constexpr double width = 880, height = 560;
    constexpr double left = 70, right = 710, top = 30, bottom = 510;

    double xmin = series[0].points[0].first, xmax = xmin;
    double ymin = series[0].points[0].second, ymax = ymin;
    for (const PlotSeries& s : series) {
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    }
    if (xmax == xmin) {
        xmin -= 1.0;
        xmax += 1.0;
    }
    if (ymax == ymin) {
        ymin -= 1.0;
        ymax += 1.0;
    }

    const auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
    // Larger loss sits higher on the page (smaller pixel y).
    const auto py = [&](double y) { return top + (ymax - y) / (ymax - ymin) * (bottom - top); };

    static constexpr std::array<const char*, 8> palette = {
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
        "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f"};

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"white\"/>\n";

    // axes
    out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
        << bottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
        << bottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";

    constexpr int n_ticks = 5;
    for (int t = 0; t < n_ticks; ++t) {
        const double fx = xmin + (xmax - xmin) * t / (n_ticks - 1);
        const double gx = px(fx);
        out << "<line x1=\"" << fmt2(gx) << "\" y1=\"" << bottom << "\" x2=\"" << fmt2(gx)
            << "\" y2=\"" << bottom + 5 << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << fmt2(gx) << "\" y=\"" << bottom + 20
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">"
            << fmtg(fx) << "</text>\n";

        const double fy = ymin + (ymax - ymin) * t / (n_ticks - 1);
        const double gy = py(fy);
        out << "<line x1=\"" << left - 5 << "\" y1=\"" << fmt2(gy) << "\" x2=\"" << left
            << "\" y2=\"" << fmt2(gy) << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
        out << "<text x=\"" << left - 8 << "\" y=\"" << fmt2(gy + 4)
            << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">" << fmtg(fy)
            << "</text>\n";
    }

    out << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 40
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">step</text>\n";
    out << "<text x=\"18\" y=\"" << (top + bottom) / 2
        << "\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" "
           "transform=\"rotate(-90 18 "
        << (top + bottom) / 2 << ")\">eval loss</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const char* color = palette[i % palette.size()];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t p = 0; p < series[i].points.size(); ++p) {
            if (p)
                out << " ";
            out << fmt2(px(series[i].points[p].first)) << ","
                << fmt2(py(series[i].points[p].second));
        }
        out << "\"/>\n";

        const double ly = top + 16 + 20 * static_cast<double>(i);
        out << "<line x1=\"" << right + 12 << "\" y1=\"" << fmt2(ly - 4) << "\" x2=\""
            << right + 36 << "\" y2=\"" << fmt2(ly - 4) << "\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << right + 42 << "\" y=\"" << fmt2(ly)
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(series[i].label)
            << "</text>\n";
    }

    out << "</svg>\n";
}

}  // namespace moerlab

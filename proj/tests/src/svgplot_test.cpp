#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "moerlab/config.hpp"
#include "moerlab/svgplot.hpp"

using namespace moerlab;
namespace fs = std::filesystem;

namespace {

fs::path write_csv(const char* name, const std::string& text) {
    const fs::path path = fs::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << text;
    return path;
}

std::size_t count_occurrences(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

}  // namespace

TEST_CASE("loading run and aggregate csvs") {
    const fs::path run = write_csv("moerlab_plot_run.csv",
                                   "step,train_loss,eval_loss\n"
                                   "0,5.5,5.6\n"
                                   "10,4.4,4.5\n"
                                   "20,3.3,3.4\n");
    const fs::path agg = write_csv(
        "moerlab_plot_agg.csv",
        "step,mean_train_loss,var_train_loss,mean_eval_loss,var_eval_loss\n"
        "0,5.0,0.1,5.1,0.2\n"
        "10,4.0,0.1,4.1,0.2\n"
        "20,3.0,0.1,3.1,0.2\n");

    const auto series = load_plot_series({run.string(), agg.string()});
    REQUIRE(series.size() == 2);
    CHECK(series[0].label == "moerlab_plot_run");
    CHECK(series[1].label == "moerlab_plot_agg");
    REQUIRE(series[0].points.size() == 3);
    CHECK(series[0].points[1].first == 10.0);
    CHECK(series[0].points[1].second == 4.5);
    CHECK(series[1].points[2].second == 3.1);

    fs::remove(run);
    fs::remove(agg);
}

TEST_CASE("loader rejects malformed inputs") {
    CHECK_THROWS_AS(load_plot_series({}), ConfigError);
    CHECK_THROWS_AS(load_plot_series({"/nonexistent/run.csv"}), ConfigError);

    const fs::path empty = write_csv("moerlab_plot_empty.csv", "");
    CHECK_THROWS_AS(load_plot_series({empty.string()}), ConfigError);
    fs::remove(empty);

    const fs::path headers_only = write_csv("moerlab_plot_headers.csv", "step,train_loss,eval_loss\n");
    CHECK_THROWS_AS(load_plot_series({headers_only.string()}), ConfigError);
    fs::remove(headers_only);

    const fs::path wrong_cols = write_csv("moerlab_plot_cols.csv", "a,b,c\n1,2,3\n");
    CHECK_THROWS_AS(load_plot_series({wrong_cols.string()}), ConfigError);
    fs::remove(wrong_cols);

    const fs::path bad_value = write_csv("moerlab_plot_bad.csv",
                                         "step,train_loss,eval_loss\n0,1.0,zebra\n");
    CHECK_THROWS_AS(load_plot_series({bad_value.string()}), ConfigError);
    fs::remove(bad_value);

    const fs::path ragged = write_csv("moerlab_plot_ragged.csv",
                                      "step,train_loss,eval_loss\n0,1.0\n");
    CHECK_THROWS_AS(load_plot_series({ragged.string()}), ConfigError);
    fs::remove(ragged);
}

TEST_CASE("mismatched step grids are rejected") {
    const fs::path a = write_csv("moerlab_plot_grid_a.csv",
                                 "step,train_loss,eval_loss\n0,1,1\n10,1,1\n");
    const fs::path b = write_csv("moerlab_plot_grid_b.csv",
                                 "step,train_loss,eval_loss\n0,1,1\n12,1,1\n");
    CHECK_THROWS_AS(load_plot_series({a.string(), b.string()}), ConfigError);

    const fs::path c = write_csv("moerlab_plot_grid_c.csv",
                                 "step,train_loss,eval_loss\n0,1,1\n");
    CHECK_THROWS_AS(load_plot_series({a.string(), c.string()}), ConfigError);

    fs::remove(a);
    fs::remove(b);
    fs::remove(c);
}

TEST_CASE("svg output: one polyline per series, losses oriented upward") {
    std::vector<PlotSeries> series(2);
    series[0].label = "kern";
    series[0].points = {{0.0, 5.0}, {100.0, 3.0}, {200.0, 2.0}};
    series[1].label = "softmax";
    series[1].points = {{0.0, 5.0}, {100.0, 4.0}, {200.0, 3.5}};

    std::ostringstream out;
    write_loss_svg(series, out);
    const std::string svg = out.str();

    CHECK(svg.find("<svg") == 0);
    CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
    CHECK(count_occurrences(svg, "<polyline") == 2);
    CHECK(svg.find(">kern</text>") != std::string::npos);
    CHECK(svg.find(">softmax</text>") != std::string::npos);
    CHECK(svg.find(">step</text>") != std::string::npos);
    CHECK(svg.find(">eval loss</text>") != std::string::npos);

    // decreasing losses must produce increasing pixel y along the polyline
    const std::size_t start = svg.find("points=\"") + 8;
    const std::size_t end = svg.find('"', start);
    std::istringstream points(svg.substr(start, end - start));
    double prev_y = -1.0;
    std::string pair;
    int parsed = 0;
    while (points >> pair) {
        const std::size_t comma = pair.find(',');
        REQUIRE(comma != std::string::npos);
        const double y = std::stod(pair.substr(comma + 1));
        if (parsed)
            CHECK(y > prev_y);
        prev_y = y;
        ++parsed;
    }
    CHECK(parsed == 3);
}

TEST_CASE("svg escapes markup in labels") {
    std::vector<PlotSeries> series(1);
    series[0].label = "a&b<c>";
    series[0].points = {{0.0, 1.0}, {1.0, 2.0}};
    std::ostringstream out;
    write_loss_svg(series, out);
    const std::string svg = out.str();
    CHECK(svg.find("a&amp;b&lt;c&gt;") != std::string::npos);
    CHECK(svg.find("a&b<c>") == std::string::npos);
}

TEST_CASE("degenerate ranges still render") {
    std::vector<PlotSeries> series(1);
    series[0].label = "flat";
    series[0].points = {{0.0, 2.0}};
    std::ostringstream out;
    write_loss_svg(series, out);
    const std::string svg = out.str();
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("nan") == std::string::npos);
    CHECK(svg.find("inf") == std::string::npos);

    std::ostringstream sink;
    CHECK_THROWS_AS(write_loss_svg({}, sink), ContractViolation);
    std::vector<PlotSeries> empty_points(1);
    empty_points[0].label = "none";
    CHECK_THROWS_AS(write_loss_svg(empty_points, sink), ContractViolation);
}

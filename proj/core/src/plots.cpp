#include "deblurkit/plots.hpp"

#include "deblurkit/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace dbk {

namespace {

struct Color {
    float r, g, b;
};

constexpr Color kBackground{1.0f, 1.0f, 1.0f};
constexpr Color kInk{0.15f, 0.15f, 0.18f};
constexpr Color kAxis{0.45f, 0.45f, 0.50f};
constexpr Color kGrid{0.88f, 0.88f, 0.90f};
constexpr Color kBar{0.22f, 0.45f, 0.70f};

// 5x7 glyphs, one byte per row, low 5 bits used.
using Glyph = std::array<unsigned char, 7>;

const std::map<char, Glyph>& font() {
    static const std::map<char, Glyph> glyphs = {
        {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
        {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
        {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
        {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
        {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
        {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
        {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
        {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
        {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
        {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
        {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
        {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
        {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
        {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
        {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
        {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
        {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
        {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
        {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
        {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    };
    return glyphs;
}

void put_pixel(Image& img, int x, int y, const Color& c) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.at(0, y, x) = c.r;
    img.at(1, y, x) = c.g;
    img.at(2, y, x) = c.b;
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Color& c) {
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) put_pixel(img, x, y, c);
}

void draw_text(Image& img, int x, int y, const std::string& text, const Color& c,
               int scale = 1) {
    const auto& glyphs = font();
    int cx = x;
    for (char raw : text) {
        const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        const auto it = glyphs.find(ch);
        const Glyph g = (it != glyphs.end()) ? it->second
                                             : Glyph{0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};
        for (int row = 0; row < 7; ++row)
            for (int col = 0; col < 5; ++col)
                if (g[static_cast<std::size_t>(row)] & (1 << (4 - col)))
                    fill_rect(img, cx + col * scale, y + row * scale, cx + col * scale + scale - 1,
                              y + row * scale + scale - 1, c);
        cx += 6 * scale;
    }
}

int text_width(const std::string& text, int scale = 1) {
    return static_cast<int>(text.size()) * 6 * scale - (text.empty() ? 0 : scale);
}

std::string format_value(double v) {
    char buf[32];
    if (std::abs(v) >= 1000.0)
        std::snprintf(buf, sizeof(buf), "%.0f", v);
    else
        std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

Image blank_canvas(int width, int height) {
    if (width < 160 || height < 120)
        throw ContractError("plot canvas must be at least 160x120, got " +
                            std::to_string(width) + "x" + std::to_string(height));
    Image img = make_image(3, height, width);
    fill_rect(img, 0, 0, width - 1, height - 1, kBackground);
    return img;
}

struct PlotFrame {
    int left, right, top, bottom; // pixel bounds of the data region
};

// Axes, horizontal gridlines and value labels for a 0..vmax axis.
PlotFrame draw_frame(Image& img, const std::string& title, double vmax) {
    PlotFrame f{56, img.width - 16, 28, img.height - 40};
    draw_text(img, 12, 10, title, kInk);
    const int ticks = 4;
    for (int t = 0; t <= ticks; ++t) {
        const double frac = static_cast<double>(t) / ticks;
        const int y = f.bottom - static_cast<int>(std::lround(frac * (f.bottom - f.top)));
        if (t > 0) fill_rect(img, f.left, y, f.right, y, kGrid);
        const std::string label = format_value(frac * vmax);
        draw_text(img, f.left - 8 - text_width(label), y - 3, label, kAxis);
    }
    fill_rect(img, f.left, f.top, f.left, f.bottom, kAxis);
    fill_rect(img, f.left, f.bottom, f.right, f.bottom, kAxis);
    return f;
}

void draw_columns(Image& img, const PlotFrame& f, const std::vector<double>& heights,
                  const std::vector<std::string>& labels, double vmax, bool label_each) {
    const int n = static_cast<int>(heights.size());
    const int span = f.right - f.left;
    const int slot = span / n;
    const int gap = std::max(2, slot / 6);
    for (int i = 0; i < n; ++i) {
        const int x0 = f.left + i * slot + gap;
        const int x1 = f.left + (i + 1) * slot - gap;
        const double frac = vmax > 0.0 ? heights[static_cast<std::size_t>(i)] / vmax : 0.0;
        const int top =
            f.bottom - static_cast<int>(std::lround(frac * (f.bottom - f.top)));
        if (top < f.bottom) fill_rect(img, x0, top, x1, f.bottom - 1, kBar);
        if (label_each && i < static_cast<int>(labels.size())) {
            const std::string& label = labels[static_cast<std::size_t>(i)];
            const int lx = (x0 + x1) / 2 - text_width(label) / 2;
            draw_text(img, lx, f.bottom + 6, label, kInk);
        }
    }
}

} // namespace

Image render_bar_chart(const BarChartSpec& spec) {
    if (spec.bars.empty()) throw ContractError("bar chart needs at least one bar");
    for (const auto& [label, value] : spec.bars)
        if (!std::isfinite(value) || value < 0.0)
            throw ContractError("bar chart values must be finite and non-negative (\"" + label +
                                "\")");

    Image img = blank_canvas(spec.width, spec.height);
    double vmax = 0.0;
    for (const auto& [label, value] : spec.bars) vmax = std::max(vmax, value);
    if (vmax <= 0.0) vmax = 1.0;
    vmax *= 1.05;

    const PlotFrame f = draw_frame(img, spec.title, vmax);
    std::vector<double> heights;
    std::vector<std::string> labels;
    for (const auto& [label, value] : spec.bars) {
        heights.push_back(value);
        labels.push_back(label);
    }
    draw_columns(img, f, heights, labels, vmax, /*label_each=*/true);

    // Numeric value above each bar.
    const int n = static_cast<int>(heights.size());
    const int slot = (f.right - f.left) / n;
    for (int i = 0; i < n; ++i) {
        const std::string v = format_value(heights[static_cast<std::size_t>(i)]);
        const int cx = f.left + i * slot + slot / 2 - text_width(v) / 2;
        const int top = f.bottom - static_cast<int>(std::lround(
                                       heights[static_cast<std::size_t>(i)] / vmax *
                                       (f.bottom - f.top)));
        draw_text(img, cx, std::max(f.top - 10, top - 10), v, kInk);
    }
    return img;
}

Image render_histogram(const HistogramSpec& spec) {
    if (spec.values.empty()) throw ContractError("histogram needs a non-empty sample");
    if (spec.bins < 1) throw ContractError("histogram needs at least one bin");
    for (double v : spec.values)
        if (!std::isfinite(v)) throw ContractError("histogram values must be finite");

    double lo = *std::min_element(spec.values.begin(), spec.values.end());
    double hi = *std::max_element(spec.values.begin(), spec.values.end());
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    std::vector<double> counts(static_cast<std::size_t>(spec.bins), 0.0);
    for (double v : spec.values) {
        auto bin = static_cast<int>((v - lo) / (hi - lo) * spec.bins);
        if (bin >= spec.bins) bin = spec.bins - 1;
        if (bin < 0) bin = 0;
        counts[static_cast<std::size_t>(bin)] += 1.0;
    }

    Image img = blank_canvas(spec.width, spec.height);
    const double vmax = *std::max_element(counts.begin(), counts.end()) * 1.05;
    const PlotFrame f = draw_frame(img, spec.title, vmax);
    draw_columns(img, f, counts, {}, vmax, /*label_each=*/false);

    // Range labels at the ends of the value axis.
    const std::string left_label = format_value(lo);
    const std::string right_label = format_value(hi);
    draw_text(img, f.left, f.bottom + 6, left_label, kInk);
    draw_text(img, f.right - text_width(right_label), f.bottom + 6, right_label, kInk);
    return img;
}

std::vector<std::filesystem::path>
render_report_plots(const EvalReport& report, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    if (report.has_detection) {
        BarChartSpec spec;
        spec.title = "marker detection rate vs " + report.detection.reference_set;
        for (const auto& [name, counts] : report.detection.sets)
            spec.bars.emplace_back(name, counts.rate);
        const std::filesystem::path path = out_dir / "detection_rates.png";
        write_png(path, render_bar_chart(spec));
        written.push_back(path);
    }

    for (const MetricsSection& section : report.metrics) {
        HistogramSpec spec;
        spec.title = "psnr db (" + section.set_name + ")";
        for (const ImageMetrics& row : section.rows) spec.values.push_back(row.psnr_db);
        const std::filesystem::path path = out_dir / ("psnr_hist_" + section.set_name + ".png");
        write_png(path, render_histogram(spec));
        written.push_back(path);
    }
    return written;
}

} // namespace dbk

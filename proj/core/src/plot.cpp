// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include "trap/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "trap/error.hpp"
#include "trap/image_io.hpp"
#include "trap/util.hpp"

namespace trap {

namespace {

struct Color {
    double r, g, b;
};

constexpr Color kSeriesColors[] = {
    {0.85, 0.25, 0.20}, {0.20, 0.45, 0.85}, {0.20, 0.65, 0.30}, {0.85, 0.60, 0.10},
    {0.55, 0.30, 0.75}, {0.35, 0.35, 0.35}, {0.10, 0.65, 0.65}, {0.80, 0.30, 0.60},
};

// 5x7 bitmap glyphs, row-major, bit 4 = leftmost column.
struct Glyph {
    char c;
    std::uint8_t rows[7];
};

constexpr Glyph kGlyphs[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}}, {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}}, {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}}, {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}}, {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}}, {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}}, {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}}, {'%', {0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}}, {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}}, {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}}, {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}}, {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}}, {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}}, {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}}, {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}}, {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1b, 0x11}}, {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const Glyph* find_glyph(char c) {
    for (const auto& g : kGlyphs)
        if (g.c == c) return &g;
    return nullptr;
}

void put_pixel(ImageTensor& img, int y, int x, const Color& c) {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
    img.at(y, x, 0) = c.r;
    img.at(y, x, 1) = c.g;
    img.at(y, x, 2) = c.b;
}

void draw_text(ImageTensor& img, int y, int x, const std::string& text, const Color& c) {
    int cx = x;
    for (char raw : to_lower(text)) {
        const char ch = (raw >= 'a' && raw <= 'z') ? static_cast<char>(raw - 'a' + 'A') : raw;
        const Glyph* g = find_glyph(ch);
        if (g) {
            for (int ry = 0; ry < 7; ++ry)
                for (int rx = 0; rx < 5; ++rx)
                    if (g->rows[ry] & (0x10 >> rx)) put_pixel(img, y + ry, cx + rx, c);
        }
        cx += 6;
    }
}

void draw_line(ImageTensor& img, int y0, int x0, int y1, int x1, const Color& c) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        put_pixel(img, y0, x0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

std::string format_tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

void render_line_chart(const std::string& path, const std::string& title, const std::vector<PlotSeries>& series,
                       double y_min, double y_max, int width, int height) {
    if (series.empty()) throw Error("render_line_chart: no series");
    double x_min = 0.0, x_max = 1.0;
    bool have_x = false;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw ShapeMismatchError("render_line_chart: series size mismatch");
        for (double v : s.x) {
            if (!have_x) {
                x_min = x_max = v;
                have_x = true;
            }
            x_min = std::min(x_min, v);
            x_max = std::max(x_max, v);
        }
    }
    if (x_max == x_min) x_max = x_min + 1.0;
    if (y_max == y_min) y_max = y_min + 1.0;

    const Color black{0.1, 0.1, 0.1};
    const Color grid{0.85, 0.85, 0.85};
    ImageTensor canvas(height, width, 1.0);
    const int left = 56, right = width - 16, top = 32, bottom = height - 40;

    auto px = [&](double x) {
        return left + static_cast<int>(std::lround((x - x_min) / (x_max - x_min) * (right - left)));
    };
    auto py = [&](double y) {
        return bottom - static_cast<int>(std::lround((y - y_min) / (y_max - y_min) * (bottom - top)));
    };

    for (int i = 0; i <= 5; ++i) {  // horizontal grid + y ticks
        const double v = y_min + (y_max - y_min) * i / 5.0;
        draw_line(canvas, py(v), left, py(v), right, grid);
        draw_text(canvas, py(v) - 3, 8, format_tick(v), black);
    }
    for (int i = 0; i <= 4; ++i) {  // x ticks
        const double v = x_min + (x_max - x_min) * i / 4.0;
        draw_line(canvas, bottom, px(v), bottom + 4, px(v), black);
        draw_text(canvas, bottom + 8, px(v) - 12, format_tick(v), black);
    }
    draw_line(canvas, top, left, bottom, left, black);
    draw_line(canvas, bottom, left, bottom, right, black);
    draw_text(canvas, 12, left, title, black);

    for (std::size_t si = 0; si < series.size(); ++si) {
        const Color& color = kSeriesColors[si % (sizeof(kSeriesColors) / sizeof(kSeriesColors[0]))];
        const auto& s = series[si];
        for (std::size_t i = 0; i + 1 < s.x.size(); ++i)
            draw_line(canvas, py(s.y[i]), px(s.x[i]), py(s.y[i + 1]), px(s.x[i + 1]), color);
        for (std::size_t i = 0; i < s.x.size(); ++i) {  // markers
            const int cy = py(s.y[i]), cx = px(s.x[i]);
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) put_pixel(canvas, cy + dy, cx + dx, color);
        }
        const int ly = top + 4 + static_cast<int>(si) * 12;  // legend
        draw_line(canvas, ly + 3, right - 110, ly + 3, right - 90, color);
        draw_text(canvas, ly, right - 84, s.label, black);
    }
    write_png(path, canvas);
}

}  // namespace trap

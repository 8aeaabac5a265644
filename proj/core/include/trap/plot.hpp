// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "trap/image.hpp"

namespace trap {

/// One polyline of a line chart.
struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal PNG line chart (axes, ticks, 5x7 bitmap labels, legend).
/// y range defaults to [0, 1]; x range spans the data.
void render_line_chart(const std::string& path, const std::string& title, const std::vector<PlotSeries>& series,
                       double y_min = 0.0, double y_max = 1.0, int width = 640, int height = 420);

}  // namespace trap

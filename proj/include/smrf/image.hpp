/*
* smrf - myocardial segmentation with shape model guided random forests.
*
* Copyright 2026 The smrf authors.
*
* Licensed under the Apache License, Version 2.0 (the "License");
* you may not use this file except in compliance with the License.
* You may obtain a copy of the License at
*
*     http://www.apache.org/licenses/LICENSE-2.0
*
* Unless required by applicable law or agreed to in writing, software
* distributed under the License is distributed on an "AS IS" BASIS,
* WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
* See the License for the specific language governing permissions and
* limitations under the License.
*/

#pragma once

#include <cstdint>
#include <vector>

#include "smrf/error.hpp"

namespace smrf {

/// Row-major 2D raster. Pixel (x, y) has its center at continuous
/// coordinates (x + 0.5, y + 0.5); x grows right, y grows down.
template <typename T>
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<T> data;

    Raster() = default;
    Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw DataError("raster dimensions must be positive");
    }

    T& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    const T& at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
    std::size_t size() const { return data.size(); }

    bool same_shape(const Raster& other) const { return width == other.width && height == other.height; }

    bool operator==(const Raster& other) const = default;
};

/// Grayscale intensities in [0, 1].
using Image = Raster<double>;

/// Per-pixel foreground probability in [0, 1].
using ProbabilityMap = Raster<double>;

/// {0, 1} mask.
using BinaryMask = Raster<std::uint8_t>;

inline std::size_t count_ones(const BinaryMask& mask) {
    std::size_t n = 0;
    for (auto v : mask.data) n += (v != 0);
    return n;
}

} // namespace smrf

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

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "smrf/error.hpp"
#include "smrf/image.hpp"

namespace smrf {

inline std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t hash = 0xCBF29CE484222325ULL) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ULL;
    }
    return hash;
}

namespace detail {

inline int next_pnm_int(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
        throw ParseError("malformed PNM header");
    int value = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
        value = value * 10 + (s[pos] - '0');
        ++pos;
    }
    return value;
}

/// Strict-parse guard: reject any key outside the allowed set.
inline void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                               const std::string& context) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* key : allowed)
            if (it.key() == key) {
                ok = true;
                break;
            }
        if (!ok) throw ParseError("unknown key \"" + it.key() + "\" in " + context);
    }
}

} // namespace detail

/// 8-bit binary PGM (P5). Intensities map linearly onto [0, 1].
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::string bytes = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    bytes.reserve(bytes.size() + img.size());
    for (double v : img.data) {
        const double clamped = std::min(1.0, std::max(0.0, v));
        bytes.push_back(static_cast<char>(static_cast<int>(std::lround(clamped * 255.0))));
    }
    write_file_bytes(path, bytes);
}

inline void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
    Image img(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.size(); ++i) img.data[i] = mask.data[i] ? 1.0 : 0.0;
    write_pgm(path, img);
}

inline Image read_pgm(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw ParseError("not a binary PGM (P5) file: " + path.string());
    std::size_t pos = 2;
    const int width = detail::next_pnm_int(bytes, pos);
    const int height = detail::next_pnm_int(bytes, pos);
    const int maxval = detail::next_pnm_int(bytes, pos);
    if (width < 1 || height < 1 || maxval < 1 || maxval > 255)
        throw ParseError("unsupported PGM header: " + path.string());
    ++pos; // single whitespace after maxval
    const std::size_t need = static_cast<std::size_t>(width) * height;
    if (bytes.size() - pos < need) throw ParseError("truncated PGM payload: " + path.string());
    Image img(width, height);
    for (std::size_t i = 0; i < need; ++i) {
        img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
    }
    return img;
}

inline BinaryMask read_mask_pgm(const std::filesystem::path& path) {
    const Image img = read_pgm(path);
    BinaryMask mask(img.width, img.height);
    for (std::size_t i = 0; i < img.size(); ++i) mask.data[i] = img.data[i] >= 0.5 ? 1 : 0;
    return mask;
}

/// Grayscale PFM ("Pf"), 32-bit floats, scale -1.0 (little endian), rows
/// stored bottom-up. Used for probability maps so they reach the fitting
/// stage unquantized.
inline void write_pfm(const std::filesystem::path& path, const ProbabilityMap& map) {
    std::string bytes = "Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n";
    for (int y = map.height - 1; y >= 0; --y) {
        for (int x = 0; x < map.width; ++x) {
            const float v = static_cast<float>(map.at(x, y));
            char buf[4];
            std::memcpy(buf, &v, 4);
            bytes.append(buf, 4);
        }
    }
    write_file_bytes(path, bytes);
}

inline ProbabilityMap read_pfm(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != 'f')
        throw ParseError("not a grayscale PFM file: " + path.string());
    std::size_t pos = 2;
    const int width = detail::next_pnm_int(bytes, pos);
    const int height = detail::next_pnm_int(bytes, pos);
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    std::size_t scale_end = pos;
    while (scale_end < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[scale_end]))) ++scale_end;
    const double scale = std::stod(bytes.substr(pos, scale_end - pos));
    if (scale >= 0.0) throw ParseError("big-endian PFM not supported: " + path.string());
    pos = scale_end + 1;
    const std::size_t need = static_cast<std::size_t>(width) * height * 4;
    if (bytes.size() - pos < need) throw ParseError("truncated PFM payload: " + path.string());
    ProbabilityMap map(width, height);
    for (int y = height - 1; y >= 0; --y) {
        for (int x = 0; x < width; ++x) {
            float v;
            std::memcpy(&v, bytes.data() + pos, 4);
            pos += 4;
            map.at(x, y) = static_cast<double>(v);
        }
    }
    return map;
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_file_bytes(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("JSON parse error in " + path.string() + ": " + e.what());
    }
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
    write_file_bytes(path, j.dump(2) + "\n");
}

} // namespace smrf

// Copyright (c) geocert contributors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "geocert/scene.hpp"

namespace geocert {

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xff));
}

inline void put_chunk(std::vector<unsigned char>& out, const char* type, const std::vector<unsigned char>& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, out.data() + start, static_cast<uInt>(out.size() - start));
    put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// 8-bit PNG bytes (grayscale for 1 channel, RGB for 3). Values are clamped to [0, 1];
/// each pixel is repeated `scale` times in both directions.
inline std::vector<unsigned char> encode_png(const Image& img, int scale = 1) {
    if (img.channels() != 1 && img.channels() != 3) throw std::invalid_argument("encode_png: 1 or 3 channels required");
    if (scale < 1) throw std::invalid_argument("encode_png: scale must be >= 1");
    const int H = img.height() * scale, W = img.width() * scale, C = img.channels();
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(H) * static_cast<std::size_t>(W * C + 1));
    for (int y = 0; y < H; ++y) {
        raw.push_back(0);  // filter: none
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < C; ++c) {
                double v = std::clamp(img.at(y / scale, x / scale, c), 0.0, 1.0);
                raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
        }
    }
    uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> packed(packed_len);
    if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw std::runtime_error("encode_png: deflate failed");
    }
    packed.resize(packed_len);

    std::vector<unsigned char> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<unsigned char> ihdr;
    detail::put_u32(ihdr, static_cast<std::uint32_t>(W));
    detail::put_u32(ihdr, static_cast<std::uint32_t>(H));
    ihdr.insert(ihdr.end(), {8, static_cast<unsigned char>(C == 3 ? 2 : 0), 0, 0, 0});
    detail::put_chunk(out, "IHDR", ihdr);
    detail::put_chunk(out, "IDAT", packed);
    detail::put_chunk(out, "IEND", {});
    return out;
}

inline void write_png(const std::filesystem::path& path, const Image& img, int scale = 1) {
    auto bytes = encode_png(img, scale);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// Places images side by side with a `gap`-pixel white separator.
inline Image hstack(const std::vector<Image>& parts, int gap = 1) {
    if (parts.empty()) throw std::invalid_argument("hstack: no images");
    int H = parts.front().height(), C = parts.front().channels(), W = 0;
    for (const auto& p : parts) {
        if (p.height() != H || p.channels() != C) throw std::invalid_argument("hstack: incompatible images");
        W += p.width();
    }
    W += gap * static_cast<int>(parts.size() - 1);
    Image out(H, W, C, 1.0);
    int x0 = 0;
    for (const auto& p : parts) {
        for (int l = 0; l < H; ++l) {
            for (int k = 0; k < p.width(); ++k) {
                for (int c = 0; c < C; ++c) out.at(l, x0 + k, c) = p.at(l, k, c);
            }
        }
        x0 += p.width() + gap;
    }
    return out;
}

}  // namespace geocert

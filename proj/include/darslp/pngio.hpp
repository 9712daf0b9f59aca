#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace darslp {

// Minimal RGB8 canvas with a dependency-free PNG writer (zlib stream with
// stored deflate blocks). Enough for the analysis plots; CSV twins carry
// the diffable data.
struct Canvas {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    Canvas(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    void dot(int x, int y, int radius, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const std::string& path, const Canvas& canvas);

}  // namespace darslp

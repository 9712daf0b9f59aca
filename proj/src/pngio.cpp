#include "darslp/pngio.hpp"

#include <array>
#include <fstream>

#include "darslp/error.hpp"

namespace darslp {

Canvas::Canvas(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3) {
    for (std::size_t i = 0; i < rgb.size(); i += 3) {
        rgb[i] = r;
        rgb[i + 1] = g;
        rgb[i + 2] = b;
    }
}

void Canvas::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x));
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
}

void Canvas::fill_rect(int x0, int y0, int w, int h, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
    for (int y = y0; y < y0 + h; ++y)
        for (int x = x0; x < x0 + w; ++x) set(x, y, r, g, b);
}

void Canvas::dot(int x, int y, int radius, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dx * dx + dy * dy <= radius * radius) set(x + dx, y + dy, r, g, b);
}

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t n = 0; n < 256; ++n) {
        std::uint32_t c = n;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        table[n] = c;
    }
    return table;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t n) {
    static const auto table = make_crc_table();
    std::uint32_t c = 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t n) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void write_chunk(std::ofstream& f, const char type[4], const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> head;
    put_u32_be(head, static_cast<std::uint32_t>(data.size()));
    f.write(reinterpret_cast<const char*>(head.data()), 4);
    std::vector<std::uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    f.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    std::vector<std::uint8_t> crc;
    put_u32_be(crc, crc32(body.data(), body.size()));
    f.write(reinterpret_cast<const char*>(crc.data()), 4);
}

}  // namespace

void write_png(const std::string& path, const Canvas& canvas) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IOError("cannot open for writing: " + path);
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    f.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr);

    // Raw scanlines, each prefixed by filter byte 0.
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<std::size_t>(canvas.height) * (static_cast<std::size_t>(canvas.width) * 3 + 1));
    for (int y = 0; y < canvas.height; ++y) {
        raw.push_back(0);
        const std::size_t off = 3 * static_cast<std::size_t>(y) * static_cast<std::size_t>(canvas.width);
        raw.insert(raw.end(), canvas.rgb.begin() + static_cast<long>(off),
                   canvas.rgb.begin() + static_cast<long>(off + 3 * static_cast<std::size_t>(canvas.width)));
    }

    // zlib stream with stored (uncompressed) deflate blocks.
    std::vector<std::uint8_t> idat;
    idat.push_back(0x78);
    idat.push_back(0x01);
    std::size_t pos = 0;
    while (pos < raw.size() || raw.empty()) {
        const std::size_t chunk = std::min<std::size_t>(65535, raw.size() - pos);
        const bool final_block = pos + chunk >= raw.size();
        idat.push_back(final_block ? 1 : 0);
        idat.push_back(static_cast<std::uint8_t>(chunk & 0xff));
        idat.push_back(static_cast<std::uint8_t>(chunk >> 8));
        idat.push_back(static_cast<std::uint8_t>(~chunk & 0xff));
        idat.push_back(static_cast<std::uint8_t>((~chunk >> 8) & 0xff));
        idat.insert(idat.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + chunk));
        pos += chunk;
        if (final_block) break;
    }
    put_u32_be(idat, adler32(raw.data(), raw.size()));
    write_chunk(f, "IDAT", idat);
    write_chunk(f, "IEND", {});
    if (!f) throw IOError("write failed: " + path);
}

}  // namespace darslp

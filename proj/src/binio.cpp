#include "darslp/binio.hpp"

#include <cstring>
#include <sstream>

#include "darslp/digest.hpp"

namespace darslp {

namespace {
// The formats are little-endian by definition; this code assumes a
// little-endian host (asserted once at startup).
struct EndianCheck {
    EndianCheck() {
        std::uint32_t v = 1;
        char c;
        std::memcpy(&c, &v, 1);
        if (c != 1) throw Error("big-endian hosts are not supported");
    }
};
const EndianCheck endian_check;
}  // namespace

BinReader::BinReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IOError("cannot open for reading: " + path);
}

void BinReader::read_exact(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
        throw FormatError(path_ + ": truncated " + what, offset_);
    offset_ += n;
}

std::uint32_t BinReader::u32() {
    std::uint32_t v;
    read_exact(&v, 4, "uint32");
    return v;
}

std::uint64_t BinReader::u64() {
    std::uint64_t v;
    read_exact(&v, 8, "uint64");
    return v;
}

void BinReader::magic(const char* expect, std::size_t n) {
    std::string got(n, '\0');
    read_exact(got.data(), n, "magic");
    if (got != std::string(expect, n))
        throw FormatError(path_ + ": bad magic, expected \"" + std::string(expect, n) + "\"",
                          offset_ - n);
}

Mat BinReader::f32_matrix(std::size_t rows, std::size_t cols) {
    std::vector<float> buf(rows * cols);
    read_exact(buf.data(), buf.size() * 4, "float32 payload");
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[r * cols + c];
    return m;
}

Mat BinReader::f64_matrix(std::size_t rows, std::size_t cols) {
    std::vector<double> buf(rows * cols);
    read_exact(buf.data(), buf.size() * 8, "float64 payload");
    Mat m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = buf[r * cols + c];
    return m;
}

std::string BinReader::bytes(std::size_t n) {
    std::string s(n, '\0');
    read_exact(s.data(), n, "bytes");
    return s;
}

bool BinReader::eof_clean() {
    char c;
    in_.read(&c, 1);
    return in_.gcount() == 0;
}

BinWriter::BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw IOError("cannot open for writing: " + path);
}

void BinWriter::u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), 4); }
void BinWriter::u64(std::uint64_t v) { out_.write(reinterpret_cast<const char*>(&v), 8); }
void BinWriter::magic(const char* m, std::size_t n) { out_.write(m, static_cast<std::streamsize>(n)); }

void BinWriter::f32_matrix(const Mat& m) {
    std::vector<float> buf(static_cast<std::size_t>(m.rows()) * static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            buf[static_cast<std::size_t>(r) * static_cast<std::size_t>(m.cols()) + static_cast<std::size_t>(c)] =
                static_cast<float>(m(r, c));
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    if (!out_) throw IOError("write failed: " + path_);
}

void BinWriter::f64_matrix(const Mat& m) {
    std::vector<double> buf(static_cast<std::size_t>(m.rows()) * static_cast<std::size_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            buf[static_cast<std::size_t>(r) * static_cast<std::size_t>(m.cols()) + static_cast<std::size_t>(c)] = m(r, c);
    out_.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (!out_) throw IOError("write failed: " + path_);
}

void BinWriter::bytes(const std::string& s) {
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IOError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IOError("write failed: " + path);
}

std::uint64_t digest_file(const std::string& path) {
    return fnv1a64(read_text_file(path));
}

}  // namespace darslp

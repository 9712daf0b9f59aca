#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "darslp/error.hpp"

namespace darslp {

using Mat = Eigen::MatrixXd;

// Little-endian binary readers/writers for the DPSE1/DEMB1/DLAT1 payloads
// and the checkpoint containers. All on-disk floats in data files are
// float32; in-memory math is double.

class BinReader {
  public:
    explicit BinReader(const std::string& path);
    std::uint32_t u32();
    std::uint64_t u64();
    void magic(const char* expect, std::size_t n);
    // Reads n float32 values into a row-major rows x cols matrix.
    Mat f32_matrix(std::size_t rows, std::size_t cols);
    Mat f64_matrix(std::size_t rows, std::size_t cols);
    std::string bytes(std::size_t n);
    std::size_t offset() const { return offset_; }
    bool eof_clean();

  private:
    void read_exact(void* dst, std::size_t n, const char* what);
    std::ifstream in_;
    std::string path_;
    std::size_t offset_ = 0;
};

class BinWriter {
  public:
    explicit BinWriter(const std::string& path);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void magic(const char* m, std::size_t n);
    void f32_matrix(const Mat& m);  // row-major, narrowed to float32
    void f64_matrix(const Mat& m);
    void bytes(const std::string& s);

  private:
    std::ofstream out_;
    std::string path_;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace darslp

#pragma once

// Little-endian binary containers:
//   checkpoint  "SDMK" u32 version, u32 count, then per tensor
//               u16 name length, name bytes, u8 rank, u64 dims, f32 payload
//   matrix      "SDMO" u32 rows, u32 cols, f32 payload (motion and audio)
//   style code  "SDSC" u32 dim, f32 payload

#include <filesystem>
#include <string>
#include <vector>

#include "stylediff/params.hpp"
#include "stylediff/tensor.hpp"

namespace stylediff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_checkpoint(const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const Tensor<float>& m);
Tensor<float> read_matrix(const std::filesystem::path& path);

void write_style_code(const std::filesystem::path& path, const std::vector<float>& code);
std::vector<float> read_style_code(const std::filesystem::path& path);

/// Shortest round-trip decimal form, independent of the C++ locale.
std::string format_real(double v);

/// Appends rows to a CSV file, writing `header` first when the file is new or empty.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header, bool append = false);
  void row(const std::vector<std::string>& cells);

 private:
  std::filesystem::path path_;
  std::size_t width_;
};

}  // namespace stylediff

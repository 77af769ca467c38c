#include "stylediff/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace stylediff {

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  }
  template <typename U>
  void put(U v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), std::streamsize(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw std::runtime_error("write to '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  }
  template <typename U>
  U get() {
    U v{};
    bytes(&v, sizeof v);
    return v;
  }
  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) throw std::runtime_error("'" + path_.string() + "' is truncated");
  }
  void expect_magic(const char* magic) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
      throw std::runtime_error("'" + path_.string() + "' is not a " + std::string(magic, 4) + " file");
    }
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      throw std::runtime_error("'" + path_.string() + "' has trailing bytes");
    }
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
  Writer w(path);
  w.bytes("SDMK", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("checkpoint: tensor name too long");
    }
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.bytes(t.data(), t.size() * sizeof(float));
  }
  w.finish();
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SDMK");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint '" + path.string() + "' has unsupported version " +
                             std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.get<std::uint16_t>(), '\0');
    r.bytes(name.data(), name.size());
    Shape shape(r.get<std::uint8_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor<float> t(shape);
    r.bytes(t.data(), t.size() * sizeof(float));
    if (!out.emplace(std::move(name), std::move(t)).second) {
      throw std::runtime_error("checkpoint '" + path.string() + "' repeats a tensor name");
    }
  }
  r.expect_end();
  return out;
}

void write_matrix(const std::filesystem::path& path, const Tensor<float>& m) {
  Writer w(path);
  w.bytes("SDMO", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  w.bytes(m.data(), m.size() * sizeof(float));
  w.finish();
}

Tensor<float> read_matrix(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SDMO");
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  auto m = Tensor<float>::matrix(rows, cols);
  r.bytes(m.data(), m.size() * sizeof(float));
  r.expect_end();
  return m;
}

void write_style_code(const std::filesystem::path& path, const std::vector<float>& code) {
  Writer w(path);
  w.bytes("SDSC", 4);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(code.size()));
  w.bytes(code.data(), code.size() * sizeof(float));
  w.finish();
}

std::vector<float> read_style_code(const std::filesystem::path& path) {
  Reader r(path);
  r.expect_magic("SDSC");
  std::vector<float> code(r.get<std::uint32_t>());
  r.bytes(code.data(), code.size() * sizeof(float));
  r.expect_end();
  return code;
}

std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_real: conversion failed");
  return std::string(buf, end);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, std::vector<std::string> header, bool append)
    : path_(path), width_(header.size()) {
  const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.close();
  if (fresh) row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw std::invalid_argument("csv: row width does not match header");
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to '" + path_.string() + "'");
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

}  // namespace stylediff

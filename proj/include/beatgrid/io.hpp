#pragma once

#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "beatgrid/common.hpp"

namespace beatgrid {

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Errc::io_error, "cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  require(f.good(), Errc::io_error, "write failed: " + path);
}

inline void write_file(const std::string& path, std::string_view text) {
  write_file(path, std::span<const std::uint8_t>(
                       reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Errc::io_error, "cannot open: " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

inline std::string read_text_file(const std::string& path) {
  auto d = read_file(path);
  return std::string(reinterpret_cast<const char*>(d.data()), d.size());
}

}  // namespace beatgrid

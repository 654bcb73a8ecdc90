#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "pc/tensor.h"

namespace pc {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One named tensor inside a tensor archive.
struct NamedTensor {
  std::string name;
  Tensor value;
};

// Tensor archive layout (little-endian host order):
//   magic "PCTA" | u32 version | u64 count
//   per entry: u32 name length | name bytes | u64 rows | u64 cols | rows*cols f64
void write_archive(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_archive(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace pc

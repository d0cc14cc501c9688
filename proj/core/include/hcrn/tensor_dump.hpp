#pragma once

// Self-describing container of named arrays, used for checkpoints and dataset
// records. All integers and values are little-endian.
//
//   offset  size        field
//   0       8           magic "HCRNDUMP"
//   8       4   u32     format version (currently 1)
//   12      4   u32     entry count
//   then per entry:
//           4   u32     name length in bytes
//           n           name, UTF-8, not terminated
//           1   u8      dtype tag: 1 = float64, 2 = int64, 3 = uint8
//           4   u32     rank
//           8*r u64     extents
//           e*k         values, row-major, k = product of extents, e = 8/8/1

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hcrn/tensor.hpp"

namespace hcrn {

enum class DType : std::uint8_t { kFloat64 = 1, kInt64 = 2, kUInt8 = 3 };

inline constexpr std::uint32_t kDumpFormatVersion = 1;

class DumpFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DumpEntry {
  std::string name;
  DType dtype = DType::kFloat64;
  std::vector<std::uint64_t> extents;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;
  std::vector<std::uint8_t> u8;
};

class TensorDump {
 public:
  void add(std::string name, const Tensor& tensor);
  void add_f64(std::string name, std::vector<std::uint64_t> extents, std::vector<double> values);
  void add_i64(std::string name, std::vector<std::uint64_t> extents, std::vector<std::int64_t> values);
  void add_text(std::string name, const std::string& text);

  const std::vector<DumpEntry>& entries() const { return entries_; }
  const DumpEntry* find(const std::string& name) const;
  const DumpEntry& at(const std::string& name) const;

  Tensor tensor(const std::string& name) const;
  std::vector<std::int64_t> ints(const std::string& name) const;
  std::string text(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static TensorDump deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorDump load(const std::filesystem::path& path);

 private:
  void push(DumpEntry entry);
  std::vector<DumpEntry> entries_;
};

}  // namespace hcrn

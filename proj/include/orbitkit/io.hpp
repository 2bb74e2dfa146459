#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "orbitkit/tensor.hpp"

namespace orbitkit {

/// Malformed or corrupted file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).
std::uint64_t crc64(std::string_view bytes, std::uint64_t crc = 0);

std::string encode_onv(const Tensor<float>& t);
Tensor<float> decode_onv(std::string_view bytes);
void write_onv(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_onv(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

/// Ordered named-tensor bundle in the ONVC container.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(std::string name, Tensor<float> value);
  void set(const std::string& name, Tensor<float> value);
  bool contains(std::string_view name) const;
  const Tensor<float>& at(std::string_view name) const;
  const std::vector<NamedTensor>& entries() const { return entries_; }

  std::string serialize() const;
  static Checkpoint deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
  static Checkpoint load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

 private:
  std::vector<NamedTensor> entries_;
};

}  // namespace orbitkit

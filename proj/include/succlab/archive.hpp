#pragma once

// NTAR1 tensor archive.
//
// Layout:
//   "NTAR1"                      5-byte magic
//   u64 manifest_len             little-endian
//   manifest                     UTF-8, manifest_len bytes
//   zero padding                 up to the next 64-byte file offset
//   payload_0 .. payload_n       f32 little-endian row-major; each payload
//                                starts at a 64-byte aligned file offset
//   u32 crc32                    CRC32 of [payload_0 start, payload_n end)
//
// Manifest text: "key=value" preamble lines, a line holding "---", then one
// line per tensor: "name<TAB>f32<TAB>d0,d1,...". Scalars have an empty shape.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace succlab {

struct TensorRecord {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

class Archive {
 public:
  std::vector<std::pair<std::string, std::string>> preamble;
  std::vector<TensorRecord> tensors;

  void set_meta(const std::string& key, const std::string& value);
  /// Empty string when the key is absent.
  std::string meta(const std::string& key) const;
  bool has_meta(const std::string& key) const;

  void add(std::string name, std::vector<std::size_t> shape, std::vector<float> data);
  void add_matrix(std::string name, const Eigen::MatrixXd& m);
  void add_vector(std::string name, const Eigen::VectorXd& v);
  void add_ids(std::string name, const std::vector<int>& ids);

  const TensorRecord* find(const std::string& name) const;
  /// Throws FormatError when the tensor is missing.
  const TensorRecord& get(const std::string& name) const;

  Eigen::MatrixXd matrix(const std::string& name) const;
  Eigen::VectorXd vector(const std::string& name) const;
  std::vector<int> ids(const std::string& name) const;
};

std::string encode_archive(const Archive& archive);
Archive decode_archive(const std::string& bytes);

/// Writes atomically (temp file + rename).
void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

std::uint32_t crc32_of(const void* data, std::size_t size);

}  // namespace succlab

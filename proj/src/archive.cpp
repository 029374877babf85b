#include "succlab/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>
#include <sstream>

#include <zlib.h>

#include "succlab/error.hpp"
#include "succlab/io.hpp"

namespace succlab {
namespace {

constexpr char kMagic[] = "NTAR1";
constexpr std::size_t kMagicLen = 5;
constexpr std::size_t kAlign = 64;

static_assert(std::endian::native == std::endian::little, "NTAR1 I/O assumes a little-endian host");

std::size_t align_up(std::size_t offset) { return (offset + kAlign - 1) / kAlign * kAlign; }

template <typename T>
void put_le(std::string& out, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  T value;
  std::memcpy(&value, in.data() + offset, sizeof(T));
  return value;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<std::size_t> parse_shape(const std::string& s, const std::string& tensor) {
  std::vector<std::size_t> shape;
  if (s.empty()) return shape;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("bad shape '" + s + "' for tensor '" + tensor + "'");
    }
    shape.push_back(std::stoull(part));
  }
  return shape;
}

}  // namespace

std::uint32_t crc32_of(const void* data, std::size_t size) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (size > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t TensorRecord::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void Archive::set_meta(const std::string& key, const std::string& value) {
  if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw FormatError("metadata key/value may not contain '=' or newlines: " + key);
  }
  for (auto& [k, v] : preamble) {
    if (k == key) {
      v = value;
      return;
    }
  }
  preamble.emplace_back(key, value);
}

std::string Archive::meta(const std::string& key) const {
  for (const auto& [k, v] : preamble) {
    if (k == key) return v;
  }
  return {};
}

bool Archive::has_meta(const std::string& key) const {
  return std::any_of(preamble.begin(), preamble.end(), [&](const auto& kv) { return kv.first == key; });
}

void Archive::add(std::string name, std::vector<std::size_t> shape, std::vector<float> data) {
  TensorRecord rec{std::move(name), std::move(shape), std::move(data)};
  if (rec.numel() != rec.data.size()) {
    throw IntegrityError("tensor '" + rec.name + "' has " + std::to_string(rec.data.size()) +
                         " values but shape [" + shape_string(rec.shape) + "]");
  }
  if (rec.name.empty() || rec.name.find_first_of("\t\n") != std::string::npos || rec.name == "---") {
    throw FormatError("invalid tensor name '" + rec.name + "'");
  }
  tensors.push_back(std::move(rec));
}

void Archive::add_matrix(std::string name, const Eigen::MatrixXd& m) {
  std::vector<float> data(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data[k++] = static_cast<float>(m(r, c));
  }
  add(std::move(name), {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
      std::move(data));
}

void Archive::add_vector(std::string name, const Eigen::VectorXd& v) {
  std::vector<float> data(v.data(), v.data() + v.size());
  add(std::move(name), {static_cast<std::size_t>(v.size())}, std::move(data));
}

void Archive::add_ids(std::string name, const std::vector<int>& ids) {
  std::vector<float> data;
  data.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id > (1 << 24)) throw FormatError("id " + std::to_string(id) + " not exactly representable in f32");
    data.push_back(static_cast<float>(id));
  }
  add(std::move(name), {ids.size()}, std::move(data));
}

const TensorRecord* Archive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& Archive::get(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw FormatError("archive has no tensor '" + name + "'");
  return *t;
}

Eigen::MatrixXd Archive::matrix(const std::string& name) const {
  const auto& t = get(name);
  if (t.shape.size() != 2) throw IntegrityError("tensor '" + name + "' is not a matrix");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1]));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.data[k++];
  }
  return m;
}

Eigen::VectorXd Archive::vector(const std::string& name) const {
  const auto& t = get(name);
  if (t.shape.size() != 1) throw IntegrityError("tensor '" + name + "' is not a vector");
  Eigen::VectorXd v(static_cast<Eigen::Index>(t.shape[0]));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = t.data[static_cast<std::size_t>(i)];
  return v;
}

std::vector<int> Archive::ids(const std::string& name) const {
  const auto& t = get(name);
  std::vector<int> out;
  out.reserve(t.data.size());
  for (float f : t.data) {
    const int id = static_cast<int>(f);
    if (static_cast<float>(id) != f || id < 0) throw IntegrityError("tensor '" + name + "' holds a non-id value");
    out.push_back(id);
  }
  return out;
}

std::string encode_archive(const Archive& archive) {
  std::string manifest;
  for (const auto& [k, v] : archive.preamble) manifest += k + "=" + v + "\n";
  manifest += "---\n";
  for (const auto& t : archive.tensors) {
    manifest += t.name + "\tf32\t" + shape_string(t.shape) + "\n";
  }

  std::string out(kMagic, kMagicLen);
  put_le<std::uint64_t>(out, manifest.size());
  out += manifest;
  out.resize(align_up(out.size()), '\0');
  const std::size_t payload_start = out.size();
  for (std::size_t i = 0; i < archive.tensors.size(); ++i) {
    const auto& t = archive.tensors[i];
    if (t.numel() != t.data.size()) throw IntegrityError("tensor '" + t.name + "' size/shape mismatch");
    out.resize(align_up(out.size()), '\0');
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  const std::uint32_t crc = crc32_of(out.data() + payload_start, out.size() - payload_start);
  put_le<std::uint32_t>(out, crc);
  return out;
}

Archive decode_archive(const std::string& bytes) {
  if (bytes.size() < kMagicLen + sizeof(std::uint64_t) || bytes.compare(0, kMagicLen, kMagic) != 0) {
    throw FormatError("missing NTAR1 magic");
  }
  const auto manifest_len = get_le<std::uint64_t>(bytes, kMagicLen);
  const std::size_t manifest_off = kMagicLen + sizeof(std::uint64_t);
  if (manifest_len > bytes.size() - manifest_off) throw FormatError("manifest length exceeds file size");
  const std::string manifest = bytes.substr(manifest_off, manifest_len);

  Archive archive;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> entries;
  std::stringstream ss(manifest);
  std::string line;
  bool in_preamble = true;
  while (std::getline(ss, line)) {
    if (in_preamble) {
      if (line == "---") {
        in_preamble = false;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos || eq == 0) throw FormatError("malformed manifest preamble line '" + line + "'");
      archive.preamble.emplace_back(line.substr(0, eq), line.substr(eq + 1));
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw FormatError("malformed manifest tensor line '" + line + "'");
    const std::string name = line.substr(0, t1);
    const std::string dtype = line.substr(t1 + 1, t2 - t1 - 1);
    if (dtype != "f32") throw FormatError("tensor '" + name + "' has unsupported dtype '" + dtype + "'");
    entries.emplace_back(name, parse_shape(line.substr(t2 + 1), name));
  }
  if (in_preamble) throw FormatError("manifest lacks the '---' separator");

  std::size_t offset = align_up(manifest_off + manifest_len);
  const std::size_t payload_start = offset;
  for (auto& [name, shape] : entries) {
    offset = align_up(offset);
    TensorRecord rec{name, shape, {}};
    const std::size_t nbytes = rec.numel() * sizeof(float);
    if (offset > bytes.size() || bytes.size() - offset < nbytes + sizeof(std::uint32_t)) {
      throw IntegrityError("archive truncated inside payload of tensor '" + name + "'");
    }
    rec.data.resize(rec.numel());
    std::memcpy(rec.data.data(), bytes.data() + offset, nbytes);
    offset += nbytes;
    archive.tensors.push_back(std::move(rec));
  }
  if (bytes.size() != offset + sizeof(std::uint32_t)) {
    throw IntegrityError("archive size does not match manifest (" + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(offset + sizeof(std::uint32_t)) + ")");
  }
  const auto stored = get_le<std::uint32_t>(bytes, offset);
  if (stored != crc32_of(bytes.data() + payload_start, offset - payload_start)) {
    throw IntegrityError("payload CRC32 mismatch");
  }
  return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file_atomic(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

}  // namespace succlab

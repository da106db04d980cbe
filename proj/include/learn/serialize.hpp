#ifndef LEARN_SERIALIZE_HPP
#define LEARN_SERIALIZE_HPP

#include <cstdint>
#include <cstddef>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "learn/tensor.hpp"

namespace learn {

/// Binary tensor container: "OCLT", u16 version, u16 rank, u64 dims, then
/// little-endian f64 values.
inline constexpr std::uint16_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

/// 64-bit FNV-1a.
std::uint64_t hash_bytes(const void* data, std::size_t size,
                         std::uint64_t seed = kFnvOffset);

/// FNV-1a over the raw bytes of the values (and the shape).
std::uint64_t content_hash(const Tensor& tensor,
                           std::uint64_t seed = kFnvOffset);

/// Named tensors behind a short text header. The header lists key/value
/// metadata and, per tensor, its name, role and frozen flag; the tensors
/// follow as containers in header order.
struct CheckpointEntry {
  std::string name;
  std::string role;
  bool frozen = false;
  Tensor tensor;
};

struct Checkpoint {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CheckpointEntry> entries;

  void set(const std::string& key, std::string value);
  /// Throws std::runtime_error naming the key when it is absent.
  const std::string& get(const std::string& key) const;
  const Tensor& tensor(const std::string& name) const;
  void add(std::string name, std::string role, const Tensor& tensor,
           bool frozen = false);
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace learn

#endif  // LEARN_SERIALIZE_HPP

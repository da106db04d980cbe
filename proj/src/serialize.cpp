#include "learn/serialize.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace learn {

namespace {

constexpr std::array<char, 4> kMagic{'O', 'C', 'L', 'T'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw std::runtime_error("tensor container truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kTensorFormatVersion);
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_le<std::uint64_t>(out, d);
  for (Eigen::Index i = 0; i < tensor.values().size(); ++i) {
    put_le<double>(out, tensor.values()[i]);
  }
  if (!out) throw std::runtime_error("failed writing tensor container");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("tensor container: bad magic bytes");
  }
  const auto version = get_le<std::uint16_t>(in);
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("tensor container: unsupported version " +
                             std::to_string(version));
  }
  const auto rank = get_le<std::uint16_t>(in);
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(in));
  Vector values(static_cast<Eigen::Index>(numel(shape)));
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = get_le<double>(in);
  return Tensor(std::move(shape), std::move(values));
}

std::uint64_t hash_bytes(const void* data, std::size_t size,
                         std::uint64_t seed) {
  return fnv1a(data, size, seed);
}

std::uint64_t content_hash(const Tensor& tensor, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto d : tensor.shape()) {
    const std::uint64_t d64 = d;
    h = fnv1a(&d64, sizeof d64, h);
  }
  return fnv1a(tensor.values().data(),
               static_cast<std::size_t>(tensor.values().size()) * sizeof(double),
               h);
}

void Checkpoint::set(const std::string& key, std::string value) {
  for (auto& [k, v] : meta) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  meta.emplace_back(key, std::move(value));
}

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw std::runtime_error(kind + " checkpoint: missing key '" + key + "'");
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw std::runtime_error(kind + " checkpoint: missing tensor '" + name + "'");
}

void Checkpoint::add(std::string name, std::string role, const Tensor& tensor,
                     bool frozen) {
  entries.push_back({std::move(name), std::move(role), frozen, tensor.detach()});
}

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint) {
  out << "checkpoint v1 " << checkpoint.kind << '\n';
  for (const auto& [k, v] : checkpoint.meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& e : checkpoint.entries) {
    out << "tensor " << e.name << ' ' << e.role << ' ' << (e.frozen ? 1 : 0)
        << ' ' << to_string(e.tensor.shape()) << '\n';
  }
  out << "data\n";
  for (const auto& e : checkpoint.entries) write_tensor(out, e.tensor);
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint cp;
  std::string line;
  if (!std::getline(in, line) || line.rfind("checkpoint v1 ", 0) != 0) {
    throw std::runtime_error("not a checkpoint (bad header)");
  }
  cp.kind = line.substr(14);
  while (std::getline(in, line) && line != "data") {
    std::istringstream fields(line);
    std::string tag;
    fields >> tag;
    if (tag == "meta") {
      std::string key, value;
      fields >> key;
      std::getline(fields >> std::ws, value);
      cp.meta.emplace_back(key, value);
    } else if (tag == "tensor") {
      CheckpointEntry e;
      int frozen = 0;
      fields >> e.name >> e.role >> frozen;
      e.frozen = frozen != 0;
      cp.entries.push_back(std::move(e));
    } else {
      throw std::runtime_error("checkpoint: unexpected header line '" + line + "'");
    }
  }
  if (line != "data") throw std::runtime_error("checkpoint truncated in header");
  for (auto& e : cp.entries) e.tensor = read_tensor(in);
  return cp;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_checkpoint(out, checkpoint);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace learn

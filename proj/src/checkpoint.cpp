// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "ivt/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

#include "ivt/errors.hpp"

namespace ivt {

namespace {

template <typename U>
void put_le(std::ostream& os, U value) {
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(U));
}

template <typename U>
bool get_le(std::istream& is, U& value) {
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) return false;
  value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return true;
}

template <typename U>
U need_le(std::istream& is, const char* what) {
  U v{};
  if (!get_le(is, v)) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

constexpr std::uint32_t kMaxName = 1u << 16;
constexpr std::uint32_t kMaxRank = 16;

}  // namespace

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  auto t = Tensor::from(std::move(shape), std::move(values), true);
  entries_.push_back({name, t});
  return t;
}

Tensor ParamStore::add_zeros(const std::string& name, Shape shape) {
  const std::size_t n = numel(shape);
  return add(name, std::move(shape), std::vector<double>(n, 0.0));
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("unknown parameter '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::assign_from(const std::vector<NamedTensor>& other) {
  for (auto& e : entries_) {
    auto it = std::find_if(other.begin(), other.end(),
                           [&](const NamedTensor& o) { return o.name == e.name; });
    if (it == other.end()) throw FormatError("checkpoint lacks parameter '" + e.name + "'");
    if (it->tensor.shape() != e.tensor.shape())
      throw DimensionError("checkpoint parameter '" + e.name + "' has shape " +
                           shape_str(it->tensor.shape()) + ", model expects " +
                           shape_str(e.tensor.shape()));
    auto dst = e.tensor.mutable_data();
    auto src = it->tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& params) {
  os.write("IVTC", 4);
  put_le<std::uint16_t>(os, kCheckpointVersion);
  for (const auto& p : params) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.tensor.shape();
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) put_le<std::uint64_t>(os, d);
    for (double v : p.tensor.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw FormatError("failed writing checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "IVTC")
    throw FormatError("not an IVTC checkpoint (bad magic)");
  const auto version = need_le<std::uint16_t>(is, "version");
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  std::vector<NamedTensor> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto name_len = need_le<std::uint32_t>(is, "name length");
    if (name_len > kMaxName) throw FormatError("checkpoint name length " + std::to_string(name_len));
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("checkpoint truncated in name");
    const auto rank = need_le<std::uint32_t>(is, "rank");
    if (rank > kMaxRank) throw FormatError("checkpoint rank " + std::to_string(rank) + " for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(need_le<std::uint64_t>(is, "dims"));
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(need_le<std::uint64_t>(is, "payload"));
    out.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, store.entries());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace ivt

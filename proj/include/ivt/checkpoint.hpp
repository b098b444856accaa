// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Named parameter registry and the binary checkpoint format:
//
//   "IVTC"  u16 version
//   repeated until EOF:
//     u32 name_length, name bytes (UTF-8, no terminator)
//     u32 rank, rank × u64 dims
//     product(dims) × f64 payload
//
// All integers and floats are little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "ivt/tensor.hpp"

namespace ivt {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Insertion-ordered set of trainable leaves.
class ParamStore {
 public:
  /// Registers a fresh leaf (requires grad). Names must be unique.
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);
  Tensor add_zeros(const std::string& name, Shape shape);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::vector<NamedTensor>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  /// Copies values (shape-checked) from `other` for every name present in both;
  /// throws if a name of this store is missing there.
  void assign_from(const std::vector<NamedTensor>& other);

 private:
  std::vector<NamedTensor> entries_;
};

void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& params);
std::vector<NamedTensor> read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const ParamStore& store);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

}  // namespace ivt

// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// One JSON manifest per CLI run: the command line, a snapshot of the
// effective configuration, seeds, inputs with git-style content hashes, the
// artifacts written and wall-clock timestamps.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ivt::cli {

/// SHA-1 of "blob <size>\0" followed by the content, as git computes it.
std::string git_blob_hash(const std::string& content);
std::string git_blob_hash_file(const std::filesystem::path& path);

/// UTC time as 2026-01-31T12:00:00Z.
std::string utc_timestamp();

class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set_config(std::string snapshot) { config_ = std::move(snapshot); }
  void set_seed(std::uint64_t seed) { seed_ = seed; has_seed_ = true; }
  void add_input(const std::string& name, const std::filesystem::path& path);
  void add_artifact(const std::string& name, const std::filesystem::path& path);

  /// Hash over the config snapshot, seed and input hashes.
  std::string input_hash() const;
  std::string to_json(int exit_code) const;
  void write(const std::filesystem::path& path, int exit_code) const;

 private:
  struct Input {
    std::string path, hash;
  };
  std::string command_;
  std::vector<std::string> argv_;
  std::string config_;
  std::uint64_t seed_ = 0;
  bool has_seed_ = false;
  std::map<std::string, Input> inputs_;
  std::map<std::string, std::string> artifacts_;
  std::string started_;
};

}  // namespace ivt::cli

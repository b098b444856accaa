// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ivt/errors.hpp"

namespace ivt::cli {

std::string git_blob_hash(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string git_blob_hash_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return git_blob_hash(ss.str());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)), argv_(std::move(argv)), started_(utc_timestamp()) {}

void RunManifest::add_input(const std::string& name, const std::filesystem::path& path) {
  inputs_[name] = {path.string(), git_blob_hash_file(path)};
}

void RunManifest::add_artifact(const std::string& name, const std::filesystem::path& path) {
  artifacts_[name] = path.string();
}

std::string RunManifest::input_hash() const {
  nlohmann::json j;
  j["command"] = command_;
  j["config"] = config_;
  if (has_seed_) j["seed"] = seed_;
  for (const auto& [name, in] : inputs_) j["inputs"][name] = in.hash;
  return git_blob_hash(j.dump());
}

std::string RunManifest::to_json(int exit_code) const {
  nlohmann::json j;
  j["command"] = command_;
  j["argv"] = argv_;
  j["config"] = config_;
  j["seed"] = has_seed_ ? nlohmann::json(seed_) : nlohmann::json(nullptr);
  j["inputs"] = nlohmann::json::object();
  for (const auto& [name, in] : inputs_) j["inputs"][name] = {{"path", in.path}, {"sha1", in.hash}};
  j["artifacts"] = artifacts_;
  j["input_hash"] = input_hash();
  j["started_at"] = started_;
  j["finished_at"] = utc_timestamp();
  j["exit_code"] = exit_code;
  return j.dump(2);
}

void RunManifest::write(const std::filesystem::path& path, int exit_code) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << to_json(exit_code) << '\n';
}

}  // namespace ivt::cli

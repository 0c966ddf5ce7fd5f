#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmoe/tensor/tensor.hpp"

namespace ssmoe::data {

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kArchiveMagic[8] = {'S', 'S', 'M', 'O', 'E', 'T', 'A', 'R'};
inline constexpr std::uint32_t kArchiveVersion = 1;

/// Named tensors plus string metadata. Entries keep insertion order; names
/// must be unique. See docs/archive_format.md for the byte layout.
class TensorArchive {
 public:
  std::map<std::string, std::string> metadata;

  void add(const std::string& name, const Tensor& t);
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  /// All entries whose name starts with `prefix`, with the prefix stripped.
  std::map<std::string, Tensor> with_prefix(const std::string& prefix) const;

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes);

  void save(const std::string& path) const;
  static TensorArchive load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a, used for content hashes in run manifests.
std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string read_file(const std::string& path);

}  // namespace ssmoe::data

#pragma once

#include <string>
#include <vector>

#include "ssmoe/config/run_config.hpp"

namespace ssmoe::cli {

/// Records what a command read and wrote, then stores a manifest next to
/// the outputs: config text and hash, seed and content hashes of every file.
class RunContext {
 public:
  RunContext(std::string command, config::RunConfig cfg);

  const config::RunConfig& cfg() const { return cfg_; }
  void add_input(const std::string& path);
  void add_output(const std::string& path);
  /// Writes <work>/manifests/<command>.json and returns its path.
  std::string write_manifest() const;

 private:
  std::string command_;
  config::RunConfig cfg_;
  std::vector<std::string> inputs_, outputs_;
};

/// Object id git assigns to a file with this content (SHA-1 of "blob <n>\0" + content).
std::string git_blob_hash(const std::string& content);

/// Creates the parent directory of `path` if needed.
void ensure_parent(const std::string& path);

}  // namespace ssmoe::cli

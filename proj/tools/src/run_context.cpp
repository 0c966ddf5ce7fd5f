#include "run_context.hpp"

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <stdexcept>

#include "ssmoe/data/archive.hpp"

namespace ssmoe::cli {

namespace fs = std::filesystem;

RunContext::RunContext(std::string command, config::RunConfig cfg) : command_(std::move(command)), cfg_(std::move(cfg)) {}

void RunContext::add_input(const std::string& path) { inputs_.push_back(path); }
void RunContext::add_output(const std::string& path) { outputs_.push_back(path); }

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) != 1) {
    throw std::runtime_error("sha1 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string RunContext::write_manifest() const {
  auto files = [](const std::vector<std::string>& paths) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : paths) {
      arr.push_back({{"path", p}, {"git_blob_sha1", git_blob_hash(data::read_file(p))}});
    }
    return arr;
  };
  const std::string text = cfg_.to_text();
  nlohmann::json m;
  m["command"] = command_;
  m["seed"] = cfg_.seed;
  m["threads"] = cfg_.threads;
  m["config_git_blob_sha1"] = git_blob_hash(text);
  m["config"] = text;
  m["inputs"] = files(inputs_);
  m["outputs"] = files(outputs_);
  const std::string path = (fs::path(cfg_.work_dir) / "manifests" / (command_ + ".json")).string();
  ensure_parent(path);
  std::ofstream(path) << m.dump(2) << "\n";
  return path;
}

}  // namespace ssmoe::cli

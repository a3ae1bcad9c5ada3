#include "manifest.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtkd/error.hpp"

namespace dtkd::cli {

std::string git_blob_hash(const std::string& content) {
  const std::string blob = "blob " + std::to_string(content.size()) + std::string(1, '\0') + content;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) == 1, ErrorKind::IoError,
          "SHA-1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string git_blob_hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return git_blob_hash(ss.str());
}

std::string RunManifest::content_hash() const {
  std::string material = command + "\n" + config_text;
  for (const auto& [path, hash] : inputs) material += path + " " + hash + "\n";
  return git_blob_hash(material);
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["content_hash"] = content_hash();
  j["config"] = config_text;
  nlohmann::ordered_json in = nlohmann::ordered_json::object();
  for (const auto& [path, hash] : inputs) in[path] = hash;
  j["inputs"] = in;
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [key, files] : outputs) out[key] = files;
  j["outputs"] = out;
  return j.dump(2) + "\n";
}

void RunManifest::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::IoError, "cannot write " + path);
  f << to_json();
}

}  // namespace dtkd::cli

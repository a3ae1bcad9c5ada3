#pragma once

#include <map>
#include <string>
#include <vector>

namespace dtkd::cli {

/// SHA-1 of "blob <size>\0<content>", the identifier git assigns to file contents.
std::string git_blob_hash(const std::string& content);
std::string git_blob_hash_file(const std::string& path);

struct RunManifest {
  std::string command;
  std::string config_text;                   // serialized, fully resolved config
  std::map<std::string, std::string> inputs;  // path -> blob hash
  std::map<std::string, std::vector<std::string>> outputs;  // seed or job -> files

  /// Hash over the config text and every input hash, in path order.
  std::string content_hash() const;
  std::string to_json() const;
  void write(const std::string& path) const;
};

}  // namespace dtkd::cli

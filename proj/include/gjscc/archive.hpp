#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace gjscc {

/// Self-describing container of named arrays plus a JSON metadata document.
///
/// Layout (little-endian):
///   8 bytes  magic "GJSCCARC"
///   u32      format version
///   u64      header length in bytes
///   header   UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "dtype", "shape",
///            "offset", "nbytes"}, ...]}
///   payload  concatenated raw array bytes; offsets are relative to payload start
///
/// Supported dtypes: f32, f64, i64, u8. Readers accept any version <= the
/// current one and ignore unknown header keys.
class TensorArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json& meta() { return meta_; }
  const nlohmann::json& meta() const { return meta_; }

  void put(const std::string& name, const torch::Tensor& tensor);
  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }
  const torch::Tensor& get(const std::string& name) const;
  const std::map<std::string, torch::Tensor>& arrays() const { return arrays_; }

  /// Stores every parameter and buffer of `module` as "<prefix>.<name>".
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies "<prefix>.<name>" entries back into `module`; every parameter and
  /// buffer must be present with a matching shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  /// Drops every array whose name starts with "<prefix>.".
  void erase_prefix(const std::string& prefix);

  /// Writes to a sibling temp file and renames it over `path`.
  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes, const std::string& origin = "<memory>");

 private:
  nlohmann::json meta_ = nlohmann::json::object();
  std::map<std::string, torch::Tensor> arrays_;
};

/// Writes `contents` to `path` atomically (temp file + fsync + rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace gjscc

#include "gjscc/archive.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "gjscc/error.hpp"

namespace gjscc {
namespace {

constexpr char kMagic[8] = {'G', 'J', 'S', 'C', 'C', 'A', 'R', 'C'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw Error(std::string("archive: unsupported dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw IngestError("archive: unknown dtype '" + name + "'");
}

template <typename T>
void append_pod(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_pod(const std::string& in, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(T) > in.size()) throw IngestError("archive: truncated file " + origin);
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void TensorArchive::put(const std::string& name, const torch::Tensor& tensor) {
  arrays_[name] = tensor.detach().to(torch::kCPU).contiguous().clone();
}

const torch::Tensor& TensorArchive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw NotFoundError("archive: no array named '" + name + "'");
  return it->second;
}

void TensorArchive::put_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters(true)) put(prefix + "." + p.key(), p.value());
  for (const auto& b : module.named_buffers(true)) put(prefix + "." + b.key(), b.value());
}

void TensorArchive::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    const auto& src = get(prefix + "." + name);
    if (src.sizes() != target.sizes()) {
      throw ShapeError("archive: shape mismatch for '" + prefix + "." + name + "'");
    }
    target.copy_(src.to(target.dtype()));
  };
  for (auto& p : module.named_parameters(true)) copy_into(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) copy_into(b.key(), b.value());
}

void TensorArchive::erase_prefix(const std::string& prefix) {
  const auto key = prefix + ".";
  for (auto it = arrays_.begin(); it != arrays_.end();) {
    if (it->first.rfind(key, 0) == 0) {
      it = arrays_.erase(it);
    } else {
      ++it;
    }
  }
}

std::string TensorArchive::serialize() const {
  nlohmann::json header;
  header["meta"] = meta_;
  header["arrays"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : arrays_) {
    const auto nbytes = static_cast<std::size_t>(t.numel() * t.element_size());
    header["arrays"].push_back({{"name", name},
                                {"dtype", dtype_name(t.scalar_type())},
                                {"shape", t.sizes().vec()},
                                {"offset", payload.size()},
                                {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  const std::string header_text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  append_pod<std::uint32_t>(out, kVersion);
  append_pod<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IngestError("archive: bad magic in " + origin);
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = read_pod<std::uint32_t>(bytes, pos, origin);
  if (version > kVersion) {
    throw IngestError("archive: " + origin + " has newer format version " + std::to_string(version));
  }
  const auto header_len = read_pod<std::uint64_t>(bytes, pos, origin);
  if (pos + header_len > bytes.size()) throw IngestError("archive: truncated header in " + origin);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("archive: corrupt header in " + origin + ": " + e.what());
  }
  pos += header_len;
  TensorArchive archive;
  archive.meta_ = header.value("meta", nlohmann::json::object());
  for (const auto& entry : header.at("arrays")) {
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    if (pos + offset + nbytes > bytes.size()) {
      throw IngestError("archive: truncated payload in " + origin);
    }
    auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    if (static_cast<std::size_t>(t.numel() * t.element_size()) != nbytes) {
      throw IngestError("archive: size mismatch for '" + entry.at("name").get<std::string>() +
                        "' in " + origin);
    }
    std::memcpy(t.data_ptr(), bytes.data() + pos + offset, nbytes);
    archive.arrays_[entry.at("name").get<std::string>()] = t;
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  write_file_atomic(path, serialize());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return deserialize(read_file(path), path.string());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) throw Error("cannot open " + tmp.string() + " for writing");
  std::size_t written = 0;
  while (written < contents.size()) {
    const auto n = ::write(fd, contents.data() + written, contents.size() - written);
    if (n < 0) {
      ::close(fd);
      throw Error("write failed for " + tmp.string());
    }
    written += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace gjscc

#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "gtlab/gpt/model.hpp"

// Checkpoint container:
//   8 bytes   magic "GTLABCK1"
//   8 bytes   little-endian header length N
//   N bytes   JSON header {format, version, dtype, config, train_step,
//             content_hash, metadata, params: [{name, shape, offset, nbytes}]}
//   ...       raw little-endian parameter blobs at the recorded offsets
namespace gtlab {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[8] = {'G', 'T', 'L', 'A', 'B', 'C', 'K', '1'};

template <typename Real>
std::string serialize_checkpoint(const Checkpoint<Real>& ckpt) {
  nlohmann::json header;
  header["format"] = "gtlab-checkpoint";
  header["version"] = 1;
  header["dtype"] = dtype_name(dtype_of<Real>());
  header["config"] = ckpt.config;
  header["train_step"] = ckpt.train_step;
  header["content_hash"] = content_hash(ckpt);
  header["metadata"] = ckpt.metadata;
  std::string blob;
  auto& entries = header["params"] = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    const auto v = p.tensor.values();
    const auto nbytes = v.size() * sizeof(Real);
    entries.push_back({{"name", p.name},
                       {"shape", p.tensor.shape()},
                       {"offset", blob.size()},
                       {"nbytes", nbytes}});
    blob.append(reinterpret_cast<const char*>(v.data()), nbytes);
  }
  const std::string head = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t n = head.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof(n));
  out += head;
  out += blob;
  return out;
}

inline nlohmann::json read_checkpoint_header(const std::string& bytes, std::size_t* blob_start) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("not a gtlab checkpoint (bad magic)");
  }
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, sizeof(n));
  if (16 + n > bytes.size()) {
    throw CheckpointError("truncated checkpoint header");
  }
  *blob_start = 16 + n;
  return nlohmann::json::parse(bytes.substr(16, n));
}

template <typename Real>
Checkpoint<Real> deserialize_checkpoint(const std::string& bytes) {
  std::size_t blob_start = 0;
  const auto header = read_checkpoint_header(bytes, &blob_start);
  if (header.at("version").get<int>() != 1) {
    throw CheckpointError("unsupported checkpoint version");
  }
  if (header.at("dtype").get<std::string>() != dtype_name(dtype_of<Real>())) {
    throw CheckpointError("checkpoint dtype " + header.at("dtype").get<std::string>() +
                          " does not match requested " + dtype_name(dtype_of<Real>()));
  }
  Checkpoint<Real> ckpt;
  ckpt.config = header.at("config").get<ModelConfig>();
  ckpt.config.validate();
  ckpt.train_step = header.at("train_step").get<std::uint64_t>();
  ckpt.metadata = header.value("metadata", nlohmann::json::object());
  for (const auto& e : header.at("params")) {
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto nbytes = e.at("nbytes").get<std::size_t>();
    if (nbytes != shape_numel(shape) * sizeof(Real) || blob_start + offset + nbytes > bytes.size()) {
      throw CheckpointError("parameter blob for '" + e.at("name").get<std::string>() +
                            "' is inconsistent or truncated");
    }
    std::vector<Real> values(shape_numel(shape));
    std::memcpy(values.data(), bytes.data() + blob_start + offset, nbytes);
    ckpt.params.push_back({e.at("name").get<std::string>(), Tensor<Real>(shape, std::move(values), true)});
  }
  const auto expected = header.at("content_hash").get<std::string>();
  if (content_hash(ckpt) != expected) {
    throw CheckpointError("checkpoint content hash mismatch");
  }
  return ckpt;
}

template <typename Real>
void save_checkpoint(const Checkpoint<Real>& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw CheckpointError("cannot write " + tmp.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open " + path.string());
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<Real>(ss.str());
}

}  // namespace gtlab

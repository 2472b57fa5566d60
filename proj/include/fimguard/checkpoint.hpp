#pragma once

// Single-file checkpoint container:
//   8-byte magic "FIMGCKPT"
//   u64 LE manifest length, UTF-8 JSON manifest
//   u64 LE blob length, blob of IEEE-754 binary64 LE values
// Parameters appear in the blob in manifest order.

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fimguard/errors.hpp"
#include "fimguard/models.hpp"

namespace fimguard {

inline constexpr char kCheckpointMagic[8] = {'F', 'I', 'M', 'G', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

/// Lowercase hex SHA-256 digest.
inline std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

namespace detail {

inline void put_le64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint64_t get_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
  return v;
}

template <class T>
std::vector<unsigned char> weights_blob(const Network<T>& net) {
  std::vector<unsigned char> blob;
  for (const auto& p : net.parameters()) {
    for (T v : p.value.values()) put_le64(blob, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  return blob;
}

}  // namespace detail

/// Hex digest of the weights blob; identifies a checkpoint's contents.
template <class T>
std::string checkpoint_hash(const Network<T>& net) {
  return sha256_hex(detail::weights_blob(net));
}

template <class T>
nlohmann::json checkpoint_manifest(const Network<T>& net, const nlohmann::json& train_config = nlohmann::json::object()) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : net.parameters()) {
    params.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  }
  return {{"format", "fimguard-checkpoint"},
          {"version", kCheckpointVersion},
          {"architecture", net.architecture().to_json()},
          {"num_classes", net.num_classes()},
          {"input_shape", net.input_shape()},
          {"train_config", train_config},
          {"parameters", params}};
}

template <class T>
void save_checkpoint(const Network<T>& net, const std::filesystem::path& path,
                     const nlohmann::json& train_config = nlohmann::json::object()) {
  const std::string manifest = checkpoint_manifest(net, train_config).dump(2);
  const std::vector<unsigned char> blob = detail::weights_blob(net);
  std::vector<unsigned char> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  detail::put_le64(out, blob.size());
  out.insert(out.end(), blob.begin(), blob.end());
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write checkpoint " + path.string());
  file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for checkpoint " + path.string());
}

struct CheckpointContents {
  Network<double> network;
  nlohmann::json manifest;
  std::string hash;
};

inline CheckpointContents read_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(file), {});
  const std::string where = "checkpoint " + path.string() + ": ";

  std::size_t pos = sizeof(kCheckpointMagic);
  if (bytes.size() < pos + 8 || std::memcmp(bytes.data(), kCheckpointMagic, pos) != 0) {
    throw CheckpointError(where + "not a checkpoint file");
  }
  const std::uint64_t manifest_len = detail::get_le64(bytes.data() + pos);
  pos += 8;
  if (manifest_len > bytes.size() - pos) throw CheckpointError(where + "manifest truncated");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "manifest is not valid JSON: " + e.what());
  }
  pos += manifest_len;
  if (bytes.size() - pos < 8) throw CheckpointError(where + "blob length missing");
  const std::uint64_t blob_len = detail::get_le64(bytes.data() + pos);
  pos += 8;
  if (blob_len != bytes.size() - pos) {
    throw CheckpointError(where + "blob length " + std::to_string(blob_len) + " does not match " +
                          std::to_string(bytes.size() - pos) + " stored bytes");
  }

  Network<double> net;
  try {
    if (manifest.at("format") != "fimguard-checkpoint") throw CheckpointError(where + "unknown format");
    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw CheckpointError(where + "version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    const Architecture arch = Architecture::from_json(manifest.at("architecture"));
    if (manifest.at("num_classes").get<std::size_t>() != arch.num_classes ||
        manifest.at("input_shape").get<Shape>() != arch.input_shape) {
      throw CheckpointError(where + "class count or input shape disagrees with the architecture");
    }
    net = build_network<double>(arch);
    const auto& listed = manifest.at("parameters");
    if (listed.size() != net.parameters().size()) throw CheckpointError(where + "parameter list does not match architecture");
    std::size_t expected = 0;
    for (std::size_t i = 0; i < listed.size(); ++i) {
      const auto& p = net.parameters()[i];
      if (listed[i].at("name") != p.name || listed[i].at("shape").get<Shape>() != p.value.shape()) {
        throw CheckpointError(where + "parameter " + std::to_string(i) + " does not match architecture");
      }
      expected += p.value.size() * 8;
    }
    if (expected != blob_len) {
      throw CheckpointError(where + "blob holds " + std::to_string(blob_len) + " bytes, architecture needs " +
                            std::to_string(expected));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(where + "malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(where + e.what());
  }

  const unsigned char* cursor = bytes.data() + pos;
  for (auto& p : net.parameters()) {
    for (double& v : p.value.values()) {
      v = std::bit_cast<double>(detail::get_le64(cursor));
      cursor += 8;
    }
  }
  const std::span<const unsigned char> blob(bytes.data() + pos, blob_len);
  return CheckpointContents{std::move(net), std::move(manifest), sha256_hex(blob)};
}

inline Network<double> load_checkpoint(const std::filesystem::path& path) { return read_checkpoint(path).network; }

/// Loads into a network of known architecture; CheckpointError on mismatch.
inline Network<double> load_checkpoint(const std::filesystem::path& path, const Architecture& expected) {
  CheckpointContents c = read_checkpoint(path);
  if (!(c.network.architecture() == expected)) {
    throw CheckpointError("checkpoint " + path.string() + " has architecture " +
                          c.network.architecture().to_json().dump() + ", expected " + expected.to_json().dump());
  }
  return std::move(c.network);
}

}  // namespace fimguard

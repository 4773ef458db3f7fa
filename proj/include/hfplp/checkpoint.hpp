#pragma once

// Checkpoint file:
//   text header (magic, version, metadata, tensor manifest) ending in
//   "end_header\n", then the config snapshot verbatim, then the float32
//   little-endian tensor blob.

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hfplp/config.hpp"
#include "hfplp/error.hpp"
#include "hfplp/policy.hpp"

namespace hfplp {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

inline constexpr const char* kCheckpointMagic = "HFPLP-DAAC";
inline constexpr int kCheckpointVersion = 1;

struct ManifestEntry {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  std::size_t offset = 0;  // bytes into the blob
};

struct CheckpointInfo {
  int format_version = kCheckpointVersion;
  ActionMode mode = ActionMode::kHybrid;
  bool has_stage2 = false;
  bool daac_uses_observer = true;
  int iteration = 0;
  std::string stage;
  std::string config_digest;
  std::string blob_checksum;
  std::vector<ManifestEntry> manifest;
  std::string config_text;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : manifest) n += static_cast<std::size_t>(e.rows * e.cols);
    return n;
  }
};

struct Checkpoint {
  CheckpointInfo info;
  WorkbenchConfig config;
  PolicyStack stack;
};

inline const char* mode_name(ActionMode m) { return m == ActionMode::kHybrid ? "hybrid" : "position"; }

inline std::string encode_checkpoint(PolicyStack& stack, const WorkbenchConfig& cfg, const std::string& stage,
                                     int iteration) {
  const std::vector<TensorRef> ts = stack_tensors(stack);
  std::string blob;
  std::vector<ManifestEntry> manifest;
  for (const auto& t : ts) {
    manifest.push_back({t.name, t.rows, t.cols, blob.size()});
    blob.append(reinterpret_cast<const char*>(t.data), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  const std::string config_text = serialize_config(cfg);
  std::ostringstream h;
  h << kCheckpointMagic << "\n";
  h << "format_version " << kCheckpointVersion << "\n";
  h << "stage " << stage << "\n";
  h << "action_mode " << mode_name(stack.mode) << "\n";
  h << "has_stage2 " << (stack.has_daac() ? 1 : 0) << "\n";
  h << "daac_uses_observer " << (stack.daac_uses_observer ? 1 : 0) << "\n";
  h << "iteration " << iteration << "\n";
  h << "config_digest " << config_digest(cfg) << "\n";
  h << "tensor_count " << manifest.size() << "\n";
  for (const auto& e : manifest) h << "tensor " << e.name << " " << e.rows << " " << e.cols << " " << e.offset << "\n";
  h << "blob_bytes " << blob.size() << "\n";
  h << "blob_fnv1a64 " << hex64(fnv1a64(blob.data(), blob.size())) << "\n";
  h << "config_bytes " << config_text.size() << "\n";
  h << "end_header\n";
  return h.str() + config_text + blob;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

inline void save_checkpoint(const std::string& path, PolicyStack& stack, const WorkbenchConfig& cfg,
                            const std::string& stage, int iteration) {
  write_file_atomic(path, encode_checkpoint(stack, cfg, stage, iteration));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInput("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

struct ParsedCheckpoint {
  CheckpointInfo info;
  std::string blob;
};

inline ParsedCheckpoint parse_checkpoint(const std::string& bytes, const std::string& path) {
  ParsedCheckpoint pc;
  CheckpointInfo& info = pc.info;
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string::npos) throw CorruptFile(path + ": header ends unexpectedly");
    line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
  };
  std::string line;
  if (bytes.compare(0, std::strlen(kCheckpointMagic) + 1, std::string(kCheckpointMagic) + "\n") != 0)
    throw CorruptFile(path + ": missing HFPLP-DAAC magic");
  next_line(line);

  std::size_t blob_bytes = 0, config_bytes = 0, tensor_count = 0;
  bool have_blob = false, have_config = false, have_version = false;
  for (;;) {
    next_line(line);
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto need = [&](bool ok) {
      if (!ok || ls.fail()) throw CorruptFile(path + ": malformed header line '" + line + "'");
    };
    if (key == "format_version") {
      ls >> info.format_version;
      need(true);
      if (info.format_version != kCheckpointVersion)
        throw VersionMismatch(path + ": format version " + std::to_string(info.format_version) + ", expected " +
                              std::to_string(kCheckpointVersion));
      have_version = true;
    } else if (key == "stage") {
      ls >> info.stage;
      need(true);
    } else if (key == "action_mode") {
      std::string m;
      ls >> m;
      need(m == "hybrid" || m == "position");
      info.mode = m == "hybrid" ? ActionMode::kHybrid : ActionMode::kPositionOnly;
    } else if (key == "has_stage2") {
      int v = 0;
      ls >> v;
      need(true);
      info.has_stage2 = v != 0;
    } else if (key == "daac_uses_observer") {
      int v = 0;
      ls >> v;
      need(true);
      info.daac_uses_observer = v != 0;
    } else if (key == "iteration") {
      ls >> info.iteration;
      need(true);
    } else if (key == "config_digest") {
      ls >> info.config_digest;
      need(true);
    } else if (key == "tensor_count") {
      ls >> tensor_count;
      need(true);
    } else if (key == "tensor") {
      ManifestEntry e;
      ls >> e.name >> e.rows >> e.cols >> e.offset;
      need(e.rows >= 0 && e.cols >= 0);
      info.manifest.push_back(e);
    } else if (key == "blob_bytes") {
      ls >> blob_bytes;
      need(true);
      have_blob = true;
    } else if (key == "blob_fnv1a64") {
      ls >> info.blob_checksum;
      need(true);
    } else if (key == "config_bytes") {
      ls >> config_bytes;
      need(true);
      have_config = true;
    } else {
      throw CorruptFile(path + ": unknown header key '" + key + "'");
    }
  }
  if (!have_version || !have_blob || !have_config) throw CorruptFile(path + ": incomplete header");
  if (tensor_count != info.manifest.size()) throw CorruptFile(path + ": tensor_count disagrees with manifest");
  if (bytes.size() != pos + config_bytes + blob_bytes)
    throw CorruptFile(path + ": file is " + std::to_string(bytes.size()) + " bytes, header promises " +
                      std::to_string(pos + config_bytes + blob_bytes));
  info.config_text = bytes.substr(pos, config_bytes);
  pc.blob = bytes.substr(pos + config_bytes, blob_bytes);
  std::size_t expect = 0;
  for (const auto& e : info.manifest) {
    if (e.offset != expect) throw CorruptFile(path + ": tensor " + e.name + " has an inconsistent offset");
    expect += static_cast<std::size_t>(e.rows * e.cols) * sizeof(float);
  }
  if (expect != blob_bytes) throw CorruptFile(path + ": manifest does not cover the blob");
  if (hex64(fnv1a64(pc.blob.data(), pc.blob.size())) != info.blob_checksum)
    throw ChecksumMismatch(path + ": tensor blob checksum mismatch");
  return pc;
}

}  // namespace detail

inline CheckpointInfo inspect_checkpoint(const std::string& path) {
  return detail::parse_checkpoint(read_file(path), path).info;
}

// Loads into a stack built from `arch` (or from the embedded config when
// null). Every expected tensor must be present with the expected shape.
inline Checkpoint load_checkpoint(const std::string& path, const WorkbenchConfig* arch = nullptr) {
  const std::string bytes = read_file(path);
  detail::ParsedCheckpoint pc = detail::parse_checkpoint(bytes, path);
  Checkpoint ck;
  ck.info = std::move(pc.info);
  if (hex64(fnv1a64(ck.info.config_text.data(), ck.info.config_text.size())) != ck.info.config_digest)
    throw ChecksumMismatch(path + ": embedded config does not match its digest");
  ck.config = parse_config(ck.info.config_text);
  ck.stack = skeleton_stack(arch ? *arch : ck.config, ck.info.mode, ck.info.has_stage2);
  ck.stack.daac_uses_observer = ck.info.daac_uses_observer;

  std::map<std::string, const ManifestEntry*> by_name;
  for (const auto& e : ck.info.manifest) by_name[e.name] = &e;
  const std::vector<TensorRef> ts = stack_tensors(ck.stack);
  if (ts.size() != ck.info.manifest.size()) {
    for (const auto& e : ck.info.manifest) {
      bool found = false;
      for (const auto& t : ts) found = found || t.name == e.name;
      if (!found) throw VersionMismatch(path + ": unexpected tensor " + e.name);
    }
  }
  for (const auto& t : ts) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw VersionMismatch(path + ": missing tensor " + t.name);
    const ManifestEntry& e = *it->second;
    if (e.rows != t.rows || e.cols != t.cols)
      throw VersionMismatch(path + ": tensor " + t.name + " is " + std::to_string(e.rows) + "x" +
                            std::to_string(e.cols) + ", expected " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols));
    std::memcpy(t.data, pc.blob.data() + e.offset, static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  return ck;
}

}  // namespace hfplp

#include "magup/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "magup/errors.hpp"

namespace magup {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "MAGUP1\n";
constexpr std::size_t kMagicLen = sizeof kMagic - 1;

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

struct Raw {
  json header;
  std::string blob;
};

void put_f32(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

double get_f32(const std::string& blob, std::size_t index) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[index * 4 + b])) << (8 * b);
  return static_cast<double>(std::bit_cast<float>(bits));
}

void write_raw(const std::filesystem::path& path, json header, const std::string& blob) {
  header["blob_bytes"] = blob.size();
  header["blob_crc32"] = hex32(crc32_of(blob.data(), blob.size()));
  const std::string text = header.dump();
  std::ostringstream os;
  os << kMagic << text.size() << ' ' << hex32(crc32_of(text.data(), text.size())) << '\n' << text << blob;
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = os.str();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

std::vector<ManifestEntry> parse_manifest(const json& header, std::size_t blob_floats, const std::string& where) {
  std::vector<ManifestEntry> out;
  std::size_t expected_offset = 0;
  try {
    for (const auto& t : header.at("tensors")) {
      ManifestEntry e{t.at("name").get<std::string>(), t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>(),
                      t.at("count").get<std::size_t>()};
      if (e.count != shape_numel(e.shape) || e.offset != expected_offset || e.offset + e.count > blob_floats) {
        throw IoError(where + ": manifest entry " + e.name + " is inconsistent with the blob");
      }
      expected_offset += e.count;
      out.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw IoError(where + ": malformed manifest: " + ex.what());
  }
  if (expected_offset != blob_floats) throw IoError(where + ": manifest covers " + std::to_string(expected_offset) +
                                                    " floats but the blob holds " + std::to_string(blob_floats));
  return out;
}

Raw read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (bytes.compare(0, kMagicLen, kMagic) != 0) throw IoError(where + ": bad magic (not a MaGuP checkpoint)");
  const auto nl = bytes.find('\n', kMagicLen);
  if (nl == std::string::npos) throw IoError(where + ": truncated header line");
  std::size_t header_len = 0;
  std::string crc_hex;
  {
    std::istringstream line(bytes.substr(kMagicLen, nl - kMagicLen));
    if (!(line >> header_len >> crc_hex) || crc_hex.size() != 8) throw IoError(where + ": malformed header line");
  }
  if (bytes.size() < nl + 1 + header_len) throw IoError(where + ": truncated header");
  const std::string text = bytes.substr(nl + 1, header_len);
  if (hex32(crc32_of(text.data(), text.size())) != crc_hex) throw IoError(where + ": header checksum mismatch");
  Raw raw;
  try {
    raw.header = json::parse(text);
  } catch (const json::exception& ex) {
    throw IoError(where + ": unreadable header: " + ex.what());
  }
  if (raw.header.value("format", "") != "magup-checkpoint") throw IoError(where + ": wrong format tag");
  const int version = raw.header.value("version", -1);
  if (version != kCheckpointVersion) {
    throw IoError(where + ": version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  raw.blob = bytes.substr(nl + 1 + header_len);
  const auto blob_bytes = raw.header.value("blob_bytes", std::size_t{0});
  if (raw.blob.size() < blob_bytes) {
    throw IoError(where + ": truncated blob (" + std::to_string(raw.blob.size()) + " of " + std::to_string(blob_bytes) +
                  " bytes)");
  }
  if (raw.blob.size() > blob_bytes) throw IoError(where + ": trailing bytes after the blob");
  if (blob_bytes % 4 != 0) throw IoError(where + ": blob length is not a multiple of 4");
  if (hex32(crc32_of(raw.blob.data(), raw.blob.size())) != raw.header.value("blob_crc32", "")) {
    throw IoError(where + ": blob checksum mismatch");
  }
  return raw;
}

CheckpointInfo info_of(const Raw& raw, const std::string& where) {
  CheckpointInfo info;
  try {
    info.config = run_config_from_json(raw.header.at("config"));
  } catch (const ConfigError& ex) {
    throw IoError(where + ": stored config rejected: " + ex.what());
  } catch (const json::exception& ex) {
    throw IoError(where + ": missing config: " + ex.what());
  }
  info.meta = raw.header.value("meta", json::object());
  info.manifest = parse_manifest(raw.header, raw.blob.size() / 4, where);
  return info;
}

}  // namespace

std::uint32_t crc32_of(const void* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

void save_checkpoint(const std::filesystem::path& path, SegModel& model, const RunConfig& cfg_in, const json& meta) {
  RunConfig cfg = cfg_in;
  cfg.model = model.cfg;
  cfg.model.use_bdc = model.bdc.has_value();
  json header;
  header["format"] = "magup-checkpoint";
  header["version"] = kCheckpointVersion;
  header["config"] = to_json(cfg);
  header["meta"] = meta;
  header["tensors"] = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.numel()}});
    for (double v : t.data()) put_f32(blob, v);
    offset += t.numel();
  }
  write_raw(path, std::move(header), blob);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return info_of(read_raw(path), "checkpoint " + path.string());
}

SegModel load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info_out) {
  const std::string where = "checkpoint " + path.string();
  const Raw raw = read_raw(path);
  CheckpointInfo info = info_of(raw, where);
  SegModel model = SegModel::make(info.config.model);
  std::map<std::string, const ManifestEntry*> by_name;
  for (const auto& e : info.manifest) {
    if (!by_name.emplace(e.name, &e).second) throw IoError(where + ": duplicate tensor " + e.name);
  }
  std::set<std::string> used;
  bool bdc_missing = false, bdc_present = false;
  for (auto& [name, t] : model.named_parameters()) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (component_of(name) == Component::bdc) {
        bdc_missing = true;
        continue;
      }
      throw IoError(where + ": missing tensor " + name);
    }
    if (component_of(name) == Component::bdc) bdc_present = true;
    const ManifestEntry& e = *it->second;
    if (e.shape != t.shape()) {
      throw IoError(where + ": tensor " + name + " has shape " + shape_str(e.shape) + ", model expects " +
                    shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < e.count; ++i) dst[i] = get_f32(raw.blob, e.offset + i);
    used.insert(name);
  }
  for (const auto& e : info.manifest) {
    if (!used.contains(e.name)) throw IoError(where + ": unexpected tensor " + e.name);
  }
  if (bdc_missing && bdc_present) throw IoError(where + ": BDC parameters are only partly present");
  if (bdc_missing) model.bdc.reset();
  if (info_out) *info_out = std::move(info);
  return model;
}

void strip_component(const std::filesystem::path& in, const std::filesystem::path& out, Component c) {
  const Raw raw = read_raw(in);
  const CheckpointInfo info = info_of(raw, "checkpoint " + in.string());
  json header = raw.header;
  header["tensors"] = json::array();
  std::string blob;
  std::size_t offset = 0;
  for (const auto& e : info.manifest) {
    if (component_of(e.name) == c) continue;
    header["tensors"].push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}, {"count", e.count}});
    blob.append(raw.blob, e.offset * 4, e.count * 4);
    offset += e.count;
  }
  write_raw(out, std::move(header), blob);
}

}  // namespace magup

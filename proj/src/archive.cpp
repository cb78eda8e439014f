#include "headsteer/archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "headsteer/errors.hpp"

namespace headsteer {

namespace {

constexpr int kArchiveVersion = 1;
constexpr std::array<std::string_view, 6> kReserved = {"format", "version", "dtype",
                                                       "byte_order", "blob", "tensors"};

void put_le32(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_le32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

std::size_t ArchiveEntry::numel() const { return shape_numel(shape); }

const ArchiveEntry* Archive::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  // Generated text is raw bytes; invalid UTF-8 is replaced rather than fatal.
  out << doc.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_archive(const std::filesystem::path& manifest, std::string_view format,
                   const nlohmann::json& header, std::span<const ArchiveEntry> entries) {
  nlohmann::json doc = nlohmann::json::object();
  if (!header.is_null()) {
    if (!header.is_object()) throw Error("archive header must be a JSON object");
    for (const auto& [key, value] : header.items()) {
      for (auto r : kReserved)
        if (key == r) throw Error("archive header uses reserved key '" + key + "'");
      doc[key] = value;
    }
  }
  const auto blob_name = manifest.stem().string() + ".bin";
  doc["format"] = std::string(format);
  doc["version"] = kArchiveVersion;
  doc["dtype"] = "float32";
  doc["byte_order"] = "little";
  doc["blob"] = blob_name;

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : entries) {
    if (e.numel() != e.data.size())
      throw ShapeError("archive entry '" + e.name + "' has " + std::to_string(e.data.size()) +
                       " values but its shape holds " + std::to_string(e.numel()));
    tensors.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", blob.size()}});
    blob.reserve(blob.size() + 4 * e.data.size());
    for (float v : e.data) put_le32(blob, v);
  }
  doc["tensors"] = std::move(tensors);

  write_json_file(manifest, doc);
  std::ofstream out(manifest.parent_path() / blob_name, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open blob for " + manifest.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw Error("failed writing blob for " + manifest.string());
}

Archive read_archive(const std::filesystem::path& manifest, std::string_view expected_format) {
  nlohmann::json doc = read_json_file(manifest);
  const auto where = manifest.string();
  try {
    if (doc.at("format").get<std::string>() != expected_format)
      throw ConfigError(where + ": expected format '" + std::string(expected_format) + "', got '" +
                        doc.at("format").get<std::string>() + "'");
    if (doc.at("version").get<int>() != kArchiveVersion)
      throw ConfigError(where + ": unsupported archive version");
    if (doc.at("dtype").get<std::string>() != "float32" ||
        doc.at("byte_order").get<std::string>() != "little")
      throw ConfigError(where + ": only little-endian float32 blobs are supported");

    const auto blob_path = manifest.parent_path() / doc.at("blob").get<std::string>();
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open blob " + blob_path.string());
    std::vector<unsigned char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Archive archive;
    for (const auto& t : doc.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto n = e.numel();
      if (offset % 4 != 0 || offset + 4 * n > blob.size())
        throw ConfigError(where + ": tensor '" + e.name + "' lies outside the blob");
      e.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) e.data[i] = get_le32(blob.data() + offset + 4 * i);
      archive.entries.push_back(std::move(e));
    }
    for (const auto& [key, value] : doc.items()) {
      bool reserved = false;
      for (auto r : kReserved) reserved = reserved || key == r;
      if (!reserved) archive.header[key] = value;
    }
    return archive;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": malformed manifest: " + e.what());
  }
}

}  // namespace headsteer

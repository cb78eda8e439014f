#pragma once

// Named float32 tensors stored as a JSON manifest next to one little-endian
// blob. The same container backs model weights, activation banks and steering
// vectors.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace headsteer {

struct ArchiveEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;

  std::size_t numel() const;
};

struct Archive {
  nlohmann::json header;  // every manifest key except the reserved ones
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(std::string_view name) const;
};

// Writes `<manifest>` and `<manifest stem>.bin` next to it. `header` keys are
// merged into the manifest root; "format", "version", "dtype", "byte_order",
// "blob" and "tensors" are reserved.
void write_archive(const std::filesystem::path& manifest, std::string_view format,
                   const nlohmann::json& header, std::span<const ArchiveEntry> entries);

// Throws ConfigError when the manifest is missing or malformed, or when its
// format tag differs from `expected_format`.
Archive read_archive(const std::filesystem::path& manifest, std::string_view expected_format);

// Pretty JSON with a trailing newline; all artifact JSON goes through here so
// that output bytes only depend on content.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json_file(const std::filesystem::path& path);

// Creates parent directories; bytes are written as given.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace headsteer

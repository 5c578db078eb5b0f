#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace cno::io {

/// magic(4) | u32 LE header length | JSON header | payload | u32 LE CRC32(payload)
struct Container {
  nlohmann::json header;
  std::vector<std::uint8_t> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& header,
                     std::span<const std::uint8_t> payload);
/// Throws io errors for unreadable files and format errors for anything
/// malformed (magic, truncation, checksum, JSON).
Container read_container(const std::filesystem::path& path, std::string_view magic);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Little-endian float32 encoding (the host is little-endian; checked at build).
void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values);
std::vector<float> read_f32(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count);

/// Writes a JSON document (pretty-printed) to `path`.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace cno::io

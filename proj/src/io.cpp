#include "cno/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cno/error.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace cno::io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 | static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    c = ::crc32(c, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void append_f32(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const std::size_t at = out.size();
  out.resize(at + values.size_bytes());
  std::memcpy(out.data() + at, values.data(), values.size_bytes());
}

std::vector<float> read_f32(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t count) {
  require(offset + count * sizeof(float) <= bytes.size(), ErrorKind::format, "payload shorter than its manifest");
  std::vector<float> out(count);
  std::memcpy(out.data(), bytes.data() + offset, count * sizeof(float));
  return out;
}

void write_container(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& header,
                     std::span<const std::uint8_t> payload) {
  require(magic.size() == 4, ErrorKind::usage, "container magic must be 4 bytes");
  const std::string text = header.dump();
  std::vector<std::uint8_t> head(magic.begin(), magic.end());
  put_u32(head, static_cast<std::uint32_t>(text.size()));
  std::vector<std::uint8_t> tail;
  put_u32(tail, crc32(payload));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(head.data()), static_cast<std::streamsize>(head.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(tail.data()), static_cast<std::streamsize>(tail.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string() + ": ";
  require(bytes.size() >= 12, ErrorKind::format, where + "file too short");
  require(std::memcmp(bytes.data(), magic.data(), 4) == 0, ErrorKind::format, where + "bad magic");
  const std::size_t hlen = get_u32(bytes.data() + 4);
  require(8 + hlen + 4 <= bytes.size(), ErrorKind::format, where + "truncated header");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, where + "malformed header: " + e.what());
  }
  const std::size_t start = 8 + hlen, stop = bytes.size() - 4;
  c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(stop));
  require(crc32(c.payload) == get_u32(bytes.data() + stop), ErrorKind::format, where + "checksum mismatch");
  return c;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << doc.dump(2) << '\n';
  require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, path.string() + ": " + e.what());
  }
}

}  // namespace cno::io

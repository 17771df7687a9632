#include "aslpar/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace aslpar {
namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'T', 'S', 'R'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint8_t kDtypeF32 = 0x00;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8U) |
         (static_cast<std::uint32_t>(p[2]) << 16U) | (static_cast<std::uint32_t>(p[3]) << 24U);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * t.rank() + 4 * t.size());
  for (std::uint8_t c : kMagic) out.push_back(c);
  out.push_back(kVersion);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape().dims()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(origin + ": not a DTSR tensor file (bad magic)");
  }
  if (bytes[4] != kVersion) throw FormatError(origin + ": unsupported DTSR version " + std::to_string(bytes[4]));
  if (bytes[5] != kDtypeF32) throw FormatError(origin + ": unsupported DTSR dtype " + std::to_string(bytes[5]));
  const std::size_t rank = bytes[6];
  if (rank == 0 || rank > Shape::kMaxRank) throw FormatError(origin + ": invalid rank " + std::to_string(rank));
  const std::size_t header = 7 + 4 * rank;
  if (bytes.size() < header) throw FormatError(origin + ": truncated header");
  std::vector<std::size_t> dims(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    dims[i] = get_u32(bytes.data() + 7 + 4 * i);
    if (dims[i] == 0) throw FormatError(origin + ": zero dimension");
  }
  const Shape shape{std::span<const std::size_t>(dims)};
  if (bytes.size() != header + 4 * shape.numel()) {
    throw FormatError(origin + ": payload holds " + std::to_string(bytes.size() - header) + " bytes, expected " +
                      std::to_string(4 * shape.numel()));
  }
  std::vector<float> data(shape.numel());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(get_u32(bytes.data() + header + 4 * i));
  return Tensor(shape, std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) { write_file_bytes(path, encode_tensor(t)); }

Tensor load_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path), path.string()); }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_tensor(const Tensor& t) {
  const auto bytes = encode_tensor(t);
  return fnv1a64(bytes.data(), bytes.size());
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xFU];
    v >>= 4U;
  }
  return s;
}

}  // namespace aslpar

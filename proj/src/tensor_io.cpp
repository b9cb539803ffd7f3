#include "aspan/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "aspan/errors.hpp"

namespace aspan {
namespace {

constexpr char kMagic[4] = {'A', 'S', 'P', 'T'};
constexpr std::uint8_t kVersion = 1;

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) v |= static_cast<U>(p[b]) << (8 * b);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t, DType dtype) {
  if (t.rank() > 255) throw DimensionError("tensor rank exceeds file format limit");
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    if (e > 0xFFFFFFFFu) throw DimensionError("tensor extent exceeds u32");
    put_le(out, static_cast<std::uint32_t>(e));
  }
  const std::size_t width = dtype == DType::f64 ? 8 : 4;
  out.reserve(out.size() + t.size() * width);
  for (double v : t.data()) {
    if (dtype == DType::f64) {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    } else {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not an ASPT tensor file");
  if (bytes[4] != kVersion) throw FormatError("unsupported ASPT version " + std::to_string(bytes[4]));
  const std::uint8_t dt = bytes[5];
  if (dt > 1) throw FormatError("unknown ASPT dtype " + std::to_string(dt));
  const std::size_t rank = bytes[6];
  std::size_t pos = 7;
  if (bytes.size() < pos + 4 * rank) throw FormatError("truncated ASPT header");
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i, pos += 4) shape[i] = get_le<std::uint32_t>(bytes.data() + pos);
  const std::size_t count = shape_size(shape);
  const std::size_t width = dt == 0 ? 8 : 4;
  if (bytes.size() - pos != count * width) throw FormatError("ASPT payload length does not match its shape");
  std::vector<double> data(count);
  for (std::size_t i = 0; i < count; ++i, pos += width) {
    data[i] = dt == 0 ? std::bit_cast<double>(get_le<std::uint64_t>(bytes.data() + pos))
                      : static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + pos)));
  }
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_tensor(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  write_file_bytes(path, encode_tensor(t, dtype));
}

Tensor read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file_bytes(path)); }

}  // namespace aspan

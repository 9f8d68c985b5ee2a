#include "tracktention/ten1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tracktention {

namespace {

constexpr char kMagic[4] = {'T', 'E', 'N', '1'};
constexpr std::size_t kHeaderFixed = 6;

void put_le(std::vector<std::byte>& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(std::span<const std::byte> in, std::size_t at, std::size_t bytes) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) v |= std::to_integer<std::uint64_t>(in[at + i]) << (8 * i);
  return v;
}

template <typename T>
constexpr Ten1Dtype dtype_of() {
  if constexpr (std::is_same_v<T, float>) {
    return Ten1Dtype::f32;
  } else {
    return Ten1Dtype::f64;
  }
}

}  // namespace

template <typename T>
std::vector<std::byte> encode_ten1(const Tensor<T>& tensor) {
  if (tensor.empty()) throw DimensionError("cannot encode an empty tensor");
  if (tensor.rank() > kTen1MaxRank) throw DimensionError("TEN1 supports rank <= 8");
  std::vector<std::byte> out;
  out.reserve(kHeaderFixed + 8 * tensor.rank() + sizeof(T) * tensor.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(dtype_of<T>()));
  out.push_back(static_cast<std::byte>(tensor.rank()));
  for (std::size_t e : tensor.shape()) put_le(out, e, 8);
  for (T v : tensor.data()) {
    if constexpr (std::is_same_v<T, float>) {
      put_le(out, std::bit_cast<std::uint32_t>(v), 4);
    } else {
      put_le(out, std::bit_cast<std::uint64_t>(v), 8);
    }
  }
  return out;
}

Ten1Dtype ten1_dtype(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderFixed) throw ParseError("TEN1 header truncated", bytes.size());
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ParseError("bad TEN1 magic", 0);
  const auto code = std::to_integer<std::uint8_t>(bytes[4]);
  if (code > 1) throw ParseError("unknown TEN1 dtype code " + std::to_string(code), 4);
  return static_cast<Ten1Dtype>(code);
}

template <typename T>
Tensor<T> decode_ten1(std::span<const std::byte> bytes) {
  const Ten1Dtype dtype = ten1_dtype(bytes);
  const std::size_t rank = std::to_integer<std::size_t>(bytes[5]);
  if (rank == 0 || rank > kTen1MaxRank) {
    throw ParseError("TEN1 rank " + std::to_string(rank) + " outside 1..8", 5);
  }
  if (bytes.size() < kHeaderFixed + 8 * rank) {
    throw ParseError("TEN1 extents truncated", bytes.size());
  }
  Shape shape(rank);
  std::uint64_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t at = kHeaderFixed + 8 * i;
    const std::uint64_t e = get_le(bytes, at, 8);
    if (e == 0) throw ParseError("TEN1 extent " + std::to_string(i) + " is zero", at);
    if (count > (std::uint64_t{1} << 40) / e) throw ParseError("TEN1 extents overflow", at);
    count *= e;
    shape[i] = static_cast<std::size_t>(e);
  }
  const std::size_t width = dtype == Ten1Dtype::f32 ? 4 : 8;
  const std::size_t payload_at = kHeaderFixed + 8 * rank;
  const std::size_t expected = payload_at + width * count;
  if (bytes.size() != expected) {
    throw ParseError("TEN1 payload length mismatch: expected " + std::to_string(expected) +
                         " bytes, file has " + std::to_string(bytes.size()),
                     std::min(bytes.size(), expected));
  }
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t at = payload_at + width * i;
    if (dtype == Ten1Dtype::f32) {
      data[i] = static_cast<T>(std::bit_cast<float>(static_cast<std::uint32_t>(get_le(bytes, at, 4))));
    } else {
      data[i] = static_cast<T>(std::bit_cast<double>(get_le(bytes, at, 8)));
    }
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

template <typename T>
void write_ten1(const std::filesystem::path& path, const Tensor<T>& tensor) {
  const auto bytes = encode_ten1(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

template <typename T>
Tensor<T> read_ten1(const std::filesystem::path& path) {
  return decode_ten1<T>(read_file_bytes(path));
}

template std::vector<std::byte> encode_ten1(const Tensor<float>&);
template std::vector<std::byte> encode_ten1(const Tensor<double>&);
template Tensor<float> decode_ten1(std::span<const std::byte>);
template Tensor<double> decode_ten1(std::span<const std::byte>);
template void write_ten1(const std::filesystem::path&, const Tensor<float>&);
template void write_ten1(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> read_ten1(const std::filesystem::path&);
template Tensor<double> read_ten1(const std::filesystem::path&);

}  // namespace tracktention

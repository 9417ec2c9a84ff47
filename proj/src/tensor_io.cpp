#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "mlec/tensor.hpp"
#include "tensor_node.hpp"

namespace mlec {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'L', 'T', 'N'};
constexpr std::uint32_t kMaxRank = 8;

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw std::runtime_error("tensor stream truncated");
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw std::runtime_error("not a tensor record (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("tensor format version " + std::to_string(version) + " unsupported (expected " +
                             std::to_string(kTensorFormatVersion) + ")");
  }
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > kMaxRank) throw std::runtime_error("tensor rank " + std::to_string(rank) + " implausible");
  Shape shape(rank);
  for (auto& d : shape) d = get_le<std::uint64_t>(in);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor::from_vector(std::move(shape), std::move(values));
}

}  // namespace mlec

#include "charm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "charm/error.hpp"

namespace charm {
namespace binary {
namespace {

constexpr std::size_t kMaxStringBytes = 1u << 24;

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
}

template <typename U>
void write_raw(std::ostream& out, U v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename U>
U read_raw(std::istream& in) {
  U v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("unexpected end of binary file");
  return to_little(v);
}

template <typename Real>
using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_raw(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_raw(out, v); }

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename Real>
void write_values(std::ostream& out, const Real* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) write_raw(out, std::bit_cast<Bits<Real>>(data[i]));
}

std::uint32_t read_u32(std::istream& in) { return read_raw<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_raw<std::uint64_t>(in); }

std::string read_string(std::istream& in) {
  const auto n = read_u32(in);
  if (n > kMaxStringBytes) throw IoError("corrupt binary file: oversized string");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw IoError("unexpected end of binary file");
  return s;
}

template <typename Real>
void read_values(std::istream& in, Real* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<Real>(read_raw<Bits<Real>>(in));
}

template void write_values<float>(std::ostream&, const float*, std::size_t);
template void write_values<double>(std::ostream&, const double*, std::size_t);
template void read_values<float>(std::istream&, float*, std::size_t);
template void read_values<double>(std::istream&, double*, std::size_t);

}  // namespace binary

namespace {
constexpr char kMagic[8] = {'C', 'H', 'A', 'R', 'M', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const std::string& header,
                     const std::vector<NamedTensor<Real>>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, sizeof kMagic);
  binary::write_u32(out, kVersion);
  binary::write_string(out, header);
  binary::write_u32(out, sizeof(Real));
  binary::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    binary::write_string(out, name);
    binary::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binary::write_u64(out, d);
    binary::write_values(out, t.data(), t.numel());
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("'" + path.string() + "' is not a checkpoint file");
  }
  if (binary::read_u32(in) != kVersion) throw IoError("unsupported checkpoint version");
  LoadedCheckpoint<Real> ck;
  ck.header = binary::read_string(in);
  if (binary::read_u32(in) != sizeof(Real)) {
    throw ConfigError("checkpoint value width does not match the requested precision");
  }
  const auto count = binary::read_u32(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor<Real> nt;
    nt.name = binary::read_string(in);
    const auto rank = binary::read_u32(in);
    if (rank > kMaxRank) throw IoError("corrupt checkpoint: rank too large");
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = binary::read_u64(in);
    nt.tensor = Tensor<Real>(shape);
    binary::read_values(in, nt.tensor.data(), nt.tensor.numel());
    ck.tensors.push_back(std::move(nt));
  }
  return ck;
}

template void save_checkpoint<float>(const std::filesystem::path&, const std::string&,
                                     const std::vector<NamedTensor<float>>&);
template void save_checkpoint<double>(const std::filesystem::path&, const std::string&,
                                      const std::vector<NamedTensor<double>>&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace charm

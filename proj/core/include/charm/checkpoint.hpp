#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "charm/tensor.hpp"

namespace charm {

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> tensor;
};

/// Parameter file: magic "CHARMCKP", u32 version, u32-length header blob,
/// u32 value width (4 or 8), u32 tensor count, then per tensor a u32-length
/// name, u32 rank, u64 dims and raw little-endian values. Save/load is bit-exact.
template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const std::string& header,
                     const std::vector<NamedTensor<Real>>& tensors);

template <typename Real>
struct LoadedCheckpoint {
  std::string header;
  std::vector<NamedTensor<Real>> tensors;
};

/// Throws IoError on a missing/corrupt file and ConfigError when the stored
/// value width differs from Real.
template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::filesystem::path& path);

namespace binary {

// Little-endian primitives shared by the checkpoint and index snapshot formats.
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_string(std::ostream& out, const std::string& s);
template <typename Real>
void write_values(std::ostream& out, const Real* data, std::size_t n);

std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
std::string read_string(std::istream& in);
template <typename Real>
void read_values(std::istream& in, Real* data, std::size_t n);

}  // namespace binary
}  // namespace charm

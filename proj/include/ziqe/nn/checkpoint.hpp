#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ziqe/nn/param_store.hpp"

namespace ziqe::nn {

/// Binary layout (all integers and floats little-endian):
///   "ZIQE" | u32 version
///   repeated: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
/// Records continue to end of file.
inline constexpr char kCheckpointMagic[4] = {'Z', 'I', 'Q', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

void write_records(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<std::uint8_t> encode_records(const std::vector<NamedTensor>& records);

/// Throws FormatError carrying the byte offset of the first bad field.
std::vector<NamedTensor> read_records(const std::filesystem::path& path);
std::vector<NamedTensor> decode_records(const std::vector<std::uint8_t>& bytes);

/// Parameter values as float32 records, in store order.
template <class T>
std::vector<NamedTensor> to_records(const ParamStore<T>& store, const std::string& prefix = "") {
  std::vector<NamedTensor> out;
  for (const auto& [name, p] : store) out.push_back({prefix + name, p.value.template cast<float>()});
  return out;
}

/// Builds a store from every record whose name starts with `prefix`
/// (prefix stripped).
template <class T>
ParamStore<T> from_records(const std::vector<NamedTensor>& records,
                           const std::string& prefix = "") {
  ParamStore<T> store;
  for (const auto& r : records) {
    if (r.name.rfind(prefix, 0) != 0) continue;
    store.add(r.name.substr(prefix.size()), r.tensor.template cast<T>());
  }
  return store;
}

/// Scalar metadata stored as a rank-1, length-1 record.
NamedTensor scalar_record(const std::string& name, double value);
/// Finds a scalar record; throws std::out_of_range if absent.
double find_scalar(const std::vector<NamedTensor>& records, const std::string& name);
bool has_record(const std::vector<NamedTensor>& records, const std::string& name);

}  // namespace ziqe::nn

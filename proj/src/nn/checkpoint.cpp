#include "ziqe/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace ziqe::nn {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated while reading " + std::string(what) +
                            " at byte offset " + std::to_string(pos_),
                        pos_);
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void copy(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_records(const std::vector<NamedTensor>& records) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& r : records) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.tensor.rank()));
    for (std::size_t d : r.tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(r.tensor.data());
    out.insert(out.end(), p, p + r.tensor.size() * sizeof(float));
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  const auto bytes = encode_records(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<NamedTensor> decode_records(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  char magic[4];
  in.copy(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic at byte offset 0", 0);
  }
  const std::size_t version_at = in.pos();
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " at byte offset " + std::to_string(version_at),
                      version_at);
  }
  std::vector<NamedTensor> out;
  while (!in.done()) {
    NamedTensor r;
    const std::uint32_t len = in.u32("name length");
    r.name.resize(len);
    in.copy(r.name.data(), len, "name");
    const std::size_t rank_at = in.pos();
    const std::uint32_t rank = in.u32("rank");
    if (rank < 1 || rank > 3) {
      throw FormatError("record '" + r.name + "' has invalid rank " + std::to_string(rank) +
                            " at byte offset " + std::to_string(rank_at),
                        rank_at);
    }
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = in.u32("dimension");
      count *= d;
    }
    std::vector<float> data(count);
    in.copy(data.data(), count * sizeof(float), "tensor data");
    r.tensor = Tensor<float>(std::move(shape), std::move(data));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<NamedTensor> read_records(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_records(bytes);
}

NamedTensor scalar_record(const std::string& name, double value) {
  return {name, Tensor<float>({1}, static_cast<float>(value))};
}

bool has_record(const std::vector<NamedTensor>& records, const std::string& name) {
  for (const auto& r : records)
    if (r.name == name) return true;
  return false;
}

double find_scalar(const std::vector<NamedTensor>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) {
      if (r.tensor.size() != 1) throw ShapeError("record " + name + " is not a scalar");
      return r.tensor[0];
    }
  }
  throw std::out_of_range("checkpoint has no record " + name);
}

}  // namespace ziqe::nn

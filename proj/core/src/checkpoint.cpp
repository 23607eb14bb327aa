#include "cbodd/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

#include "cbodd/errors.hpp"

namespace cbodd {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, data, static_cast<uInt>(n)));
}

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t n) : data_(data), n_(n) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw DataError("checkpoint truncated");
  }
  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicLen);
  for (const auto& r : records) {
    if (shape_numel(r.shape) != r.values.size())
      throw DimensionError("checkpoint record '" + r.name + "' shape/value mismatch");
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put_u32(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto e : r.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : r.values) put_f64(out, v);
  }
  put_u32(out, crc_of(out.data(), out.size()));
  return out;
}

std::vector<CheckpointRecord> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagicLen + 4 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0)
    throw DataError("not a CBODD01 checkpoint");
  const std::size_t body = bytes.size() - 4;
  Reader crc_reader(bytes.data() + body, 4);
  if (crc_reader.u32() != crc_of(bytes.data(), body)) throw DataError("checkpoint CRC mismatch");

  Reader r(bytes.data() + kMagicLen, body - kMagicLen);
  std::vector<CheckpointRecord> records;
  while (!r.done()) {
    CheckpointRecord rec;
    rec.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint32_t e = r.u32();
      if (e == 0) throw DataError("checkpoint record '" + rec.name + "' has a zero extent");
      rec.shape.push_back(e);
    }
    const std::size_t n = shape_numel(rec.shape);
    if (n > (body - kMagicLen) / 8) throw DataError("checkpoint record '" + rec.name + "' too large");
    rec.values.resize(n);
    for (auto& v : rec.values) v = r.f64();
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<CheckpointRecord> records_from(const NamedParams& params) {
  std::vector<CheckpointRecord> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params)
    out.push_back({name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointRecord>& records) {
  const auto bytes = encode_checkpoint(records);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing " + path.string());
}

std::vector<CheckpointRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_into(const std::vector<CheckpointRecord>& records, NamedParams& params) {
  std::unordered_map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArtifactMismatchError("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape != t.shape())
      throw ArtifactMismatchError("checkpoint shape " + shape_str(it->second->shape) + " for '" + name +
                                  "' does not match " + shape_str(t.shape()));
    std::copy(it->second->values.begin(), it->second->values.end(), t.data().begin());
  }
}

}  // namespace cbodd

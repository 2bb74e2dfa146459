#include "orbitkit/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace orbitkit {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr std::array<std::uint64_t, 256> make_crc_table() {
  std::array<std::uint64_t, 256> table{};
  for (std::uint64_t i = 0; i < 256; ++i) {
    std::uint64_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ 0xC96C5795D7870F42ull : c >> 1;
    table[i] = c;
  }
  return table;
}
constexpr auto kCrcTable = make_crc_table();

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u32(std::uint32_t v) { out_.append(reinterpret_cast<const char*>(&v), 4); }
  void u64(std::uint64_t v) { out_.append(reinterpret_cast<const char*>(&v), 8); }
  void floats(std::span<const float> v) { out_.append(reinterpret_cast<const char*>(v.data()), v.size_bytes()); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, bytes(4).data(), 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    std::memcpy(&v, bytes(8).data(), 8);
    return v;
  }
  void floats(std::span<float> out) { std::memcpy(out.data(), bytes(out.size_bytes()).data(), out.size_bytes()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw FormatError("unexpected end of data");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_shape(Writer& w, const Shape& shape) {
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
}

Tensor<float> read_tensor(Reader& r) {
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw FormatError("tensor rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) throw FormatError("zero-sized dimension");
    numel *= static_cast<std::uint64_t>(d);
  }
  if (numel * 4 > r.remaining()) throw FormatError("tensor data truncated");
  Tensor<float> t = rank == 0 ? Tensor<float>::scalar(0.0f) : Tensor<float>(shape);
  r.floats(t.values());
  return t;
}

}  // namespace

std::uint64_t crc64(std::string_view bytes, std::uint64_t crc) {
  crc = ~crc;
  for (unsigned char b : bytes) crc = kCrcTable[(crc ^ b) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

std::string encode_onv(const Tensor<float>& t) {
  Writer w;
  w.bytes("ONVS");
  w.u32(1);
  write_shape(w, t.shape());
  w.floats(t.values());
  return std::move(w.str());
}

Tensor<float> decode_onv(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4) != "ONVS") throw FormatError("bad .onv magic");
  if (const auto v = r.u32(); v != 1) throw FormatError("unsupported .onv version " + std::to_string(v));
  auto t = read_tensor(r);
  if (r.remaining() != 0) throw FormatError("trailing bytes in .onv");
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_onv(const std::filesystem::path& path, const Tensor<float>& t) { write_file_atomic(path, encode_onv(t)); }

Tensor<float> read_onv(const std::filesystem::path& path) {
  try {
    return decode_onv(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void Checkpoint::add(std::string name, Tensor<float> value) {
  if (contains(name)) throw std::invalid_argument("duplicate checkpoint tensor " + name);
  entries_.push_back({std::move(name), std::move(value)});
}

void Checkpoint::set(const std::string& name, Tensor<float> value) {
  for (auto& e : entries_)
    if (e.name == name) {
      e.value = std::move(value);
      return;
    }
  entries_.push_back({name, std::move(value)});
}

bool Checkpoint::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

const Tensor<float>& Checkpoint::at(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.value;
  throw FormatError("checkpoint has no tensor named " + std::string(name));
}

std::string Checkpoint::serialize() const {
  Writer w;
  w.bytes("ONVC");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name);
    write_shape(w, e.value.shape());
    w.floats(e.value.values());
  }
  const auto crc = crc64(w.str());
  w.u64(crc);
  return std::move(w.str());
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  if (bytes.size() < 20) throw FormatError("checkpoint too short");
  const auto payload = bytes.substr(0, bytes.size() - 8);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + payload.size(), 8);
  if (crc64(payload) != stored) throw FormatError("checkpoint CRC mismatch");
  Reader r(payload);
  if (r.bytes(4) != "ONVC") throw FormatError("bad checkpoint magic");
  if (const auto v = r.u32(); v != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(v));
  const std::uint32_t count = r.u32();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    std::string name(r.bytes(len));
    ck.add(std::move(name), read_tensor(r));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes in checkpoint");
  return ck;
}

}  // namespace orbitkit

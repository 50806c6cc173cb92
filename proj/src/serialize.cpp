#include "mqt/serialize.hpp"

#include <cstring>
#include <fstream>

#include "mqt/rng.hpp"

namespace mqt {

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw MqtError("write failed");
}

void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw MqtError(std::string("truncated file while reading ") + what);
}

// Store multi-byte values little-endian regardless of host order.
namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  write_bytes(os, buf, sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T), what);
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
#endif
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

void write_u8(std::ostream& os, uint8_t v) { put_le(os, v); }
void write_u32(std::ostream& os, uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, uint64_t v) { put_le(os, v); }
void write_i32(std::ostream& os, int32_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, v); }
void write_f64(std::ostream& os, double v) { put_le(os, v); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  if (!s.empty()) write_bytes(os, s.data(), s.size());
}

uint8_t read_u8(std::istream& is, const char* what) { return get_le<uint8_t>(is, what); }
uint32_t read_u32(std::istream& is, const char* what) { return get_le<uint32_t>(is, what); }
uint64_t read_u64(std::istream& is, const char* what) { return get_le<uint64_t>(is, what); }
int32_t read_i32(std::istream& is, const char* what) { return get_le<int32_t>(is, what); }
float read_f32(std::istream& is, const char* what) { return get_le<float>(is, what); }
double read_f64(std::istream& is, const char* what) { return get_le<double>(is, what); }

std::string read_string(std::istream& is, const char* what) {
  const uint32_t n = read_u32(is, what);
  if (n > (1u << 20)) throw MqtError(std::string("implausible string length in ") + what);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n, what);
  return s;
}

void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t) {
  write_string(os, name);
  write_u8(os, kDtypeF32);
  write_u8(os, static_cast<uint8_t>(t.rank()));
  for (int d : t.shape) write_i32(os, d);
  for (float v : t.data) write_f32(os, v);
}

void write_ivec_record(std::ostream& os, const std::string& name,
                       const std::vector<int32_t>& v) {
  write_string(os, name);
  write_u8(os, kDtypeI32);
  write_u8(os, 1);
  write_i32(os, static_cast<int32_t>(v.size()));
  for (int32_t x : v) write_i32(os, x);
}

void write_blob_record(std::ostream& os, const std::string& name, const std::string& bytes) {
  write_string(os, name);
  write_u8(os, kDtypeU8);
  write_u8(os, 1);
  write_i32(os, static_cast<int32_t>(bytes.size()));
  write_bytes(os, bytes.data(), bytes.size());
}

TensorRecord read_tensor_record(std::istream& is) {
  TensorRecord rec;
  rec.name = read_string(is, "record name");
  rec.dtype = read_u8(is, "record dtype");
  if (rec.dtype != kDtypeF32 && rec.dtype != kDtypeI32 && rec.dtype != kDtypeU8)
    throw MqtError("unknown dtype " + std::to_string(rec.dtype) + " in record '" + rec.name + "'");
  const int rank = read_u8(is, "record rank");
  int64_t numel = 1;
  for (int i = 0; i < rank; ++i) {
    const int32_t d = read_i32(is, "record dim");
    if (d < 0) throw MqtError("negative dimension in record '" + rec.name + "'");
    rec.dims.push_back(d);
    numel *= d;
  }
  if (rec.dtype == kDtypeF32) {
    rec.f32 = Tensor(rec.dims);
    for (int64_t i = 0; i < numel; ++i)
      rec.f32.data[static_cast<size_t>(i)] = read_f32(is, rec.name.c_str());
  } else if (rec.dtype == kDtypeI32) {
    rec.i32.resize(static_cast<size_t>(numel));
    for (int64_t i = 0; i < numel; ++i)
      rec.i32[static_cast<size_t>(i)] = read_i32(is, rec.name.c_str());
  } else {
    rec.u8.resize(static_cast<size_t>(numel));
    read_bytes(is, rec.u8.data(), static_cast<size_t>(numel), rec.name.c_str());
  }
  return rec;
}

uint64_t file_fnv1a(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MqtError("cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace mqt

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mqt/tensor.hpp"

namespace mqt {

// Little-endian binary primitives shared by the checkpoint and dataset
// containers. Reads throw MqtError on truncation.

void write_bytes(std::ostream& os, const void* p, size_t n);
void read_bytes(std::istream& is, void* p, size_t n, const char* what);

void write_u8(std::ostream& os, uint8_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_i32(std::ostream& os, int32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);

uint8_t read_u8(std::istream& is, const char* what);
uint32_t read_u32(std::istream& is, const char* what);
uint64_t read_u64(std::istream& is, const char* what);
int32_t read_i32(std::istream& is, const char* what);
float read_f32(std::istream& is, const char* what);
double read_f64(std::istream& is, const char* what);
std::string read_string(std::istream& is, const char* what);

// Named tensor record: name, dtype (0 = f32, 1 = i32, 2 = raw bytes), rank,
// dims, raw data.
enum : uint8_t { kDtypeF32 = 0, kDtypeI32 = 1, kDtypeU8 = 2 };

void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t);
void write_ivec_record(std::ostream& os, const std::string& name,
                       const std::vector<int32_t>& v);
void write_blob_record(std::ostream& os, const std::string& name, const std::string& bytes);

struct TensorRecord {
  std::string name;
  uint8_t dtype = kDtypeF32;
  std::vector<int> dims;
  Tensor f32;                 // filled when dtype == kDtypeF32
  std::vector<int32_t> i32;   // filled when dtype == kDtypeI32
  std::string u8;             // filled when dtype == kDtypeU8
};

TensorRecord read_tensor_record(std::istream& is);

// FNV-1a over a whole file; used for content-addressed artifact naming.
uint64_t file_fnv1a(const std::string& path);

}  // namespace mqt

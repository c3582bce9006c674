// Copyright 2026 The touchrag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "touchrag/core.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace touchrag {

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t mix64(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] so log() never sees zero.
  double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

size_t Rng::below(size_t n) {
  if (n == 0) throw ConfigError("Rng::below: n must be positive");
  // Rejection sampling over the largest multiple of n that fits in 64 bits.
  uint64_t span = ~uint64_t{0} - (~uint64_t{0} % n);
  uint64_t x;
  do {
    x = eng_();
  } while (x >= span);
  return static_cast<size_t>(x % n);
}

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

void ByteReader::need(size_t n, const char* what) const {
  if (buf.size() - pos < n) {
    std::ostringstream msg;
    msg << "truncated input while reading " << what << " at byte offset " << pos
        << " (need " << n << " bytes, have " << (buf.size() - pos) << ")";
    throw FormatError(msg.str());
  }
}

uint16_t ByteReader::u16(const char* what) {
  need(2, what);
  uint16_t v = static_cast<uint16_t>(static_cast<unsigned char>(buf[pos])) |
               static_cast<uint16_t>(static_cast<unsigned char>(buf[pos + 1])) << 8;
  pos += 2;
  return v;
}

uint32_t ByteReader::u32(const char* what) {
  need(4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

uint64_t ByteReader::u64(const char* what) {
  need(8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

float ByteReader::f32(const char* what) {
  uint32_t bits = u32(what);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

std::string ByteReader::bytes(size_t n, const char* what) {
  need(n, what);
  std::string s(buf.substr(pos, n));
  pos += n;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failure on file: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on file: " + path);
}

}  // namespace touchrag

// core/digest.cc

// Copyright 2026  vsrkit authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "core/digest.h"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace vsr {

std::string Digest::Hex() const { return ToHex(state_); }

std::string Digest::ToHex(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t Digest::OfBytes(const void* bytes, size_t n) {
  Digest d;
  d.Update(bytes, n);
  return d.Value();
}

uint64_t Digest::OfString(const std::string& s) { return OfBytes(s.data(), s.size()); }

uint64_t Digest::OfFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("Digest::OfFile: cannot open " + path);
  Digest d;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    std::streamsize got = in.gcount();
    if (got > 0) d.Update(buf.data(), static_cast<size_t>(got));
  }
  return d.Value();
}

}  // namespace vsr

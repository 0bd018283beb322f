// core/digest.h

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

#ifndef VSRKIT_CORE_DIGEST_H_
#define VSRKIT_CORE_DIGEST_H_

#include <cstddef>
#include <cstdint>
#include <string>

namespace vsr {

// 64-bit FNV-1a content digest. Used for config digests, checkpoint payload
// digests and the reproducibility records; not a cryptographic hash.
class Digest {
 public:
  Digest() : state_(14695981039346656037ULL) {}

  void Update(const void* bytes, size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 1099511628211ULL;
    }
  }
  void Update(const std::string& s) { Update(s.data(), s.size()); }

  uint64_t Value() const { return state_; }
  std::string Hex() const;

  static uint64_t OfBytes(const void* bytes, size_t n);
  static uint64_t OfString(const std::string& s);
  // Digest of a file's raw bytes; throws on missing file.
  static uint64_t OfFile(const std::string& path);

  static std::string ToHex(uint64_t v);

 private:
  uint64_t state_;
};

}  // namespace vsr

#endif  // VSRKIT_CORE_DIGEST_H_

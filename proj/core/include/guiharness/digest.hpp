#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace guiharness {

std::uint64_t fnv1a64(std::string_view data);
/// 16 lowercase hex digits.
std::string fnv1a64_hex(std::string_view data);
/// 64 lowercase hex digits.
std::string sha256_hex(std::string_view data);

/// Incremental SHA-256 for large artifacts (manifests).
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view data);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace guiharness

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace tdsr {

/// Incremental SHA-256, hex digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const unsigned char> bytes);
  void update(std::string_view text);
  std::string hex_digest();

 private:
  void* ctx_;
};

std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

}  // namespace tdsr

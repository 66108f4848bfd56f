#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pv {

/// Incremental SHA-256; `hex()` finalizes and returns the lowercase hex digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const unsigned char> bytes);
  Sha256& update(std::string_view text);
  Sha256& update(std::span<const double> values);
  std::string hex();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);

}  // namespace pv

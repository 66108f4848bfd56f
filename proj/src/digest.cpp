#include "pv/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "pv/errors.hpp"

namespace pv {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::runtime, "sha256: context initialisation failed");
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

Sha256& Sha256::update(std::span<const unsigned char> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
  return *this;
}

Sha256& Sha256::update(std::string_view text) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), text.data(), text.size());
  return *this;
}

Sha256& Sha256::update(std::span<const double> values) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), values.data(), values.size_bytes());
  return *this;
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md.data(), &len);
  std::string out(len * 2, '0');
  for (unsigned int i = 0; i < len; ++i) std::snprintf(&out[2 * i], 3, "%02x", md[i]);
  return out;
}

std::string sha256_hex(std::string_view bytes) { return Sha256().update(bytes).hex(); }

std::string sha256_hex(std::span<const double> values) { return Sha256().update(values).hex(); }

}  // namespace pv

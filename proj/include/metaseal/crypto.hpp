#pragma once

#include <string>
#include <vector>

#include "metaseal/common.hpp"

namespace metaseal::crypto {

inline constexpr int kPrivateKeyLength = 32;
inline constexpr int kPublicKeyLength = 65;  // 0x04 || X || Y
inline constexpr int kSignatureLength = 64;  // r || s, both 32 bytes

struct KeyPair {
  Bytes private_scalar;  // 32 bytes big-endian, in [1, n-1]
  Bytes public_point;    // 65 bytes uncompressed
  std::string key_id;
};

Bytes sha256(const Bytes& data);
Bytes hmac_sha256(const Bytes& key, const Bytes& data);

// Fresh random P-256 key pair.
KeyPair keygen(const std::string& key_id);

// Derives the public point for a given scalar (validated against the curve
// order). Used for key loading and known-answer tests.
KeyPair keypair_from_private(const Bytes& private_scalar,
                             const std::string& key_id);

// Deterministic nonce for ECDSA over SHA-256 digests, derived by HMAC-DRBG
// chaining so identical (key, message) pairs sign identically.
Bytes deterministic_nonce(const Bytes& private_scalar,
                          const Bytes& message_hash);

// Signs SHA-256(message). Returns exactly 64 bytes (r || s big-endian,
// fixed width, no ASN.1). Deterministic.
Bytes sign(const Bytes& private_scalar, const Bytes& message);

// True iff sig is a valid signature of SHA-256(message) under the public
// point. Malformed inputs return false, never throw.
bool verify(const Bytes& public_point, const Bytes& message,
            const Bytes& signature);

// Key files: <key_id>.priv holds 64 hex chars, <key_id>.pub 130 hex chars.
void save_key_files(const KeyPair& pair, const std::string& directory);
KeyPair load_key_pair(const std::string& directory, const std::string& key_id);
Bytes load_public_key(const std::string& path);

// Registry: JSON document mapping key_id -> {public: hex, owner: label}.
struct RegistryEntry {
  std::string key_id;
  std::string owner;
  Bytes public_point;
};

void registry_add(const std::string& registry_path, const RegistryEntry& entry);
std::vector<RegistryEntry> registry_load(const std::string& registry_path);
RegistryEntry registry_lookup(const std::string& registry_path,
                              const std::string& key_id);

}  // namespace metaseal::crypto

#include "metaseal/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/ec.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/obj_mac.h>
#include <openssl/rand.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include <json.hpp>

namespace metaseal::crypto {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* p) const { BN_free(p); }
};
struct BnCtxDeleter {
  void operator()(BN_CTX* p) const { BN_CTX_free(p); }
};
struct GroupDeleter {
  void operator()(EC_GROUP* p) const { EC_GROUP_free(p); }
};
struct PointDeleter {
  void operator()(EC_POINT* p) const { EC_POINT_free(p); }
};

using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;
using BnCtxPtr = std::unique_ptr<BN_CTX, BnCtxDeleter>;
using GroupPtr = std::unique_ptr<EC_GROUP, GroupDeleter>;
using PointPtr = std::unique_ptr<EC_POINT, PointDeleter>;

const EC_GROUP* curve_group() {
  static GroupPtr group(EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1));
  if (!group) throw Error("crypto", "failed to construct P-256 group");
  return group.get();
}

const BIGNUM* curve_order() {
  static BnPtr order = [] {
    BnPtr n(BN_new());
    BnCtxPtr ctx(BN_CTX_new());
    if (!n || !ctx || EC_GROUP_get_order(curve_group(), n.get(), ctx.get()) != 1)
      throw Error("crypto", "failed to read curve order");
    return n;
  }();
  return order.get();
}

BnPtr bytes_to_bn(const Bytes& bytes) {
  BnPtr bn(BN_bin2bn(bytes.data(), static_cast<int>(bytes.size()), nullptr));
  if (!bn) throw Error("crypto", "big-number conversion failed");
  return bn;
}

Bytes bn_to_bytes32(const BIGNUM* bn) {
  Bytes out(32, 0);
  if (BN_bn2binpad(bn, out.data(), 32) != 32)
    throw Error("crypto", "value does not fit in 32 bytes");
  return out;
}

// Checks a scalar lies in [1, n-1].
void check_private_scalar(const Bytes& scalar) {
  if (scalar.size() != kPrivateKeyLength)
    throw Error("crypto", "private scalar must be 32 bytes");
  BnPtr x = bytes_to_bn(scalar);
  if (BN_is_zero(x.get()) || BN_cmp(x.get(), curve_order()) >= 0)
    throw Error("crypto", "private scalar out of range");
}

Bytes encode_point(const EC_POINT* point) {
  BnCtxPtr ctx(BN_CTX_new());
  Bytes out(kPublicKeyLength, 0);
  size_t written =
      EC_POINT_point2oct(curve_group(), point, POINT_CONVERSION_UNCOMPRESSED,
                         out.data(), out.size(), ctx.get());
  if (written != static_cast<size_t>(kPublicKeyLength))
    throw Error("crypto", "public point encoding failed");
  return out;
}

// Returns nullptr instead of throwing so verify() can reject quietly.
PointPtr decode_point(const Bytes& encoded) {
  if (encoded.size() != kPublicKeyLength || encoded[0] != 0x04) return nullptr;
  PointPtr point(EC_POINT_new(curve_group()));
  BnCtxPtr ctx(BN_CTX_new());
  if (!point || !ctx) return nullptr;
  if (EC_POINT_oct2point(curve_group(), point.get(), encoded.data(),
                         encoded.size(), ctx.get()) != 1)
    return nullptr;
  if (EC_POINT_is_on_curve(curve_group(), point.get(), ctx.get()) != 1)
    return nullptr;
  return point;
}

std::string read_text_file(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("crypto", std::string("cannot open ") + what + ": " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  // Strip trailing whitespace/newlines from hand-edited files.
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' ||
                           text.back() == ' ' || text.back() == '\t'))
    text.pop_back();
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("crypto", "cannot write file: " + path);
  out << text << '\n';
  if (!out) throw Error("crypto", "short write: " + path);
}

}  // namespace

Bytes sha256(const Bytes& data) {
  Bytes digest(32, 0);
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1 ||
      len != 32)
    throw Error("crypto", "sha256 failed");
  return digest;
}

Bytes hmac_sha256(const Bytes& key, const Bytes& data) {
  Bytes mac(32, 0);
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(),
           data.size(), mac.data(), &len) == nullptr ||
      len != 32)
    throw Error("crypto", "hmac-sha256 failed");
  return mac;
}

KeyPair keygen(const std::string& key_id) {
  BnPtr scalar(BN_new());
  if (!scalar) throw Error("crypto", "allocation failed");
  // BN_priv_rand_range yields [0, n-1]; reject 0.
  do {
    if (BN_priv_rand_range(scalar.get(), curve_order()) != 1)
      throw Error("crypto", "randomness source failed");
  } while (BN_is_zero(scalar.get()));
  return keypair_from_private(bn_to_bytes32(scalar.get()), key_id);
}

KeyPair keypair_from_private(const Bytes& private_scalar,
                             const std::string& key_id) {
  check_private_scalar(private_scalar);
  BnPtr x = bytes_to_bn(private_scalar);
  PointPtr pub(EC_POINT_new(curve_group()));
  BnCtxPtr ctx(BN_CTX_new());
  if (!pub || !ctx ||
      EC_POINT_mul(curve_group(), pub.get(), x.get(), nullptr, nullptr,
                   ctx.get()) != 1)
    throw Error("crypto", "public key derivation failed");
  KeyPair pair;
  pair.private_scalar = private_scalar;
  pair.public_point = encode_point(pub.get());
  pair.key_id = key_id;
  return pair;
}

Bytes deterministic_nonce(const Bytes& private_scalar,
                          const Bytes& message_hash) {
  check_private_scalar(private_scalar);
  if (message_hash.size() != 32)
    throw Error("crypto", "nonce derivation expects a 32-byte digest");

  // bits2octets: reduce the digest mod n, re-encode as 32 bytes. qlen equals
  // hlen for this curve/hash pair, so no bit shifting is involved.
  BnPtr h = bytes_to_bn(message_hash);
  BnPtr reduced(BN_new());
  BnCtxPtr ctx(BN_CTX_new());
  if (!reduced || !ctx ||
      BN_mod(reduced.get(), h.get(), curve_order(), ctx.get()) != 1)
    throw Error("crypto", "digest reduction failed");
  Bytes h_octets = bn_to_bytes32(reduced.get());

  Bytes V(32, 0x01);
  Bytes K(32, 0x00);
  auto feed = [&](uint8_t tag) {
    Bytes msg = V;
    msg.push_back(tag);
    msg.insert(msg.end(), private_scalar.begin(), private_scalar.end());
    msg.insert(msg.end(), h_octets.begin(), h_octets.end());
    K = hmac_sha256(K, msg);
    V = hmac_sha256(K, V);
  };
  feed(0x00);
  feed(0x01);

  for (;;) {
    V = hmac_sha256(K, V);
    BnPtr k = bytes_to_bn(V);
    if (!BN_is_zero(k.get()) && BN_cmp(k.get(), curve_order()) < 0) return V;
    Bytes msg = V;
    msg.push_back(0x00);
    K = hmac_sha256(K, msg);
    V = hmac_sha256(K, V);
  }
}

Bytes sign(const Bytes& private_scalar, const Bytes& message) {
  check_private_scalar(private_scalar);
  const Bytes hash = sha256(message);
  const BIGNUM* n = curve_order();
  BnCtxPtr ctx(BN_CTX_new());
  BnPtr x = bytes_to_bn(private_scalar);
  BnPtr e = bytes_to_bn(hash);
  BnPtr e_mod(BN_new()), r(BN_new()), s(BN_new()), tmp(BN_new());
  PointPtr R(EC_POINT_new(curve_group()));
  if (!ctx || !e_mod || !r || !s || !tmp || !R)
    throw Error("crypto", "allocation failed");
  if (BN_mod(e_mod.get(), e.get(), n, ctx.get()) != 1)
    throw Error("crypto", "digest reduction failed");

  Bytes nonce_seed = hash;
  for (;;) {
    Bytes k_bytes = deterministic_nonce(private_scalar, nonce_seed);
    BnPtr k = bytes_to_bn(k_bytes);
    if (EC_POINT_mul(curve_group(), R.get(), k.get(), nullptr, nullptr,
                     ctx.get()) != 1)
      throw Error("crypto", "scalar multiplication failed");
    BnPtr rx(BN_new());
    if (!rx || EC_POINT_get_affine_coordinates(curve_group(), R.get(), rx.get(),
                                               nullptr, ctx.get()) != 1)
      throw Error("crypto", "affine coordinate extraction failed");
    if (BN_mod(r.get(), rx.get(), n, ctx.get()) != 1)
      throw Error("crypto", "modular reduction failed");
    if (!BN_is_zero(r.get())) {
      // s = k^-1 (e + r x) mod n
      BnPtr k_inv(BN_mod_inverse(nullptr, k.get(), n, ctx.get()));
      if (!k_inv) throw Error("crypto", "nonce inversion failed");
      if (BN_mod_mul(tmp.get(), r.get(), x.get(), n, ctx.get()) != 1 ||
          BN_mod_add(tmp.get(), tmp.get(), e_mod.get(), n, ctx.get()) != 1 ||
          BN_mod_mul(s.get(), k_inv.get(), tmp.get(), n, ctx.get()) != 1)
        throw Error("crypto", "signature arithmetic failed");
      if (!BN_is_zero(s.get())) break;
    }
    // Degenerate r or s: re-derive with a perturbed seed. Effectively
    // unreachable for this curve but keeps the loop total.
    nonce_seed = sha256(nonce_seed);
  }

  Bytes sig = bn_to_bytes32(r.get());
  Bytes s_bytes = bn_to_bytes32(s.get());
  sig.insert(sig.end(), s_bytes.begin(), s_bytes.end());
  return sig;
}

bool verify(const Bytes& public_point, const Bytes& message,
            const Bytes& signature) {
  try {
    if (signature.size() != kSignatureLength) return false;
    PointPtr Q = decode_point(public_point);
    if (!Q) return false;

    const BIGNUM* n = curve_order();
    Bytes r_bytes(signature.begin(), signature.begin() + 32);
    Bytes s_bytes(signature.begin() + 32, signature.end());
    BnPtr r = bytes_to_bn(r_bytes);
    BnPtr s = bytes_to_bn(s_bytes);
    if (BN_is_zero(r.get()) || BN_cmp(r.get(), n) >= 0) return false;
    if (BN_is_zero(s.get()) || BN_cmp(s.get(), n) >= 0) return false;

    BnCtxPtr ctx(BN_CTX_new());
    BnPtr e = bytes_to_bn(sha256(message));
    BnPtr e_mod(BN_new()), u1(BN_new()), u2(BN_new());
    if (!ctx || !e_mod || !u1 || !u2) return false;
    if (BN_mod(e_mod.get(), e.get(), n, ctx.get()) != 1) return false;
    BnPtr w(BN_mod_inverse(nullptr, s.get(), n, ctx.get()));
    if (!w) return false;
    if (BN_mod_mul(u1.get(), e_mod.get(), w.get(), n, ctx.get()) != 1)
      return false;
    if (BN_mod_mul(u2.get(), r.get(), w.get(), n, ctx.get()) != 1) return false;

    PointPtr R(EC_POINT_new(curve_group()));
    if (!R || EC_POINT_mul(curve_group(), R.get(), u1.get(), Q.get(), u2.get(),
                           ctx.get()) != 1)
      return false;
    if (EC_POINT_is_at_infinity(curve_group(), R.get())) return false;
    BnPtr rx(BN_new()), rx_mod(BN_new());
    if (!rx || !rx_mod ||
        EC_POINT_get_affine_coordinates(curve_group(), R.get(), rx.get(),
                                        nullptr, ctx.get()) != 1)
      return false;
    if (BN_mod(rx_mod.get(), rx.get(), n, ctx.get()) != 1) return false;
    return BN_cmp(rx_mod.get(), r.get()) == 0;
  } catch (const std::exception&) {
    return false;
  }
}

void save_key_files(const KeyPair& pair, const std::string& directory) {
  if (pair.key_id.empty()) throw Error("crypto", "key_id must not be empty");
  std::filesystem::create_directories(directory);
  const auto base = std::filesystem::path(directory) / pair.key_id;
  write_text_file(base.string() + ".priv", to_hex(pair.private_scalar));
  write_text_file(base.string() + ".pub", to_hex(pair.public_point));
}

KeyPair load_key_pair(const std::string& directory, const std::string& key_id) {
  const auto base = std::filesystem::path(directory) / key_id;
  Bytes scalar = from_hex(read_text_file(base.string() + ".priv", "private key"));
  KeyPair pair = keypair_from_private(scalar, key_id);
  // Cross-check against the stored public file when present.
  const std::string pub_path = base.string() + ".pub";
  if (std::filesystem::exists(pub_path)) {
    Bytes stored = from_hex(read_text_file(pub_path, "public key"));
    if (stored != pair.public_point)
      throw Error("crypto", "public key file does not match private scalar");
  }
  return pair;
}

Bytes load_public_key(const std::string& path) {
  Bytes point = from_hex(read_text_file(path, "public key"));
  if (!decode_point(point))
    throw Error("crypto", "file does not contain a valid public point: " + path);
  return point;
}

void registry_add(const std::string& registry_path, const RegistryEntry& entry) {
  nlohmann::json doc = nlohmann::json::object();
  {
    std::ifstream in(registry_path);
    if (in) {
      try {
        in >> doc;
      } catch (const nlohmann::json::exception&) {
        throw Error("crypto", "registry is not valid JSON: " + registry_path);
      }
      if (!doc.is_object())
        throw Error("crypto", "registry root must be a JSON object");
    }
  }
  doc[entry.key_id] = {{"public", to_hex(entry.public_point)},
                       {"owner", entry.owner}};
  std::ofstream out(registry_path, std::ios::trunc);
  if (!out) throw Error("crypto", "cannot write registry: " + registry_path);
  out << doc.dump(2) << '\n';
}

std::vector<RegistryEntry> registry_load(const std::string& registry_path) {
  std::ifstream in(registry_path);
  if (!in) throw Error("crypto", "cannot open registry: " + registry_path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception&) {
    throw Error("crypto", "registry is not valid JSON: " + registry_path);
  }
  if (!doc.is_object())
    throw Error("crypto", "registry root must be a JSON object");
  std::vector<RegistryEntry> entries;
  for (const auto& [key_id, value] : doc.items()) {
    RegistryEntry e;
    e.key_id = key_id;
    e.owner = value.value("owner", "");
    e.public_point = from_hex(value.at("public").get<std::string>());
    if (!decode_point(e.public_point))
      throw Error("crypto", "registry holds an invalid public point for " + key_id);
    entries.push_back(std::move(e));
  }
  return entries;
}

RegistryEntry registry_lookup(const std::string& registry_path,
                              const std::string& key_id) {
  for (auto& e : registry_load(registry_path))
    if (e.key_id == key_id) return e;
  throw Error("crypto", "key_id not present in registry: " + key_id);
}

}  // namespace metaseal::crypto

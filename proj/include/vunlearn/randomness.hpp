#pragma once

// Verifiable random function and publicly replayable minibatch schedules.
//
// The VRF is an ECVRF-style construction over ristretto255:
//   H = hash_to_group(pk, mu), Gamma = x H, proof = (Gamma, c, s) with
//   c = H(H, pk, Gamma, kB, kH) truncated to 128 bits and s = k + c x.
// The output value is sha512 over Gamma.

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vunlearn/crypto.hpp"
#include "vunlearn/error.hpp"

namespace vunlearn {

using Point = std::array<std::uint8_t, crypto_core_ristretto255_BYTES>;
using Scalar = std::array<std::uint8_t, crypto_core_ristretto255_SCALARBYTES>;
using VrfValue = std::array<std::uint8_t, 64>;

struct VrfKeypair {
  Scalar sk{};
  Point pk{};
};

struct VrfProof {
  Point gamma{};
  std::array<std::uint8_t, 16> c{};
  Scalar s{};

  static constexpr std::size_t kBytes = 32 + 16 + 32;

  Bytes to_bytes() const {
    Bytes out(gamma.begin(), gamma.end());
    out.insert(out.end(), c.begin(), c.end());
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  static VrfProof from_bytes(std::span<const std::uint8_t> b) {
    require(b.size() == kBytes, Errc::Parse, "VRF proof must be 80 bytes");
    VrfProof p;
    std::copy(b.begin(), b.begin() + 32, p.gamma.begin());
    std::copy(b.begin() + 32, b.begin() + 48, p.c.begin());
    std::copy(b.begin() + 48, b.end(), p.s.begin());
    return p;
  }

  friend bool operator==(const VrfProof&, const VrfProof&) = default;
};

struct VrfOutput {
  VrfValue value{};
  VrfProof proof;
  Bytes mu;
};

namespace detail {

inline Scalar reduce64(const std::array<std::uint8_t, 64>& wide) {
  Scalar s;
  crypto_core_ristretto255_scalar_reduce(s.data(), wide.data());
  return s;
}

inline Point vrf_hash_to_group(const Point& pk, std::span<const std::uint8_t> mu) {
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  static constexpr char tag[] = "vunlearn-vrf-h2g-v1";
  crypto_hash_sha512_update(&st, reinterpret_cast<const unsigned char*>(tag), sizeof(tag) - 1);
  crypto_hash_sha512_update(&st, pk.data(), pk.size());
  crypto_hash_sha512_update(&st, mu.data(), mu.size());
  std::array<std::uint8_t, 64> h;
  crypto_hash_sha512_final(&st, h.data());
  Point p;
  crypto_core_ristretto255_from_hash(p.data(), h.data());
  return p;
}

inline std::array<std::uint8_t, 16> vrf_challenge(const Point& h, const Point& pk, const Point& gamma, const Point& u,
                                                  const Point& v) {
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  static constexpr char tag[] = "vunlearn-vrf-challenge-v1";
  crypto_hash_sha512_update(&st, reinterpret_cast<const unsigned char*>(tag), sizeof(tag) - 1);
  for (const Point* p : {&h, &pk, &gamma, &u, &v}) crypto_hash_sha512_update(&st, p->data(), p->size());
  std::array<std::uint8_t, 64> d;
  crypto_hash_sha512_final(&st, d.data());
  std::array<std::uint8_t, 16> c;
  std::copy(d.begin(), d.begin() + 16, c.begin());
  return c;
}

inline Scalar widen(const std::array<std::uint8_t, 16>& c) {
  Scalar s{};
  std::copy(c.begin(), c.end(), s.begin());
  return s;
}

inline VrfValue vrf_value(const Point& gamma) {
  VrfValue v;
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  static constexpr char tag[] = "vunlearn-vrf-out-v1";
  crypto_hash_sha512_update(&st, reinterpret_cast<const unsigned char*>(tag), sizeof(tag) - 1);
  crypto_hash_sha512_update(&st, gamma.data(), gamma.size());
  crypto_hash_sha512_final(&st, v.data());
  return v;
}

inline bool is_zero(const Scalar& s) {
  return std::all_of(s.begin(), s.end(), [](std::uint8_t b) { return b == 0; });
}

}  // namespace detail

/// Deterministic keypair from seed material.
inline VrfKeypair vrf_keypair_from_seed(std::span<const std::uint8_t> seed) {
  ensure_sodium();
  std::array<std::uint8_t, 64> wide;
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  static constexpr char tag[] = "vunlearn-vrf-sk-v1";
  crypto_hash_sha512_update(&st, reinterpret_cast<const unsigned char*>(tag), sizeof(tag) - 1);
  crypto_hash_sha512_update(&st, seed.data(), seed.size());
  crypto_hash_sha512_final(&st, wide.data());
  VrfKeypair k;
  k.sk = detail::reduce64(wide);
  require(!detail::is_zero(k.sk), Errc::MalformedKey, "degenerate VRF secret key");
  crypto_scalarmult_ristretto255_base(k.pk.data(), k.sk.data());
  return k;
}

inline VrfKeypair vrf_keypair_from_seed(std::string_view seed) {
  return vrf_keypair_from_seed(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(seed.data()),
                                                             seed.size()));
}

inline VrfKeypair vrf_random_keypair() {
  ensure_sodium();
  VrfKeypair k;
  crypto_core_ristretto255_scalar_random(k.sk.data());
  crypto_scalarmult_ristretto255_base(k.pk.data(), k.sk.data());
  return k;
}

inline VrfOutput vrf_eval(const VrfKeypair& key, std::span<const std::uint8_t> mu) {
  ensure_sodium();
  require(!detail::is_zero(key.sk), Errc::MalformedKey, "zero VRF secret key");
  Point check;
  require(crypto_scalarmult_ristretto255_base(check.data(), key.sk.data()) == 0 && check == key.pk,
          Errc::MalformedKey, "VRF public key does not match the secret key");
  Point h = detail::vrf_hash_to_group(key.pk, mu);
  VrfOutput out;
  out.mu.assign(mu.begin(), mu.end());
  require(crypto_scalarmult_ristretto255(out.proof.gamma.data(), key.sk.data(), h.data()) == 0, Errc::MalformedKey,
          "VRF evaluation hit the identity");

  // Deterministic nonce from the secret key and the hashed input.
  std::array<std::uint8_t, 64> wide;
  crypto_hash_sha512_state st;
  crypto_hash_sha512_init(&st);
  static constexpr char tag[] = "vunlearn-vrf-nonce-v1";
  crypto_hash_sha512_update(&st, reinterpret_cast<const unsigned char*>(tag), sizeof(tag) - 1);
  crypto_hash_sha512_update(&st, key.sk.data(), key.sk.size());
  crypto_hash_sha512_update(&st, h.data(), h.size());
  crypto_hash_sha512_final(&st, wide.data());
  Scalar k = detail::reduce64(wide);
  Point u, v;
  crypto_scalarmult_ristretto255_base(u.data(), k.data());
  require(crypto_scalarmult_ristretto255(v.data(), k.data(), h.data()) == 0, Errc::MalformedKey, "degenerate VRF nonce");
  out.proof.c = detail::vrf_challenge(h, key.pk, out.proof.gamma, u, v);
  Scalar cx;
  Scalar c = detail::widen(out.proof.c);
  crypto_core_ristretto255_scalar_mul(cx.data(), c.data(), key.sk.data());
  crypto_core_ristretto255_scalar_add(out.proof.s.data(), k.data(), cx.data());
  out.value = detail::vrf_value(out.proof.gamma);
  return out;
}

inline bool vrf_verify(const Point& pk, std::span<const std::uint8_t> mu, const VrfValue& value,
                       const VrfProof& proof) {
  ensure_sodium();
  if (!crypto_core_ristretto255_is_valid_point(pk.data())) return false;
  if (!crypto_core_ristretto255_is_valid_point(proof.gamma.data())) return false;
  // s must be canonical.
  Scalar canon;
  std::array<std::uint8_t, 64> wide{};
  std::copy(proof.s.begin(), proof.s.end(), wide.begin());
  crypto_core_ristretto255_scalar_reduce(canon.data(), wide.data());
  if (canon != proof.s) return false;

  Point h = detail::vrf_hash_to_group(pk, mu);
  Scalar c = detail::widen(proof.c);
  Point sb, cy, u, sh, cg, v;
  if (crypto_scalarmult_ristretto255_base(sb.data(), proof.s.data()) != 0) return false;
  if (crypto_scalarmult_ristretto255(cy.data(), c.data(), pk.data()) != 0) return false;
  crypto_core_ristretto255_sub(u.data(), sb.data(), cy.data());
  if (crypto_scalarmult_ristretto255(sh.data(), proof.s.data(), h.data()) != 0) return false;
  if (crypto_scalarmult_ristretto255(cg.data(), c.data(), proof.gamma.data()) != 0) return false;
  crypto_core_ristretto255_sub(v.data(), sh.data(), cg.data());
  if (detail::vrf_challenge(h, pk, proof.gamma, u, v) != proof.c) return false;
  return sodium_memcmp(detail::vrf_value(proof.gamma).data(), value.data(), value.size()) == 0;
}

/// value mod n, reading the value as a big-endian integer.
inline std::uint64_t derive_index(std::span<const std::uint8_t> value, std::uint64_t n) {
  require(n >= 1, Errc::ZeroModulus, "index modulus must be at least 1");
  unsigned __int128 r = 0;
  for (std::uint8_t b : value) r = ((r << 8) | b) % n;
  return static_cast<std::uint64_t>(r);
}

/// Domain-separated VRF input for one draw.
inline Bytes sampling_input(std::string_view session_id, std::uint32_t epoch, std::uint64_t counter) {
  ByteWriter w;
  w.str("vunlearn-sample-v1");
  w.str(session_id);
  w.u32(epoch);
  w.u64(counter);
  return w.buf;
}

struct DrawRecord {
  std::uint64_t counter = 0;
  Bytes mu;
  VrfValue value{};
  VrfProof proof;
  std::optional<std::uint64_t> accepted;  // empty when the index was a duplicate

  friend bool operator==(const DrawRecord&, const DrawRecord&) = default;
};

struct EpochSchedule {
  static constexpr std::uint16_t kVersion = 1;

  std::string session_id;
  std::uint32_t epoch = 0;
  std::uint64_t num_rows = 0;
  std::uint64_t batch_size = 0;
  std::vector<std::vector<std::uint64_t>> batches;
  std::vector<DrawRecord> draws;

  friend bool operator==(const EpochSchedule&, const EpochSchedule&) = default;

  Bytes serialize() const {
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUSC"), 4));
    w.u16(kVersion);
    w.str(session_id);
    w.u32(epoch);
    w.u64(num_rows);
    w.u64(batch_size);
    w.u32(static_cast<std::uint32_t>(draws.size()));
    for (const auto& d : draws) {
      w.u64(d.counter);
      w.blob(d.mu);
      w.raw(d.value);
      w.raw(d.proof.to_bytes());
      w.u8(d.accepted.has_value());
      w.u64(d.accepted.value_or(0));
    }
    w.u32(static_cast<std::uint32_t>(batches.size()));
    for (const auto& b : batches) {
      w.u32(static_cast<std::uint32_t>(b.size()));
      for (auto i : b) w.u64(i);
    }
    return w.buf;
  }

  static EpochSchedule deserialize(std::span<const std::uint8_t> in) {
    ByteReader r{in};
    auto magic = r.raw(4);
    require(std::string(magic.begin(), magic.end()) == "VUSC", Errc::Parse, "not a schedule record");
    require(r.u16() == kVersion, Errc::Parse, "unsupported schedule version");
    EpochSchedule s;
    s.session_id = r.str();
    s.epoch = r.u32();
    s.num_rows = r.u64();
    s.batch_size = r.u64();
    std::uint32_t nd = r.u32();
    require(nd <= in.size(), Errc::Parse, "draw count exceeds record size");
    for (std::uint32_t i = 0; i < nd; ++i) {
      DrawRecord d;
      d.counter = r.u64();
      d.mu = r.blob();
      auto v = r.raw(64);
      std::copy(v.begin(), v.end(), d.value.begin());
      d.proof = VrfProof::from_bytes(r.raw(VrfProof::kBytes));
      bool acc = r.u8() != 0;
      std::uint64_t idx = r.u64();
      if (acc) d.accepted = idx;
      s.draws.push_back(std::move(d));
    }
    std::uint32_t nb = r.u32();
    require(nb <= in.size(), Errc::Parse, "batch count exceeds record size");
    for (std::uint32_t i = 0; i < nb; ++i) {
      std::uint32_t len = r.u32();
      require(len <= in.size(), Errc::Parse, "batch length exceeds record size");
      std::vector<std::uint64_t> b;
      for (std::uint32_t j = 0; j < len; ++j) b.push_back(r.u64());
      s.batches.push_back(std::move(b));
    }
    require(r.done(), Errc::Parse, "trailing bytes after schedule");
    return s;
  }
};

inline std::uint64_t batch_count(std::uint64_t n, std::uint64_t b) { return (n + b - 1) / b; }

/// Rejection-samples a permutation of 0..N-1 and chunks it in draw order.
inline EpochSchedule sample_epoch(const VrfKeypair& key, std::string_view session_id, std::uint32_t epoch,
                                  std::uint64_t n, std::uint64_t batch) {
  require(batch >= 1 && batch <= n, Errc::BadBatchSize, "batch size must be in [1, N]");
  EpochSchedule s{std::string(session_id), epoch, n, batch, {}, {}};
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<std::uint64_t> order;
  for (std::uint64_t counter = 0; order.size() < n; ++counter) {
    DrawRecord d;
    d.counter = counter;
    d.mu = sampling_input(session_id, epoch, counter);
    VrfOutput o = vrf_eval(key, d.mu);
    d.value = o.value;
    d.proof = o.proof;
    std::uint64_t idx = derive_index(o.value, n);
    if (!seen[idx]) {
      seen[idx] = 1;
      d.accepted = idx;
      order.push_back(idx);
    }
    s.draws.push_back(std::move(d));
  }
  for (std::uint64_t at = 0; at < n; at += batch) {
    s.batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, at + batch)));
  }
  return s;
}

struct ScheduleCheck {
  bool ok = false;
  std::string reason;
  explicit operator bool() const { return ok; }
};

/// Replays every draw against the public key; the schedule must match bit for bit.
inline ScheduleCheck verify_epoch(const Point& pk, std::string_view session_id, std::uint32_t epoch,
                                  const EpochSchedule& s) {
  auto fail = [](std::string why) { return ScheduleCheck{false, std::move(why)}; };
  if (s.session_id != session_id) return fail("schedule names another session");
  if (s.epoch != epoch) return fail("schedule names another epoch");
  if (s.batch_size < 1 || s.batch_size > s.num_rows) return fail("batch size out of range");
  std::vector<std::uint8_t> seen(s.num_rows, 0);
  std::vector<std::uint64_t> order;
  for (std::size_t i = 0; i < s.draws.size(); ++i) {
    const DrawRecord& d = s.draws[i];
    if (order.size() == s.num_rows) return fail("draws continue past a full permutation");
    if (d.counter != i) return fail("draw " + std::to_string(i) + " out of sequence");
    if (d.mu != sampling_input(session_id, epoch, d.counter)) return fail("draw " + std::to_string(i) + " input mismatch");
    if (!vrf_verify(pk, d.mu, d.value, d.proof)) return fail("draw " + std::to_string(i) + " VRF proof invalid");
    std::uint64_t idx = derive_index(d.value, s.num_rows);
    std::optional<std::uint64_t> want;
    if (!seen[idx]) {
      seen[idx] = 1;
      want = idx;
      order.push_back(idx);
    }
    if (d.accepted != want) return fail("draw " + std::to_string(i) + " accepted index mismatch");
  }
  if (order.size() != s.num_rows) return fail("schedule does not cover the dataset");
  if (s.batches.size() != batch_count(s.num_rows, s.batch_size)) return fail("wrong minibatch count");
  std::size_t at = 0;
  for (std::size_t b = 0; b < s.batches.size(); ++b) {
    std::size_t want_len = std::min<std::uint64_t>(s.batch_size, s.num_rows - at);
    if (s.batches[b].size() != want_len) return fail("minibatch " + std::to_string(b) + " has the wrong size");
    for (std::size_t j = 0; j < want_len; ++j) {
      if (s.batches[b][j] != order[at + j]) return fail("minibatch " + std::to_string(b) + " substituted");
    }
    at += want_len;
  }
  return {true, ""};
}

// ---------------------------------------------------------------------------
// Ed25519 signatures for owner requests and registrations.

using SignPublicKey = std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES>;
using Signature = std::array<std::uint8_t, crypto_sign_BYTES>;

struct SignKeypair {
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> sk{};
  SignPublicKey pk{};
};

inline SignKeypair sign_keypair_from_seed(std::string_view seed) {
  ensure_sodium();
  Digest d = sha256(std::string("vunlearn-sign-seed|") + std::string(seed));
  SignKeypair k;
  crypto_sign_seed_keypair(k.pk.data(), k.sk.data(), d.data());
  return k;
}

inline Signature sign_message(const SignKeypair& k, std::span<const std::uint8_t> msg) {
  ensure_sodium();
  Signature s;
  crypto_sign_detached(s.data(), nullptr, msg.data(), msg.size(), k.sk.data());
  return s;
}

inline bool verify_signature(const SignPublicKey& pk, std::span<const std::uint8_t> msg, const Signature& sig) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data(), msg.data(), msg.size(), pk.data()) == 0;
}

}  // namespace vunlearn

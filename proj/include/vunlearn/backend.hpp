#pragma once

// Pluggable proof backends. The reference backend is an auditable
// satisfiability checker, not a SNARK: a proof carries the witness values the
// verifier cannot recompute, encrypted under an audit key, and verification
// re-solves the rest of the witness and checks every constraint.
//
// Proof layout: "VUPF" | u16 version | circuit digest | nonce | blob(secretbox(
// zlib(context hash | u32 free count | free values | witness sha256))).

#include <zlib.h>

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vunlearn/crypto.hpp"
#include "vunlearn/error.hpp"
#include "vunlearn/r1cs.hpp"

namespace vunlearn {

inline Bytes zlib_compress(std::span<const std::uint8_t> in) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  Bytes out(cap + 8);
  ByteWriter hdr;
  hdr.u64(in.size());
  std::copy(hdr.buf.begin(), hdr.buf.end(), out.begin());
  int rc = compress2(out.data() + 8, &cap, in.data(), static_cast<uLong>(in.size()), 6);
  require(rc == Z_OK, Errc::Io, "zlib compression failed");
  out.resize(cap + 8);
  return out;
}

inline Bytes zlib_decompress(std::span<const std::uint8_t> in, std::size_t limit = std::size_t{1} << 31) {
  ByteReader r{in};
  std::uint64_t n = r.u64();
  require(n <= limit, Errc::Parse, "compressed payload too large");
  Bytes out(n);
  uLongf len = static_cast<uLongf>(n);
  int rc = uncompress(out.data(), &len, in.data() + 8, static_cast<uLong>(in.size() - 8));
  require(rc == Z_OK && len == n, Errc::Parse, "corrupt compressed payload");
  return out;
}

using AuditKey = std::array<std::uint8_t, crypto_secretbox_KEYBYTES>;

inline AuditKey audit_key_from_seed(std::string_view seed) {
  Digest d = sha256(std::string("vunlearn-audit-key|") + std::string(seed));
  AuditKey k{};
  std::copy(d.begin(), d.end(), k.begin());
  return k;
}

/// Which variables the verifier recomputes and which the proof must carry.
/// A variable is solved by the first constraint in which it is the only
/// unknown and appears only in C; every other unknown is carried.
struct SolvePlan {
  struct Step {
    std::uint32_t constraint;
    std::uint32_t var;
    Fr inv_coeff;
  };
  std::vector<std::uint32_t> carried;  // ascending variable indices
  std::vector<Step> steps;             // in constraint order

  static SolvePlan build(const ConstraintSystem<Fr>& cs) {
    const std::size_t n = cs.num_vars();
    std::vector<std::uint8_t> known(n, 0);
    for (std::size_t v = 0; v <= cs.num_public(); ++v) known[v] = 1;
    SolvePlan plan;
    std::vector<std::uint32_t> unknown;
    for (std::size_t i = 0; i < cs.constraint_count(); ++i) {
      unknown.clear();
      bool in_ab = false;
      for (int which = 0; which < 3; ++which) {
        for (const auto& t : cs.row(i, which)) {
          if (known[t.var]) continue;
          if (std::find(unknown.begin(), unknown.end(), t.var) == unknown.end()) unknown.push_back(t.var);
          if (which < 2) in_ab = true;
        }
      }
      if (unknown.empty()) continue;
      if (unknown.size() == 1 && !in_ab) {
        Fr c;
        for (const auto& t : cs.row(i, 2)) {
          if (t.var == unknown[0]) c += cs.coeff(t.coeff);
        }
        if (!c.is_zero()) {
          plan.steps.push_back(Step{static_cast<std::uint32_t>(i), unknown[0], c});
          known[unknown[0]] = 1;
          continue;
        }
      }
      for (auto v : unknown) known[v] = 2;
    }
    for (std::size_t v = 0; v < n; ++v) {
      if (known[v] != 1) plan.carried.push_back(static_cast<std::uint32_t>(v));
    }
    // Batch inversion of the C coefficients.
    std::vector<Fr> prefix(plan.steps.size() + 1, Fr::one());
    for (std::size_t i = 0; i < plan.steps.size(); ++i) prefix[i + 1] = prefix[i] * plan.steps[i].inv_coeff;
    Fr acc = prefix.back().inverse();
    for (std::size_t i = plan.steps.size(); i-- > 0;) {
      Fr c = plan.steps[i].inv_coeff;
      plan.steps[i].inv_coeff = acc * prefix[i];
      acc *= c;
    }
    return plan;
  }

  /// Rebuilds the full assignment from public inputs and carried values.
  Witness<Fr> solve(const ConstraintSystem<Fr>& cs, std::span<const Fr> publics, std::span<const Fr> values) const {
    require(publics.size() == cs.num_public(), Errc::LengthMismatch, "public input count mismatch");
    require(values.size() == carried.size(), Errc::LengthMismatch, "carried value count mismatch");
    Witness<Fr> w;
    w.values.assign(cs.num_vars(), Fr::zero());
    w.values[0] = Fr::one();
    for (std::size_t i = 0; i < publics.size(); ++i) w.values[i + 1] = publics[i];
    for (std::size_t i = 0; i < carried.size(); ++i) w.values[carried[i]] = values[i];
    std::span<const Fr> z(w.values);
    for (const auto& s : steps) {
      Fr rest;
      for (const auto& t : cs.row(s.constraint, 2)) {
        if (t.var != s.var) rest += cs.coeff(t.coeff) * z[t.var];
      }
      w.values[s.var] = (cs.eval_row(s.constraint, 0, z) * cs.eval_row(s.constraint, 1, z) - rest) * s.inv_coeff;
    }
    return w;
  }
};

inline Digest witness_digest(const Witness<Fr>& w) {
  Sha256 h;
  h.update("vunlearn-witness-v1");
  for (const auto& v : w.values) h.update(v.to_bytes());
  return h.finish();
}

struct ProvingKey {
  std::shared_ptr<const ConstraintSystem<Fr>> cs;
  std::shared_ptr<const SolvePlan> plan;
};

using VerifyingKey = ProvingKey;

struct VerifyResult {
  bool ok = false;
  std::string reason;

  explicit operator bool() const { return ok; }
};

class ProofBackend {
 public:
  virtual ~ProofBackend() = default;
  virtual std::string name() const = 0;
  virtual std::pair<ProvingKey, VerifyingKey> setup(std::shared_ptr<const ConstraintSystem<Fr>> cs) const = 0;
  virtual Bytes prove(const ProvingKey& pk, const Witness<Fr>& w, std::span<const std::uint8_t> context) const = 0;
  virtual VerifyResult verify(const VerifyingKey& vk, std::span<const Fr> publics, std::span<const std::uint8_t> context,
                              std::span<const std::uint8_t> proof) const = 0;
};

class ReferenceBackend final : public ProofBackend {
 public:
  static constexpr std::uint16_t kVersion = 1;

  explicit ReferenceBackend(const AuditKey& key) : key_(key) { ensure_sodium(); }

  std::string name() const override { return "reference-satisfiability-v1"; }

  std::pair<ProvingKey, VerifyingKey> setup(std::shared_ptr<const ConstraintSystem<Fr>> cs) const override {
    auto plan = std::make_shared<const SolvePlan>(SolvePlan::build(*cs));
    ProvingKey k{std::move(cs), std::move(plan)};
    return {k, k};
  }

  Bytes prove(const ProvingKey& pk, const Witness<Fr>& w, std::span<const std::uint8_t> context) const override {
    require(pk.cs->is_satisfied(w), Errc::Unsatisfiable, "witness does not satisfy the circuit");
    return seal(pk, w, context);
  }

  /// Packs a witness without checking it. Lets tests play a cheating prover.
  Bytes seal(const ProvingKey& pk, const Witness<Fr>& w, std::span<const std::uint8_t> context) const {
    const auto& cs = *pk.cs;
    Digest wd = witness_digest(w);
    ByteWriter payload;
    payload.raw(sha256(context));
    payload.u32(static_cast<std::uint32_t>(pk.plan->carried.size()));
    for (auto v : pk.plan->carried) put_compact(payload, w.values[v]);
    payload.raw(wd);
    Bytes packed = zlib_compress(payload.buf);

    std::array<std::uint8_t, crypto_secretbox_NONCEBYTES> nonce{};
    Sha256 nh;
    nh.update("vunlearn-proof-nonce").update(key_).update(context).update(wd);
    Digest nd = nh.finish();
    std::copy(nd.begin(), nd.begin() + nonce.size(), nonce.begin());
    Bytes sealed(packed.size() + crypto_secretbox_MACBYTES);
    crypto_secretbox_easy(sealed.data(), packed.data(), packed.size(), nonce.data(), key_.data());

    ByteWriter out;
    out.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUPF"), 4));
    out.u16(kVersion);
    out.raw(cs.digest());
    out.raw(nonce);
    out.blob(sealed);
    return out.buf;
  }

  VerifyResult verify(const VerifyingKey& vk, std::span<const Fr> publics, std::span<const std::uint8_t> context,
                      std::span<const std::uint8_t> proof) const override {
    try {
      const auto& cs = *vk.cs;
      ByteReader r{proof};
      auto magic = r.raw(4);
      if (std::string(magic.begin(), magic.end()) != "VUPF") return {false, "bad proof magic"};
      if (r.u16() != kVersion) return {false, "unsupported proof version"};
      auto digest = r.raw(32);
      if (!std::equal(digest.begin(), digest.end(), cs.digest().begin())) return {false, "circuit digest mismatch"};
      auto nonce = r.raw(crypto_secretbox_NONCEBYTES);
      Bytes sealed = r.blob();
      if (!r.done()) return {false, "trailing bytes after proof"};
      if (sealed.size() < crypto_secretbox_MACBYTES) return {false, "proof body truncated"};
      Bytes packed(sealed.size() - crypto_secretbox_MACBYTES);
      if (crypto_secretbox_open_easy(packed.data(), sealed.data(), sealed.size(), nonce.data(), key_.data()) != 0) {
        return {false, "proof authentication failed"};
      }
      Bytes payload = zlib_decompress(packed);
      ByteReader p{payload};
      auto ctx = p.raw(32);
      Digest want = sha256(context);
      if (!std::equal(ctx.begin(), ctx.end(), want.begin())) return {false, "proof bound to a different statement"};
      std::uint32_t count = p.u32();
      if (count != vk.plan->carried.size()) return {false, "carried value count mismatch"};
      std::vector<Fr> values;
      values.reserve(count);
      for (std::uint32_t i = 0; i < count; ++i) values.push_back(get_compact(p));
      auto wd = p.raw(32);
      if (!p.done()) return {false, "trailing bytes in proof payload"};
      if (publics.size() != cs.num_public()) return {false, "public input count mismatch"};
      Witness<Fr> w = vk.plan->solve(cs, publics, values);
      Digest got = witness_digest(w);
      if (!std::equal(wd.begin(), wd.end(), got.begin())) return {false, "witness digest mismatch"};
      if (auto bad = cs.first_violation(w)) return {false, "constraint " + std::to_string(*bad) + " violated"};
      return {true, ""};
    } catch (const Error& e) {
      return {false, e.what()};
    }
  }

 private:
  // Length-prefixed minimal little-endian encoding; bits take two bytes.
  static void put_compact(ByteWriter& w, const Fr& v) {
    auto b = v.to_bytes();
    std::size_t n = b.size();
    while (n > 0 && b[n - 1] == 0) --n;
    w.u8(static_cast<std::uint8_t>(n));
    w.raw(std::span<const std::uint8_t>(b.data(), n));
  }

  static Fr get_compact(ByteReader& r) {
    std::size_t n = r.u8();
    require(n <= 32, Errc::Parse, "field element longer than 32 bytes");
    std::array<std::uint8_t, 32> b{};
    auto s = r.raw(n);
    std::copy(s.begin(), s.end(), b.begin());
    Fr v;
    require(Fr::from_bytes(b, v), Errc::Parse, "non-canonical field element");
    return v;
  }

  AuditKey key_;
};

}  // namespace vunlearn

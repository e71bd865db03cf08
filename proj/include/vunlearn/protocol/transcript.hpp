#pragma once

// Public protocol record and its on-disk form:
//
//   session.json                 config, owner registry, trainer VRF key, pinned circuit digests
//   commitments.json             dataset root, model-commitment chain, mask-commitment chain
//   round-<t>/round.json         optimizer settings and per-step public flags
//   round-<t>/schedule.bin       VRF schedules, one per epoch
//   round-<t>/mask-update.proof  state-transition proof
//   round-<t>/step-<k>.proof     training-step proofs
//   round-<t>/fad-<k>.proof      replica-detection proofs
//
// Binary records are length-prefixed and versioned.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vunlearn/circuits.hpp"
#include "vunlearn/randomness.hpp"

namespace vunlearn {

using Json = nlohmann::ordered_json;

inline constexpr std::uint32_t kTranscriptVersion = 1;

enum class Optimizer { BGD, SGD, MSGD };

inline const char* to_string(Optimizer o) {
  switch (o) {
    case Optimizer::BGD: return "bgd";
    case Optimizer::SGD: return "sgd";
    default: return "msgd";
  }
}

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "bgd") return Optimizer::BGD;
  if (s == "sgd") return Optimizer::SGD;
  if (s == "msgd") return Optimizer::MSGD;
  throw Error(Errc::Parse, "unknown optimizer '" + s + "' (bgd, sgd, msgd)");
}

// ---------------------------------------------------------------------------
// Encoding helpers.

inline std::string fr_to_json(const Fr& v) { return v.to_string(); }

inline Fr fr_from_json(const std::string& s) {
  require(!s.empty() && s.size() <= 78, Errc::Parse, "bad field element '" + s + "'");
  Fr acc;
  const Fr ten = Fr::from_u64(10);
  for (char c : s) {
    require(c >= '0' && c <= '9', Errc::Parse, "bad field element '" + s + "'");
    acc = acc * ten + Fr::from_u64(static_cast<u64>(c - '0'));
  }
  require(acc.to_string() == s, Errc::Parse, "non-canonical field element '" + s + "'");
  return acc;
}

inline std::string u128_to_string(u128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.insert(s.begin(), static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return s;
}

inline u128 u128_from_string(const std::string& s) {
  require(!s.empty() && s.size() <= 39, Errc::Parse, "bad 128-bit integer '" + s + "'");
  u128 v = 0;
  for (char c : s) {
    require(c >= '0' && c <= '9', Errc::Parse, "bad 128-bit integer '" + s + "'");
    u128 next = v * 10 + static_cast<u128>(c - '0');
    require(next / 10 == v, Errc::Parse, "128-bit integer overflow");
    v = next;
  }
  return v;
}

template <std::size_t N>
std::array<std::uint8_t, N> hex_array(const std::string& s) {
  Bytes b = from_hex(s);
  require(b.size() == N, Errc::Parse, "expected " + std::to_string(N) + " hex bytes");
  std::array<std::uint8_t, N> out;
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

inline Json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + p.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::Parse, p.filename().string() + ": " + e.what());
  }
}

inline Bytes read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), Errc::Io, "cannot open " + p.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

/// Write-then-rename so a record is either absent or complete.
inline void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> data) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), Errc::Io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    require(static_cast<bool>(out), Errc::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, p);
}

inline void write_json_atomic(const std::filesystem::path& p, const Json& j) {
  std::string s = j.dump(2) + "\n";
  write_file_atomic(p, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

// ---------------------------------------------------------------------------
// Configuration.

struct SessionConfig {
  std::string label = "vunlearn";
  FixedConfig fixed;
  ModelShape model = ModelShape::lr(4);
  std::size_t fad_slots = 8;  // capacity for unlearned rows in detection proofs
  double init_scale = 0.5;    // initial parameters uniform in [-s, s]

  void validate() const {
    fixed.validate();
    model.validate();
    require(fad_slots >= 1, Errc::BadParams, "fad_slots must be at least 1");
    require(init_scale >= 0, Errc::BadParams, "init_scale must be non-negative");
  }

  Json to_json() const {
    return Json{{"label", label},
                {"scale_bits", fixed.scale_bits},
                {"range_bits", fixed.range_bits},
                {"model", {{"kind", to_string(model.kind)}, {"J", model.J}, {"H", model.H}, {"K", model.K}}},
                {"fad_slots", fad_slots},
                {"init_scale", init_scale}};
  }

  static SessionConfig from_json(const Json& j) {
    SessionConfig c;
    c.label = j.at("label").get<std::string>();
    c.fixed.scale_bits = j.at("scale_bits").get<unsigned>();
    c.fixed.range_bits = j.at("range_bits").get<unsigned>();
    const auto& m = j.at("model");
    c.model = ModelShape{parse_model_kind(m.at("kind").get<std::string>()), m.at("J").get<std::size_t>(),
                         m.at("H").get<std::size_t>(), m.at("K").get<std::size_t>()};
    c.fad_slots = j.at("fad_slots").get<std::size_t>();
    c.init_scale = j.at("init_scale").get<double>();
    c.validate();
    return c;
  }
};

struct RoundParams {
  Optimizer optimizer = Optimizer::MSGD;
  std::size_t batch = 10;  // MSGD only; BGD uses N, SGD uses 1
  std::size_t epochs = 1;
  std::int64_t eta_raw = 0;
  u128 xi_sq = 0;  // squared detection threshold at scale 2f

  static RoundParams make(Optimizer o, std::size_t batch, std::size_t epochs, double eta, double xi,
                          const FixedConfig& cfg) {
    RoundParams p{o, batch, epochs, fixed::to_raw(eta, cfg), 0};
    double raw = std::floor(std::ldexp(xi, static_cast<int>(cfg.scale_bits)));
    require(xi >= 0 && raw < 1.8e19, Errc::BadParams, "xi must be a non-negative fixed-point value");
    p.xi_sq = static_cast<u128>(raw) * static_cast<u128>(raw);
    return p;
  }

  std::size_t batch_for(std::size_t n) const {
    switch (optimizer) {
      case Optimizer::BGD: return n;
      case Optimizer::SGD: return 1;
      default: return batch;
    }
  }

  void validate(std::size_t n) const {
    require(epochs >= 1 && epochs < 65536, Errc::BadParams, "epochs must be in [1, 65535]");
    std::size_t b = batch_for(n);
    require(b >= 1 && b <= n, Errc::BadBatchSize, "batch size must be in [1, N]");
  }

  Json to_json() const {
    return Json{{"optimizer", to_string(optimizer)}, {"batch", batch},     {"epochs", epochs},
                {"eta_raw", eta_raw},                {"xi_sq", u128_to_string(xi_sq)}};
  }

  static RoundParams from_json(const Json& j) {
    return RoundParams{parse_optimizer(j.at("optimizer").get<std::string>()), j.at("batch").get<std::size_t>(),
                       j.at("epochs").get<std::size_t>(), j.at("eta_raw").get<std::int64_t>(),
                       u128_from_string(j.at("xi_sq").get<std::string>())};
  }
};

/// Epoch identifier fed to the VRF: round in the high bits, epoch in the low 16.
inline std::uint32_t epoch_id(std::uint32_t round, std::size_t epoch) {
  return (round << 16) | static_cast<std::uint32_t>(epoch);
}

// ---------------------------------------------------------------------------
// Records.

struct OwnerRecord {
  std::string name;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
  SignPublicKey pk{};
  Fr commitment;  // owner dataset root
  std::optional<Signature> signature;
};

struct SessionRecord {
  std::uint32_t version = kTranscriptVersion;
  std::string session_id;
  SessionConfig config;
  std::vector<OwnerRecord> owners;
  Point vrf_pk{};
  Fr dataset_root;
  Fr initial_model;
  std::string backend;
  std::map<std::string, std::string> circuits;  // shape key -> digest hex

  DatasetLayout layout() const {
    DatasetLayout l;
    l.num_features = config.model.J;
    l.num_labels = config.model.label_cols();
    for (const auto& o : owners) l.owners.push_back(OwnerRange{o.name, o.begin, o.end});
    l.num_rows = owners.empty() ? 0 : owners.back().end;
    return l;
  }
};

struct RequestRecord {
  std::string owner;
  Fr root;
  std::optional<Signature> signature;  // absent: identity request with zero randomness
};

struct StepRecord {
  std::uint32_t epoch = 0;
  std::uint32_t batch = 0;  // index within the epoch
  Fr model_out;
  std::vector<std::uint8_t> flags;
};

enum class ProofKind : std::uint8_t { MaskUpdate = 0, Step = 1, Fad = 2 };

inline const char* to_string(ProofKind k) {
  switch (k) {
    case ProofKind::MaskUpdate: return "mask-update";
    case ProofKind::Step: return "step";
    default: return "fad";
  }
}

struct RoundRecord {
  std::uint32_t round = 0;
  RoundParams params;
  std::vector<RequestRecord> requests;  // layout order
  Fr prev_mask;
  Fr next_mask;
  std::vector<EpochSchedule> schedules;  // empty for BGD
  std::vector<StepRecord> steps;
  Bytes mask_proof;
  std::vector<Bytes> step_proofs;
  std::vector<Bytes> fad_proofs;
};

/// Statement context every proof is bound to.
inline Bytes proof_context(const std::string& session_id, ProofKind kind, std::uint32_t round, std::uint32_t step,
                           const std::string& circuit_key) {
  ByteWriter w;
  w.str("vunlearn-proof-context-v1");
  w.str(session_id);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(round);
  w.u32(step);
  w.str(circuit_key);
  return w.buf;
}

inline Bytes request_message(const std::string& session_id, const std::string& owner, std::uint32_t round,
                             const Fr& root) {
  ByteWriter w;
  w.str("vunlearn-request-v1");
  w.str(session_id);
  w.str(owner);
  w.u32(round);
  w.raw(root.to_bytes());
  return w.buf;
}

inline Bytes registration_message(const std::string& session_id, const OwnerRecord& o) {
  ByteWriter w;
  w.str("vunlearn-register-v1");
  w.str(session_id);
  w.str(o.name);
  w.u64(o.begin);
  w.u64(o.end);
  w.raw(o.pk);
  w.raw(o.commitment.to_bytes());
  return w.buf;
}

/// Session identifier: hash over everything fixed at registration.
inline std::string compute_session_id(const SessionRecord& s) {
  Sha256 h;
  h.update("vunlearn-session-v1");
  h.update(s.config.to_json().dump());
  for (const auto& o : s.owners) {
    h.update(o.name).update_u64(o.begin).update_u64(o.end).update(o.pk).update(o.commitment.to_bytes());
  }
  h.update(s.vrf_pk).update(s.dataset_root.to_bytes()).update(s.initial_model.to_bytes()).update(s.backend);
  return to_hex(h.finish());
}

// ---------------------------------------------------------------------------
// Proof records.

inline Bytes wrap_proof(ProofKind kind, std::uint32_t round, std::uint32_t step, std::span<const std::uint8_t> proof) {
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUPR"), 4));
  w.u16(kTranscriptVersion);
  w.u8(static_cast<std::uint8_t>(kind));
  w.u32(round);
  w.u32(step);
  w.blob(proof);
  return w.buf;
}

inline Bytes unwrap_proof(std::span<const std::uint8_t> rec, ProofKind kind, std::uint32_t round, std::uint32_t step) {
  ByteReader r{rec};
  auto magic = r.raw(4);
  require(std::string(magic.begin(), magic.end()) == "VUPR", Errc::Parse, "not a proof record");
  require(r.u16() == kTranscriptVersion, Errc::Parse, "unsupported proof record version");
  require(r.u8() == static_cast<std::uint8_t>(kind), Errc::Parse, "proof record kind mismatch");
  require(r.u32() == round && r.u32() == step, Errc::Parse, "proof record is filed under the wrong step");
  Bytes p = r.blob();
  require(r.done(), Errc::Parse, "trailing bytes after proof record");
  return p;
}

inline Bytes pack_schedules(const std::vector<EpochSchedule>& ss) {
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUSL"), 4));
  w.u16(kTranscriptVersion);
  w.u32(static_cast<std::uint32_t>(ss.size()));
  for (const auto& s : ss) w.blob(s.serialize());
  return w.buf;
}

inline std::vector<EpochSchedule> unpack_schedules(std::span<const std::uint8_t> in) {
  ByteReader r{in};
  auto magic = r.raw(4);
  require(std::string(magic.begin(), magic.end()) == "VUSL", Errc::Parse, "not a schedule list");
  require(r.u16() == kTranscriptVersion, Errc::Parse, "unsupported schedule list version");
  std::uint32_t n = r.u32();
  require(n <= in.size(), Errc::Parse, "schedule count exceeds record size");
  std::vector<EpochSchedule> out;
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(EpochSchedule::deserialize(r.blob()));
  require(r.done(), Errc::Parse, "trailing bytes after schedule list");
  return out;
}

// ---------------------------------------------------------------------------

struct Transcript {
  SessionRecord session;
  std::vector<RoundRecord> rounds;

  Json session_json() const {
    const auto& s = session;
    Json owners = Json::array();
    for (const auto& o : s.owners) {
      owners.push_back({{"name", o.name},
                        {"begin", o.begin},
                        {"end", o.end},
                        {"public_key", to_hex(o.pk)},
                        {"dataset_commitment", fr_to_json(o.commitment)},
                        {"signature", o.signature ? Json(to_hex(*o.signature)) : Json(nullptr)}});
    }
    Json circuits = Json::object();
    for (const auto& [k, v] : s.circuits) circuits[k] = v;
    return Json{{"version", s.version},
                {"session_id", s.session_id},
                {"config", s.config.to_json()},
                {"hash", "mimc5-110-miyaguchi-preneel"},
                {"commitment_scheme", kCommitSchemeId},
                {"field", Fr::name()},
                {"backend", s.backend},
                {"vrf_public_key", to_hex(s.vrf_pk)},
                {"owners", owners},
                {"circuits", circuits}};
  }

  Json commitments_json() const {
    Json model = Json::array();
    model.push_back({{"round", 0}, {"step", 0}, {"root", fr_to_json(session.initial_model)}});
    Json masks = Json::array();
    for (const auto& r : rounds) {
      for (std::size_t k = 0; k < r.steps.size(); ++k) {
        model.push_back({{"round", r.round}, {"step", k + 1}, {"root", fr_to_json(r.steps[k].model_out)}});
      }
      Json reqs = Json::array();
      for (const auto& q : r.requests) {
        Json e{{"owner", q.owner}, {"root", fr_to_json(q.root)}};
        e["signature"] = q.signature ? Json(to_hex(*q.signature)) : Json(nullptr);
        reqs.push_back(e);
      }
      masks.push_back({{"round", r.round},
                       {"prev_root", fr_to_json(r.prev_mask)},
                       {"next_root", fr_to_json(r.next_mask)},
                       {"requests", reqs}});
    }
    return Json{{"dataset_root", fr_to_json(session.dataset_root)}, {"model_chain", model}, {"mask_chain", masks}};
  }

  static Json round_json(const RoundRecord& r) {
    Json steps = Json::array();
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
      const auto& s = r.steps[k];
      Json flags = Json::array();
      for (auto f : s.flags) flags.push_back(static_cast<int>(f));
      steps.push_back({{"step", k + 1}, {"epoch", s.epoch}, {"batch", s.batch}, {"fad_flags", flags}});
    }
    return Json{{"round", r.round}, {"params", r.params.to_json()}, {"steps", steps}};
  }

  void save_session(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    write_json_atomic(dir / "session.json", session_json());
    write_json_atomic(dir / "commitments.json", commitments_json());
  }

  void save_round(const std::filesystem::path& dir, const RoundRecord& r) const {
    auto rd = dir / ("round-" + std::to_string(r.round));
    std::filesystem::create_directories(rd);
    if (!r.schedules.empty()) write_file_atomic(rd / "schedule.bin", pack_schedules(r.schedules));
    write_file_atomic(rd / "mask-update.proof", wrap_proof(ProofKind::MaskUpdate, r.round, 0, r.mask_proof));
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
      auto step = static_cast<std::uint32_t>(k + 1);
      write_file_atomic(rd / ("step-" + std::to_string(k + 1) + ".proof"),
                        wrap_proof(ProofKind::Step, r.round, step, r.step_proofs[k]));
      write_file_atomic(rd / ("fad-" + std::to_string(k + 1) + ".proof"),
                        wrap_proof(ProofKind::Fad, r.round, step, r.fad_proofs[k]));
    }
    write_json_atomic(rd / "round.json", round_json(r));
  }

  void save(const std::filesystem::path& dir) const {
    for (const auto& r : rounds) save_round(dir, r);
    save_session(dir);
  }

  static Transcript load(const std::filesystem::path& dir) {
    Transcript t;
    try {
      load_into(dir, t);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::Parse, std::string("malformed transcript JSON: ") + e.what());
    }
    return t;
  }

 private:
  static void load_into(const std::filesystem::path& dir, Transcript& t) {
    Json sj = read_json_file(dir / "session.json");
    auto& s = t.session;
    s.version = sj.at("version").get<std::uint32_t>();
    require(s.version == kTranscriptVersion, Errc::Parse, "unsupported transcript version");
    s.session_id = sj.at("session_id").get<std::string>();
    s.config = SessionConfig::from_json(sj.at("config"));
    s.backend = sj.at("backend").get<std::string>();
    s.vrf_pk = hex_array<32>(sj.at("vrf_public_key").get<std::string>());
    for (const auto& o : sj.at("owners")) {
      OwnerRecord r;
      r.name = o.at("name").get<std::string>();
      r.begin = o.at("begin").get<std::uint64_t>();
      r.end = o.at("end").get<std::uint64_t>();
      r.pk = hex_array<crypto_sign_PUBLICKEYBYTES>(o.at("public_key").get<std::string>());
      r.commitment = fr_from_json(o.at("dataset_commitment").get<std::string>());
      if (!o.at("signature").is_null()) r.signature = hex_array<crypto_sign_BYTES>(o.at("signature").get<std::string>());
      s.owners.push_back(std::move(r));
    }
    for (const auto& [k, v] : sj.at("circuits").items()) s.circuits[k] = v.get<std::string>();

    Json cj = read_json_file(dir / "commitments.json");
    s.dataset_root = fr_from_json(cj.at("dataset_root").get<std::string>());
    const auto& model = cj.at("model_chain");
    require(!model.empty(), Errc::Parse, "model chain is empty");
    s.initial_model = fr_from_json(model.at(0).at("root").get<std::string>());
    std::size_t mi = 1;
    for (const auto& m : cj.at("mask_chain")) {
      RoundRecord r;
      r.round = m.at("round").get<std::uint32_t>();
      r.prev_mask = fr_from_json(m.at("prev_root").get<std::string>());
      r.next_mask = fr_from_json(m.at("next_root").get<std::string>());
      for (const auto& q : m.at("requests")) {
        RequestRecord rq{q.at("owner").get<std::string>(), fr_from_json(q.at("root").get<std::string>()), {}};
        if (!q.at("signature").is_null()) rq.signature = hex_array<crypto_sign_BYTES>(q.at("signature").get<std::string>());
        r.requests.push_back(std::move(rq));
      }
      auto rd = dir / ("round-" + std::to_string(r.round));
      Json rj = read_json_file(rd / "round.json");
      require(rj.at("round").get<std::uint32_t>() == r.round, Errc::Parse, "round file names another round");
      r.params = RoundParams::from_json(rj.at("params"));
      if (r.params.optimizer != Optimizer::BGD) r.schedules = unpack_schedules(read_file(rd / "schedule.bin"));
      r.mask_proof = unwrap_proof(read_file(rd / "mask-update.proof"), ProofKind::MaskUpdate, r.round, 0);
      std::uint32_t k = 0;
      for (const auto& sj2 : rj.at("steps")) {
        ++k;
        require(sj2.at("step").get<std::uint32_t>() == k, Errc::Parse, "step records out of order");
        require(mi < model.size(), Errc::Parse, "model chain shorter than the step records");
        const auto& me = model.at(mi++);
        require(me.at("round").get<std::uint32_t>() == r.round && me.at("step").get<std::uint32_t>() == k,
                Errc::Parse, "model chain entry out of place");
        StepRecord st;
        st.epoch = sj2.at("epoch").get<std::uint32_t>();
        st.batch = sj2.at("batch").get<std::uint32_t>();
        st.model_out = fr_from_json(me.at("root").get<std::string>());
        for (const auto& f : sj2.at("fad_flags")) st.flags.push_back(static_cast<std::uint8_t>(f.get<int>() != 0));
        r.steps.push_back(std::move(st));
        r.step_proofs.push_back(unwrap_proof(read_file(rd / ("step-" + std::to_string(k) + ".proof")),
                                             ProofKind::Step, r.round, k));
        r.fad_proofs.push_back(unwrap_proof(read_file(rd / ("fad-" + std::to_string(k) + ".proof")), ProofKind::Fad,
                                            r.round, k));
      }
      t.rounds.push_back(std::move(r));
    }
    require(mi == model.size(), Errc::Parse, "model chain has entries without step records");
  }
};

}  // namespace vunlearn

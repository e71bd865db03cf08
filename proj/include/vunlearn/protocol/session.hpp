#pragma once

// Trainer side of a session: owner registration, request intake, proven
// training rounds, and the encrypted private state kept between rounds.

#include <bit>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "vunlearn/protocol/transcript.hpp"

namespace vunlearn {

struct OwnerInput {
  std::string name;
  Dataset rows;
  SignPublicKey pk{};
  Fr randomness;  // blinding for the owner's dataset commitment
};

struct TrainerKeys {
  Digest secret{};
  VrfKeypair vrf;
  AuditKey audit{};

  static TrainerKeys from_secret(const Digest& secret) {
    TrainerKeys k;
    k.secret = secret;
    Sha256 v;
    v.update("vunlearn-trainer-vrf").update(secret);
    Digest vs = v.finish();
    k.vrf = vrf_keypair_from_seed(std::span<const std::uint8_t>(vs));
    Sha256 a;
    a.update("vunlearn-trainer-audit").update(secret);
    Digest as = a.finish();
    std::copy(as.begin(), as.end(), k.audit.begin());
    return k;
  }

  static TrainerKeys from_seed(std::string_view seed) {
    return from_secret(sha256(std::string("vunlearn-trainer-seed|") + std::string(seed)));
  }
};

/// An owner's request for one round, with the commitment it signs.
struct SignedRequest {
  UnlearningRequest request;
  std::uint32_t round = 0;
  Fr randomness;
  Fr root;
  Signature signature{};
};

inline Fr request_root(const SessionRecord& s, const UnlearningRequest& req, std::uint32_t round, const Fr& r) {
  DatasetLayout layout = s.layout();
  MaskLayout ml = MaskLayout::for_model(s.config.model);
  return request_commitment(owner_request_masks(req, layout, round), ml, layout, layout.owner(req.owner), r).root;
}

/// Identity request for an owner that asked for nothing this round.
inline Fr identity_request_root(const SessionRecord& s, const std::string& owner, std::uint32_t round) {
  return request_root(s, UnlearningRequest{owner, {}, {}, {}, {}}, round, Fr::zero());
}

inline Fr initial_mask_root(const SessionRecord& s) {
  DatasetLayout layout = s.layout();
  MaskSet id = MaskSet::identity(layout.num_rows, layout.num_features, layout.num_labels, 0);
  return mask_commitment(id, MaskLayout::for_model(s.config.model), layout, Fr::zero()).root;
}

inline SignedRequest sign_request(const SessionRecord& s, std::uint32_t round, UnlearningRequest req,
                                  const Fr& randomness, const SignKeypair& key) {
  SignedRequest out{std::move(req), round, randomness, Fr::zero(), {}};
  out.root = request_root(s, out.request, round, randomness);
  out.signature = sign_message(key, request_message(s.session_id, out.request.owner, round, out.root));
  return out;
}

/// Cheating-prover simulation: one tampered witness, sealed without checks.
struct Adversary {
  Tamper tamper = Tamper::None;
  ProofKind target = ProofKind::Step;
  std::uint32_t step = 1;  // 1-based within the round; ignored for mask updates
};

class Session {
 public:
  static Session create(const SessionConfig& config, const std::vector<OwnerInput>& owners, const TrainerKeys& keys) {
    config.validate();
    require(!owners.empty(), Errc::Empty, "at least one data owner is required");
    Session s(keys);
    auto& rec = s.transcript_.session;
    rec.config = config;
    rec.vrf_pk = keys.vrf.pk;
    rec.backend = s.backend_->name();

    DatasetLayout layout;
    layout.num_features = config.model.J;
    layout.num_labels = config.model.label_cols();
    std::size_t total = 0;
    for (const auto& o : owners) {
      require(o.rows.x.cols == layout.num_features && o.rows.y.cols == layout.num_labels, Errc::DimMismatch,
              "owner '" + o.name + "' data does not match the model shape");
      layout.owners.push_back(OwnerRange{o.name, total, total + o.rows.rows()});
      total += o.rows.rows();
    }
    layout.num_rows = total;
    layout.validate();

    Dataset all{Matrix<double>(total, layout.num_features), Matrix<double>(total, layout.num_labels)};
    for (std::size_t o = 0; o < owners.size(); ++o) {
      const auto& d = owners[o].rows;
      std::copy(d.x.data.begin(), d.x.data.end(), all.x.data.begin() + layout.owners[o].begin * layout.num_features);
      std::copy(d.y.data.begin(), d.y.data.end(), all.y.data.begin() + layout.owners[o].begin * layout.num_labels);
      s.owner_randomness_.push_back(owners[o].randomness);
    }
    s.data_ = to_fixed(all, config.fixed, config.model.kind, layout);
    s.tree_.emplace(s.data_, s.owner_randomness_);

    auto p = Params<double>::zeros(config.model);
    std::mt19937_64 rng(s.seed_of("init"));
    std::uniform_real_distribution<double> u(-config.init_scale, config.init_scale);
    for (auto& v : p.values) v = config.init_scale > 0 ? u(rng) : 0.0;
    s.params_ = to_fixed(p, config.fixed);
    s.model_r_ = s.derive("model", 0, 0);
    rec.initial_model = model_commitment(s.params_, s.model_r_).root;
    rec.dataset_root = s.tree_->root();

    for (std::size_t o = 0; o < owners.size(); ++o) {
      rec.owners.push_back(OwnerRecord{owners[o].name, layout.owners[o].begin, layout.owners[o].end,
                                       owners[o].pk, s.tree_->owner_commitments()[o].root, {}});
    }
    rec.session_id = compute_session_id(rec);

    s.masks_ = MaskSet::identity(total, layout.num_features, layout.num_labels, 0);
    s.mask_r_ = Fr::zero();
    return s;
  }

  const Transcript& transcript() const { return transcript_; }
  const SessionRecord& record() const { return transcript_.session; }
  const std::string& session_id() const { return transcript_.session.session_id; }
  std::uint32_t round() const { return round_; }
  const Params<std::int64_t>& params() const { return params_; }
  const MaskSet& masks() const { return masks_; }
  const FixedDataset& data() const { return data_; }
  DatasetLayout layout() const { return data_.layout; }
  std::size_t pending_requests() const { return pending_.size(); }

  /// Message owner `name` signs to confirm its registration and dataset commitment.
  Bytes registration_for(const std::string& name) const {
    return registration_message(session_id(), find_owner(name));
  }

  void register_signature(const std::string& name, const Signature& sig) {
    OwnerRecord& o = const_cast<OwnerRecord&>(find_owner(name));
    require(verify_signature(o.pk, registration_message(session_id(), o), sig), Errc::BadSignature,
            "registration signature of '" + name + "' does not verify");
    o.signature = sig;
  }

  /// Accepts a signed request for the next round.
  void submit(const SignedRequest& r) {
    const auto& rec = transcript_.session;
    const OwnerRecord* owner = &find_owner(r.request.owner);
    require(r.round == round_ + 1, Errc::RoundSkew,
            "request is for round " + std::to_string(r.round) + ", next round is " + std::to_string(round_ + 1));
    Fr root = request_root(rec, r.request, r.round, r.randomness);  // checks mask shapes
    require(root == r.root, Errc::BadSignature, "request commitment does not match its masks");
    require(verify_signature(owner->pk, request_message(rec.session_id, owner->name, r.round, r.root), r.signature),
            Errc::BadSignature, "request signature does not verify under the registered key");
    require(!pending_.count(owner->name), Errc::OverlappingRows,
            "owner '" + owner->name + "' already has a request pending for this round");
    pending_.emplace(owner->name, r);
  }

  /// One unlearning round: state transition, then training on the remaining rows.
  const RoundRecord& run_round(const RoundParams& params, const Adversary& adv = {}) {
    const auto& rec = transcript_.session;
    const auto& cfg = rec.config;
    const DatasetLayout layout = data_.layout;
    const std::size_t N = layout.num_rows;
    params.validate(N);
    for (const auto& o : rec.owners) {
      require(o.signature.has_value(), Errc::MissingSignature, "owner '" + o.name + "' has not signed its registration");
    }
    require(cfg.fixed.in_range(params.eta_raw), Errc::RangeOverflow, "learning rate outside fixed range");
    const std::uint32_t t = round_ + 1;
    const bool cheat = adv.tamper != Tamper::None;

    RoundRecord out;
    out.round = t;
    out.params = params;

    std::vector<UnlearningRequest> reqs;
    std::vector<Fr> req_r;
    for (const auto& o : layout.owners) {
      auto it = pending_.find(o.owner);
      if (it != pending_.end()) {
        reqs.push_back(it->second.request);
        req_r.push_back(it->second.randomness);
        out.requests.push_back(RequestRecord{o.owner, it->second.root, it->second.signature});
      } else {
        req_r.push_back(Fr::zero());
        out.requests.push_back(RequestRecord{o.owner, identity_request_root(rec, o.owner, t), std::nullopt});
      }
    }
    MaskSet request = merge_requests(reqs, layout, t);

    MaskUpdateShape mshape{cfg.model, layout};
    const Fr next_r = derive("mask", t, 0);
    MaskUpdateInputs min{&masks_, mask_r_, &request, req_r, next_r,
                         adv.target == ProofKind::MaskUpdate ? adv.tamper : Tamper::None};
    auto mw = synthesize_mask_update_witness(mshape, min);
    MaskSet next = mw.result.next;
    out.prev_mask = mw.result.statement.prev_root;
    out.next_mask = mw.result.statement.next_root;

    auto gate = next.row_gate();
    std::size_t kept = 0;
    for (auto g : gate) kept += g;
    require(kept >= 1, Errc::EmptyEffectiveSet, "every row has been unlearned; nothing left to train on");
    require(N - kept <= cfg.fad_slots, Errc::BadParams,
            std::to_string(N - kept) + " unlearned rows exceed the " + std::to_string(cfg.fad_slots) +
                " detection slots configured for this session");

    const auto& ment = registry_->mask_update(mshape);
    Bytes mctx = proof_context(rec.session_id, ProofKind::MaskUpdate, t, 0, mshape.key());
    out.mask_proof = prove(ment.pk, mw.witness, mctx, cheat && adv.target == ProofKind::MaskUpdate);

    Params<std::int64_t> params_cur = params_;
    Fr model_r = model_r_;
    std::uint32_t k = 0;
    const std::size_t b = params.batch_for(N);
    for (std::size_t e = 0; e < params.epochs; ++e) {
      std::vector<std::vector<std::size_t>> batches;
      if (params.optimizer == Optimizer::BGD) {
        batches.push_back(all_rows(N));
      } else {
        out.schedules.push_back(sample_epoch(keys_.vrf, rec.session_id, epoch_id(t, e), N, b));
        auto check = verify_epoch(keys_.vrf.pk, rec.session_id, epoch_id(t, e), out.schedules.back());
        require(check.ok, Errc::ScheduleVerifyFailed, "own schedule fails replay: " + check.reason);
        for (const auto& bt : out.schedules.back().batches) batches.emplace_back(bt.begin(), bt.end());
      }
      for (std::size_t i = 0; i < batches.size(); ++i) {
        ++k;
        const bool hit = cheat && adv.step == k;

        FadShape fshape{cfg.fixed, cfg.model, layout, batches[i].size(), cfg.fad_slots};
        FadInputs fin{&data_, &*tree_, &next, next_r, params_cur, model_r, params.xi_sq, batches[i],
                      hit && adv.target == ProofKind::Fad ? adv.tamper : Tamper::None};
        auto fw = synthesize_fad_witness(fshape, fin);
        const auto& fent = registry_->fad(fshape);
        out.fad_proofs.push_back(prove(fent.pk, fw.witness,
                                       proof_context(rec.session_id, ProofKind::Fad, t, k, fshape.key()),
                                       hit && adv.target == ProofKind::Fad));

        StepShape sshape{cfg.fixed, cfg.model, layout, batches[i].size(), true};
        const Fr r_out = derive("model", t, k);
        StepWitnessInputs sin{&data_, &*tree_, &next, next_r, params_cur, model_r, r_out, params.eta_raw,
                              batches[i], hit && adv.target == ProofKind::Step ? adv.tamper : Tamper::None, true};
        auto sw = synthesize_step_witness(sshape, sin);
        const auto& sent = registry_->step(sshape);
        out.step_proofs.push_back(prove(sent.pk, sw.witness,
                                        proof_context(rec.session_id, ProofKind::Step, t, k, sshape.key()),
                                        hit && adv.target == ProofKind::Step));

        out.steps.push_back(StepRecord{static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(i),
                                       sw.result.statement.model_out, fw.result.statement.flags});
        params_cur = sw.result.next;
        model_r = r_out;
      }
    }
    require(!cheat || adv.target == ProofKind::MaskUpdate || adv.step <= k, Errc::BadParams,
            "adversary step past the end of the round");

    masks_ = std::move(next);
    mask_r_ = next_r;
    params_ = std::move(params_cur);
    model_r_ = model_r;
    round_ = t;
    pending_.clear();
    for (const auto& [key, digest] : registry_->digests()) transcript_.session.circuits[key] = digest;
    transcript_.rounds.push_back(std::move(out));
    return transcript_.rounds.back();
  }

  // -------------------------------------------------------------------------
  // Persistence. The transcript directory holds only public material; the
  // private state is sealed under a key derived from the trainer secret.

  void save(const std::filesystem::path& transcript_dir, const std::filesystem::path& state_file) const {
    std::filesystem::create_directories(transcript_dir);
    for (const auto& r : transcript_.rounds) {
      if (!std::filesystem::exists(transcript_dir / ("round-" + std::to_string(r.round)) / "round.json")) {
        transcript_.save_round(transcript_dir, r);
      }
    }
    transcript_.save_session(transcript_dir);
    write_file_atomic(state_file, seal_state(private_state()));
  }

  static Session load(const std::filesystem::path& transcript_dir, const std::filesystem::path& state_file,
                      const TrainerKeys& keys) {
    Session s(keys);
    s.transcript_ = Transcript::load(transcript_dir);
    require(s.transcript_.session.vrf_pk == keys.vrf.pk, Errc::MalformedKey, "trainer key does not match the session");
    s.restore(open_state(read_file(state_file), keys));
    require(s.round_ == s.transcript_.rounds.size(), Errc::Parse, "trainer state and transcript disagree on the round");
    return s;
  }

  // -------------------------------------------------------------------------

  /// Scans a transcript directory for private material. Returns one line per finding.
  std::vector<std::string> privacy_scan(const std::filesystem::path& dir) const {
    struct Needle {
      Bytes bytes;
      std::string what;
    };
    std::vector<Needle> needles;
    std::map<std::string, std::string> tokens;
    auto add_int = [&](std::int64_t v, const std::string& what) {
      if (v > -4096 && v < 4096) return;
      // Values with few set bits also occur as counters and tags.
      if (std::popcount(static_cast<std::uint64_t>(v < 0 ? -v : v)) >= 4) {
        ByteWriter w;
        w.u64(static_cast<std::uint64_t>(v));
        needles.push_back({w.buf, what});
      }
      auto fb = Fr::from_i64(v).to_bytes();
      needles.push_back({Bytes(fb.begin(), fb.end()), what + " (field encoding)"});
      tokens.emplace(std::to_string(v), what);
      tokens.emplace(Fr::from_i64(v).to_string(), what + " (field encoding)");
    };
    auto add_fr = [&](const Fr& v, const std::string& what) {
      auto b = v.to_bytes();
      needles.push_back({Bytes(b.begin(), b.end()), what});
      tokens.emplace(v.to_string(), what);
    };
    for (std::size_t i = 0; i < data_.rows(); ++i) {
      for (std::size_t j = 0; j < data_.x.cols; ++j) add_int(data_.x(i, j), "feature value of row " + std::to_string(i));
      if (data_.kind == ModelKind::LR) add_int(data_.y(i, 0), "label value of row " + std::to_string(i));
      add_fr(row_digest(data_, i), "row digest of row " + std::to_string(i));
    }
    for (std::size_t n = 1; n <= data_.rows(); ++n) {
      add_int(static_cast<std::int64_t>((std::uint64_t{1} << (data_.cfg.scale_bits + fixed::kInvExtraBits)) / n),
              "reciprocal of an effective count");
    }
    const MaskLayout ml = MaskLayout::for_model(record().config.model);
    const auto ident = pack_mask_words(MaskSet::identity(data_.rows(), data_.x.cols, data_.y.cols), ml, data_.layout);
    std::set<std::string> public_words;
    for (const auto& w : ident) public_words.insert(w.to_string());
    for (const auto& w : pack_mask_words(masks_, ml, data_.layout)) {
      if (!public_words.count(w.to_string())) add_fr(w, "packed mask word");
    }
    for (MaskKind kind : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
      const auto& m = masks_.get(kind);
      auto bytes = serialize_mask(m);
      // Short bitstrings match by chance; packed words above cover them.
      if (m != BitMatrix::identity(kind, m.rows(), m.cols(), m.round) && bytes.size() >= 13 + 8) {
        needles.push_back({Bytes(bytes.begin() + 13, bytes.end()), "serialized mask bits"});
      }
    }
    std::vector<std::string> findings;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      Bytes content = read_file(entry.path());
      const std::string rel = std::filesystem::relative(entry.path(), dir).string();
      for (const auto& n : needles) {
        if (n.bytes.empty()) continue;
        if (std::search(content.begin(), content.end(), n.bytes.begin(), n.bytes.end()) != content.end()) {
          findings.push_back(rel + ": " + n.what);
        }
      }
      if (entry.path().extension() != ".json") continue;
      std::string text(content.begin(), content.end());
      std::size_t i = 0;
      while (i < text.size()) {
        if (!std::isdigit(static_cast<unsigned char>(text[i])) && text[i] != '-') {
          ++i;
          continue;
        }
        std::size_t j = i + 1;
        while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
        auto it = tokens.find(text.substr(i, j - i));
        if (it != tokens.end()) findings.push_back(rel + ": " + it->second);
        i = j;
      }
      try {
        Json j = Json::parse(text);
        scan_keys(j, rel, findings);
      } catch (const nlohmann::json::exception&) {
        findings.push_back(rel + ": not valid JSON");
      }
    }
    std::sort(findings.begin(), findings.end());
    findings.erase(std::unique(findings.begin(), findings.end()), findings.end());
    return findings;
  }

 private:
  explicit Session(const TrainerKeys& keys)
      : keys_(keys),
        backend_(std::make_unique<ReferenceBackend>(keys.audit)),
        registry_(std::make_unique<CircuitRegistry>(*backend_)) {}

  const OwnerRecord& find_owner(const std::string& name) const {
    for (const auto& o : transcript_.session.owners) {
      if (o.name == name) return o;
    }
    fail(Errc::UnknownOwner, "owner '" + name + "' is not registered");
  }

  static void scan_keys(const Json& j, const std::string& rel, std::vector<std::string>& findings) {
    static const std::set<std::string> forbidden = {"n_hat", "n_eff", "effective_count", "inverse", "inv",
                                                    "unlearned", "mask_bits", "features", "labels", "rows"};
    if (j.is_object()) {
      for (const auto& [k, v] : j.items()) {
        if (forbidden.count(k)) findings.push_back(rel + ": private field name '" + k + "'");
        scan_keys(v, rel, findings);
      }
    } else if (j.is_array()) {
      for (const auto& v : j) scan_keys(v, rel, findings);
    }
  }

  std::uint64_t seed_of(std::string_view tag) const {
    Sha256 h;
    h.update("vunlearn-trainer-rng").update(keys_.secret).update(tag);
    Digest d = h.finish();
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[static_cast<std::size_t>(i)];
    return v;
  }

  /// Commitment randomness: wide reduction of a keyed hash, unique per use.
  Fr derive(std::string_view tag, std::uint32_t round, std::uint32_t step) const {
    ByteWriter w;
    w.str("vunlearn-trainer-randomness-v1");
    w.raw(keys_.secret);
    w.str(tag);
    w.u32(round);
    w.u32(step);
    auto h = sha512(w.buf);
    return Fr::from_bytes_wide(h);
  }

  Bytes prove(const ProvingKey& pk, const Witness<Fr>& w, const Bytes& ctx, bool cheat) const {
    return cheat ? backend_->seal(pk, w, ctx) : backend_->prove(pk, w, ctx);
  }

  // Private state record: "VUTS" | v1 | payload fields.
  Bytes private_state() const {
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUTS"), 4));
    w.u16(kTranscriptVersion);
    w.u32(round_);
    w.u64(data_.x.rows);
    for (auto v : data_.x.data) w.u64(static_cast<std::uint64_t>(v));
    for (auto v : data_.y.data) w.u64(static_cast<std::uint64_t>(v));
    w.u32(static_cast<std::uint32_t>(owner_randomness_.size()));
    for (const auto& r : owner_randomness_) w.raw(r.to_bytes());
    for (MaskKind k : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) w.blob(serialize_mask(masks_.get(k)));
    w.raw(mask_r_.to_bytes());
    for (auto v : params_.values) w.u64(static_cast<std::uint64_t>(v));
    w.raw(model_r_.to_bytes());
    w.u32(static_cast<std::uint32_t>(pending_.size()));
    for (const auto& [name, r] : pending_) {
      w.str(name);
      w.u32(r.round);
      w.raw(r.randomness.to_bytes());
      w.raw(r.root.to_bytes());
      w.raw(r.signature);
      for (MaskKind k : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
        const auto& m = r.request.mask(k);
        w.u8(m ? 1 : 0);
        if (m) w.blob(serialize_mask(*m));
      }
    }
    return w.buf;
  }

  static Fr read_fr(ByteReader& r) {
    Fr v;
    require(Fr::from_bytes(r.raw(32), v), Errc::Parse, "non-canonical field element in trainer state");
    return v;
  }

  void restore(const Bytes& payload) {
    const auto& cfg = transcript_.session.config;
    DatasetLayout layout = transcript_.session.layout();
    ByteReader r{payload};
    auto magic = r.raw(4);
    require(std::string(magic.begin(), magic.end()) == "VUTS", Errc::Parse, "not a trainer state record");
    require(r.u16() == kTranscriptVersion, Errc::Parse, "unsupported trainer state version");
    round_ = r.u32();
    require(r.u64() == layout.num_rows, Errc::Parse, "trainer state row count differs from the session");
    data_.cfg = cfg.fixed;
    data_.kind = cfg.model.kind;
    data_.layout = layout;
    data_.x = Matrix<std::int64_t>(layout.num_rows, layout.num_features);
    data_.y = Matrix<std::int64_t>(layout.num_rows, layout.num_labels);
    for (auto& v : data_.x.data) v = static_cast<std::int64_t>(r.u64());
    for (auto& v : data_.y.data) v = static_cast<std::int64_t>(r.u64());
    data_.validate();
    std::uint32_t owners = r.u32();
    require(owners == layout.owners.size(), Errc::Parse, "trainer state owner count differs from the session");
    for (std::uint32_t i = 0; i < owners; ++i) owner_randomness_.push_back(read_fr(r));
    tree_.emplace(data_, owner_randomness_);
    require(tree_->root() == transcript_.session.dataset_root, Errc::Parse,
            "trainer state does not open the committed dataset");
    masks_.feature = deserialize_mask(r.blob());
    masks_.sample = deserialize_mask(r.blob());
    masks_.klass = deserialize_mask(r.blob());
    mask_r_ = read_fr(r);
    params_ = Params<std::int64_t>::zeros(cfg.model);
    for (auto& v : params_.values) v = static_cast<std::int64_t>(r.u64());
    model_r_ = read_fr(r);
    std::uint32_t pending = r.u32();
    for (std::uint32_t i = 0; i < pending; ++i) {
      SignedRequest q;
      q.request.owner = r.str();
      q.round = r.u32();
      q.randomness = read_fr(r);
      q.root = read_fr(r);
      auto sig = r.raw(crypto_sign_BYTES);
      std::copy(sig.begin(), sig.end(), q.signature.begin());
      for (MaskKind k : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
        if (r.u8()) q.request.mask(k) = deserialize_mask(r.blob());
      }
      pending_.emplace(q.request.owner, std::move(q));
    }
    require(r.done(), Errc::Parse, "trailing bytes in trainer state");
  }

  static AuditKey state_key(const Digest& secret) {
    Sha256 h;
    h.update("vunlearn-trainer-state-key").update(secret);
    Digest d = h.finish();
    AuditKey k;
    std::copy(d.begin(), d.end(), k.begin());
    return k;
  }

  Bytes seal_state(const Bytes& payload) const {
    Bytes packed = zlib_compress(payload);
    std::array<std::uint8_t, crypto_secretbox_NONCEBYTES> nonce;
    randombytes_buf(nonce.data(), nonce.size());
    AuditKey key = state_key(keys_.secret);
    Bytes sealed(packed.size() + crypto_secretbox_MACBYTES);
    crypto_secretbox_easy(sealed.data(), packed.data(), packed.size(), nonce.data(), key.data());
    ByteWriter w;
    w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>("VUTE"), 4));
    w.u16(kTranscriptVersion);
    w.raw(nonce);
    w.blob(sealed);
    return w.buf;
  }

  static Bytes open_state(const Bytes& in, const TrainerKeys& keys) {
    ByteReader r{in};
    auto magic = r.raw(4);
    require(std::string(magic.begin(), magic.end()) == "VUTE", Errc::Parse, "not a sealed trainer state");
    require(r.u16() == kTranscriptVersion, Errc::Parse, "unsupported trainer state version");
    auto nonce = r.raw(crypto_secretbox_NONCEBYTES);
    Bytes sealed = r.blob();
    require(r.done() && sealed.size() >= crypto_secretbox_MACBYTES, Errc::Parse, "truncated trainer state");
    AuditKey key = state_key(keys.secret);
    Bytes packed(sealed.size() - crypto_secretbox_MACBYTES);
    require(crypto_secretbox_open_easy(packed.data(), sealed.data(), sealed.size(), nonce.data(), key.data()) == 0,
            Errc::MalformedKey, "trainer state does not open under this key");
    return zlib_decompress(packed);
  }

  TrainerKeys keys_;
  std::unique_ptr<ReferenceBackend> backend_;
  std::unique_ptr<CircuitRegistry> registry_;
  Transcript transcript_;
  FixedDataset data_;
  std::vector<Fr> owner_randomness_;
  std::optional<DatasetTree> tree_;
  MaskSet masks_;
  Fr mask_r_;
  Params<std::int64_t> params_;
  Fr model_r_;
  std::uint32_t round_ = 0;
  std::map<std::string, SignedRequest> pending_;
};

/// Every owner signs its registration; keys in owner order.
inline void sign_registrations(Session& s, const std::vector<SignKeypair>& keys) {
  const auto& owners = s.record().owners;
  require(keys.size() == owners.size(), Errc::LengthMismatch, "one signing key per owner");
  for (std::size_t o = 0; o < keys.size(); ++o) {
    std::string name = owners[o].name;
    s.register_signature(name, sign_message(keys[o], s.registration_for(name)));
  }
}

}  // namespace vunlearn

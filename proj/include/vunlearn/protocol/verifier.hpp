#pragma once

// Auditor side: replays a transcript and reports the first failing check.

#include <filesystem>
#include <string>
#include <vector>

#include "vunlearn/protocol/session.hpp"

namespace vunlearn {

struct VerifyReport {
  bool ok = false;
  std::string stage;  // which check failed
  std::string locus;  // where: "round 2 step 3", a file, an owner
  std::string reason;
  std::size_t rounds = 0;
  std::size_t proofs = 0;
  std::size_t flagged = 0;  // detection flags raised across all steps

  explicit operator bool() const { return ok; }

  Json to_json() const {
    Json j{{"ok", ok}, {"rounds", rounds}, {"proofs_verified", proofs}, {"fad_flags_raised", flagged}};
    if (!ok) j["failure"] = {{"stage", stage}, {"locus", locus}, {"reason", reason}};
    return j;
  }
};

namespace detail {

struct Failure {
  std::string stage, locus, reason;
};

inline std::string at(std::uint32_t round, std::uint32_t step = 0) {
  return "round " + std::to_string(round) + (step ? " step " + std::to_string(step) : "");
}

}  // namespace detail

/// Checks, in order: session identity and owner signatures, request
/// signatures and mask-chain linkage, VRF schedule replay, pinned circuit
/// digests, every proof, and the model-commitment chain.
inline VerifyReport verify_transcript(const Transcript& tr, const AuditKey& audit) {
  VerifyReport rep;
  auto fail = [&](std::string stage, std::string locus, std::string reason) {
    rep.ok = false;
    rep.stage = std::move(stage);
    rep.locus = std::move(locus);
    rep.reason = std::move(reason);
    return rep;
  };
  const SessionRecord& s = tr.session;

  try {
    if (s.version != kTranscriptVersion) return fail("session", "session.json", "unsupported version");
    if (compute_session_id(s) != s.session_id) return fail("session", "session.json", "session id does not match its contents");
    ReferenceBackend backend(audit);
    if (s.backend != backend.name()) return fail("session", "session.json", "unknown proof backend '" + s.backend + "'");
    const DatasetLayout layout = s.layout();
    try {
      layout.validate();
    } catch (const Error& e) {
      return fail("session", "owners", e.what());
    }
    const std::size_t N = layout.num_rows;

    std::vector<Commitment> owner_commits;
    for (const auto& o : s.owners) {
      if (!o.signature) return fail("signatures", "owner " + o.name, "registration is not signed");
      if (!verify_signature(o.pk, registration_message(s.session_id, o), *o.signature)) {
        return fail("signatures", "owner " + o.name, "registration signature does not verify");
      }
      owner_commits.push_back(Commitment{o.commitment, kCommitSchemeId, 2, o.end - o.begin});
    }
    if (joint_dataset_root(owner_commits) != s.dataset_root) {
      return fail("session", "commitments.json", "dataset root does not join the owner commitments");
    }

    for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
      const RoundRecord& r = tr.rounds[i];
      const auto t = static_cast<std::uint32_t>(i + 1);
      if (r.round != t) return fail("mask-chain", detail::at(t), "round numbers are not consecutive");
      if (r.requests.size() != s.owners.size()) return fail("signatures", detail::at(t), "one request record per owner");
      for (std::size_t o = 0; o < s.owners.size(); ++o) {
        const auto& q = r.requests[o];
        const auto& owner = s.owners[o];
        if (q.owner != owner.name) return fail("signatures", detail::at(t), "request records out of owner order");
        if (q.signature) {
          if (!verify_signature(owner.pk, request_message(s.session_id, owner.name, t, q.root), *q.signature)) {
            return fail("signatures", detail::at(t) + " owner " + owner.name, "request signature does not verify");
          }
        } else if (q.root != identity_request_root(s, owner.name, t)) {
          return fail("signatures", detail::at(t) + " owner " + owner.name, "unsigned request is not the identity");
        }
      }
      Fr expect_prev = i == 0 ? initial_mask_root(s) : tr.rounds[i - 1].next_mask;
      if (r.prev_mask != expect_prev) {
        return fail("mask-chain", detail::at(t), "round does not cite the previous mask commitment");
      }
    }

    // Schedules: replay every VRF draw and derive the expected minibatches.
    std::vector<std::vector<std::vector<std::size_t>>> batches(tr.rounds.size());
    for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
      const RoundRecord& r = tr.rounds[i];
      try {
        r.params.validate(N);
      } catch (const Error& e) {
        return fail("schedule", detail::at(r.round), e.what());
      }
      if (!s.config.fixed.in_range(r.params.eta_raw)) return fail("schedule", detail::at(r.round), "learning rate out of range");
      if (r.params.optimizer == Optimizer::BGD) {
        if (!r.schedules.empty()) return fail("schedule", detail::at(r.round), "full-batch round carries schedules");
        for (std::size_t e = 0; e < r.params.epochs; ++e) batches[i].push_back(all_rows(N));
        continue;
      }
      if (r.schedules.size() != r.params.epochs) return fail("schedule", detail::at(r.round), "one schedule per epoch expected");
      for (std::size_t e = 0; e < r.schedules.size(); ++e) {
        const auto& sc = r.schedules[e];
        const std::string locus = detail::at(r.round) + " epoch " + std::to_string(e);
        if (sc.num_rows != N) return fail("schedule", locus, "schedule covers a different row count");
        if (sc.batch_size != r.params.batch_for(N)) return fail("schedule", locus, "schedule batch size differs from the round");
        auto chk = verify_epoch(s.vrf_pk, s.session_id, epoch_id(r.round, e), sc);
        if (!chk.ok) return fail("schedule", locus, "VRF replay failed: " + chk.reason);
        for (const auto& b : sc.batches) batches[i].emplace_back(b.begin(), b.end());
      }
    }

    // Steps line up with the minibatches they claim.
    for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
      const RoundRecord& r = tr.rounds[i];
      if (r.steps.size() != batches[i].size() || r.step_proofs.size() != r.steps.size() ||
          r.fad_proofs.size() != r.steps.size()) {
        return fail("model-chain", detail::at(r.round),
                    std::to_string(r.steps.size()) + " step records for " + std::to_string(batches[i].size()) +
                        " scheduled minibatches");
      }
    }

    CircuitRegistry registry(backend);
    auto pinned = [&](const std::string& key, const Digest& digest, const std::string& locus) -> std::optional<detail::Failure> {
      auto it = s.circuits.find(key);
      if (it == s.circuits.end()) return detail::Failure{"circuits", locus, "circuit " + key + " is not pinned"};
      if (it->second != to_hex(digest)) return detail::Failure{"circuits", locus, "circuit " + key + " digest differs from the pinned value"};
      return std::nullopt;
    };
    const MaskUpdateShape mshape{s.config.model, layout};
    if (!tr.rounds.empty()) {
      if (auto f = pinned(mshape.key(), registry.mask_update(mshape).cs->digest(), "session.json")) {
        return fail(f->stage, f->locus, f->reason);
      }
    }
    for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
      for (const auto& b : batches[i]) {
        StepShape ss{s.config.fixed, s.config.model, layout, b.size(), true};
        FadShape fs{s.config.fixed, s.config.model, layout, b.size(), s.config.fad_slots};
        if (auto f = pinned(ss.key(), registry.step(ss).cs->digest(), "session.json")) return fail(f->stage, f->locus, f->reason);
        if (auto f = pinned(fs.key(), registry.fad(fs).cs->digest(), "session.json")) return fail(f->stage, f->locus, f->reason);
      }
    }

    Fr model = s.initial_model;
    for (std::size_t i = 0; i < tr.rounds.size(); ++i) {
      const RoundRecord& r = tr.rounds[i];
      const auto t = r.round;
      MaskUpdateStatement ms;
      for (const auto& q : r.requests) ms.request_roots.push_back(q.root);
      ms.prev_root = r.prev_mask;
      ms.next_root = r.next_mask;
      auto mpub = ms.public_inputs();
      auto mres = backend.verify(registry.mask_update(mshape).vk, mpub,
                                 proof_context(s.session_id, ProofKind::MaskUpdate, t, 0, mshape.key()), r.mask_proof);
      if (!mres) return fail("proofs", detail::at(t) + " mask-update", mres.reason);
      ++rep.proofs;

      std::size_t k = 0;
      for (std::size_t e = 0, at = 0; at < batches[i].size(); ++e) {
        std::size_t per_epoch = r.params.optimizer == Optimizer::BGD ? 1 : r.schedules[e].batches.size();
        for (std::size_t j = 0; j < per_epoch; ++j, ++at) {
          const auto& st = r.steps[k];
          const auto step = static_cast<std::uint32_t>(k + 1);
          const auto& rows = batches[i][at];
          if (st.epoch != e || st.batch != j) {
            return fail("model-chain", detail::at(t, step), "step record names another minibatch");
          }
          std::vector<std::uint64_t> pos;
          for (auto row : rows) pos.push_back(row_position(layout, row));

          FadShape fs{s.config.fixed, s.config.model, layout, rows.size(), s.config.fad_slots};
          if (st.flags.size() != rows.size()) return fail("proofs", detail::at(t, step) + " fad", "one flag per batch row expected");
          FadStatement fst{s.dataset_root, r.next_mask, model, r.params.xi_sq, pos, st.flags};
          auto fpub = fst.public_inputs();
          auto fres = backend.verify(registry.fad(fs).vk, fpub,
                                     proof_context(s.session_id, ProofKind::Fad, t, step, fs.key()), r.fad_proofs[k]);
          if (!fres) return fail("proofs", detail::at(t, step) + " fad", fres.reason);
          ++rep.proofs;
          for (auto f : st.flags) rep.flagged += f;

          StepShape ss{s.config.fixed, s.config.model, layout, rows.size(), true};
          StepStatement sst{s.dataset_root, r.next_mask, model, st.model_out, r.params.eta_raw, pos};
          auto spub = sst.public_inputs();
          auto sres = backend.verify(registry.step(ss).vk, spub,
                                     proof_context(s.session_id, ProofKind::Step, t, step, ss.key()), r.step_proofs[k]);
          if (!sres) return fail("proofs", detail::at(t, step), sres.reason);
          ++rep.proofs;
          model = st.model_out;
          ++k;
        }
      }
    }
    rep.rounds = tr.rounds.size();
    rep.ok = true;
    return rep;
  } catch (const Error& e) {
    return fail("internal", "", e.what());
  }
}

/// Loads and verifies a transcript directory. Unreadable or malformed
/// records are verification failures, not errors.
inline VerifyReport verify_transcript_dir(const std::filesystem::path& dir, const AuditKey& audit) {
  Transcript tr;
  try {
    tr = Transcript::load(dir);
  } catch (const Error& e) {
    VerifyReport rep;
    rep.stage = "parse";
    rep.locus = dir.string();
    rep.reason = e.what();
    return rep;
  }
  return verify_transcript(tr, audit);
}

}  // namespace vunlearn

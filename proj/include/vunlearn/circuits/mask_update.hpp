#pragma once

// Irrecoverable mask-state transition S_t = S_{t-1} (&, &, ^) request_t.
//
// Public inputs, in order: one request commitment per owner, previous state
// root, next state root. Feature and sample bits combine by AND (zeros are
// absorbing); class bits accumulate by XOR.

#include <cstdint>
#include <string>
#include <vector>

#include "vunlearn/circuits/common.hpp"

namespace vunlearn {

struct MaskUpdateShape {
  ModelShape model;
  DatasetLayout layout;

  MaskLayout mask() const { return MaskLayout::for_model(model); }

  void validate() const {
    model.validate();
    layout.validate();
    require(layout.num_features == model.J && layout.num_labels == model.label_cols(), Errc::BadShape,
            "dataset layout does not match the model");
  }

  std::string key() const {
    std::string k = std::string("mask-update/") + to_string(model.kind) + "/" + std::to_string(model.J) + "-" +
                    std::to_string(model.K) + "/" + mask().name() + "/rows";
    for (const auto& o : layout.owners) k += "." + std::to_string(o.size());
    return k;
  }
};

struct MaskUpdateStatement {
  std::vector<Fr> request_roots;  // per owner, layout order
  Fr prev_root;
  Fr next_root;

  std::vector<Fr> public_inputs() const {
    std::vector<Fr> v = request_roots;
    v.push_back(prev_root);
    v.push_back(next_root);
    return v;
  }

  friend bool operator==(const MaskUpdateStatement&, const MaskUpdateStatement&) = default;
};

struct MaskUpdateInputs {
  const MaskSet* prev = nullptr;     // global state S_{t-1}
  Fr prev_randomness;
  const MaskSet* request = nullptr;  // merged global request for round t
  std::vector<Fr> request_randomness;  // per owner
  Fr next_randomness;
  Tamper tamper = Tamper::None;
};

struct MaskUpdateSynthesis {
  MaskUpdateStatement statement;
  MaskSet next;
};

/// Per-owner request commitments for a merged global request.
inline std::vector<Commitment> request_commitments(const MaskSet& request, const MaskLayout& ml,
                                                   const DatasetLayout& layout, const std::vector<Fr>& randomness) {
  require(randomness.size() == layout.owners.size(), Errc::LengthMismatch, "one randomness value per owner");
  std::vector<Commitment> out;
  for (std::size_t o = 0; o < layout.owners.size(); ++o) {
    const auto& r = layout.owners[o];
    MaskSet local = MaskSet::identity(r.size(), layout.num_features, layout.num_labels);
    for (MaskKind k : {MaskKind::Feature, MaskKind::Sample, MaskKind::Class}) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        for (std::size_t c = 0; c < local.get(k).cols(); ++c) local.get(k).bits(i, c) = request.get(k)(r.begin + i, c);
      }
    }
    out.push_back(request_commitment(local, ml, layout, r, randomness[o]));
  }
  return out;
}

inline MaskUpdateSynthesis synth_mask_update(Builder<Fr>& cs, const MaskUpdateShape& shape,
                                             const MaskUpdateInputs* in) {
  shape.validate();
  const MaskLayout ml = shape.mask();
  const DatasetLayout& layout = shape.layout;
  const std::size_t N = layout.num_rows, O = layout.owners.size(), bpr = ml.bits_per_row();
  const bool w = cs.has_values();
  require(!w || in, Errc::BadShape, "witness synthesis needs inputs");
  const Tamper tamper = w ? in->tamper : Tamper::None;
  MaskUpdateSynthesis out;
  if (w) {
    require(tamper == Tamper::None || tamper == Tamper::StateRuleSkipped || tamper == Tamper::MaskBit,
            Errc::BadParams, std::string("tamper '") + to_string(tamper) + "' does not apply to this circuit");
    require(in->request_randomness.size() == O, Errc::LengthMismatch, "one request randomness per owner");
    cs.set_lenient(tamper != Tamper::None);
    out.next = advance_state(*in->prev, *in->request);
  }

  std::vector<Var> req_roots;
  for (std::size_t o = 0; o < O; ++o) req_roots.push_back(cs.alloc_public());
  Var prev_root = cs.alloc_public();
  Var next_root = cs.alloc_public();

  std::vector<std::vector<std::uint8_t>> prev_vals, req_vals, next_vals;
  if (w) {
    prev_vals = mask_bit_rows(*in->prev, ml, N);
    req_vals = mask_bit_rows(*in->request, ml, N);
    next_vals = mask_bit_rows(out.next, ml, N);
    if (tamper == Tamper::MaskBit) prev_vals[0][0] ^= 1;
  }
  MaskRows prev = gadget_alloc_mask_rows(cs, ml, N, w ? &prev_vals : nullptr);
  Var r_prev = cs.alloc([&] { return in->prev_randomness; });
  gadget_bind_mask_rows(cs, prev_root, prev, ml, layout, Lc(r_prev));

  MaskRows req = gadget_alloc_mask_rows(cs, ml, N, w ? &req_vals : nullptr);
  WordMap wm = word_map(layout, ml);
  for (std::size_t o = 0; o < O; ++o) {
    Var r = cs.alloc([&] { return in->request_randomness[o]; });
    commitment_gadget(cs, req_roots[o], pack_word_lcs(req.bits, ml, wm, layout.owners[o].begin, layout.owners[o].end),
                      Lc(r));
  }

  // Bits at or past this index are class bits.
  const std::size_t class_begin = ml.klass ? ml.class_bit(0) : bpr;
  bool tampered = false;
  MaskRows next;
  for (std::size_t i = 0; i < N; ++i) {
    std::vector<Var> bits;
    for (std::size_t t = 0; t < bpr; ++t) {
      Var v = t < class_begin ? gadget_and(cs, prev.bits[i][t], req.bits[i][t])
                              : gadget_xor(cs, prev.bits[i][t], req.bits[i][t]);
      if (tamper == Tamper::StateRuleSkipped && !tampered && next_vals[i][t] != req_vals[i][t]) {
        cs.set(v, req_vals[i][t] ? Fr::one() : Fr::zero());
        tampered = true;
      }
      bits.push_back(v);
    }
    next.words.push_back(pack_bits<Fr>(bits));
    next.bits.push_back(std::move(bits));
  }
  require(tamper != Tamper::StateRuleSkipped || tampered, Errc::BadParams,
          "state rule already agrees with the request everywhere");
  Var r_next = cs.alloc([&] { return in->next_randomness; });
  gadget_bind_mask_rows(cs, next_root, next, ml, layout, Lc(r_next));

  if (w) {
    for (const auto& c : request_commitments(*in->request, ml, layout, in->request_randomness)) {
      out.statement.request_roots.push_back(c.root);
    }
    out.statement.prev_root = mask_commitment(*in->prev, ml, layout, in->prev_randomness).root;
    // Root over the next-state bits as assigned.
    std::vector<Fr> words(wm.num_words);
    for (std::size_t i = 0; i < N; ++i) {
      words[wm.word_of_row[i]] += cs.eval(next.words[i]) * pow2<Fr>(static_cast<unsigned>(wm.slot_of_row[i] * bpr));
    }
    out.statement.next_root = commit_vector(words, in->next_randomness).root;
    for (std::size_t o = 0; o < O; ++o) cs.set(req_roots[o], out.statement.request_roots[o]);
    cs.set(prev_root, out.statement.prev_root);
    cs.set(next_root, out.statement.next_root);
  }
  return out;
}

inline ConstraintSystem<Fr> build_mask_update_circuit(const MaskUpdateShape& shape) {
  Builder<Fr> b(BuildMode::Structure);
  synth_mask_update(b, shape, nullptr);
  return b.finalize();
}

struct MaskUpdateWitness {
  Witness<Fr> witness;
  MaskUpdateSynthesis result;
};

inline MaskUpdateWitness synthesize_mask_update_witness(const MaskUpdateShape& shape, const MaskUpdateInputs& in) {
  Builder<Fr> b(BuildMode::Witness);
  MaskUpdateSynthesis r = synth_mask_update(b, shape, &in);
  return MaskUpdateWitness{b.take_witness(), std::move(r)};
}

}  // namespace vunlearn

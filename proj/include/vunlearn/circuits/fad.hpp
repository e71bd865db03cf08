#pragma once

// Forging-attack detection over one minibatch.
//
// The unlearned set U is every row whose mask gate is 0. The prover places U
// in a fixed number of slots (strictly increasing positions, active slots
// first); the circuit checks the slot count against the committed mask, so U
// can be neither padded nor trimmed. For each batch row m the public flag is
//   flag_m = gate_m AND OR_u [ ||g_m - g_u||^2 <= xi^2 ],
// with per-sample gradients at scale f on the raw rows.
//
// Public inputs, in order: dataset root, mask-state root, model root, xi^2,
// batch positions, flags.

#include <cstdint>
#include <string>
#include <vector>

#include "vunlearn/circuits/step.hpp"

namespace vunlearn {

struct FadShape {
  FixedConfig cfg;
  ModelShape model;
  DatasetLayout layout;
  std::size_t batch = 1;
  std::size_t slots = 4;  // capacity for unlearned rows

  MaskLayout mask() const { return MaskLayout::for_model(model); }

  void validate() const {
    cfg.validate();
    model.validate();
    layout.validate();
    require(layout.num_features == model.J && layout.num_labels == model.label_cols(), Errc::BadShape,
            "dataset layout does not match the model");
    require(batch >= 1 && batch <= layout.num_rows, Errc::BadShape, "batch size must be in [1, N]");
    require(slots >= 1, Errc::BadShape, "at least one unlearned-row slot");
  }

  /// Width of the squared-distance comparison.
  unsigned distance_bits() const {
    return 2 * cfg.range_bits + bits_for(model.param_count());
  }

  std::string key() const {
    std::string k = std::string("fad/") + to_string(model.kind) + "/" + std::to_string(model.J) + "-" +
                    std::to_string(model.H) + "-" + std::to_string(model.K) + "/b" + std::to_string(batch) + "/u" +
                    std::to_string(slots) + "/f" + std::to_string(cfg.scale_bits) + "r" +
                    std::to_string(cfg.range_bits) + "/rows";
    for (const auto& o : layout.owners) k += "." + std::to_string(o.size());
    return k;
  }
};

struct FadStatement {
  Fr dataset_root;
  Fr mask_root;
  Fr model_root;
  u128 xi_sq = 0;
  std::vector<std::uint64_t> positions;
  std::vector<std::uint8_t> flags;

  std::vector<Fr> public_inputs() const {
    std::vector<Fr> v{dataset_root, mask_root, model_root,
                      Fr::from_limbs(Limbs{static_cast<u64>(xi_sq), static_cast<u64>(xi_sq >> 64), 0, 0})};
    for (auto p : positions) v.push_back(Fr::from_u64(p));
    for (auto f : flags) v.push_back(f ? Fr::one() : Fr::zero());
    return v;
  }

  friend bool operator==(const FadStatement&, const FadStatement&) = default;
};

struct FadInputs {
  const FixedDataset* data = nullptr;
  const DatasetTree* tree = nullptr;
  const MaskSet* masks = nullptr;
  Fr mask_randomness;
  Params<std::int64_t> params;
  Fr model_randomness;
  u128 xi_sq = 0;
  std::vector<std::size_t> batch;
  Tamper tamper = Tamper::None;
};

/// Plain detector with the circuit's semantics: flags per batch row.
inline std::vector<std::uint8_t> fad_flags(const FixedDataset& d, const MaskSet& masks,
                                           const Params<std::int64_t>& p, std::span<const std::size_t> batch,
                                           u128 xi_sq) {
  auto gate = masks.row_gate();
  std::vector<std::vector<std::int64_t>> unlearned;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (!gate[i]) unlearned.push_back(fixed_sample_gradient(d, p, i));
  }
  std::vector<std::uint8_t> flags;
  for (std::size_t m : batch) {
    bool hit = false;
    if (gate[m]) {
      auto gm = fixed_sample_gradient(d, p, m);
      for (const auto& gu : unlearned) hit = hit || fixed_distance_sq(gm, gu) <= xi_sq;
    }
    flags.push_back(hit);
  }
  return flags;
}

/// Per-sample gradient at scale f from row-gradient contributions.
inline std::vector<Lc> gadget_sample_gradient(Builder<Fr>& cs, const ModelShape& s, const std::vector<Var>& p,
                                              const OpenedRow& row, const FixedConfig& cfg) {
  std::vector<Lc> xm(row.x.begin(), row.x.end()), y(row.y.begin(), row.y.end());
  auto g = gadget_row_gradient(cs, s, p, xm, y, std::nullopt, cfg);
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!s.is_bias(i)) g[i] = gadget_floor_shift(cs, g[i], cfg.scale_bits, cfg);
  }
  return g;
}

struct FadSynthesis {
  FadStatement statement;
};

inline FadSynthesis synth_fad(Builder<Fr>& cs, const FadShape& shape, const FadInputs* in) {
  shape.validate();
  const ModelShape& s = shape.model;
  const FixedConfig& cfg = shape.cfg;
  const MaskLayout ml = shape.mask();
  const DatasetLayout& layout = shape.layout;
  const std::size_t B = shape.batch, N = layout.num_rows, P = s.param_count(), U = shape.slots;
  const unsigned depth = dataset_depth(layout);
  const bool w = cs.has_values();
  require(!w || in, Errc::BadShape, "witness synthesis needs inputs");
  const Tamper tamper = w ? in->tamper : Tamper::None;
  FadSynthesis out;

  std::vector<std::size_t> slot_rows;
  if (w) {
    require(tamper == Tamper::None || tamper == Tamper::FadFlag || tamper == Tamper::DatasetEntry ||
                tamper == Tamper::MaskBit,
            Errc::BadParams, std::string("tamper '") + to_string(tamper) + "' does not apply to this circuit");
    require(in->batch.size() == B, Errc::BadBatchSize, "batch does not match the circuit");
    cs.set_lenient(tamper != Tamper::None);
    auto gate = in->masks->row_gate();
    for (std::size_t i = 0; i < N; ++i) {
      if (!gate[i]) slot_rows.push_back(i);
    }
    require(slot_rows.size() <= U, Errc::BadShape,
            std::to_string(slot_rows.size()) + " unlearned rows exceed " + std::to_string(U) + " detection slots");
    out.statement.flags = fad_flags(*in->data, *in->masks, in->params, in->batch, in->xi_sq);
    if (tamper == Tamper::FadFlag) out.statement.flags[0] ^= 1;
  }

  Var dataset_root = cs.alloc_public();
  Var mask_root = cs.alloc_public();
  Var model_root = cs.alloc_public();
  Var xi_sq = cs.alloc_public();
  std::vector<Var> pos, flag;
  for (std::size_t b = 0; b < B; ++b) pos.push_back(cs.alloc_public());
  for (std::size_t b = 0; b < B; ++b) flag.push_back(cs.alloc_public());

  if (w) {
    out.statement.dataset_root = in->tree->root();
    out.statement.mask_root = mask_commitment(*in->masks, ml, layout, in->mask_randomness).root;
    out.statement.model_root = model_commitment(in->params, in->model_randomness).root;
    out.statement.xi_sq = in->xi_sq;
    for (std::size_t i : in->batch) out.statement.positions.push_back(row_position(layout, i));
    auto pub = out.statement.public_inputs();
    for (std::size_t i = 0; i < pub.size(); ++i) cs.set(Var{static_cast<std::uint32_t>(i + 1)}, pub[i]);
  }

  std::vector<Var> p = gadget_committed_params(cs, model_root, w ? &in->params : nullptr, P,
                                               w ? &in->model_randomness : nullptr);

  std::vector<std::vector<std::uint8_t>> vals;
  if (w) {
    vals = mask_bit_rows(*in->masks, ml, N);
    if (tamper == Tamper::MaskBit) vals[in->batch[0]][ml.sample_bit()] ^= 1;
  }
  MaskRows rows = gadget_alloc_mask_rows(cs, ml, N, w ? &vals : nullptr);
  Var r_mask = cs.alloc([&] { return in->mask_randomness; });
  gadget_bind_mask_rows(cs, mask_root, rows, ml, layout, Lc(r_mask));

  // Gates of every row, by position, and the unlearned count Z.
  std::vector<Lc> gate_by_pos;
  Lc unlearned_count;
  for (std::size_t i = 0; i < N; ++i) {
    Lc g = gadget_row_gate(cs, ml, rows.bits[i]);
    unlearned_count += Lc(Fr::one()) - g;
    std::uint64_t at = row_position(layout, i);
    if (gate_by_pos.size() <= at) gate_by_pos.resize(at + 1);
    gate_by_pos[at] = g;
  }

  // Slots.
  std::vector<Var> active, slot_pos;
  std::vector<std::vector<Lc>> slot_grad;
  Lc active_sum;
  for (std::size_t u = 0; u < U; ++u) {
    bool on = w && u < slot_rows.size();
    std::size_t row = on ? slot_rows[u] : 0;
    Var a = alloc_bit(cs, on);
    Var ps = cs.alloc([&] { return Fr::from_u64(row_position(layout, row)); });
    RowSource src;
    if (w) src = RowSource{in->data, in->tree, row, std::nullopt};
    OpenedRow opened = gadget_open_row(cs, dataset_root, Lc(ps), layout, src);
    Lc g = gadget_mux(cs, opened.position_bits, gate_by_pos);
    cs.enforce(a, g, Lc());
    if (u > 0) {
      cs.enforce(a, Lc(Fr::one()) - Lc(active[u - 1]), Lc());
      Var le = gadget_leq(cs, Lc(slot_pos[u - 1]) + Lc(Fr::one()), Lc(ps), depth + 1);
      cs.enforce(a, Lc(Fr::one()) - Lc(le), Lc());
    }
    active_sum += a;
    active.push_back(a);
    slot_pos.push_back(ps);
    slot_grad.push_back(gadget_sample_gradient(cs, s, p, opened, cfg));
  }
  enforce_equal(cs, active_sum, unlearned_count);

  const unsigned nbits = shape.distance_bits();
  for (std::size_t b = 0; b < B; ++b) {
    RowSource src;
    if (w) {
      src = RowSource{in->data, in->tree, in->batch[b], std::nullopt};
      if (b == 0 && tamper == Tamper::DatasetEntry) src.bump_feature = 0;
    }
    OpenedRow opened = gadget_open_row(cs, dataset_root, Lc(pos[b]), layout, src);
    Lc gate = gadget_mux(cs, opened.position_bits, gate_by_pos);
    auto gm = gadget_sample_gradient(cs, s, p, opened, cfg);
    std::vector<Var> hits;
    for (std::size_t u = 0; u < U; ++u) {
      Lc d2;
      for (std::size_t i = 0; i < P; ++i) {
        Lc diff = gm[i] - slot_grad[u][i];
        d2 += gadget_mul(cs, diff, diff);
      }
      Var le = gadget_leq(cs, d2, Lc(xi_sq), nbits);
      hits.push_back(gadget_and(cs, active[u], le));
    }
    Var any = gadget_or_all(cs, hits);
    cs.enforce(gate, any, flag[b]);
  }
  return out;
}

inline ConstraintSystem<Fr> build_fad_circuit(const FadShape& shape) {
  Builder<Fr> b(BuildMode::Structure);
  synth_fad(b, shape, nullptr);
  return b.finalize();
}

struct FadWitness {
  Witness<Fr> witness;
  FadSynthesis result;
};

inline FadWitness synthesize_fad_witness(const FadShape& shape, const FadInputs& in) {
  Builder<Fr> b(BuildMode::Witness);
  FadSynthesis r = synth_fad(b, shape, &in);
  return FadWitness{b.take_witness(), std::move(r)};
}

}  // namespace vunlearn

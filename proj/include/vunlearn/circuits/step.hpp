#pragma once

// One masked (or plain) optimizer step as a circuit.
//
// Public inputs, in order: dataset root, mask-state root (masked only), model
// root before, model root after, learning rate, batch positions. Everything
// else, including every mask bit, every dataset value and the effective
// count, is private.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vunlearn/circuits/common.hpp"

namespace vunlearn {

struct StepShape {
  FixedConfig cfg;
  ModelShape model;
  DatasetLayout layout;
  std::size_t batch = 1;
  bool masked = true;

  MaskLayout mask() const { return masked ? MaskLayout::for_model(model) : MaskLayout::none(); }

  void validate() const {
    cfg.validate();
    model.validate();
    layout.validate();
    require(layout.num_features == model.J && layout.num_labels == model.label_cols(), Errc::BadShape,
            "dataset layout does not match the model");
    require(batch >= 1 && batch <= layout.num_rows, Errc::BadShape, "batch size must be in [1, N]");
  }

  /// Registry key: everything the constraint structure depends on.
  std::string key() const {
    std::string k = std::string("step/") + to_string(model.kind) + "/" + std::to_string(model.J) + "-" +
                    std::to_string(model.H) + "-" + std::to_string(model.K) + "/b" + std::to_string(batch) +
                    "/" + mask().name() + "/f" + std::to_string(cfg.scale_bits) + "r" +
                    std::to_string(cfg.range_bits) + "/rows";
    for (const auto& o : layout.owners) k += "." + std::to_string(o.size());
    return k;
  }
};

struct StepStatement {
  Fr dataset_root;
  std::optional<Fr> mask_root;
  Fr model_in;
  Fr model_out;
  std::int64_t eta = 0;
  std::vector<std::uint64_t> positions;

  std::vector<Fr> public_inputs() const {
    std::vector<Fr> v{dataset_root};
    if (mask_root) v.push_back(*mask_root);
    v.push_back(model_in);
    v.push_back(model_out);
    v.push_back(Fr::from_i64(eta));
    for (auto p : positions) v.push_back(Fr::from_u64(p));
    return v;
  }

  friend bool operator==(const StepStatement&, const StepStatement&) = default;
};

struct StepWitnessInputs {
  const FixedDataset* data = nullptr;
  const DatasetTree* tree = nullptr;
  const MaskSet* masks = nullptr;  // required when the shape is masked
  Fr mask_randomness;
  Params<std::int64_t> params;
  Fr model_randomness;
  Fr next_randomness;
  std::int64_t eta = 0;
  std::vector<std::size_t> batch;
  Tamper tamper = Tamper::None;
  bool allow_empty = false;  // prove a no-op step when every batch row is masked
};

struct StepSynthesis {
  StepStatement statement;
  Params<std::int64_t> next;
};

inline bool step_tamper_applies(Tamper t, const StepShape& s) {
  switch (t) {
    case Tamper::None:
    case Tamper::DatasetEntry:
    case Tamper::WrongEta:
    case Tamper::PerturbedOutput:
    case Tamper::BatchIndex: return true;
    case Tamper::MaskBit:
    case Tamper::WrongCount:
    case Tamper::WrongInverse: return s.masked;
    case Tamper::ClassFlip: return s.masked && s.model.kind == ModelKind::NN;
    default: return false;
  }
}

/// Per-parameter gradient contributions of one row: weights at scale 2f,
/// biases at scale f. `gate` absent means the row always counts.
inline std::vector<Lc> gadget_row_gradient(Builder<Fr>& cs, const ModelShape& s, const std::vector<Var>& p,
                                           const std::vector<Lc>& xm, const std::vector<Lc>& y,
                                           const std::optional<Lc>& gate, const FixedConfig& cfg) {
  const unsigned f = cfg.scale_bits;
  std::vector<Lc> g(s.param_count());
  auto gated = [&](const Lc& v) -> Lc { return gate ? Lc(gadget_mul(cs, *gate, v)) : v; };
  if (s.kind == ModelKind::LR) {
    Lc dot;
    for (std::size_t j = 0; j < s.J; ++j) dot += gadget_mul(cs, xm[j], p[s.w(j)]);
    Lc pred = Lc(gadget_floor_shift(cs, dot, f, cfg)) + Lc(p[s.bias()]);
    gadget_signed_range(cs, pred, cfg);
    Lc res = gated(pred - y[0]);
    gadget_signed_range(cs, res, cfg);
    for (std::size_t j = 0; j < s.J; ++j) g[s.w(j)] = gadget_mul(cs, xm[j], res);
    g[s.bias()] = res;
    return g;
  }
  std::vector<Var> on(s.H);
  std::vector<Lc> a1(s.H), e(s.K);
  for (std::size_t h = 0; h < s.H; ++h) {
    Lc dot;
    for (std::size_t j = 0; j < s.J; ++j) dot += gadget_mul(cs, xm[j], p[s.w1(j, h)]);
    Lc z1 = Lc(gadget_floor_shift(cs, dot, f, cfg)) + Lc(p[s.b1(h)]);
    on[h] = gadget_signed_range(cs, z1, cfg).back();
    a1[h] = gadget_mul(cs, on[h], z1);
  }
  for (std::size_t k = 0; k < s.K; ++k) {
    Lc dot;
    for (std::size_t h = 0; h < s.H; ++h) dot += gadget_mul(cs, a1[h], p[s.w2(h, k)]);
    Lc z2 = Lc(gadget_floor_shift(cs, dot, f, cfg)) + Lc(p[s.b2(k)]);
    gadget_signed_range(cs, z2, cfg);
    e[k] = gated(z2 - y[k] * pow2<Fr>(f));
    gadget_signed_range(cs, e[k], cfg);
    g[s.b2(k)] = e[k];
  }
  for (std::size_t h = 0; h < s.H; ++h) {
    Lc back;
    for (std::size_t k = 0; k < s.K; ++k) {
      g[s.w2(h, k)] = gadget_mul(cs, a1[h], e[k]);
      back += gadget_mul(cs, p[s.w2(h, k)], e[k]);
    }
    Var d1 = gadget_floor_shift(cs, gadget_mul(cs, on[h], back), f, cfg);
    for (std::size_t j = 0; j < s.J; ++j) g[s.w1(j, h)] = gadget_mul(cs, xm[j], d1);
    g[s.b1(h)] = d1;
  }
  return g;
}

namespace detail {

inline std::int64_t small_int(const Fr& v) {
  auto l = v.to_limbs();
  return (l[1] | l[2] | l[3]) == 0 && l[0] < (u64{1} << 62) ? static_cast<std::int64_t>(l[0]) : -1;
}

}  // namespace detail

/// Builds the step circuit; with `in` set (and a value-carrying builder) also
/// assigns the witness and returns the statement it proves.
inline StepSynthesis synth_step(Builder<Fr>& cs, const StepShape& shape, const StepWitnessInputs* in) {
  shape.validate();
  const ModelShape& s = shape.model;
  const FixedConfig& cfg = shape.cfg;
  const MaskLayout ml = shape.mask();
  const std::size_t B = shape.batch, N = shape.layout.num_rows, P = s.param_count();
  const unsigned f = cfg.scale_bits;
  const bool w = cs.has_values();
  require(!w || in, Errc::BadShape, "witness synthesis needs inputs");
  const Tamper tamper = w ? in->tamper : Tamper::None;
  StepSynthesis out;

  if (w) {
    require(step_tamper_applies(tamper, shape), Errc::BadParams,
            std::string("tamper '") + to_string(tamper) + "' does not apply to this circuit");
    require(in->batch.size() == B, Errc::BadBatchSize, "batch does not match the circuit");
    require(in->params.shape == s && in->data->layout.num_rows == N, Errc::BadShape, "inputs do not match shape");
    require(!shape.masked || in->masks, Errc::BadShape, "masked circuit needs masks");
    cs.set_lenient(tamper != Tamper::None);
    if (tamper == Tamper::None) {
      // Surfaces EmptyEffectiveSet and range errors before any constraint work.
      fixed_step(*in->data, shape.masked ? in->masks : nullptr, in->params, in->eta, in->batch, !in->allow_empty);
    }
    out.next = in->params;
  }

  Var dataset_root = cs.alloc_public();
  std::optional<Var> mask_root;
  if (shape.masked) mask_root = cs.alloc_public();
  Var model_in = cs.alloc_public();
  Var model_out = cs.alloc_public();
  Var eta = cs.alloc_public();
  std::vector<Var> pos;
  for (std::size_t b = 0; b < B; ++b) pos.push_back(cs.alloc_public());

  if (w) {
    out.statement.dataset_root = in->tree->root();
    out.statement.model_in = model_commitment(in->params, in->model_randomness).root;
    out.statement.eta = in->eta;
    for (std::size_t i : in->batch) out.statement.positions.push_back(row_position(shape.layout, i));
    cs.set(dataset_root, out.statement.dataset_root);
    cs.set(model_in, out.statement.model_in);
    cs.set(eta, Fr::from_i64(in->eta));
    for (std::size_t b = 0; b < B; ++b) cs.set(pos[b], Fr::from_u64(out.statement.positions[b]));
  }

  std::vector<Var> p = gadget_committed_params(cs, model_in, w ? &in->params : nullptr, P,
                                               w ? &in->model_randomness : nullptr);

  // Mask state: every row's bits, bound once to the public root.
  MaskRows rows;
  std::vector<Lc> by_position;
  if (shape.masked) {
    std::vector<std::vector<std::uint8_t>> vals;
    if (w) {
      vals = mask_bit_rows(*in->masks, ml, N);
      if (tamper == Tamper::MaskBit) vals[in->batch[0]][ml.sample_bit()] ^= 1;
    }
    rows = gadget_alloc_mask_rows(cs, ml, N, w ? &vals : nullptr);
    Var r = cs.alloc([&] { return in->mask_randomness; });
    gadget_bind_mask_rows(cs, *mask_root, rows, ml, shape.layout, Lc(r));
    by_position = words_by_position(rows, shape.layout);
    if (w) {
      cs.set(*mask_root, mask_commitment(*in->masks, ml, shape.layout, in->mask_randomness).root);
    }
  }

  std::vector<Lc> grad(P);
  Lc n_hat_sum;
  for (std::size_t b = 0; b < B; ++b) {
    RowSource src;
    if (w) {
      src = RowSource{in->data, in->tree, in->batch[b], std::nullopt};
      if (b == 0 && tamper == Tamper::DatasetEntry) src.bump_feature = 0;
      if (b == 0 && tamper == Tamper::BatchIndex) src.row = (in->batch[0] + 1) % N;
    }
    OpenedRow row = gadget_open_row(cs, dataset_root, Lc(pos[b]), shape.layout, src);
    if (s.kind == ModelKind::NN) {
      for (Var v : row.y) gadget_bool(cs, v);
    }
    std::vector<Lc> xm(row.x.begin(), row.x.end());
    std::vector<Lc> y(row.y.begin(), row.y.end());
    std::optional<Lc> gate;
    if (shape.masked) {
      std::vector<Var> bits = gadget_select_mask_row(cs, ml, by_position, row.position_bits);
      for (std::size_t j = 0; j < s.J; ++j) xm[j] = gadget_mul(cs, bits[j], row.x[j]);
      gate = gadget_row_gate(cs, ml, bits);
      n_hat_sum += *gate;
      if (ml.klass) {
        for (std::size_t k = 0; k < s.K; ++k) {
          Var yc = gadget_xor(cs, row.y[k], bits[ml.class_bit(k)]);
          if (b == 0 && k == 0 && tamper == Tamper::ClassFlip) cs.set(yc, Fr::one() - cs.value(yc));
          y[k] = yc;
        }
      }
    }
    auto g = gadget_row_gradient(cs, s, p, xm, y, gate, cfg);
    for (std::size_t i = 0; i < P; ++i) grad[i] += g[i];
  }

  // Reciprocal of the effective count: D * inv + rem = 2^(f+32), 0 <= rem < D.
  const unsigned inv_shift = f + fixed::kInvExtraBits;
  const Fr scaled_one = pow2<Fr>(inv_shift);
  std::optional<Var> inv;
  Fr inv_const;
  if (shape.masked) {
    Var n_hat = cs.alloc([&] { return cs.eval(n_hat_sum); });
    if (tamper == Tamper::WrongCount) cs.set(n_hat, cs.value(n_hat) + Fr::one());
    enforce_equal(cs, Lc(n_hat), n_hat_sum);
    Var zero = gadget_is_zero(cs, Lc(n_hat));
    Lc D = Lc(n_hat) + Lc(zero);
    std::int64_t d = w ? detail::small_int(cs.eval(D)) : 1;
    Var inv_v = cs.alloc([&] {
      std::int64_t q = d >= 1 ? static_cast<std::int64_t>((__int128{1} << inv_shift) / d) : 0;
      return Fr::from_i64(q + (tamper == Tamper::WrongInverse ? 1 : 0));
    });
    Var rem = cs.alloc([&] { return scaled_one - cs.eval(D) * cs.value(inv_v); });
    cs.enforce(D, inv_v, Lc(scaled_one) - Lc(rem));
    const unsigned bb = bits_for(B);
    gadget_bit_decompose(cs, Lc(rem), bb);
    gadget_bit_decompose(cs, D - Lc(Fr::one()) - Lc(rem), bb);
    gadget_bit_decompose(cs, Lc(inv_v), inv_shift + 1);
    inv = inv_v;
  } else {
    inv_const = Fr::from_i64(static_cast<std::int64_t>((__int128{1} << inv_shift) / static_cast<__int128>(B)));
  }

  std::vector<Var> next;
  std::vector<Lc> next_lcs;
  for (std::size_t i = 0; i < P; ++i) {
    unsigned sc = s.is_bias(i) ? f : 2 * f;
    Lc scaled = inv ? Lc(gadget_mul(cs, grad[i], *inv)) : grad[i] * inv_const;
    Var mean = gadget_floor_shift(cs, scaled, sc + fixed::kInvExtraBits, cfg);
    Var em = gadget_mul(cs, eta, mean);
    if (i == 0 && tamper == Tamper::WrongEta) cs.set(em, (cs.value(eta) + Fr::one()) * cs.value(mean));
    Var delta = gadget_floor_shift(cs, Lc(em), f, cfg);
    Var nx = cs.alloc([&] { return cs.value(p[i]) - cs.value(delta); });
    if (i == 0 && tamper == Tamper::PerturbedOutput) cs.set(nx, cs.value(nx) + Fr::one());
    enforce_equal(cs, Lc(nx), Lc(p[i]) - Lc(delta));
    gadget_signed_range(cs, Lc(nx), cfg);
    next.push_back(nx);
    next_lcs.emplace_back(nx);
  }
  Var r_out = cs.alloc([&] { return in->next_randomness; });
  commitment_gadget(cs, model_out, next_lcs, Lc(r_out));

  if (w) {
    std::vector<Fr> vals;
    for (std::size_t i = 0; i < P; ++i) {
      vals.push_back(cs.value(next[i]));
      if (tamper == Tamper::None) out.next[i] = fixed::raw_of(vals.back(), cfg);
    }
    out.statement.model_out = commit_vector(vals, in->next_randomness).root;
    cs.set(model_out, out.statement.model_out);
    if (shape.masked) out.statement.mask_root = cs.value(*mask_root);
  }
  return out;
}

inline ConstraintSystem<Fr> build_step_circuit(const StepShape& shape) {
  Builder<Fr> b(BuildMode::Structure);
  synth_step(b, shape, nullptr);
  return b.finalize();
}

struct StepWitness {
  Witness<Fr> witness;
  StepSynthesis result;
};

inline StepWitness synthesize_step_witness(const StepShape& shape, const StepWitnessInputs& in) {
  Builder<Fr> b(BuildMode::Witness);
  StepSynthesis r = synth_step(b, shape, &in);
  return StepWitness{b.take_witness(), std::move(r)};
}

}  // namespace vunlearn

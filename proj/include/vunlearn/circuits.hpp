#pragma once

#include <map>
#include <memory>
#include <string>

#include "vunlearn/backend.hpp"
#include "vunlearn/circuits/common.hpp"
#include "vunlearn/circuits/fad.hpp"
#include "vunlearn/circuits/mask_update.hpp"
#include "vunlearn/circuits/step.hpp"

namespace vunlearn {

/// Built circuits and their keys, cached by shape key.
class CircuitRegistry {
 public:
  explicit CircuitRegistry(const ProofBackend& backend) : backend_(backend) {}

  struct Entry {
    std::shared_ptr<const ConstraintSystem<Fr>> cs;
    ProvingKey pk;
    VerifyingKey vk;
  };

  const Entry& step(const StepShape& s) { return get(s.key(), [&] { return build_step_circuit(s); }); }
  const Entry& mask_update(const MaskUpdateShape& s) {
    return get(s.key(), [&] { return build_mask_update_circuit(s); });
  }
  const Entry& fad(const FadShape& s) { return get(s.key(), [&] { return build_fad_circuit(s); }); }

  /// Pinned digests, hex-encoded, by key.
  std::map<std::string, std::string> digests() const {
    std::map<std::string, std::string> out;
    for (const auto& [k, e] : entries_) out[k] = to_hex(e.cs->digest());
    return out;
  }

 private:
  template <class Build>
  const Entry& get(const std::string& key, Build&& build) {
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
    auto cs = std::make_shared<const ConstraintSystem<Fr>>(build());
    auto [pk, vk] = backend_.setup(cs);
    return entries_.emplace(key, Entry{cs, pk, vk}).first->second;
  }

  const ProofBackend& backend_;
  std::map<std::string, Entry> entries_;
};

}  // namespace vunlearn

#pragma once

#include <string>
#include <vector>

#include "ambl/dyck.hpp"
#include "ambl/transformer.hpp"
#include "json.hpp"

namespace ambl::ablation {

struct Scope {
  enum class Kind { AllHeads, SingleHead };
  Kind kind = Kind::AllHeads;
  int layer = 0;
  int head = 0;

  static Scope all_heads() { return {}; }
  static Scope single(int layer, int head) { return {Kind::SingleHead, layer, head}; }

  // Throws std::out_of_range when a single head lies outside the model.
  model::HeadMask mask(int depth, int heads) const;
  std::string label() const;  // "all" or "L{layer}H{head}"
  friend bool operator==(const Scope&, const Scope&) = default;
};

struct AblationResult {
  std::string run_id;
  Scope scope;
  double baseline_id_acc = 0.0;
  double ablated_id_acc = 0.0;
  double baseline_ood_acc = 0.0;
  double ablated_ood_acc = 0.0;

  double delta_id() const { return ablated_id_acc - baseline_id_acc; }
  double delta_ood() const { return ablated_ood_acc - baseline_ood_acc; }
};

model::ForwardOutput uniform_ablated_forward(const model::ModelRecord& model, const dyck::TokenizedSequence& input,
                                             const Scope& scope);

AblationResult ablation_experiment(const model::ModelRecord& model, const dyck::DatasetBundle& bundle,
                                   const Scope& scope = Scope::all_heads(), const std::string& run_id = {});

struct SingleHeadSweep {
  std::vector<AblationResult> results;  // (layer, head) order
  std::size_t max_delta_ood_index = 0;  // first maximum of |delta_ood|
};

SingleHeadSweep single_head_sweep(const model::ModelRecord& model, const dyck::DatasetBundle& bundle,
                                  const std::string& run_id = {});

nlohmann::json to_json(const AblationResult& r);
AblationResult ablation_result_from_json(const nlohmann::json& j);

}  // namespace ambl::ablation

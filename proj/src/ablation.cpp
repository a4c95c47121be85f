#include "ambl/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ambl/trainer.hpp"

namespace ambl::ablation {

model::HeadMask Scope::mask(int depth, int heads) const {
  if (kind == Kind::AllHeads) return model::HeadMask::all(depth, heads);
  return model::HeadMask::single(depth, heads, layer, head);
}

std::string Scope::label() const {
  if (kind == Kind::AllHeads) return "all";
  return "L" + std::to_string(layer) + "H" + std::to_string(head);
}

model::ForwardOutput uniform_ablated_forward(const model::ModelRecord& model, const dyck::TokenizedSequence& input,
                                             const Scope& scope) {
  const auto m = scope.mask(model.hp.depth, model.hp.heads);
  return model::forward_with_capture(model, input, &m);
}

namespace {

AblationResult ablate_against(const model::ModelRecord& model, const dyck::DatasetBundle& bundle, const Scope& scope,
                              const std::string& run_id, double base_id, double base_ood) {
  const auto m = scope.mask(model.hp.depth, model.hp.heads);
  AblationResult r;
  r.run_id = run_id;
  r.scope = scope;
  r.baseline_id_acc = base_id;
  r.baseline_ood_acc = base_ood;
  r.ablated_id_acc = train::evaluate_accuracy(model, bundle.val_id, &m);
  r.ablated_ood_acc = train::evaluate_accuracy(model, bundle.test_ood, &m);
  return r;
}

}  // namespace

AblationResult ablation_experiment(const model::ModelRecord& model, const dyck::DatasetBundle& bundle,
                                   const Scope& scope, const std::string& run_id) {
  scope.mask(model.hp.depth, model.hp.heads);  // validate before the baseline pass
  return ablate_against(model, bundle, scope, run_id, train::evaluate_accuracy(model, bundle.val_id),
                        train::evaluate_accuracy(model, bundle.test_ood));
}

SingleHeadSweep single_head_sweep(const model::ModelRecord& model, const dyck::DatasetBundle& bundle,
                                  const std::string& run_id) {
  const double base_id = train::evaluate_accuracy(model, bundle.val_id);
  const double base_ood = train::evaluate_accuracy(model, bundle.test_ood);
  SingleHeadSweep out;
  double best = -1.0;
  for (int l = 0; l < model.hp.depth; ++l) {
    for (int h = 0; h < model.hp.heads; ++h) {
      out.results.push_back(ablate_against(model, bundle, Scope::single(l, h), run_id, base_id, base_ood));
      const double d = std::abs(out.results.back().delta_ood());
      if (d > best) {
        best = d;
        out.max_delta_ood_index = out.results.size() - 1;
      }
    }
  }
  return out;
}

nlohmann::json to_json(const AblationResult& r) {
  return {{"run_id", r.run_id},
          {"scope", r.scope.label()},
          {"baseline_id_acc", r.baseline_id_acc},
          {"ablated_id_acc", r.ablated_id_acc},
          {"baseline_ood_acc", r.baseline_ood_acc},
          {"ablated_ood_acc", r.ablated_ood_acc},
          {"delta_id", r.delta_id()},
          {"delta_ood", r.delta_ood()}};
}

AblationResult ablation_result_from_json(const nlohmann::json& j) {
  AblationResult r;
  r.run_id = j.at("run_id").get<std::string>();
  const auto label = j.at("scope").get<std::string>();
  if (label != "all") {
    int l = 0, h = 0;
    if (std::sscanf(label.c_str(), "L%dH%d", &l, &h) != 2) throw std::invalid_argument("bad ablation scope: " + label);
    r.scope = Scope::single(l, h);
  }
  r.baseline_id_acc = j.at("baseline_id_acc").get<double>();
  r.ablated_id_acc = j.at("ablated_id_acc").get<double>();
  r.baseline_ood_acc = j.at("baseline_ood_acc").get<double>();
  r.ablated_ood_acc = j.at("ablated_ood_acc").get<double>();
  return r;
}

}  // namespace ambl::ablation

#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ambl/dyck.hpp"
#include "ambl/transformer.hpp"

namespace ambl::train {

struct TrainConfig {
  int batch_size = 64;
  long total_examples = 100'000;  // full scale: 1'000'000 (5 passes over 200K unique)
  long eval_every = 10'000;
  int checkpoints = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  long step = 0;
};

AdamState make_adam_state(const model::ModelRecord& model);

// One decoupled-decay Adam step over model.params() with matching grads.
// Decayed tensors are first scaled by (1 - lr·wd); biases, layer-norm
// parameters and embeddings are not decayed. Throws DivergenceError on
// non-finite gradients.
void adamw_step(model::ModelRecord& model, const std::vector<Tensor<float>>& grads, AdamState& state,
                double learning_rate, double weight_decay, const TrainConfig& cfg);

struct MetricsRecord {
  long examples_seen = 0;
  double id_val_accuracy = 0.0;
  double ood_accuracy = 0.0;
  double mean_loss = 0.0;  // mean training loss since the previous record (0 for the initial record)
};

using MetricsHistory = std::vector<MetricsRecord>;

struct Checkpoint {
  long examples_seen = 0;
  int epoch = 0;             // data-order position of the next example
  long epoch_offset = 0;
  double id_val_accuracy = 0.0;
  double ood_accuracy = 0.0;
  model::ModelRecord model;
};

struct TrainResult {
  model::ModelRecord model;
  MetricsHistory history;
  std::vector<Checkpoint> checkpoints;
};

using ProgressFn = std::function<void(const MetricsRecord&)>;

// Mean cross-entropy loss and per-parameter gradients over a batch, with the
// per-example gradients summed in batch order regardless of thread count.
float batch_gradients(const model::ModelRecord& model, std::span<const dyck::Example* const> batch,
                      std::vector<Tensor<float>>& grads);

TrainResult train_run(const model::HyperParams& hp, const dyck::DatasetBundle& bundle, const TrainConfig& cfg,
                      const ProgressFn& progress = {});

// Fraction of examples whose prediction equals the stored reference label.
double evaluate_accuracy(const model::ModelRecord& model, std::span<const dyck::Example> examples,
                         const model::HeadMask* uniform = nullptr);

enum class OodRule { None, EqualCountConverged, NestedConverged };
std::string to_string(OodRule rule);

struct ConvergenceFlags {
  std::optional<long> id_converged_at;
  std::optional<long> ood_converged_at;
  OodRule ood_rule = OodRule::None;
};

// Earliest record r (with examples_seen <= 97.5% of the run) from which more
// than 99% of the remaining records satisfy: ID accuracy >= 0.99; OOD
// accuracy <= 0.2 (Equal-Count) or >= 0.8 (Nested).
ConvergenceFlags convergence_flags(const MetricsHistory& history);

}  // namespace ambl::train

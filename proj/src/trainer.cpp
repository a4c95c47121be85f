#include "ambl/trainer.hpp"

#include <omp.h>

#include <cmath>

namespace ambl::train {

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (total_examples < 1) throw std::invalid_argument("total examples must be positive");
  if (eval_every < 1) throw std::invalid_argument("evaluation cadence must be positive");
  if (checkpoints < 1) throw std::invalid_argument("checkpoint count must be at least 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) {
    throw std::invalid_argument("invalid optimizer coefficients");
  }
}

AdamState make_adam_state(const model::ModelRecord& model) {
  AdamState s;
  for (const auto& p : model.params()) {
    s.m.emplace_back(p.tensor->shape());
    s.v.emplace_back(p.tensor->shape());
  }
  return s;
}

void adamw_step(model::ModelRecord& model, const std::vector<Tensor<float>>& grads, AdamState& state,
                double learning_rate, double weight_decay, const TrainConfig& cfg) {
  auto params = model.params();
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw std::invalid_argument("adamw_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].tensor->shape()) {
      throw std::invalid_argument("adamw_step: gradient shape mismatch for " + params[i].name);
    }
    for (const float g : grads[i].values()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in " + params[i].name + " at step " + std::to_string(state.step + 1));
    }
  }
  ++state.step;
  const float lr = static_cast<float>(learning_rate);
  const float b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  const float eps = static_cast<float>(cfg.epsilon);
  const float bc1 = static_cast<float>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const float bc2 = static_cast<float>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const float decay = static_cast<float>(1.0 - learning_rate * weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor->values();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    const auto& g = grads[i].values();
    const bool decays = params[i].decay && weight_decay != 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (decays) p[j] *= decay;
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

void zero_grads(std::vector<Tensor<float>>& grads, const model::ModelRecord& model) {
  const auto params = model.params();
  if (grads.size() != params.size()) {
    grads.clear();
    for (const auto& p : params) grads.emplace_back(p.tensor->shape());
    return;
  }
  for (auto& g : grads) std::fill(g.values().begin(), g.values().end(), 0.0f);
}

// Loss and gradient for one example; gradients are added into `out`.
float example_gradient(const model::ModelRecord& model, const dyck::Example& ex, std::vector<Tensor<float>>& out) {
  ad::Tape<float> tape;
  std::vector<ad::Var> pv;
  model::ForwardOptions opts;
  const auto logits = model::build_forward(tape, model, dyck::tokenize(ex.seq), opts, &pv);
  const auto loss = ad::cross_entropy(tape, logits, dyck::is_true(ex.label) ? 1 : 0);
  tape.backward(loss);
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const auto g = tape.grad(pv[i]);
    auto& dst = out[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
  }
  return tape.value(loss)[0];
}

}  // namespace

float batch_gradients(const model::ModelRecord& model, std::span<const dyck::Example* const> batch,
                      std::vector<Tensor<float>>& grads) {
  zero_grads(grads, model);
  const int b = static_cast<int>(batch.size());
  if (b == 0) throw std::invalid_argument("batch_gradients: empty batch");
  std::vector<float> losses(b);
  if (omp_get_max_threads() == 1 || b == 1) {
    for (int i = 0; i < b; ++i) losses[i] = example_gradient(model, *batch[i], grads);
  } else {
    // Per-example slots, then an in-order sum: identical to the serial path.
    std::vector<std::vector<Tensor<float>>> slots(b);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < b; ++i) {
      zero_grads(slots[i], model);
      losses[i] = example_gradient(model, *batch[i], slots[i]);
    }
    for (int i = 0; i < b; ++i) {
      for (std::size_t p = 0; p < grads.size(); ++p) {
        auto& dst = grads[p].values();
        const auto& src = slots[i][p].values();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  }
  const float inv = 1.0f / static_cast<float>(b);
  for (auto& g : grads) {
    for (float& x : g.values()) x *= inv;
  }
  float total = 0.0f;
  for (const float l : losses) total += l;
  return total * inv;
}

double evaluate_accuracy(const model::ModelRecord& model, std::span<const dyck::Example> examples,
                         const model::HeadMask* uniform) {
  if (examples.empty()) throw std::invalid_argument("evaluate_accuracy: empty example set");
  const long count = static_cast<long>(examples.size());
  long correct = 0;
#pragma omp parallel for schedule(dynamic, 16) reduction(+ : correct)
  for (long i = 0; i < count; ++i) {
    const auto pred = model::predict(model, examples[i].seq, uniform);
    correct += pred.label == examples[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(count);
}

TrainResult train_run(const model::HyperParams& hp, const dyck::DatasetBundle& bundle, const TrainConfig& cfg,
                      const ProgressFn& progress) {
  hp.validate();
  cfg.validate();
  const long unique = static_cast<long>(bundle.train.size());
  if (unique == 0) throw std::invalid_argument("train_run: empty training split");
  if (cfg.total_examples > unique * dyck::kEpochs) {
    throw std::invalid_argument("train_run: budget of " + std::to_string(cfg.total_examples) + " exceeds " +
                                std::to_string(dyck::kEpochs) + " passes over " + std::to_string(unique) + " examples");
  }

  TrainResult result;
  result.model = model::init_model(hp);
  AdamState adam = make_adam_state(result.model);
  std::vector<Tensor<float>> grads;

  std::vector<long> milestones;
  for (int k = 1; k <= cfg.checkpoints; ++k) milestones.push_back(cfg.total_examples * k / cfg.checkpoints);

  double loss_sum = 0.0;
  long loss_batches = 0;
  auto record = [&](long seen) {
    MetricsRecord r;
    r.examples_seen = seen;
    r.id_val_accuracy = evaluate_accuracy(result.model, bundle.val_id);
    r.ood_accuracy = evaluate_accuracy(result.model, bundle.test_ood);
    r.mean_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches) : 0.0;
    loss_sum = 0.0;
    loss_batches = 0;
    result.history.push_back(r);
    if (progress) progress(r);
    return r;
  };

  record(0);
  std::vector<int> order;
  int order_epoch = -1;
  long seen = 0;
  long next_eval = cfg.eval_every;
  std::size_t next_milestone = 0;
  std::vector<const dyck::Example*> batch;
  while (seen < cfg.total_examples) {
    const long take = std::min<long>(cfg.batch_size, cfg.total_examples - seen);
    batch.clear();
    for (long i = 0; i < take; ++i) {
      const long idx = seen + i;
      const int epoch = static_cast<int>(idx / unique);
      if (epoch != order_epoch) {
        order = dyck::epoch_order(bundle, hp.shuffle_seed, epoch);
        order_epoch = epoch;
      }
      batch.push_back(&bundle.train[order[idx % unique]]);
    }
    const float loss = batch_gradients(result.model, batch, grads);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss after " + std::to_string(seen) + " examples");
    adamw_step(result.model, grads, adam, hp.learning_rate, hp.weight_decay, cfg);
    seen += take;
    loss_sum += loss;
    ++loss_batches;

    const bool at_milestone = next_milestone < milestones.size() && seen >= milestones[next_milestone];
    if (seen >= next_eval || at_milestone || seen == cfg.total_examples) {
      const MetricsRecord r = record(seen);
      while (next_eval <= seen) next_eval += cfg.eval_every;
      while (next_milestone < milestones.size() && seen >= milestones[next_milestone]) {
        ++next_milestone;
        Checkpoint cp;
        cp.examples_seen = seen;
        cp.epoch = static_cast<int>(seen / unique);
        cp.epoch_offset = seen % unique;
        cp.id_val_accuracy = r.id_val_accuracy;
        cp.ood_accuracy = r.ood_accuracy;
        cp.model = result.model;
        // Several milestones can fall inside one batch at tiny budgets; keep one snapshot each.
        result.checkpoints.push_back(std::move(cp));
      }
    }
  }
  return result;
}

std::string to_string(OodRule rule) {
  switch (rule) {
    case OodRule::EqualCountConverged: return "EqualCountConverged";
    case OodRule::NestedConverged: return "NestedConverged";
    case OodRule::None: break;
  }
  return "None";
}

namespace {

template <typename Pred>
std::optional<long> earliest_stable(const MetricsHistory& h, long cap, Pred&& holds) {
  const std::size_t n = h.size();
  // suffix[i] = records in [i, n) satisfying the predicate
  std::vector<long> suffix(n + 1, 0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + (holds(h[i]) ? 1 : 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (h[i].examples_seen > cap) break;
    if (!holds(h[i])) continue;
    const double frac = static_cast<double>(suffix[i]) / static_cast<double>(n - i);
    if (frac > 0.99) return h[i].examples_seen;
  }
  return std::nullopt;
}

}  // namespace

ConvergenceFlags convergence_flags(const MetricsHistory& history) {
  ConvergenceFlags f;
  if (history.empty()) return f;
  const long total = history.back().examples_seen;
  const long cap = static_cast<long>(std::floor(0.975 * static_cast<double>(total)));
  f.id_converged_at = earliest_stable(history, cap, [](const MetricsRecord& r) { return r.id_val_accuracy >= 0.99; });
  const auto eq = earliest_stable(history, cap, [](const MetricsRecord& r) { return r.ood_accuracy <= 0.2; });
  const auto ne = earliest_stable(history, cap, [](const MetricsRecord& r) { return r.ood_accuracy >= 0.8; });
  if (eq && (!ne || *eq <= *ne)) {
    f.ood_converged_at = eq;
    f.ood_rule = OodRule::EqualCountConverged;
  } else if (ne) {
    f.ood_converged_at = ne;
    f.ood_rule = OodRule::NestedConverged;
  }
  return f;
}

}  // namespace ambl::train

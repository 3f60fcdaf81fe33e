#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fedcon/augment.hpp"
#include "fedcon/dataset.hpp"
#include "fedcon/losses.hpp"
#include "fedcon/model.hpp"
#include "fedcon/optimizer.hpp"
#include "fedcon/split.hpp"

namespace fedcon {

/// A session hit a non-finite loss; the message carries the step and components.
class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ServerLossOptions {
  bool use_consistency = true;         // include the J and J~ terms
  bool consistency_on_labeled = true;  // labeled images also contribute to J
};

/// Both augmented views of one server step, already normalized and batched.
template <typename T>
struct ServerViews {
  Tensor<T> labeled1, labeled2;  // (n, ...)
  std::vector<int> labels;
  Tensor<T> unlabeled1, unlabeled2;  // (m, ...), m may be 0
};

template <typename T>
struct ServerLossResult {
  double total = 0.0;        // L_S
  double ce = 0.0;           // (L + L~) / 2
  double consistency = 0.0;  // (J + J~) / 2
  ParameterSet<T> grads;     // d L_S / d theta
  std::vector<BatchNormUpdate<T>> bn_updates;
};

/// Batches images into (N, C, H, W) in scalar type T.
template <typename T>
Tensor<T> to_batch(const std::vector<Tensor<float>>& images) {
  if (images.empty()) return {};
  Shape shape = images.front().shape();
  const std::size_t each = images.front().size();
  shape.insert(shape.begin(), images.size());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != each) throw DimensionError("to_batch: images differ in shape");
    std::copy(images[i].data(), images[i].data() + each, out.data() + i * each);
  }
  return out;
}

/// Row concatenation of two batches with equal trailing shape (either may be empty).
template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.row_size() != b.row_size()) throw DimensionError("concat_rows: trailing shapes differ");
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(shape, std::move(data));
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t begin, std::size_t end) {
  Shape shape = t.shape();
  shape[0] = end - begin;
  const std::size_t rs = t.row_size();
  return Tensor<T>(shape, std::vector<T>(t.data() + begin * rs, t.data() + end * rs));
}

namespace detail {

template <typename T>
void accumulate_rows(Tensor<T>& dst, std::size_t row_offset, const Tensor<T>& src) {
  const std::size_t rs = dst.row_size();
  for (std::size_t i = 0; i < src.size(); ++i) dst[row_offset * rs + i] += src[i];
}

/// One direction of the server objective: online net on `online_*`, target net
/// (constant) on `target_*`. Returns CE + J and accumulates d/d theta into grads.
template <typename T>
std::pair<double, double> server_direction(const Architecture& arch, const ContrastiveState<T>& state,
                                           const Tensor<T>& online_l, const Tensor<T>& online_u,
                                           const Tensor<T>& target_l, const Tensor<T>& target_u,
                                           std::span<const int> labels, const ServerLossOptions& opt, Rng* rng,
                                           ParameterSet<T>& grads, std::vector<BatchNormUpdate<T>>& bn) {
  const std::size_t n = online_l.empty() ? 0 : online_l.dim(0);
  const std::size_t m = online_u.empty() ? 0 : online_u.dim(0);
  const bool with_unlabeled = opt.use_consistency && m > 0;
  const Tensor<T> input = with_unlabeled ? concat_rows(online_l, online_u) : online_l;
  const ForwardMode mode{true, rng};

  Tape<T> backbone_tape, head_tape;
  const Tensor<T> y = forward_backbone(arch, state.online, input, mode, &backbone_tape, &bn);
  const Tensor<T> probs = forward_head(arch, state.online, y, mode, &head_tape);

  auto ce = cross_entropy(slice_rows(probs, 0, n), labels);
  Tensor<T> grad_probs(probs.shape());
  accumulate_rows(grad_probs, 0, ce.grad);

  double j = 0.0;
  if (opt.use_consistency) {
    const std::size_t first = opt.consistency_on_labeled ? 0 : n;
    const std::size_t last = with_unlabeled ? n + m : n;
    if (last > first) {
      Tensor<T> tin;
      if (opt.consistency_on_labeled) tin = with_unlabeled ? concat_rows(target_l, target_u) : target_l;
      else tin = target_u;
      const Tensor<T> ty = forward_backbone(arch, state.target, tin, mode);
      const Tensor<T> tprobs = forward_head(arch, state.target, ty, mode);
      auto cons = consistency_loss(slice_rows(probs, first, last), tprobs, double(last - first));
      j = cons.value;
      accumulate_rows(grad_probs, first, cons.grad);
    }
  }

  const Tensor<T> grad_logits = softmax_backward(probs, grad_probs);
  const Tensor<T> grad_y = backward(arch.head, state.online, head_tape, grad_logits, grads);
  backward(arch.backbone, state.online, backbone_tape, grad_y, grads, false);
  return {ce.value, j};
}

}  // namespace detail

/// Symmetrized server objective L_S = (L + J + L~ + J~) / 2 for fixed view draws.
/// Gradients flow through the online parameters only.
template <typename T>
ServerLossResult<T> server_loss_from_views(const Architecture& arch, const ContrastiveState<T>& state,
                                           const ServerViews<T>& views, const ServerLossOptions& opt,
                                           Rng* dropout_rng = nullptr) {
  ServerLossResult<T> r;
  ParameterSet<T> g1 = state.online.zeros_like();
  ParameterSet<T> g2 = g1;
  const auto [ce1, j1] = detail::server_direction(arch, state, views.labeled1, views.unlabeled1, views.labeled2,
                                                  views.unlabeled2, views.labels, opt, dropout_rng, g1, r.bn_updates);
  const auto [ce2, j2] = detail::server_direction(arch, state, views.labeled2, views.unlabeled2, views.labeled1,
                                                  views.unlabeled1, views.labels, opt, dropout_rng, g2, r.bn_updates);
  const double a = ce1 + j1;
  const double b = ce2 + j2;
  r.total = (a + b) / 2.0;
  r.ce = (ce1 + ce2) / 2.0;
  r.consistency = (j1 + j2) / 2.0;
  auto it2 = g2.begin();
  for (auto it = g1.begin(); it != g1.end(); ++it, ++it2) {
    auto& x = it->second.value;
    const auto& y = it2->second.value;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] + y[i]) * T(0.5);
  }
  r.grads = std::move(g1);
  return r;
}

/// One server mini-batch before augmentation.
struct ServerBatch {
  std::vector<const LabeledExample*> labeled;
  std::vector<const UnlabeledExample*> unlabeled;
};

/// Draws both views per image (view1 then view2, labeled first) and normalizes.
template <typename T>
ServerViews<T> make_server_views(const ServerBatch& batch, const AugmentPolicy& policy, const Normalization& norm,
                                 Rng& rng) {
  std::vector<Tensor<float>> l1, l2, u1, u2;
  ServerViews<T> v;
  for (const auto* ex : batch.labeled) {
    auto pair = make_view_pair(ex->image, policy, rng);
    normalize_in_place(pair.view1, norm);
    normalize_in_place(pair.view2, norm);
    l1.push_back(std::move(pair.view1));
    l2.push_back(std::move(pair.view2));
    v.labels.push_back(ex->label);
  }
  for (const auto* ex : batch.unlabeled) {
    auto pair = make_view_pair(ex->image, policy, rng);
    normalize_in_place(pair.view1, norm);
    normalize_in_place(pair.view2, norm);
    u1.push_back(std::move(pair.view1));
    u2.push_back(std::move(pair.view2));
  }
  v.labeled1 = to_batch<T>(l1);
  v.labeled2 = to_batch<T>(l2);
  v.unlabeled1 = to_batch<T>(u1);
  v.unlabeled2 = to_batch<T>(u2);
  return v;
}

/// Augments a batch and evaluates the symmetrized server objective.
template <typename T>
ServerLossResult<T> server_loss(const Architecture& arch, const ContrastiveState<T>& state, const ServerBatch& batch,
                                const AugmentPolicy& policy, const Normalization& norm, Rng& rng,
                                const ServerLossOptions& opt = {}) {
  const auto views = make_server_views<T>(batch, policy, norm, rng);
  return server_loss_from_views(arch, state, views, opt, &rng);
}

struct ServerSessionConfig {
  std::size_t epochs = 1;              // R_L
  std::size_t batch_labeled = 10;      // BS_L
  std::size_t batch_unlabeled = 50;    // BS_U
  double tau = 0.999;                  // upper EMA decay
  AugmentPolicy policy;
  Normalization norm;
  ServerLossOptions loss;
  bool reset_target = true;            // xi <- theta at session start
};

struct ServerStepRecord {
  std::uint64_t step = 0;
  double ce = 0, consistency = 0, total = 0;
};

struct ServerSessionSummary {
  std::size_t steps = 0;
  double mean_ce = 0, mean_consistency = 0, mean_total = 0;
};

/// Runs R_L epochs of server steps: theta <- optimizer(theta, grad L_S), then
/// xi <- tau_t xi + (1 - tau_t) theta with tau_t from the ramp-up schedule.
template <typename T>
ServerSessionSummary server_train_session(const Architecture& arch, ContrastiveState<T>& state, Optimizer<T>& optimizer,
                                          std::span<const LabeledExample> labeled,
                                          std::span<const UnlabeledExample> unlabeled,
                                          const ServerSessionConfig& cfg, Rng& rng,
                                          const std::function<void(const ServerStepRecord&)>& on_step = {}) {
  if (labeled.empty()) throw std::invalid_argument("server session needs labeled data");
  if (cfg.reset_target) state.target = state.online;

  ServerSessionSummary summary;
  std::vector<std::size_t> unlabeled_order;
  std::size_t unlabeled_cursor = 0;
  auto next_unlabeled = [&]() {
    if (unlabeled_cursor == unlabeled_order.size()) {
      unlabeled_order = make_batches(unlabeled.size(), unlabeled.size(), rng()).front();
      unlabeled_cursor = 0;
    }
    return unlabeled_order[unlabeled_cursor++];
  };
  const bool use_unlabeled = cfg.loss.use_consistency && !unlabeled.empty() && cfg.batch_unlabeled > 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : fold_singleton_tail(make_batches(labeled.size(), cfg.batch_labeled, rng()))) {
      ServerBatch batch;
      for (std::size_t i : idx) batch.labeled.push_back(&labeled[i]);
      if (use_unlabeled)
        for (std::size_t i = 0; i < cfg.batch_unlabeled; ++i) batch.unlabeled.push_back(&unlabeled[next_unlabeled()]);

      auto result = server_loss(arch, state, batch, cfg.policy, cfg.norm, rng, cfg.loss);
      if (!std::isfinite(result.total)) {
        std::ostringstream msg;
        msg << "server loss is not finite at step " << state.step << " (ce=" << result.ce
            << ", consistency=" << result.consistency << ", total=" << result.total << ")";
        throw TrainingError(msg.str());
      }
      optimizer.step(state.online, result.grads);
      apply_batch_norm_updates(state.online, result.bn_updates);
      ema_update(state, ema_decay_schedule(state.step, cfg.tau));
      if (on_step) on_step({state.step, result.ce, result.consistency, result.total});
      ++state.step;
      ++summary.steps;
      summary.mean_ce += result.ce;
      summary.mean_consistency += result.consistency;
      summary.mean_total += result.total;
    }
  }
  if (summary.steps) {
    summary.mean_ce /= double(summary.steps);
    summary.mean_consistency /= double(summary.steps);
    summary.mean_total /= double(summary.steps);
  }
  return summary;
}

}  // namespace fedcon

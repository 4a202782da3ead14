#pragma once

#include <algorithm>
#include <charconv>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>

#include "pkfr/nn/optim.hpp"
#include "pkfr/train/losses.hpp"

namespace pkfr::train {

/// Shortest text that reads back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

struct IterationReport {
  int iteration = 0;
  double mean_task_reward = 0.0;
  double mean_amp_reward = 0.0;
  double ppo = 0.0;
  double value = 0.0;
  double pred = 0.0;
  double entropy = 0.0;
  double disc = 0.0;
  double success_rate = 0.0;
  bool diverged = false;
  std::string divergence;
};

inline constexpr const char* kMetricsHeader =
    "iter,mean_task_reward,mean_amp_reward,L_ppo,L_value,L_pred,entropy,L_disc,success_rate";

inline void write_metrics_row(std::ostream& os, const IterationReport& r) {
  os << r.iteration;
  for (double v : {r.mean_task_reward, r.mean_amp_reward, r.ppo, r.value, r.pred, r.entropy, r.disc, r.success_rate})
    os << ',' << format_number(v);
  os << '\n';
}

/// Owns the model, the discriminators, their optimizers and the env pool.
/// Every random stream derives from the config seed.
template <std::floating_point T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.sync();
    cfg_.validate();
    model_ = policy::ActorCritic<T>::init(cfg_.policy, cfg_.seed);
    nn::Rng disc_rng(cfg_.seed + 0x5151);
    discs_ = amp::DiscriminatorSet<T>::init(cfg_.disc, disc_rng);
    pool_ = std::make_unique<EnvPool>(cfg_);
    sample_rng_.seed(cfg_.seed + 0x2222);
    shuffle_rng_.seed(cfg_.seed + 0x3333);
    ref_rng_.seed(cfg_.seed + 0x4444);
    reset_optimizers();
  }

  /// Rebuilds optimizer state, e.g. after parameters were loaded.
  void reset_optimizers() {
    nn::AdamConfig ac;
    ac.lr = cfg_.weights.lr;
    ac.max_grad_norm = cfg_.max_grad_norm;
    const auto ps = model_.parameters();
    opt_ = nn::Adam<T>(ps.vars(), ac);
    nn::ParamList<T> dp;
    discs_.collect(dp);
    ac.lr = cfg_.disc_lr;
    disc_opt_ = nn::Adam<T>(dp.vars(), ac);
  }

  IterationReport iterate() {
    IterationReport rep;
    rep.iteration = iteration_;
    RolloutBuffer buf;
    try {
      buf = collect_rollout(*pool_, model_, discs_, cfg_.steps, sample_rng_);
    } catch (const NumericError& e) {
      diverge(rep, e.what());
      ++iteration_;
      return rep;
    }
    build_future_targets(buf);
    compute_gae(buf, cfg_.weights.gamma, cfg_.weights.lambda);
    const double n = static_cast<double>(buf.size());
    rep.mean_task_reward = std::accumulate(buf.task_reward.begin(), buf.task_reward.end(), 0.0) / n;
    rep.mean_amp_reward = std::accumulate(buf.amp_reward.begin(), buf.amp_reward.end(), 0.0) / n;
    rep.success_rate =
        buf.episodes_ended ? static_cast<double>(buf.successes) / static_cast<double>(buf.episodes_ended) : 0.0;
    update(buf, rep);
    ++iteration_;
    return rep;
  }

  /// Composite updates over E epochs of shuffled minibatches, each followed by
  /// one discriminator step on fresh reference and policy batches.
  void update(const RolloutBuffer& buf, IterationReport& rep) {
    std::vector<std::size_t> order(buf.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t mb = std::min(cfg_.weights.minibatch, buf.size());
    std::size_t count = 0;
    LossReport sum;
    double disc_sum = 0.0;
    for (int epoch = 0; epoch < cfg_.weights.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffle_rng_);
      for (std::size_t start = 0; start < order.size(); start += mb) {
        const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                            order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + mb)));
        const auto batch = make_minibatch<T>(buf, rows, cfg_.weights.beta);
        LossReport lr;
        double dl = 0.0;
        try {
          lr = policy_step(batch);
          dl = discriminator_step(batch);
        } catch (const NumericError& e) {
          return diverge(rep, e.what());
        }
        sum.ppo += lr.ppo;
        sum.value += lr.value;
        sum.pred += lr.pred;
        sum.entropy += lr.entropy;
        disc_sum += dl;
        ++count;
      }
    }
    const double c = static_cast<double>(count);
    rep.ppo = sum.ppo / c;
    rep.value = sum.value / c;
    rep.pred = sum.pred / c;
    rep.entropy = sum.entropy / c;
    rep.disc = disc_sum / c;
  }

  /// One composite-loss step on actor and critic. Throws NumericError when the
  /// loss or its gradient is not finite; parameters are left untouched then.
  LossReport policy_step(const MiniBatch<T>& batch) {
    LossReport lr;
    const CompositeOptions opt{cfg_.effective_c2(), cfg_.disc.detach_prediction};
    const auto loss = composite_loss(model_, discs_, batch, cfg_.weights, opt, &lr);
    if (!std::isfinite(lr.total)) throw NumericError("non-finite composite loss");
    if (!std::isfinite(opt_.step(num::backward(loss)))) throw NumericError("non-finite policy gradient");
    return lr;
  }

  /// One discriminator step on a fresh reference batch against the recorded
  /// policy sequences of `batch`. Returns the mean member loss.
  double discriminator_step(const MiniBatch<T>& batch) {
    const std::size_t rows = cfg_.disc.rows, a = cfg_.disc.amp_dim;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Array<T>> ref;
    ref.reserve(batch.size);
    for (std::size_t i = 0; i < batch.size; ++i) {
      ref.push_back(amp::assemble_reference_sequence<T>(cfg_.env.gait, u(ref_rng_), cfg_.env.robot.control_dt(), rows)
                        .reshaped({rows * a}));
    }
    const auto ref_batch = amp::stack_sequences(ref);
    const auto pol_batch = num::constant(batch.emitted);
    Var<T> loss;
    for (const auto& d : discs_.members) {
      const auto l = amp::discriminator_loss(d, ref_batch, pol_batch, cfg_.disc.w_gp);
      loss = loss.defined() ? num::add(loss, l) : l;
    }
    const double value = static_cast<double>(loss.value().item());
    if (!std::isfinite(value)) throw NumericError("non-finite discriminator loss");
    if (!std::isfinite(disc_opt_.step(num::backward(loss)))) throw NumericError("non-finite discriminator gradient");
    return value / static_cast<double>(discs_.members.size());
  }

  const TrainConfig& config() const { return cfg_; }
  const policy::ActorCritic<T>& model() const { return model_; }
  policy::ActorCritic<T>& mutable_model() { return model_; }
  const amp::DiscriminatorSet<T>& discriminators() const { return discs_; }
  int iteration() const { return iteration_; }
  void set_iteration(int it) { iteration_ = it; }

  /// Every learnable array: actor, critic, then discriminator members.
  nn::ParamList<T> all_parameters() const {
    auto ps = model_.parameters();
    discs_.collect(ps);
    return ps;
  }

 private:
  void diverge(IterationReport& rep, std::string why) {
    rep.diverged = true;
    rep.divergence = std::move(why);
  }

  TrainConfig cfg_;
  policy::ActorCritic<T> model_;
  amp::DiscriminatorSet<T> discs_;
  std::unique_ptr<EnvPool> pool_;
  nn::Adam<T> opt_, disc_opt_;
  std::mt19937_64 sample_rng_, shuffle_rng_, ref_rng_;
  int iteration_ = 0;
};

}  // namespace pkfr::train

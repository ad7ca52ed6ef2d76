#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <unordered_set>

#include "e3marl/env.hpp"
#include "e3marl/nn.hpp"

// MADDPG with a centralized critic and a decentralized actor shared across
// the homogeneous agents: replay buffer, target networks, deterministic
// policy gradient, isotropic exploration noise, and evaluation utilities.

namespace e3marl {

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Transition {
  PointCloudState state;
  std::vector<Observation> observations;
  JointAction action;
  double reward = 0.0;
  PointCloudState next_state;
  std::vector<Observation> next_observations;
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity 0");
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[write_] = std::move(t);
    }
    write_ = (write_ + 1) % capacity_;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return data_[i]; }

  // Uniform sample without replacement; empty when not enough data yet.
  std::optional<std::vector<const Transition*>> sample(std::size_t batch,
                                                       Rng& rng) const {
    if (batch > data_.size()) return std::nullopt;
    // Floyd's algorithm keeps the draw O(batch) regardless of buffer size.
    std::unordered_set<std::size_t> chosen;
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t j = data_.size() - batch; j < data_.size(); ++j) {
      std::size_t t = rng.below(j + 1);
      if (chosen.count(t)) t = j;
      chosen.insert(t);
      out.push_back(&data_[t]);
    }
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t write_ = 0;
  std::vector<Transition> data_;
};

// Isotropic Gaussian noise in the x-y plane followed by norm clipping, so
// the behavior policy transforms like the greedy one under rotations.
inline Vec3 exploration_noise(const Vec3& action, double scale, Rng& rng,
                              double max_action = 1.0) {
  if (scale < 0.0) throw std::invalid_argument("exploration_noise: scale < 0");
  if (scale == 0.0) return action;
  Vec3 noisy = action;
  noisy.x() += scale * rng.gaussian();
  noisy.y() += scale * rng.gaussian();
  return clip_norm(noisy, max_action);
}

// TD target for one transition; terminal steps do not bootstrap.
inline double td_target(double reward, double gamma, bool done,
                        double q_next) {
  return reward + gamma * (done ? 0.0 : 1.0) * q_next;
}

struct TrainingConfig {
  double gamma = 0.95;
  int episode_length = 25;
  std::size_t batch_size = 128;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  double momentum = 0.9;
  double tau = 0.01;
  double grad_clip = 1.0;
  int episodes = 2000;
  std::size_t buffer_capacity = 50000;
  std::size_t update_every = 4;     // environment steps per gradient update
  std::size_t warmup_steps = 500;   // steps before updates begin
  double noise_scale_start = 0.3;
  double noise_scale_end = 0.05;
  std::uint64_t seed = 1;
  int eval_interval = 100;  // episodes between evaluations/measurements
  int eval_episodes = 20;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) {
      throw std::invalid_argument("TrainingConfig: gamma must be in (0, 1)");
    }
    if (!(tau > 0.0 && tau <= 1.0)) {
      throw std::invalid_argument("TrainingConfig: tau must be in (0, 1]");
    }
    if (batch_size == 0 || episodes < 0 || episode_length <= 0) {
      throw std::invalid_argument("TrainingConfig: bad sizes");
    }
  }

  double noise_scale(int episode) const {
    const double half = std::max(1.0, episodes / 2.0);
    const double f = std::min(1.0, episode / half);
    return noise_scale_start + f * (noise_scale_end - noise_scale_start);
  }
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double mean_return = 0.0;
  std::vector<double> returns;
};

// A policy maps (env state, per-agent observations) to a joint action.
using Policy = std::function<JointAction(const PointCloudState&,
                                         const std::vector<Observation>&)>;

inline EvalResult evaluate_policy(std::size_t num_agents,
                                  const NavigationParams& params,
                                  const Policy& policy, int episodes,
                                  std::uint64_t seed) {
  NavigationEnv env(num_agents, params);
  Rng rng(seed);
  EvalResult res;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset(rng.next_u64());
    double ret = 0.0;
    bool done = false;
    while (!done) {
      std::vector<Observation> obs;
      obs.reserve(num_agents);
      for (std::size_t i = 0; i < num_agents; ++i) obs.push_back(env.observe(i));
      auto r = env.step(policy(env.state(), obs));
      ret += r.reward;
      done = r.done;
    }
    res.returns.push_back(ret);
    res.mean_return += ret;
  }
  res.mean_return /= std::max(1, episodes);
  return res;
}

inline Policy greedy_policy(const ActorNetwork& actor) {
  return [&actor](const PointCloudState&, const std::vector<Observation>& obs) {
    JointAction a;
    a.reserve(obs.size());
    for (const Observation& o : obs) a.push_back(actor.act(o));
    return a;
  };
}

// Uniform over the action disk; deterministic given the seed.
inline Policy random_policy(std::uint64_t seed, double max_action = 1.0) {
  auto rng = std::make_shared<Rng>(seed);
  return [rng, max_action](const PointCloudState&,
                           const std::vector<Observation>& obs) {
    JointAction a;
    for (std::size_t i = 0; i < obs.size(); ++i) {
      const double r = max_action * std::sqrt(rng->uniform());
      const double t = rng->uniform(0.0, 2.0 * M_PI);
      a.push_back(Vec3(r * std::cos(t), r * std::sin(t), 0.0));
    }
    return a;
  };
}

// Scripted baseline: every agent accelerates toward its nearest landmark.
inline Policy nearest_landmark_policy(double max_action = 1.0) {
  return [max_action](const PointCloudState& s,
                      const std::vector<Observation>&) {
    JointAction a;
    for (std::size_t i = 0; i < s.num_agents; ++i) {
      Vec3 best = Vec3::Zero();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t l = s.num_agents; l < s.size(); ++l) {
        const Vec3 d = s.entities[l].position - s.entities[i].position;
        if (d.norm() < best_d) {
          best_d = d.norm();
          best = d;
        }
      }
      a.push_back(clip_norm(best * 4.0, max_action));
    }
    return a;
  };
}

inline EvalResult evaluate_actor(const ActorNetwork& actor,
                                 std::size_t num_agents,
                                 const NavigationParams& params, int episodes,
                                 std::uint64_t seed) {
  return evaluate_policy(num_agents, params, greedy_policy(actor), episodes,
                         seed);
}

// Zero-shot transfer: run an actor trained elsewhere on a game with a
// different agent count. Fixed-input architectures are rejected.
inline EvalResult zero_shot_eval(const ActorNetwork& actor,
                                 std::size_t num_agents,
                                 const NavigationParams& params, int episodes,
                                 std::uint64_t seed) {
  if (!actor.supports_variable_entities()) {
    throw IncompatibleArchitecture(
        "zero-shot evaluation requires an architecture with variable-size "
        "inputs; the " + actor.architecture() + " actor has a fixed input");
  }
  return evaluate_actor(actor, num_agents, params, episodes, seed);
}

// ---------------------------------------------------------------------------
// MADDPG trainer

struct InvariancyValues {
  double actor_rot = 0.0;
  double actor_transl = 0.0;
  double critic_rot = 0.0;
  double critic_transl = 0.0;
};

// Invoked at evaluation episodes; wired up by the symmetry lab.
using MeasureHook =
    std::function<InvariancyValues(const ActorNetwork&, const CriticNetwork&)>;

struct EpisodeMetrics {
  int episode = 0;  // 1-based
  double episode_return = 0.0;
  double critic_loss = std::numeric_limits<double>::quiet_NaN();
  double actor_loss = std::numeric_limits<double>::quiet_NaN();
  bool measured = false;
  InvariancyValues invariancy;
  double eval_return = std::numeric_limits<double>::quiet_NaN();
};

class MaddpgTrainer {
 public:
  MaddpgTrainer(std::size_t num_agents, NavigationParams env_params,
                std::unique_ptr<CriticNetwork> critic,
                std::unique_ptr<ActorNetwork> actor, TrainingConfig cfg)
      : num_agents_(num_agents),
        env_(num_agents, env_params),
        critic_(std::move(critic)),
        actor_(std::move(actor)),
        cfg_(cfg),
        buffer_(cfg.buffer_capacity) {
    cfg_.validate();
    target_critic_ = critic_->clone();
    target_actor_ = actor_->clone();
  }

  ActorNetwork& actor() { return *actor_; }
  CriticNetwork& critic() { return *critic_; }
  const NavigationEnv& env() const { return env_; }

  void set_measure_hook(MeasureHook hook) { measure_hook_ = std::move(hook); }

  // Runs the full budget; the callback fires once per episode.
  void train(const std::function<void(const EpisodeMetrics&)>& on_episode) {
    Rng root(cfg_.seed);
    Rng env_rng = root.child(1);
    Rng noise_rng = root.child(2);
    Rng sample_rng = root.child(3);
    Rng eval_rng = root.child(4);

    ad::SgdMomentum critic_opt(cfg_.critic_lr, cfg_.momentum);
    ad::SgdMomentum actor_opt(cfg_.actor_lr, cfg_.momentum);

    std::size_t total_steps = 0;
    for (int ep = 0; ep < cfg_.episodes; ++ep) {
      env_.reset(env_rng.next_u64());
      const double sigma = cfg_.noise_scale(ep);
      EpisodeMetrics metrics;
      metrics.episode = ep + 1;
      double loss_c_sum = 0.0, loss_a_sum = 0.0;
      int updates = 0;
      bool done = false;
      while (!done) {
        Transition tr;
        tr.state = env_.state();
        for (std::size_t i = 0; i < num_agents_; ++i) {
          tr.observations.push_back(env_.observe(i));
        }
        JointAction action;
        for (std::size_t i = 0; i < num_agents_; ++i) {
          action.push_back(exploration_noise(actor_->act(tr.observations[i]),
                                             sigma, noise_rng));
        }
        auto r = env_.step(action);
        tr.action = std::move(action);
        tr.reward = r.reward;
        tr.done = r.done;
        tr.next_state = env_.state();
        for (std::size_t i = 0; i < num_agents_; ++i) {
          tr.next_observations.push_back(env_.observe(i));
        }
        metrics.episode_return += r.reward;
        done = r.done;
        buffer_.push(std::move(tr));
        ++total_steps;

        if (total_steps >= cfg_.warmup_steps &&
            total_steps % cfg_.update_every == 0) {
          auto losses = update(sample_rng, critic_opt, actor_opt);
          if (losses) {
            loss_c_sum += losses->first;
            loss_a_sum += losses->second;
            ++updates;
          }
        }
      }
      if (updates > 0) {
        metrics.critic_loss = loss_c_sum / updates;
        metrics.actor_loss = loss_a_sum / updates;
      }
      if (cfg_.eval_interval > 0 && (ep + 1) % cfg_.eval_interval == 0) {
        metrics.eval_return =
            evaluate_actor(*actor_, num_agents_, env_.params(),
                           cfg_.eval_episodes, eval_rng.next_u64())
                .mean_return;
        if (measure_hook_) {
          metrics.invariancy = measure_hook_(*actor_, *critic_);
          metrics.measured = true;
        }
      }
      if (on_episode) on_episode(metrics);
    }
  }

 private:
  // One gradient step on critic and actor plus the soft target update.
  std::optional<std::pair<double, double>> update(Rng& sample_rng,
                                                  ad::SgdMomentum& critic_opt,
                                                  ad::SgdMomentum& actor_opt) {
    auto batch = buffer_.sample(cfg_.batch_size, sample_rng);
    if (!batch) return std::nullopt;  // not enough data yet
    const std::size_t B = batch->size();

    std::vector<const PointCloudState*> states, next_states;
    std::vector<const JointAction*> actions;
    states.reserve(B);
    next_states.reserve(B);
    actions.reserve(B);
    for (const Transition* t : *batch) {
      states.push_back(&t->state);
      next_states.push_back(&t->next_state);
      actions.push_back(&t->action);
    }

    // TD targets from the target networks (no gradients recorded).
    std::vector<JointAction> next_actions(B, JointAction(num_agents_));
    {
      ad::Tape tape;
      for (std::size_t i = 0; i < num_agents_; ++i) {
        std::vector<const Observation*> op;
        op.reserve(B);
        for (const Transition* t : *batch) {
          op.push_back(&t->next_observations[i]);
        }
        ad::Var out = target_actor_->forward(tape, op, false);
        for (std::size_t b = 0; b < B; ++b) {
          next_actions[b][i] = Vec3(out.value().at(b, 0), out.value().at(b, 1),
                                    out.value().at(b, 2));
        }
      }
    }
    ad::Tensor y({B, 1});
    {
      ad::Tape tape;
      std::vector<const JointAction*> nap;
      nap.reserve(B);
      for (const auto& a : next_actions) nap.push_back(&a);
      ad::Var qn = target_critic_->forward(tape, next_states, nap, false);
      for (std::size_t b = 0; b < B; ++b) {
        const Transition* t = (*batch)[b];
        y.data[b] = td_target(t->reward, cfg_.gamma, t->done,
                              qn.value().data[b]);
      }
    }

    double critic_loss = 0.0;
    {
      ad::Tape tape;
      ad::Var q = critic_->forward(tape, states, actions, true);
      ad::Var d = ad::sub(q, tape.constant(std::move(y)));
      ad::Var loss = ad::mean(ad::multiply(d, d));
      critic_loss = loss.value().data[0];
      critic_->params().zero_grad();
      tape.backward(loss);
      ad::clip_grad_norm(critic_->params(), cfg_.grad_clip);
      critic_opt.step(critic_->params());
    }

    double actor_loss = 0.0;
    {
      ad::Tape tape;
      ad::Var total;
      for (std::size_t i = 0; i < num_agents_; ++i) {
        std::vector<const Observation*> op;
        op.reserve(B);
        for (const Transition* t : *batch) op.push_back(&t->observations[i]);
        ad::Var live = actor_->forward(tape, op, true);
        ad::Var q = critic_->forward_replaced(tape, states, actions, i, live,
                                              false);
        ad::Var part = ad::scale(ad::mean(q), -1.0);
        total = total.valid() ? ad::add(total, part) : part;
      }
      ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(num_agents_));
      actor_loss = loss.value().data[0];
      actor_->params().zero_grad();
      tape.backward(loss);
      ad::clip_grad_norm(actor_->params(), cfg_.grad_clip);
      actor_opt.step(actor_->params());
    }

    if (!std::isfinite(critic_loss) || !std::isfinite(actor_loss)) {
      throw TrainingDiverged("non-finite loss (critic=" +
                             std::to_string(critic_loss) + ", actor=" +
                             std::to_string(actor_loss) + ")");
    }

    target_critic_->params().soft_update_from(critic_->params(), cfg_.tau);
    target_actor_->params().soft_update_from(actor_->params(), cfg_.tau);
    return std::make_pair(critic_loss, actor_loss);
  }

  std::size_t num_agents_;
  NavigationEnv env_;
  std::unique_ptr<CriticNetwork> critic_;
  std::unique_ptr<ActorNetwork> actor_;
  std::unique_ptr<CriticNetwork> target_critic_;
  std::unique_ptr<ActorNetwork> target_actor_;
  TrainingConfig cfg_;
  ReplayBuffer buffer_;
  MeasureHook measure_hook_;
};

// Metric log writer; missing values are empty fields. One row per episode,
// invariancy fields filled at measurement episodes.
class MetricsWriter {
 public:
  static const char* header() {
    return "episode,return,critic_loss,actor_loss,rot_invariancy,"
           "transl_invariancy,critic_rot_invariancy,critic_transl_invariancy,"
           "eval_return";
  }

  static std::string row(const EpisodeMetrics& m) {
    std::string out = std::to_string(m.episode);
    auto field = [&out](double v, bool present) {
      out += ",";
      if (present) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out += buf;
      }
    };
    field(m.episode_return, true);
    field(m.critic_loss, std::isfinite(m.critic_loss));
    field(m.actor_loss, std::isfinite(m.actor_loss));
    field(m.invariancy.actor_rot, m.measured);
    field(m.invariancy.actor_transl, m.measured);
    field(m.invariancy.critic_rot, m.measured);
    field(m.invariancy.critic_transl, m.measured);
    field(m.eval_return, std::isfinite(m.eval_return));
    return out;
  }
};

}  // namespace e3marl

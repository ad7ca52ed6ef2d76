#pragma once

#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "e3marl/marl.hpp"
#include "e3marl/nn.hpp"
#include "e3marl/tabular.hpp"

// Quantitative symmetry verification: rotation/translation invariancy
// measures for actors and critics, exhaustive tabular verification of the
// optimal-value and invariant-policy properties, quotient-game construction
// with policy lifting, and the emergence-tracking hook for training runs.

namespace e3marl {

// Rotations for the measures act about the z axis (the games live in the
// z = 0 plane); angles are 30, 60, ..., 330 degrees.
inline std::vector<double> measure_angles() {
  std::vector<double> a;
  for (int k = 1; k <= 11; ++k) a.push_back(k * M_PI / 6.0);
  return a;
}

// Translations of +-l and +-l/2 along each planar axis (l = map size).
inline std::vector<Vec3> measure_translations(double map_size = 1.5) {
  const double l = map_size;
  return {Vec3(-l, 0, 0), Vec3(-l / 2, 0, 0), Vec3(l / 2, 0, 0), Vec3(l, 0, 0),
          Vec3(0, -l, 0), Vec3(0, -l / 2, 0), Vec3(0, l / 2, 0), Vec3(0, l, 0)};
}

struct StateActionSample {
  PointCloudState state;
  JointAction action;
};

namespace measure_detail {

inline double cosine(const Vec3& a, const Vec3& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

constexpr double kDegenerate = 1e-12;

}  // namespace measure_detail

struct ActorMeasureResult {
  double value = 0.0;
  std::size_t pairs = 0;
  std::size_t skipped = 0;  // zero-action pairs, excluded from the mean
};

// Mean cosine between the rotated action and the action on the rotated
// state; 1 is perfect equivariance. Zero-action pairs are skipped and
// counted (the cosine is undefined there).
inline ActorMeasureResult actor_rotation_invariancy_full(
    const ActorNetwork& actor, const std::vector<PointCloudState>& states,
    bool absolute_self_position = false) {
  if (states.empty()) {
    throw std::invalid_argument("actor_rotation_invariancy: no states");
  }
  ActorMeasureResult res;
  double acc = 0.0;
  for (const PointCloudState& s : states) {
    for (std::size_t i = 0; i < s.num_agents; ++i) {
      const Vec3 base =
          actor.act(nav_observe(s, i, absolute_self_position));
      for (double alpha : measure_angles()) {
        const GroupElement rot = rotation_z(alpha);
        const Vec3 a1 = rot.apply_vector(base);
        const Vec3 a2 = actor.act(
            nav_observe(apply_group(rot, s), i, absolute_self_position));
        if (a1.norm() < measure_detail::kDegenerate ||
            a2.norm() < measure_detail::kDegenerate) {
          ++res.skipped;
          continue;
        }
        acc += measure_detail::cosine(a1, a2);
        ++res.pairs;
      }
    }
  }
  if (res.pairs == 0) {
    throw std::runtime_error(
        "actor_rotation_invariancy: all pairs degenerate, measure undefined");
  }
  res.value = acc / static_cast<double>(res.pairs);
  return res;
}

inline ActorMeasureResult actor_translation_invariancy_full(
    const ActorNetwork& actor, const std::vector<PointCloudState>& states,
    double map_size = 1.5, bool absolute_self_position = false) {
  if (states.empty()) {
    throw std::invalid_argument("actor_translation_invariancy: no states");
  }
  ActorMeasureResult res;
  double acc = 0.0;
  for (const PointCloudState& s : states) {
    for (std::size_t i = 0; i < s.num_agents; ++i) {
      const Vec3 base =
          actor.act(nav_observe(s, i, absolute_self_position));
      for (const Vec3& t : measure_translations(map_size)) {
        // translations leave actions unchanged, so the reference is base
        const Vec3 a2 = actor.act(nav_observe(
            apply_group(translation(t), s), i, absolute_self_position));
        if (base.norm() < measure_detail::kDegenerate ||
            a2.norm() < measure_detail::kDegenerate) {
          ++res.skipped;
          continue;
        }
        acc += measure_detail::cosine(base, a2);
        ++res.pairs;
      }
    }
  }
  if (res.pairs == 0) {
    throw std::runtime_error(
        "actor_translation_invariancy: all pairs degenerate");
  }
  res.value = acc / static_cast<double>(res.pairs);
  return res;
}

inline double actor_rotation_invariancy(
    const ActorNetwork& actor, const std::vector<PointCloudState>& states) {
  return actor_rotation_invariancy_full(actor, states).value;
}

inline double actor_translation_invariancy(
    const ActorNetwork& actor, const std::vector<PointCloudState>& states,
    double map_size = 1.5) {
  return actor_translation_invariancy_full(actor, states, map_size).value;
}

// Negated mean absolute Q difference; 0 is perfect invariance.
inline double critic_rotation_invariancy(
    const CriticNetwork& critic,
    const std::vector<StateActionSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("critic_rotation_invariancy: no samples");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (const StateActionSample& sa : samples) {
    const double q = critic.value(sa.state, sa.action);
    for (double alpha : measure_angles()) {
      const GroupElement rot = rotation_z(alpha);
      acc += std::abs(q - critic.value(apply_group(rot, sa.state),
                                       apply_group(rot, sa.action)));
      ++count;
    }
  }
  return -acc / static_cast<double>(count);
}

inline double critic_translation_invariancy(
    const CriticNetwork& critic, const std::vector<StateActionSample>& samples,
    double map_size = 1.5) {
  if (samples.empty()) {
    throw std::invalid_argument("critic_translation_invariancy: no samples");
  }
  double acc = 0.0;
  std::size_t count = 0;
  for (const StateActionSample& sa : samples) {
    const double q = critic.value(sa.state, sa.action);
    for (const Vec3& t : measure_translations(map_size)) {
      acc += std::abs(
          q - critic.value(apply_group(translation(t), sa.state), sa.action));
      ++count;
    }
  }
  return -acc / static_cast<double>(count);
}

struct InvariancyReport {
  double actor_rotation = 0.0;
  double actor_translation = 0.0;
  double critic_rotation = 0.0;
  double critic_translation = 0.0;
  std::size_t states_used = 0;
  std::size_t skipped_pairs = 0;
};

// On-policy state/action sample: one uniformly chosen step per greedy
// episode, so `episodes` rollouts yield `episodes` samples.
inline std::vector<StateActionSample> sample_on_policy(
    const ActorNetwork& actor, std::size_t num_agents,
    const NavigationParams& params, int episodes, std::uint64_t seed) {
  NavigationEnv env(num_agents, params);
  Rng rng(seed);
  std::vector<StateActionSample> samples;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset(rng.next_u64());
    const int pick = static_cast<int>(
        rng.below(static_cast<std::uint64_t>(params.episode_length)));
    bool done = false;
    for (int t = 0; !done; ++t) {
      JointAction a;
      for (std::size_t i = 0; i < num_agents; ++i) {
        a.push_back(actor.act(env.observe(i)));
      }
      if (t == pick) samples.push_back({env.state(), a});
      done = env.step(a).done;
    }
  }
  return samples;
}

inline InvariancyReport measure_invariancy(
    const ActorNetwork& actor, const CriticNetwork& critic,
    const std::vector<StateActionSample>& samples, double map_size = 1.5) {
  InvariancyReport rep;
  std::vector<PointCloudState> states;
  states.reserve(samples.size());
  for (const auto& sa : samples) states.push_back(sa.state);
  ActorMeasureResult rot = actor_rotation_invariancy_full(actor, states);
  ActorMeasureResult tr = actor_translation_invariancy_full(actor, states,
                                                            map_size);
  rep.actor_rotation = rot.value;
  rep.actor_translation = tr.value;
  rep.skipped_pairs = rot.skipped + tr.skipped;
  rep.critic_rotation = critic_rotation_invariancy(critic, samples);
  rep.critic_translation = critic_translation_invariancy(critic, samples,
                                                         map_size);
  rep.states_used = samples.size();
  return rep;
}

// Measurement hook for training runs: fresh on-policy samples each call.
class EmergenceTracker {
 public:
  EmergenceTracker(std::size_t num_agents, NavigationParams params,
                   int episodes_per_measurement, std::uint64_t seed)
      : num_agents_(num_agents),
        params_(params),
        episodes_(episodes_per_measurement),
        rng_(seed) {}

  InvariancyValues operator()(const ActorNetwork& actor,
                              const CriticNetwork& critic) {
    auto samples = sample_on_policy(actor, num_agents_, params_, episodes_,
                                    rng_.next_u64());
    InvariancyReport rep = measure_invariancy(actor, critic, samples);
    return {rep.actor_rotation, rep.actor_translation, rep.critic_rotation,
            rep.critic_translation};
  }

 private:
  std::size_t num_agents_;
  NavigationParams params_;
  int episodes_;
  Rng rng_;
};

// ---------------------------------------------------------------------------
// Tabular verification

struct CheckGroup {
  std::string name;
  bool passed = false;
  std::size_t checks = 0;
  double max_error = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckGroup> groups;

  bool all_passed() const {
    for (const auto& g : groups) {
      if (!g.passed) return false;
    }
    return !groups.empty();
  }
};

namespace tabular_sym {

// Lexicographically smallest state in the orbit of s.
inline std::size_t canonical_state(const TabularGame& game, std::size_t s) {
  std::size_t best = s;
  for (std::size_t g = 1; g < TabularGame::kGroupOrder; ++g) {
    best = std::min(best, game.rotate_state(g, s));
  }
  return best;
}

// Smallest group element mapping s onto its canonical representative.
inline std::size_t canonicalizing_element(const TabularGame& game,
                                          std::size_t s) {
  const std::size_t target = canonical_state(game, s);
  for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
    if (game.rotate_state(g, s) == target) return g;
  }
  throw std::logic_error("canonicalizing element not found");
}

// Invariant greedy policy: at each canonical state pick the smallest-index
// maximizer of Q*, symmetrize it over the stabilizer orbit (a deterministic
// choice cannot be invariant at stabilizer-rich states), and pull the
// distribution back along the canonicalizing element.
inline TabularPolicy invariant_greedy_policy(const TabularGame& game,
                                             const std::vector<double>& q) {
  const std::size_t A = TabularGame::kJointActions;
  TabularPolicy pi;
  pi.num_states = game.num_states;
  pi.num_actions = A;
  pi.prob.assign(game.num_states * A, 0.0);
  for (std::size_t s = 0; s < game.num_states; ++s) {
    const std::size_t sbar = canonical_state(game, s);
    // smallest-index maximizer at the canonical state
    std::size_t abar = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < A; ++a) {
      const double v = q[sbar * A + a];
      if (v > best + 1e-12) {
        best = v;
        abar = a;
      }
    }
    // orbit of abar under the stabilizer of sbar
    std::vector<std::size_t> orbit;
    for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
      if (game.rotate_state(g, sbar) != sbar) continue;
      const std::size_t a = game.rotate_action(g, abar);
      if (std::find(orbit.begin(), orbit.end(), a) == orbit.end()) {
        orbit.push_back(a);
      }
    }
    const double p = 1.0 / static_cast<double>(orbit.size());
    const std::size_t gs = canonicalizing_element(game, s);
    // pi(a|s) = pibar(K_gs[a] | sbar)
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t mapped = game.rotate_action(gs, a);
      if (std::find(orbit.begin(), orbit.end(), mapped) != orbit.end()) {
        pi.prob[s * A + a] = p;
      }
    }
  }
  return pi;
}

inline double policy_invariance_error(const TabularGame& game,
                                      const TabularPolicy& pi) {
  double worst = 0.0;
  for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
    for (std::size_t s = 0; s < game.num_states; ++s) {
      for (std::size_t a = 0; a < TabularGame::kJointActions; ++a) {
        const double lhs = pi.p(s, a);
        const double rhs =
            pi.p(game.rotate_state(g, s), game.rotate_action(g, a));
        worst = std::max(worst, std::abs(lhs - rhs));
      }
    }
  }
  return worst;
}

}  // namespace tabular_sym

// Optimal-value invariance, existence of an invariant optimal policy, and
// value invariance of invariant policies, checked exhaustively.
inline VerificationReport verify_theorem1_tabular(const TabularGame& game,
                                                  double gamma = 0.9) {
  using namespace tabular_sym;
  VerificationReport report;
  const std::size_t A = TabularGame::kJointActions;

  TabularAuditResult audit = audit_symmetry(game);
  report.groups.push_back({"definition audit (P, r equivariance)", audit.ok,
                           audit.checks, audit.max_reward_error,
                           audit.first_failure});
  if (!audit.ok) return report;  // refuse to verify an asymmetric game

  ValueIterationResult vi = value_iteration(game, gamma, 1e-12);

  {  // property (i): Q* and V* are invariant
    CheckGroup grp{"optimal value invariance", true, 0, 0.0, ""};
    for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
      for (std::size_t s = 0; s < game.num_states; ++s) {
        grp.max_error = std::max(
            grp.max_error,
            std::abs(vi.v[s] - vi.v[game.rotate_state(g, s)]));
        ++grp.checks;
        for (std::size_t a = 0; a < A; ++a) {
          const double lhs = vi.q[s * A + a];
          const double rhs = vi.q[game.rotate_state(g, s) * A +
                                  game.rotate_action(g, a)];
          grp.max_error = std::max(grp.max_error, std::abs(lhs - rhs));
          ++grp.checks;
        }
      }
    }
    grp.passed = grp.max_error < 1e-10;
    report.groups.push_back(grp);
  }

  {  // property (ii): an invariant greedy policy achieves V*
    CheckGroup grp{"invariant optimal policy", true, 0, 0.0, ""};
    TabularPolicy pi = invariant_greedy_policy(game, vi.q);
    const double inv_err = policy_invariance_error(game, pi);
    std::vector<double> v_pi = policy_evaluation(game, pi, gamma, 1e-13);
    double opt_err = 0.0;
    for (std::size_t s = 0; s < game.num_states; ++s) {
      opt_err = std::max(opt_err, std::abs(v_pi[s] - vi.v[s]));
    }
    grp.checks = game.num_states * (A + 1) * TabularGame::kGroupOrder;
    grp.max_error = std::max(inv_err, opt_err);
    grp.passed = inv_err < 1e-12 && opt_err < 1e-10;
    grp.detail = "invariance " + std::to_string(inv_err) + ", optimality " +
                 std::to_string(opt_err);
    report.groups.push_back(grp);
  }

  {  // property (iii): invariant (non-optimal) policies have invariant values
    CheckGroup grp{"invariant policy value invariance", true, 0, 0.0, ""};
    TabularPolicy uniform =
        TabularPolicy::uniform(game.num_states, A);
    std::vector<double> v_u = policy_evaluation(game, uniform, gamma, 1e-13);
    for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
      for (std::size_t s = 0; s < game.num_states; ++s) {
        grp.max_error = std::max(
            grp.max_error, std::abs(v_u[s] - v_u[game.rotate_state(g, s)]));
        ++grp.checks;
      }
    }
    grp.passed = grp.max_error < 1e-10;
    report.groups.push_back(grp);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Quotient game and policy lifting

struct QuotientGame {
  std::vector<std::size_t> abstract_of;  // l(s): state -> abstract index
  std::vector<std::size_t> canonical_states;  // abstract index -> state
  std::vector<std::size_t> mapping_element;   // g_s per state
  std::vector<std::size_t> next;              // [abs * A + a]
  std::vector<double> reward;                 // [abs * A + a]
  std::size_t num_states = 0;

  std::size_t map_action(const TabularGame& game, std::size_t s,
                         std::size_t a) const {
    return game.rotate_action(mapping_element[s], a);
  }
};

inline QuotientGame build_quotient(const TabularGame& game) {
  using namespace tabular_sym;
  const std::size_t A = TabularGame::kJointActions;
  QuotientGame q;
  q.abstract_of.resize(game.num_states);
  q.mapping_element.resize(game.num_states);
  std::map<std::size_t, std::size_t> index_of_canonical;
  for (std::size_t s = 0; s < game.num_states; ++s) {
    const std::size_t c = canonical_state(game, s);
    q.mapping_element[s] = canonicalizing_element(game, s);
    auto it = index_of_canonical.find(c);
    if (it == index_of_canonical.end()) {
      it = index_of_canonical.emplace(c, q.canonical_states.size()).first;
      q.canonical_states.push_back(c);
    }
    q.abstract_of[s] = it->second;
  }
  q.num_states = q.canonical_states.size();
  q.next.resize(q.num_states * A);
  q.reward.resize(q.num_states * A);
  for (std::size_t k = 0; k < q.num_states; ++k) {
    const std::size_t s = q.canonical_states[k];
    for (std::size_t a = 0; a < A; ++a) {
      q.next[k * A + a] = q.abstract_of[game.next(s, a)];
      q.reward[k * A + a] = game.r(s, a);
    }
  }
  return q;
}

inline VerificationReport verify_homomorphism_lifting(const TabularGame& game,
                                                      double gamma = 0.9,
                                                      std::uint64_t seed = 1) {
  const std::size_t A = TabularGame::kJointActions;
  VerificationReport report;

  TabularAuditResult audit = audit_symmetry(game);
  report.groups.push_back({"definition audit (P, r equivariance)", audit.ok,
                           audit.checks, audit.max_reward_error,
                           audit.first_failure});
  if (!audit.ok) return report;

  QuotientGame quot = build_quotient(game);

  {  // structural diagnostics on the orbit decomposition
    CheckGroup grp{"orbit structure", true, 0, 0.0, ""};
    std::vector<std::size_t> orbit_size(quot.num_states, 0);
    for (std::size_t s = 0; s < game.num_states; ++s) {
      ++orbit_size[quot.abstract_of[s]];
    }
    std::size_t singletons = 0, fixed_states = 0;
    for (std::size_t sz : orbit_size) {
      if (TabularGame::kGroupOrder % sz != 0) grp.passed = false;
      if (sz == 1) ++singletons;
      ++grp.checks;
    }
    for (std::size_t s = 0; s < game.num_states; ++s) {
      bool fixed = true;
      for (std::size_t g = 1; g < TabularGame::kGroupOrder; ++g) {
        if (game.rotate_state(g, s) != s) fixed = false;
      }
      if (fixed) ++fixed_states;
    }
    if (quot.num_states > game.num_states) grp.passed = false;
    if (singletons != fixed_states) grp.passed = false;
    grp.detail = std::to_string(quot.num_states) + " orbits, " +
                 std::to_string(singletons) + " singletons";
    report.groups.push_back(grp);
  }

  {  // surjection conditions: reward, block transitions, observations
    CheckGroup grp{"homomorphism conditions", true, 0, 0.0, ""};
    for (std::size_t s = 0; s < game.num_states; ++s) {
      const std::size_t ls = quot.abstract_of[s];
      for (std::size_t a = 0; a < A; ++a) {
        const std::size_t ka = quot.map_action(game, s, a);
        grp.max_error = std::max(
            grp.max_error,
            std::abs(game.r(s, a) - quot.reward[ls * A + ka]));
        if (quot.abstract_of[game.next(s, a)] != quot.next[ls * A + ka]) {
          grp.passed = false;
          if (grp.detail.empty()) {
            grp.detail = "block transition mismatch at s=" +
                         std::to_string(s) + " a=" + std::to_string(a);
          }
        }
        grp.checks += 2;
      }
      // observations are the states themselves; h_s is the canonicalizing map
      if (game.rotate_state(quot.mapping_element[s], s) !=
          quot.canonical_states[quot.abstract_of[s]]) {
        grp.passed = false;
      }
      ++grp.checks;
    }
    grp.passed = grp.passed && grp.max_error == 0.0;
    report.groups.push_back(grp);
  }

  ValueIterationResult vi = value_iteration(game, gamma, 1e-12);
  ValueIterationResult vi_abs = value_iteration_generic(
      quot.num_states, A,
      [&](std::size_t s, std::size_t a) { return quot.next[s * A + a]; },
      [&](std::size_t s, std::size_t a) { return quot.reward[s * A + a]; },
      gamma, 1e-12);

  {  // optimal value equivalence
    CheckGroup grp{"optimal value equivalence", true, 0, 0.0, ""};
    for (std::size_t s = 0; s < game.num_states; ++s) {
      grp.max_error = std::max(
          grp.max_error, std::abs(vi.v[s] - vi_abs.v[quot.abstract_of[s]]));
      ++grp.checks;
      for (std::size_t a = 0; a < A; ++a) {
        const double lhs = vi.q[s * A + a];
        const double rhs =
            vi_abs.q[quot.abstract_of[s] * A + quot.map_action(game, s, a)];
        grp.max_error = std::max(grp.max_error, std::abs(lhs - rhs));
        ++grp.checks;
      }
    }
    grp.passed = grp.max_error < 1e-10;
    report.groups.push_back(grp);
  }

  {  // value equivalence under policy lifting (random and uniform policies)
    CheckGroup grp{"lifted policy value equivalence", true, 0, 0.0, ""};
    Rng rng(seed);
    for (int trial = 0; trial < 2; ++trial) {
      TabularPolicy abstract;
      abstract.num_states = quot.num_states;
      abstract.num_actions = A;
      abstract.prob.assign(quot.num_states * A, 0.0);
      for (std::size_t k = 0; k < quot.num_states; ++k) {
        double total = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
          const double w = trial == 0 ? rng.uniform(0.05, 1.0) : 1.0;
          abstract.prob[k * A + a] = w;
          total += w;
        }
        for (std::size_t a = 0; a < A; ++a) abstract.prob[k * A + a] /= total;
      }
      // lift: pi(a|s) = pibar(k_s(a) | l(s)); k_s is bijective here
      TabularPolicy lifted;
      lifted.num_states = game.num_states;
      lifted.num_actions = A;
      lifted.prob.assign(game.num_states * A, 0.0);
      for (std::size_t s = 0; s < game.num_states; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
          lifted.prob[s * A + a] =
              abstract.prob[quot.abstract_of[s] * A +
                            quot.map_action(game, s, a)];
        }
      }
      std::vector<double> v_lift = policy_evaluation(game, lifted, gamma, 1e-13);
      std::vector<double> v_abs = policy_evaluation_generic(
          quot.num_states, A,
          [&](std::size_t s, std::size_t a) { return quot.next[s * A + a]; },
          [&](std::size_t s, std::size_t a) { return quot.reward[s * A + a]; },
          abstract, gamma, 1e-13);
      for (std::size_t s = 0; s < game.num_states; ++s) {
        grp.max_error = std::max(
            grp.max_error, std::abs(v_lift[s] - v_abs[quot.abstract_of[s]]));
        ++grp.checks;
      }
    }
    grp.passed = grp.max_error < 1e-10;
    report.groups.push_back(grp);
  }
  return report;
}

inline std::string format_report(const VerificationReport& report) {
  std::string out;
  for (const auto& g : report.groups) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-42s %s  (%zu checks, max err %.3g)%s%s\n",
                  g.name.c_str(), g.passed ? "PASS" : "FAIL", g.checks,
                  g.max_error, g.detail.empty() ? "" : "  ",
                  g.detail.c_str());
    out += line;
  }
  return out;
}

}  // namespace e3marl

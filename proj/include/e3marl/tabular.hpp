#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

// Two agents on an n x n grid (n odd) with a goal set closed under the C4
// rotations about the grid center. Deterministic transitions with wall
// clamping; reward is the negated sum of both agents' distances to the
// nearest goal, evaluated after the move. All tables are explicit so the
// symmetry audit is exhaustive and exact.

namespace e3marl {

class TabularGame {
 public:
  static constexpr std::size_t kMoves = 5;  // stay, up, down, left, right
  static constexpr std::size_t kJointActions = kMoves * kMoves;
  static constexpr std::size_t kGroupOrder = 4;  // C4: rotations by 90 deg

  int n = 0;
  std::size_t num_cells = 0;
  std::size_t num_states = 0;  // ordered agent pairs: num_cells^2
  std::vector<std::size_t> goals;

  std::vector<std::size_t> next_state;  // [s * kJointActions + a]
  std::vector<double> reward;           // [s * kJointActions + a]

  std::array<std::vector<std::size_t>, kGroupOrder> state_map;
  std::array<std::array<std::size_t, kJointActions>, kGroupOrder> action_map;

  std::size_t next(std::size_t s, std::size_t a) const {
    return next_state[s * kJointActions + a];
  }
  double r(std::size_t s, std::size_t a) const {
    return reward[s * kJointActions + a];
  }
  std::size_t rotate_state(std::size_t g, std::size_t s) const {
    return state_map[g][s];
  }
  std::size_t rotate_action(std::size_t g, std::size_t a) const {
    return action_map[g][a];
  }
  // C4 composition/inverse by exponent arithmetic.
  static std::size_t compose(std::size_t g1, std::size_t g2) {
    return (g1 + g2) % kGroupOrder;
  }
  static std::size_t inverse(std::size_t g) { return (kGroupOrder - g) % kGroupOrder; }

  std::size_t state_of(std::size_t cell1, std::size_t cell2) const {
    return cell1 * num_cells + cell2;
  }
  std::size_t cell_of_agent1(std::size_t s) const { return s / num_cells; }
  std::size_t cell_of_agent2(std::size_t s) const { return s % num_cells; }
};

namespace tabular_detail {

inline std::size_t rotate_cell_ccw(int n, std::size_t cell) {
  const int c = (n - 1) / 2;
  const int x = static_cast<int>(cell) % n;
  const int y = static_cast<int>(cell) / n;
  // 90 degree counter-clockwise about the center: (dx, dy) -> (-dy, dx)
  const int rx = c - (y - c);
  const int ry = c + (x - c);
  return static_cast<std::size_t>(ry * n + rx);
}

inline std::size_t move_cell(int n, std::size_t cell, std::size_t move) {
  static constexpr int dx[TabularGame::kMoves] = {0, 0, 0, -1, 1};
  static constexpr int dy[TabularGame::kMoves] = {0, 1, -1, 0, 0};
  const int x = static_cast<int>(cell) % n + dx[move];
  const int y = static_cast<int>(cell) / n + dy[move];
  if (x < 0 || x >= n || y < 0 || y >= n) return cell;  // wall clamp
  return static_cast<std::size_t>(y * n + x);
}

// stay->stay, up->left, left->down, down->right, right->up (90 deg ccw)
inline std::size_t rotate_move_ccw(std::size_t move) {
  static constexpr std::size_t map[TabularGame::kMoves] = {0, 3, 4, 2, 1};
  return map[move];
}

inline double min_goal_distance(int n, std::size_t cell,
                                const std::vector<std::size_t>& goals) {
  double best = std::numeric_limits<double>::infinity();
  const int x = static_cast<int>(cell) % n;
  const int y = static_cast<int>(cell) / n;
  for (std::size_t gcell : goals) {
    const int gx = static_cast<int>(gcell) % n;
    const int gy = static_cast<int>(gcell) / n;
    const int dx = x - gx, dy = y - gy;
    best = std::min(best, std::sqrt(static_cast<double>(dx * dx + dy * dy)));
  }
  return best;
}

}  // namespace tabular_detail

inline TabularGame tabular_build(int n, std::vector<std::size_t> goal_cells) {
  using namespace tabular_detail;
  if (n < 1 || n % 2 == 0) {
    throw std::invalid_argument("tabular_build: n must be odd and positive");
  }
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  for (std::size_t gcell : goal_cells) {
    if (gcell >= cells) throw std::invalid_argument("tabular_build: goal out of range");
  }
  if (goal_cells.empty()) {
    throw std::invalid_argument("tabular_build: goal set is empty");
  }
  // The goal set must be closed under the 90 degree rotation.
  std::vector<char> is_goal(cells, 0);
  for (std::size_t g : goal_cells) is_goal[g] = 1;
  for (std::size_t g : goal_cells) {
    if (!is_goal[rotate_cell_ccw(n, g)]) {
      throw std::invalid_argument(
          "tabular_build: symmetry violation, goal set not closed under "
          "rotation (cell " + std::to_string(g) + ")");
    }
  }

  TabularGame game;
  game.n = n;
  game.num_cells = cells;
  game.num_states = cells * cells;
  game.goals = std::move(goal_cells);

  // Group tables.
  for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
    game.state_map[g].resize(game.num_states);
    for (std::size_t a = 0; a < TabularGame::kJointActions; ++a) {
      std::size_t m1 = a / TabularGame::kMoves;
      std::size_t m2 = a % TabularGame::kMoves;
      for (std::size_t k = 0; k < g; ++k) {
        m1 = rotate_move_ccw(m1);
        m2 = rotate_move_ccw(m2);
      }
      game.action_map[g][a] = m1 * TabularGame::kMoves + m2;
    }
    for (std::size_t s = 0; s < game.num_states; ++s) {
      std::size_t c1 = game.cell_of_agent1(s);
      std::size_t c2 = game.cell_of_agent2(s);
      for (std::size_t k = 0; k < g; ++k) {
        c1 = rotate_cell_ccw(n, c1);
        c2 = rotate_cell_ccw(n, c2);
      }
      game.state_map[g][s] = game.state_of(c1, c2);
    }
  }

  // Transition and reward tables; the reward is computed on the post-move
  // state so it depends on the action.
  game.next_state.resize(game.num_states * TabularGame::kJointActions);
  game.reward.resize(game.num_states * TabularGame::kJointActions);
  for (std::size_t s = 0; s < game.num_states; ++s) {
    const std::size_t c1 = game.cell_of_agent1(s);
    const std::size_t c2 = game.cell_of_agent2(s);
    for (std::size_t a = 0; a < TabularGame::kJointActions; ++a) {
      const std::size_t m1 = a / TabularGame::kMoves;
      const std::size_t m2 = a % TabularGame::kMoves;
      const std::size_t n1 = move_cell(n, c1, m1);
      const std::size_t n2 = move_cell(n, c2, m2);
      const std::size_t sp = game.state_of(n1, n2);
      game.next_state[s * TabularGame::kJointActions + a] = sp;
      game.reward[s * TabularGame::kJointActions + a] =
          -(min_goal_distance(n, n1, game.goals) +
            min_goal_distance(n, n2, game.goals)) /
          static_cast<double>(n);
    }
  }
  return game;
}

// Exhaustive Definition-level audit: group axioms plus exact equivariance of
// the transition and reward tables over all (s, a, g).
struct TabularAuditResult {
  bool ok = true;
  std::size_t checks = 0;
  double max_reward_error = 0.0;
  std::string first_failure;
};

inline TabularAuditResult audit_symmetry(const TabularGame& game) {
  TabularAuditResult res;
  auto fail = [&](const std::string& msg) {
    if (res.ok) res.first_failure = msg;
    res.ok = false;
  };

  // Group axioms on the action tables (bijectivity + C4 composition).
  for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
    std::vector<char> seen(game.num_states, 0);
    for (std::size_t s = 0; s < game.num_states; ++s) {
      seen[game.rotate_state(g, s)] = 1;
    }
    if (std::count(seen.begin(), seen.end(), 1) !=
        static_cast<long>(game.num_states)) {
      fail("state map for group element " + std::to_string(g) +
           " is not a bijection");
    }
  }
  for (std::size_t g1 = 0; g1 < TabularGame::kGroupOrder; ++g1) {
    for (std::size_t g2 = 0; g2 < TabularGame::kGroupOrder; ++g2) {
      const std::size_t g12 = TabularGame::compose(g1, g2);
      for (std::size_t s = 0; s < game.num_states; ++s) {
        ++res.checks;
        if (game.rotate_state(g1, game.rotate_state(g2, s)) !=
            game.rotate_state(g12, s)) {
          fail("state composition fails at s=" + std::to_string(s));
        }
      }
      for (std::size_t a = 0; a < TabularGame::kJointActions; ++a) {
        ++res.checks;
        if (game.rotate_action(g1, game.rotate_action(g2, a)) !=
            game.rotate_action(g12, a)) {
          fail("action composition fails at a=" + std::to_string(a));
        }
      }
    }
  }

  // Equivariance of P and invariance of r, exhaustively.
  for (std::size_t g = 0; g < TabularGame::kGroupOrder; ++g) {
    for (std::size_t s = 0; s < game.num_states; ++s) {
      for (std::size_t a = 0; a < TabularGame::kJointActions; ++a) {
        ++res.checks;
        const std::size_t lhs =
            game.next(game.rotate_state(g, s), game.rotate_action(g, a));
        const std::size_t rhs = game.rotate_state(g, game.next(s, a));
        if (lhs != rhs) {
          fail("transition equivariance fails at (s=" + std::to_string(s) +
               ", a=" + std::to_string(a) + ", g=" + std::to_string(g) + ")");
        }
        const double dr =
            std::abs(game.r(game.rotate_state(g, s), game.rotate_action(g, a)) -
                     game.r(s, a));
        res.max_reward_error = std::max(res.max_reward_error, dr);
        if (dr != 0.0) {
          fail("reward invariance fails at (s=" + std::to_string(s) +
               ", a=" + std::to_string(a) + ", g=" + std::to_string(g) + ")");
        }
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Exact solvers on explicit tables

struct ValueIterationResult {
  std::vector<double> q;  // [s * A + a]
  std::vector<double> v;  // [s]
  std::size_t iterations = 0;
  double residual = 0.0;
};

template <typename NextFn, typename RewardFn>
ValueIterationResult value_iteration_generic(std::size_t num_states,
                                             std::size_t num_actions,
                                             NextFn&& next, RewardFn&& reward,
                                             double gamma, double tol,
                                             std::size_t max_iters = 100000) {
  ValueIterationResult res;
  res.q.assign(num_states * num_actions, 0.0);
  res.v.assign(num_states, 0.0);
  std::vector<double> v_new(num_states, 0.0);
  for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
    double delta = 0.0;
    for (std::size_t s = 0; s < num_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < num_actions; ++a) {
        const double q = reward(s, a) + gamma * res.v[next(s, a)];
        res.q[s * num_actions + a] = q;
        best = std::max(best, q);
      }
      delta = std::max(delta, std::abs(best - v_new[s]));
      v_new[s] = best;
    }
    std::swap(res.v, v_new);
    res.residual = delta;
    if (delta < tol) break;
  }
  // Final Q refresh against the converged V.
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      res.q[s * num_actions + a] = reward(s, a) + gamma * res.v[next(s, a)];
    }
  }
  return res;
}

inline ValueIterationResult value_iteration(const TabularGame& game,
                                            double gamma = 0.9,
                                            double tol = 1e-12) {
  return value_iteration_generic(
      game.num_states, TabularGame::kJointActions,
      [&](std::size_t s, std::size_t a) { return game.next(s, a); },
      [&](std::size_t s, std::size_t a) { return game.r(s, a); }, gamma, tol);
}

// Dense stochastic policy: probabilities[s * A + a].
struct TabularPolicy {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> prob;

  double p(std::size_t s, std::size_t a) const {
    return prob[s * num_actions + a];
  }

  static TabularPolicy uniform(std::size_t states, std::size_t actions) {
    TabularPolicy pi;
    pi.num_states = states;
    pi.num_actions = actions;
    pi.prob.assign(states * actions, 1.0 / static_cast<double>(actions));
    return pi;
  }
};

template <typename NextFn, typename RewardFn>
std::vector<double> policy_evaluation_generic(std::size_t num_states,
                                              std::size_t num_actions,
                                              NextFn&& next, RewardFn&& reward,
                                              const TabularPolicy& pi,
                                              double gamma, double tol,
                                              std::size_t max_iters = 200000) {
  std::vector<double> v(num_states, 0.0), v_new(num_states, 0.0);
  for (std::size_t it = 0; it < max_iters; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < num_states; ++s) {
      double acc = 0.0;
      for (std::size_t a = 0; a < num_actions; ++a) {
        const double p = pi.p(s, a);
        if (p == 0.0) continue;
        acc += p * (reward(s, a) + gamma * v[next(s, a)]);
      }
      delta = std::max(delta, std::abs(acc - v_new[s]));
      v_new[s] = acc;
    }
    std::swap(v, v_new);
    if (delta < tol) break;
  }
  return v;
}

inline std::vector<double> policy_evaluation(const TabularGame& game,
                                             const TabularPolicy& pi,
                                             double gamma = 0.9,
                                             double tol = 1e-13) {
  return policy_evaluation_generic(
      game.num_states, TabularGame::kJointActions,
      [&](std::size_t s, std::size_t a) { return game.next(s, a); },
      [&](std::size_t s, std::size_t a) { return game.r(s, a); }, pi, gamma,
      tol);
}

}  // namespace e3marl

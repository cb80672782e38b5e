#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <limits>
#include <vector>

#include "amarl/model.hpp"
#include "amarl/pctl.hpp"

namespace amarl {

struct CheckOptions {
  int reward_agent = 0;     // reward stream used by R formulas
  double iter_tol = 1e-10;  // residual target for the iterative solver
  double vi_tol = 1e-12;    // sup-norm target for value iteration
  int direct_limit = 20000; // largest system handed to the direct solver
};

struct CheckResult {
  std::vector<double> values;
  std::vector<char> sat;
  double initial_value = 0.0;
  bool initial_sat = false;
};

inline bool cmp_holds(Cmp c, double value, double bound) {
  switch (c) {
    case Cmp::LT: return value < bound;
    case Cmp::LE: return value <= bound;
    case Cmp::GT: return value > bound;
    case Cmp::GE: return value >= bound;
    case Cmp::Query: return true;
  }
  return false;
}

namespace pctl_detail {

struct RowsView {
  const std::uint32_t* offsets = nullptr;
  const TransitionEntry* entries = nullptr;
  std::size_t n = 0;
  std::span<const TransitionEntry> row(std::size_t i) const {
    return {entries + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

inline RowsView view_of(const InducedChain& c) {
  return {c.offsets.data(), c.entries.data(), c.n_states()};
}

/// x = A x + b restricted to a subset; rows use subset indices.
struct LinearSystem {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> A;
  std::vector<double> b;
};

inline std::vector<double> solve_affine(const LinearSystem& sys,
                                        const CheckOptions& opts) {
  const std::size_t n = sys.b.size();
  std::vector<double> x(n, 0.0);
  if (n == 0) return x;

  // Pass 1: back-substitution when the dependency graph is acyclic. This is
  // exact for DAG chains, which the oracle tests rely on.
  {
    std::vector<std::uint32_t> outcount(n, 0);
    std::vector<std::vector<std::uint32_t>> rev(n);
    for (std::size_t u = 0; u < n; ++u) {
      outcount[u] = static_cast<std::uint32_t>(sys.A[u].size());
      for (const auto& [v, p] : sys.A[u]) rev[v].push_back(static_cast<std::uint32_t>(u));
    }
    std::vector<std::uint32_t> order;
    for (std::size_t u = 0; u < n; ++u)
      if (outcount[u] == 0) order.push_back(static_cast<std::uint32_t>(u));
    for (std::size_t head = 0; head < order.size(); ++head) {
      const std::uint32_t v = order[head];
      for (std::uint32_t u : rev[v])
        if (--outcount[u] == 0) order.push_back(u);
    }
    if (order.size() == n) {
      for (std::uint32_t u : order) {
        double acc = sys.b[u];
        for (const auto& [v, p] : sys.A[u]) acc += p * x[v];
        x[u] = acc;
      }
      return x;
    }
  }

  if (n <= static_cast<std::size_t>(opts.direct_limit)) {
    Eigen::SparseMatrix<double> m(static_cast<Eigen::Index>(n),
                                  static_cast<Eigen::Index>(n));
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(n * 2);
    for (std::size_t u = 0; u < n; ++u) {
      double diag = 1.0;
      for (const auto& [v, p] : sys.A[u]) {
        if (v == u)
          diag -= p;
        else
          trip.emplace_back(static_cast<int>(u), static_cast<int>(v), -p);
      }
      trip.emplace_back(static_cast<int>(u), static_cast<int>(u), diag);
    }
    m.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.analyzePattern(m);
    lu.factorize(m);
    if (lu.info() != Eigen::Success)
      throw CheckError("direct linear solve failed to factorize");
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    for (std::size_t u = 0; u < n; ++u) rhs[static_cast<Eigen::Index>(u)] = sys.b[u];
    Eigen::VectorXd sol = lu.solve(rhs);
    for (std::size_t u = 0; u < n; ++u) x[u] = sol[static_cast<Eigen::Index>(u)];
    return x;
  }

  // Gauss-Seidel sweeps for systems above the direct-solver cutoff.
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double delta = 0.0;
    for (std::size_t u = 0; u < n; ++u) {
      double acc = sys.b[u];
      double self = 0.0;
      for (const auto& [v, p] : sys.A[u]) {
        if (v == u)
          self = p;
        else
          acc += p * x[v];
      }
      const double nv = self < 1.0 ? acc / (1.0 - self) : acc;
      delta = std::max(delta, std::abs(nv - x[u]));
      x[u] = nv;
    }
    if (delta <= opts.iter_tol) return x;
  }
  throw CheckError("iterative linear solve did not reach the residual target");
}

struct UntilSets {
  std::vector<char> sure;   // probability exactly 1
  std::vector<char> never;  // probability exactly 0
};

/// Graph precomputation for (C U T) on a chain: probability-0 states are the
/// ones that cannot reach T through C; probability-1 states are the ones that
/// cannot fail, where failing means stepping outside C before T or entering a
/// subset of C \ T that is closed (no escape, so the path can linger forever).
inline UntilSets classify_until(const RowsView& rows, const std::vector<char>& C,
                                const std::vector<char>& T) {
  const std::size_t n = rows.n;
  std::vector<std::vector<std::uint32_t>> rev(n);
  for (std::size_t u = 0; u < n; ++u)
    for (const auto& e : rows.row(u)) rev[e.to].push_back(static_cast<std::uint32_t>(u));

  std::vector<char> reach(n, 0);
  std::vector<std::uint32_t> queue;
  for (std::size_t s = 0; s < n; ++s)
    if (T[s]) {
      reach[s] = 1;
      queue.push_back(static_cast<std::uint32_t>(s));
    }
  for (std::size_t head = 0; head < queue.size(); ++head)
    for (std::uint32_t u : rev[queue[head]])
      if (!reach[u] && C[u] && !T[u]) {
        reach[u] = 1;
        queue.push_back(u);
      }

  // Largest closed subset of C \ T.
  std::vector<char> closed(n, 0);
  for (std::size_t s = 0; s < n; ++s) closed[s] = C[s] && !T[s];
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t s = 0; s < n; ++s) {
      if (!closed[s]) continue;
      for (const auto& e : rows.row(s))
        if (!closed[e.to]) {
          closed[s] = 0;
          changed = true;
          break;
        }
    }
  }

  std::vector<char> fail(n, 0);
  queue.clear();
  for (std::size_t s = 0; s < n; ++s)
    if ((!C[s] && !T[s]) || closed[s]) {
      fail[s] = 1;
      queue.push_back(static_cast<std::uint32_t>(s));
    }
  for (std::size_t head = 0; head < queue.size(); ++head)
    for (std::uint32_t u : rev[queue[head]])
      if (!fail[u] && C[u] && !T[u]) {
        fail[u] = 1;
        queue.push_back(u);
      }

  UntilSets sets;
  sets.sure.assign(n, 0);
  sets.never.assign(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    sets.sure[s] = T[s] || (C[s] && !T[s] && !fail[s]);
    sets.never[s] = !reach[s];
  }
  return sets;
}

inline std::vector<double> until_values(const RowsView& rows, const std::vector<char>& C,
                                        const std::vector<char>& T,
                                        const CheckOptions& opts) {
  const std::size_t n = rows.n;
  const UntilSets sets = classify_until(rows, C, T);
  std::vector<double> values(n, 0.0);
  std::vector<std::int64_t> idx(n, -1);
  std::vector<std::uint32_t> maybe;
  for (std::size_t s = 0; s < n; ++s) {
    if (sets.sure[s]) values[s] = 1.0;
    if (!sets.sure[s] && !sets.never[s]) {
      idx[s] = static_cast<std::int64_t>(maybe.size());
      maybe.push_back(static_cast<std::uint32_t>(s));
    }
  }
  LinearSystem sys;
  sys.A.resize(maybe.size());
  sys.b.assign(maybe.size(), 0.0);
  for (std::size_t i = 0; i < maybe.size(); ++i) {
    for (const auto& e : rows.row(maybe[i])) {
      if (sets.sure[e.to])
        sys.b[i] += e.p;
      else if (idx[e.to] >= 0)
        sys.A[i].push_back({static_cast<std::uint32_t>(idx[e.to]), e.p});
    }
  }
  const std::vector<double> sol = solve_affine(sys, opts);
  for (std::size_t i = 0; i < maybe.size(); ++i) values[maybe[i]] = sol[i];
  return values;
}

}  // namespace pctl_detail

namespace pctl_detail {

/// Formula evaluation over a chain.
class ChainChecker {
 public:
  ChainChecker(const InducedChain& c, const CheckOptions& opts)
      : c_(c), opts_(opts), rows_(view_of(c)) {}

  std::vector<char> sat(const Formula& f, bool root = false) {
    switch (f.kind) {
      case FKind::True: return std::vector<char>(c_.n_states(), 1);
      case FKind::False: return std::vector<char>(c_.n_states(), 0);
      case FKind::Atom: {
        AtomId a;
        if (!c_.atoms->find(f.atom, a))
          throw CheckError("formula references unknown atom " + f.atom);
        std::vector<char> out(c_.n_states(), 0);
        for (std::size_t s = 0; s < c_.n_states(); ++s)
          out[s] = label_contains(c_.labels[s], a);
        return out;
      }
      case FKind::And: {
        auto l = sat(*f.lhs), r = sat(*f.rhs);
        for (std::size_t s = 0; s < l.size(); ++s) l[s] = l[s] && r[s];
        return l;
      }
      case FKind::Not: {
        auto l = sat(*f.lhs);
        for (auto& v : l) v = !v;
        return l;
      }
      case FKind::PBound:
      case FKind::RBound: {
        if (f.cmp == Cmp::Query && !root)
          throw CheckError("'=?' queries cannot be nested");
        const std::vector<double> vals =
            f.kind == FKind::PBound ? prob_values(f) : reward_values(f);
        std::vector<char> out(vals.size(), 0);
        for (std::size_t s = 0; s < vals.size(); ++s)
          out[s] = cmp_holds(f.cmp, vals[s], f.bound);
        return out;
      }
    }
    throw CheckError("malformed formula");
  }

  std::vector<double> prob_values(const Formula& f) {
    const std::size_t n = c_.n_states();
    switch (f.path) {
      case PathKind::Next: {
        const auto T = sat(*f.p1);
        std::vector<double> out(n, 0.0);
        for (std::size_t s = 0; s < n; ++s)
          for (const auto& e : rows_.row(s))
            if (T[e.to]) out[s] += e.p;
        return out;
      }
      case PathKind::Until: {
        const auto C = sat(*f.p1);
        const auto T = sat(*f.p2);
        return until_values(rows_, C, T, opts_);
      }
      case PathKind::BoundedUntil: {
        const auto C = sat(*f.p1);
        const auto T = sat(*f.p2);
        std::vector<double> x(n, 0.0);
        for (std::size_t s = 0; s < n; ++s) x[s] = T[s] ? 1.0 : 0.0;
        for (int k = 0; k < f.step_bound; ++k) {
          std::vector<double> nx(n, 0.0);
          for (std::size_t s = 0; s < n; ++s) {
            if (T[s]) {
              nx[s] = 1.0;
            } else if (C[s]) {
              double acc = 0.0;
              for (const auto& e : rows_.row(s)) acc += e.p * x[e.to];
              nx[s] = acc;
            }
          }
          x.swap(nx);
        }
        return x;
      }
    }
    throw CheckError("malformed path formula");
  }

  std::vector<double> reward_values(const Formula& f) {
    const std::size_t n = c_.n_states();
    std::vector<double> step(n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
      const auto r = rows_.row(s);
      for (std::uint32_t i = 0; i < r.size(); ++i)
        step[s] += r[i].p * c_.reward_of(opts_.reward_agent, c_.offsets[s] + i);
    }
    switch (f.rpath) {
      case RPathKind::Instant: {
        std::vector<double> x = step;
        for (int k = 0; k < f.step_bound; ++k) {
          std::vector<double> nx(n, 0.0);
          for (std::size_t s = 0; s < n; ++s)
            for (const auto& e : rows_.row(s)) nx[s] += e.p * x[e.to];
          x.swap(nx);
        }
        return x;
      }
      case RPathKind::Cumulative: {
        std::vector<double> x(n, 0.0);
        for (int k = 0; k < f.step_bound; ++k) {
          std::vector<double> nx = step;
          for (std::size_t s = 0; s < n; ++s)
            for (const auto& e : rows_.row(s)) nx[s] += e.p * x[e.to];
          x.swap(nx);
        }
        return x;
      }
      case RPathKind::Reach: {
        const auto T = sat(*f.p1);
        const std::vector<char> C(n, 1);
        const UntilSets sets = classify_until(rows_, C, T);
        std::vector<double> values(n, std::numeric_limits<double>::infinity());
        std::vector<std::int64_t> idx(n, -1);
        std::vector<std::uint32_t> live;
        for (std::size_t s = 0; s < n; ++s) {
          if (T[s]) {
            values[s] = 0.0;
          } else if (sets.sure[s]) {
            idx[s] = static_cast<std::int64_t>(live.size());
            live.push_back(static_cast<std::uint32_t>(s));
          }
        }
        LinearSystem sys;
        sys.A.resize(live.size());
        sys.b.assign(live.size(), 0.0);
        for (std::size_t i = 0; i < live.size(); ++i) {
          sys.b[i] = step[live[i]];
          for (const auto& e : rows_.row(live[i]))
            if (idx[e.to] >= 0)
              sys.A[i].push_back({static_cast<std::uint32_t>(idx[e.to]), e.p});
        }
        const std::vector<double> sol = solve_affine(sys, opts_);
        for (std::size_t i = 0; i < live.size(); ++i) values[live[i]] = sol[i];
        return values;
      }
    }
    throw CheckError("malformed reward formula");
  }

 private:
  const InducedChain& c_;
  CheckOptions opts_;
  RowsView rows_;
};

}  // namespace pctl_detail

/// PCTL model checking of a state formula over an induced chain. Expected
/// reachability rewards report infinity on states that miss the target with
/// positive probability.
inline CheckResult check_chain(const InducedChain& c, const Formula& f,
                               const CheckOptions& opts = {}) {
  pctl_detail::ChainChecker checker(c, opts);
  CheckResult res;
  if (f.kind == FKind::PBound || f.kind == FKind::RBound) {
    res.values = f.kind == FKind::PBound ? checker.prob_values(f)
                                         : checker.reward_values(f);
    res.sat.assign(res.values.size(), 0);
    for (std::size_t s = 0; s < res.values.size(); ++s)
      res.sat[s] = cmp_holds(f.cmp, res.values[s], f.bound);
  } else {
    res.sat = checker.sat(f, true);
    res.values.assign(res.sat.size(), 0.0);
    for (std::size_t s = 0; s < res.sat.size(); ++s)
      res.values[s] = res.sat[s] ? 1.0 : 0.0;
  }
  res.initial_value = res.values.at(c.initial);
  res.initial_sat = res.sat.at(c.initial);
  return res;
}

enum class Extremal { Min, Max };

namespace pctl_detail {

inline std::vector<char> propositional_sat(const MarkovGame& g, const Formula& f) {
  switch (f.kind) {
    case FKind::True: return std::vector<char>(g.n_states(), 1);
    case FKind::False: return std::vector<char>(g.n_states(), 0);
    case FKind::Atom: {
      AtomId a;
      if (!g.atoms().find(f.atom, a))
        throw CheckError("formula references unknown atom " + f.atom);
      std::vector<char> out(g.n_states(), 0);
      for (StateId s = 0; s < g.n_states(); ++s)
        out[s] = label_contains(g.labels(s), a);
      return out;
    }
    case FKind::And: {
      auto l = propositional_sat(g, *f.lhs), r = propositional_sat(g, *f.rhs);
      for (std::size_t s = 0; s < l.size(); ++s) l[s] = l[s] && r[s];
      return l;
    }
    case FKind::Not: {
      auto l = propositional_sat(g, *f.lhs);
      for (auto& v : l) v = !v;
      return l;
    }
    default:
      throw CheckError("extremal queries need propositional path operands");
  }
}

/// Exact evaluation of (C U T) under a fixed memoryless joint policy.
inline std::vector<double> policy_until_values(const MarkovGame& g,
                                               const std::vector<JointActionId>& policy,
                                               const std::vector<char>& C,
                                               const std::vector<char>& T,
                                               const CheckOptions& opts) {
  std::vector<std::uint32_t> offsets(g.n_states() + 1, 0);
  std::vector<TransitionEntry> entries;
  for (StateId s = 0; s < g.n_states(); ++s) {
    const Row* r = g.find_row(s, policy[s]);
    for (const auto& e : g.entries(*r)) entries.push_back(e);
    offsets[s + 1] = static_cast<std::uint32_t>(entries.size());
  }
  RowsView view{offsets.data(), entries.data(), g.n_states()};
  return until_values(view, C, T, opts);
}

}  // namespace pctl_detail

/// Extremal probability of a weak path formula (an until, with F as sugar)
/// over deterministic memoryless joint policies: value iteration warm start,
/// then policy iteration with exact per-policy solves. `f` must be a P node.
inline std::vector<double> extremal_prob(const MarkovGame& g, const Formula& f,
                                         Extremal dir, const CheckOptions& opts = {}) {
  if (f.kind != FKind::PBound)
    throw CheckError("extremal_prob expects a P-formula");
  if (f.path != PathKind::Until)
    throw CheckError("extremal_prob is defined for the weak fragment only");
  const auto C = pctl_detail::propositional_sat(g, *f.p1);
  const auto T = pctl_detail::propositional_sat(g, *f.p2);
  const std::size_t n = g.n_states();
  for (StateId s = 0; s < n; ++s)
    if (g.rows(s).empty())
      throw CheckError("state " + g.state_name(s) + " has no available joint action");

  const bool maximize = dir == Extremal::Max;
  std::vector<double> x(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) x[s] = T[s] ? 1.0 : 0.0;
  for (int it = 0; it < 500000; ++it) {
    double delta = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      if (T[s] || !C[s]) continue;
      double best = maximize ? 0.0 : std::numeric_limits<double>::infinity();
      for (const Row& r : g.rows(static_cast<StateId>(s))) {
        double q = 0.0;
        for (const auto& e : g.entries(r)) q += e.p * x[e.to];
        best = maximize ? std::max(best, q) : std::min(best, q);
      }
      delta = std::max(delta, std::abs(best - x[s]));
      x[s] = best;
    }
    if (delta <= opts.vi_tol) break;
  }

  // Greedy extraction, then Howard iteration with exact chain solves.
  std::vector<JointActionId> policy(n, 0);
  auto greedy_from = [&](const std::vector<double>& v) {
    bool changed = false;
    for (std::size_t s = 0; s < n; ++s) {
      const auto rows = g.rows(static_cast<StateId>(s));
      double best = 0.0;
      JointActionId besta = rows[0].action;
      bool first = true;
      for (const Row& r : rows) {
        double q = 0.0;
        for (const auto& e : g.entries(r)) q += e.p * v[e.to];
        const bool better = first || (maximize ? q > best + 1e-11 : q < best - 1e-11);
        if (better) {
          best = q;
          besta = r.action;
          first = false;
        }
      }
      if (policy[s] != besta) {
        policy[s] = besta;
        changed = true;
      }
    }
    return changed;
  };
  greedy_from(x);
  std::vector<double> v;
  for (int round = 0; round < 200; ++round) {
    v = pctl_detail::policy_until_values(g, policy, C, T, opts);
    if (!greedy_from(v)) break;
  }
  return v;
}

}  // namespace amarl

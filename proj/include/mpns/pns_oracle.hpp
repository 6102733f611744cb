// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file pns_oracle.hpp
/// Exact probability of necessity and sufficiency on finite structural
/// causal models, by enumerating every joint assignment of the exogenous
/// noise variables.
///
/// Model: noise U = (U_1..U_k) independent with finite supports; the cause Z
/// is drawn from P(Z | U) (confounded when that depends on U); the outcome is
/// a deterministic Y = f(Z, U). Intervening do(Z = z) replaces the cause
/// draw and keeps U, so both counterfactual arms share one noise assignment.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mpns/errors.hpp"

namespace mpns {

struct NoiseVar {
  std::string name;
  std::vector<double> probs;  ///< P(U = v) for v = 0..probs.size()-1
};

struct ScmSpec {
  std::vector<NoiseVar> noise;
  int cause_card = 2;
  int outcome_card = 2;
  /// Either cause_card entries (P(Z) independent of noise) or
  /// joint_size() * cause_card entries laid out [joint][z].
  std::vector<double> cause_table;
  /// outcome_table[z * joint_size() + j] = f(z, u(j)).
  std::vector<int> outcome_table;

  static constexpr std::size_t kMaxJoint = 1'000'000;
  static constexpr double kTol = 1e-12;

  std::size_t joint_size() const {
    std::size_t n = 1;
    for (const auto& v : noise) n *= v.probs.size();
    return n;
  }

  bool confounded() const { return cause_table.size() != static_cast<std::size_t>(cause_card); }

  /// Noise values for joint index j; the first variable is most significant.
  std::vector<int> decode(std::size_t j) const {
    std::vector<int> u(noise.size());
    for (std::size_t k = noise.size(); k-- > 0;) {
      const std::size_t card = noise[k].probs.size();
      u[k] = static_cast<int>(j % card);
      j /= card;
    }
    return u;
  }

  std::size_t encode(std::span<const int> u) const {
    std::size_t j = 0;
    for (std::size_t k = 0; k < noise.size(); ++k) j = j * noise[k].probs.size() + static_cast<std::size_t>(u[k]);
    return j;
  }

  double noise_prob(std::size_t j) const {
    double p = 1.0;
    for (std::size_t k = noise.size(); k-- > 0;) {
      const std::size_t card = noise[k].probs.size();
      p *= noise[k].probs[j % card];
      j /= card;
    }
    return p;
  }

  double cause_prob(int z, std::size_t j) const {
    const auto zi = static_cast<std::size_t>(z);
    return confounded() ? cause_table[j * static_cast<std::size_t>(cause_card) + zi] : cause_table[zi];
  }

  int outcome(int z, std::size_t j) const { return outcome_table[static_cast<std::size_t>(z) * joint_size() + j]; }

  void validate() const {
    if (cause_card < 1) throw ValidationError("ScmSpec: cause support is empty");
    if (outcome_card < 1) throw ValidationError("ScmSpec: outcome support is empty");
    std::size_t joint = 1;
    for (const auto& v : noise) {
      if (v.probs.empty()) throw ValidationError("ScmSpec: noise variable '" + v.name + "' has empty support");
      check_table(v.probs, "noise variable '" + v.name + "'");
      joint *= v.probs.size();
      if (joint > kMaxJoint) throw ValidationError("ScmSpec: more than 10^6 joint noise assignments");
    }
    const auto K = static_cast<std::size_t>(cause_card);
    if (cause_table.size() == K) {
      check_table(cause_table, "cause table");
    } else if (cause_table.size() == joint * K) {
      for (std::size_t j = 0; j < joint; ++j) {
        check_table(std::span<const double>(cause_table).subspan(j * K, K), "cause table row " + std::to_string(j));
      }
    } else {
      throw ValidationError("ScmSpec: cause table has " + std::to_string(cause_table.size()) + " entries, expected " +
                            std::to_string(K) + " or " + std::to_string(joint * K));
    }
    if (outcome_table.size() != joint * K) {
      throw ValidationError("ScmSpec: outcome table is not total over the product domain");
    }
    for (int y : outcome_table) {
      if (y < 0 || y >= outcome_card) throw ValidationError("ScmSpec: outcome value " + std::to_string(y) + " outside support");
    }
  }

  /// Tabulates a model from callables. `cause` maps a noise assignment to
  /// P(Z = .); pass a constant function for an unconfounded cause.
  static ScmSpec tabulate(std::vector<NoiseVar> noise, int cause_card, int outcome_card,
                          const std::function<std::vector<double>(std::span<const int>)>& cause,
                          const std::function<int(int, std::span<const int>)>& outcome, bool cause_depends_on_noise) {
    ScmSpec m;
    m.noise = std::move(noise);
    m.cause_card = cause_card;
    m.outcome_card = outcome_card;
    const std::size_t joint = m.joint_size();
    if (joint > kMaxJoint) throw ValidationError("ScmSpec: more than 10^6 joint noise assignments");
    if (cause_depends_on_noise) {
      for (std::size_t j = 0; j < joint; ++j) {
        const auto row = cause(m.decode(j));
        m.cause_table.insert(m.cause_table.end(), row.begin(), row.end());
      }
    } else {
      m.cause_table = cause(m.decode(0));
    }
    m.outcome_table.resize(static_cast<std::size_t>(cause_card) * joint);
    for (int z = 0; z < cause_card; ++z) {
      for (std::size_t j = 0; j < joint; ++j) m.outcome_table[static_cast<std::size_t>(z) * joint + j] = outcome(z, m.decode(j));
    }
    m.validate();
    return m;
  }

 private:
  static void check_table(std::span<const double> probs, const std::string& what) {
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("ScmSpec: " + what + " has an entry outside [0, 1]");
      total += p;
    }
    if (std::abs(total - 1.0) > kTol) throw ValidationError("ScmSpec: " + what + " sums to " + std::to_string(total));
  }
};

namespace detail {

inline void check_cause(const ScmSpec& m, int z, const char* op) {
  if (z < 0 || z >= m.cause_card) throw ValidationError(std::string(op) + ": cause value " + std::to_string(z) + " not in support");
}

inline void check_outcome(const ScmSpec& m, int y, const char* op) {
  if (y < 0 || y >= m.outcome_card) throw ValidationError(std::string(op) + ": outcome value " + std::to_string(y) + " not in support");
}

inline void check_pair(const ScmSpec& m, int z, int zbar, int y, const char* op) {
  check_cause(m, z, op);
  check_cause(m, zbar, op);
  check_outcome(m, y, op);
  if (z == zbar) throw ValidationError(std::string(op) + ": z and zbar must differ");
}

inline double clamp_prob(double p) { return std::min(1.0, std::max(0.0, p)); }

}  // namespace detail

/// P(Y_do(Z=z) = y).
inline double interventional_prob(const ScmSpec& m, int z, int y) {
  detail::check_cause(m, z, "interventional_prob");
  detail::check_outcome(m, y, "interventional_prob");
  double p = 0.0;
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) {
    if (m.outcome(z, j) == y) p += m.noise_prob(j);
  }
  return detail::clamp_prob(p);
}

/// Observational P(Z = z).
inline double cause_marginal(const ScmSpec& m, int z) {
  detail::check_cause(m, z, "cause_marginal");
  double p = 0.0;
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) p += m.noise_prob(j) * m.cause_prob(z, j);
  return detail::clamp_prob(p);
}

/// Observational P(Z = z, Y = y).
inline double joint_prob(const ScmSpec& m, int z, int y) {
  detail::check_cause(m, z, "joint_prob");
  detail::check_outcome(m, y, "joint_prob");
  double p = 0.0;
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) {
    if (m.outcome(z, j) == y) p += m.noise_prob(j) * m.cause_prob(z, j);
  }
  return detail::clamp_prob(p);
}

/// Observational P(Y = y | Z = z); throws when P(Z = z) is zero.
inline double conditional_prob(const ScmSpec& m, int y, int z) {
  const double pz = cause_marginal(m, z);
  if (pz <= 0.0) throw ValidationError("conditional_prob: P(Z=" + std::to_string(z) + ") is zero");
  return detail::clamp_prob(joint_prob(m, z, y) / pz);
}

/// P(Y_do(z) = y, Y_do(zbar) != y) with the noise assignment shared by both arms.
inline double pns_exact(const ScmSpec& m, int z, int zbar, int y) {
  detail::check_pair(m, z, zbar, y, "pns_exact");
  double p = 0.0;
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) {
    if (m.outcome(z, j) == y && m.outcome(zbar, j) != y) p += m.noise_prob(j);
  }
  return detail::clamp_prob(p);
}

/// The two-term decomposition
///   P(Y_do(z)=y | Z=zbar, Y!=y) P(Z=zbar, Y!=y) + P(Y_do(zbar)!=y | Z=z, Y=y) P(Z=z, Y=y),
/// evaluated by enumeration. Each product collapses to a sum over noise
/// assignments weighted by P(Z = zbar | u) or P(Z = z | u); it equals
/// pns_exact exactly when the cause is binary.
inline double pns_two_term(const ScmSpec& m, int z, int zbar, int y) {
  detail::check_pair(m, z, zbar, y, "pns_two_term");
  double first = 0.0, second = 0.0;
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) {
    const bool both = m.outcome(z, j) == y && m.outcome(zbar, j) != y;
    if (!both) continue;
    // Observing Z = zbar selects Y = f(zbar, u) != y; the do(z) arm then gives y.
    first += m.noise_prob(j) * m.cause_prob(zbar, j);
    // Observing Z = z selects Y = f(z, u) = y; the do(zbar) arm then gives != y.
    second += m.noise_prob(j) * m.cause_prob(z, j);
  }
  return detail::clamp_prob(first + second);
}

/// P(Y=y | Z=z) - P(Y=y | Z=zbar).
inline double lemma1_estimand(const ScmSpec& m, int z, int zbar, int y) {
  detail::check_pair(m, z, zbar, y, "lemma1_estimand");
  return conditional_prob(m, y, z) - conditional_prob(m, y, zbar);
}

/// True iff no noise assignment with positive probability realizes
/// Y_do(z) != y together with Y_do(zbar) = y.
inline bool check_monotonicity(const ScmSpec& m, int z, int zbar, int y) {
  detail::check_pair(m, z, zbar, y, "check_monotonicity");
  for (std::size_t j = 0, J = m.joint_size(); j < J; ++j) {
    if (m.noise_prob(j) > 0.0 && m.outcome(z, j) != y && m.outcome(zbar, j) == y) return false;
  }
  return true;
}

struct MonotonicityReport {
  bool forward = false;  ///< (z, zbar, y) orientation holds
  bool reverse = false;  ///< (zbar, z, y) orientation holds
  bool any() const { return forward || reverse; }
};

inline MonotonicityReport monotonicity_orientations(const ScmSpec& m, int z, int zbar, int y) {
  return {check_monotonicity(m, z, zbar, y), check_monotonicity(m, zbar, z, y)};
}

/// Exogeneity for one (z, y) pair: P(Y_do(z)=y) == P(Y=y | Z=z).
inline bool check_exogeneity(const ScmSpec& m, int z, int y) {
  if (m.cause_card < 2) throw ValidationError("check_exogeneity: cause support of size 1 leaves no alternative to condition on");
  return std::abs(interventional_prob(m, z, y) - conditional_prob(m, y, z)) <= ScmSpec::kTol;
}

/// Exogeneity over every (z, y) pair.
inline bool check_exogeneity(const ScmSpec& m) {
  for (int z = 0; z < m.cause_card; ++z) {
    for (int y = 0; y < m.outcome_card; ++y) {
      if (!check_exogeneity(m, z, y)) return false;
    }
  }
  return true;
}

struct PnsReport {
  double pns_exact = 0.0;
  double pns_two_term = 0.0;
  double lemma1_estimand = 0.0;
  bool monotonic = false;
  bool monotonic_reverse = false;
  bool exogenous = false;
};

inline PnsReport analyze_pns(const ScmSpec& m, int z, int zbar, int y) {
  m.validate();
  PnsReport r;
  r.pns_exact = pns_exact(m, z, zbar, y);
  r.pns_two_term = pns_two_term(m, z, zbar, y);
  r.lemma1_estimand = lemma1_estimand(m, z, zbar, y);
  const auto mono = monotonicity_orientations(m, z, zbar, y);
  r.monotonic = mono.forward;
  r.monotonic_reverse = mono.reverse;
  r.exogenous = check_exogeneity(m);
  return r;
}

}  // namespace mpns

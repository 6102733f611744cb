// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

/// @file synthgen.hpp
/// Synthetic two-modality benchmark with known latent causes.
///
/// Latents per sample:
///   NS ~ B(0.5), Y = NS xor B(flip_prob)
///   SF = 1 if NS = 1, else B(sf_prob)
///   NC = I(NS = 1) * B(nc_prob)
///   SC = s * NS + (1 - s) * N(0, 1)
/// Observations: h = [NS*1_d, SF*1_d, NC*1_d, SC*1_d] + noise, split per
/// block into thirds (z1 shared, z2 modality 1, z3 modality 2), then
///   x1 = k([z1, k(z2, b1)], b2),  x2 = k([z1, k(z3, b3)], b4),  k(z, b) = b tanh(z).

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mpns/diffcore.hpp"
#include "mpns/errors.hpp"
#include "mpns/rng.hpp"

namespace mpns {

struct GenParams {
  double s = 0.0;
  int d = 15;
  std::array<double, 4> betas{2.0, 1.8, 1.5, 1.2};
  double noise_std_h = 0.3;
  /// Read `noise_std_h` as a variance instead of a standard deviation.
  bool noise_as_variance = false;
  double flip_prob = 0.15;
  double sf_prob = 0.1;
  double nc_prob = 0.9;
  std::uint64_t seed = 1;

  double noise_sigma() const { return noise_as_variance ? std::sqrt(noise_std_h) : noise_std_h; }
  int block_width() const { return d / 3; }
  /// Width of each observed modality: 4 blocks of d/3 from z1 plus 4 from z2 or z3.
  int modality_width() const { return 8 * d / 3; }

  void validate() const {
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("GenParams: s must lie in [0, 1), got " + std::to_string(s));
    if (d <= 0 || d % 3 != 0) throw ValidationError("GenParams: d must be a positive multiple of 3, got " + std::to_string(d));
    if (!(noise_std_h >= 0.0)) throw ValidationError("GenParams: noise_std_h must be nonnegative");
    for (double p : {flip_prob, sf_prob, nc_prob}) {
      if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("GenParams: probabilities must lie in [0, 1]");
    }
  }
};

struct LatentRecord {
  int ns = 0;
  int sf = 0;
  int nc = 0;
  double sc = 0.0;
  int y = 0;
};

struct MultimodalSample {
  std::vector<double> x1;
  std::vector<double> x2;
  int y = 0;
  LatentRecord latents;
};

/// Independent random streams used by the generator.
struct GenStreams {
  Rng latents;
  Rng sc;
  Rng noise;

  explicit GenStreams(std::uint64_t seed) : latents(seed, "latents"), sc(seed, "sc"), noise(seed, "h-noise") {}
};

/// Every call consumes exactly four latent draws and one SC draw, so the
/// streams stay aligned across samples regardless of branch outcomes.
inline LatentRecord sample_latents(const GenParams& p, GenStreams& rng) {
  LatentRecord r;
  r.ns = rng.latents.bernoulli(0.5) ? 1 : 0;
  const int flip = rng.latents.bernoulli(p.flip_prob) ? 1 : 0;
  const int sf_draw = rng.latents.bernoulli(p.sf_prob) ? 1 : 0;
  const int nc_draw = rng.latents.bernoulli(p.nc_prob) ? 1 : 0;
  r.y = r.ns ^ flip;
  r.sf = r.ns == 1 ? 1 : sf_draw;
  r.nc = r.ns == 1 ? nc_draw : 0;
  r.sc = p.s * r.ns + (1.0 - p.s) * rng.sc.normal();
  return r;
}

inline std::vector<double> build_h(const LatentRecord& lat, const GenParams& p, Rng& noise) {
  const int d = p.d;
  const double sigma = p.noise_sigma();
  const std::array<double, 4> levels{static_cast<double>(lat.ns), static_cast<double>(lat.sf),
                                     static_cast<double>(lat.nc), lat.sc};
  std::vector<double> h(static_cast<std::size_t>(4 * d));
  for (int block = 0; block < 4; ++block) {
    for (int k = 0; k < d; ++k) {
      // Draw even when sigma is 0 so the noise stream position is independent of it.
      const double eps = noise.normal();
      h[static_cast<std::size_t>(block * d + k)] = levels[static_cast<std::size_t>(block)] + sigma * eps;
    }
  }
  return h;
}

/// Splits h into (z1, z2, z3): within each of the 4 blocks, the first third
/// goes to z1, the middle to z2, the last to z3, keeping block order.
inline std::array<std::vector<double>, 3> split_blocks(std::span<const double> h, int d) {
  if (d <= 0 || d % 3 != 0) throw ValidationError("split_blocks: d must be a positive multiple of 3, got " + std::to_string(d));
  if (h.size() != static_cast<std::size_t>(4 * d)) {
    throw DimensionError("split_blocks: expected h of length " + std::to_string(4 * d) + ", got " + std::to_string(h.size()));
  }
  const int third = d / 3;
  std::array<std::vector<double>, 3> z;
  for (auto& zi : z) zi.reserve(static_cast<std::size_t>(4 * third));
  for (int block = 0; block < 4; ++block) {
    for (int part = 0; part < 3; ++part) {
      const auto begin = h.begin() + block * d + part * third;
      z[static_cast<std::size_t>(part)].insert(z[static_cast<std::size_t>(part)].end(), begin, begin + third);
    }
  }
  return z;
}

inline double kappa(double z, double beta) { return beta * std::tanh(z); }

inline std::pair<std::vector<double>, std::vector<double>> make_modalities(std::span<const double> z1,
                                                                           std::span<const double> z2,
                                                                           std::span<const double> z3,
                                                                           const GenParams& p) {
  if (z1.size() != z2.size() || z1.size() != z3.size()) throw DimensionError("make_modalities: z blocks differ in length");
  const auto [b1, b2, b3, b4] = p.betas;
  std::vector<double> x1, x2;
  x1.reserve(2 * z1.size());
  x2.reserve(2 * z1.size());
  for (double v : z1) x1.push_back(kappa(v, b2));
  for (double v : z2) x1.push_back(kappa(kappa(v, b1), b2));
  for (double v : z1) x2.push_back(kappa(v, b4));
  for (double v : z3) x2.push_back(kappa(kappa(v, b3), b4));
  return {std::move(x1), std::move(x2)};
}

inline MultimodalSample generate_sample(const GenParams& p, GenStreams& rng) {
  MultimodalSample out;
  out.latents = sample_latents(p, rng);
  out.y = out.latents.y;
  const std::vector<double> h = build_h(out.latents, p, rng.noise);
  const auto z = split_blocks(h, p.d);
  auto [x1, x2] = make_modalities(z[0], z[1], z[2], p);
  out.x1 = std::move(x1);
  out.x2 = std::move(x2);
  return out;
}

inline std::vector<MultimodalSample> generate_samples(const GenParams& p, std::size_t n) {
  p.validate();
  if (n == 0) throw ValidationError("generate_samples: n must be positive");
  GenStreams rng(p.seed);
  std::vector<MultimodalSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(p, rng));
  return out;
}

/// Column-oriented dataset: one matrix per modality, labels, and latents.
struct Dataset {
  GenParams params;
  std::vector<Matrix> x;
  std::vector<int> y;
  std::vector<LatentRecord> latents;

  std::size_t size() const { return y.size(); }
  std::size_t n_modalities() const { return x.size(); }

  static Dataset from_samples(const GenParams& p, const std::vector<MultimodalSample>& samples) {
    if (samples.empty()) throw ValidationError("Dataset: no samples");
    Dataset ds;
    ds.params = p;
    const auto n = static_cast<Eigen::Index>(samples.size());
    const auto w1 = static_cast<Eigen::Index>(samples.front().x1.size());
    const auto w2 = static_cast<Eigen::Index>(samples.front().x2.size());
    ds.x = {Matrix(n, w1), Matrix(n, w2)};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      ds.x[0].row(i) = Eigen::Map<const Eigen::RowVectorXd>(s.x1.data(), w1);
      ds.x[1].row(i) = Eigen::Map<const Eigen::RowVectorXd>(s.x2.data(), w2);
      ds.y.push_back(s.y);
      ds.latents.push_back(s.latents);
    }
    return ds;
  }

  /// Latent variable as an n x 1 column; index 0..3 = NS, SF, NC, SC.
  Matrix latent_column(int variable) const {
    Matrix col(static_cast<Eigen::Index>(size()), 1);
    for (std::size_t i = 0; i < size(); ++i) {
      const LatentRecord& l = latents[i];
      const double v = variable == 0 ? l.ns : variable == 1 ? l.sf : variable == 2 ? l.nc : l.sc;
      col(static_cast<Eigen::Index>(i), 0) = v;
    }
    return col;
  }

  /// Rows [begin, begin + count) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t count) const {
    Dataset out;
    out.params = params;
    for (const Matrix& m : x) out.x.push_back(m.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)));
    out.y.assign(y.begin() + static_cast<std::ptrdiff_t>(begin), y.begin() + static_cast<std::ptrdiff_t>(begin + count));
    out.latents.assign(latents.begin() + static_cast<std::ptrdiff_t>(begin),
                       latents.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return out;
  }
};

inline Dataset generate_dataset(const GenParams& p, std::size_t n) { return Dataset::from_samples(p, generate_samples(p, n)); }

/// Train and eval sets come from disjoint derived seeds, so changing n_train
/// never shifts the evaluation data.
inline GenParams train_split(GenParams p) {
  p.seed = derive_seed(p.seed, "train");
  return p;
}

inline GenParams eval_split(GenParams p) {
  p.seed = derive_seed(p.seed, "eval");
  return p;
}

inline constexpr std::array<const char*, 4> kLatentNames{"NS", "SF", "NC", "SC"};

}  // namespace mpns

// Copyright 2026 The MPNS Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mpns/io.hpp"
#include "mpns/rng.hpp"
#include "mpns/synthgen.hpp"

using namespace mpns;

namespace {

struct Rates {
  double y_ne_ns = 0.0;
  double sf_given_ns0 = 0.0;
  double nc_given_ns1 = 0.0;
  std::size_t sf_violations = 0;  ///< NS = 1 with SF = 0
  std::size_t nc_violations = 0;  ///< NS = 0 with NC = 1
};

Rates rates(const std::vector<MultimodalSample>& samples) {
  Rates r;
  std::size_t ns0 = 0, ns1 = 0, flips = 0, sf_on = 0, nc_on = 0;
  for (const auto& s : samples) {
    const LatentRecord& l = s.latents;
    flips += s.y != l.ns;
    if (l.ns == 0) {
      ++ns0;
      sf_on += l.sf;
      r.nc_violations += l.nc == 1;
    } else {
      ++ns1;
      nc_on += l.nc;
      r.sf_violations += l.sf == 0;
    }
  }
  r.y_ne_ns = static_cast<double>(flips) / static_cast<double>(samples.size());
  r.sf_given_ns0 = static_cast<double>(sf_on) / static_cast<double>(ns0);
  r.nc_given_ns1 = static_cast<double>(nc_on) / static_cast<double>(ns1);
  return r;
}

std::string serialize(const Dataset& ds) {
  std::ostringstream out;
  write_dataset_rows(out, ds);
  return out.str();
}

}  // namespace

TEST_CASE("rng streams are reproducible and independent by name", "[rng]") {
  Rng a(42, "latents"), b(42, "latents"), c(42, "noise"), d(43, "latents");
  std::vector<std::uint64_t> va, vb, vc, vd;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next_u64());
    vb.push_back(b.next_u64());
    vc.push_back(c.next_u64());
    vd.push_back(d.next_u64());
  }
  REQUIRE(va == vb);
  REQUIRE(va != vc);
  REQUIRE(va != vd);
  REQUIRE(derive_seed(1, "train") != derive_seed(1, "eval"));
}

TEST_CASE("rng distributions have the expected moments", "[rng]") {
  Rng r(7);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0, usum = 0.0;
  int hits = 0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sumsq += z * z;
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    usum += u;
    hits += r.bernoulli(0.3);
    ++counts[static_cast<std::size_t>(r.below(5))];
  }
  REQUIRE(sum / n == Catch::Approx(0.0).margin(0.01));
  REQUIRE(sumsq / n == Catch::Approx(1.0).margin(0.02));
  REQUIRE(usum / n == Catch::Approx(0.5).margin(0.005));
  REQUIRE(static_cast<double>(hits) / n == Catch::Approx(0.3).margin(0.005));
  for (int c : counts) REQUIRE(static_cast<double>(c) / n == Catch::Approx(0.2).margin(0.005));
}

TEST_CASE("shuffle is a seeded permutation", "[rng]") {
  std::vector<int> v(100), w;
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i;
  w = v;
  Rng a(3), b(3);
  a.shuffle(v);
  b.shuffle(w);
  REQUIRE(v == w);
  REQUIRE(std::set<int>(v.begin(), v.end()).size() == 100);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted != v);
}

TEST_CASE("generator latent rates match the structural equations", "[synthgen]") {
  GenParams p;
  p.seed = 11;
  const auto samples = generate_samples(p, 15000);
  const Rates r = rates(samples);
  REQUIRE(std::abs(r.y_ne_ns - 0.15) <= 0.01);
  REQUIRE(std::abs(r.sf_given_ns0 - 0.1) <= 0.01);
  REQUIRE(std::abs(r.nc_given_ns1 - 0.9) <= 0.01);
  REQUIRE(r.sf_violations == 0);
  REQUIRE(r.nc_violations == 0);
}

TEST_CASE("SC follows s * NS + (1 - s) * N(0, 1)", "[synthgen]") {
  for (double s : {0.0, 0.3, 0.7}) {
    GenParams p;
    p.s = s;
    p.seed = 5;
    const auto samples = generate_samples(p, 20000);
    double m0 = 0.0, m1 = 0.0, v1 = 0.0;
    std::size_t n0 = 0, n1 = 0;
    for (const auto& x : samples) {
      if (x.latents.ns == 0) {
        m0 += x.latents.sc;
        ++n0;
      } else {
        m1 += x.latents.sc;
        v1 += x.latents.sc * x.latents.sc;
        ++n1;
      }
    }
    m0 /= static_cast<double>(n0);
    m1 /= static_cast<double>(n1);
    v1 = v1 / static_cast<double>(n1) - m1 * m1;
    REQUIRE(m0 == Catch::Approx(0.0).margin(0.03));
    REQUIRE(m1 == Catch::Approx(s).margin(0.03));
    REQUIRE(std::sqrt(v1) == Catch::Approx(1.0 - s).margin(0.03));
  }
}

TEST_CASE("s = 0 makes SC independent of NS in every draw", "[synthgen]") {
  GenParams a, b;
  a.s = 0.0;
  b.s = 0.0;
  b.flip_prob = 0.4;  // changes Y but must not move SC
  const auto sa = generate_samples(a, 500), sb = generate_samples(b, 500);
  for (std::size_t i = 0; i < sa.size(); ++i) REQUIRE(sa[i].latents.sc == sb[i].latents.sc);
}

TEST_CASE("split_blocks partitions h into interleaved thirds", "[synthgen]") {
  const int d = 6;
  std::vector<double> h(4 * d);
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = static_cast<double>(i);
  const auto z = split_blocks(h, d);
  for (const auto& zi : z) REQUIRE(zi.size() == static_cast<std::size_t>(4 * d / 3));
  // Reassemble: block b, part k, offset t lives at h[b*d + k*(d/3) + t].
  std::vector<double> back(h.size());
  const int third = d / 3;
  for (int part = 0; part < 3; ++part) {
    for (int b = 0; b < 4; ++b) {
      for (int t = 0; t < third; ++t) back[static_cast<std::size_t>(b * d + part * third + t)] = z[static_cast<std::size_t>(part)][static_cast<std::size_t>(b * third + t)];
    }
  }
  REQUIRE(back == h);
  REQUIRE_THROWS_AS(split_blocks(h, 5), ValidationError);
  REQUIRE_THROWS_AS(split_blocks(std::vector<double>(10), 6), DimensionError);
}

TEST_CASE("modalities share z1 through kappa and have width 8d/3", "[synthgen]") {
  GenParams p;
  const std::vector<double> z1{0.1, -0.5, 2.0}, z2{0.3, 0.0, -1.0}, z3{1.5, -0.2, 0.4};
  const auto [x1, x2] = make_modalities(z1, z2, z3, p);
  REQUIRE(x1.size() == 6);
  REQUIRE(x1[0] == 1.8 * std::tanh(0.1));
  REQUIRE(x1[3] == 1.8 * std::tanh(2.0 * std::tanh(0.3)));
  REQUIRE(x2[2] == 1.2 * std::tanh(2.0));
  REQUIRE(x2[5] == 1.2 * std::tanh(1.5 * std::tanh(0.4)));
  REQUIRE(p.modality_width() == 40);
  const auto s = generate_samples(p, 3);
  REQUIRE(s[0].x1.size() == 40);
  REQUIRE(s[0].x2.size() == 40);
}

TEST_CASE("observations are bounded by the outer kappa", "[synthgen]") {
  GenParams p;
  const Dataset ds = generate_dataset(p, 2000);
  REQUIRE(ds.x[0].cwiseAbs().maxCoeff() <= 1.8);
  REQUIRE(ds.x[1].cwiseAbs().maxCoeff() <= 1.2);
}

TEST_CASE("generation is byte-exact across repeated runs", "[synthgen]") {
  GenParams p;
  p.s = 0.3;
  p.seed = 99;
  const std::string a = serialize(generate_dataset(train_split(p), 15000));
  const std::string b = serialize(generate_dataset(train_split(p), 15000));
  REQUIRE(a == b);
  const std::string e = serialize(generate_dataset(eval_split(p), 100));
  REQUIRE(e != a.substr(0, e.size()));
}

TEST_CASE("the eval split does not depend on the training size", "[synthgen]") {
  GenParams p;
  const Dataset e1 = generate_dataset(eval_split(p), 50);
  const Dataset small = generate_dataset(train_split(p), 10);
  (void)small;
  const Dataset e2 = generate_dataset(eval_split(p), 50);
  REQUIRE(serialize(e1) == serialize(e2));
  const Dataset prefix = generate_dataset(eval_split(p), 20);
  REQUIRE(serialize(prefix) == serialize(e1.slice(0, 20)));
}

TEST_CASE("zero noise leaves h at the latent levels", "[synthgen]") {
  GenParams p;
  p.noise_std_h = 0.0;
  GenStreams streams(1);
  const LatentRecord lat = sample_latents(p, streams);
  const auto h = build_h(lat, p, streams.noise);
  for (int k = 0; k < p.d; ++k) {
    REQUIRE(h[static_cast<std::size_t>(k)] == lat.ns);
    REQUIRE(h[static_cast<std::size_t>(3 * p.d + k)] == lat.sc);
  }
}

TEST_CASE("generator parameters are validated", "[synthgen]") {
  GenParams p;
  p.d = 14;
  REQUIRE_THROWS_AS(p.validate(), ValidationError);
  p.d = 15;
  p.s = 1.0;
  REQUIRE_THROWS_AS(p.validate(), ValidationError);
  p.s = 0.0;
  p.flip_prob = 1.5;
  REQUIRE_THROWS_AS(p.validate(), ValidationError);
  REQUIRE_THROWS_AS(generate_samples(GenParams{}, 0), ValidationError);
}

TEST_CASE("noise_as_variance reads the noise level as a variance", "[synthgen]") {
  GenParams p;
  p.noise_std_h = 0.09;
  p.noise_as_variance = true;
  REQUIRE(p.noise_sigma() == Catch::Approx(0.3).epsilon(1e-15));
}

#pragma once

// Reference computations written independently of the library code, used
// as test oracles. They favour obviousness over speed.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stepsteer/probe.hpp"

namespace oracle {

using Vec = std::vector<double>;

// mean(P) - mean(N), accumulating each coordinate separately.
inline Vec mean_difference(const std::vector<Vec>& pos, const std::vector<Vec>& neg) {
  const std::size_t d = pos.front().size();
  Vec out(d);
  for (std::size_t j = 0; j < d; ++j) {
    long double sp = 0.0L, sn = 0.0L;
    for (const auto& v : pos) sp += v[j];
    for (const auto& v : neg) sn += v[j];
    out[j] = static_cast<double>(sp / pos.size() - sn / neg.size());
  }
  return out;
}

// ||h|| (h + a d) / ||h + a d|| in extended precision.
inline Vec steer(const Vec& h, const Vec& d, double alpha) {
  long double nh = 0.0L, ns = 0.0L;
  std::vector<long double> s(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    s[i] = static_cast<long double>(h[i]) + static_cast<long double>(alpha) * d[i];
    nh += static_cast<long double>(h[i]) * h[i];
    ns += s[i] * s[i];
  }
  const long double scale = std::sqrt(nh) / std::sqrt(ns);
  Vec out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = static_cast<double>(s[i] * scale);
  return out;
}

inline long double norm(const Vec& v) {
  long double s = 0.0L;
  for (double x : v) s += static_cast<long double>(x) * x;
  return std::sqrt(s);
}

inline double cosine(const Vec& a, const Vec& b) {
  long double ab = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) ab += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(ab / (norm(a) * norm(b)));
}

// Fraction of (positive, negative) pairs ordered correctly, ties one half.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  long double wins = 0.0L;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0L;
      else if (scores[i] == scores[j]) wins += 0.5L;
    }
  }
  return static_cast<double>(wins / pairs);
}

// Probe forward pass from the raw parameter arrays.
inline double probe_q(const stepsteer::ProbeWeights& w, const Vec& x) {
  Vec a = x;
  for (std::size_t l = 0; l < 3; ++l) {
    const auto& layer = w.layers[l];
    Vec z(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      long double acc = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) acc += static_cast<long double>(layer.weight[o * layer.in + i]) * a[i];
      z[o] = static_cast<double>(acc);
    }
    if (l < 2) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    }
    a = z;
  }
  return 1.0 / (1.0 + std::exp(-a[0]));
}

inline Vec random_vector(std::mt19937_64& rng, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec v(dim);
  for (double& x : v) x = n(rng);
  return v;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
  auto dir = std::filesystem::temp_directory_path() / ("stepsteer_" + tag + "_" + std::to_string(stamp));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle

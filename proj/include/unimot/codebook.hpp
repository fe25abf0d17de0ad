#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/rng.hpp"

namespace unimot {

struct Codebook {
  int k = 0, dim = 0;
  std::vector<float> words;          // k * dim, row-major
  float training_error = 0.f;        // mean squared distance at convergence
  std::vector<float> error_trace;    // mean squared distance per iteration

  const float* word(int i) const { return words.data() + size_t(i) * dim; }
  float* word(int i) { return words.data() + size_t(i) * dim; }
};

// Exhaustive nearest-codeword scan; ties resolve to the lowest id via the
// strict comparison.
inline int nearest_codeword(const Codebook& cb, const float* x) {
  int best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (int i = 0; i < cb.k; i++) {
    const float* w = cb.word(i);
    float d = 0;
    for (int j = 0; j < cb.dim; j++) {
      float t = x[j] - w[j];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline float squared_distance(const float* a, const float* b, int dim) {
  float d = 0;
  for (int j = 0; j < dim; j++) {
    float t = a[j] - b[j];
    d += t * t;
  }
  return d;
}

// Mean squared distance from each vector to its nearest codeword.
inline double quantization_error(const Codebook& cb, const float* xs, int n) {
  double total = 0;
  for (int i = 0; i < n; i++) {
    const float* x = xs + size_t(i) * cb.dim;
    total += squared_distance(x, cb.word(nearest_codeword(cb, x)), cb.dim);
  }
  return n > 0 ? total / n : 0.0;
}

// Plain k-means. Init picks k distinct sample rows; empty clusters are
// reseeded from the point farthest from its assigned codeword; exact
// duplicate codewords are reseeded the same way after the final iteration.
inline Codebook train_codebook(const float* xs, int n, int dim, int k,
                               int iters, uint64_t seed) {
  if (n < k)
    throw ConfigError("k-means needs at least k=" + std::to_string(k) +
                      " training vectors, got " + std::to_string(n));
  if (dim <= 0 || k <= 0) throw ConfigError("k-means: k and dim must be positive");
  Codebook cb;
  cb.k = k;
  cb.dim = dim;
  cb.words.resize(size_t(k) * dim);

  // D^2-weighted (k-means++) seeding: spreads initial codewords across the
  // sample modes so convergence does not depend on empty-cluster rescues.
  Rng rng(seed);
  std::vector<double> d2(n);
  std::memcpy(cb.word(0), xs + rng.below(uint64_t(n)) * dim,
              sizeof(float) * dim);
  for (int i = 0; i < n; i++)
    d2[i] = squared_distance(xs + size_t(i) * dim, cb.word(0), dim);
  for (int c = 1; c < k; c++) {
    double total = 0;
    for (int i = 0; i < n; i++) total += d2[i];
    int pick;
    if (total <= 0) {
      pick = int(rng.below(uint64_t(n)));
    } else {
      double r = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; i++) {
        r -= d2[i];
        if (r <= 0) {
          pick = i;
          break;
        }
      }
    }
    std::memcpy(cb.word(c), xs + size_t(pick) * dim, sizeof(float) * dim);
    for (int i = 0; i < n; i++) {
      double d = squared_distance(xs + size_t(i) * dim, cb.word(c), dim);
      d2[i] = std::min(d2[i], d);
    }
  }

  std::vector<int> assign(n);
  std::vector<float> dist(n);
  auto assign_all = [&] {
    double total = 0;
    for (int i = 0; i < n; i++) {
      const float* x = xs + size_t(i) * dim;
      assign[i] = nearest_codeword(cb, x);
      dist[i] = squared_distance(x, cb.word(assign[i]), dim);
      total += dist[i];
    }
    return float(total / n);
  };
  assign_all();

  std::vector<double> sums(size_t(k) * dim);
  std::vector<int> counts(k);
  auto update_means = [&] {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; i++) {
      const float* x = xs + size_t(i) * dim;
      double* s = sums.data() + size_t(assign[i]) * dim;
      for (int j = 0; j < dim; j++) s[j] += x[j];
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; c++) {
      if (counts[c] == 0) continue;  // keep the old word until reseeded
      const double* s = sums.data() + size_t(c) * dim;
      for (int j = 0; j < dim; j++) cb.word(c)[j] = float(s[j] / counts[c]);
    }
  };
  auto reseed = [&](int c) {
    // Farthest point from its own codeword becomes the new word c.
    int far_i = 0;
    float far_d = -1;
    for (int i = 0; i < n; i++) {
      if (dist[i] > far_d) {
        far_d = dist[i];
        far_i = i;
      }
    }
    std::memcpy(cb.word(c), xs + size_t(far_i) * dim, sizeof(float) * dim);
    dist[far_i] = 0;  // do not pick the same point for the next empty cluster
  };

  for (int it = 0; it < iters; it++) {
    update_means();
    // Refresh distances to the moved centroids before ranking reseed donors.
    for (int i = 0; i < n; i++)
      dist[i] = squared_distance(xs + size_t(i) * dim, cb.word(assign[i]), dim);
    for (int c = 0; c < k; c++)
      if (counts[c] == 0) reseed(c);
    cb.error_trace.push_back(assign_all());
  }

  // Deduplicate identical codewords so every id stays reachable. Each round
  // reseeds the higher id of every duplicate pair, then reassigns; ties
  // resolve to the lower id, so the reseeded words were unused and the error
  // stays monotone.
  for (int round = 0; round < k; round++) {
    bool changed = false;
    for (int i = 0; i < k; i++) {
      for (int j = i + 1; j < k; j++) {
        if (std::memcmp(cb.word(i), cb.word(j), sizeof(float) * dim) != 0)
          continue;
        reseed(j);
        changed = true;
      }
    }
    if (!changed) break;
    cb.error_trace.push_back(assign_all());
  }

  cb.training_error =
      cb.error_trace.empty() ? assign_all() : cb.error_trace.back();
  return cb;
}

// File layout: "UMCB" magic, u32 version, u32 k, u32 dim, then k*dim f32
// codewords, all little-endian.
inline constexpr uint32_t kCodebookVersion = 1;

inline void save_codebook(const Codebook& cb, const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("codebook: cannot open " + tmp);
    f.write("UMCB", 4);
    uint32_t v = kCodebookVersion, k = uint32_t(cb.k), d = uint32_t(cb.dim);
    f.write((const char*)&v, 4);
    f.write((const char*)&k, 4);
    f.write((const char*)&d, 4);
    f.write((const char*)cb.words.data(),
            std::streamsize(cb.words.size() * sizeof(float)));
    if (!f) throw CheckpointError("codebook: short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Codebook load_codebook(const std::string& path) {
  static_assert(std::endian::native == std::endian::little);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("codebook: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "UMCB", 4) != 0)
    throw CheckpointError("codebook: bad magic in " + path);
  uint32_t v = 0, k = 0, d = 0;
  f.read((char*)&v, 4);
  f.read((char*)&k, 4);
  f.read((char*)&d, 4);
  if (!f) throw CheckpointError("codebook: truncated header in " + path);
  if (v != kCodebookVersion)
    throw CheckpointError("codebook: unsupported version " + std::to_string(v) +
                          " in " + path);
  if (k == 0 || d == 0 || k > (1u << 24) || d > (1u << 24))
    throw CheckpointError("codebook: implausible dimensions in " + path);
  Codebook cb;
  cb.k = int(k);
  cb.dim = int(d);
  cb.words.resize(size_t(k) * d);
  f.read((char*)cb.words.data(),
         std::streamsize(cb.words.size() * sizeof(float)));
  if (size_t(f.gcount()) != cb.words.size() * sizeof(float))
    throw CheckpointError("codebook: truncated payload in " + path);
  f.peek();
  if (!f.eof())
    throw CheckpointError("codebook: trailing bytes in " + path);
  return cb;
}

}  // namespace unimot

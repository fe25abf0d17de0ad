#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "unimot/codebook.hpp"
#include "unimot/errors.hpp"
#include "unimot/image.hpp"
#include "unimot/rng.hpp"
#include "unimot/vocab.hpp"
#include "unimot/world.hpp"

namespace unimot {

// Geometry shared by both image token streams.
struct TokenizerConfig {
  int img = 24;      // square image side
  int patch = 6;     // pixel patch side
  int grid = 3;      // semantic lattice side
  int pix_k = 128;   // pixel codebook size
  int sem_k = 64;    // semantic codebook size

  int patches_per_side() const {
    if (patch <= 0 || img % patch != 0)
      throw ConfigError("image side " + std::to_string(img) +
                        " not divisible by patch " + std::to_string(patch));
    return img / patch;
  }
  int pix_tokens() const { return patches_per_side() * patches_per_side(); }
  int patch_dim() const { return patch * patch * 3; }
  int cell() const {
    if (grid <= 0 || img % grid != 0)
      throw ConfigError("image side " + std::to_string(img) +
                        " not divisible by grid " + std::to_string(grid));
    return img / grid;
  }
  int sem_tokens() const { return grid * grid; }
};

// Row-major patch extraction: one feature row of patch*patch*3 floats per
// patch, patches ordered left-to-right then top-to-bottom.
inline std::vector<float> patch_features(const ToyImage& img, int patch) {
  if (img.h != img.w || patch <= 0 || img.h % patch != 0)
    throw ConfigError("image " + std::to_string(img.h) + "x" +
                      std::to_string(img.w) + " not divisible into " +
                      std::to_string(patch) + "-pixel patches");
  const int per_side = img.h / patch;
  const int dim = patch * patch * 3;
  std::vector<float> feat(size_t(per_side) * per_side * dim);
  for (int pr = 0; pr < per_side; pr++) {
    for (int pc = 0; pc < per_side; pc++) {
      float* out = feat.data() + (size_t(pr) * per_side + pc) * dim;
      for (int r = 0; r < patch; r++)
        for (int c = 0; c < patch; c++) {
          const float* p = img.px(pr * patch + r, pc * patch + c);
          float* o = out + (size_t(r) * patch + c) * 3;
          o[0] = p[0];
          o[1] = p[1];
          o[2] = p[2];
        }
    }
  }
  return feat;
}

inline std::vector<int> encode_pixel(const ToyImage& img, const Codebook& cb,
                                     int patch) {
  if (cb.dim != patch * patch * 3)
    throw ConfigError("pixel codebook dim " + std::to_string(cb.dim) +
                      " does not match patch dim " +
                      std::to_string(patch * patch * 3));
  std::vector<float> feat = patch_features(img, patch);
  const int n = int(feat.size()) / cb.dim;
  std::vector<int> codes(n);
  for (int i = 0; i < n; i++)
    codes[i] = nearest_codeword(cb, feat.data() + size_t(i) * cb.dim);
  return codes;
}

inline ToyImage decode_pixel(const std::vector<int>& codes, const Codebook& cb,
                             int patch, int img_size) {
  const int per_side = img_size / patch;
  if (patch <= 0 || img_size % patch != 0 ||
      int(codes.size()) != per_side * per_side)
    throw ConfigError("pixel decode: got " + std::to_string(codes.size()) +
                      " codes for a " + std::to_string(img_size) + "px image, patch " +
                      std::to_string(patch));
  if (cb.dim != patch * patch * 3)
    throw ConfigError("pixel codebook dim mismatch on decode");
  ToyImage img(img_size, img_size);
  for (int pr = 0; pr < per_side; pr++)
    for (int pc = 0; pc < per_side; pc++) {
      int code = codes[size_t(pr) * per_side + pc];
      if (code < 0 || code >= cb.k)
        throw ConfigError("pixel code " + std::to_string(code) +
                          " outside codebook of " + std::to_string(cb.k));
      const float* w = cb.word(code);
      for (int r = 0; r < patch; r++)
        for (int c = 0; c < patch; c++) {
          float* p = img.px(pr * patch + r, pc * patch + c);
          const float* o = w + (size_t(r) * patch + c) * 3;
          p[0] = std::clamp(o[0], 0.f, 1.f);
          p[1] = std::clamp(o[1], 0.f, 1.f);
          p[2] = std::clamp(o[2], 0.f, 1.f);
        }
    }
  return img;
}

// Semantic cell descriptor: cell mean rgb (3), 2x2 sub-cell mean rgb (12),
// and a frozen random projection of the cell's attribute summary (8).
inline constexpr int kSemPooledDim = 15;
inline constexpr int kSemSummaryDim = 11;  // occupied + shape 1-hot + color 1-hot
inline constexpr int kSemProjDim = 8;
inline constexpr int kSemFeatDim = kSemPooledDim + kSemProjDim;

struct SemanticFeaturizer {
  int grid = 3;
  std::vector<float> proj;  // kSemSummaryDim x kSemProjDim, fixed at make()

  static SemanticFeaturizer make(int grid) {
    SemanticFeaturizer f;
    f.grid = grid;
    f.proj.resize(size_t(kSemSummaryDim) * kSemProjDim);
    Rng rng(0x5EED0001ull);  // frozen: the featurizer is part of the format
    const float scale = 1.f / std::sqrt(float(kSemSummaryDim));
    for (float& v : f.proj) v = float(rng.normal()) * scale;
    return f;
  }
};

inline std::vector<float> semantic_features(const ToyImage& img,
                                            const SemanticFeaturizer& fz) {
  const int grid = fz.grid;
  if (img.h != img.w || grid <= 0 || img.h % grid != 0)
    throw ConfigError("semantic grid " + std::to_string(grid) +
                      " does not divide image side " + std::to_string(img.h));
  const int cell = img.h / grid;
  if (cell % 2 != 0)
    throw ConfigError("semantic cell side " + std::to_string(cell) +
                      " must be even for 2x2 pooling");
  const auto scene = attribute_oracle(img);
  const int scene_shape = scene ? scene->shape : -1;
  std::vector<float> feat(size_t(grid) * grid * kSemFeatDim, 0.f);
  for (int g = 0; g < grid * grid; g++) {
    const int r0 = (g / grid) * cell, c0 = (g % grid) * cell;
    float* out = feat.data() + size_t(g) * kSemFeatDim;
    // Mean rgb over the cell and over its four quadrants.
    const int half = cell / 2;
    for (int q = 0; q < 4; q++) {
      const int qr = r0 + (q / 2) * half, qc = c0 + (q % 2) * half;
      float m[3] = {0, 0, 0};
      for (int r = 0; r < half; r++)
        for (int c = 0; c < half; c++) {
          const float* p = img.px(qr + r, qc + c);
          m[0] += p[0];
          m[1] += p[1];
          m[2] += p[2];
        }
      for (int i = 0; i < 3; i++) {
        m[i] /= float(half * half);
        out[3 + q * 3 + i] = m[i];
        out[i] += m[i] / 4.f;
      }
    }
    // Attribute summary -> frozen projection. Occupancy and color come from
    // the cell's own lit pixels; the shape slot carries the scene's shape
    // (recovered once for the whole image) for every occupied cell.
    CellStats s = cell_stats(img, r0, c0, cell);
    float summary[kSemSummaryDim] = {0};
    summary[0] = s.occupied ? 1.f : 0.f;
    if (s.occupied && scene_shape >= 0) summary[1 + scene_shape] = 1.f;
    if (s.color >= 0) summary[1 + kNumShapes + s.color] = 1.f;
    for (int j = 0; j < kSemProjDim; j++) {
      float acc = 0;
      for (int i = 0; i < kSemSummaryDim; i++)
        acc += summary[i] * fz.proj[size_t(i) * kSemProjDim + j];
      out[kSemPooledDim + j] = acc;
    }
  }
  return feat;
}

inline std::vector<int> encode_semantic(const ToyImage& img, const Codebook& cb,
                                        const SemanticFeaturizer& fz) {
  if (cb.dim != kSemFeatDim)
    throw ConfigError("semantic codebook dim " + std::to_string(cb.dim) +
                      " does not match feature dim " +
                      std::to_string(kSemFeatDim));
  std::vector<float> feat = semantic_features(img, fz);
  const int n = int(feat.size()) / kSemFeatDim;
  std::vector<int> codes(n);
  for (int i = 0; i < n; i++)
    codes[i] = nearest_codeword(cb, feat.data() + size_t(i) * kSemFeatDim);
  return codes;
}

// Coarse stand-in image: paints each quadrant of each cell with the stored
// sub-cell mean color. Used when only the semantic stream is generated.
inline ToyImage decode_semantic(const std::vector<int>& codes,
                                const Codebook& cb, int grid, int img_size) {
  if (grid <= 0 || img_size % grid != 0 || int(codes.size()) != grid * grid)
    throw ConfigError("semantic decode: got " + std::to_string(codes.size()) +
                      " codes for grid " + std::to_string(grid));
  if (cb.dim != kSemFeatDim)
    throw ConfigError("semantic codebook dim mismatch on decode");
  const int cell = img_size / grid;
  const int half = cell / 2;
  ToyImage img(img_size, img_size);
  for (int g = 0; g < grid * grid; g++) {
    int code = codes[g];
    if (code < 0 || code >= cb.k)
      throw ConfigError("semantic code " + std::to_string(code) +
                        " outside codebook of " + std::to_string(cb.k));
    const float* w = cb.word(code);
    const int r0 = (g / grid) * cell, c0 = (g % grid) * cell;
    for (int q = 0; q < 4; q++) {
      const int qr = r0 + (q / 2) * half, qc = c0 + (q % 2) * half;
      for (int r = 0; r < half; r++)
        for (int c = 0; c < half; c++) {
          float* p = img.px(qr + r, qc + c);
          p[0] = std::clamp(w[3 + q * 3 + 0], 0.f, 1.f);
          p[1] = std::clamp(w[3 + q * 3 + 1], 0.f, 1.f);
          p[2] = std::clamp(w[3 + q * 3 + 2], 0.f, 1.f);
        }
    }
  }
  return img;
}

// ---- Image block grammar: BOI, s semantic ids, p pixel ids, EOI ----

inline constexpr int block_payload(int s, int p) { return s + p; }
inline constexpr int block_length(int s, int p) { return s + p + 2; }

// Semantic scaffold cost relative to the pixel stream it prefixes.
inline double overhead_ratio(int s, int p) {
  if (p <= 0)
    throw ConfigError("overhead ratio undefined for pixel stream length " +
                      std::to_string(p));
  if (s < 0) throw ConfigError("negative semantic stream length");
  return double(s) / double(p);
}

inline std::vector<int> assemble_image_block(const std::vector<int>& sem_codes,
                                             const std::vector<int>& pix_codes,
                                             const VocabLayout& vocab) {
  std::vector<int> ids;
  ids.reserve(sem_codes.size() + pix_codes.size() + 2);
  ids.push_back(vocab.boi());
  for (int c : sem_codes) ids.push_back(vocab.sem_id(c));
  for (int c : pix_codes) ids.push_back(vocab.pix_id(c));
  ids.push_back(vocab.eoi());
  return ids;
}

struct BlockCodes {
  std::vector<int> sem, pix;
};

// Strict parse of one image block; byte positions in errors are offsets into
// the ids span handed in.
inline BlockCodes parse_image_block(const std::vector<int>& ids,
                                    const VocabLayout& vocab, int s, int p) {
  const int want = block_length(s, p);
  auto cls = [&](int pos) { return vocab.classify(ids[pos]); };
  if (ids.empty() || ids[0] != vocab.boi())
    throw GrammarError("image block must start with BOI", 0);
  for (int i = 0; i < s; i++) {
    int pos = 1 + i;
    if (pos >= int(ids.size()))
      throw GrammarError("image block truncated in semantic stream", pos);
    if (cls(pos) != TokenClass::SemGen)
      throw GrammarError("expected semantic token, got " +
                             std::string(token_class_name(cls(pos))),
                         pos);
  }
  for (int i = 0; i < p; i++) {
    int pos = 1 + s + i;
    if (pos >= int(ids.size()))
      throw GrammarError("image block truncated in pixel stream", pos);
    if (cls(pos) != TokenClass::PixGen)
      throw GrammarError("expected pixel token, got " +
                             std::string(token_class_name(cls(pos))),
                         pos);
  }
  if (int(ids.size()) < want)
    throw GrammarError("image block truncated before EOI", int(ids.size()));
  if (ids[want - 1] != vocab.eoi())
    throw GrammarError("image block must end with EOI", want - 1);
  if (int(ids.size()) > want)
    throw GrammarError("trailing tokens after image block", want);
  BlockCodes out;
  out.sem.reserve(s);
  out.pix.reserve(p);
  for (int i = 0; i < s; i++) out.sem.push_back(vocab.sem_code(ids[1 + i]));
  for (int i = 0; i < p; i++) out.pix.push_back(vocab.pix_code(ids[1 + s + i]));
  return out;
}

}  // namespace unimot

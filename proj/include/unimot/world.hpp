#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/image.hpp"

namespace unimot {

// Attribute space: every scene is one shape of one color at one lattice
// position. Positions form a 3x3 lattice with pitch img/4, so a shape region
// (side img/2) always covers a whole number of pixel patches.
inline constexpr int kNumShapes = 4;
inline constexpr int kNumColors = 6;
inline constexpr int kNumPositions = 9;
inline constexpr int kNumConcepts = kNumShapes * kNumColors * kNumPositions;

inline constexpr const char* kShapeNames[kNumShapes] = {"square", "circle",
                                                        "triangle", "cross"};
inline constexpr const char* kColorNames[kNumColors] = {
    "red", "green", "blue", "yellow", "magenta", "cyan"};
inline constexpr const char* kPositionNames[kNumPositions] = {
    "top-left",    "top-center",    "top-right",
    "middle-left", "center",        "middle-right",
    "bottom-left", "bottom-center", "bottom-right"};
inline constexpr float kColorRgb[kNumColors][3] = {
    {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};
inline constexpr float kBackgroundGray = 0.05f;

struct Attributes {
  int shape = 0;
  int color = 0;
  int position = 0;
  bool operator==(const Attributes&) const = default;
};

inline int concept_index(const Attributes& a) {
  return (a.shape * kNumColors + a.color) * kNumPositions + a.position;
}

inline Attributes concept_at(int index) {
  if (index < 0 || index >= kNumConcepts)
    throw ConfigError("concept index " + std::to_string(index) +
                      " outside [0," + std::to_string(kNumConcepts) + ")");
  Attributes a;
  a.position = index % kNumPositions;
  index /= kNumPositions;
  a.color = index % kNumColors;
  a.shape = index / kNumColors;
  return a;
}

// Shape stencil inside its square region, resolution independent.
// u,v are pixel-center coordinates normalized to (0,1), u down, v right.
inline bool shape_covers(int shape, float u, float v) {
  float du = u - 0.5f, dv = v - 0.5f;
  switch (shape) {
    case 0:  // square: the full region
      return true;
    case 1:  // circle: disc of radius 0.46
      return du * du + dv * dv <= 0.46f * 0.46f;
    case 2:  // triangle: apex at top, half-width grows with depth
      return std::fabs(dv) <= 0.04f + 0.46f * u;
    case 3:  // cross: two centered bars of width 0.3
      return std::fabs(du) <= 0.15f || std::fabs(dv) <= 0.15f;
    default:
      throw ConfigError("shape id " + std::to_string(shape) + " outside [0,4)");
  }
}

inline int position_pitch(int img_size) {
  if (img_size % 4 != 0)
    throw ConfigError("image side " + std::to_string(img_size) +
                      " must be divisible by 4");
  return img_size / 4;
}
inline int shape_region(int img_size) { return img_size / 2; }

inline ToyImage render_concept(const Attributes& a, int img_size = 24) {
  if (a.shape < 0 || a.shape >= kNumShapes || a.color < 0 ||
      a.color >= kNumColors || a.position < 0 || a.position >= kNumPositions)
    throw ConfigError("attributes out of range");
  const int pitch = position_pitch(img_size);
  const int region = shape_region(img_size);
  ToyImage img(img_size, img_size);
  for (float& v : img.rgb) v = kBackgroundGray;
  const int r0 = (a.position / 3) * pitch, c0 = (a.position % 3) * pitch;
  for (int r = 0; r < region; r++) {
    for (int c = 0; c < region; c++) {
      if (!shape_covers(a.shape, (r + 0.5f) / region, (c + 0.5f) / region))
        continue;
      float* p = img.px(r0 + r, c0 + c);
      p[0] = kColorRgb[a.color][0];
      p[1] = kColorRgb[a.color][1];
      p[2] = kColorRgb[a.color][2];
    }
  }
  return img;
}

// Chroma gate: palette colors are fully saturated, background is gray, so
// max-min channel separates painted pixels even after lossy round trips.
inline bool pixel_lit(const float* p) {
  float mx = std::max({p[0], p[1], p[2]});
  float mn = std::min({p[0], p[1], p[2]});
  return mx - mn > 0.45f;
}

inline int nearest_palette_color(const float* mean) {
  int best = -1;
  float best_d = 1e30f;
  for (int k = 0; k < kNumColors; k++) {
    float d = 0;
    for (int i = 0; i < 3; i++) {
      float t = mean[i] - kColorRgb[k][i];
      d += t * t;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best_d <= 0.5f ? best : -1;
}

// Ground-truth checker: recovers the attribute tuple from pixels alone, or
// nothing when the image is not a clean single-concept scene. Recovery is by
// lit bounding box for position, Hamming match against the four stencils for
// shape, nearest palette entry of the mean lit color for color.
inline std::optional<Attributes> attribute_oracle(const ToyImage& img) {
  if (img.h != img.w || img.h % 4 != 0) return std::nullopt;
  const int pitch = position_pitch(img.h);
  const int region = shape_region(img.h);

  int rmin = img.h, rmax = -1, cmin = img.w, cmax = -1, lit_total = 0;
  for (int r = 0; r < img.h; r++)
    for (int c = 0; c < img.w; c++)
      if (pixel_lit(img.px(r, c))) {
        lit_total++;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  // Smallest stencil (cross) covers ~40% of the region; require a quarter of
  // that, and reject blankets of color that dwarf one region.
  if (lit_total < region * region / 10) return std::nullopt;
  if (lit_total > region * region * 6 / 5) return std::nullopt;
  if (rmax - rmin >= region + 2 || cmax - cmin >= region + 2)
    return std::nullopt;

  const int pi = std::clamp(int(std::lround(double(rmin) / pitch)), 0, 2);
  const int pj = std::clamp(int(std::lround(double(cmin) / pitch)), 0, 2);
  const int r0 = pi * pitch, c0 = pj * pitch;
  if (std::abs(rmin - r0) > 2 || std::abs(cmin - c0) > 2) return std::nullopt;

  // Anything lit well outside the claimed region breaks the single-scene
  // assumption.
  int outside = 0;
  float mean[3] = {0, 0, 0};
  int lit_in = 0;
  std::vector<uint8_t> mask(size_t(region) * region, 0);
  for (int r = 0; r < img.h; r++)
    for (int c = 0; c < img.w; c++) {
      if (!pixel_lit(img.px(r, c))) continue;
      if (r < r0 || r >= r0 + region || c < c0 || c >= c0 + region) {
        outside++;
        continue;
      }
      mask[size_t(r - r0) * region + (c - c0)] = 1;
      lit_in++;
      const float* p = img.px(r, c);
      mean[0] += p[0];
      mean[1] += p[1];
      mean[2] += p[2];
    }
  if (outside > region / 4 || lit_in == 0) return std::nullopt;

  for (int i = 0; i < 3; i++) mean[i] /= lit_in;
  int color = nearest_palette_color(mean);
  if (color < 0) return std::nullopt;

  int shape = -1, best_ham = 1 << 30;
  for (int k = 0; k < kNumShapes; k++) {
    int ham = 0;
    for (int r = 0; r < region; r++)
      for (int c = 0; c < region; c++) {
        bool want =
            shape_covers(k, (r + 0.5f) / region, (c + 0.5f) / region);
        ham += int(want) != int(mask[size_t(r) * region + c]);
      }
    if (ham < best_ham) {
      best_ham = ham;
      shape = k;
    }
  }
  // Closest stencil pair differs on ~28% of the region; allow a quarter.
  if (best_ham > region * region * 7 / 100) return std::nullopt;
  return Attributes{shape, color, pi * 3 + pj};
}

// Per-cell lit statistics for the semantic featurizer.
struct CellStats {
  bool occupied = false;
  int color = -1;  // nearest palette entry of the lit mean, -1 if none
  int lit_count = 0;
};

inline CellStats cell_stats(const ToyImage& img, int r0, int c0, int cell) {
  CellStats s;
  float mean[3] = {0, 0, 0};
  for (int r = 0; r < cell; r++)
    for (int c = 0; c < cell; c++) {
      const float* p = img.px(r0 + r, c0 + c);
      if (!pixel_lit(p)) continue;
      s.lit_count++;
      mean[0] += p[0];
      mean[1] += p[1];
      mean[2] += p[2];
    }
  if (s.lit_count < cell * cell / 8) return s;
  s.occupied = true;
  for (int i = 0; i < 3; i++) mean[i] /= s.lit_count;
  s.color = nearest_palette_color(mean);
  return s;
}

// ---- Caption and instruction codecs over the word vocabulary ----
//
// Word ids sit at the low end of the text vocabulary. Captions follow one
// fixed template so exact-match evaluation is meaningful.
namespace words {
inline constexpr int a = 0, the = 1, in = 2, describe = 3, make = 4, it = 5,
                     move = 6, to = 7;
inline constexpr int color0 = 8;   // 6 color words
inline constexpr int shape0 = 14;  // 4 shape words
inline constexpr int pos0 = 18;    // 9 position words
inline constexpr int count = 27;
}  // namespace words

inline constexpr int kCaptionLen = 6;

inline std::string word_name(int id) {
  switch (id) {
    case words::a: return "a";
    case words::the: return "the";
    case words::in: return "in";
    case words::describe: return "describe";
    case words::make: return "make";
    case words::it: return "it";
    case words::move: return "move";
    case words::to: return "to";
    default: break;
  }
  if (id >= words::color0 && id < words::color0 + kNumColors)
    return kColorNames[id - words::color0];
  if (id >= words::shape0 && id < words::shape0 + kNumShapes)
    return kShapeNames[id - words::shape0];
  if (id >= words::pos0 && id < words::pos0 + kNumPositions)
    return kPositionNames[id - words::pos0];
  return "<text:" + std::to_string(id) + ">";
}

inline std::optional<int> word_id(const std::string& name) {
  for (int i = 0; i < words::count; i++)
    if (word_name(i) == name) return i;
  return std::nullopt;
}

// "a <color> <shape> in the <position>"
inline std::vector<int> caption_tokens(const Attributes& a) {
  return {words::a, words::color0 + a.color, words::shape0 + a.shape,
          words::in, words::the, words::pos0 + a.position};
}

inline std::optional<Attributes> parse_caption(const std::vector<int>& toks) {
  if (toks.size() != kCaptionLen) return std::nullopt;
  if (toks[0] != words::a || toks[3] != words::in || toks[4] != words::the)
    return std::nullopt;
  int color = toks[1] - words::color0;
  int shape = toks[2] - words::shape0;
  int pos = toks[5] - words::pos0;
  if (color < 0 || color >= kNumColors || shape < 0 || shape >= kNumShapes ||
      pos < 0 || pos >= kNumPositions)
    return std::nullopt;
  return Attributes{shape, color, pos};
}

inline std::string caption_text(const Attributes& a) {
  std::string out;
  for (int t : caption_tokens(a)) {
    if (!out.empty()) out += ' ';
    out += word_name(t);
  }
  return out;
}

enum class EditKind { Recolor, Reshape, Move };

struct EditOp {
  EditKind kind = EditKind::Recolor;
  int value = 0;  // color, shape, or position index depending on kind
};

// "make it <color>" | "make it a <shape>" | "move it to the <position>"
inline std::vector<int> instruction_tokens(const EditOp& e) {
  switch (e.kind) {
    case EditKind::Recolor:
      return {words::make, words::it, words::color0 + e.value};
    case EditKind::Reshape:
      return {words::make, words::it, words::a, words::shape0 + e.value};
    case EditKind::Move:
      return {words::move, words::it, words::to, words::the,
              words::pos0 + e.value};
  }
  throw ConfigError("invalid edit kind");
}

inline std::optional<EditOp> parse_instruction(const std::vector<int>& toks) {
  if (toks.size() == 3 && toks[0] == words::make && toks[1] == words::it) {
    int c = toks[2] - words::color0;
    if (c >= 0 && c < kNumColors) return EditOp{EditKind::Recolor, c};
    return std::nullopt;
  }
  if (toks.size() == 4 && toks[0] == words::make && toks[1] == words::it &&
      toks[2] == words::a) {
    int s = toks[3] - words::shape0;
    if (s >= 0 && s < kNumShapes) return EditOp{EditKind::Reshape, s};
    return std::nullopt;
  }
  if (toks.size() == 5 && toks[0] == words::move && toks[1] == words::it &&
      toks[2] == words::to && toks[3] == words::the) {
    int p = toks[4] - words::pos0;
    if (p >= 0 && p < kNumPositions) return EditOp{EditKind::Move, p};
    return std::nullopt;
  }
  return std::nullopt;
}

inline Attributes apply_edit(Attributes a, const EditOp& e) {
  switch (e.kind) {
    case EditKind::Recolor: a.color = e.value; break;
    case EditKind::Reshape: a.shape = e.value; break;
    case EditKind::Move: a.position = e.value; break;
  }
  return a;
}

}  // namespace unimot

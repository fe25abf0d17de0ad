#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unimot/codebook.hpp"
#include "unimot/errors.hpp"
#include "unimot/rng.hpp"
#include "unimot/sequence.hpp"
#include "unimot/tokenizer.hpp"
#include "unimot/vocab.hpp"
#include "unimot/world.hpp"

namespace unimot {

// World build options. use_sem / use_pix pick the image-block composition
// (the representation ablation rows); the vocabulary layout stays fixed so
// model shapes are comparable across rows.
struct WorldConfig {
  TokenizerConfig tok;
  int text_size = 256;
  bool use_sem = true;
  bool use_pix = true;
  int kmeans_iters = 25;
  int jitter_copies = 2;      // jittered render copies added to codebook data
  float jitter_amp = 0.02f;   // uniform pixel jitter, below all oracle gates
  uint64_t seed = 1234;

  int s() const { return use_sem ? tok.sem_tokens() : 0; }
  int p() const { return use_pix ? tok.pix_tokens() : 0; }
  int block_len() const { return block_length(s(), p()); }
};

struct World {
  WorldConfig cfg;
  VocabLayout vocab;
  Codebook pix_cb, sem_cb;
  SemanticFeaturizer featurizer;

  ToyImage render(const Attributes& a) const {
    return render_concept(a, cfg.tok.img);
  }
  std::vector<int> image_block(const ToyImage& img) const {
    std::vector<int> sem, pix;
    if (cfg.use_sem) sem = encode_semantic(img, sem_cb, featurizer);
    if (cfg.use_pix) pix = encode_pixel(img, pix_cb, cfg.tok.patch);
    return assemble_image_block(sem, pix, vocab);
  }
  // Best-available raster for a generated block: pixel paste-back when the
  // block carries pixel tokens, quadrant paint-back otherwise.
  ToyImage decode_block(const BlockCodes& codes) const {
    if (cfg.use_pix)
      return decode_pixel(codes.pix, pix_cb, cfg.tok.patch, cfg.tok.img);
    return decode_semantic(codes.sem, sem_cb, cfg.tok.grid, cfg.tok.img);
  }
};

// Trains both codebooks on renders of every concept plus seeded jittered
// copies. The jitter keeps training vectors distinct (k-means needs more
// distinct vectors than codewords) without moving any image past the
// attribute oracle's gates.
inline World build_world(const WorldConfig& cfg) {
  World w;
  w.cfg = cfg;
  w.vocab = VocabLayout{cfg.text_size, cfg.tok.sem_k, cfg.tok.pix_k};
  w.vocab.validate();
  w.featurizer = SemanticFeaturizer::make(cfg.tok.grid);

  std::vector<float> pix_data, sem_data;
  Rng jrng(derive_seed(cfg.seed, 0xA06));
  for (int copy = 0; copy <= cfg.jitter_copies; copy++) {
    for (int i = 0; i < kNumConcepts; i++) {
      ToyImage img = render_concept(concept_at(i), cfg.tok.img);
      if (copy > 0) {
        for (float& v : img.rgb) {
          v += cfg.jitter_amp * (2.f * float(jrng.uniform()) - 1.f);
          v = std::clamp(v, 0.f, 1.f);
        }
      }
      auto pf = patch_features(img, cfg.tok.patch);
      pix_data.insert(pix_data.end(), pf.begin(), pf.end());
      auto sf = semantic_features(img, w.featurizer);
      sem_data.insert(sem_data.end(), sf.begin(), sf.end());
    }
  }
  const int pn = int(pix_data.size()) / cfg.tok.patch_dim();
  const int sn = int(sem_data.size()) / kSemFeatDim;
  w.pix_cb = train_codebook(pix_data.data(), pn, cfg.tok.patch_dim(),
                            cfg.tok.pix_k, cfg.kmeans_iters,
                            derive_seed(cfg.seed, 0xC0DE1));
  w.sem_cb = train_codebook(sem_data.data(), sn, kSemFeatDim, cfg.tok.sem_k,
                            cfg.kmeans_iters, derive_seed(cfg.seed, 0xC0DE2));
  return w;
}

struct Sample {
  TaskKind task = TaskKind::T2I;
  uint64_t seed = 0;
  Attributes attrs;        // scene attributes (source scene for Edit)
  Attributes target_attrs; // Edit only: attributes after the instruction
  EditOp edit;             // Edit only
  MultimodalSequence seq;
};

namespace detail {

inline void push_id(MultimodalSequence& s, int id, const VocabLayout& vocab) {
  s.ids.push_back(id);
  s.cls.push_back(vocab.classify(id));
}

inline void push_slots(MultimodalSequence& s, const std::vector<float>& rows,
                       int dim) {
  if (s.slot_dim == 0) s.slot_dim = dim;
  const int n = int(rows.size()) / dim;
  for (int i = 0; i < n; i++) {
    s.slot_pos.push_back(int(s.ids.size()));
    s.ids.push_back(-1);
    s.cls.push_back(TokenClass::UndImage);
  }
  s.slots.insert(s.slots.end(), rows.begin(), rows.end());
}

// Fills targets (shifted ids) and switches the loss on where the target id
// falls in [first_target, last_target] counted as target positions.
inline void finish_sequence(MultimodalSequence& s, int mask_from,
                            int mask_to) {
  const int n = int(s.ids.size());
  s.targets.assign(n, -1);
  s.loss_mask.assign(n, 0);
  for (int t = 0; t + 1 < n; t++) {
    s.targets[t] = s.ids[t + 1];  // -1 when the next position is a slot
    const int target_pos = t + 1;
    if (s.targets[t] >= 0 && target_pos >= mask_from && target_pos <= mask_to)
      s.loss_mask[t] = 1;
  }
}

}  // namespace detail

// Deterministic sample construction. `i2t_discrete` re-tags I2T images as a
// discrete generation block (stage-1 conditioning variant) instead of
// continuous understanding slots; the caption stays loss-bearing either way.
inline Sample gen_sample(const World& w, TaskKind task, uint64_t seed,
                         bool i2t_discrete = false) {
  Sample out;
  out.task = task;
  out.seed = seed;
  Rng rng(seed);
  out.attrs = concept_at(int(rng.below(kNumConcepts)));
  const VocabLayout& vocab = w.vocab;
  MultimodalSequence& s = out.seq;

  auto push_caption = [&](const Attributes& a) {
    for (int tok : caption_tokens(a)) detail::push_id(s, tok, vocab);
  };
  auto push_block = [&](const ToyImage& img) {
    for (int id : w.image_block(img)) detail::push_id(s, id, vocab);
  };

  switch (task) {
    case TaskKind::T2I: {
      detail::push_id(s, vocab.bos(), vocab);
      push_caption(out.attrs);
      const int block_begin = int(s.ids.size());
      push_block(w.render(out.attrs));
      const int block_end = int(s.ids.size()) - 1;
      detail::push_id(s, vocab.eos(), vocab);
      detail::finish_sequence(s, block_begin, block_end);
      break;
    }
    case TaskKind::I2T: {
      detail::push_id(s, vocab.bos(), vocab);
      ToyImage img = w.render(out.attrs);
      if (i2t_discrete) {
        push_block(img);
      } else {
        detail::push_slots(s, patch_features(img, w.cfg.tok.patch),
                           w.cfg.tok.patch_dim());
      }
      detail::push_id(s, words::describe, vocab);
      const int cap_begin = int(s.ids.size());
      push_caption(out.attrs);
      detail::push_id(s, vocab.eos(), vocab);
      detail::finish_sequence(s, cap_begin, int(s.ids.size()) - 1);
      break;
    }
    case TaskKind::Edit: {
      // Draw an edit kind, then a value different from the current one.
      int kind = int(rng.below(3));
      out.edit.kind = EditKind(kind);
      const int domain[3] = {kNumColors, kNumShapes, kNumPositions};
      const int current[3] = {out.attrs.color, out.attrs.shape,
                              out.attrs.position};
      int v = int(rng.below(uint64_t(domain[kind] - 1)));
      if (v >= current[kind]) v++;
      out.edit.value = v;
      out.target_attrs = apply_edit(out.attrs, out.edit);

      detail::push_id(s, vocab.bos(), vocab);
      push_block(w.render(out.attrs));
      for (int tok : instruction_tokens(out.edit))
        detail::push_id(s, tok, vocab);
      const int block_begin = int(s.ids.size());
      push_block(w.render(out.target_attrs));
      const int block_end = int(s.ids.size()) - 1;
      detail::push_id(s, vocab.eos(), vocab);
      detail::finish_sequence(s, block_begin, block_end);
      break;
    }
    case TaskKind::TextOnly: {
      detail::push_id(s, vocab.bos(), vocab);
      push_caption(out.attrs);
      detail::push_id(s, vocab.eos(), vocab);
      detail::finish_sequence(s, 1, int(s.ids.size()) - 1);
      break;
    }
  }
  validate_sequence(s, vocab);
  return out;
}

// ---- Ratio-controlled task mixing ----

struct MixSpec {
  std::vector<TaskKind> tasks;
  std::vector<int> weights;

  void validate() const {
    if (tasks.empty() || tasks.size() != weights.size())
      throw ConfigError("mix spec needs matching task and weight lists");
    long total = 0;
    for (int w : weights) {
      if (w <= 0) throw ConfigError("mix weights must be positive integers");
      total += w;
    }
    if (total <= 0) throw ConfigError("mix weights sum to zero");
  }
};

// Earliest-virtual-finish-time weighted round-robin: task i is emitted at
// virtual times (k+1)/w_i; the next emission is the smallest pending time,
// ties to the lowest index. Windows of length W then hold each task
// W*w/total +- 1 times, and full cycles hit the ratio exactly.
class MixStream {
 public:
  MixStream(MixSpec spec, uint64_t seed)
      : spec_(std::move(spec)), seed_(seed), emitted_(spec_.tasks.size(), 0) {
    spec_.validate();
  }

  struct Item {
    TaskKind task;
    uint64_t seed;
  };

  Item next() {
    size_t best = 0;
    for (size_t i = 1; i < emitted_.size(); i++) {
      // (e_i+1)/w_i < (e_best+1)/w_best, compared in integers.
      const uint64_t lhs = (emitted_[i] + 1) * uint64_t(spec_.weights[best]);
      const uint64_t rhs =
          (emitted_[best] + 1) * uint64_t(spec_.weights[i]);
      if (lhs < rhs) best = i;
    }
    emitted_[best]++;
    return {spec_.tasks[best], derive_seed(seed_, index_++)};
  }

 private:
  MixSpec spec_;
  uint64_t seed_;
  uint64_t index_ = 0;
  std::vector<uint64_t> emitted_;
};

// ---- Regenerable dataset snapshots: one line per sample ----

struct SnapshotRecord {
  TaskKind task;
  uint64_t seed;
  Attributes attrs;
};

inline void write_snapshot(const std::vector<SnapshotRecord>& records,
                           const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CheckpointError("snapshot: cannot open " + path);
  for (const auto& r : records)
    f << task_name(r.task) << ' ' << r.seed << ' ' << r.attrs.shape << ' '
      << r.attrs.color << ' ' << r.attrs.position << '\n';
  if (!f) throw CheckpointError("snapshot: short write to " + path);
}

inline std::vector<SnapshotRecord> read_snapshot(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("snapshot: cannot open " + path);
  std::vector<SnapshotRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    line_no++;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string task;
    SnapshotRecord r;
    if (!(ss >> task >> r.seed >> r.attrs.shape >> r.attrs.color >>
          r.attrs.position))
      throw CheckpointError("snapshot: malformed line " +
                            std::to_string(line_no) + " in " + path);
    bool found = false;
    for (int t = 0; t < kNumTasks; t++)
      if (task == task_name(TaskKind(t))) {
        r.task = TaskKind(t);
        found = true;
      }
    if (!found)
      throw CheckpointError("snapshot: unknown task '" + task + "' on line " +
                            std::to_string(line_no));
    out.push_back(r);
  }
  return out;
}

}  // namespace unimot

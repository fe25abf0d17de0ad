#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "unimot/data.hpp"
#include "unimot/decode.hpp"
#include "unimot/errors.hpp"
#include "unimot/image.hpp"
#include "unimot/model.hpp"
#include "unimot/trainer.hpp"
#include "unimot/world.hpp"

namespace unimot {

// Oracle-scored benchmark row. Understanding has three facets (whole-caption
// reads, per-token reads, and plain text modeling); harmonic_und is their
// harmonic mean, so one collapsed facet zeroes the summary.
struct EvalReport {
  double gen_accuracy = 0.0;
  double und_accuracy = 0.0;        // caption exact match from image slots
  double und_token_accuracy = 0.0;  // per-token caption accuracy
  double text_accuracy = 0.0;       // text-only next-token accuracy
  double pixel_ppl = 1.0;           // perplexity within the pixel id range
  double edit_accuracy = 0.0;
  double harmonic_und = 0.0;

  void validate() const {
    auto frac = [&](double v, const char* what) {
      if (!(v >= 0.0 && v <= 1.0))
        throw NumericError(std::string("eval: ") + what +
                           " outside [0,1]: " + std::to_string(v));
    };
    frac(gen_accuracy, "gen_accuracy");
    frac(und_accuracy, "und_accuracy");
    frac(und_token_accuracy, "und_token_accuracy");
    frac(text_accuracy, "text_accuracy");
    frac(edit_accuracy, "edit_accuracy");
    frac(harmonic_und, "harmonic_und");
    if (!(pixel_ppl >= 1.0))
      throw NumericError("eval: perplexity below 1: " +
                         std::to_string(pixel_ppl));
  }
};

inline double harmonic3(double a, double b, double c) {
  if (a <= 0.0 || b <= 0.0 || c <= 0.0) return 0.0;
  return 3.0 / (1.0 / a + 1.0 / b + 1.0 / c);
}

// Caption prompt for prompted image generation: bos + caption words.
inline MultimodalSequence t2i_prefix(const World& w, const Attributes& a) {
  MultimodalSequence s;
  detail::push_id(s, w.vocab.bos(), w.vocab);
  for (int tok : caption_tokens(a)) detail::push_id(s, tok, w.vocab);
  return s;
}

// Edit prompt: bos + source image block + instruction words.
inline MultimodalSequence edit_prefix(const World& w, const Attributes& src,
                                      const EditOp& op) {
  MultimodalSequence s;
  detail::push_id(s, w.vocab.bos(), w.vocab);
  for (int id : w.image_block(w.render(src))) detail::push_id(s, id, w.vocab);
  for (int tok : instruction_tokens(op)) detail::push_id(s, tok, w.vocab);
  return s;
}

// One prompted generation with every artifact kept: sampled block ids,
// decoded raster, and the attribute oracle's verdict (empty when the raster
// matches no concept).
struct PromptResult {
  ImageSample sample;
  ToyImage raster;
  std::optional<Attributes> judged;
};

inline PromptResult run_prompt(const MoTParams<float>& p, const World& w,
                               const MultimodalSequence& prefix,
                               const RoutingPolicy& policy,
                               const SampleRules& rules, Rng& rng) {
  DecodeSession sess(p);
  auto tags = route_tokens(prefix, policy, w.vocab);
  feed_sequence(sess, prefix, tags);
  PromptResult out;
  out.sample =
      generate_image(sess, w.vocab, w.cfg.s(), w.cfg.p(), rules, rng);
  out.raster = w.decode_block(out.sample.codes);
  out.judged = attribute_oracle(out.raster);
  return out;
}

// Greedy generation reduced to the oracle verdict.
inline std::optional<Attributes> prompted_generation(
    const MoTParams<float>& p, const World& w,
    const MultimodalSequence& prefix, const RoutingPolicy& policy, Rng& rng) {
  SampleRules greedy;
  greedy.temperature = 0.0f;
  return run_prompt(p, w, prefix, policy, greedy, rng).judged;
}

namespace detail {

// Teacher-forced argmax comparison over the masked span of one sequence.
struct SpanScore {
  long hits = 0;
  long total = 0;
  bool all = false;
};

inline SpanScore score_masked_span(MoTParams<float>& p, const World& w,
                                   const MultimodalSequence& seq,
                                   const RoutingPolicy& policy) {
  Graph<float> g;
  BoundModel<float> b = bind_model(g, p, nullptr);
  auto tags = route_tokens(seq, policy, w.vocab);
  auto fwd = forward_sequence(g, b, p, seq, tags);
  SpanScore out;
  for (size_t t = 0; t + 1 < seq.size(); t++) {
    if (!seq.loss_mask[t]) continue;
    auto pl = position_logits(g, fwd, int(t));
    int best = 0;
    for (int k = 1; k < pl.width; k++)
      if (pl.ptr[k] > pl.ptr[best]) best = k;
    out.total++;
    if (best == seq.targets[t]) out.hits++;
  }
  out.all = out.total > 0 && out.hits == out.total;
  return out;
}

}  // namespace detail

struct GenerationEval {
  double gen_accuracy = 0.0;
  double pixel_ppl = 1.0;
};

// Prompted greedy generation scored by the attribute oracle, plus
// teacher-forced perplexity over held-out pixel tokens renormalized to the
// pixel id range (so chance level is the pixel codebook size).
inline GenerationEval eval_generation(MoTParams<float>& p, const World& w,
                                      int n, uint64_t seed,
                                      const RoutingPolicy& policy = {}) {
  if (n <= 0) throw ConfigError("eval: sample count must be positive");
  GenerationEval out;
  Rng rng(derive_seed(seed, 0xE0A1));
  int hits = 0;
  for (int i = 0; i < n; i++) {
    const Attributes want = concept_at(int(rng.below(kNumConcepts)));
    auto got = prompted_generation(p, w, t2i_prefix(w, want), policy, rng);
    if (got && got->shape == want.shape && got->color == want.color &&
        got->position == want.position)
      hits++;
  }
  out.gen_accuracy = double(hits) / n;

  if (w.cfg.p() > 0) {
    const int held = std::min(n, 64);
    double nll = 0.0;
    long count = 0;
    const int base = w.vocab.pix_begin();
    const int k = w.vocab.pix_size;
    for (int i = 0; i < held; i++) {
      Sample s =
          gen_sample(w, TaskKind::T2I, derive_seed(seed, 0x9E1D00 + i));
      Graph<float> g;
      BoundModel<float> b = bind_model(g, p, nullptr);
      auto tags = route_tokens(s.seq, policy, w.vocab);
      auto fwd = forward_sequence(g, b, p, s.seq, tags);
      for (size_t t = 0; t + 1 < s.seq.size(); t++) {
        if (!s.seq.loss_mask[t]) continue;
        const int target = s.seq.targets[t];
        if (w.vocab.classify(target) != TokenClass::PixGen) continue;
        auto pl = position_logits(g, fwd, int(t));
        if (pl.expert != Expert::Gen)
          throw ConfigError("eval: pixel target scored off the generation head");
        double mx = pl.ptr[base];
        for (int c = 1; c < k; c++) mx = std::max(mx, double(pl.ptr[base + c]));
        double z = 0.0;
        for (int c = 0; c < k; c++) z += std::exp(double(pl.ptr[base + c]) - mx);
        nll -= double(pl.ptr[target]) - mx - std::log(z);
        count++;
      }
    }
    if (count > 0) out.pixel_ppl = std::exp(nll / double(count));
  }
  return out;
}

struct UnderstandingEval {
  double caption_exact = 0.0;
  double token_accuracy = 0.0;
};

// Teacher-forced caption reading from continuous image slots.
inline UnderstandingEval eval_understanding(MoTParams<float>& p,
                                            const World& w, int n,
                                            uint64_t seed,
                                            const RoutingPolicy& policy = {}) {
  if (n <= 0) throw ConfigError("eval: sample count must be positive");
  UnderstandingEval out;
  int exact = 0;
  long hits = 0, total = 0;
  for (int i = 0; i < n; i++) {
    Sample s = gen_sample(w, TaskKind::I2T, derive_seed(seed, 0xCAB000 + i));
    auto sc = detail::score_masked_span(p, w, s.seq, policy);
    exact += sc.all ? 1 : 0;
    hits += sc.hits;
    total += sc.total;
  }
  out.caption_exact = double(exact) / n;
  out.token_accuracy = total > 0 ? double(hits) / double(total) : 0.0;
  return out;
}

// Teacher-forced next-token accuracy on text-only sequences. The attribute
// words are independently sampled, so the ceiling sits well below 1; the
// number is meaningful as a comparison across variants, not in isolation.
inline double eval_text(MoTParams<float>& p, const World& w, int n,
                        uint64_t seed, const RoutingPolicy& policy = {}) {
  if (n <= 0) throw ConfigError("eval: sample count must be positive");
  long hits = 0, total = 0;
  for (int i = 0; i < n; i++) {
    Sample s =
        gen_sample(w, TaskKind::TextOnly, derive_seed(seed, 0x7E7000 + i));
    auto sc = detail::score_masked_span(p, w, s.seq, policy);
    hits += sc.hits;
    total += sc.total;
  }
  return total > 0 ? double(hits) / double(total) : 0.0;
}

// Greedy edited-image generation; a hit changes the instructed attribute to
// its target value and preserves the other two.
inline double eval_edit(MoTParams<float>& p, const World& w, int n,
                        uint64_t seed, const RoutingPolicy& policy = {}) {
  if (n <= 0) throw ConfigError("eval: sample count must be positive");
  Rng rng(derive_seed(seed, 0xED17));
  int hits = 0;
  for (int i = 0; i < n; i++) {
    Sample s = gen_sample(w, TaskKind::Edit, derive_seed(seed, 0xED1700 + i));
    auto got =
        prompted_generation(p, w, edit_prefix(w, s.attrs, s.edit), policy, rng);
    if (got && got->shape == s.target_attrs.shape &&
        got->color == s.target_attrs.color &&
        got->position == s.target_attrs.position)
      hits++;
  }
  return double(hits) / n;
}

inline EvalReport evaluate_model(MoTParams<float>& p, const World& w, int n,
                                 uint64_t seed,
                                 const RoutingPolicy& policy = {}) {
  EvalReport r;
  const GenerationEval ge = eval_generation(p, w, n, seed, policy);
  r.gen_accuracy = ge.gen_accuracy;
  r.pixel_ppl = ge.pixel_ppl;
  const UnderstandingEval ue = eval_understanding(p, w, n, seed, policy);
  r.und_accuracy = ue.caption_exact;
  r.und_token_accuracy = ue.token_accuracy;
  r.text_accuracy = eval_text(p, w, n, seed, policy);
  r.edit_accuracy = eval_edit(p, w, n, seed, policy);
  r.harmonic_und =
      harmonic3(r.und_accuracy, r.und_token_accuracy, r.text_accuracy);
  r.validate();
  return r;
}

// ---- Ablation harness ----

// Shared training budget for every ablation leg: same pretraining, same
// generative-stage sample count, same evaluation size, same seeds.
struct AblationBudget {
  int64_t pretrain_samples = 6400;
  int64_t gen_samples = 12800;
  int eval_n = 200;
  uint64_t seed = 1;
  // Scaled-down studies need a hotter generative stage than the full
  // schedule; legs stay comparable because every variant shares it.
  double gen_lr = 3e-4;
};

namespace detail {

inline StageConfig scaled_pretrain(int64_t samples) {
  StageConfig c = pretrain_config();
  c.total_samples = samples;
  c.warmup_steps = std::min(c.warmup_steps, c.total_steps() / 5);
  return c;
}

inline StageConfig scaled_stage1(int64_t samples, const RoutingPolicy& pol,
                                 double lr) {
  StageConfig c = stage1_config();
  c.learning_rate = lr;
  c.total_samples = samples;
  c.warmup_steps = std::min(c.warmup_steps, c.total_steps() / 5);
  c.policy = pol;
  return c;
}

}  // namespace detail

// Understanding-only pretraining of a fresh backbone; the result is the
// shared starting point for ablation legs.
inline MoTParams<float> pretrain_backbone(const World& w,
                                          const ModelConfig& mc,
                                          const AblationBudget& b) {
  MoTParams<float> p = init_model<float>(mc);
  OptimizerState<float> opt = init_optimizer(p);
  TrainerState ts;
  ts.run_seed = derive_seed(b.seed, 0xA11);
  RunStageOptions opts;
  opts.holdout_size = 8;
  run_stage(w, p, opt, ts, detail::scaled_pretrain(b.pretrain_samples), opts);
  return p;
}

// Generative training of a promoted model under one routing policy.
inline void train_generation_stage(const World& w, MoTParams<float>& p,
                                   const AblationBudget& b,
                                   const RoutingPolicy& policy) {
  OptimizerState<float> opt = init_optimizer(p);
  TrainerState ts;
  ts.run_seed = derive_seed(b.seed, 0xA11);
  ts.stage_index = 1;
  RunStageOptions opts;
  opts.holdout_size = 8;
  run_stage(w, p, opt, ts,
            detail::scaled_stage1(b.gen_samples, policy, b.gen_lr), opts);
}

struct RepresentationRow {
  std::string label;
  int sem_tokens = 0;
  int pix_tokens = 0;
  EvalReport report;
};

// Image-block composition sweep at a fixed vocabulary layout and budget:
// pixel-only, semantic-only, and combined rows at two semantic grids. Every
// leg trains its own fresh model; only the block composition varies, which
// the harness enforces by comparing vocabularies and codebooks.
inline std::vector<RepresentationRow> ablate_representation(
    const ModelConfig& model_proto, const AblationBudget& b,
    std::ostream* log = nullptr) {
  struct VariantSpec {
    const char* label;
    bool use_sem, use_pix;
    int grid;
  };
  const VariantSpec variants[] = {
      {"0/16", false, true, 3},  {"16/0", true, false, 4},
      {"16/16", true, true, 4}, {"9/0", true, false, 3},
      {"9/16", true, true, 3},
  };

  std::vector<RepresentationRow> rows;
  std::optional<Codebook> shared_pix;
  std::optional<VocabLayout> shared_vocab;
  for (const VariantSpec& v : variants) {
    WorldConfig wc;
    wc.use_sem = v.use_sem;
    wc.use_pix = v.use_pix;
    wc.tok.grid = v.grid;
    wc.seed = derive_seed(b.seed, 0xB00);
    World w = build_world(wc);

    // Single-variable discipline: the id space never moves, and every
    // pixel-bearing leg quantizes with the identical codebook.
    if (!shared_vocab) shared_vocab = w.vocab;
    if (w.vocab.total() != shared_vocab->total() ||
        w.vocab.pix_begin() != shared_vocab->pix_begin())
      throw ConfigError("ablation: vocabulary layout drifted between legs");
    if (v.use_pix) {
      if (!shared_pix) shared_pix = w.pix_cb;
      if (w.pix_cb.words != shared_pix->words)
        throw ConfigError("ablation: pixel codebook differs between legs");
    }

    ModelConfig mc = model_proto;
    mc.vocab = w.vocab;
    MoTParams<float> p = pretrain_backbone(w, mc, b);
    promote_backbone(p);
    train_generation_stage(w, p, b, RoutingPolicy{});

    RepresentationRow row;
    row.label = v.label;
    row.sem_tokens = w.cfg.s();
    row.pix_tokens = w.cfg.p();
    row.report = evaluate_model(p, w, b.eval_n, derive_seed(b.seed, 0xE7A1));
    if (log)
      *log << "representation " << row.label << ": sem=" << row.sem_tokens
           << " pix=" << row.pix_tokens
           << " gen_acc=" << row.report.gen_accuracy << '\n';
    rows.push_back(std::move(row));
  }
  return rows;
}

struct ArchitectureAblation {
  EvalReport mot_before, mot_after;
  EvalReport dense_before, dense_after;
};

// Dense-vs-routed comparison from one shared pretrained backbone. The dense
// leg routes every token through the trainable promoted copy, so generative
// training rewrites the weights its understanding depends on; the routed leg
// leaves the frozen path untouched by construction.
inline ArchitectureAblation ablate_architecture(const World& w,
                                                const ModelConfig& mc,
                                                const AblationBudget& b,
                                                std::ostream* log = nullptr) {
  const MoTParams<float> backbone = pretrain_backbone(w, mc, b);
  const RoutingPolicy routed{Expert::Und, Expert::Und};
  const RoutingPolicy dense{Expert::Gen, Expert::Gen};
  const uint64_t eval_seed = derive_seed(b.seed, 0xE7A1);

  ArchitectureAblation out;
  {
    MoTParams<float> p = backbone;
    promote_backbone(p);
    out.mot_before = evaluate_model(p, w, b.eval_n, eval_seed, routed);
    train_generation_stage(w, p, b, routed);
    out.mot_after = evaluate_model(p, w, b.eval_n, eval_seed, routed);
  }
  {
    MoTParams<float> p = backbone;
    promote_backbone(p);
    out.dense_before = evaluate_model(p, w, b.eval_n, eval_seed, dense);
    train_generation_stage(w, p, b, dense);
    out.dense_after = evaluate_model(p, w, b.eval_n, eval_seed, dense);
  }
  if (log)
    *log << "architecture: mot harmonic_und " << out.mot_before.harmonic_und
         << " -> " << out.mot_after.harmonic_und << ", dense "
         << out.dense_before.harmonic_und << " -> "
         << out.dense_after.harmonic_und << '\n';
  return out;
}

struct RoutingRow {
  std::string label;
  RoutingPolicy policy;
  EvalReport report;
};

// One row per routing policy, each trained from the same pretrained
// backbone under its own policy and evaluated under that policy.
inline std::vector<RoutingRow> ablate_routing(const World& w,
                                              const ModelConfig& mc,
                                              const AblationBudget& b,
                                              std::ostream* log = nullptr) {
  const MoTParams<float> backbone = pretrain_backbone(w, mc, b);
  const RoutingPolicy policies[] = {
      {Expert::Und, Expert::Und},
      {Expert::Gen, Expert::Und},
      {Expert::Und, Expert::Gen},
      {Expert::Gen, Expert::Gen},
  };
  std::vector<RoutingRow> rows;
  for (const RoutingPolicy& pol : policies) {
    MoTParams<float> p = backbone;
    promote_backbone(p);
    train_generation_stage(w, p, b, pol);
    RoutingRow row;
    row.label = policy_name(pol);
    row.policy = pol;
    row.report =
        evaluate_model(p, w, b.eval_n, derive_seed(b.seed, 0xE7A1), pol);
    if (log)
      *log << "routing " << row.label << ": harmonic_und "
           << row.report.harmonic_und << " gen_acc "
           << row.report.gen_accuracy << '\n';
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- Report output ----

inline constexpr const char* kEvalCsvHeader =
    "row,gen_accuracy,und_accuracy,und_token_accuracy,text_accuracy,"
    "pixel_ppl,edit_accuracy,harmonic_und";

inline void write_eval_csv_row(std::ostream& os, const std::string& label,
                               const EvalReport& r) {
  os << label << ',' << r.gen_accuracy << ',' << r.und_accuracy << ','
     << r.und_token_accuracy << ',' << r.text_accuracy << ',' << r.pixel_ppl
     << ',' << r.edit_accuracy << ',' << r.harmonic_und << '\n';
}

inline void print_eval_table(
    std::ostream& os,
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
  os << std::left << std::setw(12) << "row" << std::right << std::setw(10)
     << "gen_acc" << std::setw(10) << "und_acc" << std::setw(10) << "und_tok"
     << std::setw(10) << "text_acc" << std::setw(10) << "pix_ppl"
     << std::setw(10) << "edit_acc" << std::setw(10) << "harm_und" << '\n';
  for (const auto& [label, r] : rows) {
    os << std::left << std::setw(12) << label << std::right << std::fixed
       << std::setprecision(4) << std::setw(10) << r.gen_accuracy
       << std::setw(10) << r.und_accuracy << std::setw(10)
       << r.und_token_accuracy << std::setw(10) << r.text_accuracy
       << std::setw(10) << r.pixel_ppl << std::setw(10) << r.edit_accuracy
       << std::setw(10) << r.harmonic_und << '\n';
    os.unsetf(std::ios::floatfield);
    os << std::setprecision(6);
  }
}

}  // namespace unimot

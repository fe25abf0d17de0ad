#pragma once

// Autoregressive decoding. The KV-cached session below re-implements the
// routed forward pass incrementally with plain loops, on purpose: it shares
// no evaluation code with the training graph, so replay tests cross-check
// the two paths against each other. Sampling is range-constrained and the
// image block is driven by an explicit phase machine, which makes emitting
// a structurally invalid block impossible rather than merely unlikely.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/model.hpp"
#include "unimot/rng.hpp"
#include "unimot/sequence.hpp"
#include "unimot/tokenizer.hpp"
#include "unimot/vocab.hpp"

namespace unimot {

struct SampleRules {
  float temperature = 1.0f;
  int top_k = 0;  // 0 keeps the full distribution
};

// Draws one token from masked, temperature-scaled, optionally top-k
// truncated logits. Temperature zero is exact argmax with ties broken
// toward the lowest id. Non-finite logits on any allowed token abort.
inline int sample_token(const std::vector<float>& logits,
                        const std::vector<uint8_t>& allowed,
                        const SampleRules& rules, Rng& rng) {
  if (logits.size() != allowed.size())
    throw ConfigError("sample: allowed mask width " +
                      std::to_string(allowed.size()) +
                      " does not match logit width " +
                      std::to_string(logits.size()));
  if (rules.temperature < 0.0f)
    throw ConfigError("sample: temperature must be >= 0");
  if (rules.top_k < 0) throw ConfigError("sample: top_k must be >= 0");

  std::vector<int> ids;
  for (size_t i = 0; i < logits.size(); i++) {
    if (!allowed[i]) continue;
    if (!std::isfinite(logits[i]))
      throw NumericError("sample: non-finite logit for token " +
                         std::to_string(i));
    ids.push_back(int(i));
  }
  if (ids.empty()) throw ConfigError("sample: every token is masked out");

  if (rules.temperature == 0.0f) {
    int best = ids[0];
    for (int i : ids)
      if (logits[size_t(i)] > logits[size_t(best)]) best = i;
    return best;
  }

  if (rules.top_k > 0 && rules.top_k < int(ids.size())) {
    std::sort(ids.begin(), ids.end(), [&](int a, int b) {
      if (logits[size_t(a)] != logits[size_t(b)])
        return logits[size_t(a)] > logits[size_t(b)];
      return a < b;
    });
    ids.resize(size_t(rules.top_k));
    std::sort(ids.begin(), ids.end());
  }

  double mx = -std::numeric_limits<double>::infinity();
  for (int i : ids)
    mx = std::max(mx, double(logits[size_t(i)]) / rules.temperature);
  std::vector<double> w(ids.size());
  double z = 0;
  for (size_t i = 0; i < ids.size(); i++) {
    w[i] = std::exp(double(logits[size_t(ids[i])]) / rules.temperature - mx);
    z += w[i];
  }
  const double u = rng.uniform() * z;
  double cum = 0;
  for (size_t i = 0; i < ids.size(); i++) {
    cum += w[i];
    if (u < cum) return ids[i];
  }
  return ids.back();
}

// Phase machine over the image block grammar BOI, s semantic codes, p pixel
// codes, EOI. `allowed()` is the exact legal token set for the next step,
// and `advance` refuses anything outside it.
enum class BlockPhase { AwaitBOI, Semantic, Pixel, AwaitEOI, Done };

class DecodeState {
 public:
  DecodeState(const VocabLayout& vocab, int n_sem, int n_pix)
      : vocab_(vocab), n_sem_(n_sem), n_pix_(n_pix) {
    if (n_sem < 0 || n_pix < 0 || n_sem + n_pix == 0)
      throw ConfigError("decode: block must carry at least one payload token");
  }

  BlockPhase phase() const { return phase_; }
  int consumed() const { return consumed_; }

  std::vector<uint8_t> allowed() const {
    std::vector<uint8_t> mask(size_t(vocab_.total()), 0);
    switch (phase_) {
      case BlockPhase::AwaitBOI: mask[size_t(vocab_.boi())] = 1; break;
      case BlockPhase::Semantic:
        for (int c = 0; c < vocab_.sem_size; c++)
          mask[size_t(vocab_.sem_id(c))] = 1;
        break;
      case BlockPhase::Pixel:
        for (int c = 0; c < vocab_.pix_size; c++)
          mask[size_t(vocab_.pix_id(c))] = 1;
        break;
      case BlockPhase::AwaitEOI: mask[size_t(vocab_.eoi())] = 1; break;
      case BlockPhase::Done: break;
    }
    return mask;
  }

  void advance(int id) {
    switch (phase_) {
      case BlockPhase::AwaitBOI:
        if (id != vocab_.boi())
          throw GrammarError("image block must start with BOI", consumed_);
        phase_ = n_sem_ > 0 ? BlockPhase::Semantic : BlockPhase::Pixel;
        break;
      case BlockPhase::Semantic:
        if (vocab_.classify(id) != TokenClass::SemGen)
          throw GrammarError("expected a semantic code", consumed_);
        if (++seen_sem_ == n_sem_)
          phase_ = n_pix_ > 0 ? BlockPhase::Pixel : BlockPhase::AwaitEOI;
        break;
      case BlockPhase::Pixel:
        if (vocab_.classify(id) != TokenClass::PixGen)
          throw GrammarError("expected a pixel code", consumed_);
        if (++seen_pix_ == n_pix_) phase_ = BlockPhase::AwaitEOI;
        break;
      case BlockPhase::AwaitEOI:
        if (id != vocab_.eoi())
          throw GrammarError("image block must close with EOI", consumed_);
        phase_ = BlockPhase::Done;
        break;
      case BlockPhase::Done:
        throw GrammarError("image block already complete", consumed_);
    }
    consumed_++;
  }

 private:
  VocabLayout vocab_;
  int n_sem_, n_pix_;
  BlockPhase phase_ = BlockPhase::AwaitBOI;
  int seen_sem_ = 0, seen_pix_ = 0;
  int consumed_ = 0;
};

// KV-cached incremental forward over the dual-expert stack. Each fed
// position runs only its own expert's dense math; attention reads the
// shared per-layer key/value cache, so routing history is joint exactly as
// in the batch forward.
class DecodeSession {
 public:
  explicit DecodeSession(const MoTParams<float>& params) : p_(&params) {
    p_->cfg.validate();
    k_.assign(size_t(p_->cfg.n_layers), {});
    v_.assign(size_t(p_->cfg.n_layers), {});
  }

  int length() const { return t_; }

  std::vector<float> feed_token(int id, Expert tag) {
    const ExpertStack<float>& st = stack(tag);
    if (id < 0 || id >= st.vocab_rows())
      throw ConfigError("decode: token id " + std::to_string(id) +
                        " outside the expert vocabulary of " +
                        std::to_string(st.vocab_rows()));
    const int d = p_->cfg.d_model;
    std::vector<float> x(st.embed.row_ptr(id), st.embed.row_ptr(id) + d);
    return step(std::move(x), st);
  }

  std::vector<float> feed_slot(const std::vector<float>& feats, Expert tag) {
    const ModelConfig& cfg = p_->cfg;
    if (int(feats.size()) != cfg.slot_dim)
      throw ConfigError("decode: slot feature width " +
                        std::to_string(feats.size()) + " does not match " +
                        std::to_string(cfg.slot_dim));
    std::vector<float> x(size_t(cfg.d_model), 0.0f);
    for (int i = 0; i < cfg.slot_dim; i++) {
      const float fi = feats[size_t(i)];
      const float* pr = p_->projector.row_ptr(i);
      for (int j = 0; j < cfg.d_model; j++) x[size_t(j)] += fi * pr[j];
    }
    return step(std::move(x), stack(tag));
  }

 private:
  const ExpertStack<float>& stack(Expert tag) const {
    if (tag == Expert::Und) return p_->und;
    if (!p_->has_gen)
      throw ConfigError("decode: token routed to missing generation expert");
    return p_->gen;
  }

  std::vector<float> rms_row(const std::vector<float>& x,
                             const Tensor<float>& gain) const {
    const int d = int(x.size());
    float ss = 0;
    for (float u : x) ss += u * u;
    const float inv = 1.0f / std::sqrt(ss / float(d) + 1e-6f);
    std::vector<float> out(static_cast<size_t>(d));
    for (int j = 0; j < d; j++)
      out[size_t(j)] = x[size_t(j)] * gain.data[size_t(j)] * inv;
    return out;
  }

  static std::vector<float> matvec(const std::vector<float>& x,
                                   const Tensor<float>& w) {
    std::vector<float> out(size_t(w.cols()), 0.0f);
    for (int i = 0; i < w.rows(); i++) {
      const float xi = x[size_t(i)];
      const float* wr = w.row_ptr(i);
      for (int j = 0; j < w.cols(); j++) out[size_t(j)] += xi * wr[j];
    }
    return out;
  }

  void rope_row(std::vector<float>& x, int pos) const {
    const int H = p_->cfg.n_heads, hd = p_->cfg.d_model / H;
    for (int h = 0; h < H; h++)
      for (int j = 0; j < hd / 2; j++) {
        const float freq =
            std::pow(float(p_->cfg.rope_base), -2.0f * float(j) / float(hd));
        const float a = float(pos) * freq;
        const float c = std::cos(a), s = std::sin(a);
        const int c0 = h * hd + 2 * j, c1 = c0 + 1;
        const float u0 = x[size_t(c0)], u1 = x[size_t(c1)];
        x[size_t(c0)] = u0 * c - u1 * s;
        x[size_t(c1)] = u0 * s + u1 * c;
      }
  }

  std::vector<float> step(std::vector<float> x, const ExpertStack<float>& st) {
    const ModelConfig& cfg = p_->cfg;
    const int d = cfg.d_model, H = cfg.n_heads, hd = d / H;
    for (int layer = 0; layer < cfg.n_layers; layer++) {
      const ExpertLayer<float>& L = st.layers[size_t(layer)];
      std::vector<float> h = rms_row(x, L.attn_gain);
      std::vector<float> q = matvec(h, L.wq);
      std::vector<float> k = matvec(h, L.wk);
      std::vector<float> v = matvec(h, L.wv);
      rope_row(q, t_);
      rope_row(k, t_);
      auto& kc = k_[size_t(layer)];
      auto& vc = v_[size_t(layer)];
      kc.insert(kc.end(), k.begin(), k.end());
      vc.insert(vc.end(), v.begin(), v.end());
      const int rows = t_ + 1;
      std::vector<float> attn(size_t(d), 0.0f);
      std::vector<float> sc(static_cast<size_t>(rows));
      for (int hh = 0; hh < H; hh++) {
        const int off = hh * hd;
        float mx = -std::numeric_limits<float>::infinity();
        for (int j = 0; j < rows; j++) {
          const float* kj = kc.data() + size_t(j) * size_t(d) + off;
          float s = 0;
          for (int c = 0; c < hd; c++) s += q[size_t(off + c)] * kj[c];
          s /= std::sqrt(float(hd));
          sc[size_t(j)] = s;
          mx = std::max(mx, s);
        }
        float z = 0;
        for (int j = 0; j < rows; j++) {
          sc[size_t(j)] = std::exp(sc[size_t(j)] - mx);
          z += sc[size_t(j)];
        }
        for (int j = 0; j < rows; j++) {
          const float pj = sc[size_t(j)] / z;
          const float* vj = vc.data() + size_t(j) * size_t(d) + off;
          for (int c = 0; c < hd; c++) attn[size_t(off + c)] += pj * vj[c];
        }
      }
      std::vector<float> o = matvec(attn, L.wo);
      for (int j = 0; j < d; j++) x[size_t(j)] += o[size_t(j)];

      std::vector<float> h2 = rms_row(x, L.ffn_gain);
      std::vector<float> f1 = matvec(h2, L.w1);
      for (auto& u : f1) u = u / (1.0f + std::exp(-u));
      std::vector<float> f = matvec(f1, L.w2);
      for (int j = 0; j < d; j++) x[size_t(j)] += f[size_t(j)];
    }
    t_++;
    return matvec(rms_row(x, st.final_gain), st.head);
  }

  const MoTParams<float>* p_;
  std::vector<std::vector<float>> k_, v_;  // per layer, one row per position
  int t_ = 0;
};

// Feeds every position of a prepared sequence; returns the logits emitted
// after the last position (the prediction for whatever comes next).
inline std::vector<float> feed_sequence(DecodeSession& sess,
                                        const MultimodalSequence& seq,
                                        const std::vector<Expert>& tags) {
  if (tags.size() != seq.size())
    throw ConfigError("decode: routing tags do not cover the sequence");
  std::vector<float> logits;
  size_t slot_row = 0;
  for (size_t t = 0; t < seq.size(); t++) {
    if (seq.ids[t] < 0) {
      std::vector<float> feats(
          seq.slots.begin() + long(slot_row) * seq.slot_dim,
          seq.slots.begin() + long(slot_row + 1) * seq.slot_dim);
      logits = sess.feed_slot(feats, tags[t]);
      slot_row++;
    } else {
      logits = sess.feed_token(seq.ids[t], tags[t]);
    }
  }
  return logits;
}

struct ImageSample {
  std::vector<int> ids;  // full block, BOI through EOI
  BlockCodes codes;
  std::vector<float> final_logits;  // emitted after EOI, for continuation
};

// Emits one image block. The delimiters are structural, so they are forced
// rather than sampled; the payload is sampled under per-phase range masks.
// Every accepted token is fed back through the generation expert.
inline ImageSample generate_image(DecodeSession& sess, const VocabLayout& vocab,
                                  int n_sem, int n_pix,
                                  const SampleRules& rules, Rng& rng) {
  DecodeState state(vocab, n_sem, n_pix);
  ImageSample out;
  std::vector<float> logits = sess.feed_token(vocab.boi(), Expert::Gen);
  state.advance(vocab.boi());
  out.ids.push_back(vocab.boi());
  while (state.phase() != BlockPhase::Done) {
    const int id = state.phase() == BlockPhase::AwaitEOI
                       ? vocab.eoi()
                       : sample_token(logits, state.allowed(), rules, rng);
    state.advance(id);
    out.ids.push_back(id);
    logits = sess.feed_token(id, Expert::Gen);
  }
  out.final_logits = std::move(logits);
  out.codes = parse_image_block(out.ids, vocab, n_sem, n_pix);
  return out;
}

// Samples exactly `n` text-range tokens starting from `logits`, feeding each
// choice back on the text route. Used for caption readout.
inline std::vector<int> decode_fixed_text(DecodeSession& sess,
                                          std::vector<float> logits, int n,
                                          const VocabLayout& vocab,
                                          Expert text_expert,
                                          const SampleRules& rules, Rng& rng) {
  std::vector<int> out;
  for (int i = 0; i < n; i++) {
    std::vector<uint8_t> allowed(logits.size(), 0);
    for (int j = 0; j < vocab.text_size && j < int(logits.size()); j++)
      allowed[size_t(j)] = 1;
    const int id = sample_token(logits, allowed, rules, rng);
    out.push_back(id);
    if (i + 1 < n) logits = sess.feed_token(id, text_expert);
  }
  return out;
}

// One line per token: "<id> <class>", continuous slots written as "-1 slot".
inline void write_token_trace(const std::string& path,
                              const std::vector<int>& ids,
                              const VocabLayout& vocab) {
  std::ofstream f(path);
  if (!f) throw CheckpointError("trace: cannot open " + path);
  for (int id : ids) {
    f << id << ' '
      << (id < 0 ? "slot" : token_class_name(vocab.classify(id))) << '\n';
  }
  if (!f.good()) throw CheckpointError("trace: write failed for " + path);
}

}  // namespace unimot

#pragma once

// Dual-expert transformer with hard per-token routing. Each expert keeps a
// complete copy of every layer parameter (norm gains, QKV/out projections,
// FFN). Tokens are gathered to their expert for the dense math and merged
// back into position order for rotary attention, so attention is always
// joint over the whole prefix regardless of routing. Continuous
// understanding-image slots enter through a frozen random projector.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/graph.hpp"
#include "unimot/rng.hpp"
#include "unimot/sequence.hpp"
#include "unimot/tensor.hpp"
#include "unimot/vocab.hpp"

namespace unimot {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int slot_dim = 108;  // width of one continuous image-slot feature row
  VocabLayout vocab{};
  float init_scale = 0.02f;
  float rope_base = 10000.0f;
  uint64_t seed = 42;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    vocab.validate();
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 ||
        slot_dim <= 0)
      throw ConfigError("model: dimensions must be positive");
    if (d_model % n_heads != 0)
      throw ConfigError("model: d_model not divisible by n_heads");
    if (head_dim() % 2 != 0)
      throw ConfigError("model: head dim must be even for rotary positions");
    if (init_scale <= 0.0f)
      throw ConfigError("model: init_scale must be positive");
  }
};

template <class Real>
struct ExpertLayer {
  Tensor<Real> attn_gain;  // [d]
  Tensor<Real> wq, wk, wv, wo;  // [d x d]
  Tensor<Real> ffn_gain;   // [d]
  Tensor<Real> w1;         // [d x d_ff]
  Tensor<Real> w2;         // [d_ff x d]
};

template <class Real>
struct ExpertStack {
  Tensor<Real> embed;  // [vocab x d]
  std::vector<ExpertLayer<Real>> layers;
  Tensor<Real> final_gain;  // [d]
  Tensor<Real> head;        // [d x vocab]

  int vocab_rows() const { return embed.rows(); }
};

// Full parameter set. Before promotion only the understanding stack exists
// and trains; after promotion it is frozen and a generation stack (full
// vocabulary) trains on top. The projector is frozen from birth.
template <class Real>
struct MoTParams {
  ModelConfig cfg;
  Tensor<Real> projector;  // [slot_dim x d]
  ExpertStack<Real> und;   // text + special vocabulary
  ExpertStack<Real> gen;   // full vocabulary, empty until promotion
  bool has_gen = false;
  bool backbone_frozen = false;
};

namespace detail {

inline uint64_t name_hash(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= uint8_t(c);
    h *= 1099511628211ull;
  }
  return h;
}

// Fixed registry order; checkpoint layout and per-tensor init seeds both
// key off these names, so the order and spelling must never change.
template <class Stack, class Fn>
void visit_stack(Stack& st, const std::string& prefix, bool trainable,
                 Fn&& fn) {
  fn(prefix + "embed", st.embed, trainable);
  for (size_t i = 0; i < st.layers.size(); i++) {
    auto& L = st.layers[i];
    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
    fn(lp + "attn_gain", L.attn_gain, trainable);
    fn(lp + "wq", L.wq, trainable);
    fn(lp + "wk", L.wk, trainable);
    fn(lp + "wv", L.wv, trainable);
    fn(lp + "wo", L.wo, trainable);
    fn(lp + "ffn_gain", L.ffn_gain, trainable);
    fn(lp + "w1", L.w1, trainable);
    fn(lp + "w2", L.w2, trainable);
  }
  fn(prefix + "final_gain", st.final_gain, trainable);
  fn(prefix + "head", st.head, trainable);
}

}  // namespace detail

// Visits every live tensor as (name, tensor, trainable) in registry order.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("projector"), p.projector, false);
  detail::visit_stack(p.und, "und.", !p.backbone_frozen, fn);
  if (p.has_gen) detail::visit_stack(p.gen, "gen.", true, fn);
}

namespace detail {

template <class Real>
Tensor<Real> seeded_normal(std::vector<int> shape, uint64_t model_seed,
                           std::string_view name, double stddev) {
  Rng rng(derive_seed(model_seed, name_hash(name)));
  return Tensor<Real>::randn(std::move(shape), rng, stddev);
}

template <class Real>
ExpertStack<Real> init_stack(const ModelConfig& cfg, int vocab_rows,
                             const std::string& prefix) {
  const int d = cfg.d_model;
  const double s = cfg.init_scale;
  ExpertStack<Real> st;
  st.embed = seeded_normal<Real>({vocab_rows, d}, cfg.seed, prefix + "embed", s);
  st.layers.resize(size_t(cfg.n_layers));
  for (int i = 0; i < cfg.n_layers; i++) {
    auto& L = st.layers[size_t(i)];
    const std::string lp = prefix + "layer" + std::to_string(i) + ".";
    L.attn_gain = Tensor<Real>::full({d}, Real(1));
    L.wq = seeded_normal<Real>({d, d}, cfg.seed, lp + "wq", s);
    L.wk = seeded_normal<Real>({d, d}, cfg.seed, lp + "wk", s);
    L.wv = seeded_normal<Real>({d, d}, cfg.seed, lp + "wv", s);
    L.wo = seeded_normal<Real>({d, d}, cfg.seed, lp + "wo", s);
    L.ffn_gain = Tensor<Real>::full({d}, Real(1));
    L.w1 = seeded_normal<Real>({d, cfg.d_ff}, cfg.seed, lp + "w1", s);
    L.w2 = seeded_normal<Real>({cfg.d_ff, d}, cfg.seed, lp + "w2", s);
  }
  st.final_gain = Tensor<Real>::full({d}, Real(1));
  st.head =
      seeded_normal<Real>({d, vocab_rows}, cfg.seed, prefix + "head", s);
  return st;
}

}  // namespace detail

// Fresh pre-promotion model: trainable understanding stack over the
// text+special vocabulary plus the permanently frozen slot projector.
template <class Real>
MoTParams<Real> init_model(const ModelConfig& cfg) {
  cfg.validate();
  MoTParams<Real> p;
  p.cfg = cfg;
  p.projector = detail::seeded_normal<Real>(
      {cfg.slot_dim, cfg.d_model}, cfg.seed, "projector",
      1.0 / std::sqrt(double(cfg.slot_dim)));
  p.und = detail::init_stack<Real>(cfg, cfg.vocab.und_vocab(), "und.");
  return p;
}

// Clones the trained understanding stack into a generation expert and
// freezes the original. The generation expert covers the full vocabulary:
// rows/columns shared with the understanding vocabulary are copied so both
// experts start from the same function on text, and the new semantic/pixel
// rows are freshly initialized.
template <class Real>
void promote_backbone(MoTParams<Real>& p) {
  if (p.has_gen) throw ConfigError("promote: generation expert already exists");
  const ModelConfig& cfg = p.cfg;
  const int d = cfg.d_model;
  const int nu = cfg.vocab.und_vocab();
  const int nv = cfg.vocab.total();

  ExpertStack<Real> g = detail::init_stack<Real>(cfg, nv, "gen.");
  g.layers = p.und.layers;
  g.final_gain = p.und.final_gain;
  for (int r = 0; r < nu; r++)
    std::copy_n(p.und.embed.row_ptr(r), d, g.embed.row_ptr(r));
  for (int r = 0; r < d; r++)
    std::copy_n(p.und.head.row_ptr(r), nu, g.head.row_ptr(r));
  p.gen = std::move(g);
  p.has_gen = true;
  p.backbone_frozen = true;
}

// Gradient accumulators for the trainable tensors, keyed by registry name.
template <class Real>
struct GradSinks {
  std::map<std::string, Tensor<Real>> by_name;

  void zero() {
    for (auto& [name, t] : by_name) t.zero();
  }
};

template <class Real>
GradSinks<Real> make_grad_sinks(MoTParams<Real>& p) {
  GradSinks<Real> s;
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t,
                         bool trainable) {
    if (trainable) s.by_name.emplace(name, Tensor<Real>(t.shape));
  });
  return s;
}

template <class Real>
struct BoundStack {
  using Id = typename Graph<Real>::Id;
  struct BoundLayer {
    Id attn_gain, wq, wk, wv, wo, ffn_gain, w1, w2;
  };
  Id embed = -1;
  std::vector<BoundLayer> layers;
  Id final_gain = -1, head = -1;
};

template <class Real>
struct BoundModel {
  using Id = typename Graph<Real>::Id;
  Id projector = -1;
  BoundStack<Real> und, gen;
  bool has_gen = false;
};

// Registers every live tensor as a graph parameter. Trainable tensors
// accumulate into their named sink; frozen ones get no gradient at all.
// The sink pointer is non-deduced so callers may pass a bare nullptr.
template <class Real>
BoundModel<Real> bind_model(Graph<Real>& g, MoTParams<Real>& p,
                            std::type_identity_t<GradSinks<Real>>* sinks) {
  BoundModel<Real> b;
  b.has_gen = p.has_gen;
  auto bind_one = [&](const std::string& name, Tensor<Real>& t,
                      bool trainable) -> typename Graph<Real>::Id {
    Tensor<Real>* sink = nullptr;
    if (trainable && sinks) {
      auto it = sinks->by_name.find(name);
      if (it == sinks->by_name.end())
        throw ConfigError("gradient sink missing for tensor " + name);
      sink = &it->second;
    }
    return g.param(t, sink);
  };
  auto bind_stack = [&](ExpertStack<Real>& st, const std::string& prefix,
                        bool trainable) {
    BoundStack<Real> bs;
    bs.embed = bind_one(prefix + "embed", st.embed, trainable);
    for (size_t i = 0; i < st.layers.size(); i++) {
      auto& L = st.layers[i];
      const std::string lp = prefix + "layer" + std::to_string(i) + ".";
      typename BoundStack<Real>::BoundLayer bl;
      bl.attn_gain = bind_one(lp + "attn_gain", L.attn_gain, trainable);
      bl.wq = bind_one(lp + "wq", L.wq, trainable);
      bl.wk = bind_one(lp + "wk", L.wk, trainable);
      bl.wv = bind_one(lp + "wv", L.wv, trainable);
      bl.wo = bind_one(lp + "wo", L.wo, trainable);
      bl.ffn_gain = bind_one(lp + "ffn_gain", L.ffn_gain, trainable);
      bl.w1 = bind_one(lp + "w1", L.w1, trainable);
      bl.w2 = bind_one(lp + "w2", L.w2, trainable);
      bs.layers.push_back(bl);
    }
    bs.final_gain = bind_one(prefix + "final_gain", st.final_gain, trainable);
    bs.head = bind_one(prefix + "head", st.head, trainable);
    return bs;
  };
  b.projector = bind_one("projector", p.projector, false);
  b.und = bind_stack(p.und, "und.", !p.backbone_frozen);
  if (p.has_gen) b.gen = bind_stack(p.gen, "gen.", true);
  return b;
}

// Forward result: per-expert logit blocks plus the positions (ascending)
// each block covers. A side with no routed tokens stays at id -1.
template <class Real>
struct SeqForward {
  typename Graph<Real>::Id und_logits = -1;
  typename Graph<Real>::Id gen_logits = -1;
  std::vector<int> und_rows, gen_rows;
};

// Routed forward pass over one sequence. `tags` assigns every position to
// an expert; slot positions embed through the frozen projector no matter
// which expert later processes them.
template <class Real>
SeqForward<Real> forward_sequence(Graph<Real>& g, const BoundModel<Real>& b,
                                  const MoTParams<Real>& p,
                                  const MultimodalSequence& seq,
                                  const std::vector<Expert>& tags) {
  using Id = typename Graph<Real>::Id;
  using Piece = typename Graph<Real>::Piece;
  const int T = int(seq.size());
  if (T == 0) throw ConfigError("forward: empty sequence");
  if (int(tags.size()) != T)
    throw ConfigError("forward: routing tags do not cover the sequence");

  std::vector<int> und_rows, gen_rows;
  for (int t = 0; t < T; t++)
    (tags[size_t(t)] == Expert::Und ? und_rows : gen_rows).push_back(t);
  if (!gen_rows.empty() && !p.has_gen)
    throw ConfigError("forward: tokens routed to missing generation expert");

  // Embeddings: discrete ids per expert table, continuous slots through the
  // projector. Pieces are disjoint by construction.
  std::vector<Piece> emb_pieces;
  std::vector<int> disc_u, disc_g, slot_rows;
  std::vector<int> ids_u, ids_g;
  for (int t = 0; t < T; t++) {
    if (seq.ids[size_t(t)] < 0) {
      slot_rows.push_back(t);
      continue;
    }
    if (tags[size_t(t)] == Expert::Und) {
      if (seq.ids[size_t(t)] >= p.und.vocab_rows())
        throw ConfigError(
            "forward: token id " + std::to_string(seq.ids[size_t(t)]) +
            " at position " + std::to_string(t) +
            " is outside the understanding vocabulary");
      disc_u.push_back(t);
      ids_u.push_back(seq.ids[size_t(t)]);
    } else {
      disc_g.push_back(t);
      ids_g.push_back(seq.ids[size_t(t)]);
    }
  }
  if (!disc_u.empty())
    emb_pieces.push_back({g.embed_rows(b.und.embed, ids_u), disc_u});
  if (!disc_g.empty())
    emb_pieces.push_back({g.embed_rows(b.gen.embed, ids_g), disc_g});
  if (!slot_rows.empty()) {
    if (int(slot_rows.size()) != int(seq.slot_pos.size()) ||
        seq.slot_dim != p.cfg.slot_dim)
      throw ConfigError("forward: slot rows do not match the configured width");
    Tensor<Real> feats({int(slot_rows.size()), p.cfg.slot_dim});
    for (size_t i = 0; i < slot_rows.size(); i++)
      for (int j = 0; j < p.cfg.slot_dim; j++)
        feats.at(int(i), j) =
            Real(seq.slots[i * size_t(seq.slot_dim) + size_t(j)]);
    Id fid = g.input(std::move(feats));
    emb_pieces.push_back({g.matmul(fid, b.projector), slot_rows});
  }
  Id x = g.merge_rows(std::move(emb_pieces), T);

  std::vector<int> positions(static_cast<size_t>(T));
  for (int t = 0; t < T; t++) positions[size_t(t)] = t;

  struct Side {
    const std::vector<int>* rows;
    const BoundStack<Real>* stack;
  };
  std::vector<Side> sides;
  if (!und_rows.empty()) sides.push_back({&und_rows, &b.und});
  if (!gen_rows.empty()) sides.push_back({&gen_rows, &b.gen});

  for (int layer = 0; layer < p.cfg.n_layers; layer++) {
    // Attention: per-expert norms and projections, shared rotary attention.
    std::vector<Piece> qs, ks, vs;
    for (const Side& s : sides) {
      const auto& L = s.stack->layers[size_t(layer)];
      Id xe = g.gather_rows(x, *s.rows);
      Id he = g.rmsnorm(xe, L.attn_gain);
      qs.push_back({g.matmul(he, L.wq), *s.rows});
      ks.push_back({g.matmul(he, L.wk), *s.rows});
      vs.push_back({g.matmul(he, L.wv), *s.rows});
    }
    Id q = g.rope(g.merge_rows(std::move(qs), T), p.cfg.n_heads, positions,
                  Real(p.cfg.rope_base));
    Id k = g.rope(g.merge_rows(std::move(ks), T), p.cfg.n_heads, positions,
                  Real(p.cfg.rope_base));
    Id v = g.merge_rows(std::move(vs), T);
    Id attn = g.causal_attention(q, k, v, p.cfg.n_heads);
    std::vector<Piece> outs;
    for (const Side& s : sides) {
      const auto& L = s.stack->layers[size_t(layer)];
      Id ae = g.gather_rows(attn, *s.rows);
      outs.push_back({g.matmul(ae, L.wo), *s.rows});
    }
    x = g.add(x, g.merge_rows(std::move(outs), T));

    // FFN, fully per-expert.
    std::vector<Piece> ffs;
    for (const Side& s : sides) {
      const auto& L = s.stack->layers[size_t(layer)];
      Id xe = g.gather_rows(x, *s.rows);
      Id he = g.rmsnorm(xe, L.ffn_gain);
      Id f = g.matmul(g.silu(g.matmul(he, L.w1)), L.w2);
      ffs.push_back({f, *s.rows});
    }
    x = g.add(x, g.merge_rows(std::move(ffs), T));
  }

  SeqForward<Real> out;
  out.und_rows = std::move(und_rows);
  out.gen_rows = std::move(gen_rows);
  if (!out.und_rows.empty()) {
    Id he = g.rmsnorm(g.gather_rows(x, out.und_rows), b.und.final_gain);
    out.und_logits = g.matmul(he, b.und.head);
  }
  if (!out.gen_rows.empty()) {
    Id he = g.rmsnorm(g.gather_rows(x, out.gen_rows), b.gen.final_gain);
    out.gen_logits = g.matmul(he, b.gen.head);
  }
  return out;
}

// Logits for one position: pointer into the owning expert's logit block.
template <class Real>
struct PositionLogits {
  const Real* ptr = nullptr;
  int width = 0;
  Expert expert = Expert::Und;
};

template <class Real>
PositionLogits<Real> position_logits(const Graph<Real>& g,
                                     const SeqForward<Real>& fwd, int t) {
  auto find_in = [&](const std::vector<int>& rows) {
    auto it = std::lower_bound(rows.begin(), rows.end(), t);
    return (it != rows.end() && *it == t) ? int(it - rows.begin()) : -1;
  };
  if (int i = find_in(fwd.und_rows); i >= 0) {
    const auto& tl = g.val(fwd.und_logits);
    return {tl.row_ptr(i), tl.cols(), Expert::Und};
  }
  if (int i = find_in(fwd.gen_rows); i >= 0) {
    const auto& tl = g.val(fwd.gen_logits);
    return {tl.row_ptr(i), tl.cols(), Expert::Gen};
  }
  throw ConfigError("position " + std::to_string(t) + " has no logits");
}

// Summed masked NLL over both heads. `value` is the forward value of the
// sum; mean loss is value / count. Masked positions routed to the
// understanding expert must have targets its head can actually score.
template <class Real>
struct SeqNll {
  typename Graph<Real>::Id node = -1;
  int count = 0;
  double value = 0.0;
};

template <class Real>
SeqNll<Real> sequence_nll(Graph<Real>& g, const SeqForward<Real>& fwd,
                          const MoTParams<Real>& p,
                          const MultimodalSequence& seq) {
  using Id = typename Graph<Real>::Id;
  std::vector<Id> parts;
  int count = 0;
  auto side = [&](const std::vector<int>& rows, Id logits, bool is_und) {
    if (rows.empty()) return;
    std::vector<int> targets(rows.size(), -1);
    std::vector<uint8_t> mask(rows.size(), 0);
    bool any = false;
    for (size_t i = 0; i < rows.size(); i++) {
      const size_t t = size_t(rows[i]);
      if (!seq.loss_mask[t]) continue;
      if (is_und && seq.targets[t] >= p.und.vocab_rows())
        throw ConfigError(
            "loss: target " + std::to_string(seq.targets[t]) +
            " at position " + std::to_string(rows[i]) +
            " cannot be scored by the understanding head");
      targets[i] = seq.targets[t];
      mask[i] = 1;
      any = true;
    }
    if (!any) return;
    auto nll = g.nll_sum(logits, targets, mask);
    parts.push_back(nll.node);
    count += nll.count;
  };
  side(fwd.und_rows, fwd.und_logits, true);
  side(fwd.gen_rows, fwd.gen_logits, false);

  SeqNll<Real> out;
  out.count = count;
  out.node = parts.empty() ? g.input(Tensor<Real>::scalar(Real(0)))
                           : (parts.size() == 1 ? parts[0]
                                                : g.sum_scalars(parts));
  out.value = double(g.val(out.node).data[0]);
  return out;
}

// One-call mean masked loss for a single sequence (evaluation helper).
template <class Real>
double sequence_loss(MoTParams<Real>& p, const MultimodalSequence& seq,
                     const RoutingPolicy& policy) {
  Graph<Real> g;
  BoundModel<Real> b = bind_model(g, p, nullptr);
  auto tags = route_tokens(seq, policy, p.cfg.vocab);
  auto fwd = forward_sequence(g, b, p, seq, tags);
  auto nll = sequence_nll(g, fwd, p, seq);
  return nll.count > 0 ? nll.value / nll.count : 0.0;
}

// Bitwise snapshot of everything that must not move during training.
template <class Real>
std::map<std::string, std::vector<Real>> take_frozen_snapshot(
    MoTParams<Real>& p) {
  std::map<std::string, std::vector<Real>> snap;
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t,
                         bool trainable) {
    if (!trainable) snap.emplace(name, t.data);
  });
  return snap;
}

template <class Real>
void assert_frozen(MoTParams<Real>& p,
                   const std::map<std::string, std::vector<Real>>& snap) {
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t,
                         bool trainable) {
    if (trainable) return;
    auto it = snap.find(name);
    if (it == snap.end())
      throw NumericError("frozen check: tensor " + name +
                         " missing from snapshot");
    if (it->second.size() != t.data.size() ||
        std::memcmp(it->second.data(), t.data.data(),
                    t.data.size() * sizeof(Real)) != 0)
      throw NumericError("frozen tensor " + name + " changed during training");
  });
}

}  // namespace unimot

#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <unistd.h>

#include "unimot/errors.hpp"
#include "unimot/model.hpp"
#include "unimot/optim.hpp"

namespace unimot {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// Curriculum position carried inside checkpoints so a run can resume
// mid-stage: stream fast-forward uses samples_consumed, the learning-rate
// schedule uses step_in_stage, and per-stage data seeds derive from
// run_seed and stage_index.
struct TrainerState {
  uint32_t stage_index = 0;
  int64_t step_in_stage = 0;
  int64_t samples_consumed = 0;
  uint64_t run_seed = 0;
};

namespace detail {

constexpr char kCkptMagic[4] = {'U', 'M', 'C', 'K'};
constexpr uint32_t kCkptVersion = 1;

inline uint64_t byte_hash(const char* data, size_t n) {
  return name_hash(std::string_view(data, n));
}

template <class T>
void put_pod(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_str(std::string& out, const std::string& s) {
  put_pod(out, uint32_t(s.size()));
  out.append(s);
}

template <class Real>
void put_payload(std::string& out, const Tensor<Real>& t) {
  out.append(reinterpret_cast<const char*>(t.data.data()),
             t.data.size() * sizeof(Real));
}

// Bounds-checked forward-only reader; any overrun names the truncation.
struct ByteReader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size())
      throw CheckpointError(std::string("truncated checkpoint: ") + what +
                            " cut short at byte " + std::to_string(pos));
  }
  template <class T>
  T pod(const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = pod<uint32_t>(what);
    need(n, what);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
  template <class Real>
  void payload(Tensor<Real>& t, const std::string& name) {
    const size_t n = t.data.size() * sizeof(Real);
    need(n, name.c_str());
    std::memcpy(t.data.data(), buf.data() + pos, n);
    pos += n;
  }
};

inline void put_config(std::string& out, const ModelConfig& cfg, bool has_gen,
                       bool frozen) {
  put_pod(out, int32_t(cfg.d_model));
  put_pod(out, int32_t(cfg.n_layers));
  put_pod(out, int32_t(cfg.n_heads));
  put_pod(out, int32_t(cfg.d_ff));
  put_pod(out, int32_t(cfg.slot_dim));
  put_pod(out, int32_t(cfg.vocab.text_size));
  put_pod(out, int32_t(cfg.vocab.sem_size));
  put_pod(out, int32_t(cfg.vocab.pix_size));
  put_pod(out, cfg.init_scale);
  put_pod(out, cfg.rope_base);
  put_pod(out, cfg.seed);
  put_pod(out, uint8_t(has_gen ? 1 : 0));
  put_pod(out, uint8_t(frozen ? 1 : 0));
}

}  // namespace detail

// Serializes parameters plus optional optimizer and trainer state; pass
// nullptr to omit a section. The file carries the model config, every
// registry tensor in visit order, and a trailing checksum; writes go to a
// temp file that is fsynced and renamed so readers never see a torn file.
template <class Real>
void save_checkpoint(const std::string& path, MoTParams<Real>& p,
                     const OptimizerState<Real>* opt = nullptr,
                     const TrainerState* trainer = nullptr) {
  std::string buf;
  buf.append(detail::kCkptMagic, 4);
  detail::put_pod(buf, detail::kCkptVersion);
  detail::put_pod(buf, uint8_t(sizeof(Real)));
  detail::put_config(buf, p.cfg, p.has_gen, p.backbone_frozen);

  uint32_t count = 0;
  for_each_tensor(p, [&](const std::string&, Tensor<Real>&, bool) { count++; });
  detail::put_pod(buf, count);
  for_each_tensor(p, [&](const std::string& name, Tensor<Real>& t, bool) {
    detail::put_str(buf, name);
    detail::put_pod(buf, uint32_t(t.shape.size()));
    for (int d : t.shape) detail::put_pod(buf, int32_t(d));
    detail::put_payload(buf, t);
  });

  detail::put_pod(buf, uint8_t(opt ? 1 : 0));
  if (opt) {
    detail::put_pod(buf, int64_t(opt->step));
    detail::put_pod(buf, uint32_t(opt->slots.size()));
    for (const auto& [name, slot] : opt->slots) {
      detail::put_str(buf, name);
      detail::put_payload(buf, slot.m);
      detail::put_payload(buf, slot.v);
    }
  }

  detail::put_pod(buf, uint8_t(trainer ? 1 : 0));
  if (trainer) {
    detail::put_pod(buf, trainer->stage_index);
    detail::put_pod(buf, trainer->step_in_stage);
    detail::put_pod(buf, trainer->samples_consumed);
    detail::put_pod(buf, trainer->run_seed);
  }

  detail::put_pod(buf, detail::byte_hash(buf.data(), buf.size()));

  const std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (!f) throw CheckpointError("checkpoint: cannot open " + tmp);
  const bool wrote = std::fwrite(buf.data(), 1, buf.size(), f) == buf.size() &&
                     std::fflush(f) == 0 && ::fsync(fileno(f)) == 0;
  std::fclose(f);
  if (!wrote) {
    std::remove(tmp.c_str());
    throw CheckpointError("checkpoint: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw CheckpointError("checkpoint: cannot rename " + tmp + " to " + path);
  }
}

template <class Real>
struct Checkpoint {
  ModelConfig cfg;
  MoTParams<Real> params;
  bool has_optimizer = false;
  OptimizerState<Real> opt;
  bool has_trainer = false;
  TrainerState trainer;
};

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::string buf;
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw CheckpointError("checkpoint: cannot open " + path);
    char chunk[1 << 16];
    size_t n;
    while ((n = std::fread(chunk, 1, sizeof(chunk), f)) > 0)
      buf.append(chunk, n);
    std::fclose(f);
  }

  detail::ByteReader r{buf};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), detail::kCkptMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic, not a checkpoint file");
  r.pos = 4;
  const uint32_t version = r.pod<uint32_t>("version");
  if (version != detail::kCkptVersion)
    throw CheckpointError("checkpoint: unsupported version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(detail::kCkptVersion) + ")");
  const uint8_t width = r.pod<uint8_t>("scalar width");
  if (width != sizeof(Real))
    throw CheckpointError("checkpoint: stores " + std::to_string(width) +
                          "-byte scalars, loader expects " +
                          std::to_string(sizeof(Real)));

  Checkpoint<Real> out;
  ModelConfig& cfg = out.cfg;
  cfg.d_model = r.pod<int32_t>("config");
  cfg.n_layers = r.pod<int32_t>("config");
  cfg.n_heads = r.pod<int32_t>("config");
  cfg.d_ff = r.pod<int32_t>("config");
  cfg.slot_dim = r.pod<int32_t>("config");
  cfg.vocab.text_size = r.pod<int32_t>("config");
  cfg.vocab.sem_size = r.pod<int32_t>("config");
  cfg.vocab.pix_size = r.pod<int32_t>("config");
  cfg.init_scale = r.pod<float>("config");
  cfg.rope_base = r.pod<float>("config");
  cfg.seed = r.pod<uint64_t>("config");
  const bool has_gen = r.pod<uint8_t>("config") != 0;
  const bool frozen = r.pod<uint8_t>("config") != 0;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint: invalid config: ") +
                          e.what());
  }

  // Allocate by re-running deterministic init, then overwrite from the file;
  // shapes and registry order are thereby guaranteed to match the code.
  out.params = init_model<Real>(cfg);
  if (has_gen) promote_backbone(out.params);
  out.params.backbone_frozen = frozen;

  uint32_t expected = 0;
  for_each_tensor(out.params,
                  [&](const std::string&, Tensor<Real>&, bool) { expected++; });
  const uint32_t count = r.pod<uint32_t>("tensor count");
  if (count != expected)
    throw CheckpointError("checkpoint: holds " + std::to_string(count) +
                          " tensors, model needs " + std::to_string(expected));
  for_each_tensor(out.params, [&](const std::string& name, Tensor<Real>& t,
                                  bool) {
    const std::string got = r.str("tensor name");
    if (got != name)
      throw CheckpointError("checkpoint: tensor '" + got + "' where '" + name +
                            "' was expected");
    const uint32_t ndim = r.pod<uint32_t>("tensor rank");
    if (ndim != t.shape.size())
      throw CheckpointError("checkpoint: rank mismatch for " + name);
    for (int d : t.shape) {
      const int32_t got_d = r.pod<int32_t>("tensor shape");
      if (got_d != d)
        throw CheckpointError("checkpoint: shape mismatch for " + name);
    }
    r.payload(t, name);
  });

  out.has_optimizer = r.pod<uint8_t>("optimizer flag") != 0;
  if (out.has_optimizer) {
    out.opt.step = r.pod<int64_t>("optimizer step");
    OptimizerState<Real> expected_state = init_optimizer(out.params);
    const uint32_t slots = r.pod<uint32_t>("optimizer slot count");
    if (slots != expected_state.slots.size())
      throw CheckpointError(
          "checkpoint: optimizer holds " + std::to_string(slots) +
          " slots, trainable set needs " +
          std::to_string(expected_state.slots.size()));
    for (auto& [name, slot] : expected_state.slots) {
      const std::string got = r.str("optimizer slot name");
      if (got != name)
        throw CheckpointError("checkpoint: optimizer slot '" + got +
                              "' where '" + name + "' was expected");
      r.payload(slot.m, name);
      r.payload(slot.v, name);
    }
    out.opt.slots = std::move(expected_state.slots);
  }

  out.has_trainer = r.pod<uint8_t>("trainer flag") != 0;
  if (out.has_trainer) {
    out.trainer.stage_index = r.pod<uint32_t>("trainer state");
    out.trainer.step_in_stage = r.pod<int64_t>("trainer state");
    out.trainer.samples_consumed = r.pod<int64_t>("trainer state");
    out.trainer.run_seed = r.pod<uint64_t>("trainer state");
  }

  const size_t body_end = r.pos;
  const uint64_t stored = r.pod<uint64_t>("checksum");
  if (r.pos != buf.size())
    throw CheckpointError("checkpoint: " +
                          std::to_string(buf.size() - r.pos) +
                          " trailing bytes after checksum");
  const uint64_t actual = detail::byte_hash(buf.data(), body_end);
  if (stored != actual)
    throw CheckpointError("checkpoint: checksum mismatch, file is corrupt");
  return out;
}

}  // namespace unimot

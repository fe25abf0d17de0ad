#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unimot/errors.hpp"
#include "unimot/vocab.hpp"

namespace unimot {

enum class TaskKind { T2I = 0, I2T = 1, Edit = 2, TextOnly = 3 };
inline constexpr int kNumTasks = 4;

inline const char* task_name(TaskKind t) {
  switch (t) {
    case TaskKind::T2I: return "t2i";
    case TaskKind::I2T: return "i2t";
    case TaskKind::Edit: return "edit";
    case TaskKind::TextOnly: return "text";
  }
  return "?";
}

// Which expert handles understanding-image slots and text tokens. Image
// generation tokens (semantic, pixel, and the BOI/EOI delimiters) always go
// to the generation expert; BOS/EOS/PAD travel with the text tokens so that
// (Gen,Gen) collapses to a single dense path.
struct RoutingPolicy {
  Expert und_image = Expert::Und;
  Expert text = Expert::Und;
  bool operator==(const RoutingPolicy&) const = default;
};

inline std::string policy_name(const RoutingPolicy& p) {
  auto n = [](Expert e) { return e == Expert::Und ? "Und" : "Gen"; };
  return std::string(n(p.und_image)) + "/" + n(p.text);
}

// One training or inference sequence. Discrete positions carry a vocab id;
// continuous image positions carry id -1 and one row of `slots`.
struct MultimodalSequence {
  std::vector<int> ids;            // -1 at continuous slot positions
  std::vector<TokenClass> cls;     // one class per position
  std::vector<int> targets;        // shifted next-token ids, -1 where none
  std::vector<uint8_t> loss_mask;  // 1 where the target enters the loss
  std::vector<float> slots;        // n_slots x slot_dim feature rows
  std::vector<int> slot_pos;       // position of each slot row, ascending
  int slot_dim = 0;

  size_t size() const { return ids.size(); }
};

inline std::vector<Expert> route_tokens(const MultimodalSequence& seq,
                                        const RoutingPolicy& policy,
                                        const VocabLayout& vocab) {
  std::vector<Expert> tags(seq.size());
  for (size_t t = 0; t < seq.size(); t++) {
    switch (seq.cls[t]) {
      case TokenClass::Text: tags[t] = policy.text; break;
      case TokenClass::Special:
        // Generation-block delimiters belong to the expert that emits the
        // block; BOS/EOS/PAD travel with the text.
        tags[t] = (seq.ids[t] == vocab.boi() || seq.ids[t] == vocab.eoi())
                      ? Expert::Gen
                      : policy.text;
        break;
      case TokenClass::UndImage: tags[t] = policy.und_image; break;
      case TokenClass::SemGen:
      case TokenClass::PixGen: tags[t] = Expert::Gen; break;
    }
  }
  return tags;
}

// Structural validator used by tests and the inspect command. Throws
// GrammarError at the first offending position.
inline void validate_sequence(const MultimodalSequence& seq,
                              const VocabLayout& vocab) {
  const size_t n = seq.size();
  if (seq.cls.size() != n || seq.targets.size() != n ||
      seq.loss_mask.size() != n)
    throw ConfigError("sequence field lengths disagree");
  size_t slot_row = 0;
  for (size_t t = 0; t < n; t++) {
    if (seq.cls[t] == TokenClass::UndImage) {
      if (seq.ids[t] != -1)
        throw GrammarError("continuous slot must carry id -1", int(t));
      if (slot_row >= seq.slot_pos.size() || seq.slot_pos[slot_row] != int(t))
        throw GrammarError("slot position table out of sync", int(t));
      slot_row++;
    } else {
      if (seq.ids[t] < 0 || seq.ids[t] >= vocab.total())
        throw GrammarError("token id outside vocabulary", int(t));
      if (vocab.classify(seq.ids[t]) != seq.cls[t])
        throw GrammarError("token class does not match its id", int(t));
    }
    const bool last = t + 1 == n;
    if (!last) {
      int expect = seq.ids[t + 1];
      if (seq.targets[t] != expect)
        throw GrammarError("target must be the next token id", int(t));
    } else if (seq.targets[t] != -1) {
      throw GrammarError("final position has no target", int(t));
    }
    if (seq.loss_mask[t]) {
      if (seq.targets[t] < 0)
        throw GrammarError("loss-bearing position lacks a target", int(t));
      if (seq.cls[t] == TokenClass::UndImage)
        throw GrammarError("continuous slots carry no loss", int(t));
      if (last) throw GrammarError("final position cannot bear loss", int(t));
    }
  }
  if (slot_row != seq.slot_pos.size())
    throw ConfigError("slot rows outnumber slot positions");
}

}  // namespace unimot

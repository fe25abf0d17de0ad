#pragma once

#include <cstdint>
#include <string>

#include "unimot/errors.hpp"

namespace unimot {

enum class TokenClass : uint8_t { Text, Special, SemGen, PixGen, UndImage };

enum class Expert : uint8_t { Und = 0, Gen = 1 };

inline const char* token_class_name(TokenClass c) {
  switch (c) {
    case TokenClass::Text: return "text";
    case TokenClass::Special: return "special";
    case TokenClass::SemGen: return "sem";
    case TokenClass::PixGen: return "pix";
    case TokenClass::UndImage: return "slot";
  }
  return "?";
}

// Unified id space: [text | special(BOI,EOI,BOS,EOS,PAD) | semantic | pixel],
// contiguous and disjoint. Continuous understanding slots carry no id.
struct VocabLayout {
  int text_size = 256;
  int sem_size = 64;
  int pix_size = 128;

  static constexpr int n_special = 5;

  int special_begin() const { return text_size; }
  int sem_begin() const { return text_size + n_special; }
  int pix_begin() const { return sem_begin() + sem_size; }
  int total() const { return pix_begin() + pix_size; }

  // The Und-side embedding/head covers text + special only.
  int und_vocab() const { return sem_begin(); }

  int boi() const { return special_begin() + 0; }
  int eoi() const { return special_begin() + 1; }
  int bos() const { return special_begin() + 2; }
  int eos() const { return special_begin() + 3; }
  int pad() const { return special_begin() + 4; }

  void validate() const {
    if (text_size < 1 || sem_size < 0 || pix_size < 0)
      throw ConfigError("vocab: sizes must be text>=1, sem>=0, pix>=0");
  }

  TokenClass classify(int id) const {
    if (id < 0 || id >= total())
      throw ConfigError("vocab: id " + std::to_string(id) +
                        " outside [0, " + std::to_string(total()) + ")");
    if (id < text_size) return TokenClass::Text;
    if (id < sem_begin()) return TokenClass::Special;
    if (id < pix_begin()) return TokenClass::SemGen;
    return TokenClass::PixGen;
  }

  int sem_id(int code) const {
    if (code < 0 || code >= sem_size)
      throw ConfigError("vocab: semantic code " + std::to_string(code) +
                        " outside codebook of " + std::to_string(sem_size));
    return sem_begin() + code;
  }

  int pix_id(int code) const {
    if (code < 0 || code >= pix_size)
      throw ConfigError("vocab: pixel code " + std::to_string(code) +
                        " outside codebook of " + std::to_string(pix_size));
    return pix_begin() + code;
  }

  int sem_code(int id) const { return id - sem_begin(); }
  int pix_code(int id) const { return id - pix_begin(); }
};

}  // namespace unimot

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "unimot/data.hpp"
#include "unimot/errors.hpp"
#include "unimot/model.hpp"
#include "unimot/trainer.hpp"

namespace unimot {

// A whole run in one structured-text file: `[section]` headers with
// `field = value` lines whose names match the config structs one to one.
// Unknown fields, duplicate fields, and stages without an explicit
// learning rate are rejected, so a typo cannot silently fall back to a
// default mid-study.
struct RunSpec {
  uint64_t seed = 0;                // [run] stream seed for every stage
  ModelConfig model;                // [model] (vocabulary comes from the world)
  WorldConfig world;                // [world]
  std::vector<StageConfig> stages;  // [stage.<name>] in file order
};

inline const char* task_key(TaskKind t) { return task_name(t); }

inline TaskKind task_from_name(const std::string& s) {
  for (int t = 0; t < kNumTasks; t++)
    if (s == task_name(TaskKind(t))) return TaskKind(t);
  throw ConfigError("config: unknown task '" + s +
                    "' (valid: t2i, i2t, edit, text)");
}

inline Expert expert_from_name(const std::string& s) {
  if (s == "und") return Expert::Und;
  if (s == "gen") return Expert::Gen;
  throw ConfigError("config: unknown expert '" + s + "' (valid: und, gen)");
}

inline RoutingPolicy parse_policy(const std::string& s) {
  const size_t slash = s.find('/');
  if (slash == std::string::npos)
    throw ConfigError("config: policy '" + s +
                      "' must be <image-expert>/<text-expert>, e.g. und/und");
  RoutingPolicy p;
  p.und_image = expert_from_name(s.substr(0, slash));
  p.text = expert_from_name(s.substr(slash + 1));
  return p;
}

inline std::string format_policy(const RoutingPolicy& p) {
  auto name = [](Expert e) { return e == Expert::Und ? "und" : "gen"; };
  return std::string(name(p.und_image)) + "/" + name(p.text);
}

inline LrSchedule schedule_from_name(const std::string& s) {
  if (s == "cosine") return LrSchedule::Cosine;
  if (s == "constant") return LrSchedule::Constant;
  throw ConfigError("config: unknown schedule '" + s +
                    "' (valid: cosine, constant)");
}

inline const char* schedule_name(LrSchedule s) {
  return s == LrSchedule::Cosine ? "cosine" : "constant";
}

inline MixSpec parse_mix(const std::string& text) {
  MixSpec mix;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, ',')) {
    const size_t colon = part.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config: mix entry '" + part +
                        "' must be <task>:<weight>");
    mix.tasks.push_back(task_from_name(part.substr(0, colon)));
    const std::string w = part.substr(colon + 1);
    double wv = 0.0;
    auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), wv);
    if (ec != std::errc() || p != w.data() + w.size() || !(wv > 0.0))
      throw ConfigError("config: mix weight '" + w +
                        "' must be a positive number");
    mix.weights.push_back(wv);
  }
  if (mix.tasks.empty())
    throw ConfigError("config: mix '" + text + "' names no tasks");
  return mix;
}

inline std::string format_mix(const MixSpec& mix) {
  std::string out;
  for (size_t i = 0; i < mix.tasks.size(); i++) {
    if (i) out += ',';
    out += task_key(mix.tasks[i]);
    out += ':';
    out += detail::fmt_g(mix.weights[i]);
  }
  return out;
}

namespace detail {

inline std::string cfg_trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

inline int64_t cfg_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: field '" + key + "' expects an integer, got '" +
                      v + "'");
  return out;
}

inline uint64_t cfg_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: field '" + key +
                      "' expects a non-negative integer, got '" + v + "'");
  return out;
}

inline double cfg_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("config: field '" + key + "' expects a number, got '" +
                      v + "'");
  return out;
}

inline bool cfg_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("config: field '" + key + "' expects true or false, got '" +
                    v + "'");
}

}  // namespace detail

inline RunSpec parse_run_spec(const std::string& text) {
  RunSpec spec;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;

  std::string section;  // "run" | "model" | "world" | "stage"
  std::set<std::string> used_sections;
  std::set<std::string> seen_keys;  // within the current section
  StageConfig* stage = nullptr;
  bool stage_lr_seen = false;

  auto close_stage = [&]() {
    if (stage && !stage_lr_seen)
      throw ConfigError("config: stage '" + stage->name +
                        "' missing required field 'learning_rate'");
    stage = nullptr;
  };

  while (std::getline(in, raw)) {
    lineno++;
    const std::string line = detail::cfg_trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: line " + std::to_string(lineno) +
                          ": unterminated section header");
      const std::string name = detail::cfg_trim(line.substr(1, line.size() - 2));
      close_stage();
      seen_keys.clear();
      if (!used_sections.insert(name).second)
        throw ConfigError("config: duplicate section [" + name + "]");
      if (name == "run" || name == "model" || name == "world") {
        section = name;
      } else if (name.rfind("stage.", 0) == 0 && name.size() > 6) {
        section = "stage";
        StageConfig sc;
        sc.name = name.substr(6);
        spec.stages.push_back(sc);
        stage = &spec.stages.back();
        stage_lr_seen = false;
      } else {
        throw ConfigError("config: unknown section [" + name +
                          "] (valid: run, model, world, stage.<name>)");
      }
      continue;
    }

    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) +
                        ": expected 'field = value'");
    const std::string key = detail::cfg_trim(line.substr(0, eq));
    const std::string val = detail::cfg_trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: line " + std::to_string(lineno) +
                        ": empty field name");
    if (section.empty())
      throw ConfigError("config: field '" + key + "' appears before any [section]");
    if (!seen_keys.insert(key).second)
      throw ConfigError("config: duplicate field '" + key + "' in [" +
                        (stage ? "stage." + stage->name : section) + "]");

    if (section == "run") {
      if (key == "seed")
        spec.seed = detail::cfg_u64(key, val);
      else
        throw ConfigError("config: unknown field '" + key + "' in [run]");
    } else if (section == "model") {
      ModelConfig& m = spec.model;
      if (key == "d_model") m.d_model = int(detail::cfg_int(key, val));
      else if (key == "n_layers") m.n_layers = int(detail::cfg_int(key, val));
      else if (key == "n_heads") m.n_heads = int(detail::cfg_int(key, val));
      else if (key == "d_ff") m.d_ff = int(detail::cfg_int(key, val));
      else if (key == "slot_dim") m.slot_dim = int(detail::cfg_int(key, val));
      else if (key == "init_scale") m.init_scale = float(detail::cfg_double(key, val));
      else if (key == "rope_base") m.rope_base = float(detail::cfg_double(key, val));
      else if (key == "seed") m.seed = detail::cfg_u64(key, val);
      else
        throw ConfigError("config: unknown field '" + key + "' in [model]");
    } else if (section == "world") {
      WorldConfig& w = spec.world;
      if (key == "img") w.tok.img = int(detail::cfg_int(key, val));
      else if (key == "patch") w.tok.patch = int(detail::cfg_int(key, val));
      else if (key == "grid") w.tok.grid = int(detail::cfg_int(key, val));
      else if (key == "pix_k") w.tok.pix_k = int(detail::cfg_int(key, val));
      else if (key == "sem_k") w.tok.sem_k = int(detail::cfg_int(key, val));
      else if (key == "text_size") w.text_size = int(detail::cfg_int(key, val));
      else if (key == "use_sem") w.use_sem = detail::cfg_bool(key, val);
      else if (key == "use_pix") w.use_pix = detail::cfg_bool(key, val);
      else if (key == "kmeans_iters") w.kmeans_iters = int(detail::cfg_int(key, val));
      else if (key == "jitter_copies") w.jitter_copies = int(detail::cfg_int(key, val));
      else if (key == "jitter_amp") w.jitter_amp = float(detail::cfg_double(key, val));
      else if (key == "seed") w.seed = detail::cfg_u64(key, val);
      else
        throw ConfigError("config: unknown field '" + key + "' in [world]");
    } else {  // stage
      StageConfig& s = *stage;
      if (key == "learning_rate") {
        s.learning_rate = detail::cfg_double(key, val);
        stage_lr_seen = true;
      } else if (key == "schedule") s.schedule = schedule_from_name(val);
      else if (key == "warmup_steps") s.warmup_steps = detail::cfg_int(key, val);
      else if (key == "total_samples") s.total_samples = detail::cfg_int(key, val);
      else if (key == "batch_size") s.batch_size = detail::cfg_int(key, val);
      else if (key == "clip_norm") s.clip_norm = detail::cfg_double(key, val);
      else if (key == "mix") s.mix = parse_mix(val);
      else if (key == "policy") s.policy = parse_policy(val);
      else if (key == "i2t_discrete") s.i2t_discrete = detail::cfg_bool(key, val);
      else if (key == "holdout_task") s.holdout_task = task_from_name(val);
      else
        throw ConfigError("config: unknown field '" + key + "' in [stage." +
                          s.name + "]");
    }
  }
  close_stage();
  return spec;
}

inline RunSpec load_run_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_run_spec(buf.str());
}

// Canonical text form; parse_run_spec(render_run_spec(s)) reproduces s.
inline std::string render_run_spec(const RunSpec& spec) {
  std::ostringstream out;
  out << "[run]\n";
  out << "seed = " << spec.seed << "\n\n";

  const ModelConfig& m = spec.model;
  out << "[model]\n";
  out << "d_model = " << m.d_model << '\n';
  out << "n_layers = " << m.n_layers << '\n';
  out << "n_heads = " << m.n_heads << '\n';
  out << "d_ff = " << m.d_ff << '\n';
  out << "slot_dim = " << m.slot_dim << '\n';
  out << "init_scale = " << detail::fmt_g(m.init_scale) << '\n';
  out << "rope_base = " << detail::fmt_g(m.rope_base) << '\n';
  out << "seed = " << m.seed << "\n\n";

  const WorldConfig& w = spec.world;
  out << "[world]\n";
  out << "img = " << w.tok.img << '\n';
  out << "patch = " << w.tok.patch << '\n';
  out << "grid = " << w.tok.grid << '\n';
  out << "pix_k = " << w.tok.pix_k << '\n';
  out << "sem_k = " << w.tok.sem_k << '\n';
  out << "text_size = " << w.text_size << '\n';
  out << "use_sem = " << (w.use_sem ? "true" : "false") << '\n';
  out << "use_pix = " << (w.use_pix ? "true" : "false") << '\n';
  out << "kmeans_iters = " << w.kmeans_iters << '\n';
  out << "jitter_copies = " << w.jitter_copies << '\n';
  out << "jitter_amp = " << detail::fmt_g(w.jitter_amp) << '\n';
  out << "seed = " << w.seed << '\n';

  for (const StageConfig& s : spec.stages) {
    out << "\n[stage." << s.name << "]\n";
    out << "learning_rate = " << detail::fmt_g(s.learning_rate) << '\n';
    out << "schedule = " << schedule_name(s.schedule) << '\n';
    out << "warmup_steps = " << s.warmup_steps << '\n';
    out << "total_samples = " << s.total_samples << '\n';
    out << "batch_size = " << s.batch_size << '\n';
    out << "clip_norm = " << detail::fmt_g(s.clip_norm) << '\n';
    out << "mix = " << format_mix(s.mix) << '\n';
    out << "policy = " << format_policy(s.policy) << '\n';
    out << "i2t_discrete = " << (s.i2t_discrete ? "true" : "false") << '\n';
    out << "holdout_task = " << task_key(s.holdout_task) << '\n';
  }
  return out.str();
}

}  // namespace unimot

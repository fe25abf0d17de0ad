// unimot: drives training, prompted generation, ablation studies, and token
// trace inspection for the dual-expert toy multimodal model. Every command
// first writes a manifest (resolved config, seeds, build revision) into its
// output directory, so any run can be reproduced from its artifacts alone.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 numeric failure, 4 checkpoint error, 5 grammar violation.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "unimot/checkpoint.hpp"
#include "unimot/config.hpp"
#include "unimot/eval.hpp"

#ifndef UNIMOT_BUILD_REV
#define UNIMOT_BUILD_REV "unknown"
#endif

namespace fs = std::filesystem;
using namespace unimot;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cli: cannot write " + path.string());
  f << text;
  f.flush();
  if (!f.good()) throw ConfigError("cli: write failed for " + path.string());
}

fs::path prepare_out_dir(std::string out_flag, const char* command) {
  if (out_flag.empty()) {
    const char* root = std::getenv("UNIMOT_OUT_ROOT");
    out_flag = (root ? std::string(root) : std::string("out")) + "/" + command;
  }
  fs::path dir(out_flag);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cli: cannot create output directory " + dir.string());
  return dir;
}

void write_manifest(const fs::path& out_dir, const std::string& invocation,
                    const RunSpec& spec) {
  std::ostringstream m;
  m << "# unimot " << kVersion << " rev " << UNIMOT_BUILD_REV << '\n';
  m << "# command: " << invocation << '\n';
  m << "# The resolved configuration below is itself a valid --config file,\n";
  m << "# so this run can be repeated from the manifest alone.\n";
  m << render_run_spec(spec);
  write_text_file(out_dir / "manifest.txt", m.str());
}

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; i++) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

// ---- train ----

struct TrainArgs {
  std::string config, out, checkpoint, stage;
  int64_t seed = -1;  // <0 keeps the config's seed
};

int cmd_train(const TrainArgs& a, const std::string& invocation) {
  RunSpec spec = load_run_spec(a.config);
  if (a.seed >= 0) spec.seed = uint64_t(a.seed);
  if (spec.stages.empty())
    throw ConfigError("config: no [stage.<name>] sections to run");

  const fs::path out = prepare_out_dir(a.out, "train");
  write_manifest(out, invocation, spec);

  std::cerr << "building world (codebooks train once per run)...\n";
  const World world = build_world(spec.world);

  MoTParams<float> params;
  OptimizerState<float> opt;
  TrainerState ts;
  bool resumed_mid_stage = false;
  if (!a.checkpoint.empty()) {
    Checkpoint<float> ck = load_checkpoint<float>(a.checkpoint);
    params = std::move(ck.params);
    if (ck.has_trainer) ts = ck.trainer;
    if (ck.has_optimizer) {
      opt = std::move(ck.opt);
      resumed_mid_stage = ck.has_trainer && ts.step_in_stage > 0;
    }
    if (!ck.has_trainer) ts.run_seed = spec.seed;
  } else {
    ModelConfig mc = spec.model;
    mc.vocab = world.vocab;
    params = init_model<float>(mc);
    ts.run_seed = spec.seed;
  }

  // --stage picks one stage by name; otherwise the pipeline continues from
  // the stage recorded in the trainer state (0 for fresh runs).
  size_t first = size_t(ts.stage_index), last_excl = spec.stages.size();
  if (!a.stage.empty()) {
    size_t idx = spec.stages.size();
    for (size_t i = 0; i < spec.stages.size(); i++)
      if (spec.stages[i].name == a.stage) idx = i;
    if (idx == spec.stages.size()) {
      std::string names;
      for (const auto& s : spec.stages) names += " " + s.name;
      throw ConfigError("cli: unknown stage '" + a.stage +
                        "' (configured stages:" + names + ")");
    }
    if (ts.stage_index != uint32_t(idx)) {
      ts.stage_index = uint32_t(idx);
      ts.step_in_stage = 0;
      ts.samples_consumed = 0;
      resumed_mid_stage = false;
    }
    first = idx;
    last_excl = idx + 1;
  }
  if (first >= spec.stages.size())
    throw ConfigError("cli: checkpoint is already past the final stage");

  const bool append = !a.checkpoint.empty();
  std::ofstream metrics(out / "metrics.csv",
                        append ? std::ios::app : std::ios::trunc);
  std::ofstream holdout(out / "holdout.csv",
                        append ? std::ios::app : std::ios::trunc);
  if (!metrics || !holdout)
    throw ConfigError("cli: cannot open metrics files under " + out.string());

  for (size_t i = first; i < last_excl; i++) {
    const StageConfig& sc = spec.stages[i];
    if (ts.stage_index != uint32_t(i)) {
      ts.stage_index = uint32_t(i);
      ts.step_in_stage = 0;
      ts.samples_consumed = 0;
    }
    if (ts.step_in_stage >= sc.total_steps()) continue;  // already done

    if (!params.has_gen && stage_needs_generation(sc)) {
      promote_backbone(params);
      resumed_mid_stage = false;
    }
    // fresh moments at each stage start; mid-stage resumes keep theirs
    if (!resumed_mid_stage) opt = init_optimizer(params);
    resumed_mid_stage = false;

    RunStageOptions opts;
    opts.metrics = &metrics;
    opts.holdout_log = &holdout;
    opts.checkpoint_path = (out / ("ckpt_" + sc.name + ".bin")).string();
    opts.write_header = metrics.tellp() == std::streampos(0);
    std::cerr << "stage " << sc.name << ": " << sc.total_steps()
              << " steps\n";
    const StageSummary sum = run_stage(world, params, opt, ts, sc, opts);
    std::cout << "stage " << sc.name << ": holdout "
              << detail::fmt_g(sum.initial_holdout) << " -> "
              << detail::fmt_g(sum.final_holdout) << " over " << sum.steps_run
              << " steps\n";
  }
  return 0;
}

// ---- generate ----

struct GenerateArgs {
  std::string config, out, checkpoint, prompt;
  uint64_t seed = 0;
  float temperature = 0.0f;
  int top_k = 0;
};

Attributes parse_prompt(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  std::string w;
  while (in >> w) words.push_back(w);

  auto slots = []() {
    std::string msg = "prompt must be '<color> <shape> <position>'; colors:";
    for (auto* n : kColorNames) msg += std::string(" ") + n;
    msg += "; shapes:";
    for (auto* n : kShapeNames) msg += std::string(" ") + n;
    msg += "; positions:";
    for (auto* n : kPositionNames) msg += std::string(" ") + n;
    return msg;
  };
  if (words.size() != 3)
    throw ConfigError("cli: got " + std::to_string(words.size()) +
                      " prompt words; " + slots());

  Attributes a;
  int c = -1, s = -1, p = -1;
  for (int i = 0; i < kNumColors; i++)
    if (words[0] == kColorNames[i]) c = i;
  for (int i = 0; i < kNumShapes; i++)
    if (words[1] == kShapeNames[i]) s = i;
  for (int i = 0; i < kNumPositions; i++)
    if (words[2] == kPositionNames[i]) p = i;
  if (c < 0 || s < 0 || p < 0)
    throw ConfigError("cli: unrecognized prompt word; " + slots());
  a.color = c;
  a.shape = s;
  a.position = p;
  return a;
}

std::string attributes_text(const Attributes& a) {
  return std::string(kColorNames[a.color]) + " " + kShapeNames[a.shape] + " " +
         kPositionNames[a.position];
}

int cmd_generate(const GenerateArgs& a, const std::string& invocation) {
  RunSpec spec = load_run_spec(a.config);
  const fs::path out = prepare_out_dir(a.out, "generate");
  write_manifest(out, invocation, spec);

  const Attributes want = parse_prompt(a.prompt);
  Checkpoint<float> ck = load_checkpoint<float>(a.checkpoint);
  if (!ck.params.has_gen)
    throw ConfigError("cli: checkpoint has no generation expert; train a "
                      "generative stage first");

  const World world = build_world(spec.world);
  if (world.vocab.text_size != ck.cfg.vocab.text_size ||
      world.vocab.sem_size != ck.cfg.vocab.sem_size ||
      world.vocab.pix_size != ck.cfg.vocab.pix_size)
    throw ConfigError("cli: world and checkpoint vocabularies differ");

  SampleRules rules;
  rules.temperature = a.temperature;
  rules.top_k = a.top_k;
  Rng rng(a.seed);
  const PromptResult res =
      run_prompt(ck.params, world, t2i_prefix(world, want), RoutingPolicy{},
                 rules, rng);

  write_token_trace((out / "tokens.txt").string(), res.sample.ids,
                    world.vocab);
  write_ppm(res.raster, (out / "image.ppm").string());
  std::ostringstream verdict;
  verdict << "prompt: " << attributes_text(want) << '\n';
  verdict << "oracle: " << (res.judged ? attributes_text(*res.judged) : "none")
          << '\n';
  verdict << "match: " << (res.judged && *res.judged == want ? "yes" : "no")
          << '\n';
  write_text_file(out / "verdict.txt", verdict.str());
  std::cout << verdict.str();
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string which, config, out;
  int64_t pretrain_samples = 6400;
  int64_t gen_samples = 12800;
  int eval_n = 200;
  int64_t seed = -1;
  int jobs = 1;
};

int cmd_ablate(const AblateArgs& a, const std::string& invocation) {
  if (a.which != "representation" && a.which != "architecture" &&
      a.which != "routing")
    throw ConfigError("cli: unknown ablation '" + a.which +
                      "' (valid: representation, architecture, routing)");
  if (a.jobs < 1)
    throw ConfigError("cli: --jobs must be at least 1");

  RunSpec spec = load_run_spec(a.config);
  if (a.seed >= 0) spec.seed = uint64_t(a.seed);
  const fs::path out = prepare_out_dir(a.out, "ablate");
  write_manifest(out, invocation, spec);

  AblationBudget budget;
  budget.pretrain_samples = a.pretrain_samples;
  budget.gen_samples = a.gen_samples;
  budget.eval_n = a.eval_n;
  budget.seed = spec.seed;

  std::vector<std::pair<std::string, EvalReport>> rows;
  if (a.which == "representation") {
    for (const RepresentationRow& r :
         ablate_representation(spec.model, budget, &std::cerr))
      rows.emplace_back(r.label, r.report);
  } else {
    const World world = build_world(spec.world);
    ModelConfig mc = spec.model;
    mc.vocab = world.vocab;
    if (a.which == "architecture") {
      const ArchitectureAblation r =
          ablate_architecture(world, mc, budget, &std::cerr);
      rows.emplace_back("MoT", r.mot_after);
      rows.emplace_back("Dense", r.dense_after);
    } else {
      for (const RoutingRow& r : ablate_routing(world, mc, budget, &std::cerr))
        rows.emplace_back(r.label, r.report);
    }
  }

  std::ostringstream csv;
  csv << kEvalCsvHeader << '\n';
  for (const auto& [label, report] : rows)
    write_eval_csv_row(csv, label, report);
  write_text_file(out / (a.which + ".csv"), csv.str());
  print_eval_table(std::cout, rows);
  return 0;
}

// ---- inspect ----

struct InspectArgs {
  std::string trace, config;
};

int cmd_inspect(const InspectArgs& a) {
  RunSpec spec = load_run_spec(a.config);
  // Vocabulary layout and block shape are fixed by the world config alone
  // (the id space stays constant even when a stream is disabled), so no
  // codebook training is needed to validate a trace.
  const VocabLayout vocab{spec.world.text_size, spec.world.tok.sem_k,
                          spec.world.tok.pix_k};

  std::ifstream f(a.trace);
  if (!f) throw ConfigError("cli: cannot read trace " + a.trace);
  std::vector<int> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    lineno++;
    std::istringstream ls(line);
    long long id;
    if (!(ls >> id)) {
      if (detail::cfg_trim(line).empty()) continue;
      throw ConfigError("cli: trace line " + std::to_string(lineno) +
                        " is not a token id: '" + line + "'");
    }
    ids.push_back(int(id));
  }

  for (size_t i = 0; i < ids.size(); i++)
    if (ids[i] < 0 || ids[i] >= vocab.total())
      throw GrammarError("trace: id " + std::to_string(ids[i]) +
                             " outside the vocabulary",
                         i);

  MultimodalSequence seq;
  for (int id : ids) detail::push_id(seq, id, vocab);
  const auto tags = route_tokens(seq, RoutingPolicy{}, vocab);
  for (size_t i = 0; i < ids.size(); i++)
    std::cout << i << '\t' << ids[i] << '\t'
              << token_class_name(vocab.classify(ids[i])) << '\t'
              << (tags[i] == Expert::Gen ? "Gen" : "Und") << '\n';

  const int s = spec.world.use_sem ? spec.world.tok.sem_tokens() : 0;
  const int p = spec.world.use_pix ? spec.world.tok.pix_tokens() : 0;
  const BlockCodes codes = parse_image_block(ids, vocab, s, p);
  std::cout << "block valid: " << codes.sem.size() << " semantic + "
            << codes.pix.size() << " pixel ids\n";
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"toy dual-expert multimodal model driver"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "run configured stages");
  train->add_option("--config", ta.config, "run configuration file")
      ->required();
  train->add_option("--seed", ta.seed, "override the run seed");
  train->add_option("--out", ta.out, "output directory");
  train->add_option("--checkpoint", ta.checkpoint, "resume from checkpoint");
  train->add_option("--stage", ta.stage, "run only this stage");

  GenerateArgs ga;
  CLI::App* gen = app.add_subcommand("generate", "prompted image generation");
  gen->add_option("--config", ga.config, "run configuration file")->required();
  gen->add_option("--checkpoint", ga.checkpoint, "model checkpoint")
      ->required();
  gen->add_option("--prompt", ga.prompt, "'<color> <shape> <position>'")
      ->required();
  gen->add_option("--seed", ga.seed, "sampling seed");
  gen->add_option("--temperature", ga.temperature, "0 = greedy");
  gen->add_option("--top-k", ga.top_k, "0 = full distribution");
  gen->add_option("--out", ga.out, "output directory");

  AblateArgs aa;
  CLI::App* abl = app.add_subcommand("ablate", "run an ablation study");
  abl->add_option("--which", aa.which,
                  "representation | architecture | routing")
      ->required();
  abl->add_option("--config", aa.config, "run configuration file")->required();
  abl->add_option("--pretrain-samples", aa.pretrain_samples,
                  "understanding pretraining budget per leg");
  abl->add_option("--gen-samples", aa.gen_samples,
                  "generative training budget per leg");
  abl->add_option("--eval-n", aa.eval_n, "evaluation prompts per leg");
  abl->add_option("--seed", aa.seed, "override the run seed");
  abl->add_option("--jobs", aa.jobs,
                  "upper bound on parallel legs (this build runs legs "
                  "sequentially, which always respects the bound)");
  abl->add_option("--out", aa.out, "output directory");

  InspectArgs ia;
  CLI::App* ins =
      app.add_subcommand("inspect", "validate a token trace file");
  ins->add_option("--trace", ia.trace, "token trace (one id per line)")
      ->required();
  ins->add_option("--config", ia.config, "run configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are configuration errors
  }

  const std::string invocation = join_args(argc, argv);
  if (train->parsed()) return cmd_train(ta, invocation);
  if (gen->parsed()) return cmd_generate(ga, invocation);
  if (abl->parsed()) return cmd_ablate(aa, invocation);
  return cmd_inspect(ia);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const GrammarError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}

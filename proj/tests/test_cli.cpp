#include <catch2/catch_amalgamated.hpp>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "unimot/checkpoint.hpp"
#include "unimot/config.hpp"
#include "unimot/eval.hpp"

using namespace unimot;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "unimot_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

struct CliResult {
  int code = -1;
  std::string out, err;
};

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path of = scratch_root() / ("stdout_" + std::to_string(counter));
  const fs::path ef = scratch_root() / ("stderr_" + std::to_string(counter));
  counter++;
  const std::string cmd = std::string(UNIMOT_CLI_PATH) + " " + args + " > " +
                          of.string() + " 2> " + ef.string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(of);
  r.err = read_file(ef);
  return r;
}

// Tiny pipeline: 4+4 steps on a one-layer model over a coarse world, built
// for exercising command plumbing rather than model quality.
std::string tiny_cfg_text() {
  return
      "[run]\n"
      "seed = 11\n"
      "\n"
      "[model]\n"
      "d_model = 16\n"
      "n_layers = 1\n"
      "n_heads = 2\n"
      "d_ff = 32\n"
      "slot_dim = 108\n"
      "init_scale = 0.02\n"
      "rope_base = 10000\n"
      "seed = 5\n"
      "\n"
      "[world]\n"
      "img = 24\n"
      "patch = 6\n"
      "grid = 3\n"
      "pix_k = 128\n"
      "sem_k = 64\n"
      "text_size = 256\n"
      "use_sem = true\n"
      "use_pix = true\n"
      "kmeans_iters = 2\n"
      "jitter_copies = 0\n"
      "jitter_amp = 0.02\n"
      "seed = 1234\n"
      "\n"
      "[stage.pre]\n"
      "learning_rate = 0.001\n"
      "schedule = cosine\n"
      "warmup_steps = 1\n"
      "total_samples = 64\n"
      "batch_size = 16\n"
      "clip_norm = 1\n"
      "mix = i2t:2,text:1\n"
      "policy = und/und\n"
      "i2t_discrete = false\n"
      "holdout_task = i2t\n"
      "\n"
      "[stage.gen]\n"
      "learning_rate = 0.001\n"
      "schedule = cosine\n"
      "warmup_steps = 1\n"
      "total_samples = 64\n"
      "batch_size = 16\n"
      "clip_norm = 1\n"
      "mix = t2i:14,i2t:2,edit:1\n"
      "policy = und/und\n"
      "i2t_discrete = true\n"
      "holdout_task = t2i\n";
}

fs::path tiny_cfg_path() {
  static fs::path p = [] {
    fs::path path = scratch_root() / "tiny.cfg";
    write_file(path, tiny_cfg_text());
    return path;
  }();
  return p;
}

// Config with the default (well-trained) world and no stages: enough for
// generate and inspect, which never touch the stage list.
fs::path world_cfg_path() {
  static fs::path p = [] {
    RunSpec spec;
    spec.seed = 1;
    spec.model.d_model = 32;
    spec.model.n_layers = 2;
    spec.model.n_heads = 2;
    spec.model.d_ff = 64;
    fs::path path = scratch_root() / "world.cfg";
    write_file(path, render_run_spec(spec));
    return path;
  }();
  return p;
}

World& toy_world() {
  static World w = build_world(WorldConfig{});
  return w;
}

bool same_stage(const StageConfig& a, const StageConfig& b) {
  return a.name == b.name && a.learning_rate == b.learning_rate &&
         a.schedule == b.schedule && a.warmup_steps == b.warmup_steps &&
         a.total_samples == b.total_samples && a.batch_size == b.batch_size &&
         a.clip_norm == b.clip_norm && a.mix.tasks == b.mix.tasks &&
         a.mix.weights == b.mix.weights && a.policy == b.policy &&
         a.i2t_discrete == b.i2t_discrete && a.holdout_task == b.holdout_task;
}

}  // namespace

TEST_CASE("run configuration round-trips through its text form") {
  RunSpec s;
  s.seed = 42;
  s.world.kmeans_iters = 7;
  s.world.use_sem = false;
  s.model.d_model = 96;
  s.model.init_scale = 0.05f;
  s.stages = {pretrain_config(), stage1_config(), stage2_config(),
              stage3_config()};
  s.stages[1].policy = RoutingPolicy{Expert::Gen, Expert::Und};

  const RunSpec t = parse_run_spec(render_run_spec(s));
  REQUIRE(t.seed == s.seed);
  REQUIRE(t.model.d_model == s.model.d_model);
  REQUIRE(t.model.init_scale == s.model.init_scale);
  REQUIRE(t.model.rope_base == s.model.rope_base);
  REQUIRE(t.model.seed == s.model.seed);
  REQUIRE(t.world.tok.img == s.world.tok.img);
  REQUIRE(t.world.use_sem == s.world.use_sem);
  REQUIRE(t.world.kmeans_iters == s.world.kmeans_iters);
  REQUIRE(t.world.jitter_amp == s.world.jitter_amp);
  REQUIRE(t.world.seed == s.world.seed);
  REQUIRE(t.stages.size() == s.stages.size());
  for (size_t i = 0; i < s.stages.size(); i++)
    REQUIRE(same_stage(t.stages[i], s.stages[i]));
}

TEST_CASE("configuration parser rejects malformed input by name") {
  const std::string good = tiny_cfg_text();

  // unknown field names the typo and its section
  REQUIRE_THROWS_WITH(parse_run_spec("[model]\nd_modle = 16\n"),
                      Catch::Matchers::ContainsSubstring("d_modle") &&
                          Catch::Matchers::ContainsSubstring("[model]"));
  REQUIRE_THROWS_WITH(parse_run_spec("[stage.x]\nlearning_rate = 1\nlr = 2\n"),
                      Catch::Matchers::ContainsSubstring("'lr'"));

  // duplicates are typos too
  REQUIRE_THROWS_WITH(
      parse_run_spec("[model]\nd_model = 16\nd_model = 32\n"),
      Catch::Matchers::ContainsSubstring("duplicate field 'd_model'"));
  REQUIRE_THROWS_WITH(parse_run_spec("[run]\nseed = 1\n[run]\nseed = 2\n"),
                      Catch::Matchers::ContainsSubstring("duplicate section"));

  // a stage must say its learning rate out loud
  REQUIRE_THROWS_WITH(parse_run_spec("[stage.s1]\nbatch_size = 8\n"),
                      Catch::Matchers::ContainsSubstring("learning_rate"));

  // values are type-checked under the field's name
  REQUIRE_THROWS_WITH(parse_run_spec("[model]\nd_model = abc\n"),
                      Catch::Matchers::ContainsSubstring("d_model"));
  REQUIRE_THROWS_WITH(
      parse_run_spec("[stage.a]\nlearning_rate = 1\nmix = t2x:1\n"),
      Catch::Matchers::ContainsSubstring("unknown task"));
  REQUIRE_THROWS_WITH(
      parse_run_spec("[stage.a]\nlearning_rate = 1\nmix = t2i:-1\n"),
      Catch::Matchers::ContainsSubstring("positive"));
  REQUIRE_THROWS_WITH(
      parse_run_spec("[stage.a]\nlearning_rate = 1\npolicy = both\n"),
      Catch::Matchers::ContainsSubstring("und/und"));
  REQUIRE_THROWS_WITH(
      parse_run_spec("[stage.a]\nlearning_rate = 1\nschedule = linear\n"),
      Catch::Matchers::ContainsSubstring("cosine"));
  REQUIRE_THROWS_WITH(parse_run_spec("[world]\nuse_sem = maybe\n"),
                      Catch::Matchers::ContainsSubstring("true or false"));

  // structural errors
  REQUIRE_THROWS_WITH(parse_run_spec("seed = 1\n"),
                      Catch::Matchers::ContainsSubstring("before any"));
  REQUIRE_THROWS_WITH(parse_run_spec("[oops]\n"),
                      Catch::Matchers::ContainsSubstring("unknown section"));
  REQUIRE_THROWS_WITH(parse_run_spec("[model\nd_model = 4\n"),
                      Catch::Matchers::ContainsSubstring("unterminated"));
  REQUIRE_THROWS_WITH(parse_run_spec("[model]\nno equals sign\n"),
                      Catch::Matchers::ContainsSubstring("field = value"));
  REQUIRE_THROWS_AS(load_run_spec("/nonexistent/path.cfg"), ConfigError);

  // comments and blank lines are ignored
  const RunSpec ok = parse_run_spec("# header\n\n; also a comment\n" + good);
  REQUIRE(ok.stages.size() == 2);
  REQUIRE(ok.stages[0].name == "pre");
}

TEST_CASE("train command runs the pipeline and is reproducible") {
  const fs::path out1 = scratch_root() / "train1";
  const fs::path out2 = scratch_root() / "train2";

  const CliResult r1 = run_cli("train --config " + tiny_cfg_path().string() +
                               " --out " + out1.string());
  INFO(r1.err);
  REQUIRE(r1.code == 0);
  REQUIRE(fs::exists(out1 / "manifest.txt"));
  REQUIRE(fs::exists(out1 / "metrics.csv"));
  REQUIRE(fs::exists(out1 / "holdout.csv"));
  REQUIRE(fs::exists(out1 / "ckpt_pre.bin"));
  REQUIRE(fs::exists(out1 / "ckpt_gen.bin"));
  REQUIRE(r1.out.find("stage pre") != std::string::npos);
  REQUIRE(r1.out.find("stage gen") != std::string::npos);

  // one header, then rows from both stages in order
  const std::string metrics = read_file(out1 / "metrics.csv");
  REQUIRE(metrics.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  REQUIRE(metrics.find("\n0,pre,") != std::string::npos);
  REQUIRE(metrics.find("\n0,gen,") != std::string::npos);
  REQUIRE(metrics.find(std::string(kMetricsHeader) + "\n",
                       std::string(kMetricsHeader).size()) ==
          std::string::npos);

  // the manifest is itself a loadable config equal to the input
  const RunSpec from_manifest = load_run_spec((out1 / "manifest.txt").string());
  const RunSpec from_cfg = load_run_spec(tiny_cfg_path().string());
  REQUIRE(render_run_spec(from_manifest) == render_run_spec(from_cfg));

  // equal seeds, equal artifacts
  const CliResult r2 = run_cli("train --config " + tiny_cfg_path().string() +
                               " --out " + out2.string());
  REQUIRE(r2.code == 0);
  REQUIRE(read_file(out2 / "metrics.csv") == metrics);
  REQUIRE(read_file(out2 / "holdout.csv") == read_file(out1 / "holdout.csv"));
  REQUIRE(read_file(out2 / "ckpt_gen.bin") == read_file(out1 / "ckpt_gen.bin"));
}

TEST_CASE("train command maps failures to exit codes") {
  // missing learning_rate in a stage: configuration error naming the field
  const fs::path bad = scratch_root() / "bad.cfg";
  std::string text = tiny_cfg_text();
  const size_t at = text.find("learning_rate = 0.001\n");
  text.erase(at, std::string("learning_rate = 0.001\n").size());
  write_file(bad, text);
  const CliResult r =
      run_cli("train --config " + bad.string() + " --out " +
              (scratch_root() / "badout").string());
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("learning_rate") != std::string::npos);

  // unknown stage selector
  const CliResult r2 =
      run_cli("train --config " + tiny_cfg_path().string() + " --stage nope" +
              " --out " + (scratch_root() / "badout2").string());
  REQUIRE(r2.code == 2);
  REQUIRE(r2.err.find("nope") != std::string::npos);
  REQUIRE(r2.err.find("pre") != std::string::npos);

  // non-finite weights surface as a numeric failure
  const RunSpec spec = load_run_spec(tiny_cfg_path().string());
  ModelConfig mc = spec.model;
  mc.vocab = VocabLayout{spec.world.text_size, spec.world.tok.sem_k,
                         spec.world.tok.pix_k};
  MoTParams<float> p = init_model<float>(mc);
  p.und.layers[0].wq.data[0] = std::nanf("");
  const fs::path nan_ckpt = scratch_root() / "nan.bin";
  save_checkpoint(nan_ckpt.string(), p);
  const CliResult r3 = run_cli("train --config " + tiny_cfg_path().string() +
                               " --checkpoint " + nan_ckpt.string() +
                               " --out " + (scratch_root() / "badout3").string());
  REQUIRE(r3.code == 3);

  // bad flags and missing subcommands are configuration errors
  REQUIRE(run_cli("train").code == 2);
  REQUIRE(run_cli("bogus").code == 2);
  REQUIRE(run_cli("").code == 2);
  REQUIRE(run_cli("--help").code == 0);
}

TEST_CASE("single stage selection trains only that stage") {
  const fs::path out = scratch_root() / "train_stage";
  const CliResult r = run_cli("train --config " + tiny_cfg_path().string() +
                              " --stage pre --out " + out.string());
  INFO(r.err);
  REQUIRE(r.code == 0);
  const std::string metrics = read_file(out / "metrics.csv");
  REQUIRE(metrics.find(",pre,") != std::string::npos);
  REQUIRE(metrics.find(",gen,") == std::string::npos);
  REQUIRE(fs::exists(out / "ckpt_pre.bin"));
  REQUIRE_FALSE(fs::exists(out / "ckpt_gen.bin"));
}

TEST_CASE("generate writes deterministic artifacts with an oracle verdict") {
  // a model that memorized one caption-image pair answers its own prompt
  World& w = toy_world();
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.d_ff = 64;
  mc.vocab = w.vocab;
  mc.seed = 717;
  MoTParams<float> p = init_model<float>(mc);
  promote_backbone(p);
  const Sample s = gen_sample(w, TaskKind::T2I, 424242);
  GradSinks<float> sinks = make_grad_sinks(p);
  OptimizerState<float> opt = init_optimizer(p);
  for (int step = 0; step < 400; step++) {
    Graph<float> g;
    BoundModel<float> b = bind_model(g, p, &sinks);
    auto tags = route_tokens(s.seq, RoutingPolicy{}, w.vocab);
    auto fwd = forward_sequence(g, b, p, s.seq, tags);
    auto nll = sequence_nll(g, fwd, p, s.seq);
    auto loss = g.scale(nll.node, float(1.0 / double(nll.count)));
    sinks.zero();
    g.backward(loss);
    adamw_step(p, sinks, opt, 3e-3, 1.0);
  }
  const fs::path ckpt = scratch_root() / "memo.bin";
  save_checkpoint(ckpt.string(), p);

  const std::string prompt = std::string(kColorNames[s.attrs.color]) + " " +
                             kShapeNames[s.attrs.shape] + " " +
                             kPositionNames[s.attrs.position];
  const fs::path out1 = scratch_root() / "gen1";
  const std::string args = "generate --config " + world_cfg_path().string() +
                           " --checkpoint " + ckpt.string() + " --prompt \"" +
                           prompt + "\"";
  const CliResult r1 = run_cli(args + " --out " + out1.string());
  INFO(r1.err);
  REQUIRE(r1.code == 0);
  REQUIRE(fs::exists(out1 / "tokens.txt"));
  REQUIRE(fs::exists(out1 / "image.ppm"));
  const std::string verdict = read_file(out1 / "verdict.txt");
  REQUIRE(verdict.find("prompt: " + prompt) != std::string::npos);
  REQUIRE(verdict.find("oracle: " + prompt) != std::string::npos);
  REQUIRE(verdict.find("match: yes") != std::string::npos);
  REQUIRE(r1.out.find("match: yes") != std::string::npos);

  // greedy decoding twice gives byte-identical artifacts
  const fs::path out2 = scratch_root() / "gen2";
  const CliResult r2 = run_cli(args + " --out " + out2.string());
  REQUIRE(r2.code == 0);
  REQUIRE(read_file(out2 / "tokens.txt") == read_file(out1 / "tokens.txt"));
  REQUIRE(read_file(out2 / "image.ppm") == read_file(out1 / "image.ppm"));
  REQUIRE(read_file(out2 / "verdict.txt") == verdict);

  // the token trace feeds straight back into inspect
  const CliResult ins = run_cli("inspect --trace " +
                                (out1 / "tokens.txt").string() + " --config " +
                                world_cfg_path().string());
  REQUIRE(ins.code == 0);
  REQUIRE(ins.out.find("block valid: 9 semantic + 16 pixel ids") !=
          std::string::npos);

  // malformed prompts list the valid template slots
  const CliResult bad = run_cli(
      "generate --config " + world_cfg_path().string() + " --checkpoint " +
      ckpt.string() + " --prompt \"purple blob nowhere\" --out " +
      (scratch_root() / "gen3").string());
  REQUIRE(bad.code == 2);
  REQUIRE(bad.err.find("colors:") != std::string::npos);
  REQUIRE(bad.err.find("shapes:") != std::string::npos);
  REQUIRE(bad.err.find("positions:") != std::string::npos);

  // unloadable checkpoints are checkpoint errors
  const CliResult nock = run_cli(
      "generate --config " + world_cfg_path().string() +
      " --checkpoint /nonexistent.bin --prompt \"" + prompt + "\" --out " +
      (scratch_root() / "gen4").string());
  REQUIRE(nock.code == 4);
}

TEST_CASE("inspect validates traces and reports the first violation") {
  World& w = toy_world();
  const std::vector<int> block = w.image_block(w.render(Attributes{2, 4, 7}));

  auto write_trace = [&](const char* name, const std::vector<int>& ids) {
    std::ostringstream text;
    for (int id : ids) text << id << '\n';
    const fs::path p = scratch_root() / name;
    write_file(p, text.str());
    return p;
  };

  const fs::path valid = write_trace("trace_ok.txt", block);
  const CliResult ok = run_cli("inspect --trace " + valid.string() +
                               " --config " + world_cfg_path().string());
  REQUIRE(ok.code == 0);
  REQUIRE(ok.out.find("block valid") != std::string::npos);
  // per-token table names classes and routes
  REQUIRE(ok.out.find("\tsem\t") != std::string::npos);
  REQUIRE(ok.out.find("\tpix\t") != std::string::npos);
  REQUIRE(ok.out.find("\tspecial\t") != std::string::npos);
  REQUIRE(ok.out.find("Gen") != std::string::npos);

  // a pixel id where a semantic id belongs: violation at that position
  std::vector<int> swapped = block;
  std::swap(swapped[1], swapped[10]);
  const CliResult sw = run_cli("inspect --trace " +
                               write_trace("trace_swap.txt", swapped).string() +
                               " --config " + world_cfg_path().string());
  REQUIRE(sw.code == 5);
  REQUIRE(sw.err.find("position 1") != std::string::npos);

  // missing the closing id: violation at end of input
  std::vector<int> truncated(block.begin(), block.end() - 1);
  const CliResult tr =
      run_cli("inspect --trace " +
              write_trace("trace_trunc.txt", truncated).string() +
              " --config " + world_cfg_path().string());
  REQUIRE(tr.code == 5);
  REQUIRE(tr.err.find("position") != std::string::npos);

  // ids outside the vocabulary fail with their position
  std::vector<int> alien = block;
  alien[3] = 100000;
  const CliResult al = run_cli("inspect --trace " +
                               write_trace("trace_alien.txt", alien).string() +
                               " --config " + world_cfg_path().string());
  REQUIRE(al.code == 5);
  REQUIRE(al.err.find("position 3") != std::string::npos);

  // non-numeric trace content is a configuration error
  const fs::path garbled = scratch_root() / "trace_bad.txt";
  write_file(garbled, "12\nhello\n");
  const CliResult gb = run_cli("inspect --trace " + garbled.string() +
                               " --config " + world_cfg_path().string());
  REQUIRE(gb.code == 2);
  REQUIRE(gb.err.find("line 2") != std::string::npos);
}

TEST_CASE("ablate rejects unknown studies and bad job counts") {
  const CliResult r = run_cli("ablate --which nonsense --config " +
                              tiny_cfg_path().string() + " --out " +
                              (scratch_root() / "ab1").string());
  REQUIRE(r.code == 2);
  REQUIRE(r.err.find("representation") != std::string::npos);

  const CliResult r2 = run_cli("ablate --which routing --jobs 0 --config " +
                               tiny_cfg_path().string() + " --out " +
                               (scratch_root() / "ab2").string());
  REQUIRE(r2.code == 2);
}

TEST_CASE("ablate writes a table per study with the expected rows") {
  // micro budget: plumbing only, directions are asserted at real budgets in
  // the acceptance gate
  const std::string budget =
      " --pretrain-samples 32 --gen-samples 32 --eval-n 4 --seed 3";
  const fs::path out = scratch_root() / "ab_rout";
  const CliResult r = run_cli("ablate --which routing --config " +
                              tiny_cfg_path().string() + budget + " --out " +
                              out.string());
  INFO(r.err);
  REQUIRE(r.code == 0);
  const std::string csv = read_file(out / "routing.csv");
  std::istringstream lines(csv);
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(lines, line))
    if (!line.empty()) rows.push_back(line);
  REQUIRE(rows.size() == 5);  // header + 4 policies
  REQUIRE(rows[0] == kEvalCsvHeader);
  REQUIRE(rows[1].rfind("Und/Und,", 0) == 0);
  REQUIRE(rows[2].rfind("Gen/Und,", 0) == 0);
  REQUIRE(rows[3].rfind("Und/Gen,", 0) == 0);
  REQUIRE(rows[4].rfind("Gen/Gen,", 0) == 0);
  REQUIRE(r.out.find("harm_und") != std::string::npos);

  const fs::path out2 = scratch_root() / "ab_arch";
  const CliResult r2 = run_cli("ablate --which architecture --config " +
                               tiny_cfg_path().string() + budget + " --out " +
                               out2.string());
  INFO(r2.err);
  REQUIRE(r2.code == 0);
  const std::string csv2 = read_file(out2 / "architecture.csv");
  REQUIRE(csv2.find("\nMoT,") != std::string::npos);
  REQUIRE(csv2.find("\nDense,") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "budgetformer/errors.hpp"
#include "budgetformer/runner.hpp"

using namespace budgetformer;
namespace fs = std::filesystem;

namespace {

// small enough that a full run is a fraction of a second
RunConfig tiny_run_config(const std::string& out_dir) {
  RunConfig cfg;
  cfg.model.vocab_size = 64;
  cfg.model.max_seq_len = 32;
  cfg.model.model_dim = 16;
  cfg.model.heads = 4;
  cfg.model.layers = 1;
  cfg.model.classes = 2;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.log_interval = 2;
  cfg.train_examples = 24;
  cfg.val_examples = 8;
  cfg.output_dir = out_dir;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("/tmp/" + name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("default config carries the desk-scale shape") {
  RunConfig cfg;
  CHECK(cfg.model.model_dim == 64);
  CHECK(cfg.model.heads == 8);
  CHECK(cfg.model.layers == 2);
  CHECK(cfg.train.epochs == 10);
  CHECK(cfg.train.batch_size == 16);
  CHECK(cfg.train.budget.alpha_base == 0.001);
  CHECK(cfg.train.budget.alpha_max == 0.05);
  CHECK(cfg.train.schedule.sigma_max == 0.5);
  CHECK(cfg.train.schedule.tau_max == 2.0);
  CHECK(cfg.train.schedule.tau_min == 0.1);
  CHECK(cfg.train.schedule.gamma == 5.0);
  CHECK(cfg.train.schedule.beta_max == 0.05);
  CHECK(cfg.train.budget.s_min == 0.1);
  CHECK(cfg.train.budget.s_max == 0.9);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config serialization round trips") {
  RunConfig cfg;
  cfg.model.model_dim = 48;
  cfg.train.learning_rate = 0.25;
  cfg.train.seed = 123;
  cfg.task = "composition";
  cfg.train.ablation = Ablation::random_gating;
  cfg.model.attention_kind = AttentionKind::standard;
  std::string text = run_config_to_json(cfg);
  RunConfig back = parse_run_config(text);
  CHECK(run_config_to_json(back) == text);
  CHECK(back.model.model_dim == 48);
  CHECK(back.train.seed == 123);
  CHECK(back.train.ablation == Ablation::random_gating);
  CHECK(back.model.attention_kind == AttentionKind::standard);
}

TEST_CASE("config rejections name the field") {
  CHECK_THROWS_WITH_AS(parse_run_config("{\"not_a_key\": 1}"),
                       "config: unknown key 'not_a_key'", ParameterError);
  CHECK_THROWS_WITH_AS(parse_run_config("{\"epochs\": \"ten\"}"),
                       "config: 'epochs' must be an integer", ParameterError);
  CHECK_THROWS_WITH_AS(parse_run_config("{\"task\": 3}"), "config: 'task' must be a string",
                       ParameterError);
  CHECK_THROWS_AS(parse_run_config("not json"), ParameterError);
  CHECK_THROWS_AS(parse_run_config("[1,2]"), ParameterError);
  CHECK_THROWS_AS(load_run_config("/tmp/definitely_missing_config.json"), IoError);

  RunConfig cfg;
  cfg.model.vocab_size = 10;  // synthetic task needs 2 + classes + distractors
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = RunConfig();
  cfg.train_jsonl = "/tmp/definitely_missing_data.jsonl";
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("overrides parse like JSON scalars") {
  RunConfig cfg;
  apply_override(cfg, "seed=7");
  CHECK(cfg.train.seed == 7);
  apply_override(cfg, "learning_rate=0.01");
  CHECK(cfg.train.learning_rate == 0.01);
  apply_override(cfg, "task=composition");  // unquoted string
  CHECK(cfg.task == "composition");
  apply_override(cfg, "attention=standard");
  CHECK(cfg.model.attention_kind == AttentionKind::standard);
  CHECK_THROWS_AS(apply_override(cfg, "no_equals_sign"), ParameterError);
  CHECK_THROWS_AS(apply_override(cfg, "bogus=1"), ParameterError);
}

TEST_CASE("synthetic data resolution") {
  RunConfig cfg = tiny_run_config("/tmp/unused");
  RunData data = build_run_data(cfg);
  CHECK(data.train.size() == 24);
  CHECK(data.val.size() == 8);
  CHECK(data.vocab.size() <= cfg.model.vocab_size);
  // train and validation come from different seeds
  bool differs = data.train[0].token_ids != data.val[0].token_ids ||
                 data.train[0].label != data.val[0].label;
  CHECK(differs);
  RunData eval_side = build_eval_data(cfg);
  REQUIRE(eval_side.val.size() == 8);
  CHECK(eval_side.val[0].token_ids == data.val[0].token_ids);
}

TEST_CASE("vocabulary files round trip") {
  TempDir dir("bf_vocab_test");
  fs::create_directories(dir.path);
  SyntheticSpec spec;
  spec.classes = 3;
  Vocabulary vocab = make_synthetic(spec, 10, 5).vocab;
  std::string path = dir.path + "/vocab.json";
  save_vocab(path, vocab);
  Vocabulary back = load_vocab(path);
  CHECK(back.id_to_token == vocab.id_to_token);
  CHECK(back.id_of("aaa") == vocab.id_of("aaa"));

  std::ofstream bad(dir.path + "/bad.json");
  bad << "{\"tokens\": 12}";
  bad.close();
  CHECK_THROWS_AS(load_vocab(dir.path + "/bad.json"), DataError);
  CHECK_THROWS_AS(load_vocab(dir.path + "/missing.json"), IoError);
}

TEST_CASE("jsonl data resolution builds its vocabulary from the train file") {
  TempDir dir("bf_jsonl_test");
  fs::create_directories(dir.path);
  std::string train_path = dir.path + "/train.jsonl";
  {
    std::ofstream out(train_path);
    out << R"({"text": "alpha beta gamma", "label": 0})" << "\n";
    out << R"({"text": "beta gamma delta", "label": 1})" << "\n";
    out << R"({"text": "alpha alpha beta", "label": 0})" << "\n";
  }
  RunConfig cfg = tiny_run_config(dir.path + "/out");
  cfg.train_jsonl = train_path;
  CHECK_NOTHROW(cfg.validate());
  RunData data = build_run_data(cfg);
  CHECK(data.train.size() == 3);
  CHECK(data.val.empty());
  CHECK(data.vocab.id_of("alpha") != Vocabulary::kUnk);
  CHECK(data.vocab.id_of("zeta") == Vocabulary::kUnk);

  // eval side falls back to the train file when no val file exists
  RunData eval_side = build_eval_data(cfg);
  CHECK(eval_side.val.size() == 3);
}

TEST_CASE("training runs leave a reproducible trail") {
  TempDir dir_a("bf_runner_a");
  TempDir dir_b("bf_runner_b");
  RunConfig cfg = tiny_run_config(dir_a.path);
  cfg.train.seed = 21;
  TrainingRun run_a = run_training(cfg);
  CHECK_FALSE(run_a.result.diverged);
  CHECK(fs::exists(dir_a.path + "/resolved_config.json"));
  CHECK(fs::exists(dir_a.path + "/vocab.json"));
  CHECK(fs::exists(dir_a.path + "/metrics.jsonl"));
  CHECK(fs::exists(dir_a.path + "/metrics.csv"));
  CHECK(fs::exists(run_a.result.best_checkpoint));
  CHECK(fs::exists(run_a.result.last_checkpoint));

  nlohmann::json snap = nlohmann::json::parse(slurp(dir_a.path + "/resolved_config.json"));
  CHECK(snap["seed"] == 21);
  CHECK(snap["model_dim"] == 16);

  // the snapshot alone reproduces the run bitwise
  RunConfig replay = parse_run_config(slurp(dir_a.path + "/resolved_config.json"));
  replay.output_dir = dir_b.path;
  run_training(replay);
  CHECK(slurp(dir_b.path + "/metrics.jsonl") == slurp(dir_a.path + "/metrics.jsonl"));
  CHECK(slurp(dir_b.path + "/metrics.csv") == slurp(dir_a.path + "/metrics.csv"));
  CHECK(slurp(dir_b.path + "/checkpoints/last.bin") ==
        slurp(dir_a.path + "/checkpoints/last.bin"));
}

TEST_CASE("eval reports are deterministic and honor force_k") {
  TempDir dir("bf_runner_eval");
  RunConfig cfg = tiny_run_config(dir.path);
  TrainingRun run = run_training(cfg);
  REQUIRE(fs::exists(run.result.best_checkpoint));

  EvalRun ev_a = run_eval(run.result.best_checkpoint, cfg, 0, dir.path + "/eval_a");
  EvalRun ev_b = run_eval(run.result.best_checkpoint, cfg, 0, dir.path + "/eval_b");
  CHECK(slurp(ev_a.report_path) == slurp(ev_b.report_path));
  CHECK(ev_a.result.cost.ratio_attention <= 1.0);
  CHECK(ev_a.result.cost.ratio_attention > 0.0);

  EvalRun full = run_eval(run.result.best_checkpoint, cfg, 4, dir.path + "/eval_full");
  CHECK(full.result.cost.ratio_attention == 1.0);
  CHECK(full.mean_k == 4.0);

  nlohmann::json report = nlohmann::json::parse(slurp(ev_a.report_path));
  CHECK(report["examples"] == 8);
  CHECK(report["flops_total"].get<std::int64_t>() > 0);
}

TEST_CASE("fixed budget grid produces one run per value") {
  TempDir dir("bf_runner_grid");
  RunConfig cfg = tiny_run_config(dir.path);
  AblationRun run = run_ablation(cfg, Ablation::fixed_budget, {0.5}, false);
  REQUIRE(run.rows.size() == 1);
  CHECK(run.rows[0].variant == "s=0.5");
  CHECK(run.rows[0].mean_k == 2.0);  // floor(0.5 * 4)
  CHECK(fs::exists(dir.path + "/s_0.5/checkpoints/best.bin"));
  CHECK(fs::exists(run.table_path));

  std::istringstream table(slurp(run.table_path));
  std::string line;
  std::getline(table, line);
  CHECK(line == "s,accuracy,mean_k,ratio_attention");
  std::size_t rows = 0;
  while (std::getline(table, line)) ++rows;
  CHECK(rows == 1);

  CHECK_THROWS_AS(run_ablation(cfg, Ablation::fixed_budget, {}, false), ParameterError);
  CHECK_THROWS_AS(run_ablation(cfg, Ablation::none, {0.5}, false), ParameterError);
}

TEST_CASE("fixed budget 1.0 keeps every head") {
  TempDir dir("bf_runner_full_s");
  RunConfig cfg = tiny_run_config(dir.path);
  AblationRun run = run_ablation(cfg, Ablation::fixed_budget, {1.0}, false);
  REQUIRE(run.rows.size() == 1);
  CHECK(run.rows[0].mean_k == 4.0);
  CHECK(run.rows[0].ratio_attention == 1.0);
}

TEST_CASE("random gating comparison has exactly two rows") {
  TempDir dir("bf_runner_rg");
  RunConfig cfg = tiny_run_config(dir.path);
  AblationRun run = run_ablation(cfg, Ablation::random_gating, {}, false);
  REQUIRE(run.rows.size() == 2);
  CHECK(run.rows[0].variant == "learned");
  CHECK(run.rows[1].variant == "random_gating");
  std::istringstream table(slurp(run.table_path));
  std::string line;
  std::getline(table, line);
  CHECK(line == "variant,accuracy");
}

TEST_CASE("parallel ablation matches the sequential rows") {
  TempDir dir_seq("bf_runner_seq");
  TempDir dir_par("bf_runner_par");
  RunConfig cfg = tiny_run_config(dir_seq.path);
  AblationRun seq = run_ablation(cfg, Ablation::fixed_budget, {0.25, 0.75}, false);
  cfg.output_dir = dir_par.path;
  AblationRun par = run_ablation(cfg, Ablation::fixed_budget, {0.25, 0.75}, true);
  REQUIRE(seq.rows.size() == par.rows.size());
  for (std::size_t i = 0; i < seq.rows.size(); ++i) {
    CHECK(seq.rows[i].variant == par.rows[i].variant);
    CHECK(seq.rows[i].accuracy == par.rows[i].accuracy);
    CHECK(seq.rows[i].mean_k == par.rows[i].mean_k);
  }
}

TEST_CASE("analysis artifacts land in the output directory") {
  TempDir dir("bf_runner_analysis");
  RunConfig cfg = tiny_run_config(dir.path);
  TrainingRun run = run_training(cfg);
  cfg.output_dir = dir.path + "/post";
  AnalysisReport rep = run_analysis(run.result.best_checkpoint, cfg, 1);
  CHECK(rep.examples == 8);
  CHECK(fs::exists(cfg.output_dir + "/analysis/s_by_class.csv"));
  CHECK(fs::exists(cfg.output_dir + "/analysis/s_by_tier.csv"));
  CHECK(fs::exists(cfg.output_dir + "/attention/example_1.json"));
  // per-class rows: layers x classes present in the data
  CHECK(rep.by_class.size() <= static_cast<std::size_t>(cfg.model.layers * cfg.model.classes));
  CHECK(!rep.by_class.empty());
}

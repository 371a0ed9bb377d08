#include "budgetformer/runner.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "budgetformer/errors.hpp"

namespace budgetformer {

namespace fs = std::filesystem;

namespace {

// texts only; load_jsonl re-reads with full validation afterwards
std::vector<std::string> collect_texts(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot read '" + path + "'");
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_object() && obj.contains("text") && obj["text"].is_string()) {
      texts.push_back(obj["text"].get<std::string>());
    }
  }
  return texts;
}

Vocabulary jsonl_vocab(const RunConfig& cfg) {
  if (!cfg.vocab_json.empty()) return load_vocab(cfg.vocab_json);
  if (cfg.train_jsonl.empty()) {
    throw ParameterError("config: JSONL data needs 'vocab_json' or 'train_jsonl'");
  }
  return build_vocab(collect_texts(cfg.train_jsonl), cfg.model.vocab_size);
}

std::string format_compact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

RunData build_run_data(const RunConfig& cfg) {
  RunData data;
  if (!cfg.train_jsonl.empty()) {
    data.vocab = jsonl_vocab(cfg);
    data.train = load_jsonl(cfg.train_jsonl, data.vocab, cfg.model.max_seq_len);
    if (!cfg.val_jsonl.empty()) {
      data.val = load_jsonl(cfg.val_jsonl, data.vocab, cfg.model.max_seq_len);
    }
    return data;
  }
  SyntheticSpec spec;
  spec.task = cfg.task;
  spec.classes = static_cast<int>(cfg.model.classes);
  spec.distractor_words = cfg.distractor_words;
  SyntheticData train = make_synthetic(spec, cfg.train_examples, cfg.train.seed);
  data.vocab = train.vocab;
  data.train = std::move(train.examples);
  if (cfg.val_examples > 0) {
    data.val = make_synthetic(spec, cfg.val_examples, cfg.train.seed + 1).examples;
  }
  return data;
}

RunData build_eval_data(const RunConfig& cfg) {
  RunData data;
  if (!cfg.train_jsonl.empty() || !cfg.val_jsonl.empty()) {
    data.vocab = jsonl_vocab(cfg);
    const std::string& path = cfg.val_jsonl.empty() ? cfg.train_jsonl : cfg.val_jsonl;
    data.val = load_jsonl(path, data.vocab, cfg.model.max_seq_len);
    return data;
  }
  SyntheticSpec spec;
  spec.task = cfg.task;
  spec.classes = static_cast<int>(cfg.model.classes);
  spec.distractor_words = cfg.distractor_words;
  std::int64_t n = cfg.val_examples > 0 ? cfg.val_examples : cfg.train_examples;
  SyntheticData val = make_synthetic(spec, n, cfg.train.seed + 1);
  data.vocab = val.vocab;
  data.val = std::move(val.examples);
  return data;
}

void save_vocab(const std::string& path, const Vocabulary& vocab) {
  nlohmann::json doc;
  doc["tokens"] = vocab.id_to_token;
  std::ofstream out(path);
  if (!out.good()) throw IoError("cannot write '" + path + "'");
  out << doc.dump(2) << '\n';
}

Vocabulary load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw IoError("cannot read '" + path + "'");
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object() || !doc.contains("tokens") ||
      !doc["tokens"].is_array()) {
    throw DataError("vocabulary file '" + path + "' is not {\"tokens\": [...]}");
  }
  Vocabulary vocab;
  vocab.id_to_token = doc["tokens"].get<std::vector<std::string>>();
  if (vocab.id_to_token.size() < 2 || vocab.id_to_token[0] != "<pad>" ||
      vocab.id_to_token[1] != "<unk>") {
    throw DataError("vocabulary file '" + path + "' lacks the reserved <pad>/<unk> slots");
  }
  for (std::size_t i = 0; i < vocab.id_to_token.size(); ++i) {
    vocab.token_to_id[vocab.id_to_token[i]] = static_cast<std::int64_t>(i);
  }
  return vocab;
}

TrainingRun run_training(const RunConfig& cfg) {
  cfg.validate();
  RunData data = build_run_data(cfg);
  fs::create_directories(cfg.output_dir);
  {
    std::ofstream snap(cfg.output_dir + "/resolved_config.json");
    if (!snap.good()) throw IoError("cannot write '" + cfg.output_dir + "/resolved_config.json'");
    snap << run_config_to_json(cfg);
  }
  save_vocab(cfg.output_dir + "/vocab.json", data.vocab);
  Model model(cfg.model, cfg.train.seed);
  TrainingRun run;
  run.out_dir = cfg.output_dir;
  run.result = train(model, data.train, data.val, cfg.train, cfg.output_dir);
  return run;
}

EvalRun run_eval(const std::string& checkpoint_path, const RunConfig& cfg, int force_k,
                 const std::string& out_dir) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  RunData data = build_eval_data(cfg);

  EvalOptions opts;
  opts.batch_size = cfg.train.batch_size;
  opts.step = ckpt.progress.step;
  opts.schedule = cfg.train.schedule;
  opts.schedule.total_steps = std::max<std::int64_t>(1, ckpt.progress.total_steps);
  opts.ablation = cfg.train.ablation;
  opts.fixed_budget_s = cfg.train.fixed_budget_s;
  opts.seed = cfg.train.seed;
  opts.force_k = force_k;
  opts.grams_per_flop = cfg.train.grams_per_flop;
  std::optional<LoadedCheckpoint> reference;
  if (cfg.train.ablation == Ablation::random_gating && !cfg.train.reference_checkpoint.empty()) {
    reference.emplace(load_checkpoint(cfg.train.reference_checkpoint));
    opts.budget_reference = &reference->model;
  }

  EvalRun run;
  run.result = evaluate(ckpt.model, data.val, opts);
  for (double k : run.result.mean_k_layer) run.mean_k += k;
  if (!run.result.mean_k_layer.empty()) {
    run.mean_k /= static_cast<double>(run.result.mean_k_layer.size());
  }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    nlohmann::json doc;
    doc["accuracy"] = run.result.accuracy;
    doc["examples"] = run.result.examples;
    doc["s_mean"] = run.result.s_mean;
    doc["mean_k"] = run.mean_k;
    doc["s_mean_layer"] = run.result.s_mean_layer;
    doc["mean_k_layer"] = run.result.mean_k_layer;
    doc["entropy_layer"] = run.result.entropy_layer;
    doc["flops_projection"] = run.result.cost.flops_projection;
    doc["flops_attention"] = run.result.cost.flops_attention;
    doc["flops_budget_nets"] = run.result.cost.flops_budget_nets;
    doc["flops_other"] = run.result.cost.flops_other;
    doc["flops_total"] = run.result.cost.flops_total;
    doc["memory_attention"] = run.result.cost.memory_attention;
    doc["ratio_attention"] = run.result.cost.ratio_attention;
    doc["mean_budget"] = run.result.cost.mean_budget;
    doc["carbon_proxy"] = run.result.cost.carbon_proxy;
    run.report_path = out_dir + "/cost_report.json";
    std::ofstream out(run.report_path);
    if (!out.good()) throw IoError("cannot write '" + run.report_path + "'");
    out << doc.dump(2) << '\n';
  }
  return run;
}

AblationRun run_ablation(const RunConfig& base, Ablation mode, const std::vector<double>& grid,
                         bool parallel) {
  if (mode == Ablation::none) {
    throw ParameterError("ablate: mode must be fixed_budget or random_gating");
  }
  struct Planned {
    RunConfig cfg;
    std::string variant;
    double value = 0.0;
  };
  std::vector<Planned> planned;
  if (mode == Ablation::fixed_budget) {
    if (grid.empty()) throw ParameterError("ablate: fixed_budget needs a non-empty grid");
    for (double s : grid) {
      Planned p;
      p.cfg = base;
      p.cfg.train.ablation = Ablation::fixed_budget;
      p.cfg.train.fixed_budget_s = s;
      p.cfg.output_dir = base.output_dir + "/s_" + format_compact(s);
      p.variant = "s=" + format_compact(s);
      p.value = s;
      planned.push_back(std::move(p));
    }
  } else {
    for (Ablation a : {Ablation::none, Ablation::random_gating}) {
      Planned p;
      p.cfg = base;
      p.cfg.train.ablation = a;
      p.variant = a == Ablation::none ? "learned" : "random_gating";
      p.cfg.output_dir = base.output_dir + "/" + p.variant;
      planned.push_back(std::move(p));
    }
  }

  auto one = [](Planned p) -> AblationRow {
    TrainingRun tr = run_training(p.cfg);
    std::string ckpt =
        tr.result.best_checkpoint.empty() ? tr.result.last_checkpoint : tr.result.best_checkpoint;
    if (ckpt.empty()) {
      throw std::runtime_error("ablate: run '" + p.variant + "' produced no checkpoint");
    }
    EvalRun ev = run_eval(ckpt, p.cfg, 0, p.cfg.output_dir);
    AblationRow row;
    row.variant = p.variant;
    row.value = p.value;
    row.accuracy = ev.result.accuracy;
    row.mean_k = ev.mean_k;
    row.ratio_attention = ev.result.cost.ratio_attention;
    return row;
  };

  AblationRun run;
  if (parallel) {
    std::vector<std::future<AblationRow>> futures;
    futures.reserve(planned.size());
    for (auto& p : planned) {
      futures.push_back(std::async(std::launch::async, one, p));
    }
    for (auto& f : futures) run.rows.push_back(f.get());
  } else {
    for (auto& p : planned) run.rows.push_back(one(p));
  }

  fs::create_directories(base.output_dir);
  run.table_path = base.output_dir + "/comparison.csv";
  std::ofstream out(run.table_path);
  if (!out.good()) throw IoError("cannot write '" + run.table_path + "'");
  if (mode == Ablation::fixed_budget) {
    out << "s,accuracy,mean_k,ratio_attention\n";
    for (const AblationRow& row : run.rows) {
      out << format_compact(row.value) << ',' << row.accuracy << ',' << row.mean_k << ','
          << row.ratio_attention << '\n';
    }
  } else {
    out << "variant,accuracy\n";
    for (const AblationRow& row : run.rows) {
      out << row.variant << ',' << row.accuracy << '\n';
    }
  }
  return run;
}

AnalysisReport run_analysis(const std::string& checkpoint_path, const RunConfig& cfg,
                            std::int64_t example_index) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  RunData data = build_eval_data(cfg);

  AnalyzeOptions opts;
  opts.eval.batch_size = cfg.train.batch_size;
  opts.eval.step = ckpt.progress.step;
  opts.eval.schedule = cfg.train.schedule;
  opts.eval.schedule.total_steps = std::max<std::int64_t>(1, ckpt.progress.total_steps);
  opts.eval.ablation = cfg.train.ablation;
  opts.eval.fixed_budget_s = cfg.train.fixed_budget_s;
  opts.eval.seed = cfg.train.seed;
  std::optional<LoadedCheckpoint> reference;
  if (cfg.train.ablation == Ablation::random_gating && !cfg.train.reference_checkpoint.empty()) {
    reference.emplace(load_checkpoint(cfg.train.reference_checkpoint));
    opts.eval.budget_reference = &reference->model;
  }
  opts.attention_example = example_index;
  return analyze(ckpt.model, data.val, opts, cfg.output_dir);
}

}  // namespace budgetformer

#include "budgetformer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <optional>
#include <tuple>

#include <json.hpp>

#include "budgetformer/errors.hpp"

namespace budgetformer {

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::fixed_budget: return "fixed_budget";
    case Ablation::random_gating: return "random_gating";
    default: return "none";
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ParameterError("train config: epochs must be at least 1");
  if (batch_size < 1) throw ParameterError("train config: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ParameterError("train config: learning_rate must be positive");
  if (weight_decay < 0.0) throw ParameterError("train config: weight_decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ParameterError("train config: adam betas must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) throw ParameterError("train config: adam_epsilon must be positive");
  if (log_interval < 1) throw ParameterError("train config: log_interval must be positive");
  if (ablation == Ablation::fixed_budget &&
      !(fixed_budget_s > 0.0 && fixed_budget_s <= 1.0)) {
    throw ParameterError("train config: fixed_budget_s must lie in (0,1]");
  }
  if (grams_per_flop < 0.0) throw ParameterError("train config: grams_per_flop must be non-negative");
  budget.validate();
}

// ---- metrics serialization ----

namespace {

nlohmann::json cost_to_json(const CostReport& c) {
  return nlohmann::json{{"flops_projection", c.flops_projection},
                        {"flops_attention", c.flops_attention},
                        {"flops_budget_nets", c.flops_budget_nets},
                        {"flops_other", c.flops_other},
                        {"flops_total", c.flops_total},
                        {"memory_attention", c.memory_attention},
                        {"ratio_attention", c.ratio_attention},
                        {"mean_budget", c.mean_budget},
                        {"carbon_proxy", c.carbon_proxy}};
}

std::string csv_opt(double v) {
  if (v < 0.0) return "";
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

std::string metrics_to_json(const MetricsRecord& rec) {
  nlohmann::json obj{{"kind", rec.kind},
                     {"step", rec.step},
                     {"epoch", rec.epoch},
                     {"loss_task", rec.loss.task},
                     {"loss_budget", rec.loss.budget},
                     {"loss_entropy", rec.loss.entropy},
                     {"loss_total", rec.loss.total}};
  if (rec.train_accuracy >= 0.0) obj["train_accuracy"] = rec.train_accuracy;
  if (rec.val_accuracy >= 0.0) obj["val_accuracy"] = rec.val_accuracy;
  if (!rec.s_mean_layer.empty()) {
    obj["s_mean"] = rec.s_mean;
    obj["s_std"] = rec.s_std;
    obj["mean_k"] = rec.mean_k;
    obj["s_mean_layer"] = rec.s_mean_layer;
    obj["s_std_layer"] = rec.s_std_layer;
    obj["entropy_layer"] = rec.entropy_layer;
    obj["mean_k_layer"] = rec.mean_k_layer;
  }
  if (rec.has_cost) obj["cost"] = cost_to_json(rec.cost);
  return obj.dump();
}

std::string metrics_csv_header() {
  return "step,epoch,loss_total,loss_task,loss_budget,loss_entropy,acc_train,acc_val,"
         "s_mean,s_std,mean_k,flops_inference,ratio_attention";
}

std::string metrics_to_csv(const MetricsRecord& rec) {
  std::ostringstream out;
  out << rec.step << ',' << rec.epoch << ',' << rec.loss.total << ',' << rec.loss.task << ','
      << rec.loss.budget << ',' << rec.loss.entropy << ',' << csv_opt(rec.train_accuracy)
      << ',' << csv_opt(rec.val_accuracy) << ',';
  if (!rec.s_mean_layer.empty()) {
    out << rec.s_mean << ',' << rec.s_std << ',' << rec.mean_k << ',';
  } else {
    out << ",,,";
  }
  if (rec.has_cost) {
    out << rec.cost.flops_total << ',' << rec.cost.ratio_attention;
  } else {
    out << ',';
  }
  return out.str();
}

// ---- optimizer ----

AdamState make_adam_state(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState state;
  for (const auto& [name, t] : params) {
    state.m.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
    state.v.emplace_back(static_cast<std::size_t>(t.size()), 0.0);
  }
  return state;
}

bool adamw_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                const TrainConfig& cfg) {
  if (state.m.size() != params.size()) {
    throw ContractError("adamw_step: state was built for a different parameter list");
  }
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    const double* g = t.grad_data();
    for (std::int64_t i = 0; i < t.size(); ++i) {
      if (std::isnan(g[i])) {
        std::cerr << "[trainer] NaN gradient in '" << name << "'; step skipped\n";
        return false;
      }
    }
  }

  ++state.step;
  double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].second;
    std::vector<double>& m = state.m[pi];
    std::vector<double>& v = state.v[pi];
    const double* g = t.has_grad() ? t.grad_data() : nullptr;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      double gi = g ? g[i] : 0.0;
      auto idx = static_cast<std::size_t>(i);
      m[idx] = cfg.adam_beta1 * m[idx] + (1.0 - cfg.adam_beta1) * gi;
      v[idx] = cfg.adam_beta2 * v[idx] + (1.0 - cfg.adam_beta2) * gi * gi;
      double m_hat = m[idx] / bc1;
      double v_hat = v[idx] / bc2;
      t.data()[i] -= cfg.learning_rate * (m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon) +
                                          cfg.weight_decay * t.data()[i]);
    }
  }
  return true;
}

// ---- statistics helpers ----

namespace {

struct RunningStats {
  std::int64_t n = 0;
  double sum = 0.0, sum_sq = 0.0;
  double entropy_sum = 0.0;  // sum over examples of sum_i p ln p
  std::int64_t k_sum = 0;

  void add(const HeadSelection& sel) {
    ++n;
    sum += sel.budget;
    sum_sq += sel.budget * sel.budget;
    double ent = 0.0;
    for (double p : sel.probs) {
      if (p > 0.0) ent += p * std::log(p);
    }
    entropy_sum += ent;
    k_sum += sel.active_count;
  }

  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (!n) return 0.0;
    double m = mean();
    return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - m * m));
  }
  double entropy_mean() const { return n ? entropy_sum / static_cast<double>(n) : 0.0; }
  double mean_k() const { return n ? static_cast<double>(k_sum) / static_cast<double>(n) : 0.0; }
};

void fill_layer_stats(const std::vector<std::vector<HeadSelection>>& selections,
                      MetricsRecord& rec) {
  if (selections.empty()) return;
  RunningStats overall;
  for (const auto& layer : selections) {
    RunningStats stats;
    for (const auto& sel : layer) {
      stats.add(sel);
      overall.add(sel);
    }
    rec.s_mean_layer.push_back(stats.mean());
    rec.s_std_layer.push_back(stats.stddev());
    rec.entropy_layer.push_back(stats.entropy_mean());
    rec.mean_k_layer.push_back(stats.mean_k());
  }
  rec.s_mean = overall.mean();
  rec.s_std = overall.stddev();
  rec.mean_k = overall.mean_k();
}

std::int64_t argmax_row(const Tensor& logits, std::int64_t row) {
  std::int64_t c = logits.dim(1);
  std::int64_t best = 0;
  for (std::int64_t j = 1; j < c; ++j) {
    if (logits.at(row * c + j) > logits.at(row * c + best)) best = j;
  }
  return best;
}

void apply_ablation(ForwardOptions& fopts, Ablation ablation, double fixed_s) {
  if (ablation == Ablation::fixed_budget) fopts.fixed_budget = fixed_s;
  if (ablation == Ablation::random_gating) {
    fopts.random_gating = true;
    // s is frozen too: a scalar fallback, displaced by reference rows when set
    fopts.fixed_budget = fixed_s;
  }
}

// per-layer budgets the reference model predicts for this batch
std::vector<std::vector<double>> reference_budget_rows(const Model& ref, const Batch& batch) {
  ForwardOptions fopts;  // plain inference; budgets ignore the schedule
  ForwardResult out = ref.forward(batch.token_ids, batch.pad_mask, fopts);
  if (out.selections.empty()) {
    throw ContractError("random_gating: reference checkpoint is not a budgeted model");
  }
  std::vector<std::vector<double>> rows(out.selections.size());
  for (std::size_t l = 0; l < out.selections.size(); ++l) {
    rows[l].reserve(out.selections[l].size());
    for (const HeadSelection& sel : out.selections[l]) rows[l].push_back(sel.budget);
  }
  return rows;
}

void accumulate_cost(CostReport& total, const CostReport& part) {
  total.flops_projection += part.flops_projection;
  total.flops_attention += part.flops_attention;
  total.flops_budget_nets += part.flops_budget_nets;
  total.flops_other += part.flops_other;
  total.flops_total += part.flops_total;
  total.memory_attention += part.memory_attention;
}

}  // namespace

// ---- evaluation ----

EvalResult evaluate(const Model& model, const std::vector<ClassifiedExample>& data,
                    const EvalOptions& opts) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  Batcher batcher(data, opts.batch_size, 0, false);

  EvalResult res;
  std::int64_t correct = 0;
  int layers = model.config().layers;
  bool budgeted = model.config().attention_kind == AttentionKind::budgeted;
  std::vector<RunningStats> per_layer(static_cast<std::size_t>(layers));
  RunningStats overall;
  std::int64_t k_sum = 0, k_norm = 0;
  double s_weighted = 0.0;

  for (const Batch& batch : batcher.epoch(0)) {
    ForwardOptions fopts;
    fopts.mode = Mode::inference;
    fopts.step = opts.step;
    fopts.schedule = opts.schedule;
    fopts.run_seed = opts.seed;
    fopts.force_k = opts.force_k;
    apply_ablation(fopts, opts.ablation, opts.fixed_budget_s);
    std::vector<std::vector<double>> frozen_rows;
    if (opts.ablation == Ablation::random_gating && opts.budget_reference) {
      frozen_rows = reference_budget_rows(*opts.budget_reference, batch);
      fopts.budget_rows = &frozen_rows;
    }
    ForwardResult out = model.forward(batch.token_ids, batch.pad_mask, fopts);
    for (std::int64_t bi = 0; bi < batch.batch; ++bi) {
      if (argmax_row(out.logits, bi) == batch.labels[static_cast<std::size_t>(bi)]) ++correct;
    }
    res.examples += batch.batch;

    CostReport part = model_cost(model.config(), batch.batch, batch.seq_len, out.selections,
                                 Mode::inference, 0.0);
    accumulate_cost(res.cost, part);
    if (budgeted) {
      for (int l = 0; l < layers; ++l) {
        for (const auto& sel : out.selections[static_cast<std::size_t>(l)]) {
          per_layer[static_cast<std::size_t>(l)].add(sel);
          overall.add(sel);
          k_sum += sel.active_count;
          s_weighted += sel.budget;
        }
      }
      k_norm += static_cast<std::int64_t>(layers) * batch.batch * model.config().heads;
    }
  }

  res.accuracy = static_cast<double>(correct) / static_cast<double>(res.examples);
  if (budgeted) {
    for (const auto& stats : per_layer) {
      res.s_mean_layer.push_back(stats.mean());
      res.s_std_layer.push_back(stats.stddev());
      res.entropy_layer.push_back(stats.entropy_mean());
      res.mean_k_layer.push_back(stats.mean_k());
    }
    res.s_mean = overall.mean();
    res.cost.ratio_attention = static_cast<double>(k_sum) / static_cast<double>(k_norm);
    res.cost.mean_budget = overall.mean();
  } else {
    res.cost.ratio_attention = 1.0;
  }
  res.cost.carbon_proxy =
      carbon_proxy(static_cast<double>(res.cost.flops_total), opts.grams_per_flop);
  return res;
}

// ---- training ----

TrainResult train(Model& model, const std::vector<ClassifiedExample>& train_data,
                  const std::vector<ClassifiedExample>& val_data, const TrainConfig& cfg,
                  const std::string& out_dir) {
  cfg.validate();
  if (train_data.empty()) throw DataError("train: empty training set");

  Batcher batcher(train_data, cfg.batch_size, cfg.seed, true);
  std::int64_t steps_per_epoch = batcher.batches_per_epoch();
  std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * steps_per_epoch;
  ScheduleConfig sched = cfg.schedule;
  sched.total_steps = total_steps;
  sched.validate();

  std::ofstream jsonl, csv;
  std::string ckpt_dir;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    ckpt_dir = out_dir + "/checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    jsonl.open(out_dir + "/metrics.jsonl");
    csv.open(out_dir + "/metrics.csv");
    if (!jsonl || !csv) throw IoError("train: cannot write metrics under " + out_dir);
    csv << metrics_csv_header() << "\n";
  }

  TrainResult result;
  result.total_steps = total_steps;
  auto emit = [&](const MetricsRecord& rec) {
    if (jsonl.is_open()) {
      jsonl << metrics_to_json(rec) << "\n";
      jsonl.flush();
      csv << metrics_to_csv(rec) << "\n";
      csv.flush();
    }
    result.metrics.push_back(rec);
  };

  AdamState adam = make_adam_state(model.parameters());
  std::optional<Model> reference;
  if (cfg.ablation == Ablation::random_gating && !cfg.reference_checkpoint.empty()) {
    reference.emplace(load_checkpoint(cfg.reference_checkpoint).model);
  }
  std::int64_t t = 0;

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    std::int64_t epoch_correct = 0, epoch_seen = 0;
    LossBreakdown last_loss;

    for (const Batch& batch : batcher.epoch(epoch)) {
      for (const auto& [name, param] : model.parameters()) {
        Tensor p = param;
        p.zero_grad();
      }

      ForwardOptions fopts;
      fopts.mode = Mode::train;
      fopts.step = t;
      fopts.schedule = sched;
      fopts.run_seed = cfg.seed;
      apply_ablation(fopts, cfg.ablation, cfg.fixed_budget_s);
      std::vector<std::vector<double>> frozen_rows;
      if (reference) {
        frozen_rows = reference_budget_rows(*reference, batch);
        fopts.budget_rows = &frozen_rows;
      }

      MetricsRecord step_rec;
      bool finite = true;
      {
        Tape tape;
        ForwardResult out = model.forward(batch.token_ids, batch.pad_mask, fopts);
        Tensor task = cross_entropy(out.logits, batch.labels);
        std::vector<Tensor> budget_rows, entropy_rows;
        for (std::size_t l = 0; l < out.budgets.size(); ++l) {
          budget_rows.push_back(budget_loss_rows(out.budgets[l], cfg.budget));
          entropy_rows.push_back(entropy_loss_rows(out.head_probs[l], t, sched, cfg.sign_mode));
        }
        TotalLoss loss = total_loss(task, budget_rows, entropy_rows);
        last_loss = loss.parts;

        finite = std::isfinite(loss.parts.total) && loss.parts.total <= cfg.divergence_limit;
        if (finite) backward(loss.value);

        for (std::int64_t bi = 0; bi < batch.batch; ++bi) {
          if (argmax_row(out.logits, bi) == batch.labels[static_cast<std::size_t>(bi)]) {
            ++epoch_correct;
          }
        }
        epoch_seen += batch.batch;
        fill_layer_stats(out.selections, step_rec);
      }

      if (!finite) {
        std::cerr << "[trainer] loss " << last_loss.total << " at step " << t
                  << " diverged; aborting\n";
        result.diverged = true;
        break;
      }
      if (!adamw_step(model.parameters(), adam, cfg)) {
        std::cerr << "[trainer] step " << t << " skipped\n";
      }

      if (t % cfg.log_interval == 0) {
        step_rec.kind = "step";
        step_rec.step = t;
        step_rec.epoch = epoch;
        step_rec.loss = last_loss;
        emit(step_rec);
      }
      ++t;
    }
    if (result.diverged) break;

    MetricsRecord epoch_rec;
    epoch_rec.kind = "epoch";
    epoch_rec.step = t;
    epoch_rec.epoch = epoch;
    epoch_rec.loss = last_loss;
    epoch_rec.train_accuracy =
        epoch_seen ? static_cast<double>(epoch_correct) / static_cast<double>(epoch_seen) : -1.0;

    if (!val_data.empty()) {
      EvalOptions eopts;
      eopts.batch_size = cfg.batch_size;
      eopts.step = t;
      eopts.schedule = sched;
      eopts.ablation = cfg.ablation;
      eopts.fixed_budget_s = cfg.fixed_budget_s;
      eopts.budget_reference = reference ? &*reference : nullptr;
      eopts.seed = cfg.seed;
      eopts.grams_per_flop = cfg.grams_per_flop;
      EvalResult ev = evaluate(model, val_data, eopts);
      epoch_rec.val_accuracy = ev.accuracy;
      epoch_rec.s_mean = ev.s_mean;
      epoch_rec.s_mean_layer = ev.s_mean_layer;
      epoch_rec.s_std_layer = ev.s_std_layer;
      epoch_rec.entropy_layer = ev.entropy_layer;
      epoch_rec.mean_k_layer = ev.mean_k_layer;
      if (!ev.s_std_layer.empty()) {
        // pooled std over layers is reported per layer; the scalar column uses
        // the budget distribution over every (layer, example) pair
        RunningStats pooled;
        for (std::size_t l = 0; l < ev.s_mean_layer.size(); ++l) {
          // reconstruct from per-layer mean/std with equal counts
          double m = ev.s_mean_layer[l], sd = ev.s_std_layer[l];
          pooled.n += 1;
          pooled.sum += m;
          pooled.sum_sq += sd * sd + m * m;
        }
        epoch_rec.s_std = pooled.stddev();
        double ksum = 0.0;
        for (double k : ev.mean_k_layer) ksum += k;
        epoch_rec.mean_k = ksum / static_cast<double>(ev.mean_k_layer.size());
      }
      epoch_rec.has_cost = true;
      epoch_rec.cost = ev.cost;

      if (ev.accuracy > result.best_val_accuracy) {
        result.best_val_accuracy = ev.accuracy;
        result.best_epoch = epoch;
        if (!ckpt_dir.empty()) {
          result.best_checkpoint = ckpt_dir + "/best.bin";
          save_checkpoint(model, TrainProgress{t, total_steps}, result.best_checkpoint);
        }
      }
    }
    emit(epoch_rec);

    if (!ckpt_dir.empty()) {
      result.last_checkpoint = ckpt_dir + "/last.bin";
      save_checkpoint(model, TrainProgress{t, total_steps}, result.last_checkpoint);
    }
  }

  result.final_step = t;
  return result;
}

// ---- analysis ----

namespace {

struct GroupKey {
  int layer;
  std::string group;
  bool operator<(const GroupKey& other) const {
    return std::tie(layer, group) < std::tie(other.layer, other.group);
  }
};

void write_analysis_csv(const std::string& path, const std::string& group_col,
                        const std::vector<AnalysisRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("analyze: cannot write " + path);
  out << "layer," << group_col << ",count,s_mean,s_std,entropy_mean,mean_k\n";
  for (const AnalysisRow& row : rows) {
    out << row.layer << ',' << row.group << ',' << row.count << ',' << row.s_mean << ','
        << row.s_std << ',' << row.entropy_mean << ',' << row.mean_k << "\n";
  }
}

}  // namespace

AnalysisReport analyze(const Model& model, const std::vector<ClassifiedExample>& data,
                       const AnalyzeOptions& opts, const std::string& out_dir) {
  if (data.empty()) throw ContractError("analyze: empty dataset");
  if (model.config().attention_kind != AttentionKind::budgeted) {
    throw ContractError("analyze: requires a budgeted model");
  }
  Batcher batcher(data, opts.eval.batch_size, 0, false);

  std::map<GroupKey, RunningStats> by_class, by_tier;
  RunningStats overall;
  AnalysisReport report;
  nlohmann::json dump_json;
  bool want_dump = opts.attention_example >= 0;
  if (want_dump && opts.attention_example >= static_cast<std::int64_t>(data.size())) {
    throw ParameterError("analyze: example index " + std::to_string(opts.attention_example) +
                         " outside dataset of " + std::to_string(data.size()));
  }

  for (const Batch& batch : batcher.epoch(0)) {
    ForwardOptions fopts;
    fopts.mode = Mode::inference;
    fopts.step = opts.eval.step;
    fopts.schedule = opts.eval.schedule;
    fopts.run_seed = opts.eval.seed;
    fopts.force_k = opts.eval.force_k;
    apply_ablation(fopts, opts.eval.ablation, opts.eval.fixed_budget_s);
    std::vector<std::vector<double>> frozen_rows;
    if (opts.eval.ablation == Ablation::random_gating && opts.eval.budget_reference) {
      frozen_rows = reference_budget_rows(*opts.eval.budget_reference, batch);
      fopts.budget_rows = &frozen_rows;
    }

    std::vector<AttentionDump> dumps;
    std::int64_t dump_row = -1;
    if (want_dump) {
      for (std::int64_t bi = 0; bi < batch.batch; ++bi) {
        if (batch.example_ids[static_cast<std::size_t>(bi)] == opts.attention_example) {
          dump_row = bi;
        }
      }
      if (dump_row >= 0) fopts.dumps = &dumps;
    }

    ForwardResult out = model.forward(batch.token_ids, batch.pad_mask, fopts);
    report.examples += batch.batch;

    for (std::size_t l = 0; l < out.selections.size(); ++l) {
      for (std::int64_t bi = 0; bi < batch.batch; ++bi) {
        const HeadSelection& sel = out.selections[l][static_cast<std::size_t>(bi)];
        const ClassifiedExample& ex =
            data[static_cast<std::size_t>(batch.example_ids[static_cast<std::size_t>(bi)])];
        by_class[{static_cast<int>(l), std::to_string(ex.label)}].add(sel);
        if (ex.tier != Tier::none) by_tier[{static_cast<int>(l), tier_name(ex.tier)}].add(sel);
        overall.add(sel);
      }
    }

    if (dump_row >= 0) {
      std::int64_t n = batch.seq_len;
      dump_json["example"] = opts.attention_example;
      dump_json["seq_len"] = n;
      dump_json["layers"] = nlohmann::json::array();
      for (std::size_t l = 0; l < out.selections.size(); ++l) {
        const HeadSelection& sel = out.selections[l][static_cast<std::size_t>(dump_row)];
        // heads by descending p, ties to the lower index
        std::vector<int> order(sel.probs.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return sel.probs[static_cast<std::size_t>(a)] > sel.probs[static_cast<std::size_t>(b)];
        });
        nlohmann::json layer_json{{"layer", l},
                                  {"budget", sel.budget},
                                  {"active_count", sel.active_count}};
        layer_json["heads"] = nlohmann::json::array();
        for (int head : order) {
          auto h = static_cast<std::size_t>(head);
          if (!sel.active[h]) continue;
          nlohmann::json head_json{{"head", head},
                                   {"p", sel.probs[h]},
                                   {"weight", sel.weights[h]}};
          const auto& flat = dumps[l].probs[static_cast<std::size_t>(dump_row)][h];
          nlohmann::json rows = nlohmann::json::array();
          for (std::int64_t i = 0; i < n; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (std::int64_t j = 0; j < n; ++j) {
              row.push_back(flat[static_cast<std::size_t>(i * n + j)]);
            }
            rows.push_back(row);
          }
          head_json["probs"] = rows;
          layer_json["heads"].push_back(head_json);
        }
        dump_json["layers"].push_back(layer_json);
      }
    }
  }

  auto rows_from = [](const std::map<GroupKey, RunningStats>& groups) {
    std::vector<AnalysisRow> rows;
    for (const auto& [key, stats] : groups) {
      AnalysisRow row;
      row.layer = key.layer;
      row.group = key.group;
      row.count = stats.n;
      row.s_mean = stats.mean();
      row.s_std = stats.stddev();
      row.entropy_mean = stats.entropy_mean();
      row.mean_k = stats.mean_k();
      rows.push_back(row);
    }
    return rows;
  };
  report.by_class = rows_from(by_class);
  report.by_tier = rows_from(by_tier);
  report.s_mean_overall = overall.mean();

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir + "/analysis");
    write_analysis_csv(out_dir + "/analysis/s_by_class.csv", "class", report.by_class);
    write_analysis_csv(out_dir + "/analysis/s_by_tier.csv", "tier", report.by_tier);
    if (want_dump) {
      std::filesystem::create_directories(out_dir + "/attention");
      std::string path =
          out_dir + "/attention/example_" + std::to_string(opts.attention_example) + ".json";
      std::ofstream out(path);
      if (!out) throw IoError("analyze: cannot write " + path);
      out << dump_json.dump(2) << "\n";
    }
  }
  return report;
}

}  // namespace budgetformer

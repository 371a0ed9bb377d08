#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "budgetformer/attention.hpp"
#include "budgetformer/cost_model.hpp"
#include "budgetformer/errors.hpp"
#include "budgetformer/objective.hpp"
#include "budgetformer/runner.hpp"
#include "budgetformer/schedules.hpp"

namespace py = pybind11;
using namespace budgetformer;

namespace {

py::dict eval_to_dict(const EvalRun& run) {
  py::dict out;
  out["accuracy"] = run.result.accuracy;
  out["examples"] = run.result.examples;
  out["s_mean"] = run.result.s_mean;
  out["mean_k"] = run.mean_k;
  out["flops_total"] = run.result.cost.flops_total;
  out["ratio_attention"] = run.result.cost.ratio_attention;
  out["carbon_proxy"] = run.result.cost.carbon_proxy;
  out["report_path"] = run.report_path;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "budget-gated attention core bindings";

  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  // ---- schedules ----
  py::class_<ScheduleConfig>(m, "ScheduleConfig")
      .def(py::init<>())
      .def_readwrite("sigma_max", &ScheduleConfig::sigma_max)
      .def_readwrite("tau_min", &ScheduleConfig::tau_min)
      .def_readwrite("tau_max", &ScheduleConfig::tau_max)
      .def_readwrite("gamma", &ScheduleConfig::gamma)
      .def_readwrite("beta_max", &ScheduleConfig::beta_max)
      .def_readwrite("total_steps", &ScheduleConfig::total_steps);

  m.def("noise_scale", &noise_scale, py::arg("t"), py::arg("cfg"));
  m.def("temperature", &temperature, py::arg("t"), py::arg("cfg"));
  m.def("entropy_coefficient", &entropy_coefficient, py::arg("t"), py::arg("cfg"));

  // ---- objective scalars ----
  py::class_<BudgetLossConfig>(m, "BudgetLossConfig")
      .def(py::init<>())
      .def_readwrite("s_min", &BudgetLossConfig::s_min)
      .def_readwrite("s_max", &BudgetLossConfig::s_max)
      .def_readwrite("alpha_base", &BudgetLossConfig::alpha_base)
      .def_readwrite("alpha_max", &BudgetLossConfig::alpha_max);

  py::enum_<SignMode>(m, "SignMode")
      .value("as_written", SignMode::as_written)
      .value("prose_intent", SignMode::prose_intent);

  m.def("budget_violation", &budget_violation, py::arg("s"), py::arg("cfg"));
  m.def("budget_loss", &budget_loss, py::arg("s"), py::arg("cfg"));
  m.def("budget_loss_derivative", &budget_loss_derivative, py::arg("s"), py::arg("cfg"));
  m.def(
      "entropy_loss",
      [](const std::vector<double>& p, std::int64_t t, const ScheduleConfig& cfg,
         SignMode mode) { return entropy_loss(p, t, cfg, mode); },
      py::arg("p"), py::arg("t"), py::arg("cfg"), py::arg("mode") = SignMode::prose_intent);

  // ---- head selection helpers ----
  m.def(
      "select_top_k",
      [](const std::vector<double>& probs, double s) {
        auto [k, active] = select_top_k(probs, s);
        return py::make_tuple(k, std::vector<int>(active.begin(), active.end()));
      },
      py::arg("probs"), py::arg("s"),
      "returns (k, 0/1 mask) keeping the k = max(1, floor(s*H)) largest probs");
  m.def(
      "head_weights",
      [](double s, const std::vector<double>& p) { return head_weights(s, p); },
      py::arg("s"), py::arg("p"));

  // ---- cost model ----
  m.def(
      "attention_flops",
      [](std::int64_t batch, std::int64_t seq_len, int model_dim, int heads, int k_active) {
        AttentionFlops f = attention_flops(batch, seq_len, model_dim, heads, k_active);
        return py::make_tuple(f.projection, f.attention);
      },
      py::arg("batch"), py::arg("seq_len"), py::arg("model_dim"), py::arg("heads"),
      py::arg("k_active"), "returns (projection_flops, attention_flops)");
  m.def("budget_net_flops", &budget_net_flops, py::arg("batch"), py::arg("model_dim"),
        py::arg("heads"));
  m.def("attention_memory", &attention_memory, py::arg("batch"), py::arg("seq_len"),
        py::arg("k_active"));
  m.def("inference_ratio", &inference_ratio, py::arg("k_per_layer"), py::arg("heads"));
  m.def("carbon_proxy", &carbon_proxy, py::arg("flops_total"), py::arg("grams_per_flop"));

  // ---- whole runs driven by the same flat JSON config as the CLI ----
  m.def(
      "train_run",
      [](const std::string& config_text) {
        RunConfig cfg = parse_run_config(config_text);
        TrainingRun run = run_training(cfg);
        py::dict out;
        out["best_val_accuracy"] = run.result.best_val_accuracy;
        out["best_epoch"] = run.result.best_epoch;
        out["total_steps"] = run.result.total_steps;
        out["diverged"] = run.result.diverged;
        out["out_dir"] = run.out_dir;
        out["best_checkpoint"] = run.result.best_checkpoint;
        out["last_checkpoint"] = run.result.last_checkpoint;
        return out;
      },
      py::arg("config_json"),
      "train from a flat JSON config string; artifacts land under its output_dir");
  m.def(
      "eval_run",
      [](const std::string& checkpoint, const std::string& config_text, int force_k,
         const std::string& out_dir) {
        RunConfig cfg = parse_run_config(config_text);
        return eval_to_dict(run_eval(checkpoint, cfg, force_k, out_dir));
      },
      py::arg("checkpoint"), py::arg("config_json"), py::arg("force_k") = 0,
      py::arg("out_dir") = std::string(),
      "evaluate a checkpoint on the config's validation data");
}

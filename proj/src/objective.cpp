#include "budgetformer/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "budgetformer/errors.hpp"

namespace budgetformer {

void BudgetLossConfig::validate() const {
  if (!(0.0 < s_min && s_min < s_max && s_max < 1.0)) {
    throw ParameterError("BudgetLossConfig: need 0 < s_min < s_max < 1, got [" +
                         std::to_string(s_min) + "," + std::to_string(s_max) + "]");
  }
  if (alpha_base < 0.0 || alpha_max < alpha_base) {
    throw ParameterError("BudgetLossConfig: need 0 <= alpha_base <= alpha_max");
  }
}

double budget_violation(double s, const BudgetLossConfig& cfg) {
  return std::max(0.0, cfg.s_min - s) + std::max(0.0, s - cfg.s_max);
}

double budget_loss(double s, const BudgetLossConfig& cfg) {
  double v = budget_violation(s, cfg);
  double alpha = std::min(cfg.alpha_max, cfg.alpha_base + v);
  return alpha * v * v;
}

double budget_loss_derivative(double s, const BudgetLossConfig& cfg) {
  double v = budget_violation(s, cfg);
  if (v == 0.0) return 0.0;
  double dv = (s < cfg.s_min) ? -1.0 : 1.0;
  double alpha = std::min(cfg.alpha_max, cfg.alpha_base + v);
  double dalpha = (cfg.alpha_base + v < cfg.alpha_max) ? dv : 0.0;
  return dalpha * v * v + 2.0 * alpha * v * dv;
}

double entropy_loss(const std::vector<double>& p, std::int64_t t,
                    const ScheduleConfig& cfg, SignMode mode) {
  double plogp = 0.0;
  for (double pi : p) {
    if (pi > 0.0) plogp += pi * std::log(pi);
  }
  double beta = entropy_coefficient(t, cfg);
  if (mode == SignMode::prose_intent) beta = -beta;
  return beta * plogp;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [B,C], got " +
                         shape_to_string(logits.shape()));
  }
  std::int64_t b = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != b) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  }
  for (std::int64_t i = 0; i < b; ++i) {
    std::int64_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(c) + ") at example " + std::to_string(i));
    }
  }
  Tensor picked = take_per_row(log_softmax(logits, -1), labels);
  return mul_scalar(mean(picked), -1.0);
}

Tensor budget_loss_rows(const Tensor& s, const BudgetLossConfig& cfg) {
  if (s.rank() != 1) {
    throw DimensionError("budget_loss_rows: s must be [B], got " +
                         shape_to_string(s.shape()));
  }
  Tensor below = relu(add_scalar(mul_scalar(s, -1.0), cfg.s_min));
  Tensor above = relu(add_scalar(s, -cfg.s_max));
  Tensor v = add(below, above);
  // alpha depends on v but carries no gradient: freeze it per example
  std::vector<double> alpha(static_cast<std::size_t>(v.size()));
  for (std::int64_t i = 0; i < v.size(); ++i) {
    alpha[static_cast<std::size_t>(i)] = std::min(cfg.alpha_max, cfg.alpha_base + v.at(i));
  }
  Tensor alpha_t = Tensor::from_values(v.shape(), std::move(alpha));
  return mul(mul(v, v), alpha_t);
}

Tensor entropy_loss_rows(const Tensor& p, std::int64_t t, const ScheduleConfig& cfg,
                         SignMode mode) {
  if (p.rank() != 2) {
    throw DimensionError("entropy_loss_rows: p must be [B,H], got " +
                         shape_to_string(p.shape()));
  }
  double beta = entropy_coefficient(t, cfg);
  if (mode == SignMode::prose_intent) beta = -beta;
  return mul_scalar(sum_last(xlogx(p)), beta);
}

TotalLoss total_loss(const Tensor& task, const std::vector<Tensor>& budget_rows,
                     const std::vector<Tensor>& entropy_rows) {
  if (task.size() != 1) {
    throw ContractError("total_loss: task term must be scalar, got " +
                        shape_to_string(task.shape()));
  }
  auto layer_mean = [](const std::vector<Tensor>& rows) {
    if (rows.empty()) return Tensor::scalar(0.0);
    Tensor acc = mean(rows[0]);
    for (std::size_t l = 1; l < rows.size(); ++l) acc = add(acc, mean(rows[l]));
    return mul_scalar(acc, 1.0 / static_cast<double>(rows.size()));
  };
  Tensor budget = layer_mean(budget_rows);
  Tensor entropy = layer_mean(entropy_rows);
  TotalLoss out;
  out.value = add(add(task, budget), entropy);
  out.parts.task = task.value();
  out.parts.budget = budget.value();
  out.parts.entropy = entropy.value();
  out.parts.total = out.parts.task + out.parts.budget + out.parts.entropy;
  return out;
}

}  // namespace budgetformer

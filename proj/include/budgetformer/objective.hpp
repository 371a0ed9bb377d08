#pragma once

#include <cstdint>
#include <vector>

#include "budgetformer/schedules.hpp"
#include "budgetformer/tensor.hpp"

namespace budgetformer {

struct BudgetLossConfig {
  double s_min = 0.1;
  double s_max = 0.9;
  double alpha_base = 0.001;
  double alpha_max = 0.05;

  void validate() const;  // throws ParameterError
};

struct LossBreakdown {
  double task = 0.0;
  double budget = 0.0;
  double entropy = 0.0;
  double total = 0.0;  // task + budget + entropy, summed in that order
};

// The entropy regularizer as literally written drives p the *opposite* way
// from the surrounding description of the training dynamics (a negative
// coefficient early on rewards peaked p, not exploratory p). Both readings
// are kept; prose_intent (the negated term, matching the described
// dynamics) is the default. Neither is "fixed" silently.
enum class SignMode { as_written, prose_intent };

// ---- scalar forms ----
// hinge distance of s from [s_min, s_max]
double budget_violation(double s, const BudgetLossConfig& cfg);
// alpha(s) * v(s)^2 with alpha(s) = min(alpha_max, alpha_base + v(s))
double budget_loss(double s, const BudgetLossConfig& cfg);
// true derivative of budget_loss as a function of s (alpha varies with s)
double budget_loss_derivative(double s, const BudgetLossConfig& cfg);
// beta(t) * sum_i p_i log p_i, natural log, 0 log 0 = 0; see SignMode
double entropy_loss(const std::vector<double>& p, std::int64_t t,
                    const ScheduleConfig& cfg, SignMode mode);

// ---- tensor forms used in training ----
// mean over the batch of -log softmax(logits)[label]
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);
// per-example budget penalty for s [B]; alpha is applied as a frozen
// per-example coefficient, so no gradient flows through alpha
Tensor budget_loss_rows(const Tensor& s, const BudgetLossConfig& cfg);
// per-example entropy term for p [B, H]
Tensor entropy_loss_rows(const Tensor& p, std::int64_t t, const ScheduleConfig& cfg,
                         SignMode mode);

struct TotalLoss {
  Tensor value;         // scalar, differentiable
  LossBreakdown parts;  // the same numbers as plain doubles
};

// budget_rows / entropy_rows carry one [B] tensor per layer; both
// regularizers are averaged over layers and batch, then added to the task
// term. Empty vectors (standard attention) contribute zero.
TotalLoss total_loss(const Tensor& task, const std::vector<Tensor>& budget_rows,
                     const std::vector<Tensor>& entropy_rows);

}  // namespace budgetformer

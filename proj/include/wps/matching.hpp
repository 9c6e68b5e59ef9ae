#pragma once

#include "wps/core.hpp"

namespace wps {

// costs(i, j): cost of assigning target i to prediction j.
struct CostMatrix {
  Matrix costs;
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;  // (1/S) * sum_i lambda_cls * L_cls^i
  double reg = 0.0;  // (1/S) * sum_{i real} lambda_reg * L_reg^i
  Vector per_query;  // indexed by target, sums to total * S
};

struct LossGradients {
  Matrix class_logits;   // dL/d logits, S x (C + 1)
  Matrix prompt_tokens;  // dL/d tokens, S x (K * d)
};

Matrix softmax_rows(const Matrix& logits);

// C_m = 1{c != no-part} * (-alpha * p_hat(c) + beta * ||p - p_hat||_2)
CostMatrix pairwise_cost(const TargetSet& targets, const StudentOutput& preds, const Config& cfg);

// Optimal assignment; among optimal permutations the lexicographically
// smallest target_to_pred is returned.
Assignment hungarian_assign(const CostMatrix& costs);

Assignment match_sets(const TargetSet& targets, const StudentOutput& preds, const Config& cfg);

// Mean over all S queries of the (eos-weighted) cross-entropy, no lambda.
double classification_loss(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                           const Config& cfg);

// Mean over real targets of coordinate-averaged smooth-L1; 0 without real targets.
double regression_loss(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                       const Config& cfg);

double smooth_l1(double residual);

// Loss for a fixed assignment.
LossBreakdown loss_for_assignment(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                                  const Config& cfg);

// Gradient of loss_for_assignment().total with the assignment held fixed.
LossGradients loss_gradients(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                             const Config& cfg);

// match_sets followed by loss_for_assignment.
LossBreakdown total_loss(const TargetSet& targets, const StudentOutput& preds, const Config& cfg,
                         Assignment* assignment_out = nullptr);

}  // namespace wps

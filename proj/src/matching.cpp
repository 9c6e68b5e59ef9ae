#include "wps/matching.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace wps {

namespace {

void check_shapes(const TargetSet& targets, const StudentOutput& preds, const Config& cfg) {
  const Eigen::Index s = cfg.num_queries;
  if (targets.size() != s || preds.class_logits.rows() != s || preds.prompt_tokens.rows() != s) {
    throw Error(ErrorCode::kShapeMismatch, "targets and predictions must both have S = " + std::to_string(s) + " rows");
  }
  if (preds.class_logits.cols() != cfg.num_categories + 1) {
    throw Error(ErrorCode::kShapeMismatch, "class logits must have C + 1 columns");
  }
  if (preds.prompt_tokens.cols() != cfg.token_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "prompt tokens must have K * d columns");
  }
  for (const auto& t : targets.targets) {
    if (t.category < 0 || t.category > cfg.num_categories) {
      throw Error(ErrorCode::kShapeMismatch, "target category out of range");
    }
    if (t.category != cfg.no_part() && t.embedding.size() != cfg.token_dim()) {
      throw Error(ErrorCode::kShapeMismatch, "target embedding must have K * d entries");
    }
  }
}

void check_assignment(const Assignment& assignment, int s) {
  if (static_cast<int>(assignment.target_to_pred.size()) != s) {
    throw Error(ErrorCode::kShapeMismatch, "assignment length differs from S");
  }
  std::vector<char> seen(s, 0);
  for (int j : assignment.target_to_pred) {
    if (j < 0 || j >= s || seen[j]) throw Error(ErrorCode::kShapeMismatch, "assignment is not a permutation");
    seen[j] = 1;
  }
}

double class_weight(int category, const Config& cfg) { return category == cfg.no_part() ? cfg.eos_weight : 1.0; }

// Shortest augmenting path solver (potentials formulation), 1-indexed
// internally. Returns row -> column and the final dual potentials.
void solve_assignment(const Matrix& c, std::vector<int>& row_to_col, std::vector<double>& u, std::vector<double>& v) {
  const int n = static_cast<int>(c.rows());
  const double inf = std::numeric_limits<double>::infinity();
  u.assign(n + 1, 0.0);
  v.assign(n + 1, 0.0);
  std::vector<int> col_owner(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    col_owner[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = col_owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_owner[j0] != 0);
    do {
      const int j1 = way[j0];
      col_owner[j0] = col_owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  row_to_col.assign(n, -1);
  for (int j = 1; j <= n; ++j) row_to_col[col_owner[j] - 1] = j - 1;
}

// Among perfect matchings on the tight-edge graph (all optimal under the
// dual certificate), picks the lexicographically smallest row -> column map.
std::vector<int> lexicographic_optimum(const Matrix& c, const std::vector<int>& start, const std::vector<double>& u,
                                       const std::vector<double>& v) {
  const int n = static_cast<int>(c.rows());
  const double tol = 1e-9 * std::max(1.0, c.cwiseAbs().maxCoeff());
  auto tight = [&](int i, int j) { return std::abs(c(i, j) - u[i + 1] - v[j + 1]) <= tol; };

  std::vector<int> row_to_col = start;
  std::vector<int> col_to_row(n);
  for (int i = 0; i < n; ++i) col_to_row[row_to_col[i]] = i;
  std::vector<char> col_locked(n, 0);

  std::vector<char> visited(n);
  int target_col = -1, banned_col = -1, first_free_row = 0;
  std::function<bool(int)> reroute = [&](int row) -> bool {
    for (int col = 0; col < n; ++col) {
      if (col_locked[col] || col == banned_col || visited[col] || !tight(row, col)) continue;
      visited[col] = 1;
      if (col == target_col || (col_to_row[col] >= first_free_row && reroute(col_to_row[col]))) {
        row_to_col[row] = col;
        col_to_row[col] = row;
        return true;
      }
    }
    return false;
  };

  for (int i = 0; i < n; ++i) {
    first_free_row = i + 1;
    for (int j = 0; j < n; ++j) {
      if (col_locked[j] || !tight(i, j)) continue;
      if (row_to_col[i] == j) break;
      const int displaced = col_to_row[j];
      std::fill(visited.begin(), visited.end(), 0);
      target_col = row_to_col[i];
      banned_col = j;
      // reroute only mutates the matching along a successful path.
      if (displaced > i && reroute(displaced)) {
        row_to_col[i] = j;
        col_to_row[j] = i;
        break;
      }
    }
    col_locked[row_to_col[i]] = 1;
  }
  return row_to_col;
}

double assignment_cost(const Matrix& c, const std::vector<int>& row_to_col) {
  double total = 0.0;
  for (int i = 0; i < static_cast<int>(row_to_col.size()); ++i) total += c(i, row_to_col[i]);
  return total;
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

CostMatrix pairwise_cost(const TargetSet& targets, const StudentOutput& preds, const Config& cfg) {
  check_shapes(targets, preds, cfg);
  const int s = cfg.num_queries;
  const Matrix probs = softmax_rows(preds.class_logits);
  CostMatrix out{Matrix::Zero(s, s)};
  for (int i = 0; i < s; ++i) {
    const TeacherTarget& t = targets.targets[i];
    if (t.category == cfg.no_part()) continue;
    for (int j = 0; j < s; ++j) {
      const double distance = (t.embedding.transpose() - preds.prompt_tokens.row(j)).norm();
      out.costs(i, j) = -cfg.alpha * probs(j, t.category) + cfg.beta * distance;
    }
  }
  return out;
}

Assignment hungarian_assign(const CostMatrix& costs) {
  const Matrix& c = costs.costs;
  if (c.rows() != c.cols()) throw Error(ErrorCode::kShapeMismatch, "cost matrix must be square");
  if (!c.allFinite()) throw Error(ErrorCode::kNonFinite, "cost matrix contains NaN or Inf");
  Assignment out;
  if (c.rows() == 0) return out;

  std::vector<int> row_to_col;
  std::vector<double> u, v;
  solve_assignment(c, row_to_col, u, v);
  const double solver_cost = assignment_cost(c, row_to_col);

  std::vector<int> canonical = lexicographic_optimum(c, row_to_col, u, v);
  const double canonical_cost = assignment_cost(c, canonical);
  if (canonical_cost <= solver_cost) {
    out.target_to_pred = std::move(canonical);
    out.total_cost = canonical_cost;
  } else {
    out.target_to_pred = std::move(row_to_col);
    out.total_cost = solver_cost;
  }
  return out;
}

Assignment match_sets(const TargetSet& targets, const StudentOutput& preds, const Config& cfg) {
  return hungarian_assign(pairwise_cost(targets, preds, cfg));
}

double smooth_l1(double residual) {
  const double a = std::abs(residual);
  return a < 1.0 ? 0.5 * a * a : a - 0.5;
}

double classification_loss(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                           const Config& cfg) {
  check_shapes(targets, preds, cfg);
  check_assignment(assignment, cfg.num_queries);
  double sum = 0.0;
  for (int i = 0; i < targets.size(); ++i) {
    const auto row = preds.class_logits.row(assignment.target_to_pred[i]);
    const double mx = row.maxCoeff();
    const double log_norm = mx + std::log((row.array() - mx).exp().sum());
    const int c = targets.targets[i].category;
    sum += class_weight(c, cfg) * (log_norm - row(c));
  }
  return sum / targets.size();
}

double regression_loss(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                       const Config& cfg) {
  check_shapes(targets, preds, cfg);
  check_assignment(assignment, cfg.num_queries);
  double sum = 0.0;
  int real = 0;
  for (int i = 0; i < targets.size(); ++i) {
    const TeacherTarget& t = targets.targets[i];
    if (t.category == cfg.no_part()) continue;
    const auto token = preds.prompt_tokens.row(assignment.target_to_pred[i]);
    double per = 0.0;
    for (Eigen::Index k = 0; k < token.size(); ++k) per += smooth_l1(token(k) - t.embedding(k));
    sum += per / static_cast<double>(token.size());
    ++real;
  }
  return real == 0 ? 0.0 : sum / real;
}

LossBreakdown loss_for_assignment(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                                  const Config& cfg) {
  check_shapes(targets, preds, cfg);
  check_assignment(assignment, cfg.num_queries);
  const int s = cfg.num_queries;
  LossBreakdown out;
  out.per_query = Vector::Zero(s);
  double cls_sum = 0.0, reg_sum = 0.0;
  for (int i = 0; i < s; ++i) {
    const TeacherTarget& t = targets.targets[i];
    const int j = assignment.target_to_pred[i];
    const auto row = preds.class_logits.row(j);
    const double mx = row.maxCoeff();
    const double log_norm = mx + std::log((row.array() - mx).exp().sum());
    const double cls = cfg.lambda_cls * class_weight(t.category, cfg) * (log_norm - row(t.category));
    double reg = 0.0;
    if (t.category != cfg.no_part()) {
      const auto token = preds.prompt_tokens.row(j);
      for (Eigen::Index k = 0; k < token.size(); ++k) reg += smooth_l1(token(k) - t.embedding(k));
      reg = cfg.lambda_reg * reg / static_cast<double>(token.size());
    }
    out.per_query(i) = cls + reg;
    cls_sum += cls;
    reg_sum += reg;
  }
  out.cls = cls_sum / s;
  out.reg = reg_sum / s;
  out.total = out.per_query.sum() / s;
  return out;
}

LossGradients loss_gradients(const TargetSet& targets, const StudentOutput& preds, const Assignment& assignment,
                             const Config& cfg) {
  check_shapes(targets, preds, cfg);
  check_assignment(assignment, cfg.num_queries);
  const int s = cfg.num_queries;
  LossGradients g{Matrix::Zero(preds.class_logits.rows(), preds.class_logits.cols()),
                  Matrix::Zero(preds.prompt_tokens.rows(), preds.prompt_tokens.cols())};
  const Matrix probs = softmax_rows(preds.class_logits);
  for (int i = 0; i < s; ++i) {
    const TeacherTarget& t = targets.targets[i];
    const int j = assignment.target_to_pred[i];
    const double w = cfg.lambda_cls * class_weight(t.category, cfg) / s;
    g.class_logits.row(j) += w * probs.row(j);
    g.class_logits(j, t.category) -= w;
    if (t.category == cfg.no_part()) continue;
    const double scale = cfg.lambda_reg / (s * static_cast<double>(preds.prompt_tokens.cols()));
    for (Eigen::Index k = 0; k < preds.prompt_tokens.cols(); ++k) {
      const double r = preds.prompt_tokens(j, k) - t.embedding(k);
      g.prompt_tokens(j, k) += scale * (std::abs(r) < 1.0 ? r : (r > 0 ? 1.0 : -1.0));
    }
  }
  return g;
}

LossBreakdown total_loss(const TargetSet& targets, const StudentOutput& preds, const Config& cfg,
                         Assignment* assignment_out) {
  Assignment assignment = match_sets(targets, preds, cfg);
  LossBreakdown out = loss_for_assignment(targets, preds, assignment, cfg);
  if (assignment_out != nullptr) *assignment_out = std::move(assignment);
  return out;
}

}  // namespace wps

#pragma once

// Reference implementations written against plain std::vector, sharing no
// code with the library. Slow on purpose.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

struct BruteAssignment {
  double cost = 0.0;
  std::vector<int> perm;
};

// Exhaustive minimum; permutations are visited in lexicographic order and
// only a strictly smaller sum replaces the incumbent.
inline BruteAssignment brute_force_assignment(const Grid& cost) {
  const int n = static_cast<int>(cost.size());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  BruteAssignment best{std::numeric_limits<double>::infinity(), perm};
  do {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += cost[i][perm[i]];
    if (sum < best.cost) best = {sum, perm};
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

struct LossInstance {
  int num_categories = 0;  // category == num_categories is the empty class
  std::vector<int> target_category;
  Grid target_embedding;  // empty rows for empty targets
  Grid logits;            // S x (C + 1)
  Grid tokens;            // S x D
  double alpha = 0, beta = 0, lambda_cls = 0, lambda_reg = 0, eos_weight = 1;
};

inline std::vector<double> softmax(const std::vector<double>& row) {
  double mx = row[0];
  for (double v : row) mx = std::max(mx, v);
  std::vector<double> out(row.size());
  double z = 0.0;
  for (size_t k = 0; k < row.size(); ++k) z += out[k] = std::exp(row[k] - mx);
  for (double& v : out) v /= z;
  return out;
}

inline double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

inline double huber1(double r) {
  r = std::fabs(r);
  return r < 1.0 ? 0.5 * r * r : r - 0.5;
}

inline Grid matching_cost(const LossInstance& in) {
  const size_t s = in.target_category.size();
  Grid c(s, std::vector<double>(s, 0.0));
  for (size_t i = 0; i < s; ++i) {
    if (in.target_category[i] == in.num_categories) continue;
    for (size_t j = 0; j < s; ++j) {
      const double p = softmax(in.logits[j])[in.target_category[i]];
      c[i][j] = -in.alpha * p + in.beta * l2(in.target_embedding[i], in.tokens[j]);
    }
  }
  return c;
}

// Loss with target i paired to prediction perm[i].
inline double loss_under(const LossInstance& in, const std::vector<int>& perm) {
  const size_t s = in.target_category.size();
  double total = 0.0;
  for (size_t i = 0; i < s; ++i) {
    const int c = in.target_category[i];
    const std::vector<double> p = softmax(in.logits[perm[i]]);
    const double w = c == in.num_categories ? in.eos_weight : 1.0;
    total += in.lambda_cls * w * -std::log(p[c]);
    if (c != in.num_categories) {
      double r = 0.0;
      for (size_t k = 0; k < in.tokens[perm[i]].size(); ++k) r += huber1(in.tokens[perm[i]][k] - in.target_embedding[i][k]);
      total += in.lambda_reg * r / static_cast<double>(in.tokens[perm[i]].size());
    }
  }
  return total / static_cast<double>(s);
}

// Matched loss. Cost ties (empty targets cost zero everywhere) resolve to the
// lexicographically first minimizing permutation.
inline double matched_loss(const LossInstance& in) {
  return loss_under(in, brute_force_assignment(matching_cost(in)).perm);
}

struct Tally {
  double miou = 0.0;
  double macc = 0.0;
  int iou_categories = 0;
  int acc_categories = 0;
};

// Background is label == num_categories and is not scored.
inline Tally tally_metrics(const std::vector<int>& gt, const std::vector<int>& pred, int num_categories) {
  Tally t;
  for (int c = 0; c < num_categories; ++c) {
    long inter = 0, uni = 0, g = 0;
    for (size_t k = 0; k < gt.size(); ++k) {
      const bool a = gt[k] == c, b = pred[k] == c;
      inter += a && b;
      uni += a || b;
      g += a;
    }
    if (uni > 0) {
      t.miou += static_cast<double>(inter) / static_cast<double>(uni);
      ++t.iou_categories;
    }
    if (g > 0) {
      t.macc += static_cast<double>(inter) / static_cast<double>(g);
      ++t.acc_categories;
    }
  }
  if (t.iou_categories > 0) t.miou /= t.iou_categories;
  if (t.acc_categories > 0) t.macc /= t.acc_categories;
  return t;
}

// Pixel (x, y) is inside when its centre lies strictly within the box.
inline std::vector<int> rasterize_box(double x0, double y0, double x1, double y1, int size) {
  std::vector<int> out(static_cast<size_t>(size) * size, 0);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      out[static_cast<size_t>(y) * size + x] = px > x0 && px < x1 && py > y0 && py < y1;
    }
  }
  return out;
}

inline double binary_iou(const std::vector<int>& a, const std::vector<int>& b) {
  long inter = 0, uni = 0;
  for (size_t k = 0; k < a.size(); ++k) {
    inter += a[k] && b[k];
    uni += a[k] || b[k];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace oracle

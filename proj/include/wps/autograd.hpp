#pragma once

// Minimal reverse-mode differentiation over dense matrices. Each forward pass
// builds a fresh graph; leaf parameters persist across passes and accumulate
// gradients until zero_grad() is called.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

namespace wps::ag {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void accumulate(const Matrix& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var add_row(const Var& x, const Var& row);  // broadcasts a 1 x n row
Var add_constant(const Var& x, const Matrix& c);
Var scale(const Var& x, double s);
Var relu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Multi-head scaled dot-product attention over already projected q (n x D),
// k and v (m x D). Heads split the columns evenly.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// x holds an h x w x c map as (h*w) x c. Output is (oh*ow) x (kernel*kernel*c)
// with zero padding; column order is (ky, kx, channel).
Var im2col(const Var& x, int height, int width, int kernel, int stride, int pad);

// Inverted dropout; identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);

// Seeds d(output)/d(root) and runs the reverse sweep.
void backward(const std::vector<std::pair<Var, Matrix>>& seeds);

}  // namespace wps::ag

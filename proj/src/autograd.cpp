#include "wps/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace wps::ag {

void Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var constant(Matrix value) { return Var(std::move(value), false); }

namespace {

Var make_result(Matrix value, std::initializer_list<Var> inputs, std::function<void(Node&)> fn) {
  Var out(std::move(value), false);
  auto& node = *out.node();
  for (const Var& in : inputs) {
    if (in.requires_grad()) node.requires_grad = true;
    node.parents.push_back(in.node());
  }
  if (node.requires_grad) {
    node.backward_fn = std::move(fn);
  } else {
    node.parents.clear();
  }
  return out;
}

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  auto na = a.node();
  auto nb = b.node();
  return make_result(a.value() * b.value(), {a, b}, [na, nb](Node& self) {
    if (na->requires_grad) na->accumulate(self.grad * nb->value.transpose());
    if (nb->requires_grad) nb->accumulate(na->value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  auto na = a.node();
  auto nb = b.node();
  return make_result(a.value() + b.value(), {a, b}, [na, nb](Node& self) {
    if (na->requires_grad) na->accumulate(self.grad);
    if (nb->requires_grad) nb->accumulate(self.grad);
  });
}

Var add_row(const Var& x, const Var& row) {
  check(row.rows() == 1 && row.cols() == x.cols(), "add_row: bias must be 1 x cols");
  auto nx = x.node();
  auto nr = row.node();
  Matrix value = x.value().rowwise() + row.value().row(0);
  return make_result(std::move(value), {x, row}, [nx, nr](Node& self) {
    if (nx->requires_grad) nx->accumulate(self.grad);
    if (nr->requires_grad) nr->accumulate(self.grad.colwise().sum());
  });
}

Var add_constant(const Var& x, const Matrix& c) {
  check(x.rows() == c.rows() && x.cols() == c.cols(), "add_constant: shape mismatch");
  auto nx = x.node();
  return make_result(x.value() + c, {x}, [nx](Node& self) { nx->accumulate(self.grad); });
}

Var scale(const Var& x, double s) {
  auto nx = x.node();
  return make_result(x.value() * s, {x}, [nx, s](Node& self) { nx->accumulate(self.grad * s); });
}

Var relu(const Var& x) {
  auto nx = x.node();
  Matrix value = x.value().cwiseMax(0.0);
  return make_result(std::move(value), {x}, [nx](Node& self) {
    nx->accumulate((nx->value.array() > 0.0).cast<double>().matrix().cwiseProduct(self.grad));
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.cols();
  check(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
        "layer_norm: affine parameters must be 1 x cols");
  const Matrix& in = x.value();
  Matrix normalized(in.rows(), n);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (in.row(r).array() - mean) * inv_std(r);
  }
  Matrix value = (normalized.array().rowwise() * gamma.value().row(0).array()).matrix();
  value.rowwise() += beta.value().row(0);
  auto nx = x.node();
  auto ng = gamma.node();
  auto nb = beta.node();
  return make_result(std::move(value), {x, gamma, beta},
                     [nx, ng, nb, normalized, inv_std](Node& self) {
                       const Matrix& g = self.grad;
                       if (ng->requires_grad) ng->accumulate(normalized.cwiseProduct(g).colwise().sum());
                       if (nb->requires_grad) nb->accumulate(g.colwise().sum());
                       if (!nx->requires_grad) return;
                       const double cols = static_cast<double>(g.cols());
                       Matrix gn = (g.array().rowwise() * ng->value.row(0).array()).matrix();
                       Matrix dx(g.rows(), g.cols());
                       for (Eigen::Index r = 0; r < g.rows(); ++r) {
                         const double mean_g = gn.row(r).mean();
                         const double mean_gx = gn.row(r).dot(normalized.row(r)) / cols;
                         dx.row(r) = inv_std(r) *
                                     (gn.row(r).array() - mean_g - normalized.row(r).array() * mean_gx);
                       }
                       nx->accumulate(dx);
                     });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  const Eigen::Index width = q.cols();
  check(k.cols() == width && v.cols() == width && k.rows() == v.rows(), "attention: shape mismatch");
  check(heads > 0 && width % heads == 0, "attention: heads must divide width");
  const Eigen::Index dh = width / heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();

  std::vector<Matrix> probs(heads);
  Matrix out(n, width);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * dh, dh);
    const auto kh = k.value().middleCols(h * dh, dh);
    const auto vh = v.value().middleCols(h * dh, dh);
    Matrix scores = (qh * kh.transpose()) * inv_scale;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mx = scores.row(r).maxCoeff();
      scores.row(r) = (scores.row(r).array() - mx).exp();
      scores.row(r) /= scores.row(r).sum();
    }
    out.middleCols(h * dh, dh) = scores * vh;
    probs[h] = std::move(scores);
  }
  auto nq = q.node();
  auto nk = k.node();
  auto nv = v.node();
  return make_result(std::move(out), {q, k, v},
                     [nq, nk, nv, probs = std::move(probs), heads, dh, inv_scale, n, m](Node& self) {
                       const Eigen::Index width = self.grad.cols();
                       Matrix dq = Matrix::Zero(n, width);
                       Matrix dk = Matrix::Zero(m, width);
                       Matrix dv = Matrix::Zero(m, width);
                       for (int h = 0; h < heads; ++h) {
                         const Matrix& p = probs[h];
                         const auto go = self.grad.middleCols(h * dh, dh);
                         const auto qh = nq->value.middleCols(h * dh, dh);
                         const auto kh = nk->value.middleCols(h * dh, dh);
                         const auto vh = nv->value.middleCols(h * dh, dh);
                         dv.middleCols(h * dh, dh) = p.transpose() * go;
                         Matrix dp = go * vh.transpose();
                         Eigen::VectorXd rowdot = dp.cwiseProduct(p).rowwise().sum();
                         Matrix ds = p.cwiseProduct(dp.colwise() - rowdot) * inv_scale;
                         dq.middleCols(h * dh, dh) = ds * kh;
                         dk.middleCols(h * dh, dh) = ds.transpose() * qh;
                       }
                       if (nq->requires_grad) nq->accumulate(dq);
                       if (nk->requires_grad) nk->accumulate(dk);
                       if (nv->requires_grad) nv->accumulate(dv);
                     });
}

Var im2col(const Var& x, int height, int width, int kernel, int stride, int pad) {
  check(x.rows() == static_cast<Eigen::Index>(height) * width, "im2col: row count != height*width");
  const int channels = static_cast<int>(x.cols());
  const int out_h = (height + 2 * pad - kernel) / stride + 1;
  const int out_w = (width + 2 * pad - kernel) / stride + 1;
  // (output row, column block, source row) triples; -1 source means padding.
  std::vector<int> source(static_cast<size_t>(out_h) * out_w * kernel * kernel, -1);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, kernel * kernel * channels);
  for (int oy = 0; oy < out_h; ++oy) {
    for (int ox = 0; ox < out_w; ++ox) {
      const int row = oy * out_w + ox;
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const int iy = oy * stride + ky - pad;
          const int ix = ox * stride + kx - pad;
          if (iy < 0 || iy >= height || ix < 0 || ix >= width) continue;
          const int block = ky * kernel + kx;
          const int src = iy * width + ix;
          source[static_cast<size_t>(row) * kernel * kernel + block] = src;
          out.block(row, block * channels, 1, channels) = x.value().row(src);
        }
      }
    }
  }
  auto nx = x.node();
  const int blocks = kernel * kernel;
  return make_result(std::move(out), {x}, [nx, source = std::move(source), blocks, channels](Node& self) {
    Matrix dx = Matrix::Zero(nx->value.rows(), nx->value.cols());
    const Eigen::Index rows = self.grad.rows();
    for (Eigen::Index row = 0; row < rows; ++row) {
      for (int block = 0; block < blocks; ++block) {
        const int src = source[static_cast<size_t>(row) * blocks + block];
        if (src < 0) continue;
        dx.row(src) += self.grad.block(row, block * channels, 1, channels);
      }
    }
    nx->accumulate(dx);
  });
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  auto nx = x.node();
  return make_result(x.value().cwiseProduct(mask), {x},
                     [nx, mask](Node& self) { nx->accumulate(self.grad.cwiseProduct(mask)); });
}

void backward(const std::vector<std::pair<Var, Matrix>>& seeds) {
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs are deep enough to make recursion risky.
  std::vector<std::pair<Node*, size_t>> stack;
  for (const auto& [root, grad] : seeds) {
    Node* start = root.node().get();
    if (!start->requires_grad || visited.count(start)) continue;
    visited.insert(start);
    stack.emplace_back(start, 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node* parent = node->parents[next++].get();
        if (parent->requires_grad && !visited.count(parent)) {
          visited.insert(parent);
          stack.emplace_back(parent, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (const auto& [root, grad] : seeds) {
    if (!root.requires_grad()) continue;
    check(grad.rows() == root.rows() && grad.cols() == root.cols(), "backward: seed shape mismatch");
    root.node()->accumulate(grad);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) {
      node->backward_fn(*node);
      // Intermediate gradients are not needed after propagation.
      node->grad.resize(0, 0);
    }
  }
}

}  // namespace wps::ag

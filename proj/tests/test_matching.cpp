#include <doctest.h>

#include <random>

#include "oracles/oracles.hpp"
#include "wps/matching.hpp"

using namespace wps;

namespace {

Config loss_config(int s, int c, int d) {
  Config cfg = Config::desk_scale();
  cfg.num_queries = s;
  cfg.num_categories = c;
  cfg.embed_dim = d;
  return cfg;
}

struct Instance {
  TargetSet targets;
  StudentOutput preds;
};

Instance make_instance(const Config& cfg, int real, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.5);
  Instance in;
  in.targets.num_real = real;
  for (int i = 0; i < cfg.num_queries; ++i) {
    TeacherTarget t{i < real ? static_cast<int>(rng() % cfg.num_categories) : cfg.no_part(),
                    Vector::Zero(cfg.token_dim())};
    if (i < real)
      for (int k = 0; k < cfg.token_dim(); ++k) t.embedding(k) = n(rng);
    in.targets.targets.push_back(t);
  }
  in.preds.class_logits.resize(cfg.num_queries, cfg.num_categories + 1);
  in.preds.prompt_tokens.resize(cfg.num_queries, cfg.token_dim());
  for (Eigen::Index i = 0; i < in.preds.class_logits.size(); ++i) in.preds.class_logits.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < in.preds.prompt_tokens.size(); ++i) in.preds.prompt_tokens.data()[i] = n(rng);
  return in;
}

oracle::LossInstance as_oracle(const Instance& in, const Config& cfg) {
  oracle::LossInstance o;
  o.num_categories = cfg.num_categories;
  for (const auto& t : in.targets.targets) {
    o.target_category.push_back(t.category);
    o.target_embedding.emplace_back(t.embedding.data(), t.embedding.data() + t.embedding.size());
  }
  for (Eigen::Index r = 0; r < in.preds.class_logits.rows(); ++r) {
    o.logits.emplace_back(cfg.num_categories + 1);
    o.tokens.emplace_back(cfg.token_dim());
    for (int k = 0; k <= cfg.num_categories; ++k) o.logits.back()[k] = in.preds.class_logits(r, k);
    for (int k = 0; k < cfg.token_dim(); ++k) o.tokens.back()[k] = in.preds.prompt_tokens(r, k);
  }
  o.alpha = cfg.alpha;
  o.beta = cfg.beta;
  o.lambda_cls = cfg.lambda_cls;
  o.lambda_reg = cfg.lambda_reg;
  o.eos_weight = cfg.eos_weight;
  return o;
}

}  // namespace

TEST_CASE("hungarian on a known instance") {
  CostMatrix c{Matrix(3, 3)};
  c.costs << 4, 1, 3,
             2, 0, 5,
             3, 2, 2;
  const Assignment a = hungarian_assign(c);
  CHECK(a.target_to_pred == std::vector<int>{1, 0, 2});
  CHECK(a.total_cost == 5.0);
}

TEST_CASE("hungarian agrees with brute force on random and tied instances") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    CostMatrix c{Matrix(n, n)};
    const bool integer = trial % 2 == 0;
    for (Eigen::Index i = 0; i < c.costs.size(); ++i) {
      c.costs.data()[i] = integer ? static_cast<double>(rng() % 4) : std::uniform_real_distribution<double>(-5, 5)(rng);
    }
    oracle::Grid g(n, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g[i][j] = c.costs(i, j);
    const auto brute = oracle::brute_force_assignment(g);
    const Assignment a = hungarian_assign(c);
    CHECK(a.total_cost == brute.cost);
    // Lexicographic tie-breaking matches the first minimum in permutation order.
    if (integer) CHECK(a.target_to_pred == brute.perm);
  }
}

TEST_CASE("all-zero costs give the identity") {
  const Assignment a = hungarian_assign({Matrix::Zero(5, 5)});
  CHECK(a.target_to_pred == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("hungarian input checks") {
  CHECK_THROWS_AS(hungarian_assign({Matrix::Zero(2, 3)}), Error);
  Matrix m = Matrix::Zero(2, 2);
  m(0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    hungarian_assign({m});
    FAIL("expected NonFinite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNonFinite);
  }
  CHECK(hungarian_assign({Matrix(0, 0)}).target_to_pred.empty());
}

TEST_CASE("pairwise cost zeroes empty targets") {
  const Config cfg = loss_config(3, 2, 8);
  std::mt19937_64 rng(3);
  const Instance in = make_instance(cfg, 1, rng);
  const CostMatrix c = pairwise_cost(in.targets, in.preds, cfg);
  CHECK(c.costs.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.costs.row(2).cwiseAbs().maxCoeff() == 0.0);
  const auto expected = oracle::matching_cost(as_oracle(in, cfg));
  for (int j = 0; j < 3; ++j) CHECK(c.costs(0, j) == doctest::Approx(expected[0][j]).epsilon(1e-14));
}

TEST_CASE("loss agrees with the oracle, including eos weighting") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    Config cfg = loss_config(1 + static_cast<int>(rng() % 5), 3, 8);
    cfg.eos_weight = trial % 3 == 0 ? 1.0 : 0.25;
    const Instance in = make_instance(cfg, static_cast<int>(rng() % (cfg.num_queries + 1)), rng);
    Assignment a;
    const LossBreakdown got = total_loss(in.targets, in.preds, cfg, &a);
    CHECK(std::abs(got.total - oracle::matched_loss(as_oracle(in, cfg))) <= 1e-9);
    CHECK(got.per_query.sum() == doctest::Approx(got.total * cfg.num_queries));
    CHECK(got.cls + got.reg == doctest::Approx(got.total));
    CHECK(std::abs(got.cls - cfg.lambda_cls * classification_loss(in.targets, in.preds, a, cfg)) <= 1e-9);
    const int real = in.targets.num_real;
    const double reg_expected = real == 0 ? 0.0 : cfg.lambda_reg * regression_loss(in.targets, in.preds, a, cfg) * real / cfg.num_queries;
    CHECK(std::abs(got.reg - reg_expected) <= 1e-9);
  }
}

TEST_CASE("empty targets contribute no regression") {
  const Config cfg = loss_config(4, 2, 8);
  std::mt19937_64 rng(5);
  Instance in = make_instance(cfg, 0, rng);
  const LossBreakdown l = total_loss(in.targets, in.preds, cfg);
  CHECK(l.reg == 0.0);
  CHECK(l.total == l.cls);
}

TEST_CASE("smooth l1 branches") {
  CHECK(smooth_l1(0.5) == 0.125);
  CHECK(smooth_l1(-0.5) == 0.125);
  CHECK(smooth_l1(3.0) == 2.5);
  CHECK(smooth_l1(-1.0) == 0.5);
}

TEST_CASE("analytic gradients match finite differences") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Config cfg = loss_config(5, 3, 8);
    cfg.eos_weight = 0.5;
    Instance in = make_instance(cfg, 3, rng);
    const Assignment a = match_sets(in.targets, in.preds, cfg);
    const LossGradients g = loss_gradients(in.targets, in.preds, a, cfg);
    const double h = 1e-6;
    for (Matrix* m : {&in.preds.class_logits, &in.preds.prompt_tokens}) {
      const Matrix& analytic = m == &in.preds.class_logits ? g.class_logits : g.prompt_tokens;
      Matrix numeric(m->rows(), m->cols());
      for (Eigen::Index i = 0; i < m->size(); ++i) {
        const double keep = m->data()[i];
        m->data()[i] = keep + h;
        const double up = loss_for_assignment(in.targets, in.preds, a, cfg).total;
        m->data()[i] = keep - h;
        const double down = loss_for_assignment(in.targets, in.preds, a, cfg).total;
        m->data()[i] = keep;
        numeric.data()[i] = (up - down) / (2 * h);
      }
      CHECK((numeric - analytic).norm() / std::max(numeric.norm(), 1e-12) < 1e-4);
    }
  }
}

TEST_CASE("target order does not change the loss") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Config cfg = loss_config(2 + static_cast<int>(rng() % 5), 3, 8);
    Instance in = make_instance(cfg, static_cast<int>(rng() % (cfg.num_queries + 1)), rng);
    const double base = total_loss(in.targets, in.preds, cfg).total;
    std::shuffle(in.targets.targets.begin(), in.targets.targets.end(), rng);
    CHECK(std::abs(total_loss(in.targets, in.preds, cfg).total - base) <= 1e-9);
  }
}

TEST_CASE("shape checks") {
  const Config cfg = loss_config(3, 2, 8);
  std::mt19937_64 rng(1);
  Instance in = make_instance(cfg, 2, rng);
  Instance wrong = in;
  wrong.preds.prompt_tokens.conservativeResize(Eigen::NoChange, 7);
  CHECK_THROWS_AS(total_loss(wrong.targets, wrong.preds, cfg), Error);
  wrong = in;
  wrong.targets.targets.pop_back();
  CHECK_THROWS_AS(total_loss(wrong.targets, wrong.preds, cfg), Error);
  Assignment bad{{0, 0, 1}, 0.0};
  CHECK_THROWS_AS(loss_for_assignment(in.targets, in.preds, bad, cfg), Error);
}

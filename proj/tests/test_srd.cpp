#include <doctest.h>

#include <cmath>
#include <numbers>

#include "fedcsr/random.hpp"
#include "fedcsr/srd.hpp"

using namespace fedcsr;

namespace {

double sp(double x) { return std::log1p(std::exp(x)); }

LatentDist dist(double mu, double sigma, int rows = 1, int cols = 1) {
  return {Matrix::Constant(rows, cols, mu), Matrix::Constant(rows, cols, sigma)};
}

// Small two-branch setup on a tape for loss-level tests.
struct Setup {
  EncoderShape shape;
  ItemGraph graph;
  EncoderParams shared;
  EncoderParams exclusive;
  PredictorParams theta = init_predictor(4, 21);
  Discriminator disc = init_discriminator(4, 22);
  SequenceBatch batch;
  Matrix eps_s;
  Matrix eps_e;
  Matrix z_global;

  Setup() {
    shape.vocab = 10;
    shape.seq_len = 5;
    shape.dim = 4;
    shape.heads = 2;
    shape.dropout = 0.0;
    DomainDataset d;
    d.vocab_size = shape.vocab;
    d.train["u"] = UserSequence{"u", {1, 2, 3, 4, 5, 6, 7, 8, 9}, {}};
    graph = build_item_graph(d);
    shared = init_encoder_params(shape, 1);
    exclusive = init_encoder_params(shape, 2);
    batch = make_batch({{1, 2, 3, 4}, {5, 6, 7}, {8, 9}}, shape.seq_len);
    std::mt19937_64 rng(3);
    eps_s = standard_normal_matrix(15, 4, rng);
    eps_e = standard_normal_matrix(15, 4, rng);
    z_global = standard_normal_matrix(3, 4, rng);
  }
};

struct Evaluated {
  DisentanglementLoss loss;
  NamedTensors exclusive_grads;
};

Evaluated evaluate(const Setup& s, const LossWeights& w, bool detach, bool with_global = true) {
  ad::Tape tape;
  const BoundEncoder shared(tape, s.shared);
  const BoundEncoder exclusive(tape, s.exclusive);
  const auto tv = ad::bind(tape, s.theta.tensors);
  const auto dv = ad::bind(tape, s.disc.tensors);
  DisentanglementInputs in;
  in.shared = encode(shared, s.batch, s.graph, false, nullptr);
  in.exclusive = encode(exclusive, s.batch, s.graph, false, nullptr);
  in.z_shared = sample(in.shared, s.eps_s);
  in.z_exclusive = sample(in.exclusive, s.eps_e);
  in.batch = &s.batch;
  if (with_global) in.z_global_user = tape.constant(s.z_global);
  in.theta = {tv[0], tv[1]};
  in.disc = {dv[0], dv[1]};
  in.item_table = exclusive.get("item_emb");
  in.detach_negatives = detach;
  Evaluated out{disentanglement_loss(in, w), {}};
  tape.backward(out.loss.total);
  out.exclusive_grads = exclusive.gradients();
  return out;
}

}  // namespace

TEST_CASE("KL to the standard normal: closed forms") {
  CHECK(kl_to_standard_normal(dist(0, 1), {1.0}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kl_to_standard_normal(dist(1, 1), {1.0}) == doctest::Approx(0.5).epsilon(1e-12));
  const double e = std::numbers::e;
  CHECK(kl_to_standard_normal(dist(0, e), {1.0}) ==
        doctest::Approx(0.5 * (e * e - 3.0)).epsilon(1e-12));
}

TEST_CASE("KL is non-negative and zero only at the prior") {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    LatentDist d{standard_normal_matrix(3, 2, rng), Matrix(3, 2)};
    for (Eigen::Index j = 0; j < d.sigma.size(); ++j) {
      d.sigma.data()[j] = std::exp(0.5 * standard_normal(rng));
    }
    CHECK(kl_to_standard_normal(d, {1, 1, 1}) >= 0.0);
  }
  CHECK(kl_to_standard_normal(dist(0, 1, 3, 2), {1, 1, 1}) <= 1e-9);
}

TEST_CASE("next-item NLL: uniform, confident and fixed logits") {
  const auto b = make_batch({{1, 1}}, 2);
  CHECK(next_item_nll(Matrix::Zero(2, 2), b) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Matrix confident = Matrix::Zero(2, 3);
  confident(0, 1) = 60.0;
  CHECK(next_item_nll(confident, b) < 1e-12);

  Matrix fixed = Matrix::Zero(2, 3);
  fixed(0, 1) = 1.0;
  const double e = std::numbers::e;
  CHECK(next_item_nll(fixed, b) == doctest::Approx(-std::log(e / (e + 2))).epsilon(1e-12));
}

TEST_CASE("reconstruction over an all-pad batch is an error") {
  const auto b = make_batch({{}, {3}}, 3);
  const PredictorParams theta = init_predictor(2, 1);
  CHECK_THROWS_WITH(reconstruction_nll(Matrix::Zero(6, 2), b, theta, Matrix::Zero(4, 2)),
                    doctest::Contains("empty batch"));
}

TEST_CASE("JSD bound: zero critic, saturation, shared negatives") {
  Discriminator zero;
  zero.tensors.add("w", Matrix::Zero(2, 2));
  zero.tensors.add("bias", Matrix::Zero(1, 1));
  std::mt19937_64 rng(6);
  const Matrix a = standard_normal_matrix(5, 2, rng);
  const Matrix g = standard_normal_matrix(5, 2, rng);
  const Matrix n = standard_normal_matrix(5, 2, rng);
  CHECK(jsd_similarity(a, g, n, zero) == doctest::Approx(-2 * std::log(2.0)).epsilon(1e-12));

  // Large positive critic on aligned pairs, large negative on anti-aligned.
  Discriminator big;
  big.tensors.add("w", Matrix::Identity(2, 2) * 50.0);
  big.tensors.add("bias", Matrix::Zero(1, 1));
  const Matrix ones = Matrix::Ones(3, 2);
  CHECK(jsd_similarity(ones, ones, -ones, big) > -1e-20);

  Discriminator rnd = init_discriminator(2, 8);
  double expected = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double t = a.row(i).dot(rnd.tensors.at("w") * g.row(i).transpose()) +
                     rnd.tensors.at("bias")(0, 0);
    expected += -std::abs(t) - 2 * sp(-std::abs(t));
  }
  const double got = jsd_similarity(a, g, a, rnd);
  CHECK(got == doctest::Approx(expected / 5).epsilon(1e-12));
  CHECK(got <= -2 * std::log(2.0) + 1e-12);

  CHECK_THROWS_AS(jsd_similarity(a, g.topRows(3), n, zero), ShapeError);
}

TEST_CASE("one gradient step on the critic increases the bound") {
  const Matrix pos = Matrix::Ones(4, 2);
  const Matrix neg = -Matrix::Ones(4, 2);
  Discriminator d = init_discriminator(2, 3);
  const double before = jsd_similarity(pos, pos, neg, d);
  ad::Tape tape;
  const auto vars = ad::bind(tape, d.tensors);
  const auto out = jsd_similarity(tape.constant(pos), tape.constant(pos), tape.constant(neg),
                                  BoundDiscriminator{vars[0], vars[1]});
  tape.backward(out);
  const auto grads = ad::gradients(tape, d.tensors, vars);
  for (auto& [name, m] : d.tensors) m += 0.1 * grads.at(name);
  CHECK(jsd_similarity(pos, pos, neg, d) > before);
}

TEST_CASE("the total is the weighted sum of the breakdown") {
  const Setup s;
  LossWeights w;
  w.alpha = 0.7;
  w.beta = 1.3;
  w.gamma = 0.4;
  const auto t = evaluate(s, w, true).loss.terms;
  CHECK(t.alpha_term == doctest::Approx(w.alpha * (t.kl_shared + t.kl_exclusive + t.joint_nll)));
  CHECK(t.beta_term == doctest::Approx(-w.beta * t.jsd));
  CHECK(t.gamma_term == doctest::Approx(w.gamma * t.exclusive_nll));
  CHECK(t.total == t.alpha_term + t.beta_term + t.gamma_term);
  CHECK(evaluate(s, w, true).loss.total.scalar() == doctest::Approx(t.total).epsilon(1e-14));
}

TEST_CASE("zero weights give zero loss; beta=gamma=0 is the two-branch ELBO") {
  const Setup s;
  LossWeights zero{0, 0, 0, 0, 0.5};
  CHECK(evaluate(s, zero, true).loss.total.scalar() == 0.0);

  LossWeights elbo{1, 0, 0, 0, 0.5};
  const auto t = evaluate(s, elbo, true).loss.terms;
  const auto ds = encode(s.batch, s.graph, s.shared);
  const auto de = encode(s.batch, s.graph, s.exclusive);
  const auto mask = real_position_weights(s.batch);
  const Matrix z = sample(ds, s.eps_s) + sample(de, s.eps_e);
  const double expected = kl_to_standard_normal(ds, mask) + kl_to_standard_normal(de, mask) +
                          reconstruction_nll(z, s.batch, s.theta, s.exclusive.tensors.at("item_emb"));
  CHECK(t.total == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("detached negatives carry no JSD gradient into the exclusive branch") {
  const Setup s;
  LossWeights only_jsd{0, 1, 0, 0, 0.5};
  const auto detached = evaluate(s, only_jsd, true);
  for (const auto& [name, g] : detached.exclusive_grads) CHECK(g.isZero(0.0));
  const auto live = evaluate(s, only_jsd, false);
  double norm = 0.0;
  for (const auto& [name, g] : live.exclusive_grads) norm += g.squaredNorm();
  CHECK(norm > 0.0);
}

TEST_CASE("no global signal skips the similarity term") {
  const Setup s;
  const auto t = evaluate(s, LossWeights{}, true, false).loss.terms;
  CHECK(t.jsd == 0.0);
  CHECK(t.beta_term == 0.0);
}

TEST_CASE("loss weights validate") {
  LossWeights w;
  w.alpha = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.tau = 0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

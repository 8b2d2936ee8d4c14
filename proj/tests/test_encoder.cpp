#include <doctest.h>

#include <cmath>

#include "fedcsr/encoder.hpp"
#include "fedcsr/random.hpp"

using namespace fedcsr;

namespace {

EncoderShape toy_shape() {
  EncoderShape s;
  s.vocab = 12;
  s.seq_len = 5;
  s.dim = 4;
  s.gnn_layers = 2;
  s.attn_layers = 2;
  s.heads = 2;
  s.dropout = 0.0;
  return s;
}

ItemGraph chain_graph(int vocab) {
  DomainDataset d;
  d.vocab_size = vocab;
  std::vector<int> items;
  for (int i = 1; i < vocab; ++i) items.push_back(i);
  d.train["u"] = UserSequence{"u", items, {}};
  return build_item_graph(d);
}

ItemGraph identity_graph(int vocab) {
  DomainDataset d;
  d.vocab_size = vocab;
  return build_item_graph(d);
}

}  // namespace

TEST_CASE("propagation over pure self-loops or with L=0 returns the base table") {
  auto shape = toy_shape();
  const auto p = init_encoder_params(shape, 3);
  CHECK(propagate_graph(identity_graph(shape.vocab), p).isApprox(p.tensors.at("gnn_base_emb"), 1e-12));
  shape.gnn_layers = 0;
  const auto p0 = init_encoder_params(shape, 3);
  CHECK(propagate_graph(chain_graph(shape.vocab), p0) == p0.tensors.at("gnn_base_emb"));
}

TEST_CASE("propagation of a 2-item uniform graph with L=1") {
  EncoderShape shape = toy_shape();
  shape.vocab = 2;
  shape.gnn_layers = 1;
  shape.dim = 2;
  shape.heads = 1;
  auto p = init_encoder_params(shape, 1);
  Matrix h0(2, 2);
  h0 << 1, 2, 3, 6;
  p.tensors.at("gnn_base_emb") = h0;
  ItemGraph g;
  g.adjacency.resize(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) g.adjacency.insert(i, j) = 0.5;
  Matrix expected(2, 2);
  // mean(H0, row-average of H0): row average is (2, 4) for both rows.
  expected << 1.5, 3.0, 2.5, 5.0;
  CHECK(propagate_graph(g, p).isApprox(expected, 1e-12));
}

TEST_CASE("propagation is linear in the base table") {
  const auto shape = toy_shape();
  auto p = init_encoder_params(shape, 4);
  const auto g = chain_graph(shape.vocab);
  const Matrix once = propagate_graph(g, p);
  p.tensors.at("gnn_base_emb") *= 2.0;
  CHECK(propagate_graph(g, p).isApprox(2.0 * once, 1e-12));
}

TEST_CASE("init is seed-deterministic with the documented shapes") {
  EncoderShape shape = toy_shape();
  shape.dim = 8;
  shape.vocab = 50;
  const auto a = init_encoder_params(shape, 9);
  CHECK(a == init_encoder_params(shape, 9));
  CHECK(a != init_encoder_params(shape, 10));
  CHECK(a.tensors.at("item_emb").rows() == 50);
  CHECK(a.tensors.at("item_emb").cols() == 8);
  CHECK(a.tensors.at("pos_emb").rows() == shape.seq_len);
  CHECK(a.tensors.all_finite());
  shape.dim = 0;
  CHECK_THROWS_AS(init_encoder_params(shape, 1), ConfigError);
}

TEST_CASE("encode: shapes, positive bounded sigma and eval determinism") {
  const auto shape = toy_shape();
  const auto p = init_encoder_params(shape, 5);
  const auto g = chain_graph(shape.vocab);
  const auto batch = make_batch({{1, 2, 3}, {4, 5, 6, 7, 8, 9}, {}}, shape.seq_len);
  const auto d1 = encode(batch, g, p);
  const auto d2 = encode(batch, g, p);
  CHECK(d1.mu.rows() == 3 * shape.seq_len);
  CHECK(d1.mu.cols() == shape.dim);
  CHECK(d1.mu == d2.mu);
  CHECK(d1.sigma == d2.sigma);
  CHECK(d1.mu.allFinite());
  CHECK(d1.sigma.allFinite());
  CHECK(d1.sigma.minCoeff() >= std::exp(-4.0));
  CHECK(d1.sigma.maxCoeff() <= std::exp(4.0));
}

TEST_CASE("extreme log-variance heads are clamped") {
  const auto shape = toy_shape();
  auto p = init_encoder_params(shape, 5);
  p.tensors.at("logvar_b").setConstant(100.0);
  const auto batch = make_batch({{1, 2}}, shape.seq_len);
  const auto g = chain_graph(shape.vocab);
  CHECK(encode(batch, g, p).sigma.maxCoeff() <= std::exp(4.0) * (1 + 1e-12));
  p.tensors.at("logvar_b").setConstant(-100.0);
  CHECK(encode(batch, g, p).sigma.minCoeff() >= std::exp(-4.0) * (1 - 1e-12));
}

TEST_CASE("causal mask: later items do not affect earlier positions") {
  const auto shape = toy_shape();
  const auto p = init_encoder_params(shape, 6);
  const auto g = chain_graph(shape.vocab);
  const auto base = encode(make_batch({{1, 2, 3, 4, 5}}, shape.seq_len), g, p);
  const auto changed = encode(make_batch({{1, 2, 3, 10, 11}}, shape.seq_len), g, p);
  CHECK(base.mu.topRows(3) == changed.mu.topRows(3));
  CHECK(base.sigma.topRows(3) == changed.sigma.topRows(3));
  CHECK(base.mu.row(3) != changed.mu.row(3));
}

TEST_CASE("out-of-range item index is rejected") {
  const auto shape = toy_shape();
  const auto p = init_encoder_params(shape, 6);
  const auto g = chain_graph(shape.vocab);
  CHECK_THROWS_AS(encode(make_batch({{1, 12}}, shape.seq_len), g, p), std::out_of_range);
}

TEST_CASE("sampling edge cases") {
  LatentDist d{Matrix::Random(3, 2), Matrix::Constant(3, 2, 0.7)};
  CHECK(sample(d, Matrix::Zero(3, 2)) == d.mu);
  const Matrix e = Matrix::Random(3, 2);
  LatentDist std_normal{Matrix::Zero(3, 2), Matrix::Ones(3, 2)};
  CHECK(sample(std_normal, e) == e);
  LatentDist tiny{d.mu, Matrix::Constant(3, 2, 1e-300)};
  CHECK(sample(tiny, e).isApprox(d.mu, 1e-12));
}

TEST_CASE("user vectors are the newest slot of the exclusive sample") {
  const auto batch = make_batch({{1, 2}, {3, 4, 5}}, 4);
  const Matrix ze = Matrix::Random(8, 3);
  const auto bundle = make_bundle(Matrix::Zero(8, 3), ze, Matrix(), batch);
  CHECK(bundle.user_vec.row(0) == ze.row(3));
  CHECK(bundle.user_vec.row(1) == ze.row(7));
}

TEST_CASE("training-mode dropout depends only on the rng stream") {
  auto shape = toy_shape();
  shape.dropout = 0.3;
  const auto p = init_encoder_params(shape, 8);
  const auto g = chain_graph(shape.vocab);
  const auto batch = make_batch({{1, 2, 3}}, shape.seq_len);
  std::mt19937_64 r1(1);
  std::mt19937_64 r2(1);
  CHECK(encode(batch, g, p, true, &r1).mu == encode(batch, g, p, true, &r2).mu);
}

TEST_CASE("tape encoder matches the plain forward pass") {
  const auto shape = toy_shape();
  const auto p = init_encoder_params(shape, 12);
  const auto g = chain_graph(shape.vocab);
  const auto batch = make_batch({{1, 2, 3}, {4, 5, 6, 7, 8, 9}, {2}}, shape.seq_len);
  const auto plain = encode(batch, g, p);
  ad::Tape tape;
  const BoundEncoder bound(tape, p);
  const auto taped = encode(bound, batch, g, false, nullptr);
  const auto mask = batch.real_mask();
  for (int r = 0; r < static_cast<int>(mask.size()); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    CHECK(taped.mu.value().row(r).isApprox(plain.mu.row(r), 1e-12));
    CHECK(taped.sigma.value().row(r).isApprox(plain.sigma.row(r), 1e-12));
  }
}

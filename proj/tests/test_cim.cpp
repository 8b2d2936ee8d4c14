#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedcsr/cim.hpp"
#include "fedcsr/random.hpp"

using namespace fedcsr;

namespace {

std::vector<int> row_items(const SequenceBatch& b, int row) {
  return {b.items.begin() + row * b.seq_len, b.items.begin() + (row + 1) * b.seq_len};
}

}  // namespace

TEST_CASE("shuffle keeps item multisets and padding slots") {
  const auto b = make_batch({{1, 2, 3, 4, 5}, {6, 7}, {}, {9}}, 6);
  std::mt19937_64 rng(1);
  bool moved = false;
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = augment_shuffle(b, rng);
    for (int r = 0; r < b.batch; ++r) {
      auto before = row_items(b, r);
      auto after = row_items(a, r);
      for (int t = 0; t < b.seq_len; ++t) CHECK((before[t] == kPadItem) == (after[t] == kPadItem));
      if (before != after) moved = true;
      std::sort(before.begin(), before.end());
      std::sort(after.begin(), after.end());
      CHECK(before == after);
    }
    CHECK(row_items(a, 3) == row_items(b, 3));
  }
  CHECK(moved);
}

TEST_CASE("shuffle is deterministic for a given seed") {
  const auto b = make_batch({{1, 2, 3, 4, 5, 6}, {7, 8, 9}}, 6);
  std::mt19937_64 r1(42);
  std::mt19937_64 r2(42);
  CHECK(augment_shuffle(b, r1).items == augment_shuffle(b, r2).items);
}

TEST_CASE("InfoNCE with a single pair is zero") {
  ContrastiveBatch cb{Matrix::Random(1, 4), Matrix::Random(1, 4)};
  CHECK(infonce_loss(cb, 0.5) == doctest::Approx(0.0));
}

TEST_CASE("InfoNCE with orthogonal negatives at tau 1") {
  ContrastiveBatch cb{Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  const double e = std::numbers::e;
  CHECK(infonce_loss(cb, 1.0) == doctest::Approx(-std::log(e / (e + 2))).epsilon(1e-12));
}

TEST_CASE("InfoNCE is invariant to scale and to row permutation") {
  std::mt19937_64 rng(3);
  const Matrix a = standard_normal_matrix(6, 4, rng);
  const Matrix p = standard_normal_matrix(6, 4, rng);
  const double base = infonce_loss({a, p}, 0.5);
  CHECK(base >= 0.0);
  CHECK(infonce_loss({10.0 * a, 10.0 * p}, 0.5) == doctest::Approx(base).epsilon(1e-12));
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(6);
  perm.indices() << 3, 0, 5, 1, 4, 2;
  CHECK(infonce_loss({Matrix(perm * a), Matrix(perm * p)}, 0.5) ==
        doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("InfoNCE decreases as the positive pair aligns") {
  // The other rows are orthogonal to the plane the positive rotates in, so
  // only the positive similarity changes.
  Matrix a(3, 3);
  a << 1, 0, 0, 0, 0, 1, 0, 0, -1;
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 10; ++step) {
    const double angle = (std::numbers::pi / 2) * (1.0 - step / 10.0);
    Matrix p = a;
    p.row(0) << std::cos(angle), std::sin(angle), 0;
    const double loss = infonce_loss({a, p}, 0.5);
    CHECK(loss < previous);
    previous = loss;
  }
}

TEST_CASE("zero-norm rows count and act as similarity 0") {
  Matrix a(2, 2);
  a << 0, 0, 1, 0;
  int zeros = 0;
  const double loss = infonce_loss({a, a}, 0.5, &zeros);
  CHECK(zeros == 2);
  CHECK(std::isfinite(loss));
}

TEST_CASE("tape InfoNCE matches the plain value") {
  std::mt19937_64 rng(9);
  const Matrix a = standard_normal_matrix(4, 3, rng);
  const Matrix p = standard_normal_matrix(4, 3, rng);
  ad::Tape tape;
  const auto v = infonce_loss(tape.constant(a), tape.constant(p), 0.5);
  CHECK(v.scalar() == doctest::Approx(infonce_loss({a, p}, 0.5)).epsilon(1e-12));
}

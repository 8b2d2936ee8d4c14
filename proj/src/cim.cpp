#include "fedcsr/cim.hpp"

#include <spdlog/spdlog.h>

#include "fedcsr/random.hpp"

namespace fedcsr {

SequenceBatch augment_shuffle(const SequenceBatch& batch, std::mt19937_64& rng) {
  SequenceBatch out = batch;
  for (int b = 0; b < batch.batch; ++b) {
    auto* row = out.items.data() + static_cast<std::ptrdiff_t>(b) * batch.seq_len;
    int first = 0;
    while (first < batch.seq_len && row[first] == kPadItem) ++first;
    // Fisher-Yates over the contiguous real suffix of a left-padded row.
    for (int i = batch.seq_len - 1; i > first; --i) {
      const int j = first + uniform_index(rng, i - first + 1);
      std::swap(row[i], row[j]);
    }
  }
  return out;
}

ad::Var infonce_loss(ad::Var anchors, ad::Var positives, double tau, int* zero_norm_rows) {
  if (!(tau > 0)) throw ConfigError("infonce: tau must be positive");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols()) {
    throw ShapeError("infonce: anchors " + shape_string(anchors.value()) + " vs positives " +
                     shape_string(positives.value()));
  }
  const int n = static_cast<int>(anchors.rows());
  if (n < 1) throw DataError("infonce: empty batch");
  int zeros = 0;
  const ad::Var views = ad::l2_normalize_rows(ad::concat_rows(anchors, positives), &zeros);
  if (zeros > 0) spdlog::warn("infonce: {} zero-norm representation(s) treated as similarity 0", zeros);
  if (zero_norm_rows != nullptr) *zero_norm_rows = zeros;
  const ad::Var logits = ad::scale(ad::matmul_nt(views, views), 1.0 / tau);
  std::vector<int> positive(static_cast<std::size_t>(2 * n));
  for (int i = 0; i < n; ++i) {
    positive[static_cast<std::size_t>(i)] = i + n;
    positive[static_cast<std::size_t>(i + n)] = i;
  }
  return ad::contrastive_cross_entropy(logits, positive);
}

double infonce_loss(const ContrastiveBatch& cb, double tau, int* zero_norm_rows) {
  ad::Tape tape;
  return infonce_loss(tape.constant(cb.anchors), tape.constant(cb.positives), tau, zero_norm_rows)
      .scalar();
}

}  // namespace fedcsr

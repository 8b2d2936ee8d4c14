#pragma once

// Contrastive infomax on exclusive user representations: shuffle
// augmentation plus a symmetric in-batch InfoNCE objective.

#include <random>

#include "fedcsr/autodiff.hpp"
#include "fedcsr/encoder.hpp"

namespace fedcsr {

struct ContrastiveBatch {
  Matrix anchors;    // N×d user vectors
  Matrix positives;  // N×d augmented user vectors, row-aligned with anchors
};

/// Uniformly permutes the real (non-pad) slots of every sequence.
SequenceBatch augment_shuffle(const SequenceBatch& batch, std::mt19937_64& rng);

/// Symmetric InfoNCE over the 2N views with cosine similarity. Each view's
/// negatives are the 2(N−1) views of the other rows. `zero_norm_rows`, when
/// given, receives the number of zero vectors treated as similarity 0.
double infonce_loss(const ContrastiveBatch& cb, double tau, int* zero_norm_rows = nullptr);
ad::Var infonce_loss(ad::Var anchors, ad::Var positives, double tau, int* zero_norm_rows = nullptr);

}  // namespace fedcsr

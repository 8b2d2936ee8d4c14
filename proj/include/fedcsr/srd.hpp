#pragma once

// Disentanglement objective for the two encoder branches: the KL + joint
// reconstruction upper bound on I(Zs; Ze), the Jensen-Shannon lower bound on
// I(Zs; Zg) and the exclusive-branch reconstruction term.

#include <cstdint>
#include <optional>

#include "fedcsr/autodiff.hpp"
#include "fedcsr/encoder.hpp"

namespace fedcsr {

/// Bilinear critic T(a, b) = aᵀ W b + bias. Tensors: "w" (d×d), "bias" (1×1).
struct Discriminator {
  NamedTensors tensors;
  bool operator==(const Discriminator&) const = default;
};

/// Prediction layer f_θ(Z) = Z W + b. Tensors: "w" (d×d), "b" (1×d).
/// Logits come from f_θ(Z) against an item embedding table.
struct PredictorParams {
  NamedTensors tensors;
  bool operator==(const PredictorParams&) const = default;
};

Discriminator init_discriminator(int dim, std::uint64_t seed);
PredictorParams init_predictor(int dim, std::uint64_t seed);

struct LossWeights {
  double alpha = 1.0;
  double beta = 2.0;
  double gamma = 1.0;
  double lambda = 1.0;
  double tau = 0.5;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Per-position real-item weights (1 for real items, 0 for padding).
std::vector<double> real_position_weights(const SequenceBatch& batch);

double kl_to_standard_normal(const LatentDist& dist, const std::vector<double>& mask);
ad::Var kl_to_standard_normal(const TapeDist& dist, const std::vector<double>& mask);

/// Rows of the (batch·T) layout whose next slot holds a real item, and those
/// next items. Position t predicts s_{t+1}.
struct NextItemTargets {
  std::vector<int> rows;
  std::vector<int> targets;
};
NextItemTargets next_item_targets(const SequenceBatch& batch);

/// Mean next-item negative log-likelihood from explicit logits (rows as in
/// the batch layout).
double next_item_nll(const Matrix& logits, const SequenceBatch& batch);

/// Logits f_θ(z)·item_tableᵀ for the given latent rows.
Matrix predict_logits(const Matrix& z, const PredictorParams& theta, const Matrix& item_table);

double reconstruction_nll(const Matrix& z, const SequenceBatch& batch, const PredictorParams& theta,
                          const Matrix& item_table);

struct BoundPredictor {
  ad::Var w;
  ad::Var b;
};

ad::Var reconstruction_nll(ad::Var z, const SequenceBatch& batch, const BoundPredictor& theta,
                           ad::Var item_table);

struct BoundDiscriminator {
  ad::Var w;
  ad::Var bias;
};

/// Î = mean(−sp(−T(z_s, z_g))) − mean(sp(T(z_neg, z_g))).
double jsd_similarity(const Matrix& z_shared, const Matrix& z_global, const Matrix& z_negative,
                      const Discriminator& disc);
ad::Var jsd_similarity(ad::Var z_shared, ad::Var z_global, ad::Var z_negative,
                       const BoundDiscriminator& disc);

struct LossBreakdown {
  double kl_shared = 0.0;
  double kl_exclusive = 0.0;
  double joint_nll = 0.0;
  double jsd = 0.0;  // Î, enters the total with weight −β
  double exclusive_nll = 0.0;
  double infonce = 0.0;

  double alpha_term = 0.0;
  double beta_term = 0.0;  // −β·Î
  double gamma_term = 0.0;
  double lambda_term = 0.0;
  double total = 0.0;  // alpha_term + beta_term + gamma_term (+ lambda_term when trained)
};

struct DisentanglementInputs {
  TapeDist shared;
  TapeDist exclusive;
  ad::Var z_shared;
  ad::Var z_exclusive;
  const SequenceBatch* batch = nullptr;
  /// User-level global representations (batch×d); absent when no global signal.
  std::optional<ad::Var> z_global_user;
  /// Batch rows that z_global_user's rows belong to; empty means every row.
  std::vector<int> global_rows;
  BoundPredictor theta;
  BoundDiscriminator disc;
  ad::Var item_table;
  /// When true the JSD negatives (Ze) carry no gradient back to the exclusive branch.
  bool detach_negatives = true;
  /// Exclusive reconstruction conditions on Zs instead of Ze when set.
  bool literal_recon_on_shared = false;
};

struct DisentanglementLoss {
  ad::Var total;
  LossBreakdown terms;
};

/// α·[KL(Zs) + KL(Ze) + NLL(Zs + Ze)] − β·Î + γ·NLL(Ze).
/// Terms with zero weight are not evaluated.
DisentanglementLoss disentanglement_loss(const DisentanglementInputs& in, const LossWeights& w);

}  // namespace fedcsr

#include "fedcsr/srd.hpp"

#include <cmath>

#include "fedcsr/random.hpp"

namespace fedcsr {

Discriminator init_discriminator(int dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("discriminator: dim must be positive");
  std::mt19937_64 rng(derive_seed(seed, {0xD15C}));
  Discriminator d;
  d.tensors.add("w", standard_normal_matrix(dim, dim, rng) / static_cast<double>(dim));
  d.tensors.add("bias", Matrix::Zero(1, 1));
  return d;
}

PredictorParams init_predictor(int dim, std::uint64_t seed) {
  if (dim < 1) throw ConfigError("predictor: dim must be positive");
  std::mt19937_64 rng(derive_seed(seed, {0x7E7A}));
  PredictorParams p;
  p.tensors.add("w", standard_normal_matrix(dim, dim, rng) / std::sqrt(static_cast<double>(dim)));
  p.tensors.add("b", Matrix::Zero(1, dim));
  return p;
}

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || lambda < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(tau > 0)) throw ConfigError("temperature tau must be positive");
}

std::vector<double> real_position_weights(const SequenceBatch& batch) {
  std::vector<double> w(batch.items.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = batch.items[i] != kPadItem ? 1.0 : 0.0;
  return w;
}

double kl_to_standard_normal(const LatentDist& dist, const std::vector<double>& mask) {
  ad::Tape tape;
  const TapeDist td{tape.constant(dist.mu), tape.constant(dist.sigma)};
  return kl_to_standard_normal(td, mask).scalar();
}

ad::Var kl_to_standard_normal(const TapeDist& dist, const std::vector<double>& mask) {
  return ad::kl_standard_normal(dist.mu, dist.sigma, mask);
}

NextItemTargets next_item_targets(const SequenceBatch& batch) {
  NextItemTargets out;
  for (int b = 0; b < batch.batch; ++b) {
    for (int t = 0; t + 1 < batch.seq_len; ++t) {
      if (batch.at(b, t) != kPadItem && batch.at(b, t + 1) != kPadItem) {
        out.rows.push_back(b * batch.seq_len + t);
        out.targets.push_back(batch.at(b, t + 1));
      }
    }
  }
  return out;
}

double next_item_nll(const Matrix& logits, const SequenceBatch& batch) {
  const auto nt = next_item_targets(batch);
  ad::Tape tape;
  return ad::softmax_cross_entropy(tape.constant(logits), nt.rows, nt.targets).scalar();
}

Matrix predict_logits(const Matrix& z, const PredictorParams& theta, const Matrix& item_table) {
  Matrix h = z * theta.tensors.at("w");
  h.rowwise() += theta.tensors.at("b").row(0);
  return h * item_table.transpose();
}

double reconstruction_nll(const Matrix& z, const SequenceBatch& batch, const PredictorParams& theta,
                          const Matrix& item_table) {
  ad::Tape tape;
  const BoundPredictor bp{tape.constant(theta.tensors.at("w")), tape.constant(theta.tensors.at("b"))};
  return reconstruction_nll(tape.constant(z), batch, bp, tape.constant(item_table)).scalar();
}

ad::Var reconstruction_nll(ad::Var z, const SequenceBatch& batch, const BoundPredictor& theta,
                           ad::Var item_table) {
  const auto nt = next_item_targets(batch);
  if (nt.rows.empty()) throw DataError("empty batch: no predictable positions");
  const ad::Var zr = ad::gather_rows(z, nt.rows);
  const ad::Var h = ad::add_bias(ad::matmul(zr, theta.w), theta.b);
  const ad::Var logits = ad::matmul_nt(h, item_table);
  std::vector<int> rows(nt.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(i);
  return ad::softmax_cross_entropy(logits, rows, nt.targets);
}

double jsd_similarity(const Matrix& z_shared, const Matrix& z_global, const Matrix& z_negative,
                      const Discriminator& disc) {
  ad::Tape tape;
  const BoundDiscriminator bd{tape.constant(disc.tensors.at("w")),
                              tape.constant(disc.tensors.at("bias"))};
  return jsd_similarity(tape.constant(z_shared), tape.constant(z_global),
                        tape.constant(z_negative), bd)
      .scalar();
}

ad::Var jsd_similarity(ad::Var z_shared, ad::Var z_global, ad::Var z_negative,
                       const BoundDiscriminator& disc) {
  if (z_shared.rows() != z_global.rows() || z_negative.rows() != z_global.rows()) {
    throw ShapeError("jsd_similarity: batch sizes " + std::to_string(z_shared.rows()) + ", " +
                     std::to_string(z_global.rows()) + ", " + std::to_string(z_negative.rows()));
  }
  if (z_global.rows() == 0) throw DataError("jsd_similarity: empty batch");
  // T(a, g) = aᵀ W g + bias, evaluated row-wise.
  const ad::Var wg = ad::matmul_nt(z_global, disc.w);  // rows: (W g)ᵀ
  const ad::Var t_pos = ad::add_bias(ad::rowwise_dot(z_shared, wg), disc.bias);
  const ad::Var t_neg = ad::add_bias(ad::rowwise_dot(z_negative, wg), disc.bias);
  const ad::Var pos_term = ad::scale(ad::mean(ad::softplus(ad::scale(t_pos, -1.0))), -1.0);
  const ad::Var neg_term = ad::mean(ad::softplus(t_neg));
  return pos_term - neg_term;
}

DisentanglementLoss disentanglement_loss(const DisentanglementInputs& in, const LossWeights& w) {
  w.validate();
  if (in.batch == nullptr) throw std::invalid_argument("disentanglement_loss: batch missing");
  ad::Tape& tape = *in.z_shared.tape();
  DisentanglementLoss out;
  auto& terms = out.terms;
  ad::Var total = tape.constant(Matrix::Zero(1, 1));

  if (w.alpha > 0) {
    const auto mask = real_position_weights(*in.batch);
    const ad::Var kl_s = kl_to_standard_normal(in.shared, mask);
    const ad::Var kl_e = kl_to_standard_normal(in.exclusive, mask);
    const ad::Var joint =
        reconstruction_nll(in.z_shared + in.z_exclusive, *in.batch, in.theta, in.item_table);
    const ad::Var bound = (kl_s + kl_e) + joint;
    terms.kl_shared = kl_s.scalar();
    terms.kl_exclusive = kl_e.scalar();
    terms.joint_nll = joint.scalar();
    const ad::Var weighted = ad::scale(bound, w.alpha);
    terms.alpha_term = weighted.scalar();
    total = total + weighted;
  }
  if (w.beta > 0 && in.z_global_user.has_value()) {
    auto last = in.batch->last_rows();
    if (!in.global_rows.empty()) {
      std::vector<int> picked;
      picked.reserve(in.global_rows.size());
      for (int b : in.global_rows) picked.push_back(last.at(static_cast<std::size_t>(b)));
      last = std::move(picked);
    }
    const ad::Var zs = ad::gather_rows(in.z_shared, last);
    ad::Var zneg = ad::gather_rows(in.z_exclusive, last);
    if (in.detach_negatives) zneg = ad::stop_gradient(zneg);
    const ad::Var jsd = jsd_similarity(zs, *in.z_global_user, zneg, in.disc);
    terms.jsd = jsd.scalar();
    const ad::Var weighted = ad::scale(jsd, -w.beta);
    terms.beta_term = weighted.scalar();
    total = total + weighted;
  }
  if (w.gamma > 0) {
    const ad::Var z = in.literal_recon_on_shared ? in.z_shared : in.z_exclusive;
    const ad::Var nll = reconstruction_nll(z, *in.batch, in.theta, in.item_table);
    terms.exclusive_nll = nll.scalar();
    const ad::Var weighted = ad::scale(nll, w.gamma);
    terms.gamma_term = weighted.scalar();
    total = total + weighted;
  }
  terms.total = total.scalar();
  out.total = total;
  return out;
}

}  // namespace fedcsr

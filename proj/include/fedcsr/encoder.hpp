#pragma once

// Variational graph self-attention encoder.
//
// Input embeddings are the sum of a learned item table, learned positions and
// relational item embeddings obtained by propagating a separate base table
// over the item graph. A causally masked pre-LN transformer trunk feeds two
// linear heads producing the posterior mean and log-variance per position.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedcsr/autodiff.hpp"
#include "fedcsr/dataset.hpp"
#include "fedcsr/tensor.hpp"

namespace fedcsr {

inline constexpr double kLogVarMin = -8.0;
inline constexpr double kLogVarMax = 8.0;

struct EncoderShape {
  int vocab = 0;
  int seq_len = 16;
  int dim = 32;
  int gnn_layers = 2;
  int attn_layers = 2;
  int heads = 2;
  double dropout = 0.3;

  void validate() const;
  bool operator==(const EncoderShape&) const = default;
};

/// Parameters of one encoder branch. Tensor names:
///   item_emb, pos_emb, gnn_base_emb,
///   block<i>/{ln1_g,ln1_b,wq,bq,wk,bk,wv,bv,wo,bo,ln2_g,ln2_b,ff1_w,ff1_b,ff2_w,ff2_b},
///   final_ln_g, final_ln_b, mu_w, mu_b, logvar_w, logvar_b.
struct EncoderParams {
  EncoderShape shape;
  NamedTensors tensors;

  bool operator==(const EncoderParams&) const = default;
};

EncoderParams init_encoder_params(const EncoderShape& shape, std::uint64_t seed);

/// Left-padded batch of item sequences, row-major batch × seq_len.
struct SequenceBatch {
  int batch = 0;
  int seq_len = 0;
  std::vector<int> items;
  std::vector<std::string> user_ids;

  [[nodiscard]] int at(int b, int t) const { return items[static_cast<std::size_t>(b * seq_len + t)]; }
  [[nodiscard]] std::vector<char> real_mask() const;
  /// Row index (into batch·seq_len rows) of each sequence's newest slot.
  [[nodiscard]] std::vector<int> last_rows() const;
};

SequenceBatch make_batch(const std::vector<std::vector<int>>& sequences, int seq_len,
                         std::vector<std::string> user_ids = {});

struct LatentDist {
  Matrix mu;     // (batch·T)×d
  Matrix sigma;  // (batch·T)×d, strictly positive
};

/// Mean of H⁰..H^L with H^l = Norm(A)·H^{l−1}, H⁰ = gnn_base_emb.
Matrix propagate_graph(const ItemGraph& graph, const EncoderParams& params);

LatentDist encode(const SequenceBatch& batch, const ItemGraph& graph, const EncoderParams& params,
                  bool training = false, std::mt19937_64* dropout_rng = nullptr);

/// μ + σ ⊙ ε.
Matrix sample(const LatentDist& dist, const Matrix& noise);

/// Rows of `z` ((batch·T)×d) at each sequence's newest slot.
Matrix pool_last(const Matrix& z, const SequenceBatch& batch);

struct LatentBundle {
  Matrix z_shared;         // (batch·T)×d
  Matrix z_exclusive;      // (batch·T)×d
  Matrix z_exclusive_aug;  // (batch·T)×d, empty when no augmentation
  Matrix user_vec;         // batch×d, newest slot of z_exclusive
};

LatentBundle make_bundle(Matrix z_shared, Matrix z_exclusive, Matrix z_exclusive_aug,
                         const SequenceBatch& batch);

Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

// ------------------------------------------------------------ tape versions

/// Encoder parameters bound to leaves of a tape.
class BoundEncoder {
 public:
  BoundEncoder(ad::Tape& tape, const EncoderParams& params);

  [[nodiscard]] ad::Var get(const std::string& name) const;
  [[nodiscard]] const EncoderParams& params() const { return *params_; }
  [[nodiscard]] const std::vector<ad::Var>& vars() const { return vars_; }
  [[nodiscard]] NamedTensors gradients() const;
  [[nodiscard]] ad::Tape& tape() const { return *tape_; }

 private:
  ad::Tape* tape_;
  const EncoderParams* params_;
  std::vector<ad::Var> vars_;
};

struct TapeDist {
  ad::Var mu;
  ad::Var sigma;
};

ad::Var propagate_graph(const ItemGraph& graph, ad::Var base, int layers);

TapeDist encode(const BoundEncoder& enc, const SequenceBatch& batch, const ItemGraph& graph,
                bool training, std::mt19937_64* dropout_rng);

ad::Var sample(const TapeDist& dist, const Matrix& noise);

}  // namespace fedcsr

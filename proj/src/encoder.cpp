#include "fedcsr/encoder.hpp"

#include <cmath>
#include <optional>

#include "fedcsr/random.hpp"

namespace fedcsr {

void EncoderShape::validate() const {
  if (vocab < 1 || seq_len < 1 || dim < 1 || attn_layers < 0 || gnn_layers < 0 || heads < 1) {
    throw ConfigError("encoder: dimensions must be positive");
  }
  if (dim % heads != 0) throw ConfigError("encoder: dim must be divisible by heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder: dropout must lie in [0, 1)");
}

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * standard_normal(rng);
  return m;
}

std::string block_name(int layer, const char* leaf) {
  return "block" + std::to_string(layer) + "/" + leaf;
}

}  // namespace

Matrix standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  return gaussian(rows, cols, 1.0, rng);
}

EncoderParams init_encoder_params(const EncoderShape& shape, std::uint64_t seed) {
  shape.validate();
  std::mt19937_64 rng(derive_seed(seed, {0xE5C0DE}));
  const int d = shape.dim;
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double fan_in = 1.0 / std::sqrt(static_cast<double>(d));
  EncoderParams p;
  p.shape = shape;
  auto& t = p.tensors;
  t.add("item_emb", gaussian(shape.vocab, d, emb_scale, rng));
  t.add("pos_emb", gaussian(shape.seq_len, d, emb_scale, rng));
  t.add("gnn_base_emb", gaussian(shape.vocab, d, emb_scale, rng));
  for (int l = 0; l < shape.attn_layers; ++l) {
    t.add(block_name(l, "ln1_g"), Matrix::Ones(1, d));
    t.add(block_name(l, "ln1_b"), Matrix::Zero(1, d));
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      t.add(block_name(l, w), gaussian(d, d, fan_in, rng));
      const std::string bias = std::string("b") + w[1];
      t.add(block_name(l, bias.c_str()), Matrix::Zero(1, d));
    }
    t.add(block_name(l, "ln2_g"), Matrix::Ones(1, d));
    t.add(block_name(l, "ln2_b"), Matrix::Zero(1, d));
    t.add(block_name(l, "ff1_w"), gaussian(d, d, fan_in, rng));
    t.add(block_name(l, "ff1_b"), Matrix::Zero(1, d));
    t.add(block_name(l, "ff2_w"), gaussian(d, d, fan_in, rng));
    t.add(block_name(l, "ff2_b"), Matrix::Zero(1, d));
  }
  t.add("final_ln_g", Matrix::Ones(1, d));
  t.add("final_ln_b", Matrix::Zero(1, d));
  t.add("mu_w", gaussian(d, d, fan_in, rng));
  t.add("mu_b", Matrix::Zero(1, d));
  t.add("logvar_w", gaussian(d, d, fan_in, rng));
  t.add("logvar_b", Matrix::Zero(1, d));
  return p;
}

std::vector<char> SequenceBatch::real_mask() const {
  std::vector<char> mask(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) mask[i] = items[i] != kPadItem ? 1 : 0;
  return mask;
}

std::vector<int> SequenceBatch::last_rows() const {
  std::vector<int> rows(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) rows[static_cast<std::size_t>(b)] = b * seq_len + seq_len - 1;
  return rows;
}

SequenceBatch make_batch(const std::vector<std::vector<int>>& sequences, int seq_len,
                         std::vector<std::string> user_ids) {
  SequenceBatch b;
  b.batch = static_cast<int>(sequences.size());
  b.seq_len = seq_len;
  b.items.reserve(sequences.size() * static_cast<std::size_t>(seq_len));
  for (const auto& s : sequences) {
    const auto padded = left_pad(s, seq_len);
    b.items.insert(b.items.end(), padded.begin(), padded.end());
  }
  if (!user_ids.empty() && user_ids.size() != sequences.size()) {
    throw ShapeError("make_batch: user id count does not match sequence count");
  }
  b.user_ids = std::move(user_ids);
  return b;
}

// ----------------------------------------------------------------- tape ops

BoundEncoder::BoundEncoder(ad::Tape& tape, const EncoderParams& params)
    : tape_(&tape), params_(&params), vars_(ad::bind(tape, params.tensors)) {}

ad::Var BoundEncoder::get(const std::string& name) const {
  std::size_t i = 0;
  for (const auto& [n, value] : params_->tensors) {
    if (n == name) return vars_[i];
    ++i;
  }
  throw std::out_of_range("encoder has no tensor " + name);
}

NamedTensors BoundEncoder::gradients() const {
  return ad::gradients(*tape_, params_->tensors, vars_);
}

ad::Var propagate_graph(const ItemGraph& graph, ad::Var base, int layers) {
  if (graph.vocab_size() != base.rows()) {
    throw ShapeError("propagate_graph: graph over " + std::to_string(graph.vocab_size()) +
                     " items, embeddings for " + std::to_string(base.rows()));
  }
  if (layers == 0) return base;
  ad::Var h = base;
  ad::Var acc = base;
  for (int l = 0; l < layers; ++l) {
    h = ad::sparse_matmul(graph.adjacency, h);
    acc = acc + h;
  }
  return ad::scale(acc, 1.0 / static_cast<double>(layers + 1));
}

namespace {

ad::Var dropout(ad::Var x, double rate, bool active, std::mt19937_64* rng) {
  if (!active || rate <= 0.0 || rng == nullptr) return x;
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  }
  return ad::mul_constant(x, mask);
}

ad::Var linear(const BoundEncoder& enc, ad::Var x, const std::string& w, const std::string& b) {
  return ad::add_bias(ad::matmul(x, enc.get(w)), enc.get(b));
}

}  // namespace

namespace {

// Left-padded batches are encoded on a compact row set: every real slot, plus
// one row per position standing in for all pad slots at that position. A pad
// slot in a left-padded sequence only ever attends to itself, so its output
// depends on the position alone.
struct CompactLayout {
  std::vector<int> items;
  std::vector<int> positions;
  std::vector<int> seg_start;
  std::vector<int> seg_len;
  std::vector<int> scatter;  // batch row → compact row
};

std::optional<CompactLayout> compact_layout(const SequenceBatch& batch) {
  const int T = batch.seq_len;
  CompactLayout lay;
  lay.scatter.resize(batch.items.size());
  for (int t = 0; t < T; ++t) {
    lay.items.push_back(kPadItem);
    lay.positions.push_back(t);
    lay.seg_start.push_back(t);
    lay.seg_len.push_back(1);
  }
  for (int b = 0; b < batch.batch; ++b) {
    int first = T;
    for (int t = 0; t < T; ++t) {
      if (batch.at(b, t) != kPadItem) {
        first = t;
        break;
      }
    }
    for (int t = first; t < T; ++t) {
      if (batch.at(b, t) == kPadItem) return std::nullopt;
    }
    for (int t = 0; t < first; ++t) lay.scatter[static_cast<std::size_t>(b * T + t)] = t;
    if (first == T) continue;
    lay.seg_start.push_back(static_cast<int>(lay.items.size()));
    lay.seg_len.push_back(T - first);
    for (int t = first; t < T; ++t) {
      lay.scatter[static_cast<std::size_t>(b * T + t)] = static_cast<int>(lay.items.size());
      lay.items.push_back(batch.at(b, t));
      lay.positions.push_back(t);
    }
  }
  return lay;
}

}  // namespace

TapeDist encode(const BoundEncoder& enc, const SequenceBatch& batch, const ItemGraph& graph,
                bool training, std::mt19937_64* dropout_rng) {
  const auto& shape = enc.params().shape;
  if (batch.seq_len != shape.seq_len) {
    throw ShapeError("encode: batch length " + std::to_string(batch.seq_len) +
                     " vs encoder length " + std::to_string(shape.seq_len));
  }
  if (graph.vocab_size() != shape.vocab) {
    throw ShapeError("encode: graph vocabulary " + std::to_string(graph.vocab_size()) +
                     " vs encoder vocabulary " + std::to_string(shape.vocab));
  }
  for (int item : batch.items) {
    if (item < 0 || item >= shape.vocab) {
      throw std::out_of_range("encode: item index " + std::to_string(item) + " outside [0, " +
                              std::to_string(shape.vocab) + ")");
    }
  }

  const auto compact = compact_layout(batch);
  std::vector<int> items;
  std::vector<int> positions;
  if (compact) {
    items = compact->items;
    positions = compact->positions;
  } else {
    items = batch.items;
    positions.resize(batch.items.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
      positions[i] = static_cast<int>(i % static_cast<std::size_t>(batch.seq_len));
    }
  }

  const ad::Var relational = propagate_graph(graph, enc.get("gnn_base_emb"), shape.gnn_layers);
  ad::Var x = ad::gather_rows(enc.get("item_emb"), items) +
              ad::gather_rows(enc.get("pos_emb"), positions) +
              ad::gather_rows(relational, items);
  x = dropout(x, shape.dropout, training, dropout_rng);

  const auto real = compact ? std::vector<char>{} : batch.real_mask();
  for (int l = 0; l < shape.attn_layers; ++l) {
    auto name = [l](const char* leaf) { return block_name(l, leaf); };
    ad::Var h = ad::layer_norm(x, enc.get(name("ln1_g")), enc.get(name("ln1_b")));
    ad::Var q = linear(enc, h, name("wq"), name("bq"));
    ad::Var k = linear(enc, h, name("wk"), name("bk"));
    ad::Var v = linear(enc, h, name("wv"), name("bv"));
    ad::Var a = compact ? ad::segment_causal_attention(q, k, v, compact->seg_start,
                                                       compact->seg_len, shape.heads)
                        : ad::causal_attention(q, k, v, batch.batch, batch.seq_len, shape.heads,
                                               real);
    a = linear(enc, a, name("wo"), name("bo"));
    x = x + dropout(a, shape.dropout, training, dropout_rng);

    h = ad::layer_norm(x, enc.get(name("ln2_g")), enc.get(name("ln2_b")));
    ad::Var f = ad::gelu(linear(enc, h, name("ff1_w"), name("ff1_b")));
    f = linear(enc, f, name("ff2_w"), name("ff2_b"));
    x = x + dropout(f, shape.dropout, training, dropout_rng);
  }
  x = ad::layer_norm(x, enc.get("final_ln_g"), enc.get("final_ln_b"));

  TapeDist out;
  out.mu = linear(enc, x, "mu_w", "mu_b");
  const ad::Var logvar = ad::clamp(linear(enc, x, "logvar_w", "logvar_b"), kLogVarMin, kLogVarMax);
  out.sigma = ad::exp(ad::scale(logvar, 0.5));
  if (compact) {
    out.mu = ad::gather_rows(out.mu, compact->scatter);
    out.sigma = ad::gather_rows(out.sigma, compact->scatter);
  }
  return out;
}

ad::Var sample(const TapeDist& dist, const Matrix& noise) {
  return dist.mu + ad::mul_constant(dist.sigma, noise);
}

// ---------------------------------------------------------------- plain API

Matrix propagate_graph(const ItemGraph& graph, const EncoderParams& params) {
  ad::Tape tape;
  const ad::Var base = tape.constant(params.tensors.at("gnn_base_emb"));
  return propagate_graph(graph, base, params.shape.gnn_layers).value();
}

LatentDist encode(const SequenceBatch& batch, const ItemGraph& graph, const EncoderParams& params,
                  bool training, std::mt19937_64* dropout_rng) {
  ad::Tape tape;
  const BoundEncoder enc(tape, params);
  const auto dist = encode(enc, batch, graph, training, dropout_rng);
  return {dist.mu.value(), dist.sigma.value()};
}

Matrix sample(const LatentDist& dist, const Matrix& noise) {
  if (noise.rows() != dist.mu.rows() || noise.cols() != dist.mu.cols()) {
    throw ShapeError("sample: noise " + shape_string(noise) + " vs " + shape_string(dist.mu));
  }
  return dist.mu + dist.sigma.cwiseProduct(noise);
}

Matrix pool_last(const Matrix& z, const SequenceBatch& batch) {
  const auto rows = batch.last_rows();
  if (z.rows() != static_cast<Eigen::Index>(batch.items.size())) {
    throw ShapeError("pool_last: " + shape_string(z) + " for batch of " +
                     std::to_string(batch.batch) + "x" + std::to_string(batch.seq_len));
  }
  Matrix out(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = z.row(rows[i]);
  return out;
}

LatentBundle make_bundle(Matrix z_shared, Matrix z_exclusive, Matrix z_exclusive_aug,
                         const SequenceBatch& batch) {
  LatentBundle b;
  b.user_vec = pool_last(z_exclusive, batch);
  b.z_shared = std::move(z_shared);
  b.z_exclusive = std::move(z_exclusive);
  b.z_exclusive_aug = std::move(z_exclusive_aug);
  return b;
}

}  // namespace fedcsr

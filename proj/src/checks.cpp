#include "fedcsr/checks.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "fedcsr/cim.hpp"
#include "fedcsr/evaluation.hpp"
#include "fedcsr/federation.hpp"
#include "fedcsr/random.hpp"
#include "fedcsr/srd.hpp"

namespace fedcsr {

namespace {

// ----------------------------------------------------------- gradient check

struct ParamSet {
  EncoderParams shared;
  EncoderParams exclusive;
  PredictorParams predictor;
  Discriminator disc;
};

struct GradFixture {
  SequenceBatch batch;
  SequenceBatch augmented;
  ItemGraph graph;
  Matrix eps_shared;
  Matrix eps_exclusive;
  Matrix eps_augmented;
  Matrix z_global;
};

void jitter(NamedTensors& t, double scale, std::mt19937_64& rng) {
  for (auto& [name, m] : t) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += scale * standard_normal(rng);
  }
}

const char* const kTerms[] = {"kl", "joint_nll", "exclusive_nll", "jsd", "infonce", "total"};

/// Scalar value of `term` at `p`; fills `grads` (same layout as p) when given.
double term_value(const GradFixture& fx, const ParamSet& p, const std::string& term,
                  ParamSet* grads) {
  ad::Tape tape;
  const BoundEncoder shared(tape, p.shared);
  const BoundEncoder exclusive(tape, p.exclusive);
  const auto theta_vars = ad::bind(tape, p.predictor.tensors);
  const auto disc_vars = ad::bind(tape, p.disc.tensors);
  const BoundPredictor theta{theta_vars[0], theta_vars[1]};
  const BoundDiscriminator disc{disc_vars[0], disc_vars[1]};

  const TapeDist ds = encode(shared, fx.batch, fx.graph, false, nullptr);
  const TapeDist de = encode(exclusive, fx.batch, fx.graph, false, nullptr);
  const ad::Var zs = sample(ds, fx.eps_shared);
  const ad::Var ze = sample(de, fx.eps_exclusive);
  const auto last = fx.batch.last_rows();
  const ad::Var table = exclusive.get("item_emb");
  const auto mask = real_position_weights(fx.batch);

  auto infonce = [&] {
    const TapeDist da = encode(exclusive, fx.augmented, fx.graph, false, nullptr);
    const ad::Var za = sample(da, fx.eps_augmented);
    return infonce_loss(ad::gather_rows(ze, last), ad::gather_rows(za, last), 0.5);
  };

  ad::Var out;
  if (term == "kl") {
    out = kl_to_standard_normal(ds, mask) + kl_to_standard_normal(de, mask);
  } else if (term == "joint_nll") {
    out = reconstruction_nll(zs + ze, fx.batch, theta, table);
  } else if (term == "exclusive_nll") {
    out = reconstruction_nll(ze, fx.batch, theta, table);
  } else if (term == "jsd") {
    out = jsd_similarity(ad::gather_rows(zs, last), tape.constant(fx.z_global),
                         ad::gather_rows(ze, last), disc);
  } else if (term == "infonce") {
    out = infonce();
  } else {
    DisentanglementInputs in;
    in.shared = ds;
    in.exclusive = de;
    in.z_shared = zs;
    in.z_exclusive = ze;
    in.batch = &fx.batch;
    in.z_global_user = tape.constant(fx.z_global);
    in.theta = theta;
    in.disc = disc;
    in.item_table = table;
    // Finite differences see the negatives' dependence on the exclusive branch.
    in.detach_negatives = false;
    out = disentanglement_loss(in, LossWeights{}).total + infonce();
  }
  if (grads != nullptr) {
    tape.backward(out);
    grads->shared.tensors = shared.gradients();
    grads->exclusive.tensors = exclusive.gradients();
    grads->predictor.tensors = ad::gradients(tape, p.predictor.tensors, theta_vars);
    grads->disc.tensors = ad::gradients(tape, p.disc.tensors, disc_vars);
  }
  return out.scalar();
}

NamedTensors& group_of(ParamSet& p, int g) {
  switch (g) {
    case 0:
      return p.shared.tensors;
    case 1:
      return p.exclusive.tensors;
    case 2:
      return p.predictor.tensors;
    default:
      return p.disc.tensors;
  }
}

const char* const kGroups[] = {"shared_encoder", "exclusive_encoder", "predictor", "discriminator"};

// ------------------------------------------------------------ small helpers

double softplus(double x) { return std::log1p(std::exp(x)); }

CheckResult near(const std::string& name, double got, double expected, double tol) {
  const bool ok = std::isfinite(got) && std::abs(got - expected) <= tol;
  return {name, ok, fmt::format("got {:.9f}, expected {:.9f}", got, expected)};
}

UpMessage scalar_up(const std::string& id, std::size_t count, double param, double rep) {
  UpMessage up;
  up.client_id = id;
  up.sample_count = count;
  up.shared_params.add("w", Matrix::Constant(1, 1, param));
  up.rep_table.emplace("u1", Matrix::Constant(1, 1, rep));
  return up;
}

}  // namespace

std::vector<GradientCheckRow> gradient_check(const GradientCheckOptions& opts) {
  std::mt19937_64 rng(derive_seed(opts.seed, {1}));
  const int T = opts.seq_len;
  const int real_items = opts.vocab - 1;

  // Sequences of varied length, including one that fills every slot.
  std::vector<std::vector<int>> seqs;
  for (int b = 0; b < opts.batch; ++b) {
    const int len = b == 0 ? T : std::max(2, T - b);
    std::vector<int> s;
    for (int t = 0; t < len; ++t) s.push_back(1 + uniform_index(rng, real_items));
    seqs.push_back(s);
  }
  GradFixture fx;
  fx.batch = make_batch(seqs, T);
  std::mt19937_64 aug_rng(derive_seed(opts.seed, {2}));
  fx.augmented = augment_shuffle(fx.batch, aug_rng);
  DomainDataset domain;
  domain.domain_name = "gradcheck";
  domain.vocab_size = opts.vocab;
  for (std::size_t b = 0; b < seqs.size(); ++b) {
    const std::string id = "u" + std::to_string(b);
    domain.train.emplace(id, UserSequence{id, seqs[b], {}});
  }
  fx.graph = build_item_graph(domain);
  const auto rows = static_cast<Eigen::Index>(fx.batch.items.size());
  fx.eps_shared = standard_normal_matrix(rows, opts.dim, rng);
  fx.eps_exclusive = standard_normal_matrix(rows, opts.dim, rng);
  fx.eps_augmented = standard_normal_matrix(rows, opts.dim, rng);
  fx.z_global = standard_normal_matrix(opts.batch, opts.dim, rng);

  const EncoderShape shape{opts.vocab, T, opts.dim, 2, 2, 2, 0.0};
  ParamSet p{init_encoder_params(shape, derive_seed(opts.seed, {3})),
             init_encoder_params(shape, derive_seed(opts.seed, {4})),
             init_predictor(opts.dim, derive_seed(opts.seed, {5})),
             init_discriminator(opts.dim, derive_seed(opts.seed, {6}))};
  // Move away from the symmetric initial point (unit gains, zero biases).
  for (int g = 0; g < 4; ++g) jitter(group_of(p, g), 0.2, rng);

  std::vector<GradientCheckRow> rows_out;
  for (const char* term : kTerms) {
    ParamSet analytic = p;
    term_value(fx, p, term, &analytic);
    for (int g = 0; g < 4; ++g) {
      double diff2 = 0.0;
      double a2 = 0.0;
      double n2 = 0.0;
      std::size_t entries = 0;
      ParamSet probe = p;
      auto& probe_group = group_of(probe, g);
      auto analytic_it = group_of(analytic, g).begin();
      for (auto& [name, m] : probe_group) {
        const Matrix& ga = analytic_it->second;
        for (Eigen::Index i = 0; i < m.size(); ++i) {
          const double orig = m.data()[i];
          m.data()[i] = orig + opts.step;
          const double up = term_value(fx, probe, term, nullptr);
          m.data()[i] = orig - opts.step;
          const double down = term_value(fx, probe, term, nullptr);
          m.data()[i] = orig;
          const double numeric = (up - down) / (2.0 * opts.step);
          const double a = ga.data()[i];
          diff2 += (a - numeric) * (a - numeric);
          a2 += a * a;
          n2 += numeric * numeric;
          ++entries;
        }
        ++analytic_it;
      }
      const double denom = std::sqrt(a2) + std::sqrt(n2);
      GradientCheckRow row;
      row.term = term;
      row.group = kGroups[g];
      row.entries = entries;
      row.grad_norm = std::sqrt(a2);
      row.rel_error = denom < 1e-12 ? 0.0 : std::sqrt(diff2) / denom;
      rows_out.push_back(row);
    }
  }
  return rows_out;
}

std::vector<CheckResult> closed_form_oracles(double tol) {
  std::vector<CheckResult> out;
  const double e = std::numbers::e;

  // KL(N(μ, σ²) ‖ N(0, 1)) per dimension: ½(μ² + σ² − 1 − 2 ln σ).
  auto kl = [](double mu, double sigma) {
    return kl_to_standard_normal(LatentDist{Matrix::Constant(1, 1, mu), Matrix::Constant(1, 1, sigma)},
                                 {1.0});
  };
  out.push_back(near("kl mu=0 sigma=1", kl(0.0, 1.0), 0.0, tol));
  out.push_back(near("kl mu=1 sigma=1", kl(1.0, 1.0), 0.5 * (1.0 + 1.0 - 1.0 - 0.0), tol));
  out.push_back(near("kl mu=0 sigma=e", kl(0.0, e), 0.5 * (e * e - 1.0 - 2.0), tol));

  // Next-item NLL: slot 0 predicts item 1 with logits (0, 1, 0) over the
  // vocabulary, i.e. target logit 1 and two competitors at 0.
  {
    const SequenceBatch batch = make_batch({{1, 1}}, 2);
    Matrix logits = Matrix::Zero(2, 3);
    logits(0, 1) = 1.0;
    out.push_back(near("next-item nll logits (1,0,0)", next_item_nll(logits, batch),
                       -std::log(e / (e + 2.0)), tol));
  }

  // JSD bound with the zero critic: −sp(0) − sp(0) = −2 ln 2.
  {
    Discriminator zero{};
    zero.tensors.add("w", Matrix::Zero(2, 2));
    zero.tensors.add("bias", Matrix::Zero(1, 1));
    Matrix a(2, 2);
    a << 1.0, -2.0, 0.5, 3.0;
    const double v = jsd_similarity(a, Matrix(a.reverse()), Matrix(a * 2.0), zero);
    out.push_back(near("jsd zero critic", v, -2.0 * std::log(2.0), tol));

    // Identical first arguments: mean(−sp(−t) − sp(t)) with t = T(a, g).
    Discriminator d{};
    Matrix w(2, 2);
    w << 0.3, -0.7, 1.1, 0.2;
    d.tensors.add("w", w);
    d.tensors.add("bias", Matrix::Constant(1, 1, 0.1));
    const Matrix g = Matrix(a.reverse());
    double expected = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      const double t = a.row(i).dot(w * g.row(i).transpose()) + 0.1;
      expected += -std::abs(t) - 2.0 * softplus(-std::abs(t));
    }
    expected /= static_cast<double>(a.rows());
    const double got = jsd_similarity(a, g, a, d);
    out.push_back(near("jsd shared=negative identity", got, expected, tol));
    out.push_back({"jsd shared=negative bound", got <= -2.0 * std::log(2.0) + tol,
                   fmt::format("{:.9f} <= {:.9f}", got, -2.0 * std::log(2.0))});
  }

  // InfoNCE, N=2, τ=1, anchor = positive, negatives orthogonal.
  {
    Matrix anchors(2, 2);
    anchors << 1.0, 0.0, 0.0, 1.0;
    const double v = infonce_loss(ContrastiveBatch{anchors, anchors}, 1.0);
    out.push_back(near("infonce orthogonal pair", v, -std::log(e / (e + 2.0)), tol));
    Matrix single(1, 2);
    single << 0.3, -1.2;
    out.push_back(near("infonce single pair", infonce_loss(ContrastiveBatch{single, single * 2.0}, 0.5),
                       0.0, tol));
  }

  // Ranking metrics.
  {
    const int r1[] = {1};
    const auto m1 = compute_metrics(r1, 10);
    out.push_back(near("metrics rank 1 ndcg", m1.ndcg_at_k, 1.0, tol));
    const int r3[] = {3};
    out.push_back(near("metrics rank 3 ndcg", compute_metrics(r3, 10).ndcg_at_k,
                       1.0 / std::log2(4.0), tol));
    const int r11[] = {11};
    const auto m11 = compute_metrics(r11, 10);
    out.push_back(near("metrics rank 11 mrr", m11.mrr, 1.0 / 11.0, tol));
    out.push_back(near("metrics rank 11 hr", m11.hr_at_k, 0.0, tol));
  }

  // Aggregation: sizes 100 and 300 with parameters 0 and 4.
  {
    const std::vector<UpMessage> ups{scalar_up("a", 100, 0.0, 0.0), scalar_up("b", 300, 4.0, 4.0)};
    out.push_back(near("aggregate params 1:3", aggregate_params(ups).at("w")(0, 0),
                       (100.0 * 0.0 + 300.0 * 4.0) / 400.0, tol));
    out.push_back(near("aggregate reps 1:3", aggregate_representations(ups).at("u1")(0, 0),
                       (100.0 * 0.0 + 300.0 * 4.0) / 400.0, tol));
  }

  // Item graph of the single sequence (a, b, c): row a = {a: ½, b: ½}.
  {
    DomainDataset d;
    d.domain_name = "graph";
    d.vocab_size = 4;
    d.train.emplace("u", UserSequence{"u", {1, 2, 3}, {}});
    const auto g = build_item_graph(d);
    out.push_back(near("graph row a self", g.weight(1, 1), 0.5, tol));
    out.push_back(near("graph row a->b", g.weight(1, 2), 0.5, tol));
  }

  // Two-item uniform graph, one layer: mean(H0, row average of H0).
  {
    DomainDataset d;
    d.domain_name = "pair";
    d.vocab_size = 3;
    d.train.emplace("u", UserSequence{"u", {1, 2}, {}});
    const auto g = build_item_graph(d);
    EncoderParams p = init_encoder_params(EncoderShape{3, 2, 2, 1, 0, 1, 0.0}, 1);
    Matrix h0(3, 2);
    h0 << 0.0, 0.0, 1.0, 2.0, 3.0, -4.0;
    p.tensors.at("gnn_base_emb") = h0;
    const Matrix h = propagate_graph(g, p);
    const double expected = 0.5 * (1.0 + 0.5 * (1.0 + 3.0));
    out.push_back(near("propagate 2-item uniform graph", h(1, 0), expected, tol));
  }

  // Chronological split of a length-10 history: 8 / 1 / 1.
  {
    const auto s = split_sizes(10);
    out.push_back({"split of 10 interactions", s.train == 8 && s.valid == 1 && s.test == 1,
                   fmt::format("{}/{}/{}", s.train, s.valid, s.test)});
  }
  return out;
}

CheckResult ranking_oracle(int trials, int max_vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int vocab = 3 + uniform_index(rng, max_vocab - 2);  // includes pad
    std::vector<double> scores(static_cast<std::size_t>(vocab));
    for (auto& s : scores) {
      // Coarse values make ties common.
      s = static_cast<double>(uniform_index(rng, 6));
    }
    const int target = 1 + uniform_index(rng, vocab - 1);
    std::vector<int> negatives;
    for (int i = 1; i < vocab; ++i) {
      if (i != target) negatives.push_back(i);
    }
    const int got = rank_of_target(scores, target, negatives);

    // Full sort of the candidate set, target placed after every equal score.
    std::vector<std::pair<double, int>> order;
    for (int i = 1; i < vocab; ++i) order.emplace_back(scores[static_cast<std::size_t>(i)], i == target ? 0 : 1);
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second > b.second;
    });
    int expected = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (order[i].second == 0) expected = static_cast<int>(i) + 1;
    }
    if (got != expected) {
      return {"ranking oracle", false,
              fmt::format("trial {}: rank {} vs full sort {}", trial, got, expected)};
    }
  }
  return {"ranking oracle", true, fmt::format("{} score vectors agree", trials)};
}

std::vector<CheckResult> protocol_checks() {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(11);
  auto random_up = [&](const std::string& id, std::size_t count) {
    UpMessage up;
    up.client_id = id;
    up.sample_count = count;
    up.shared_params.add("a", standard_normal_matrix(3, 2, rng));
    up.shared_params.add("b", standard_normal_matrix(1, 2, rng));
    up.rep_table.emplace("u1", standard_normal_matrix(4, 2, rng));
    if (count % 2 == 0) up.rep_table.emplace("u2", standard_normal_matrix(4, 2, rng));
    return up;
  };

  {
    const auto one = random_up("solo", 7);
    const bool ok = aggregate_params({one}) == one.shared_params &&
                    aggregate_representations({one}).at("u1") == one.rep_table.at("u1");
    out.push_back({"aggregation identity (K=1)", ok, "single client returned unchanged"});
  }
  {
    auto p = random_up("p", 5);
    auto m = p;
    m.client_id = "m";
    for (auto& [name, t] : m.shared_params) t = -t;
    for (auto& [user, r] : m.rep_table) r = -r;
    const auto agg = aggregate_params({p, m});
    const auto reps = aggregate_representations({p, m});
    bool ok = true;
    for (const auto& [name, t] : agg) ok = ok && t.cwiseAbs().maxCoeff() < 1e-12;
    for (const auto& [user, r] : reps) ok = ok && r.cwiseAbs().maxCoeff() < 1e-12;
    out.push_back({"aggregation symmetry (±p → 0)", ok, "equal weights cancel"});
  }
  {
    const std::vector<UpMessage> ups{scalar_up("a", 100, 0.0, 0.0), scalar_up("b", 300, 4.0, 4.0)};
    const double v = aggregate_params(ups).at("w")(0, 0);
    const double r = aggregate_representations(ups).at("u1")(0, 0);
    out.push_back({"aggregation weighted mean (1:3 → 3.0)",
                   std::abs(v - 3.0) < 1e-12 && std::abs(r - 3.0) < 1e-12,
                   fmt::format("params {:.12f}, reps {:.12f}", v, r)});
  }
  {
    std::vector<UpMessage> ups{random_up("c1", 10), random_up("c2", 31), random_up("c3", 4),
                               random_up("c4", 18)};
    const auto ref_p = aggregate_params(ups);
    const auto ref_r = aggregate_representations(ups);
    bool ok = true;
    std::vector<std::size_t> perm{0, 1, 2, 3};
    while (std::next_permutation(perm.begin(), perm.end())) {
      std::vector<UpMessage> shuffled;
      for (auto i : perm) shuffled.push_back(ups[i]);
      ok = ok && aggregate_params(shuffled) == ref_p && aggregate_representations(shuffled) == ref_r;
    }
    out.push_back({"aggregation permutation invariance", ok, "all 24 client orders bitwise equal"});
  }
  {
    // Privacy boundary: build real messages from a client with data and make
    // sure no serialized field carries integer item ids or sequences.
    ScenarioConfig sc;
    sc.num_domains = 1;
    sc.users = 12;
    sc.vocab_per_domain = 20;
    sc.shared_clusters = 2;
    sc.exclusive_clusters = 2;
    PreprocessOptions po;
    po.min_user_interactions = 0;
    po.min_item_interactions = 0;
    po.compact_vocab = false;
    const auto data = preprocess(generate_synthetic(sc).front(), po);
    TrainConfig cfg;
    cfg.model.dim = 4;
    cfg.model.heads = 2;
    cfg.batch_size = 4;
    cfg.local_epochs = 1;
    auto client = make_client(data, cfg, 1);
    DownMessage down;
    const UpMessage up = client_update(client, down, cfg);
    down.shared_params_global = up.shared_params;
    down.rep_table_global = up.rep_table;
    const nlohmann::json msgs[] = {to_json(up), to_json(down)};

    const std::set<std::string> allowed{"client_id",   "sample_count",     "shared_params",
                                        "rep_table",   "round",            "shared_params_global",
                                        "rep_table_global", "name",        "rows",
                                        "cols",        "data"};
    std::string problem;
    std::function<void(const nlohmann::json&, bool)> walk = [&](const nlohmann::json& j,
                                                               bool user_keys) {
      if (j.is_object()) {
        for (const auto& [k, v] : j.items()) {
          if (!user_keys && !allowed.count(k)) problem = "unexpected field '" + k + "'";
          const bool next_user_keys = (k == "rep_table" || k == "rep_table_global");
          walk(v, next_user_keys);
        }
      } else if (j.is_array()) {
        for (const auto& v : j) {
          if (v.is_number_integer() || v.is_number_unsigned()) {
            problem = "integer array present (possible item ids)";
          }
          walk(v, false);
        }
      }
    };
    for (const auto& m : msgs) walk(m, false);
    // Tensor payloads must be real-valued matrices, never the train sequences.
    for (const auto& [user, rep] : up.rep_table) {
      if (rep.cols() != cfg.model.dim) problem = "representation width differs from dim";
    }
    out.push_back({"privacy boundary of serialized messages", problem.empty(),
                   problem.empty() ? "only parameter tensors and representations" : problem});
  }
  return out;
}

CheckResult causality_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int T = 6;
  const int vocab = 15;
  const EncoderShape shape{vocab, T, 8, 2, 2, 2, 0.0};
  auto params = init_encoder_params(shape, seed);
  for (auto& [name, m] : params.tensors) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.1 * standard_normal(rng);
  }
  DomainDataset d;
  d.domain_name = "causal";
  d.vocab_size = vocab;
  std::vector<std::vector<int>> seqs;
  for (int b = 0; b < 4; ++b) {
    std::vector<int> s;
    const int len = T - b;
    for (int t = 0; t < len; ++t) s.push_back(1 + uniform_index(rng, vocab - 1));
    d.train.emplace("u" + std::to_string(b), UserSequence{"u" + std::to_string(b), s, {}});
    seqs.push_back(s);
  }
  const auto graph = build_item_graph(d);
  const auto base_batch = make_batch(seqs, T);
  const auto base = encode(base_batch, graph, params);

  for (int t = 0; t < T - 1; ++t) {
    SequenceBatch perturbed = base_batch;
    for (int b = 0; b < perturbed.batch; ++b) {
      for (int s = t + 1; s < T; ++s) {
        auto& item = perturbed.items[static_cast<std::size_t>(b * T + s)];
        if (item != kPadItem) item = 1 + (item % (vocab - 1));
      }
    }
    const auto out = encode(perturbed, graph, params);
    for (int b = 0; b < perturbed.batch; ++b) {
      for (int s = 0; s <= t; ++s) {
        const auto r = static_cast<Eigen::Index>(b * T + s);
        if (out.mu.row(r) != base.mu.row(r) || out.sigma.row(r) != base.sigma.row(r)) {
          return {"causal attention", false,
                  fmt::format("position {} of sequence {} changed when perturbing after {}", s, b, t)};
        }
      }
    }
  }
  return {"causal attention", true, "outputs up to t unchanged by perturbations after t"};
}

}  // namespace fedcsr

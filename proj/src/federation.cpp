#include "fedcsr/federation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fedcsr/checkpoint.hpp"
#include "fedcsr/cim.hpp"
#include "fedcsr/random.hpp"

namespace fedcsr {

namespace {

constexpr const char* kPredictorPrefix = "predictor/";

bool is_item_table(const std::string& name) {
  return name == "item_emb" || name == "gnn_base_emb";
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream in(state);
  in >> rng;
  if (!in) throw DataError("checkpoint: corrupt rng state");
}

void add_losses(LossBreakdown& acc, const LossBreakdown& x) {
  acc.kl_shared += x.kl_shared;
  acc.kl_exclusive += x.kl_exclusive;
  acc.joint_nll += x.joint_nll;
  acc.jsd += x.jsd;
  acc.exclusive_nll += x.exclusive_nll;
  acc.infonce += x.infonce;
  acc.alpha_term += x.alpha_term;
  acc.beta_term += x.beta_term;
  acc.gamma_term += x.gamma_term;
  acc.lambda_term += x.lambda_term;
  acc.total += x.total;
}

LossBreakdown mean_losses(const std::vector<StepReport>& steps) {
  LossBreakdown acc;
  for (const auto& s : steps) add_losses(acc, s.terms);
  if (steps.empty()) return acc;
  const double n = static_cast<double>(steps.size());
  for (double* v : {&acc.kl_shared, &acc.kl_exclusive, &acc.joint_nll, &acc.jsd,
                    &acc.exclusive_nll, &acc.infonce, &acc.alpha_term, &acc.beta_term,
                    &acc.gamma_term, &acc.lambda_term, &acc.total}) {
    *v /= n;
  }
  return acc;
}

nlohmann::json losses_json(const LossBreakdown& l) {
  return {{"kl_shared", l.kl_shared},         {"kl_exclusive", l.kl_exclusive},
          {"joint_nll", l.joint_nll},         {"jsd", l.jsd},
          {"exclusive_nll", l.exclusive_nll}, {"infonce", l.infonce},
          {"alpha_term", l.alpha_term},       {"beta_term", l.beta_term},
          {"gamma_term", l.gamma_term},       {"lambda_term", l.lambda_term},
          {"total", l.total}};
}

nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw ProtocolError("message: tensor payload does not match its shape");
  }
  Matrix m(rows, cols);
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

nlohmann::json tensors_json(const NamedTensors& t) {
  auto out = nlohmann::json::array();
  for (const auto& [name, m] : t) {
    auto entry = matrix_json(m);
    entry["name"] = name;
    out.push_back(std::move(entry));
  }
  return out;
}

NamedTensors tensors_from_json(const nlohmann::json& j) {
  NamedTensors t;
  for (const auto& entry : j) t.add(entry.at("name").get<std::string>(), matrix_from_json(entry));
  return t;
}

nlohmann::json reps_json(const RepTable& reps) {
  auto out = nlohmann::json::object();
  for (const auto& [user, m] : reps) out[user] = matrix_json(m);
  return out;
}

RepTable reps_from_json(const nlohmann::json& j) {
  RepTable reps;
  for (const auto& [user, m] : j.items()) reps.emplace(user, matrix_from_json(m));
  return reps;
}

/// Writes the global tensors into the client's local copies.
void apply_global(ClientState& client, const NamedTensors& global) {
  for (const auto& [name, value] : global) {
    Matrix* target = nullptr;
    if (name.rfind(kPredictorPrefix, 0) == 0) {
      const std::string leaf = name.substr(std::string(kPredictorPrefix).size());
      if (!client.predictor.tensors.contains(leaf)) {
        throw ProtocolError("down message: unknown predictor tensor " + leaf);
      }
      target = &client.predictor.tensors.at(leaf);
    } else {
      if (!client.shared_params.tensors.contains(name)) {
        throw ProtocolError("down message: unknown shared tensor " + name);
      }
      target = &client.shared_params.tensors.at(name);
    }
    if (target->rows() != value.rows() || target->cols() != value.cols()) {
      throw ProtocolError("down message: " + name + " is " + shape_string(value) +
                          ", client expects " + shape_string(*target));
    }
    *target = value;
  }
}

std::vector<std::size_t> order_by_client(const std::vector<UpMessage>& ups) {
  if (ups.empty()) throw ProtocolError("aggregation needs at least one up message");
  std::vector<std::size_t> order(ups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return ups[a].client_id < ups[b].client_id; });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (ups[order[i]].client_id == ups[order[i - 1]].client_id) {
      throw ProtocolError("duplicate client id " + ups[order[i]].client_id);
    }
  }
  return order;
}

std::vector<std::vector<int>> train_sequences(const ClientState& client,
                                              const std::vector<std::string>& users) {
  std::vector<std::vector<int>> seqs;
  seqs.reserve(users.size());
  for (const auto& u : users) seqs.push_back(client.domain.train.at(u).items);
  return seqs;
}

}  // namespace

void TrainConfig::validate() const {
  if (rounds < 1) throw ConfigError("train.rounds must be >= 1");
  if (local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
  if (patience < 1) throw ConfigError("train.patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (eval_k < 1) throw ConfigError("train.eval_k must be >= 1");
  if (negatives_per_eval < 1) throw ConfigError("train.negatives_per_eval must be >= 1");
  weights.validate();
  EncoderShape probe{1, model.seq_len, model.dim, model.gnn_layers, model.attn_layers,
                     model.heads, dropout};
  probe.validate();
}

ModelView ClientState::view() const {
  return {&shared_params, dual_branch ? &exclusive_params : nullptr, &predictor, &item_graph};
}

ClientState make_client(DomainDataset domain, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (domain.size() == 0) throw DataError("client " + domain.domain_name + " has no training data");
  ClientState c;
  c.client_id = domain.domain_name;
  c.item_graph = build_item_graph(domain);
  const EncoderShape shape{domain.vocab_size, cfg.model.seq_len,     cfg.model.dim,
                           cfg.model.gnn_layers, cfg.model.attn_layers, cfg.model.heads,
                           cfg.dropout};
  c.dual_branch = cfg.model.dual_branch;
  c.shared_params = init_encoder_params(shape, derive_seed(seed, {1}));
  if (c.dual_branch) c.exclusive_params = init_encoder_params(shape, derive_seed(seed, {2}));
  c.predictor = init_predictor(cfg.model.dim, derive_seed(seed, {3}));
  c.discriminator = init_discriminator(cfg.model.dim, derive_seed(seed, {4}));
  c.shared_opt = Adam(cfg.lr);
  c.exclusive_opt = Adam(cfg.lr);
  c.predictor_opt = Adam(cfg.lr);
  c.discriminator_opt = Adam(cfg.lr);
  c.batch_rng.seed(derive_seed(seed, {5}));
  c.noise_rng.seed(derive_seed(seed, {6}));
  c.dropout_rng.seed(derive_seed(seed, {7}));
  c.augment_rng.seed(derive_seed(seed, {8}));
  c.domain = std::move(domain);
  return c;
}

std::vector<std::string> shared_tensor_names(const ClientState& client, bool share_item_tables) {
  std::vector<std::string> names;
  for (const auto& [name, m] : client.shared_params.tensors) {
    if (share_item_tables || !is_item_table(name)) names.push_back(name);
  }
  if (!client.dual_branch) {
    for (const auto& [name, m] : client.predictor.tensors) names.push_back(kPredictorPrefix + name);
  }
  return names;
}

NamedTensors shared_payload(const ClientState& client, bool share_item_tables) {
  NamedTensors out;
  for (const auto& [name, m] : client.shared_params.tensors) {
    if (share_item_tables || !is_item_table(name)) out.add(name, m);
  }
  if (!client.dual_branch) out.merge(client.predictor.tensors, kPredictorPrefix);
  return out;
}

StepReport train_step(ClientState& client, const SequenceBatch& batch, const GlobalBatch* z_global,
                      const TrainConfig& cfg) {
  const auto& w = cfg.weights;
  const int d = cfg.model.dim;
  const auto rows = static_cast<Eigen::Index>(batch.items.size());
  StepReport report;
  auto& terms = report.terms;

  ad::Tape tape;
  const BoundEncoder shared(tape, client.shared_params);
  const auto theta_vars = ad::bind(tape, client.predictor.tensors);
  const BoundPredictor theta{theta_vars.at(0), theta_vars.at(1)};
  const TapeDist ds = encode(shared, batch, client.item_graph, true, &client.dropout_rng);
  const ad::Var zs = sample(ds, standard_normal_matrix(rows, d, client.noise_rng));
  ad::Var total;

  std::optional<BoundEncoder> exclusive;
  std::vector<ad::Var> disc_vars;
  if (client.dual_branch) {
    exclusive.emplace(tape, client.exclusive_params);
    disc_vars = ad::bind(tape, client.discriminator.tensors);
    const TapeDist de = encode(*exclusive, batch, client.item_graph, true, &client.dropout_rng);
    const ad::Var ze = sample(de, standard_normal_matrix(rows, d, client.noise_rng));

    DisentanglementInputs in;
    in.shared = ds;
    in.exclusive = de;
    in.z_shared = zs;
    in.z_exclusive = ze;
    in.batch = &batch;
    in.theta = theta;
    in.disc = {disc_vars.at(0), disc_vars.at(1)};
    in.item_table = exclusive->get("item_emb");
    in.literal_recon_on_shared = cfg.model.recon_on_shared;
    if (z_global != nullptr && !z_global->rows.empty()) {
      in.z_global_user = tape.constant(z_global->users);
      in.global_rows = z_global->rows;
    }
    auto loss = disentanglement_loss(in, w);
    terms = loss.terms;
    total = loss.total;

    if (w.lambda > 0) {
      const SequenceBatch aug = augment_shuffle(batch, client.augment_rng);
      const TapeDist da = encode(*exclusive, aug, client.item_graph, true, &client.dropout_rng);
      const ad::Var za = sample(da, standard_normal_matrix(rows, d, client.noise_rng));
      const auto last = batch.last_rows();
      const ad::Var info = infonce_loss(ad::gather_rows(ze, last), ad::gather_rows(za, last),
                                        w.tau, &report.zero_norm_rows);
      const ad::Var weighted = ad::scale(info, w.lambda);
      terms.infonce = info.scalar();
      terms.lambda_term = weighted.scalar();
      total = total + weighted;
    }
  } else {
    // Single branch: the per-branch terms that need no shared/exclusive split.
    total = tape.constant(Matrix::Zero(1, 1));
    const ad::Var item_table = shared.get("item_emb");
    if (w.alpha > 0) {
      const ad::Var kl = kl_to_standard_normal(ds, real_position_weights(batch));
      const ad::Var nll = reconstruction_nll(zs, batch, theta, item_table);
      terms.kl_shared = kl.scalar();
      terms.joint_nll = nll.scalar();
      const ad::Var weighted = ad::scale(kl + nll, w.alpha);
      terms.alpha_term = weighted.scalar();
      total = total + weighted;
    }
    if (w.gamma > 0) {
      const ad::Var nll = reconstruction_nll(zs, batch, theta, item_table);
      const ad::Var weighted = ad::scale(nll, w.gamma);
      terms.exclusive_nll = nll.scalar();
      terms.gamma_term = weighted.scalar();
      total = total + weighted;
    }
    if (w.lambda > 0) {
      const SequenceBatch aug = augment_shuffle(batch, client.augment_rng);
      const TapeDist da = encode(shared, aug, client.item_graph, true, &client.dropout_rng);
      const ad::Var za = sample(da, standard_normal_matrix(rows, d, client.noise_rng));
      const auto last = batch.last_rows();
      const ad::Var info = infonce_loss(ad::gather_rows(zs, last), ad::gather_rows(za, last),
                                        w.tau, &report.zero_norm_rows);
      const ad::Var weighted = ad::scale(info, w.lambda);
      terms.infonce = info.scalar();
      terms.lambda_term = weighted.scalar();
      total = total + weighted;
    }
  }
  terms.total = total.scalar();
  if (!std::isfinite(terms.total)) {
    throw TrainingAborted(fmt::format(
        "client {}: non-finite loss (kl_s={}, kl_e={}, joint={}, jsd={}, excl={}, infonce={})",
        client.client_id, terms.kl_shared, terms.kl_exclusive, terms.joint_nll, terms.jsd,
        terms.exclusive_nll, terms.infonce));
  }

  tape.backward(total);
  client.shared_opt.step(client.shared_params.tensors, shared.gradients());
  client.predictor_opt.step(client.predictor.tensors,
                            ad::gradients(tape, client.predictor.tensors, theta_vars));
  if (client.dual_branch) {
    client.exclusive_opt.step(client.exclusive_params.tensors, exclusive->gradients());
    client.discriminator_opt.step(client.discriminator.tensors,
                                  ad::gradients(tape, client.discriminator.tensors, disc_vars));
  }
  return report;
}

std::vector<StepReport> train_local_epoch(ClientState& client, const RepTable& z_global,
                                          const TrainConfig& cfg) {
  auto users = client.domain.users();
  for (int i = static_cast<int>(users.size()) - 1; i > 0; --i) {
    std::swap(users[static_cast<std::size_t>(i)],
              users[static_cast<std::size_t>(uniform_index(client.batch_rng, i + 1))]);
  }
  const bool use_global = cfg.weights.beta > 0 && !z_global.empty();
  std::vector<StepReport> reports;
  for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(users.size(), start + static_cast<std::size_t>(cfg.batch_size));
    std::vector<std::string> ids(users.begin() + static_cast<std::ptrdiff_t>(start),
                                 users.begin() + static_cast<std::ptrdiff_t>(end));
    const SequenceBatch batch = make_batch(train_sequences(client, ids), cfg.model.seq_len, ids);

    GlobalBatch global;
    if (use_global) {
      std::vector<const Matrix*> found;
      for (std::size_t b = 0; b < ids.size(); ++b) {
        const auto it = z_global.find(ids[b]);
        if (it == z_global.end()) continue;
        global.rows.push_back(static_cast<int>(b));
        found.push_back(&it->second);
      }
      global.users.resize(static_cast<Eigen::Index>(found.size()), cfg.model.dim);
      for (std::size_t i = 0; i < found.size(); ++i) {
        const Matrix& rep = *found[i];
        if (rep.cols() != cfg.model.dim || rep.rows() < 1) {
          throw ProtocolError("global representation of " + ids[static_cast<std::size_t>(global.rows[i])] +
                              " has shape " + shape_string(rep));
        }
        global.users.row(static_cast<Eigen::Index>(i)) = rep.row(rep.rows() - 1);
      }
    }
    reports.push_back(train_step(client, batch, use_global ? &global : nullptr, cfg));
  }
  return reports;
}

std::vector<double> train_standalone(ClientState& client, const TrainConfig& cfg, int epochs) {
  std::vector<double> losses;
  const RepTable none;
  for (int e = 0; e < epochs; ++e) {
    for (const auto& r : train_local_epoch(client, none, cfg)) losses.push_back(r.terms.total);
  }
  return losses;
}

RepTable shared_representations(const ClientState& client, int batch_size) {
  const auto users = client.domain.users();
  const int seq_len = client.shared_params.shape.seq_len;
  RepTable reps;
  for (std::size_t start = 0; start < users.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(users.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::string> ids(users.begin() + static_cast<std::ptrdiff_t>(start),
                                 users.begin() + static_cast<std::ptrdiff_t>(end));
    const auto batch = make_batch(train_sequences(client, ids), seq_len, ids);
    const auto dist = encode(batch, client.item_graph, client.shared_params, false, nullptr);
    for (std::size_t b = 0; b < ids.size(); ++b) {
      reps.emplace(ids[b], dist.mu.middleRows(static_cast<Eigen::Index>(b) * seq_len, seq_len));
    }
  }
  return reps;
}

UpMessage client_update(ClientState& client, const DownMessage& down, const TrainConfig& cfg,
                        ClientRoundLog* log, bool share_item_tables) {
  if (cfg.local_epochs < 1) throw ConfigError("train.local_epochs must be >= 1");
  apply_global(client, down.shared_params_global);
  const RepTable& z_global = cfg.aggregate ? down.rep_table_global : client.own_reps;
  for (int e = 0; e < cfg.local_epochs; ++e) {
    auto steps = train_local_epoch(client, z_global, cfg);
    if (log != nullptr) log->steps.insert(log->steps.end(), steps.begin(), steps.end());
  }
  UpMessage up;
  up.client_id = client.client_id;
  up.shared_params = shared_payload(client, share_item_tables);
  up.sample_count = client.domain.size();
  if (client.dual_branch) {
    up.rep_table = shared_representations(client, cfg.batch_size);
    client.own_reps = up.rep_table;
  }
  return up;
}

NamedTensors aggregate_params(const std::vector<UpMessage>& ups) {
  const auto order = order_by_client(ups);
  const auto& ref = ups[order.front()].shared_params;
  double total = 0.0;
  for (std::size_t i : order) {
    if (!ups[i].shared_params.same_layout(ref)) {
      throw ProtocolError("client " + ups[i].client_id + " sent parameters with a different layout");
    }
    total += static_cast<double>(ups[i].sample_count);
  }
  if (!(total > 0.0)) throw ProtocolError("aggregation: total sample count is zero");

  // p_ref + Σ w_k (p_k − p_ref): exact for one client or identical inputs.
  NamedTensors out = ref;
  for (std::size_t pos = 1; pos < order.size(); ++pos) {
    const auto& up = ups[order[pos]];
    const double w = static_cast<double>(up.sample_count) / total;
    auto o = out.begin();
    auto r = ref.begin();
    for (const auto& [name, p] : up.shared_params) {
      o->second += w * (p - r->second);
      ++o;
      ++r;
    }
  }
  return out;
}

RepTable aggregate_representations(const std::vector<UpMessage>& ups) {
  const auto order = order_by_client(ups);
  std::map<std::string, std::vector<std::size_t>> reporters;
  for (std::size_t i : order) {
    for (const auto& [user, rep] : ups[i].rep_table) reporters[user].push_back(i);
  }
  RepTable out;
  for (const auto& [user, who] : reporters) {
    const Matrix& ref = ups[who.front()].rep_table.at(user);
    double total = 0.0;
    for (std::size_t i : who) {
      const Matrix& r = ups[i].rep_table.at(user);
      if (r.rows() != ref.rows() || r.cols() != ref.cols()) {
        throw ProtocolError("representation of " + user + " from " + ups[i].client_id + " is " +
                            shape_string(r) + ", expected " + shape_string(ref));
      }
      total += static_cast<double>(ups[i].sample_count);
    }
    if (!(total > 0.0)) throw ProtocolError("aggregation: zero weight for user " + user);
    Matrix acc = ref;
    for (std::size_t pos = 1; pos < who.size(); ++pos) {
      const auto& up = ups[who[pos]];
      acc += (static_cast<double>(up.sample_count) / total) * (up.rep_table.at(user) - ref);
    }
    out.emplace(user, std::move(acc));
  }
  return out;
}

nlohmann::json to_json(const UpMessage& m) {
  return {{"client_id", m.client_id},
          {"sample_count", m.sample_count},
          {"shared_params", tensors_json(m.shared_params)},
          {"rep_table", reps_json(m.rep_table)}};
}

nlohmann::json to_json(const DownMessage& m) {
  return {{"round", m.round},
          {"shared_params_global", tensors_json(m.shared_params_global)},
          {"rep_table_global", reps_json(m.rep_table_global)}};
}

UpMessage up_message_from_json(const nlohmann::json& j) {
  UpMessage m;
  m.client_id = j.at("client_id").get<std::string>();
  m.sample_count = j.at("sample_count").get<std::size_t>();
  m.shared_params = tensors_from_json(j.at("shared_params"));
  m.rep_table = reps_from_json(j.at("rep_table"));
  return m;
}

DownMessage down_message_from_json(const nlohmann::json& j) {
  DownMessage m;
  m.round = j.at("round").get<int>();
  m.shared_params_global = tensors_from_json(j.at("shared_params_global"));
  m.rep_table_global = reps_from_json(j.at("rep_table_global"));
  return m;
}

nlohmann::json to_json(const HistoryRecord& r) {
  auto valid = nlohmann::json::object();
  for (const auto& [mode, m] : r.valid) valid[to_string(mode)] = to_json(m);
  return {{"round", r.round},
          {"client_id", r.client_id},
          {"domain", r.domain},
          {"steps", r.steps},
          {"losses", losses_json(r.mean_losses)},
          {"valid", valid},
          {"avg_valid_mrr", r.avg_valid_mrr}};
}

ClientSnapshot snapshot(const ClientState& client) {
  return {client.shared_params, client.exclusive_params, client.predictor};
}

std::map<FusionMode, EvalResult> evaluate_clients(const std::vector<ClientState>& clients,
                                                  const std::vector<ClientSnapshot>& snapshots,
                                                  const TrainConfig& cfg, Split split) {
  if (snapshots.size() != clients.size()) {
    throw std::invalid_argument("evaluate_clients: one snapshot per client required");
  }
  const EvalOptions opts{cfg.eval_k, cfg.negatives_per_eval,
                         derive_seed(cfg.seed, {split == Split::valid ? 0x7A11Du : 0x7E57u}),
                         cfg.batch_size};
  std::map<FusionMode, EvalResult> out;
  for (FusionMode mode : kAllFusionModes) {
    out[mode].fusion_mode = mode;
    out[mode].k = cfg.eval_k;
  }
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    const auto& s = snapshots[i];
    const ModelView view{&s.shared_params, c.dual_branch ? &s.exclusive_params : nullptr,
                         &s.predictor, &c.item_graph};
    const auto metrics = evaluate_domain(view, c.domain, split, opts, kAllFusionModes);
    for (const auto& [mode, m] : metrics) out[mode].per_domain[c.domain.domain_name] = m;
  }
  for (auto& [mode, r] : out) r.average = average_metrics(r.per_domain);
  return out;
}

FederatedResult run_federated(std::vector<ClientState>& clients, const TrainConfig& cfg,
                              const RunHooks& hooks) {
  cfg.validate();
  if (clients.empty()) throw ConfigError("run_federated: no clients");
  {
    std::set<std::string> ids;
    for (const auto& c : clients) {
      if (!ids.insert(c.client_id).second) throw ConfigError("duplicate client id " + c.client_id);
      if (c.dual_branch != cfg.model.dual_branch) {
        throw ConfigError("client " + c.client_id + " branch layout differs from the config");
      }
    }
  }
  bool share_item_tables = true;
  for (const auto& c : clients) {
    share_item_tables = share_item_tables && c.domain.vocab_size == clients.front().domain.vocab_size;
  }
  if (!share_item_tables && cfg.aggregate) {
    spdlog::info("domain vocabularies differ; item embedding tables stay local");
  }

  FederatedResult result;
  result.step_losses.resize(clients.size());
  GlobalState& global = result.global;
  if (cfg.aggregate) {
    const auto first = std::min_element(clients.begin(), clients.end(),
                                        [](const ClientState& a, const ClientState& b) {
                                          return a.client_id < b.client_id;
                                        });
    global.shared_params_global = shared_payload(*first, share_item_tables);
  }

  double best = -std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int round = 0; round < cfg.rounds; ++round) {
    DownMessage down;
    if (cfg.aggregate) {
      down.shared_params_global = global.shared_params_global;
      down.rep_table_global = global.rep_table_global;
    }
    down.round = round;

    std::vector<UpMessage> ups;
    std::vector<ClientRoundLog> logs(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
      try {
        ups.push_back(client_update(clients[i], down, cfg, &logs[i], share_item_tables));
      } catch (const TrainingAborted& e) {
        throw TrainingAborted(fmt::format("round {}, client {}: {}", round, clients[i].client_id,
                                          e.what()));
      }
      for (const auto& s : logs[i].steps) result.step_losses[i].push_back(s.terms.total);
    }
    if (cfg.aggregate) {
      result.messages_exchanged += 2 * clients.size();
      global.shared_params_global = aggregate_params(ups);
      global.rep_table_global = aggregate_representations(ups);
    }
    global.round = round + 1;

    std::vector<ClientSnapshot> current;
    current.reserve(clients.size());
    for (const auto& c : clients) current.push_back(snapshot(c));
    auto valid = evaluate_clients(clients, current, cfg, Split::valid);
    const double avg = valid.at(FusionMode::both).average.mrr;
    result.avg_valid_mrr.push_back(avg);

    for (std::size_t i = 0; i < clients.size(); ++i) {
      HistoryRecord rec;
      rec.round = round;
      rec.client_id = clients[i].client_id;
      rec.domain = clients[i].domain.domain_name;
      rec.steps = static_cast<int>(logs[i].steps.size());
      rec.mean_losses = mean_losses(logs[i].steps);
      for (const auto& [mode, r] : valid) rec.valid[mode] = r.per_domain.at(rec.domain);
      rec.avg_valid_mrr = avg;
      result.history.push_back(std::move(rec));
    }
    result.valid_results.push_back(std::move(valid));
    result.rounds_run = round + 1;
    spdlog::debug("round {}: avg valid MRR {:.4f}", round, avg);
    if (hooks.on_round_end) hooks.on_round_end(global, clients);

    if (avg > best) {
      best = avg;
      result.best_round = round;
      result.best = std::move(current);
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

// ------------------------------------------------------------- checkpoints

void save_client_checkpoint(const ClientState& client, const std::filesystem::path& file,
                            int round) {
  NamedTensors t;
  t.merge(client.shared_params.tensors, "shared/");
  t.merge(client.exclusive_params.tensors, "exclusive/");
  t.merge(client.predictor.tensors, "predictor/");
  t.merge(client.discriminator.tensors, "disc/");
  const std::pair<const char*, const Adam*> opts[] = {{"shared", &client.shared_opt},
                                                      {"exclusive", &client.exclusive_opt},
                                                      {"predictor", &client.predictor_opt},
                                                      {"disc", &client.discriminator_opt}};
  nlohmann::json steps = nlohmann::json::object();
  for (const auto& [name, opt] : opts) {
    t.merge(opt->first_moment(), std::string("adam_m/") + name + "/");
    t.merge(opt->second_moment(), std::string("adam_v/") + name + "/");
    steps[name] = opt->steps();
  }
  for (const auto& [user, rep] : client.own_reps) t.add("own_reps/" + user, rep);
  const nlohmann::json meta{
      {"kind", "client"},
      {"client_id", client.client_id},
      {"domain", client.domain.domain_name},
      {"round", round},
      {"dual_branch", client.dual_branch},
      {"adam_steps", steps},
      {"rng", {{"batch", rng_state(client.batch_rng)},
               {"noise", rng_state(client.noise_rng)},
               {"dropout", rng_state(client.dropout_rng)},
               {"augment", rng_state(client.augment_rng)}}}};
  save_tensors(t, file, meta);
}

void load_client_checkpoint(ClientState& client, const std::filesystem::path& file) {
  nlohmann::json meta;
  const NamedTensors t = load_tensors(file, &meta);
  if (meta.value("kind", "") != "client" || meta.at("client_id") != client.client_id) {
    throw DataError("checkpoint " + file.string() + " does not belong to client " +
                    client.client_id);
  }
  auto restore = [&](NamedTensors& target, const std::string& prefix) {
    NamedTensors loaded = t.with_prefix_stripped(prefix);
    target.require_same_layout(loaded, "checkpoint " + prefix);
    target = std::move(loaded);
  };
  restore(client.shared_params.tensors, "shared/");
  restore(client.exclusive_params.tensors, "exclusive/");
  restore(client.predictor.tensors, "predictor/");
  restore(client.discriminator.tensors, "disc/");
  const std::pair<const char*, Adam*> opts[] = {{"shared", &client.shared_opt},
                                                {"exclusive", &client.exclusive_opt},
                                                {"predictor", &client.predictor_opt},
                                                {"disc", &client.discriminator_opt}};
  for (const auto& [name, opt] : opts) {
    opt->restore(t.with_prefix_stripped(std::string("adam_m/") + name + "/"),
                 t.with_prefix_stripped(std::string("adam_v/") + name + "/"),
                 meta.at("adam_steps").at(name).get<std::int64_t>());
  }
  client.own_reps.clear();
  for (const auto& [user, rep] : t.with_prefix_stripped("own_reps/")) client.own_reps.emplace(user, rep);
  const auto& rng = meta.at("rng");
  restore_rng(client.batch_rng, rng.at("batch").get<std::string>());
  restore_rng(client.noise_rng, rng.at("noise").get<std::string>());
  restore_rng(client.dropout_rng, rng.at("dropout").get<std::string>());
  restore_rng(client.augment_rng, rng.at("augment").get<std::string>());
}

void save_global_checkpoint(const GlobalState& state, const std::filesystem::path& file) {
  NamedTensors t;
  t.merge(state.shared_params_global, "params/");
  for (const auto& [user, rep] : state.rep_table_global) t.add("reps/" + user, rep);
  save_tensors(t, file, {{"kind", "global"}, {"round", state.round}});
}

GlobalState load_global_checkpoint(const std::filesystem::path& file) {
  nlohmann::json meta;
  const NamedTensors t = load_tensors(file, &meta);
  if (meta.value("kind", "") != "global") {
    throw DataError("checkpoint " + file.string() + " is not a global state");
  }
  GlobalState s;
  s.round = meta.at("round").get<int>();
  s.shared_params_global = t.with_prefix_stripped("params/");
  for (const auto& [user, rep] : t.with_prefix_stripped("reps/")) s.rep_table_global.emplace(user, rep);
  return s;
}

}  // namespace fedcsr

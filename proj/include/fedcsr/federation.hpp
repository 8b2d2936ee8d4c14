#pragma once

// Federated training: per-domain clients run local epochs on their private
// sequences and exchange only the shared encoder branch plus per-user shared
// representations with the server, which averages them weighted by |D_k|.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedcsr/dataset.hpp"
#include "fedcsr/encoder.hpp"
#include "fedcsr/evaluation.hpp"
#include "fedcsr/optimizer.hpp"
#include "fedcsr/srd.hpp"

namespace fedcsr {

/// user_id → T×d representation matrix.
using RepTable = std::map<std::string, Matrix>;

struct ModelConfig {
  int dim = 32;
  int seq_len = 16;
  int gnn_layers = 2;
  int attn_layers = 2;
  int heads = 2;
  /// false: one encoder branch whose parameters (and the predictor) are all
  /// federated, trained with the plain ELBO.
  bool dual_branch = true;
  /// Exclusive reconstruction on Zs (literal reading) instead of Ze.
  bool recon_on_shared = false;

  bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
  int rounds = 40;
  int local_epochs = 3;
  int patience = 5;
  int batch_size = 256;
  double lr = 0.001;
  double dropout = 0.3;
  LossWeights weights;
  int eval_k = 10;
  int negatives_per_eval = 999;
  std::uint64_t seed = 0;
  ModelConfig model;
  /// false: clients never exchange messages (purely local training).
  bool aggregate = true;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct UpMessage {
  std::string client_id;
  NamedTensors shared_params;
  RepTable rep_table;
  std::size_t sample_count = 0;
};

struct DownMessage {
  NamedTensors shared_params_global;
  RepTable rep_table_global;
  int round = 0;
};

struct GlobalState {
  NamedTensors shared_params_global;
  RepTable rep_table_global;
  int round = 0;
};

struct ClientState {
  std::string client_id;
  DomainDataset domain;
  ItemGraph item_graph;
  EncoderParams shared_params;
  EncoderParams exclusive_params;  // unused for single-branch models
  PredictorParams predictor;
  Discriminator discriminator;
  Adam shared_opt;
  Adam exclusive_opt;
  Adam predictor_opt;
  Adam discriminator_opt;
  std::mt19937_64 batch_rng;
  std::mt19937_64 noise_rng;
  std::mt19937_64 dropout_rng;
  std::mt19937_64 augment_rng;
  /// Own shared representations from the previous round (local-only runs).
  RepTable own_reps;
  bool dual_branch = true;

  [[nodiscard]] ModelView view() const;
};

/// Builds a client with freshly initialized local parameters.
ClientState make_client(DomainDataset domain, const TrainConfig& cfg, std::uint64_t seed);

/// Names of the tensors a client sends upstream (shared encoder, plus the
/// predictor for single-branch models). Item-indexed tables are included only
/// when `share_item_tables` is set.
std::vector<std::string> shared_tensor_names(const ClientState& client, bool share_item_tables);
NamedTensors shared_payload(const ClientState& client, bool share_item_tables);

struct StepReport {
  LossBreakdown terms;
  int zero_norm_rows = 0;
};

/// User-level global representations for the batch rows whose user has one.
struct GlobalBatch {
  Matrix users;           // rows.size() × d
  std::vector<int> rows;  // batch row of each entry
};

/// One optimization step on `batch`. `z_global` may be null, in which case
/// the similarity term is skipped.
StepReport train_step(ClientState& client, const SequenceBatch& batch, const GlobalBatch* z_global,
                      const TrainConfig& cfg);

/// Runs one local epoch over the client's training sequences.
std::vector<StepReport> train_local_epoch(ClientState& client, const RepTable& z_global,
                                          const TrainConfig& cfg);

/// Local training with no server: `epochs` epochs against an empty global
/// table. Returns the total loss of every step.
std::vector<double> train_standalone(ClientState& client, const TrainConfig& cfg, int epochs);

/// Posterior means of the shared branch for every training sequence.
RepTable shared_representations(const ClientState& client, int batch_size = 256);

struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ClientRoundLog {
  std::vector<StepReport> steps;
};

UpMessage client_update(ClientState& client, const DownMessage& down, const TrainConfig& cfg,
                        ClientRoundLog* log = nullptr, bool share_item_tables = true);

/// Σ_k |D_k|/|D| · params_k, with ups ordered by client id before summing.
NamedTensors aggregate_params(const std::vector<UpMessage>& ups);

/// Per user, the |D_k|-weighted mean over the clients that reported it.
RepTable aggregate_representations(const std::vector<UpMessage>& ups);

nlohmann::json to_json(const UpMessage& m);
nlohmann::json to_json(const DownMessage& m);
UpMessage up_message_from_json(const nlohmann::json& j);
DownMessage down_message_from_json(const nlohmann::json& j);

struct HistoryRecord {
  int round = 0;
  std::string client_id;
  std::string domain;
  int steps = 0;
  LossBreakdown mean_losses;
  std::map<FusionMode, RankingMetrics> valid;
  double avg_valid_mrr = 0.0;
};

nlohmann::json to_json(const HistoryRecord& r);

struct ClientSnapshot {
  EncoderParams shared_params;
  EncoderParams exclusive_params;
  PredictorParams predictor;
};

struct FederatedResult {
  GlobalState global;
  std::vector<HistoryRecord> history;
  /// Mean validation MRR (fusion "both") across domains after each round.
  std::vector<double> avg_valid_mrr;
  /// Validation results per round, per fusion mode.
  std::vector<std::map<FusionMode, EvalResult>> valid_results;
  int best_round = 0;
  int rounds_run = 0;
  std::vector<ClientSnapshot> best;
  /// Total loss of every optimization step, per client.
  std::vector<std::vector<double>> step_losses;
  std::size_t messages_exchanged = 0;
};

struct RunHooks {
  std::function<void(const GlobalState&, const std::vector<ClientState>&)> on_round_end;
};

FederatedResult run_federated(std::vector<ClientState>& clients, const TrainConfig& cfg,
                              const RunHooks& hooks = {});

/// Test-split metrics for each fusion mode using the given snapshots.
std::map<FusionMode, EvalResult> evaluate_clients(const std::vector<ClientState>& clients,
                                                  const std::vector<ClientSnapshot>& snapshots,
                                                  const TrainConfig& cfg, Split split);

ClientSnapshot snapshot(const ClientState& client);

void save_client_checkpoint(const ClientState& client, const std::filesystem::path& file,
                            int round);
/// Restores parameters, optimizer state and rng streams into `client`.
void load_client_checkpoint(ClientState& client, const std::filesystem::path& file);
void save_global_checkpoint(const GlobalState& state, const std::filesystem::path& file);
GlobalState load_global_checkpoint(const std::filesystem::path& file);

}  // namespace fedcsr

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedcsr/checkpoint.hpp"
#include "fedcsr/federation.hpp"

using namespace fedcsr;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.rounds = 2;
  cfg.local_epochs = 1;
  cfg.patience = 5;
  cfg.batch_size = 16;
  cfg.negatives_per_eval = 20;
  cfg.seed = 11;
  cfg.model.dim = 8;
  cfg.model.seq_len = 16;
  cfg.model.gnn_layers = 1;
  cfg.model.attn_layers = 1;
  cfg.model.heads = 2;
  return cfg;
}

std::vector<DomainDataset> tiny_domains(int domains = 2) {
  ScenarioConfig sc;
  sc.num_domains = domains;
  sc.users = 24;
  sc.vocab_per_domain = 30;
  sc.shared_factors = 4;
  sc.exclusive_factors = 4;
  sc.shared_clusters = 3;
  sc.exclusive_clusters = 3;
  return generate_synthetic(sc);
}

std::vector<ClientState> make_clients(const std::vector<DomainDataset>& domains,
                                      const TrainConfig& cfg) {
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    clients.push_back(make_client(domains[i], cfg, 100 + i));
  }
  return clients;
}

UpMessage up(const std::string& id, std::size_t n, double p, const std::string& user, double r) {
  UpMessage m;
  m.client_id = id;
  m.sample_count = n;
  m.shared_params.add("w", Matrix::Constant(2, 2, p));
  m.rep_table.emplace(user, Matrix::Constant(1, 2, r));
  return m;
}

std::string history_text(const FederatedResult& r) {
  std::ostringstream os;
  for (const auto& h : r.history) os << to_json(h).dump() << '\n';
  return os.str();
}

}  // namespace

TEST_CASE("aggregation: identity, symmetry and weighted mean") {
  const auto single = up("a", 7, 1.5, "u", 2.0);
  CHECK(aggregate_params({single}).at("w") == single.shared_params.at("w"));
  CHECK(aggregate_params({up("a", 5, 2.0, "u", 0), up("b", 5, -2.0, "u", 0)}).at("w").isZero(0.0));
  CHECK(aggregate_params({up("a", 100, 0.0, "u", 0), up("b", 300, 4.0, "u", 0)}).at("w")(0, 0) ==
        doctest::Approx(3.0).epsilon(1e-12));
  const auto reps = aggregate_representations({up("a", 1, 0, "u", 0.0), up("b", 3, 0, "u", 4.0)});
  CHECK(reps.at("u")(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
  const auto sym = aggregate_representations({up("a", 2, 0, "u", 1.0), up("b", 2, 0, "u", -1.0)});
  CHECK(sym.at("u").isZero(0.0));
}

TEST_CASE("a user reported by one domain keeps that domain's representation") {
  const auto reps = aggregate_representations({up("a", 1, 0, "only_a", 0.25), up("b", 9, 0, "u", 1.0)});
  CHECK(reps.at("only_a")(0, 0) == 0.25);
}

TEST_CASE("aggregation ignores client order and rejects shape mismatches") {
  std::vector<UpMessage> ups{up("c", 3, 1.0, "u", 1.0), up("a", 5, -0.3, "u", 2.0),
                             up("b", 11, 0.7, "v", -1.0)};
  const auto p = aggregate_params(ups);
  const auto r = aggregate_representations(ups);
  std::reverse(ups.begin(), ups.end());
  CHECK(aggregate_params(ups).at("w") == p.at("w"));
  CHECK(aggregate_representations(ups).at("u") == r.at("u"));
  auto bad = up("d", 1, 0, "u", 0);
  bad.shared_params.at("w") = Matrix::Zero(3, 3);
  ups.push_back(bad);
  CHECK_THROWS_AS(aggregate_params(ups), ProtocolError);
  auto bad_rep = up("e", 1, 0, "u", 0);
  bad_rep.rep_table.at("u") = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(aggregate_representations({up("a", 1, 0, "u", 0), bad_rep}), ProtocolError);
}

TEST_CASE("local_epochs = 0 is a config error") {
  auto cfg = tiny_config();
  auto clients = make_clients(tiny_domains(1), cfg);
  cfg.local_epochs = 0;
  CHECK_THROWS_AS(client_update(clients[0], DownMessage{}, cfg), ConfigError);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("with every loss weight zero the shared branch comes back unchanged") {
  auto cfg = tiny_config();
  cfg.weights = LossWeights{0, 0, 0, 0, 0.5};
  auto clients = make_clients(tiny_domains(1), cfg);
  DownMessage down;
  down.shared_params_global = shared_payload(clients[0], true);
  const auto out = client_update(clients[0], down, cfg);
  CHECK(out.shared_params == down.shared_params_global);
}

TEST_CASE("up-messages are deterministic and carry no sequence data") {
  const auto cfg = tiny_config();
  const auto domains = tiny_domains(1);
  auto a = make_clients(domains, cfg);
  auto b = make_clients(domains, cfg);
  DownMessage down;
  down.shared_params_global = shared_payload(a[0], true);
  const auto ua = client_update(a[0], down, cfg);
  const auto ub = client_update(b[0], down, cfg);
  const auto ja = to_json(ua).dump();
  CHECK(ja == to_json(ub).dump());
  const auto back = up_message_from_json(to_json(ua));
  CHECK(back.shared_params == ua.shared_params);
  CHECK(back.rep_table.size() == ua.rep_table.size());
  CHECK(ja.find("\"items\"") == std::string::npos);
  CHECK(ja.find("sequence") == std::string::npos);
  // Representations are T×d per user, and users are the training users.
  CHECK(ua.rep_table.size() == domains[0].size());
  CHECK(ua.rep_table.begin()->second.rows() == cfg.model.seq_len);
}

TEST_CASE("one client without CIM or similarity matches the standalone trainer") {
  auto cfg = tiny_config();
  cfg.rounds = 3;
  cfg.patience = 10;
  cfg.weights.beta = 0;
  cfg.weights.lambda = 0;
  const auto domains = tiny_domains(1);
  auto fed_clients = make_clients(domains, cfg);
  auto solo = make_clients(domains, cfg);
  const auto fed = run_federated(fed_clients, cfg);
  REQUIRE(fed.rounds_run == 3);
  const auto losses = train_standalone(solo[0], cfg, cfg.rounds * cfg.local_epochs);
  REQUIRE(losses.size() == fed.step_losses[0].size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    CHECK(fed.step_losses[0][i] == doctest::Approx(losses[i]).epsilon(1e-6));
  }
}

TEST_CASE("patience 1 with a frozen model stops after two rounds") {
  auto cfg = tiny_config();
  cfg.rounds = 6;
  cfg.patience = 1;
  cfg.lr = 0.0;
  auto clients = make_clients(tiny_domains(2), cfg);
  const auto r = run_federated(clients, cfg);
  CHECK(r.rounds_run == 2);
  CHECK(r.best_round == 0);
}

TEST_CASE("local-only training exchanges no messages") {
  auto cfg = tiny_config();
  cfg.aggregate = false;
  auto clients = make_clients(tiny_domains(2), cfg);
  const auto r = run_federated(clients, cfg);
  CHECK(r.messages_exchanged == 0);
  CHECK(r.global.shared_params_global.empty());
  CHECK(r.history.size() == 2 * static_cast<std::size_t>(r.rounds_run));
}

TEST_CASE("federated runs are deterministic") {
  const auto cfg = tiny_config();
  const auto domains = tiny_domains(2);
  auto a = make_clients(domains, cfg);
  auto b = make_clients(domains, cfg);
  const auto ra = run_federated(a, cfg);
  const auto rb = run_federated(b, cfg);
  CHECK(history_text(ra) == history_text(rb));
  CHECK(ra.messages_exchanged == 2 * 2 * static_cast<std::size_t>(ra.rounds_run));
  for (const auto& h : ra.history) {
    for (const auto& [mode, m] : h.valid) {
      CHECK(m.mrr >= 0.0);
      CHECK(m.mrr <= 1.0);
    }
  }
}

TEST_CASE("single-branch clients federate the predictor too") {
  auto cfg = tiny_config();
  cfg.model.dual_branch = false;
  auto clients = make_clients(tiny_domains(1), cfg);
  const auto names = shared_tensor_names(clients[0], true);
  CHECK(std::find(names.begin(), names.end(), "predictor/w") != names.end());
  cfg.model.dual_branch = true;
  auto dual = make_clients(tiny_domains(1), cfg);
  for (const auto& n : shared_tensor_names(dual[0], true)) CHECK(n.rfind("predictor", 0) != 0);
  for (const auto& n : shared_tensor_names(dual[0], false)) {
    CHECK(n.find("item_emb") == std::string::npos);
    CHECK(n.find("gnn_base_emb") == std::string::npos);
  }
}

TEST_CASE("checkpoints round trip parameters and optimizer state") {
  const auto cfg = tiny_config();
  const auto domains = tiny_domains(1);
  auto clients = make_clients(domains, cfg);
  train_standalone(clients[0], cfg, 1);
  const auto dir = fs::temp_directory_path() / "fedcsr_test_ckpt";
  fs::create_directories(dir);
  save_client_checkpoint(clients[0], dir / "client.bin", 3);
  auto restored = make_clients(domains, cfg);
  load_client_checkpoint(restored[0], dir / "client.bin");
  CHECK(restored[0].shared_params == clients[0].shared_params);
  CHECK(restored[0].exclusive_params == clients[0].exclusive_params);
  CHECK(restored[0].shared_opt.steps() == clients[0].shared_opt.steps());
  CHECK(restored[0].shared_opt.second_moment() == clients[0].shared_opt.second_moment());
  // Identical state continues identically.
  CHECK(train_standalone(restored[0], cfg, 1) == train_standalone(clients[0], cfg, 1));

  GlobalState g;
  g.shared_params_global = shared_payload(clients[0], true);
  g.rep_table_global = shared_representations(clients[0]);
  g.round = 4;
  save_global_checkpoint(g, dir / "global.bin");
  const auto back = load_global_checkpoint(dir / "global.bin");
  CHECK(back.round == 4);
  CHECK(back.shared_params_global == g.shared_params_global);
  CHECK(back.rep_table_global == g.rep_table_global);
  fs::remove_all(dir);
}

TEST_CASE("tensor archives reject foreign files") {
  const auto f = fs::temp_directory_path() / "fedcsr_test_not_a_ckpt.bin";
  std::ofstream(f) << "definitely not a checkpoint";
  CHECK_THROWS(load_tensors(f));
  fs::remove(f);
}

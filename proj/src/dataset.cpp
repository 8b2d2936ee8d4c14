#include "fedcsr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "fedcsr/random.hpp"

namespace fedcsr {

namespace fs = std::filesystem;

std::vector<std::string> DomainDataset::users() const {
  std::set<std::string> ids;
  for (const auto* part : {&train, &valid, &test}) {
    for (const auto& [id, seq] : *part) ids.insert(id);
  }
  return {ids.begin(), ids.end()};
}

UserSequence DomainDataset::full_history(const std::string& user) const {
  UserSequence out;
  out.user_id = user;
  bool timestamps = true;
  for (const auto* part : {&train, &valid, &test}) {
    auto it = part->find(user);
    if (it == part->end()) continue;
    out.items.insert(out.items.end(), it->second.items.begin(), it->second.items.end());
    if (it->second.timestamps.size() == it->second.items.size()) {
      out.timestamps.insert(out.timestamps.end(), it->second.timestamps.begin(),
                            it->second.timestamps.end());
    } else {
      timestamps = false;
    }
  }
  if (!timestamps) out.timestamps.clear();
  return out;
}

// ---------------------------------------------------------------- ingestion

namespace {

struct Interaction {
  std::string user;
  std::string item;
  std::int64_t timestamp = 0;
  std::size_t order = 0;
};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) fields.push_back(cur);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

bool parse_int64(const std::string& s, std::int64_t& out) {
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    (void)std::stod(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

std::string json_string(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  throw std::invalid_argument("not a string");
}

bool parse_json_row(const std::string& line, Interaction& out) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return false;
  auto pick = [&](std::initializer_list<const char*> keys) -> const nlohmann::json* {
    for (const char* k : keys) {
      if (j.contains(k)) return &j[k];
    }
    return nullptr;
  };
  const auto* user = pick({"user_id", "reviewerID"});
  const auto* item = pick({"item_id", "asin"});
  const auto* ts = pick({"timestamp", "unixReviewTime"});
  if (user == nullptr || item == nullptr || ts == nullptr) return false;
  try {
    out.user = json_string(*user);
    out.item = json_string(*item);
  } catch (const std::exception&) {
    return false;
  }
  if (ts->is_number_integer()) {
    out.timestamp = ts->get<std::int64_t>();
  } else if (ts->is_string()) {
    if (!parse_int64(ts->get<std::string>(), out.timestamp)) return false;
  } else {
    return false;
  }
  return !out.user.empty() && !out.item.empty();
}

bool parse_csv_row(const std::string& line, Interaction& out) {
  auto fields = split_csv(line);
  if (fields.size() != 4) return false;
  for (auto& f : fields) f = trim(f);
  if (fields[0].empty() || fields[1].empty()) return false;
  if (!parse_double(fields[2])) return false;
  if (!parse_int64(fields[3], out.timestamp)) return false;
  out.user = fields[0];
  out.item = fields[1];
  return true;
}

}  // namespace

DomainDataset ingest_domain_file(const fs::path& file, const std::string& domain_name,
                                 IngestStats* stats) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open interaction file " + file.string());
  const bool jsonl = file.extension() == ".jsonl" || file.extension() == ".json";

  std::vector<Interaction> rows;
  IngestStats local;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (first && !jsonl && trim(split_csv(line).front()) == "user_id") {
      first = false;
      continue;
    }
    first = false;
    Interaction row;
    const bool ok = jsonl ? parse_json_row(line, row) : parse_csv_row(line, row);
    if (!ok) {
      ++local.malformed_rows;
      continue;
    }
    row.order = rows.size();
    rows.push_back(std::move(row));
  }
  if (local.malformed_rows > 0) {
    spdlog::warn("{}: skipped {} malformed row(s)", file.string(), local.malformed_rows);
  }
  local.interactions = rows.size();
  if (stats != nullptr) *stats = local;
  if (rows.empty()) throw DataError("no interactions in " + file.string());

  std::set<std::string> item_set;
  for (const auto& r : rows) item_set.insert(r.item);
  std::map<std::string, int> item_index;
  DomainDataset out;
  out.domain_name = domain_name;
  for (const auto& key : item_set) {
    item_index.emplace(key, static_cast<int>(out.item_keys.size()) + 1);
    out.item_keys.push_back(key);
  }
  out.vocab_size = static_cast<int>(out.item_keys.size()) + 1;

  std::stable_sort(rows.begin(), rows.end(), [](const Interaction& a, const Interaction& b) {
    if (a.user != b.user) return a.user < b.user;
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.order < b.order;
  });
  for (const auto& r : rows) {
    auto& seq = out.train[r.user];
    seq.user_id = r.user;
    seq.items.push_back(item_index.at(r.item));
    seq.timestamps.push_back(r.timestamp);
  }
  return out;
}

std::vector<DomainDataset> ingest_amazon(const fs::path& dir,
                                         const std::vector<std::string>& domain_names,
                                         std::vector<IngestStats>* stats) {
  std::vector<DomainDataset> out;
  if (stats != nullptr) stats->clear();
  for (const auto& name : domain_names) {
    fs::path file;
    for (const char* ext : {".csv", ".jsonl", ".json"}) {
      if (fs::exists(dir / (name + ext))) {
        file = dir / (name + ext);
        break;
      }
    }
    if (file.empty()) {
      throw ConfigError("missing interaction file for domain '" + name + "' under " + dir.string());
    }
    IngestStats s;
    out.push_back(ingest_domain_file(file, name, &s));
    if (stats != nullptr) stats->push_back(s);
  }
  return out;
}

// ------------------------------------------------------------ preprocessing

SplitSizes split_sizes(int length, double holdout_fraction) {
  int hold = std::max(2, static_cast<int>(std::lround(holdout_fraction * length)));
  hold = std::min(hold, std::max(0, length - 2));
  SplitSizes s;
  s.valid = hold / 2;
  s.test = hold - s.valid;
  s.train = length - hold;
  return s;
}

DomainDataset preprocess(const DomainDataset& raw, const PreprocessOptions& opts) {
  if (opts.min_length < 1 || opts.max_length < opts.min_length) {
    throw ConfigError("preprocess: invalid length bounds");
  }
  std::map<std::string, UserSequence> seqs;
  for (const auto& user : raw.users()) {
    auto h = raw.full_history(user);
    if (h.timestamps.size() == h.items.size() && !h.timestamps.empty()) {
      std::vector<std::size_t> order(h.items.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return h.timestamps[a] < h.timestamps[b];
      });
      UserSequence sorted;
      sorted.user_id = user;
      for (auto i : order) {
        sorted.items.push_back(h.items[i]);
        sorted.timestamps.push_back(h.timestamps[i]);
      }
      h = std::move(sorted);
    }
    if (!h.items.empty()) seqs.emplace(user, std::move(h));
  }

  // Truncate, filter sparse users/items and short sequences until nothing changes.
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<int, int> item_count;
    for (auto& [user, s] : seqs) {
      if (static_cast<int>(s.items.size()) > opts.max_length) {
        const auto cut = s.items.size() - static_cast<std::size_t>(opts.max_length);
        s.items.erase(s.items.begin(), s.items.begin() + static_cast<std::ptrdiff_t>(cut));
        if (!s.timestamps.empty()) {
          s.timestamps.erase(s.timestamps.begin(),
                             s.timestamps.begin() + static_cast<std::ptrdiff_t>(cut));
        }
        changed = true;
      }
      for (int item : s.items) ++item_count[item];
    }
    for (auto it = seqs.begin(); it != seqs.end();) {
      auto& s = it->second;
      std::vector<int> items;
      std::vector<std::int64_t> ts;
      for (std::size_t i = 0; i < s.items.size(); ++i) {
        if (item_count[s.items[i]] >= opts.min_item_interactions) {
          items.push_back(s.items[i]);
          if (!s.timestamps.empty()) ts.push_back(s.timestamps[i]);
        }
      }
      if (items.size() != s.items.size()) {
        changed = true;
        s.items = std::move(items);
        s.timestamps = std::move(ts);
      }
      const int n = static_cast<int>(s.items.size());
      if (n < opts.min_user_interactions || n < opts.min_length) {
        it = seqs.erase(it);
        changed = true;
      } else {
        ++it;
      }
    }
  }
  if (seqs.empty()) throw DataError("domain empty after filtering: " + raw.domain_name);

  DomainDataset out;
  out.domain_name = raw.domain_name;
  std::map<int, int> remap;
  if (opts.compact_vocab) {
    // Renumber surviving items densely, preserving their relative order.
    std::set<int> alive;
    for (const auto& [user, s] : seqs) alive.insert(s.items.begin(), s.items.end());
    for (int old : alive) {
      remap.emplace(old, static_cast<int>(remap.size()) + 1);
      if (!raw.item_keys.empty()) out.item_keys.push_back(raw.item_keys.at(old - 1));
    }
    out.vocab_size = static_cast<int>(remap.size()) + 1;
  } else {
    out.item_keys = raw.item_keys;
    out.vocab_size = raw.vocab_size;
  }

  for (auto& [user, s] : seqs) {
    if (opts.compact_vocab) {
      for (int& item : s.items) item = remap.at(item);
    }
    const auto sz = split_sizes(static_cast<int>(s.items.size()), opts.holdout_fraction);
    auto fragment = [&](int from, int count) {
      UserSequence f;
      f.user_id = user;
      f.items.assign(s.items.begin() + from, s.items.begin() + from + count);
      if (!s.timestamps.empty()) {
        f.timestamps.assign(s.timestamps.begin() + from, s.timestamps.begin() + from + count);
      }
      return f;
    };
    out.train.emplace(user, fragment(0, sz.train));
    if (sz.valid > 0) out.valid.emplace(user, fragment(sz.train, sz.valid));
    if (sz.test > 0) out.test.emplace(user, fragment(sz.train + sz.valid, sz.test));
  }
  return out;
}

// --------------------------------------------------------------- item graph

ItemGraph build_item_graph(const DomainDataset& data) {
  const int v = data.vocab_size;
  std::set<std::pair<int, int>> edges;
  for (int i = 0; i < v; ++i) edges.emplace(i, i);
  for (const auto& [user, s] : data.train) {
    for (std::size_t t = 0; t < s.items.size(); ++t) {
      const int a = s.items[t];
      if (a <= kPadItem || a >= v) {
        throw std::out_of_range("build_item_graph: item " + std::to_string(a) + " outside vocab");
      }
      if (t + 1 < s.items.size()) {
        const int b = s.items[t + 1];
        if (b <= kPadItem || b >= v) {
          throw std::out_of_range("build_item_graph: item " + std::to_string(b) + " outside vocab");
        }
        edges.emplace(a, b);
        edges.emplace(b, a);
      }
    }
  }
  std::vector<int> degree(static_cast<std::size_t>(v), 0);
  for (const auto& [a, b] : edges) ++degree[static_cast<std::size_t>(a)];
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    triplets.emplace_back(a, b, 1.0 / degree[static_cast<std::size_t>(a)]);
  }
  ItemGraph g;
  g.adjacency.resize(v, v);
  g.adjacency.setFromTriplets(triplets.begin(), triplets.end());
  g.adjacency.makeCompressed();
  return g;
}

// ---------------------------------------------------------------- synthetic

void ScenarioConfig::validate() const {
  if (num_domains < 1) throw ConfigError("scenario: num_domains must be >= 1");
  if (users < 1) throw ConfigError("scenario: users must be >= 1");
  if (shared_factors < 1 || exclusive_factors < 1) {
    throw ConfigError("scenario: factor dimensions must be >= 1");
  }
  if (!(heterogeneity >= 0.0 && heterogeneity <= 1.0)) {
    throw ConfigError("scenario: heterogeneity must lie in [0, 1]");
  }
  if (min_length < 4 || max_length > 16 || min_length > max_length) {
    throw ConfigError("scenario: sequence length range must satisfy 4 <= min <= max <= 16");
  }
  if (shared_clusters < 1 || exclusive_clusters < 1) {
    throw ConfigError("scenario: cluster counts must be >= 1");
  }
  if (vocab_per_domain < 2 * std::max(shared_clusters, exclusive_clusters)) {
    throw ConfigError("scenario: vocab_per_domain too small for the cluster layout");
  }
  if (concentration < 0.0) throw ConfigError("scenario: concentration must be >= 0");
}

namespace {

std::vector<double> softmax_preferences(const std::vector<double>& user,
                                        const std::vector<std::vector<double>>& clusters,
                                        double concentration) {
  std::vector<double> logits;
  const double scale = concentration / std::sqrt(static_cast<double>(user.size()));
  for (const auto& c : clusters) {
    double dot = 0.0;
    for (std::size_t i = 0; i < user.size(); ++i) dot += user[i] * c[i];
    logits.push_back(scale * dot);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    z += l;
  }
  for (double& l : logits) l /= z;
  return logits;
}

std::vector<std::vector<double>> normal_rows(int rows, int cols, std::mt19937_64& rng) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(rows),
                                       std::vector<double>(static_cast<std::size_t>(cols)));
  for (auto& r : out) {
    for (auto& v : r) v = standard_normal(rng);
  }
  return out;
}

int sample_categorical(const std::vector<double>& probs, std::mt19937_64& rng) {
  double u = uniform01(rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    u -= probs[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

SyntheticWorld::SyntheticWorld(const ScenarioConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int n_items = cfg_.vocab_per_domain;
  shared_items_ = n_items / 2;
  std::mt19937_64 rng(derive_seed(cfg_.seed, {1}));

  // Shared block [1, shared_items_] is chunked identically in every domain;
  // the exclusive block is chunked after a domain-specific permutation.
  cluster_items_.assign(static_cast<std::size_t>(cfg_.num_domains), {});
  item_cluster_.assign(static_cast<std::size_t>(cfg_.num_domains),
                       std::vector<int>(static_cast<std::size_t>(n_items) + 1, -1));
  for (int d = 0; d < cfg_.num_domains; ++d) {
    auto& clusters = cluster_items_[static_cast<std::size_t>(d)];
    clusters.assign(static_cast<std::size_t>(num_clusters()), {});
    for (int item = 1; item <= shared_items_; ++item) {
      const int c = (item - 1) * cfg_.shared_clusters / shared_items_;
      clusters[static_cast<std::size_t>(c)].push_back(item);
    }
    std::vector<int> excl(static_cast<std::size_t>(n_items - shared_items_));
    std::iota(excl.begin(), excl.end(), shared_items_ + 1);
    for (std::size_t i = excl.size(); i > 1; --i) {
      std::swap(excl[i - 1], excl[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(i)))]);
    }
    const int n_excl = static_cast<int>(excl.size());
    for (int i = 0; i < n_excl; ++i) {
      const int c = cfg_.shared_clusters + i * cfg_.exclusive_clusters / n_excl;
      clusters[static_cast<std::size_t>(c)].push_back(excl[static_cast<std::size_t>(i)]);
    }
    for (int c = 0; c < num_clusters(); ++c) {
      for (int item : clusters[static_cast<std::size_t>(c)]) {
        item_cluster_[static_cast<std::size_t>(d)][static_cast<std::size_t>(item)] = c;
      }
    }
  }

  const auto shared_clusters = normal_rows(cfg_.shared_clusters, cfg_.shared_factors, rng);
  std::vector<std::vector<std::vector<double>>> excl_clusters;
  for (int d = 0; d < cfg_.num_domains; ++d) {
    excl_clusters.push_back(normal_rows(cfg_.exclusive_clusters, cfg_.exclusive_factors, rng));
  }
  const auto shared_users = normal_rows(cfg_.users, cfg_.shared_factors, rng);
  for (const auto& u : shared_users) {
    shared_pref_.push_back(softmax_preferences(u, shared_clusters, cfg_.concentration));
  }
  exclusive_pref_.resize(static_cast<std::size_t>(cfg_.num_domains));
  for (int d = 0; d < cfg_.num_domains; ++d) {
    const auto excl_users = normal_rows(cfg_.users, cfg_.exclusive_factors, rng);
    for (const auto& u : excl_users) {
      exclusive_pref_[static_cast<std::size_t>(d)].push_back(
          softmax_preferences(u, excl_clusters[static_cast<std::size_t>(d)], cfg_.concentration));
    }
  }
}

std::string SyntheticWorld::user_id(int user) const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "u%05d", user);
  return buf;
}

int SyntheticWorld::cluster_of(int domain, int item) const {
  return item_cluster_.at(static_cast<std::size_t>(domain)).at(static_cast<std::size_t>(item));
}

int SyntheticWorld::sample_item(int user, int domain, std::mt19937_64& rng) const {
  const auto u = static_cast<std::size_t>(user);
  const auto d = static_cast<std::size_t>(domain);
  int cluster = 0;
  if (uniform01(rng) < cfg_.heterogeneity) {
    cluster = cfg_.shared_clusters + sample_categorical(exclusive_pref_[d][u], rng);
  } else {
    cluster = sample_categorical(shared_pref_[u], rng);
  }
  const auto& items = cluster_items_[d][static_cast<std::size_t>(cluster)];
  return items[static_cast<std::size_t>(uniform_index(rng, static_cast<int>(items.size())))];
}

std::vector<int> SyntheticWorld::sample_sequence(int user, int domain, int length,
                                                 std::mt19937_64& rng) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) out.push_back(sample_item(user, domain, rng));
  return out;
}

std::vector<DomainDataset> SyntheticWorld::generate() const {
  std::vector<DomainDataset> out;
  for (int d = 0; d < cfg_.num_domains; ++d) {
    DomainDataset ds;
    ds.domain_name = "domain" + std::to_string(d);
    ds.vocab_size = cfg_.vocab_per_domain + 1;
    for (int u = 0; u < cfg_.users; ++u) {
      std::mt19937_64 rng(derive_seed(cfg_.seed, {2, static_cast<std::uint64_t>(d),
                                                  static_cast<std::uint64_t>(u)}));
      const int len = cfg_.min_length + uniform_index(rng, cfg_.max_length - cfg_.min_length + 1);
      const auto items = sample_sequence(u, d, len, rng);
      const auto sz = split_sizes(len);
      const auto id = user_id(u);
      auto fragment = [&](int from, int count) {
        UserSequence f;
        f.user_id = id;
        f.items.assign(items.begin() + from, items.begin() + from + count);
        f.timestamps.resize(static_cast<std::size_t>(count));
        std::iota(f.timestamps.begin(), f.timestamps.end(), from);
        return f;
      };
      ds.train.emplace(id, fragment(0, sz.train));
      if (sz.valid > 0) ds.valid.emplace(id, fragment(sz.train, sz.valid));
      if (sz.test > 0) ds.test.emplace(id, fragment(sz.train + sz.valid, sz.test));
    }
    out.push_back(std::move(ds));
  }
  return out;
}

std::vector<DomainDataset> generate_synthetic(const ScenarioConfig& cfg) {
  return SyntheticWorld(cfg).generate();
}

// ------------------------------------------------------------ serialization

namespace {

constexpr const char* kDatasetSchema = "fedcsr.domain_dataset";
constexpr int kDatasetVersion = 1;

nlohmann::json fragments_to_json(const std::map<std::string, UserSequence>& part) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [id, s] : part) {
    nlohmann::json j{{"user_id", id}, {"items", s.items}};
    if (!s.timestamps.empty()) j["timestamps"] = s.timestamps;
    arr.push_back(std::move(j));
  }
  return arr;
}

std::map<std::string, UserSequence> fragments_from_json(const nlohmann::json& arr) {
  std::map<std::string, UserSequence> out;
  for (const auto& j : arr) {
    UserSequence s;
    s.user_id = j.at("user_id").get<std::string>();
    s.items = j.at("items").get<std::vector<int>>();
    if (j.contains("timestamps")) s.timestamps = j.at("timestamps").get<std::vector<std::int64_t>>();
    if (s.items.empty()) throw DataError("dataset: empty fragment for user " + s.user_id);
    out.emplace(s.user_id, std::move(s));
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const DomainDataset& data) {
  return {{"schema", kDatasetSchema},
          {"version", kDatasetVersion},
          {"domain_name", data.domain_name},
          {"vocab_size", data.vocab_size},
          {"item_keys", data.item_keys},
          {"train", fragments_to_json(data.train)},
          {"valid", fragments_to_json(data.valid)},
          {"test", fragments_to_json(data.test)}};
}

DomainDataset domain_dataset_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kDatasetSchema) throw DataError("dataset: unknown schema");
  if (j.value("version", 0) != kDatasetVersion) {
    throw DataError("dataset: unsupported version " + std::to_string(j.value("version", 0)));
  }
  DomainDataset d;
  d.domain_name = j.at("domain_name").get<std::string>();
  d.vocab_size = j.at("vocab_size").get<int>();
  d.item_keys = j.at("item_keys").get<std::vector<std::string>>();
  d.train = fragments_from_json(j.at("train"));
  d.valid = fragments_from_json(j.at("valid"));
  d.test = fragments_from_json(j.at("test"));
  for (const auto* part : {&d.train, &d.valid, &d.test}) {
    for (const auto& [id, s] : *part) {
      for (int item : s.items) {
        if (item <= kPadItem || item >= d.vocab_size) {
          throw DataError("dataset: item index " + std::to_string(item) + " outside vocabulary");
        }
      }
    }
  }
  return d;
}

void save_dataset(const DomainDataset& data, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw ConfigError("cannot write " + file.string());
  out << to_json(data).dump() << '\n';
}

DomainDataset load_dataset(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open " + file.string());
  return domain_dataset_from_json(nlohmann::json::parse(in));
}

std::vector<int> left_pad(const std::vector<int>& items, int seq_len) {
  std::vector<int> out(static_cast<std::size_t>(seq_len), kPadItem);
  const int n = std::min<int>(seq_len, static_cast<int>(items.size()));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(seq_len - n + i)] = items[items.size() - static_cast<std::size_t>(n) + static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace fedcsr

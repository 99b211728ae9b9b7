// Copyright 2026 The fairfed authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fairfed/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fairfed/errors.hpp"
#include "fairfed/privacy.hpp"

namespace fairfed {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << contents;
  if (!out) throw DataError("short write on " + path.string());
}

std::string ratings_csv(const RatingTable& table) {
  std::ostringstream out;
  out << "user,item,rating,timestamp\n";
  for (const RatingRecord& r : table.records()) {
    out << r.user << ',' << r.item << ',' << fmt(r.rating) << ',' << r.timestamp << '\n';
  }
  return out.str();
}

RatingTable read_ratings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prepared split: " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<RatingRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    RatingRecord r;
    char comma;
    std::istringstream row(line);
    if (!(row >> r.user >> comma >> r.item >> comma >> r.rating >> comma >> r.timestamp)) {
      throw ParseError(path.string(), line_no, "malformed prepared split row");
    }
    records.push_back(r);
  }
  return RatingTable::from_records(std::move(records));
}

std::filesystem::path require_file(const std::filesystem::path& path,
                                   const std::string& hint) {
  if (!std::filesystem::exists(path)) {
    throw DataError("missing raw file " + path.string() + " (" + hint + ")");
  }
  return path;
}

std::string canonical_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "dataset=" << c.dataset << '\n'
      << "attribute=" << c.attribute << '\n'
      << "eta=" << fmt(c.eta) << '\n'
      << "K=" << fmt(c.batch_dropout) << '\n'
      << "epochs=" << c.epochs << '\n'
      << "seed=" << c.seed << '\n'
      << "sample_once=" << c.sample_once << '\n'
      << "early_stop=" << c.early_stop << '\n'
      << "patience=" << c.patience << '\n'
      << "neighbor_cap=" << c.neighbor_cap << '\n'
      << "expansion=" << c.expansion << '\n'
      << "hidden=" << c.model.hidden_dim << '\n'
      << "layers=" << c.model.layers << '\n'
      << "dropout=" << fmt(c.model.dropout) << '\n'
      << "attention_slope=" << fmt(c.model.attention_slope) << '\n'
      << "activation=" << activation_to_string(c.model.update_activation) << '\n'
      << "self_loops=" << c.model.self_loops << '\n'
      << "init_scale=" << fmt(c.model.init_scale) << '\n'
      << "beta=" << fmt(c.fairness.beta) << '\n'
      << "alpha=" << c.fairness.alpha << '\n'
      << "sigma=" << fmt(c.fairness.sigma) << '\n'
      << "delta=" << fmt(c.ldp.delta) << '\n'
      << "lambda=" << fmt(c.ldp.lambda) << '\n'
      << "ldp=" << c.ldp.enabled << '\n';
  return out.str();
}

}  // namespace

PrepareStats prepare_dataset(const PrepareOptions& options) {
  RatingTable raw;
  std::unordered_map<UserId, char> demographics;
  bool have_demographics = false;

  if (options.dataset == "ml-100k") {
    raw = load_ratings(require_file(options.data_dir / "u.data", "ML-100K ratings, tab separated"),
                       RatingsFormat::kMl100kTab);
    const auto users_path = options.data_dir / "u.user";
    if (options.attribute == "gender") {
      demographics = load_demographics(require_file(users_path, "ML-100K demographics"),
                                       DemographicsFormat::kMl100kUser);
      have_demographics = true;
    }
  } else if (options.dataset == "ml-1m") {
    raw = load_ratings(require_file(options.data_dir / "ratings.dat", "ML-1M ratings, '::' separated"),
                       RatingsFormat::kMl1mColonColon);
    if (options.attribute == "gender") {
      demographics = load_demographics(require_file(options.data_dir / "users.dat", "ML-1M demographics"),
                                       DemographicsFormat::kMl1mUsers);
      have_demographics = true;
    }
  } else if (options.dataset == "amazon-movies") {
    raw = load_ratings(require_file(options.data_dir / "ratings.csv",
                                    "Amazon Movies ratings, csv with columns " + options.amazon_columns),
                       RatingsFormat::kAmazonCsv, AmazonColumns::parse(options.amazon_columns));
    if (options.attribute == "gender") {
      throw ConfigError("amazon-movies carries no gender demographics; use --attribute activity");
    }
  } else {
    throw ConfigError("unknown dataset '" + options.dataset + "'");
  }

  const RatingTable filtered = ncore_filter(raw, options.ncore);
  const SplitTable splits = temporal_split(filtered);

  SensitiveAssignment groups;
  if (options.attribute == "gender") {
    groups = assign_sensitive(filtered, SensitiveAttribute::kGender,
                              have_demographics ? &demographics : nullptr);
  } else if (options.attribute == "activity") {
    // Threshold on train-set counts only, so the attribute never peeks at
    // validation or test interactions.
    groups = assign_sensitive(splits.train, SensitiveAttribute::kActivity, nullptr,
                              options.activity_quantile);
  } else {
    throw ConfigError("unknown attribute '" + options.attribute + "'");
  }

  std::filesystem::create_directories(options.out_dir);
  write_file(options.out_dir / "train.csv", ratings_csv(splits.train));
  write_file(options.out_dir / "validation.csv", ratings_csv(splits.validation));
  write_file(options.out_dir / "test.csv", ratings_csv(splits.test));

  std::ostringstream groups_csv;
  groups_csv << "user,group\n";
  {
    std::map<UserId, Group> ordered(groups.groups().begin(), groups.groups().end());
    for (const auto& [user, group] : ordered) {
      groups_csv << user << ',' << group_name(group) << '\n';
    }
  }
  write_file(options.out_dir / "groups.csv", groups_csv.str());

  PrepareStats stats;
  stats.users = filtered.user_count();
  stats.items = filtered.item_count();
  stats.ratings = filtered.rating_count();
  stats.train = splits.train.rating_count();
  stats.validation = splits.validation.rating_count();
  stats.test = splits.test.rating_count();
  stats.s0 = groups.size(Group::kS0);
  stats.s1 = groups.size(Group::kS1);
  stats.fingerprint = filtered.content_hash();

  nlohmann::json meta;
  meta["dataset"] = options.dataset;
  meta["attribute"] = options.attribute;
  meta["ncore"] = options.ncore;
  meta["activity_quantile"] = options.activity_quantile;
  meta["users"] = stats.users;
  meta["items"] = stats.items;
  meta["ratings"] = stats.ratings;
  meta["train"] = stats.train;
  meta["validation"] = stats.validation;
  meta["test"] = stats.test;
  meta["s0"] = stats.s0;
  meta["s1"] = stats.s1;
  meta["fingerprint"] = stats.fingerprint;
  write_file(options.out_dir / "meta.json", meta.dump(2) + "\n");
  return stats;
}

PreparedData load_prepared(const std::filesystem::path& dir) {
  PreparedData prepared;
  prepared.splits.train = read_ratings_csv(dir / "train.csv");
  prepared.splits.validation = read_ratings_csv(dir / "validation.csv");
  prepared.splits.test = read_ratings_csv(dir / "test.csv");

  const auto groups_path = dir / "groups.csv";
  std::ifstream in(groups_path);
  if (!in) throw DataError("cannot open " + groups_path.string());
  std::string line;
  std::getline(in, line);
  std::unordered_map<UserId, Group> groups;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError(groups_path.string(), line_no, "malformed group row");
    }
    const UserId user = std::stoll(line.substr(0, comma));
    const std::string g = line.substr(comma + 1);
    if (g != "S0" && g != "S1") {
      throw ParseError(groups_path.string(), line_no, "group must be S0 or S1");
    }
    groups[user] = g == "S0" ? Group::kS0 : Group::kS1;
  }

  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw DataError("cannot open " + (dir / "meta.json").string());
  nlohmann::json meta = nlohmann::json::parse(meta_in);
  prepared.dataset = meta.at("dataset").get<std::string>();
  prepared.attribute = meta.at("attribute").get<std::string>();
  prepared.groups = SensitiveAssignment(attribute_from_string(prepared.attribute),
                                        std::move(groups));

  std::vector<RatingRecord> all;
  for (const RatingTable* t :
       {&prepared.splits.train, &prepared.splits.validation, &prepared.splits.test}) {
    all.insert(all.end(), t->records().begin(), t->records().end());
  }
  const RatingTable combined = RatingTable::from_records(std::move(all));
  prepared.fingerprint = combined.content_hash();
  prepared.record_count = combined.rating_count();
  return prepared;
}

std::uint64_t RunManifest::hash() const {
  std::uint64_t h = kFnvOffset;
  h = fnv1a(h, std::string_view(code_version));
  h = fnv1a(h, dataset_fingerprint);
  h = fnv1a(h, static_cast<std::uint64_t>(record_count));
  h = fnv1a(h, canonical_config(config));
  return mix64(h);
}

std::string RunManifest::hash_hex() const {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

std::string RunManifest::to_json() const {
  nlohmann::json j;
  j["code_version"] = code_version;
  j["dataset_fingerprint"] = dataset_fingerprint;
  j["record_count"] = record_count;
  j["out_dir"] = out_dir;
  j["manifest_hash"] = hash_hex();
  j["seed"] = config.seed;
  nlohmann::json cfg;
  std::istringstream lines(canonical_config(config));
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    cfg[line.substr(0, eq)] = line.substr(eq + 1);
  }
  j["config"] = cfg;
  return j.dump(2) + "\n";
}

RunOutputs run_training(const ExperimentConfig& config, const PreparedData& prepared,
                        const std::filesystem::path& out_dir) {
  RunOutputs outputs;
  outputs.manifest.config = config;
  outputs.manifest.dataset_fingerprint = prepared.fingerprint;
  outputs.manifest.record_count = prepared.record_count;
  outputs.manifest.out_dir = out_dir.string();
  const std::string mh = outputs.manifest.hash_hex();

  FederatedData data = FederatedData::build(prepared.splits, prepared.groups);
  TrainResult trained = train(config, data);
  outputs.history = trained.history;
  outputs.final_stats = trained.final_stats;
  outputs.test_report = evaluate(trained.state, data.splits.test, data, config.model,
                                 config.fairness.alpha, &trained.neighbor_features,
                                 config.threads);
  outputs.epsilon = config.ldp.enabled ? privacy_budget(config.ldp)
                                       : std::numeric_limits<double>::infinity();

  std::filesystem::create_directories(out_dir);

  std::ostringstream rounds;
  rounds << "manifest,epoch,train_rmse,validation_rmse,validation_disparity,P,Q,"
            "abs_gap,test_disparity,wall_seconds\n";
  std::ostringstream fairness_csv;
  fairness_csv << "manifest,epoch,P,Q,abs_gap,validation_disparity,test_disparity\n";
  for (const RoundRecord& r : outputs.history) {
    const double gap = std::abs(r.p - r.q);
    rounds << mh << ',' << r.epoch << ',' << fmt(r.train_rmse) << ','
           << fmt(r.validation_rmse) << ',' << fmt(r.validation_disparity) << ','
           << fmt(r.p) << ',' << fmt(r.q) << ',' << fmt(gap) << ','
           << fmt(r.test_disparity) << ',' << fmt(r.wall_seconds) << '\n';
    fairness_csv << mh << ',' << r.epoch << ',' << fmt(r.p) << ',' << fmt(r.q) << ','
                 << fmt(gap) << ',' << fmt(r.validation_disparity) << ','
                 << fmt(r.test_disparity) << '\n';
  }
  write_file(out_dir / "rounds.csv", rounds.str());
  write_file(out_dir / "fairness.csv", fairness_csv.str());

  std::ostringstream summary;
  summary << "manifest,dataset,attribute,beta,alpha,sigma,delta,lambda,ldp,epsilon,"
             "eta,K,hidden,layers,dropout,epochs_run,seed,test_rmse,test_disparity,"
             "rmse_s0,rmse_s1,final_P,final_Q\n";
  summary << mh << ',' << prepared.dataset << ',' << prepared.attribute << ','
          << fmt(config.fairness.beta) << ',' << config.fairness.alpha << ','
          << fmt(config.fairness.sigma) << ',' << fmt(config.ldp.delta) << ','
          << fmt(config.ldp.lambda) << ',' << (config.ldp.enabled ? 1 : 0) << ','
          << fmt(outputs.epsilon) << ',' << fmt(config.eta) << ','
          << fmt(config.batch_dropout) << ',' << config.model.hidden_dim << ','
          << config.model.layers << ',' << fmt(config.model.dropout) << ','
          << outputs.history.size() << ',' << config.seed << ','
          << fmt(outputs.test_report.rmse) << ',' << fmt(outputs.test_report.disparity)
          << ',' << fmt(outputs.test_report.rmse_s0) << ','
          << fmt(outputs.test_report.rmse_s1) << ',' << fmt(outputs.final_stats.p) << ','
          << fmt(outputs.final_stats.q) << '\n';
  write_file(out_dir / "summary.csv", summary.str());

  write_file(out_dir / "manifest.json", outputs.manifest.to_json());
  save_checkpoint(out_dir / "checkpoint.bin", trained.state, config.seed);
  return outputs;
}

void run_beta_sweep(const ExperimentConfig& base, const PreparedData& prepared,
                    const std::vector<double>& betas,
                    const std::filesystem::path& out_dir) {
  if (betas.empty()) throw ConfigError("empty sweep specification");

  RunManifest manifest;
  manifest.config = base;
  manifest.dataset_fingerprint = prepared.fingerprint;
  manifest.record_count = prepared.record_count;
  manifest.out_dir = out_dir.string();
  const std::string mh = manifest.hash_hex();

  FederatedData data = FederatedData::build(prepared.splits, prepared.groups);
  const SweepResult result = sweep(base, betas, data);

  std::filesystem::create_directories(out_dir);
  std::ostringstream table;
  table << "manifest,dataset,attribute,beta,rmse,disparity,pct_change_rmse,"
           "pct_change_disparity,epsilon,failed,error\n";
  for (const SweepRow& row : result.rows) {
    table << mh << ',' << prepared.dataset << ',' << prepared.attribute << ','
          << fmt(row.beta) << ',' << fmt(row.rmse) << ',' << fmt(row.disparity) << ','
          << fmt(row.pct_change_rmse) << ',' << fmt(row.pct_change_disparity) << ','
          << fmt(row.epsilon) << ',' << (row.failed ? 1 : 0) << ',' << row.error << '\n';
  }
  write_file(out_dir / "table1.csv", table.str());

  std::ostringstream figure;
  figure << "manifest,beta,epoch,validation_disparity\n";
  for (std::size_t b = 0; b < result.rows.size(); ++b) {
    for (std::size_t e = 0; e < result.validation_disparity[b].size(); ++e) {
      figure << mh << ',' << fmt(result.rows[b].beta) << ',' << e << ','
             << fmt(result.validation_disparity[b][e]) << '\n';
    }
  }
  write_file(out_dir / "figure3.csv", figure.str());
  write_file(out_dir / "manifest.json", manifest.to_json());
}

void run_ldp_grid(const ExperimentConfig& base, const PreparedData& prepared,
                  const std::vector<double>& deltas, const std::vector<double>& lambdas,
                  const std::filesystem::path& out_dir) {
  if (deltas.empty() || lambdas.empty()) throw ConfigError("empty sweep specification");

  RunManifest manifest;
  manifest.config = base;
  manifest.dataset_fingerprint = prepared.fingerprint;
  manifest.record_count = prepared.record_count;
  manifest.out_dir = out_dir.string();
  const std::string mh = manifest.hash_hex();

  FederatedData data = FederatedData::build(prepared.splits, prepared.groups);

  std::filesystem::create_directories(out_dir);
  std::ostringstream table;
  table << "manifest,dataset,attribute,beta,delta,lambda,epsilon,rmse,disparity,"
           "failed,error\n";
  for (const double delta : deltas) {
    for (const double lambda : lambdas) {
      ExperimentConfig config = base;
      config.ldp.enabled = true;
      config.ldp.delta = delta;
      config.ldp.lambda = lambda;
      double rmse = std::numeric_limits<double>::quiet_NaN();
      double disp = std::numeric_limits<double>::quiet_NaN();
      bool failed = false;
      std::string error;
      try {
        const TrainResult trained = train(config, data);
        const EvalReport report =
            evaluate(trained.state, data.splits.test, data, config.model,
                     config.fairness.alpha, &trained.neighbor_features, config.threads);
        rmse = report.rmse;
        disp = report.disparity;
      } catch (const std::exception& e) {
        failed = true;
        error = e.what();
      }
      table << mh << ',' << prepared.dataset << ',' << prepared.attribute << ','
            << fmt(config.fairness.beta) << ',' << fmt(delta) << ',' << fmt(lambda)
            << ',' << fmt(privacy_budget(config.ldp)) << ',' << fmt(rmse) << ','
            << fmt(disp) << ',' << (failed ? 1 : 0) << ',' << error << '\n';
    }
  }
  write_file(out_dir / "ldp_grid.csv", table.str());
  write_file(out_dir / "manifest.json", manifest.to_json());
}

// ---------------------------------------------------------------------------
// verify: self-check suites.

namespace {

struct TinyFixture {
  FederatedData data;
  ModelState state;
  ModelConfig config;
  LocalSubgraph subgraph;
  ClientGraph graph;
};

TinyFixture make_random_fixture(std::uint64_t seed) {
  Rng rng(seed);
  TinyFixture fx;
  fx.config.hidden_dim = 2 + static_cast<int>(rng.below(3));  // 2..4
  fx.config.layers = 1 + static_cast<int>(rng.below(2));      // 1..2
  fx.config.dropout = 0.0;
  fx.config.init_scale = 1.0;  // small smooth params for finite differences

  const std::size_t m = 1 + rng.below(3);  // items
  const std::size_t r = rng.below(2);      // neighbors; nodes <= 1 + 3 + 1 = 5

  std::vector<UserId> users = {1};
  std::vector<ItemId> items;
  for (std::size_t j = 0; j < m; ++j) items.push_back(static_cast<ItemId>(100 + j));

  fx.subgraph.user = 1;
  fx.subgraph.items = items;
  for (std::size_t j = 0; j < m; ++j) fx.subgraph.ratings.push_back(1.0 + rng.uniform() * 4.0);
  fx.subgraph.neighbor_embeddings.resize(fx.config.hidden_dim, static_cast<Eigen::Index>(r));
  for (Eigen::Index c = 0; c < fx.subgraph.neighbor_embeddings.cols(); ++c) {
    for (Eigen::Index row = 0; row < fx.config.hidden_dim; ++row) {
      fx.subgraph.neighbor_embeddings(row, c) = rng.uniform(-0.8, 0.8);
    }
  }

  std::vector<RatingRecord> train_records;
  for (std::size_t j = 0; j < m; ++j) {
    train_records.push_back({1, items[j], fx.subgraph.ratings[j], static_cast<std::int64_t>(j)});
  }
  SplitTable splits;
  splits.train = RatingTable::from_records(std::move(train_records));
  std::unordered_map<UserId, Group> groups{{1, Group::kS0}};
  fx.data = FederatedData::build(std::move(splits),
                                 SensitiveAssignment(SensitiveAttribute::kActivity, groups));

  Rng init(seed ^ 0x5eedULL);
  fx.state = ModelState::init(fx.config, fx.data.users.size(), fx.data.items.size(), init);
  // Stretch parameters away from the tiny init so activations are far from
  // their kinks and finite differences stay clean.
  fx.state.user_emb *= 2.0;
  fx.state.item_emb *= 2.0;
  fx.graph = ClientGraph::build(fx.subgraph, fx.data.users, fx.data.items);
  return fx;
}

double loss_at(const TinyFixture& fx, const ModelState& state) {
  const ForwardTrace trace = forward(fx.graph, state, fx.config, nullptr);
  return local_loss(trace, fx.subgraph.ratings);
}

// Central finite differences over every reachable parameter.
double max_gradient_rel_error(const TinyFixture& fx, bool inject_bug) {
  const double step = 1e-5;
  const ForwardTrace trace = forward(fx.graph, fx.state, fx.config, nullptr);
  GradientSet grads = backward(trace, fx.subgraph.ratings, fx.graph, fx.state, fx.config);
  if (inject_bug) grads.user_grad(0) += 1e-2;

  double worst = 0.0;

  // User embedding.
  for (Eigen::Index row = 0; row < fx.state.user_emb.rows(); ++row) {
    ModelState local = fx.state;
    const double saved = local.user_emb(row, 0);
    local.user_emb(row, 0) = saved + step;
    const double up = loss_at(fx, local);
    local.user_emb(row, 0) = saved - step;
    const double down = loss_at(fx, local);
    const double numeric = (up - down) / (2.0 * step);
    const double analytic = grads.user_grad(row);
    const double rel = std::abs(analytic - numeric) /
                       std::max({1e-6, std::abs(analytic), std::abs(numeric)});
    worst = std::max(worst, rel);
  }
  // Touched item embeddings.
  for (const auto& [item_index, grad] : grads.item_grads) {
    for (Eigen::Index row = 0; row < grad.size(); ++row) {
      ModelState local = fx.state;
      double& slot = local.item_emb(row, static_cast<Eigen::Index>(item_index));
      const double saved = slot;
      slot = saved + step;
      const double up = loss_at(fx, local);
      slot = saved - step;
      const double down = loss_at(fx, local);
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grad(row);
      const double rel = std::abs(analytic - numeric) /
                         std::max({1e-6, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  // Theta and attention, all layers.
  for (std::size_t l = 0; l < grads.theta_grad.size(); ++l) {
    for (Eigen::Index c = 0; c < grads.theta_grad[l].cols(); ++c) {
      for (Eigen::Index row = 0; row < grads.theta_grad[l].rows(); ++row) {
        ModelState local = fx.state;
        double& slot = local.theta[l](row, c);
        const double saved = slot;
        slot = saved + step;
        const double up = loss_at(fx, local);
        slot = saved - step;
        const double down = loss_at(fx, local);
        const double numeric = (up - down) / (2.0 * step);
        const double analytic = grads.theta_grad[l](row, c);
        const double rel = std::abs(analytic - numeric) /
                           std::max({1e-6, std::abs(analytic), std::abs(numeric)});
        worst = std::max(worst, rel);
      }
    }
    for (Eigen::Index row = 0; row < grads.attn_grad[l].size(); ++row) {
      ModelState local = fx.state;
      double& slot = local.attn[l](row);
      const double saved = slot;
      slot = saved + step;
      const double up = loss_at(fx, local);
      slot = saved - step;
      const double down = loss_at(fx, local);
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = grads.attn_grad[l](row);
      const double rel = std::abs(analytic - numeric) /
                         std::max({1e-6, std::abs(analytic), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Independent n-core oracle: removes below-threshold users, then items, one
// category per pass, recounting from scratch, until nothing changes.
std::vector<RatingRecord> naive_ncore(std::vector<RatingRecord> records, std::size_t n) {
  for (;;) {
    std::map<UserId, std::size_t> user_counts;
    for (const auto& r : records) user_counts[r.user]++;
    std::vector<RatingRecord> after_users;
    for (const auto& r : records) {
      if (user_counts[r.user] >= n) after_users.push_back(r);
    }
    std::map<ItemId, std::size_t> item_counts;
    for (const auto& r : after_users) item_counts[r.item]++;
    std::vector<RatingRecord> after_items;
    for (const auto& r : after_users) {
      if (item_counts[r.item] >= n) after_items.push_back(r);
    }
    if (after_items.size() == records.size()) return records;
    records = std::move(after_items);
  }
}

std::vector<RatingRecord> random_table(Rng& rng, std::size_t users, std::size_t items,
                                       double density) {
  std::vector<RatingRecord> records;
  for (std::size_t u = 1; u <= users; ++u) {
    for (std::size_t i = 1; i <= items; ++i) {
      if (rng.uniform() < density) {
        records.push_back({static_cast<UserId>(u), static_cast<ItemId>(i),
                           1.0 + static_cast<double>(rng.below(5)),
                           static_cast<std::int64_t>(rng.below(100000))});
      }
    }
  }
  return records;
}

std::multiset<std::pair<UserId, ItemId>> record_keys(const std::vector<RatingRecord>& rs) {
  std::multiset<std::pair<UserId, ItemId>> keys;
  for (const auto& r : rs) keys.insert({r.user, r.item});
  return keys;
}

}  // namespace

std::vector<VerifySuiteResult> run_verify(std::size_t seeds, bool inject_gradient_bug) {
  std::vector<VerifySuiteResult> suites;
  if (seeds == 0) seeds = 1;

  {
    VerifySuiteResult suite;
    suite.name = "gradient_finite_difference";
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      const TinyFixture fx = make_random_fixture(substream_seed(91, "verify_grad", trial));
      worst = std::max(worst, max_gradient_rel_error(fx, inject_gradient_bug && trial == 0));
    }
    suite.passed = worst < 1e-3;
    suite.detail = "max relative error " + fmt(worst) + " over 100 graphs";
    suites.push_back(suite);
  }

  {
    VerifySuiteResult suite;
    suite.name = "ncore_oracle";
    bool ok = true;
    for (std::uint64_t s = 0; s < seeds && ok; ++s) {
      for (std::uint64_t trial = 0; trial < 20 && ok; ++trial) {
        Rng rng(substream_seed(92, "verify_ncore", s * 100 + trial));
        const auto records = random_table(rng, 30, 20, 0.12);
        if (records.empty()) continue;
        std::vector<RatingRecord> mine;
        try {
          mine = ncore_filter(RatingTable::from_records(records), 3).records();
        } catch (const EmptyResultError&) {
          mine.clear();
        }
        const auto oracle = naive_ncore(records, 3);
        ok = record_keys(mine) == record_keys(oracle);
      }
    }
    suite.passed = ok;
    suite.detail = ok ? "fixed-point filter matches naive oracle" : "mismatch vs naive oracle";
    suites.push_back(suite);
  }

  {
    VerifySuiteResult suite;
    suite.name = "expansion_oracle";
    bool ok = true;
    for (std::uint64_t s = 0; s < seeds && ok; ++s) {
      Rng rng(substream_seed(93, "verify_expansion", s));
      const std::size_t n_users = 30, n_items = 20;
      const auto records = random_table(rng, n_users, n_items, 0.15);
      const ItemCipher cipher = ItemCipher::from_seed(1234 + s);

      std::map<UserId, std::set<ItemId>> holdings;
      for (const auto& r : records) holdings[r.user].insert(r.item);

      ExpansionServer server;
      std::map<UserId, std::uint64_t> tags;
      std::map<std::uint64_t, UserId> tag_to_user;
      std::vector<ExpansionUpload> uploads;
      int h = 2;
      for (const auto& [user, items] : holdings) {
        const std::uint64_t tag = 0xbeef0000 + static_cast<std::uint64_t>(user);
        tags[user] = tag;
        tag_to_user[tag] = user;
        ExpansionUpload up;
        up.client_tag = tag;
        for (const ItemId item : items) up.new_digests.push_back(cipher.encrypt(item));
        up.user_embedding = Eigen::VectorXd::Constant(h, static_cast<double>(user));
        uploads.push_back(std::move(up));
      }
      server.update(uploads);

      for (const auto& [user, items] : holdings) {
        Rng slice_rng(substream_seed(94, "slice", static_cast<std::uint64_t>(user)));
        const MappingDict slice = server.build_slice(tags[user], 1'000'000, slice_rng);
        // Digest join -> set of neighbor users, recovered via the embedding payload.
        std::set<UserId> via_digests;
        for (const auto& [digest, embeddings] : slice) {
          for (const auto& e : embeddings) via_digests.insert(static_cast<UserId>(e(0)));
        }
        // Plaintext join.
        std::set<UserId> via_plaintext;
        for (const auto& [other, other_items] : holdings) {
          if (other == user) continue;
          for (const ItemId item : items) {
            if (other_items.contains(item)) {
              via_plaintext.insert(other);
              break;
            }
          }
        }
        if (via_digests != via_plaintext) {
          ok = false;
          break;
        }
      }
    }
    suite.passed = ok;
    suite.detail = ok ? "digest join equals plaintext join" : "join mismatch";
    suites.push_back(suite);
  }

  {
    VerifySuiteResult suite;
    suite.name = "noise_statistics";
    bool ok = true;
    std::string detail;
    for (std::uint64_t s = 0; s < seeds && ok; ++s) {
      Rng rng(substream_seed(95, "verify_noise", s));
      const double lambda = 0.15;
      const std::size_t n = 100000;
      double sum = 0.0, sumsq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.laplace(lambda);
        sum += x;
        sumsq += x * x;
      }
      const double mean = sum / static_cast<double>(n);
      const double var = sumsq / static_cast<double>(n) - mean * mean;
      const double target_var = 2.0 * lambda * lambda;
      const double se_mean = std::sqrt(target_var / static_cast<double>(n));
      const double se_var = std::sqrt(20.0 * std::pow(lambda, 4) / static_cast<double>(n));
      ok = std::abs(mean) <= 3.0 * se_mean && std::abs(var - target_var) <= 3.0 * se_var;
      detail = "mean " + fmt(mean) + " var " + fmt(var) + " (target " + fmt(target_var) + ")";
    }
    suite.passed = ok;
    suite.detail = detail;
    suites.push_back(suite);
  }

  {
    VerifySuiteResult suite;
    suite.name = "group_stats";
    bool ok = true;
    std::string detail = "zero-noise exact; noisy within 3 SE";
    for (std::uint64_t s = 0; s < seeds && ok; ++s) {
      Rng rng(substream_seed(96, "verify_stats", s));
      // Exactness at sigma = 0.
      std::vector<StatsContribution> contributions;
      double sum_s0 = 0.0, sum_s1 = 0.0;
      std::size_t n_s0 = 0, n_s1 = 0;
      for (std::size_t u = 0; u < 50; ++u) {
        const Group g = rng.uniform() < 0.5 ? Group::kS0 : Group::kS1;
        const double metric = -rng.uniform(0.0, 3.0);
        contributions.push_back(make_contribution(metric, g, 0.0, EpochNoise{}));
        if (g == Group::kS0) {
          sum_s0 += metric;
          ++n_s0;
        } else {
          sum_s1 += metric;
          ++n_s1;
        }
      }
      if (n_s0 == 0 || n_s1 == 0) continue;
      const AggregateResult agg = aggregate_stats(contributions, GroupStats{});
      ok = std::abs(agg.stats.p - sum_s0 / static_cast<double>(n_s0)) < 1e-12 &&
           std::abs(agg.stats.q - sum_s1 / static_cast<double>(n_s1)) < 1e-12;
      if (!ok) {
        detail = "zero-noise aggregation not exact";
        break;
      }

      // Monte-Carlo at sigma = 0.05.
      const double sigma = 0.05;
      contributions.clear();
      sum_s0 = 0.0;
      n_s0 = 0;
      for (std::size_t u = 0; u < 1000; ++u) {
        const Group g = u % 2 == 0 ? Group::kS0 : Group::kS1;
        const double metric = -rng.uniform(0.5, 2.5);
        if (g == Group::kS0) {
          sum_s0 += metric;
          ++n_s0;
        }
        EpochNoise noise;
        noise.e1 = rng.normal(0.0, sigma);
        noise.e2 = rng.normal(0.0, sigma);
        noise.e3 = rng.normal(0.0, sigma);
        noise.e4 = rng.normal(0.0, sigma);
        contributions.push_back(make_contribution(metric, g, sigma, noise));
      }
      const double truth = sum_s0 / static_cast<double>(n_s0);
      const AggregateResult agg2 = aggregate_stats(contributions, GroupStats{});
      const double n_total = static_cast<double>(contributions.size());
      const double se = std::sqrt((1.0 + truth * truth) * n_total) * sigma /
                        static_cast<double>(n_s0);
      ok = std::abs(agg2.stats.p - truth) <= 3.0 * se;
      if (!ok) detail = "noisy P off by more than 3 SE: " + fmt(agg2.stats.p - truth);
    }
    suite.passed = ok;
    suite.detail = detail;
    suites.push_back(suite);
  }

  return suites;
}

}  // namespace fairfed

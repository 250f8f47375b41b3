#include "fairsyn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fairsyn/linear_model.hpp"
#include "fairsyn/rng.hpp"

namespace fairsyn {

namespace {

std::string fmt(double v, const char* spec = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::string opt_fmt(const std::optional<double>& v, bool absolute = false) {
  if (!v.has_value()) return "nan";
  return fmt(absolute ? std::abs(*v) : *v);
}

ModelParams train_server_model(const Dataset& pooled, const InnerSolveConfig& inner) {
  const LogisticObjective obj = LogisticObjective::from_dataset(pooled, inner.lambda_theta);
  auto [theta, record] = lbfgs_minimize(
      [&obj](const Eigen::VectorXd& t, Eigen::VectorXd& g) { return obj.value_and_gradient(t, g); },
      Eigen::VectorXd::Zero(pooled.full_dim()), inner);
  (void)record;
  return ModelParams{std::move(theta)};
}

}  // namespace

std::int64_t Ns2Setting::resolve(std::int64_t n) const {
  if (is_fraction) {
    const std::int64_t v = static_cast<std::int64_t>(std::floor(value * static_cast<double>(n)));
    return std::max<std::int64_t>(1, v);
  }
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(value));
}

std::string Ns2Setting::label() const {
  if (is_fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g%%", value * 100.0);
    return buf;
  }
  return std::to_string(static_cast<std::int64_t>(value));
}

Ns2Setting parse_ns2_setting(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("ns2 setting: empty");
  Ns2Setting s;
  if (text.back() == '%') {
    s.is_fraction = true;
    s.value = std::stod(text.substr(0, text.size() - 1)) / 100.0;
  } else {
    const double v = std::stod(text);
    s.is_fraction = v <= 1.0;
    s.value = v;
  }
  if (s.value <= 0.0) throw std::invalid_argument("ns2 setting: must be positive");
  return s;
}

void ExperimentConfig::validate() const {
  if (clients < 1) throw std::invalid_argument("config: clients must be >= 1");
  if (rho_grid.empty()) throw std::invalid_argument("config: rho grid is empty");
  for (const double rho : rho_grid) {
    if (rho < 0.0) throw std::invalid_argument("config: rho must be >= 0");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("config: train fraction outside (0,1)");
  }
  if (!(ns1_fraction > 0.0 && ns1_fraction <= 1.0)) {
    throw std::invalid_argument("config: ns1 fraction outside (0,1]");
  }
  if (dp_enabled && ns2_settings.empty()) {
    throw std::invalid_argument("config: no ns2 settings");
  }
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream out;
  out << "dataset_path=" << dataset_path << '\n';
  out << "sensitive_column=" << schema.sensitive_column << '\n';
  out << "label_column=" << schema.label_column << '\n';
  for (const auto& f : schema.feature_columns) out << "feature_column=" << f << '\n';
  for (const auto& [k, v] : schema.sensitive_map) out << "sensitive_map=" << k << ':' << v << '\n';
  for (const auto& [k, v] : schema.label_map) out << "label_map=" << k << ':' << v << '\n';
  out << "bias.n_points=" << bias.n_points << '\n';
  out << "bias.full_dim=" << bias.full_dim << '\n';
  out << "bias.group_fraction=" << fmt(bias.group_fraction) << '\n';
  out << "bias.mean_separation=" << fmt(bias.mean_separation) << '\n';
  out << "bias.label_flip_bias=" << fmt(bias.label_flip_bias) << '\n';
  out << "bias.label_sharpness=" << fmt(bias.label_sharpness) << '\n';
  out << "bias.minority_label_sharpness=" << fmt(bias.minority_label_sharpness) << '\n';
  out << "bias.base_rate_shift=" << fmt(bias.base_rate_shift) << '\n';
  out << "bias.signal_mix=" << fmt(bias.signal_mix) << '\n';
  out << "add_intercept=" << add_intercept << '\n';
  out << "clients=" << clients << '\n';
  out << "train_fraction=" << fmt(train_fraction) << '\n';
  out << "seed=" << seed << '\n';
  for (const double rho : rho_grid) out << "rho=" << fmt(rho) << '\n';
  out << "mode=" << to_string(mode) << '\n';
  out << "literal_sum=" << literal_sum << '\n';
  out << "lambda_xhat=" << fmt(lambda_xhat) << '\n';
  out << "lambda_theta=" << fmt(lambda_theta) << '\n';
  out << "k_max=" << k_max << '\n';
  out << "ns1_fraction=" << fmt(ns1_fraction) << '\n';
  out << "adam.step_size=" << fmt(adam.step_size) << '\n';
  out << "adam.beta1=" << fmt(adam.beta1) << '\n';
  out << "adam.beta2=" << fmt(adam.beta2) << '\n';
  out << "adam.epsilon_hat=" << fmt(adam.epsilon_hat) << '\n';
  out << "inner.max_iterations=" << inner.max_iterations << '\n';
  out << "inner.gradient_tolerance=" << fmt(inner.gradient_tolerance) << '\n';
  out << "inner.lbfgs_memory=" << inner.lbfgs_memory << '\n';
  out << "inner.wolfe_c1=" << fmt(inner.wolfe_c1) << '\n';
  out << "inner.wolfe_c2=" << fmt(inner.wolfe_c2) << '\n';
  out << "dp_enabled=" << dp_enabled << '\n';
  out << "dp_epsilon=" << fmt(dp_epsilon) << '\n';
  out << "dp_delta=" << fmt(dp_delta) << '\n';
  out << "dp_clip_bound=" << fmt(dp_clip_bound) << '\n';
  out << "dp_split=" << fmt(dp_split.counts) << ',' << fmt(dp_split.means) << ','
      << fmt(dp_split.covariances) << '\n';
  for (const Ns2Setting& s : ns2_settings) out << "ns2=" << s.label() << '\n';
  out << "fl_rounds=" << fl_rounds << '\n';
  return out.str();
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t ExperimentConfig::digest() const { return fnv1a64(canonical()); }

CommunicationCost communication_cost(int clients, Eigen::Index full_dim,
                                     const std::vector<std::int64_t>& uplink_sizes,
                                     int t_rounds) {
  CommunicationCost cost;
  for (const std::int64_t size : uplink_sizes) {
    cost.uplink_scalars += size * static_cast<std::int64_t>(full_dim + 1);
  }
  cost.downlink_scalars = static_cast<std::int64_t>(clients) * full_dim;
  cost.iterative_fl_scalars =
      static_cast<std::int64_t>(clients) * static_cast<std::int64_t>(t_rounds) * full_dim;
  return cost;
}

const char* to_string(StageTag tag) {
  switch (tag) {
    case StageTag::Baseline: return "baseline";
    case StageTag::Syn1: return "syn1";
    case StageTag::Syn2: return "syn2";
  }
  return "unknown";
}

namespace {

struct ClientOutput {
  Dataset test;                              // standardized with the client's transform
  std::vector<ClientCellArtifacts> cells;    // one per rho
  std::vector<std::int64_t> train_sizes;     // per rho convenience (constant)
};

ClientOutput run_client(const Dataset& part, int client_index, const ExperimentConfig& cfg,
                        const DpGenerator& generator) {
  auto [train_raw, test_raw] =
      train_test_split(part, cfg.train_fraction, derive_seed(cfg.seed, 0x100 + client_index));
  auto [train, transform] = standardize(train_raw);
  Dataset test = transform.apply(test_raw);
  if (cfg.add_intercept) {
    train = append_intercept(train);
    test = append_intercept(test);
  }

  ClientOutput out{std::move(test), {}, {}};
  const std::int64_t n_train = train.size();
  const std::int64_t ns1 =
      cfg.ns1_fraction >= 1.0
          ? n_train
          : std::max<std::int64_t>(
                1, static_cast<std::int64_t>(std::floor(cfg.ns1_fraction *
                                                        static_cast<double>(n_train))));

  for (std::size_t ri = 0; ri < cfg.rho_grid.size(); ++ri) {
    ClientCellArtifacts cell;
    cell.client = client_index;
    cell.rho = cfg.rho_grid[ri];
    try {
      PenaltyConfig pcfg;
      pcfg.rho_o = cfg.rho_grid[ri];
      pcfg.lambda_xhat = cfg.lambda_xhat;
      pcfg.lambda_theta = cfg.lambda_theta;
      pcfg.mode = cfg.mode;
      pcfg.literal_sum = cfg.literal_sum;
      pcfg.k_max = cfg.k_max;
      pcfg.ns1 = ns1;
      pcfg.init = cfg.init;
      pcfg.seed = derive_seed(cfg.seed, 0x1000 + 64 * client_index + ri);

      InnerSolveConfig inner = cfg.inner;
      inner.lambda_theta = cfg.lambda_theta;

      auto [syn1, trace] = learn_stage1(train, pcfg, cfg.adam, inner);
      syn1.client_index = client_index;
      syn1.config_digest = cfg.digest();
      cell.trace = std::move(trace);
      cell.syn1 = std::move(syn1);

      if (cfg.dp_enabled) {
        for (std::size_t si = 0; si < cfg.ns2_settings.size(); ++si) {
          DpConfig dp;
          dp.epsilon = cfg.dp_epsilon;
          dp.delta = cfg.dp_delta;
          dp.clip_bound = cfg.dp_clip_bound;
          dp.budget_split = cfg.dp_split;
          dp.ns2 = cfg.ns2_settings[si].resolve(n_train);
          dp.seed = derive_seed(cfg.seed, 0x2000 + 8 * (64 * client_index + ri) + si);

          DpGenerationResult gen = generator(cell.syn1, dp);
          if (!ledger_verify(gen.ledger, dp)) {
            throw std::runtime_error("stage2 generator returned an inconsistent privacy ledger");
          }
          gen.data.client_index = client_index;
          gen.data.config_digest = cfg.digest();
          cell.syn2.push_back(ClientCellArtifacts::Syn2Item{cfg.ns2_settings[si].label(),
                                                            std::move(gen.data),
                                                            std::move(gen.ledger)});
        }
      }
    } catch (const std::exception& e) {
      cell.failed = true;
      cell.error = e.what();
    }
    out.cells.push_back(std::move(cell));
    out.train_sizes.push_back(n_train);
  }
  return out;
}

// Provenance check: the server only accepts one synthetic dataset per client,
// all from the expected stage.
void check_provenance(const std::vector<const SyntheticDataset*>& sets, const char* stage,
                      int clients) {
  std::vector<bool> seen(clients, false);
  for (const SyntheticDataset* s : sets) {
    if (s->stage != stage) {
      throw std::logic_error(std::string("server: expected ") + stage + " data, got " + s->stage);
    }
    if (s->client_index < 0 || s->client_index >= clients || seen[s->client_index]) {
      throw std::logic_error("server: bad or duplicate client index in synthetic data");
    }
    seen[s->client_index] = true;
  }
}

RunRow evaluate_cell(double rho, StageTag stage, const std::string& ns2_label,
                     const std::vector<const SyntheticDataset*>& sets, const Dataset& pooled_test,
                     const ExperimentConfig& cfg, int t_rounds) {
  RunRow row;
  row.rho = rho;
  row.stage = stage;
  row.ns2_label = ns2_label;

  check_provenance(sets, stage == StageTag::Syn2 ? "stage2" : "stage1", cfg.clients);

  std::vector<Dataset> parts;
  std::vector<std::int64_t> sizes;
  parts.reserve(sets.size());
  for (const SyntheticDataset* s : sets) {
    parts.push_back(s->to_dataset());
    sizes.push_back(s->size());
  }
  const Dataset pooled = concatenate(parts);

  InnerSolveConfig inner = cfg.inner;
  inner.lambda_theta = cfg.lambda_theta;
  const ModelParams model = train_server_model(pooled, inner);

  const FairnessReport rep = evaluate(pooled_test, model);
  row.accuracy_pct = 100.0 * rep.accuracy;
  row.cov_sp = rep.covariance_sp;
  row.cov_eo = rep.covariance_eo;
  row.spd = rep.spd;
  row.eod = rep.eod;
  row.comm = communication_cost(cfg.clients, pooled_test.full_dim(), sizes, t_rounds);
  row.server_theta.assign(model.theta.data(), model.theta.data() + model.theta.size());
  return row;
}

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, const DpGenerator& generator) {
  cfg.validate();

  const Dataset source = cfg.dataset_path.empty()
                             ? make_biased_dataset(cfg.bias, cfg.seed)
                             : load_dataset(cfg.dataset_path, cfg.schema);
  const std::vector<Dataset> parts =
      partition_clients(source, cfg.clients, derive_seed(cfg.seed, 1));

  // One worker per client, capped at max_workers; results are collected by
  // client index so scheduling cannot affect the report.
  std::vector<std::optional<ClientOutput>> outputs(cfg.clients);
  const int cap = cfg.max_workers > 0 ? std::min(cfg.max_workers, cfg.clients) : cfg.clients;
  for (int begin = 0; begin < cfg.clients; begin += cap) {
    const int end = std::min(begin + cap, cfg.clients);
    std::vector<std::future<ClientOutput>> wave;
    for (int c = begin; c < end; ++c) {
      wave.push_back(std::async(std::launch::async, [&, c] {
        return run_client(parts[c], c, cfg, generator);
      }));
    }
    for (int c = begin; c < end; ++c) outputs[c] = wave[c - begin].get();
  }

  PipelineResult result;
  result.report.mode = to_string(cfg.mode);
  result.report.seed = cfg.seed;
  result.report.config_digest = cfg.digest();
  result.report.config_canonical = cfg.canonical();
  result.report.dataset_rows = source.size();
  result.report.full_dim = source.full_dim() + (cfg.add_intercept ? 1 : 0);

  std::vector<Dataset> test_parts;
  for (const auto& out : outputs) test_parts.push_back(out->test);
  const Dataset pooled_test = concatenate(test_parts);

  for (std::size_t ri = 0; ri < cfg.rho_grid.size(); ++ri) {
    const double rho = cfg.rho_grid[ri];

    std::string cell_error;
    std::vector<const SyntheticDataset*> syn1_sets;
    for (const auto& out : outputs) {
      const ClientCellArtifacts& cell = out->cells[ri];
      if (cell.failed) cell_error = cell.error;
      syn1_sets.push_back(&cell.syn1);
    }

    const StageTag syn1_tag = rho == 0.0 ? StageTag::Baseline : StageTag::Syn1;
    if (cell_error.empty()) {
      try {
        result.report.rows.push_back(
            evaluate_cell(rho, syn1_tag, "-", syn1_sets, pooled_test, cfg, cfg.fl_rounds));
      } catch (const std::exception& e) {
        RunRow row;
        row.rho = rho; row.stage = syn1_tag; row.failed = true; row.error = e.what();
        result.report.rows.push_back(std::move(row));
      }
    } else {
      RunRow row;
      row.rho = rho; row.stage = syn1_tag; row.failed = true; row.error = cell_error;
      result.report.rows.push_back(std::move(row));
    }

    if (cfg.dp_enabled) {
      for (std::size_t si = 0; si < cfg.ns2_settings.size(); ++si) {
        const std::string label = cfg.ns2_settings[si].label();
        if (!cell_error.empty()) {
          RunRow row;
          row.rho = rho; row.stage = StageTag::Syn2; row.ns2_label = label;
          row.failed = true; row.error = cell_error;
          result.report.rows.push_back(std::move(row));
          continue;
        }
        std::vector<const SyntheticDataset*> syn2_sets;
        for (const auto& out : outputs) syn2_sets.push_back(&out->cells[ri].syn2[si].data);
        try {
          result.report.rows.push_back(evaluate_cell(rho, StageTag::Syn2, label, syn2_sets,
                                                     pooled_test, cfg, cfg.fl_rounds));
        } catch (const std::exception& e) {
          RunRow row;
          row.rho = rho; row.stage = StageTag::Syn2; row.ns2_label = label;
          row.failed = true; row.error = e.what();
          result.report.rows.push_back(std::move(row));
        }
      }
    }
  }

  for (auto& out : outputs) {
    for (auto& cell : out->cells) result.artifacts.push_back(std::move(cell));
  }
  return result;
}

namespace {

void write_tables_csv(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("emit_report: cannot write " + path.string());
  out << "rho,stage,ns2,accuracy_pct,abs_spd,abs_eod,cov_sp,cov_eo,spd,eod,"
         "uplink_scalars,downlink_scalars,iterative_fl_scalars,failed\n";
  for (const RunRow& r : report.rows) {
    out << fmt(r.rho) << ',' << to_string(r.stage) << ',' << r.ns2_label << ',';
    if (r.failed) {
      out << ",,,,,,,,,,1\n";
      continue;
    }
    out << fmt(r.accuracy_pct, "%.4f") << ',' << opt_fmt(r.spd, true) << ','
        << opt_fmt(r.eod, true) << ',' << fmt(r.cov_sp) << ',' << fmt(r.cov_eo) << ','
        << opt_fmt(r.spd) << ',' << opt_fmt(r.eod) << ',' << r.comm.uplink_scalars << ','
        << r.comm.downlink_scalars << ',' << r.comm.iterative_fl_scalars << ",0\n";
  }
}

void write_trend_csv(const RunReport& report, const std::filesystem::path& dir) {
  // One series per (stage, ns2 setting); the baseline row doubles as the
  // rho = 0 point of the syn1 series.
  auto series_key = [](const RunRow& r) {
    return r.stage == StageTag::Syn2 ? std::string("syn2_") + r.ns2_label : std::string("syn1");
  };
  std::vector<std::string> names;
  for (const RunRow& r : report.rows) {
    const std::string key = series_key(r);
    bool found = false;
    for (const std::string& n : names) found = found || n == key;
    if (!found) names.push_back(key);
  }
  for (const std::string& name : names) {
    std::string file_name = "trend_" + name + ".csv";
    for (char& c : file_name) {
      if (c == '%') c = 'p';
    }
    std::ofstream out(dir / file_name);
    if (!out) throw std::runtime_error("emit_report: cannot write trend csv");
    out << "rho,accuracy_pct,cov_sp,cov_eo,abs_spd,abs_eod\n";
    for (const RunRow& r : report.rows) {
      if (series_key(r) != name || r.failed) continue;
      out << fmt(r.rho) << ',' << fmt(r.accuracy_pct, "%.4f") << ',' << fmt(r.cov_sp) << ','
          << fmt(r.cov_eo) << ',' << opt_fmt(r.spd, true) << ',' << opt_fmt(r.eod, true) << '\n';
    }
  }
}

nlohmann::ordered_json row_to_json(const RunRow& r) {
  nlohmann::ordered_json j;
  j["rho"] = r.rho;
  j["stage"] = to_string(r.stage);
  j["ns2"] = r.ns2_label;
  j["failed"] = r.failed;
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  j["accuracy_pct"] = r.accuracy_pct;
  j["cov_sp"] = r.cov_sp;
  j["cov_eo"] = r.cov_eo;
  if (r.spd.has_value()) j["spd"] = *r.spd; else j["spd"] = nullptr;
  if (r.eod.has_value()) j["eod"] = *r.eod; else j["eod"] = nullptr;
  j["uplink_scalars"] = r.comm.uplink_scalars;
  j["downlink_scalars"] = r.comm.downlink_scalars;
  j["iterative_fl_scalars"] = r.comm.iterative_fl_scalars;
  j["server_theta"] = r.server_theta;
  return j;
}

RunRow row_from_json(const nlohmann::ordered_json& j) {
  RunRow r;
  r.rho = j.at("rho").get<double>();
  const std::string stage = j.at("stage").get<std::string>();
  r.stage = stage == "baseline" ? StageTag::Baseline
                                : (stage == "syn1" ? StageTag::Syn1 : StageTag::Syn2);
  r.ns2_label = j.at("ns2").get<std::string>();
  r.failed = j.at("failed").get<bool>();
  if (r.failed) {
    r.error = j.value("error", "");
    return r;
  }
  r.accuracy_pct = j.at("accuracy_pct").get<double>();
  r.cov_sp = j.at("cov_sp").get<double>();
  r.cov_eo = j.at("cov_eo").get<double>();
  if (!j.at("spd").is_null()) r.spd = j.at("spd").get<double>();
  if (!j.at("eod").is_null()) r.eod = j.at("eod").get<double>();
  r.comm.uplink_scalars = j.at("uplink_scalars").get<std::int64_t>();
  r.comm.downlink_scalars = j.at("downlink_scalars").get<std::int64_t>();
  r.comm.iterative_fl_scalars = j.at("iterative_fl_scalars").get<std::int64_t>();
  r.server_theta = j.at("server_theta").get<std::vector<double>>();
  return r;
}

nlohmann::ordered_json report_to_json(const RunReport& report) {
  nlohmann::ordered_json doc;
  doc["mode"] = report.mode;
  doc["seed"] = report.seed;
  doc["config_digest"] = report.config_digest;
  doc["dataset_rows"] = report.dataset_rows;
  doc["full_dim"] = report.full_dim;
  doc["config"] = report.config_canonical;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const RunRow& r : report.rows) doc["rows"].push_back(row_to_json(r));
  return doc;
}

}  // namespace

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
  if (report.rows.empty()) throw std::invalid_argument("emit_report: empty report");
  std::filesystem::create_directories(dir);
  write_tables_csv(report, dir / "tables.csv");
  write_trend_csv(report, dir);
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("emit_report: cannot write manifest");
  out << report_to_json(report).dump(2) << '\n';
}

void save_report_json(const RunReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_report_json: cannot write " + path.string());
  out << report_to_json(report).dump(2) << '\n';
}

RunReport load_report_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_report_json: cannot open " + path.string());
  nlohmann::ordered_json doc;
  in >> doc;
  RunReport report;
  report.mode = doc.at("mode").get<std::string>();
  report.seed = doc.at("seed").get<std::uint64_t>();
  report.config_digest = doc.at("config_digest").get<std::uint64_t>();
  report.dataset_rows = doc.at("dataset_rows").get<std::int64_t>();
  report.full_dim = doc.at("full_dim").get<Eigen::Index>();
  report.config_canonical = doc.at("config").get<std::string>();
  for (const auto& j : doc.at("rows")) report.rows.push_back(row_from_json(j));
  return report;
}

}  // namespace fairsyn

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "fairsyn/harness.hpp"
#include "fairsyn/linear_model.hpp"

namespace fs = std::filesystem;
using namespace fairsyn;

namespace {

struct SchemaFlags {
  std::string sensitive = "group";
  std::string label = "outcome";
  std::vector<std::string> features;
  std::vector<std::string> sensitive_zero, sensitive_one, label_neg, label_pos;

  void attach(CLI::App* cmd) {
    cmd->add_option("--sensitive", sensitive, "Sensitive column name");
    cmd->add_option("--label", label, "Label column name");
    cmd->add_option("--features", features,
                    "Feature column names (default: all remaining columns)");
    cmd->add_option("--sensitive-zero", sensitive_zero, "Raw values mapping to s=0");
    cmd->add_option("--sensitive-one", sensitive_one, "Raw values mapping to s=1");
    cmd->add_option("--label-neg", label_neg, "Raw values mapping to y=-1");
    cmd->add_option("--label-pos", label_pos, "Raw values mapping to y=+1");
  }

  ColumnSchema to_schema() const {
    ColumnSchema s;
    s.sensitive_column = sensitive;
    s.label_column = label;
    s.feature_columns = features;
    for (const auto& v : sensitive_zero) s.sensitive_map[v] = 0;
    for (const auto& v : sensitive_one) s.sensitive_map[v] = 1;
    for (const auto& v : label_neg) s.label_map[v] = -1;
    for (const auto& v : label_pos) s.label_map[v] = 1;
    return s;
  }
};

void save_model_json(const Eigen::VectorXd& theta, const fs::path& path) {
  nlohmann::ordered_json doc;
  doc["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

ModelParams load_model_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  nlohmann::json doc;
  in >> doc;
  const std::vector<double> values = doc.at("theta").get<std::vector<double>>();
  Eigen::VectorXd theta(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) theta[i] = values[i];
  return ModelParams{std::move(theta)};
}

void print_fairness(const FairnessReport& rep) {
  std::printf("accuracy       %.4f%%\n", 100.0 * rep.accuracy);
  std::printf("cov_sp         %.6f\n", rep.covariance_sp);
  std::printf("cov_eo         %.6f\n", rep.covariance_eo);
  if (rep.spd.has_value()) {
    std::printf("spd            %.6f   |spd| %.6f\n", *rep.spd, std::abs(*rep.spd));
  } else {
    std::printf("spd            undefined (empty sensitive group)\n");
  }
  if (rep.eod.has_value()) {
    std::printf("eod            %.6f   |eod| %.6f\n", *rep.eod, std::abs(*rep.eod));
  } else {
    std::printf("eod            undefined (empty {s, y=+1} group)\n");
  }
}

void print_report_table(const RunReport& report) {
  std::printf("%-8s %-9s %-6s %12s %10s %10s %10s %12s\n", "rho", "stage", "ns2", "accuracy(%)",
              "|SPD|", "|EOD|", "cov_sp", "uplink");
  for (const RunRow& r : report.rows) {
    if (r.failed) {
      std::printf("%-8g %-9s %-6s FAILED: %s\n", r.rho, to_string(r.stage), r.ns2_label.c_str(),
                  r.error.c_str());
      continue;
    }
    std::printf("%-8g %-9s %-6s %12.4f %10.4f %10.4f %10.4f %12lld\n", r.rho, to_string(r.stage),
                r.ns2_label.c_str(), r.accuracy_pct,
                r.spd.has_value() ? std::abs(*r.spd) : std::nan(""),
                r.eod.has_value() ? std::abs(*r.eod) : std::nan(""), r.cov_sp,
                static_cast<long long>(r.comm.uplink_scalars));
  }
}

void write_run_artifacts(const PipelineResult& result, const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir / "traces");
  fs::create_directories(dir / "synthetic");
  fs::create_directories(dir / "ledgers");
  fs::create_directories(dir / "models");

  emit_report(result.report, dir);
  save_report_json(result.report, dir / "report.json");

  DpConfig dp;  // budget echo for ledger files
  dp.epsilon = cfg.dp_epsilon;
  dp.delta = cfg.dp_delta;
  dp.clip_bound = cfg.dp_clip_bound;
  dp.budget_split = cfg.dp_split;
  dp.ns2 = 1;

  char tag[128];
  for (const ClientCellArtifacts& cell : result.artifacts) {
    if (cell.failed) continue;
    std::snprintf(tag, sizeof(tag), "client%d_rho%g", cell.client, cell.rho);
    write_trace_csv(cell.trace, dir / "traces" / (std::string(tag) + ".csv"));
    save_dataset(cell.syn1.to_dataset(), dir / "synthetic" / (std::string(tag) + "_stage1.csv"));
    for (const auto& item : cell.syn2) {
      std::string label = item.label;
      for (char& c : label) {
        if (c == '%') c = 'p';
      }
      save_dataset(item.data.to_dataset(),
                   dir / "synthetic" / (std::string(tag) + "_stage2_" + label + ".csv"));
      write_ledger_json(item.ledger, dp,
                        dir / "ledgers" / (std::string(tag) + "_" + label + ".json"));
    }
  }

  for (const RunRow& r : result.report.rows) {
    if (r.failed) continue;
    Eigen::VectorXd theta(r.server_theta.size());
    for (std::size_t i = 0; i < r.server_theta.size(); ++i) theta[i] = r.server_theta[i];
    std::string label = r.ns2_label;
    for (char& c : label) {
      if (c == '%') c = 'p';
    }
    std::snprintf(tag, sizeof(tag), "server_%s_rho%g_%s.json", to_string(r.stage), r.rho,
                  label.c_str());
    save_model_json(theta, dir / "models" / tag);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage synthetic-data pipeline for fair, private collaborative learning"};
  app.require_subcommand(1);

  // ---- run ----------------------------------------------------------------
  auto* run = app.add_subcommand("run", "Run the full client/server pipeline and report");
  ExperimentConfig cfg;
  SchemaFlags run_schema;
  std::vector<std::string> ns2_raw;
  std::string mode_name = "sp";
  std::string init_name = "auto";
  std::vector<double> split_raw;

  run->set_config("--config", "", "INI config file (key = value; flags override)");
  run->add_option("--data", cfg.dataset_path, "Dataset CSV (omit to use the biased generator)");
  run_schema.attach(run);
  run->add_option("--gen-points", cfg.bias.n_points, "Generator: number of points");
  run->add_option("--gen-dim", cfg.bias.full_dim, "Generator: full feature dimension n");
  run->add_option("--gen-separation", cfg.bias.mean_separation, "Generator: group mean gap");
  run->add_option("--gen-flip-bias", cfg.bias.label_flip_bias, "Generator: label flip rate");
  run->add_flag("--intercept", cfg.add_intercept, "Append a constant-1 feature");
  run->add_option("--clients,-k", cfg.clients, "Client count");
  run->add_option("--train-fraction", cfg.train_fraction, "Training fraction per client");
  run->add_option("--seed", cfg.seed, "Master seed");
  run->add_option("--rho", cfg.rho_grid, "Penalty parameter sweep values");
  run->add_option("--mode", mode_name, "Fairness mode: sp | eo | sp+eo");
  run->add_flag("--literal-sum", cfg.literal_sum,
                "sp+eo only: literal sum (shared terms counted twice)");
  run->add_option("--lambda-xhat", cfg.lambda_xhat, "Outer regularization");
  run->add_option("--lambda-theta", cfg.lambda_theta, "Inner regularization");
  run->add_option("--k-max", cfg.k_max, "Outer iterations");
  run->add_option("--ns1-fraction", cfg.ns1_fraction, "Stage-1 size as a fraction of N");
  run->add_option("--init", init_name, "Stage-1 init: auto | from-real | stratum-mean");
  run->add_option("--adam-step", cfg.adam.step_size, "Adam step size");
  run->add_option("--inner-max-iterations", cfg.inner.max_iterations, "Inner L-BFGS cap");
  run->add_option("--inner-tolerance", cfg.inner.gradient_tolerance, "Inner gradient tolerance");
  auto* no_dp = run->add_flag("--no-dp", "Skip the second stage entirely");
  run->add_option("--epsilon", cfg.dp_epsilon, "DP epsilon");
  run->add_option("--delta", cfg.dp_delta, "DP delta");
  run->add_option("--clip-bound", cfg.dp_clip_bound, "DP per-feature clip bound");
  run->add_option("--budget-split", split_raw, "DP budget weights: counts means covariances");
  run->add_option("--ns2", ns2_raw, "Stage-2 sizes, e.g. 100% 10% or absolute counts");
  run->add_option("--fl-rounds", cfg.fl_rounds, "t for the iterative-FL comparison figure");
  run->add_option("--out", cfg.output_dir, "Output directory");
  run->add_option("--max-workers", cfg.max_workers, "Worker cap (0 = one per client)");

  // ---- gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Write a seeded biased dataset CSV");
  BiasSpec gen_spec;
  std::uint64_t gen_seed = 7;
  std::string gen_out = "biased.csv";
  gen->add_option("--points", gen_spec.n_points, "Number of points");
  gen->add_option("--dim", gen_spec.full_dim, "Full feature dimension n");
  gen->add_option("--group-fraction", gen_spec.group_fraction, "P(s=1)");
  gen->add_option("--separation", gen_spec.mean_separation, "Group mean gap");
  gen->add_option("--flip-bias", gen_spec.label_flip_bias, "Label flip rate toward s=1");
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output CSV path");

  // ---- stage1 -------------------------------------------------------------
  auto* st1 = app.add_subcommand("stage1", "Learn fairness-mitigated synthetic data");
  SchemaFlags st1_schema;
  std::string st1_data, st1_out = "stage1_out";
  std::string st1_mode = "sp";
  PenaltyConfig st1_cfg;
  AdamConfig st1_adam;
  InnerSolveConfig st1_inner;
  double st1_ns1_fraction = 1.0;
  bool st1_no_standardize = false;
  st1->add_option("--data", st1_data, "Input dataset CSV")->required();
  st1_schema.attach(st1);
  st1->add_option("--rho", st1_cfg.rho_o, "Penalty parameter");
  st1->add_option("--mode", st1_mode, "Fairness mode: sp | eo | sp+eo");
  st1->add_option("--lambda-xhat", st1_cfg.lambda_xhat, "Outer regularization");
  st1->add_option("--lambda-theta", st1_cfg.lambda_theta, "Inner regularization");
  st1->add_option("--k-max", st1_cfg.k_max, "Outer iterations");
  st1->add_option("--ns1-fraction", st1_ns1_fraction, "Synthetic size fraction of N");
  st1->add_option("--adam-step", st1_adam.step_size, "Adam step size");
  st1->add_option("--seed", st1_cfg.seed, "Seed");
  st1->add_flag("--no-standardize", st1_no_standardize, "Skip feature standardization");
  st1->add_option("--out", st1_out, "Output directory");

  // ---- stage2 -------------------------------------------------------------
  auto* st2 = app.add_subcommand("stage2", "Generate DP synthetic data from a dataset CSV");
  SchemaFlags st2_schema;
  std::string st2_data, st2_out = "stage2_out";
  DpConfig st2_cfg;
  std::string st2_ns2 = "100%";
  std::vector<double> st2_split;
  st2->add_option("--data", st2_data, "Input dataset CSV (stage-1 output)")->required();
  st2_schema.attach(st2);
  st2->add_option("--epsilon", st2_cfg.epsilon, "DP epsilon");
  st2->add_option("--delta", st2_cfg.delta, "DP delta");
  st2->add_option("--ns2", st2_ns2, "Output size (fraction, % or absolute)");
  st2->add_option("--clip-bound", st2_cfg.clip_bound, "Per-feature clip bound");
  st2->add_option("--budget-split", st2_split, "Budget weights: counts means covariances");
  st2->add_option("--seed", st2_cfg.seed, "Seed");
  st2->add_option("--out", st2_out, "Output directory");

  // ---- evaluate -----------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "Evaluate a saved model on a dataset");
  SchemaFlags ev_schema;
  std::string ev_data, ev_model;
  ev->add_option("--data", ev_data, "Dataset CSV")->required();
  ev->add_option("--model", ev_model, "Model JSON with a 'theta' array")->required();
  ev_schema.attach(ev);

  // ---- report -------------------------------------------------------------
  auto* rep = app.add_subcommand("report", "Re-emit CSV tables from a saved report.json");
  std::string rep_in, rep_out = "report_out";
  rep->add_option("--input", rep_in, "report.json from a previous run")->required();
  rep->add_option("--out", rep_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      cfg.schema = run_schema.to_schema();
      cfg.mode = fairness_mode_from_string(mode_name);
      if (init_name == "auto") cfg.init = Stage1Init::Auto;
      else if (init_name == "from-real") cfg.init = Stage1Init::FromReal;
      else if (init_name == "stratum-mean") cfg.init = Stage1Init::StratumMeanJitter;
      else throw std::invalid_argument("unknown init policy '" + init_name + "'");
      if (no_dp->count() > 0) cfg.dp_enabled = false;
      if (!ns2_raw.empty()) {
        cfg.ns2_settings.clear();
        for (const std::string& s : ns2_raw) cfg.ns2_settings.push_back(parse_ns2_setting(s));
      }
      if (!split_raw.empty()) {
        if (split_raw.size() != 3) throw std::invalid_argument("--budget-split needs 3 weights");
        cfg.dp_split = BudgetSplit{split_raw[0], split_raw[1], split_raw[2]};
      }

      const PipelineResult result = run_pipeline(cfg);
      write_run_artifacts(result, cfg);
      print_report_table(result.report);
      std::printf("\nwrote %s\n", (fs::path(cfg.output_dir) / "tables.csv").c_str());
    } else if (gen->parsed()) {
      const Dataset ds = make_biased_dataset(gen_spec, gen_seed);
      save_dataset(ds, gen_out);
      std::printf("wrote %s (%lld rows, n = %d)\n", gen_out.c_str(),
                  static_cast<long long>(ds.size()), gen_spec.full_dim);
    } else if (st1->parsed()) {
      const Dataset raw = load_dataset(st1_data, st1_schema.to_schema());
      const Dataset ds = st1_no_standardize ? raw : standardize(raw).first;
      st1_cfg.mode = fairness_mode_from_string(st1_mode);
      st1_cfg.ns1 = st1_ns1_fraction >= 1.0
                        ? ds.size()
                        : std::max<std::int64_t>(
                              1, static_cast<std::int64_t>(st1_ns1_fraction *
                                                           static_cast<double>(ds.size())));
      st1_inner.lambda_theta = st1_cfg.lambda_theta;
      auto [syn, trace] = learn_stage1(ds, st1_cfg, st1_adam, st1_inner);
      fs::create_directories(st1_out);
      save_dataset(syn.to_dataset(), fs::path(st1_out) / "stage1.csv");
      write_trace_csv(trace, fs::path(st1_out) / "trace.csv");
      std::printf("wrote %s (%lld points, %zu outer iterations)\n",
                  (fs::path(st1_out) / "stage1.csv").c_str(),
                  static_cast<long long>(syn.size()), trace.rows.size());
    } else if (st2->parsed()) {
      const Dataset ds = load_dataset(st2_data, st2_schema.to_schema());
      SyntheticDataset syn = SyntheticDataset::like(ds);
      syn.stage = "stage1";
      syn.xhat = ds.features();
      for (std::int64_t i = 0; i < ds.size(); ++i) {
        syn.pairs.emplace_back(ds.sensitive()[i], ds.labels()[i]);
      }
      st2_cfg.ns2 = parse_ns2_setting(st2_ns2).resolve(ds.size());
      if (!st2_split.empty()) {
        if (st2_split.size() != 3) throw std::invalid_argument("--budget-split needs 3 weights");
        st2_cfg.budget_split = BudgetSplit{st2_split[0], st2_split[1], st2_split[2]};
      }
      const DpGenerationResult result = generate_dp(syn, st2_cfg);
      fs::create_directories(st2_out);
      save_dataset(result.data.to_dataset(), fs::path(st2_out) / "stage2.csv");
      write_ledger_json(result.ledger, st2_cfg, fs::path(st2_out) / "ledger.json");
      std::printf("wrote %s (%lld points, ledger eps = %.6f, delta = %.3g)\n",
                  (fs::path(st2_out) / "stage2.csv").c_str(),
                  static_cast<long long>(result.data.size()), result.ledger.total_epsilon(),
                  result.ledger.total_delta());
    } else if (ev->parsed()) {
      const Dataset ds = load_dataset(ev_data, ev_schema.to_schema());
      const ModelParams model = load_model_json(ev_model);
      print_fairness(evaluate(ds, model));
    } else if (rep->parsed()) {
      const RunReport report = load_report_json(rep_in);
      emit_report(report, rep_out);
      print_report_table(report);
      std::printf("\nwrote %s\n", (fs::path(rep_out) / "tables.csv").c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gwinv/common.hpp"
#include "gwinv/direct.hpp"
#include "gwinv/experiments.hpp"
#include "gwinv/field.hpp"
#include "gwinv/invert.hpp"
#include "gwinv/report.hpp"
#include "gwinv/rng.hpp"
#include "gwinv/simulator.hpp"
#include "gwinv/surrogate.hpp"

namespace {

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::json line;
  line["error"] = kind;
  line["message"] = message;
  std::cerr << line.dump() << "\n";
}

std::string joined(const gwinv::ExperimentConfig& cfg,
                   const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

std::string surrogate_checkpoint(const gwinv::ExperimentConfig& cfg) {
  return cfg.surrogate_path.empty() ? joined(cfg, "surrogate.txt")
                                    : cfg.surrogate_path;
}

std::string paramnet_checkpoint(const gwinv::ExperimentConfig& cfg) {
  return cfg.paramnet_path.empty() ? joined(cfg, "paramnet.txt")
                                   : cfg.paramnet_path;
}

gwinv::TgnnSurrogate load_surrogate_checked(
    const gwinv::ExperimentConfig& cfg) {
  const std::string path = surrogate_checkpoint(cfg);
  if (!std::filesystem::exists(path))
    throw gwinv::IoError("surrogate checkpoint not found: " + path +
                         " (run 'gwinv train-surrogate' first)");
  return gwinv::load_surrogate(path);
}

gwinv::ParamNet load_paramnet_checked(const gwinv::ExperimentConfig& cfg) {
  const std::string path = paramnet_checkpoint(cfg);
  if (!std::filesystem::exists(path))
    throw gwinv::IoError("parameter-network checkpoint not found: " + path +
                         " (run 'gwinv pretrain-paramnet' first)");
  return gwinv::load_param_net(path);
}

int run(int argc, char** argv) {
  CLI::App app{
      "Estimates a heterogeneous log-conductivity field of a transient "
      "groundwater-flow model from sparse noisy measurements."};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  bool has_seed = false;
  app.add_option("--config", config_path, "Experiment configuration (INI)");
  app.add_flag("--timings", "Report wall-clock timings in outputs");
  app.add_option("--seed", seed_override, "Override the configured seed")
      ->each([&](const std::string&) { has_seed = true; });

  CLI::App* gen_field = app.add_subcommand(
      "gen-field", "Draw a random log-conductivity field and write it as CSV");
  std::string gen_out;
  gen_field->add_option("--out", gen_out, "Output CSV path");

  CLI::App* simulate = app.add_subcommand(
      "simulate",
      "Simulate the reference case and write heads and observations");

  CLI::App* train = app.add_subcommand(
      "train-surrogate",
      "Train the physics-constrained head surrogate and save a checkpoint");

  CLI::App* pretrain = app.add_subcommand(
      "pretrain-paramnet",
      "Pretrain the coordinate-to-lnK parameter network and save a "
      "checkpoint");

  CLI::App* invert =
      app.add_subcommand("invert", "Estimate the field from observations");
  std::string method;
  invert->add_option("--method", method, "Inversion method")
      ->required()
      ->check(CLI::IsMember({"ies", "gradient", "gradient-ensemble",
                             "training", "tgnn-geo", "pinn-no-geo"}));

  CLI::App* experiment =
      app.add_subcommand("experiment", "Run a multi-case study");
  std::string experiment_name;
  experiment->add_option("name", experiment_name, "Study name")
      ->required()
      ->check(CLI::IsMember({"sweep", "prediction", "highres", "prior"}));
  std::vector<int> sweep_sizes = {10, 50, 100};
  int sweep_repeats = 10;
  experiment->add_option("--sizes", sweep_sizes, "Ensemble sizes to compare");
  experiment->add_option("--repeats", sweep_repeats,
                         "Independent repeats per ensemble size");
  std::string split_method = "ies";
  int split_step = 30;
  experiment->add_option("--method", split_method,
                         "Method for the prediction study");
  experiment->add_option("--split", split_step,
                         "Last observed step in the prediction study");

  CLI::App* report_cmd =
      app.add_subcommand("report", "Validate and render run reports");
  std::vector<std::string> report_paths;
  report_cmd->add_option("paths", report_paths, "Report JSON files")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    std::cerr << "run 'gwinv --help' for usage\n";
    return 2;
  }

  gwinv::ExperimentConfig cfg;
  if (!config_path.empty()) cfg = gwinv::load_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  if (app.count("--timings") > 0) cfg.timings = true;

  if (gen_field->parsed()) {
    const gwinv::KleBasis basis =
        gwinv::build_kle(cfg.cov, cfg.problem.grid, cfg.n_terms);
    const gwinv::Rng root(cfg.seed);
    gwinv::Rng rng = root.substream("truth-field");
    const Eigen::VectorXd xi = gwinv::sample_xi(rng, basis.n_terms());
    const std::string path =
        gen_out.empty() ? joined(cfg, "field.csv") : gen_out;
    gwinv::save_field_csv(cfg.problem.grid, basis.evaluate_grid(xi), path);
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  if (simulate->parsed()) {
    const gwinv::KleBasis basis =
        gwinv::build_kle(cfg.cov, cfg.problem.grid, cfg.n_terms);
    const gwinv::ReferenceCase ref = gwinv::make_reference_case(cfg, basis);
    const std::string field_path = joined(cfg, "truth_field.csv");
    gwinv::save_field_csv(cfg.problem.grid, ref.lnK_cells, field_path);
    const std::string heads_path = joined(cfg, "heads.bin");
    gwinv::save_history_binary(ref.history, heads_path);
    const std::string obs_path = joined(cfg, "observations.csv");
    gwinv::save_observations_csv(ref.observations, obs_path);
    std::cout << "wrote " << field_path << "\n"
              << "wrote " << heads_path << "\n"
              << "wrote " << obs_path << " (" << ref.observations.size()
              << " records)\n";
    return 0;
  }

  if (train->parsed()) {
    const gwinv::KleBasis basis =
        gwinv::build_kle(cfg.cov, cfg.problem.grid, cfg.n_terms);
    const gwinv::Rng root(cfg.seed);
    gwinv::Rng data_rng = root.substream("surrogate-data");
    const gwinv::TrainingData data = gwinv::generate_training_data(
        cfg.problem, basis, cfg.surrogate.n_fields, data_rng,
        cfg.surrogate.labels_per_field);
    gwinv::Rng colloc_rng = root.substream("surrogate-collocation");
    const gwinv::CollocationSet colloc = gwinv::sample_collocation(
        cfg.problem, basis, cfg.surrogate.n_pde, cfg.surrogate.n_bc,
        cfg.surrogate.n_ic, colloc_rng);
    gwinv::Rng train_rng = root.substream("surrogate-train");
    gwinv::TgnnSurrogate surr =
        gwinv::train_surrogate(cfg.problem, basis, colloc, data,
                               gwinv::LossWeights{}, cfg.surrogate.schedule,
                               train_rng);
    const std::string path = surrogate_checkpoint(cfg);
    const std::string basis_path =
        cfg.basis_path.empty() ? joined(cfg, "basis.txt") : cfg.basis_path;
    gwinv::save_surrogate(surr, path, basis_path);
    const std::string curve_path = joined(cfg, "surrogate_loss.csv");
    gwinv::save_loss_curve_csv(surr.loss_curve, curve_path);
    std::cout << "wrote " << path << "\n"
              << "wrote " << curve_path << "\n";
    return 0;
  }

  if (pretrain->parsed()) {
    const gwinv::KleBasis basis =
        gwinv::build_kle(cfg.cov, cfg.problem.grid, cfg.n_terms);
    const gwinv::Rng root(cfg.seed);
    gwinv::Rng rng = root.substream("paramnet");
    gwinv::ParamNet pn = gwinv::pretrain_param_net(basis, cfg.paramnet, rng);
    const std::string path = paramnet_checkpoint(cfg);
    const std::string basis_path =
        cfg.basis_path.empty() ? joined(cfg, "basis.txt") : cfg.basis_path;
    gwinv::save_param_net(pn, path, basis_path);
    std::cout << "wrote " << path << " (held-out rmse "
              << gwinv::fmt17(pn.heldout_rmse) << ")\n";
    return 0;
  }

  if (invert->parsed()) {
    gwinv::RunReport report;
    if (method == "tgnn-geo") {
      const gwinv::ParamNet pn = load_paramnet_checked(cfg);
      report = gwinv::run_reference_case(cfg, method, nullptr, &pn);
    } else if (method == "pinn-no-geo") {
      report = gwinv::run_reference_case(cfg, method, nullptr, nullptr);
    } else {
      const gwinv::TgnnSurrogate surr = load_surrogate_checked(cfg);
      report = gwinv::run_reference_case(cfg, method, &surr, nullptr);
    }
    std::cout << gwinv::render_report_table({report});
    return 0;
  }

  if (experiment->parsed()) {
    if (experiment_name == "sweep") {
      const gwinv::TgnnSurrogate surr = load_surrogate_checked(cfg);
      const std::vector<gwinv::SweepRow> rows =
          gwinv::run_ensemble_size_sweep(cfg, surr, sweep_sizes,
                                         sweep_repeats);
      const std::string path = joined(cfg, "ensemble_sweep.csv");
      gwinv::save_sweep_csv(rows, path);
      std::cout << "wrote " << path << "\n";
      return 0;
    }
    if (experiment_name == "prediction") {
      const gwinv::TgnnSurrogate surr = load_surrogate_checked(cfg);
      const gwinv::RunReport report =
          gwinv::run_prediction_split(cfg, surr, split_method, split_step);
      std::cout << gwinv::render_report_table({report});
      return 0;
    }
    if (experiment_name == "highres") {
      const gwinv::TgnnSurrogate surr = load_surrogate_checked(cfg);
      const auto reports = gwinv::run_high_resolution_case(cfg, surr);
      std::cout << gwinv::render_report_table(
          {reports[0], reports[1], reports[2]});
      return 0;
    }
    const gwinv::TgnnSurrogate surr = load_surrogate_checked(cfg);
    const gwinv::ParamNet pn = load_paramnet_checked(cfg);
    const std::vector<gwinv::PriorVariantRow> rows =
        gwinv::run_prior_sensitivity(cfg, &surr, &pn,
                                     {"var0.5", "var2.0", "eta204"},
                                     {"ies", "tgnn-geo"}, true);
    const std::string path = joined(cfg, "prior_sensitivity.csv");
    gwinv::save_prior_csv(rows, path);
    std::cout << "wrote " << path << "\n";
    return 0;
  }

  std::vector<gwinv::RunReport> reports;
  for (const std::string& path : report_paths) {
    const std::string text = gwinv::read_text_file(path);
    const std::string problem = gwinv::validate_report_json(text);
    if (!problem.empty())
      throw gwinv::ConfigError("report " + path + ": " + problem);
    reports.push_back(gwinv::report_from_json(text));
  }
  std::cout << gwinv::render_report_table(reports);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  gwinv::tune_allocator();
  try {
    return run(argc, argv);
  } catch (const gwinv::ConfigError& e) {
    print_error("config", e.what());
    return 3;
  } catch (const gwinv::IoError& e) {
    print_error("io", e.what());
    return 3;
  } catch (const gwinv::NumericError& e) {
    print_error("numeric", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}

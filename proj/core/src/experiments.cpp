#include "gwinv/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <utility>

#include "gwinv/common.hpp"

namespace gwinv {

namespace {

class WallTimer {
 public:
  WallTimer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  for (const std::string& token : split(text, ',')) {
    const std::string item = trim(token);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_int(item)));
  }
  if (out.empty())
    throw ConfigError("expected a comma-separated integer list, got '" + text +
                      "'");
  return out;
}

std::string join_int_list(const std::vector<int>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out << ",";
    out << values[i];
  }
  return out.str();
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

double rmse(const Eigen::VectorXd& lnK_ref, const Eigen::VectorXd& lnK_est) {
  if (lnK_ref.size() != lnK_est.size() || lnK_ref.size() == 0)
    throw ConfigError("rmse: field sizes differ or are empty");
  return std::sqrt((lnK_ref - lnK_est).squaredNorm() /
                   static_cast<double>(lnK_ref.size()));
}

std::vector<std::pair<double, double>> observation_layout(
    const std::string& name) {
  const double l = 1020.0;
  std::vector<std::pair<double, double>> points;
  if (name == "5") {
    points = {{0.25 * l, 0.25 * l},
              {0.75 * l, 0.25 * l},
              {0.50 * l, 0.50 * l},
              {0.25 * l, 0.75 * l},
              {0.75 * l, 0.75 * l}};
  } else if (name == "9") {
    for (double fy : {0.25, 0.50, 0.75})
      for (double fx : {0.25, 0.50, 0.75}) points.emplace_back(fx * l, fy * l);
  } else if (name == "12") {
    for (double fy : {0.25, 0.50, 0.75})
      for (double fx : {0.2, 0.4, 0.6, 0.8}) points.emplace_back(fx * l, fy * l);
  } else if (name == "16") {
    for (double fy : {0.2, 0.4, 0.6, 0.8})
      for (double fx : {0.2, 0.4, 0.6, 0.8}) points.emplace_back(fx * l, fy * l);
  } else {
    throw ConfigError("unknown observation layout '" + name +
                      "' (expected 5, 9, 12, or 16)");
  }
  return points;
}

namespace {

struct SectionKeys {
  const char* section;
  std::set<std::string> keys;
};

const std::vector<SectionKeys>& known_keys() {
  static const std::vector<SectionKeys> keys = {
      {"problem",
       {"nx", "ny", "x0", "y0", "lx", "ly", "ss", "t_end", "n_t", "h_left",
        "h_right", "h_init"}},
      {"field", {"variance", "eta_x", "eta_y", "exponent", "mean", "n_terms"}},
      {"observations",
       {"layout", "noise_std", "t_first", "t_last", "logk", "logk_noise_std"}},
      {"surrogate",
       {"hidden", "n_fields", "n_pde", "n_bc", "n_ic", "labels_per_field",
        "epochs", "lr", "batch_pde", "batch_data", "batch_bc", "batch_ic",
        "log_every"}},
      {"invert",
       {"eps1", "eps2", "i_max", "lambda0", "lambda_min", "lambda_max",
        "max_retries", "ensemble_size"}},
      {"training", {"lr", "iterations"}},
      {"paramnet",
       {"n_realizations", "epochs", "lr", "batch", "hidden",
        "samples_per_field", "n_heldout"}},
      {"direct",
       {"n_f", "n_b", "n_i", "epochs", "lr", "batch_f", "h_hidden", "k_hidden",
        "prior_penalty", "log_every"}},
      {"output",
       {"out_dir", "basis_path", "surrogate_path", "paramnet_path", "seed",
        "timings"}},
  };
  return keys;
}

void reject_unknown(const IniDoc& doc) {
  for (const IniDoc::Section& section : doc.sections()) {
    const auto it = std::find_if(
        known_keys().begin(), known_keys().end(),
        [&](const SectionKeys& k) { return section.name == k.section; });
    if (it == known_keys().end())
      throw ConfigError("config: unknown section [" + section.name + "]");
    for (const IniDoc::Entry& entry : section.entries)
      if (it->keys.find(entry.key) == it->keys.end())
        throw ConfigError("config: unknown key '" + entry.key +
                          "' in section [" + section.name + "]");
  }
}

}  // namespace

ExperimentConfig config_from_ini(const IniDoc& doc) {
  reject_unknown(doc);
  ExperimentConfig cfg;

  cfg.problem.grid.nx =
      static_cast<int>(doc.get_int("problem", "nx", cfg.problem.grid.nx));
  cfg.problem.grid.ny =
      static_cast<int>(doc.get_int("problem", "ny", cfg.problem.grid.ny));
  cfg.problem.grid.x0 = doc.get_double("problem", "x0", cfg.problem.grid.x0);
  cfg.problem.grid.y0 = doc.get_double("problem", "y0", cfg.problem.grid.y0);
  cfg.problem.grid.lx = doc.get_double("problem", "lx", cfg.problem.grid.lx);
  cfg.problem.grid.ly = doc.get_double("problem", "ly", cfg.problem.grid.ly);
  cfg.problem.ss = doc.get_double("problem", "ss", cfg.problem.ss);
  cfg.problem.t_end = doc.get_double("problem", "t_end", cfg.problem.t_end);
  cfg.problem.n_t =
      static_cast<int>(doc.get_int("problem", "n_t", cfg.problem.n_t));
  cfg.problem.h_left = doc.get_double("problem", "h_left", cfg.problem.h_left);
  cfg.problem.h_right =
      doc.get_double("problem", "h_right", cfg.problem.h_right);
  cfg.problem.h_init = doc.get_double("problem", "h_init", cfg.problem.h_init);

  cfg.cov.variance = doc.get_double("field", "variance", cfg.cov.variance);
  cfg.cov.eta_x = doc.get_double("field", "eta_x", cfg.cov.eta_x);
  cfg.cov.eta_y = doc.get_double("field", "eta_y", cfg.cov.eta_y);
  cfg.cov.exponent = doc.get_double("field", "exponent", cfg.cov.exponent);
  cfg.cov.mean = doc.get_double("field", "mean", cfg.cov.mean);
  cfg.n_terms = static_cast<int>(doc.get_int("field", "n_terms", cfg.n_terms));

  cfg.obs_layout = doc.get_string("observations", "layout", cfg.obs_layout);
  cfg.noise_std = doc.get_double("observations", "noise_std", cfg.noise_std);
  cfg.obs_t_first =
      static_cast<int>(doc.get_int("observations", "t_first", cfg.obs_t_first));
  cfg.obs_t_last =
      static_cast<int>(doc.get_int("observations", "t_last", cfg.obs_t_last));
  cfg.obs_logk = doc.get_bool("observations", "logk", cfg.obs_logk);
  cfg.logk_noise_std =
      doc.get_double("observations", "logk_noise_std", cfg.logk_noise_std);

  if (doc.has("surrogate", "hidden"))
    cfg.surrogate.hidden = parse_int_list(*doc.get("surrogate", "hidden"));
  cfg.surrogate.schedule.hidden = cfg.surrogate.hidden;
  cfg.surrogate.n_fields = static_cast<int>(
      doc.get_int("surrogate", "n_fields", cfg.surrogate.n_fields));
  cfg.surrogate.n_pde =
      static_cast<int>(doc.get_int("surrogate", "n_pde", cfg.surrogate.n_pde));
  cfg.surrogate.n_bc =
      static_cast<int>(doc.get_int("surrogate", "n_bc", cfg.surrogate.n_bc));
  cfg.surrogate.n_ic =
      static_cast<int>(doc.get_int("surrogate", "n_ic", cfg.surrogate.n_ic));
  cfg.surrogate.labels_per_field = doc.get_int(
      "surrogate", "labels_per_field", cfg.surrogate.labels_per_field);
  cfg.surrogate.schedule.epochs = static_cast<int>(
      doc.get_int("surrogate", "epochs", cfg.surrogate.schedule.epochs));
  cfg.surrogate.schedule.lr =
      doc.get_double("surrogate", "lr", cfg.surrogate.schedule.lr);
  cfg.surrogate.schedule.batch_pde = static_cast<int>(
      doc.get_int("surrogate", "batch_pde", cfg.surrogate.schedule.batch_pde));
  cfg.surrogate.schedule.batch_data = static_cast<int>(doc.get_int(
      "surrogate", "batch_data", cfg.surrogate.schedule.batch_data));
  cfg.surrogate.schedule.batch_bc = static_cast<int>(
      doc.get_int("surrogate", "batch_bc", cfg.surrogate.schedule.batch_bc));
  cfg.surrogate.schedule.batch_ic = static_cast<int>(
      doc.get_int("surrogate", "batch_ic", cfg.surrogate.schedule.batch_ic));
  cfg.surrogate.schedule.log_every = static_cast<int>(
      doc.get_int("surrogate", "log_every", cfg.surrogate.schedule.log_every));

  cfg.invert.term.eps1 = doc.get_double("invert", "eps1", cfg.invert.term.eps1);
  cfg.invert.term.eps2 = doc.get_double("invert", "eps2", cfg.invert.term.eps2);
  cfg.invert.term.i_max =
      static_cast<int>(doc.get_int("invert", "i_max", cfg.invert.term.i_max));
  cfg.invert.lambda0 = doc.get_double("invert", "lambda0", cfg.invert.lambda0);
  cfg.invert.lambda_min =
      doc.get_double("invert", "lambda_min", cfg.invert.lambda_min);
  cfg.invert.lambda_max =
      doc.get_double("invert", "lambda_max", cfg.invert.lambda_max);
  cfg.invert.max_retries = static_cast<int>(
      doc.get_int("invert", "max_retries", cfg.invert.max_retries));
  cfg.invert.ensemble_size = static_cast<int>(
      doc.get_int("invert", "ensemble_size", cfg.invert.ensemble_size));

  cfg.training.lr = doc.get_double("training", "lr", cfg.training.lr);
  cfg.training.iterations = static_cast<int>(
      doc.get_int("training", "iterations", cfg.training.iterations));

  cfg.paramnet.n_realizations = static_cast<int>(doc.get_int(
      "paramnet", "n_realizations", cfg.paramnet.n_realizations));
  cfg.paramnet.epochs =
      static_cast<int>(doc.get_int("paramnet", "epochs", cfg.paramnet.epochs));
  cfg.paramnet.lr = doc.get_double("paramnet", "lr", cfg.paramnet.lr);
  cfg.paramnet.batch =
      static_cast<int>(doc.get_int("paramnet", "batch", cfg.paramnet.batch));
  if (doc.has("paramnet", "hidden"))
    cfg.paramnet.hidden = parse_int_list(*doc.get("paramnet", "hidden"));
  cfg.paramnet.samples_per_field = doc.get_int(
      "paramnet", "samples_per_field", cfg.paramnet.samples_per_field);
  cfg.paramnet.n_heldout = static_cast<int>(
      doc.get_int("paramnet", "n_heldout", cfg.paramnet.n_heldout));

  cfg.direct.n_f = static_cast<int>(doc.get_int("direct", "n_f", cfg.direct.n_f));
  cfg.direct.n_b = static_cast<int>(doc.get_int("direct", "n_b", cfg.direct.n_b));
  cfg.direct.n_i = static_cast<int>(doc.get_int("direct", "n_i", cfg.direct.n_i));
  cfg.direct.epochs =
      static_cast<int>(doc.get_int("direct", "epochs", cfg.direct.epochs));
  cfg.direct.lr = doc.get_double("direct", "lr", cfg.direct.lr);
  cfg.direct.batch_f =
      static_cast<int>(doc.get_int("direct", "batch_f", cfg.direct.batch_f));
  if (doc.has("direct", "h_hidden"))
    cfg.direct.h_hidden = parse_int_list(*doc.get("direct", "h_hidden"));
  if (doc.has("direct", "k_hidden"))
    cfg.direct.k_hidden = parse_int_list(*doc.get("direct", "k_hidden"));
  cfg.direct.prior_penalty =
      doc.get_bool("direct", "prior_penalty", cfg.direct.prior_penalty);
  cfg.direct.log_every = static_cast<int>(
      doc.get_int("direct", "log_every", cfg.direct.log_every));

  cfg.out_dir = doc.get_string("output", "out_dir", cfg.out_dir);
  cfg.basis_path = doc.get_string("output", "basis_path", cfg.basis_path);
  cfg.surrogate_path =
      doc.get_string("output", "surrogate_path", cfg.surrogate_path);
  cfg.paramnet_path =
      doc.get_string("output", "paramnet_path", cfg.paramnet_path);
  cfg.seed = static_cast<std::uint64_t>(
      doc.get_int("output", "seed", static_cast<long long>(cfg.seed)));
  cfg.timings = doc.get_bool("output", "timings", cfg.timings);

  cfg.problem.validate();
  cfg.cov.validate();
  if (cfg.n_terms < 1) throw ConfigError("config: n_terms must be >= 1");
  observation_layout(cfg.obs_layout);
  if (cfg.obs_t_first < 1 || cfg.obs_t_first > cfg.obs_last_step())
    throw ConfigError("config: observation step range is empty");
  if (cfg.obs_last_step() > cfg.problem.n_t)
    throw ConfigError("config: t_last exceeds the step count");
  return cfg;
}

IniDoc config_to_ini(const ExperimentConfig& cfg) {
  IniDoc doc;
  doc.set("problem", "nx", std::to_string(cfg.problem.grid.nx));
  doc.set("problem", "ny", std::to_string(cfg.problem.grid.ny));
  doc.set("problem", "x0", fmt17(cfg.problem.grid.x0));
  doc.set("problem", "y0", fmt17(cfg.problem.grid.y0));
  doc.set("problem", "lx", fmt17(cfg.problem.grid.lx));
  doc.set("problem", "ly", fmt17(cfg.problem.grid.ly));
  doc.set("problem", "ss", fmt17(cfg.problem.ss));
  doc.set("problem", "t_end", fmt17(cfg.problem.t_end));
  doc.set("problem", "n_t", std::to_string(cfg.problem.n_t));
  doc.set("problem", "h_left", fmt17(cfg.problem.h_left));
  doc.set("problem", "h_right", fmt17(cfg.problem.h_right));
  doc.set("problem", "h_init", fmt17(cfg.problem.h_init));

  doc.set("field", "variance", fmt17(cfg.cov.variance));
  doc.set("field", "eta_x", fmt17(cfg.cov.eta_x));
  doc.set("field", "eta_y", fmt17(cfg.cov.eta_y));
  doc.set("field", "exponent", fmt17(cfg.cov.exponent));
  doc.set("field", "mean", fmt17(cfg.cov.mean));
  doc.set("field", "n_terms", std::to_string(cfg.n_terms));

  doc.set("observations", "layout", cfg.obs_layout);
  doc.set("observations", "noise_std", fmt17(cfg.noise_std));
  doc.set("observations", "t_first", std::to_string(cfg.obs_t_first));
  doc.set("observations", "t_last", std::to_string(cfg.obs_t_last));
  doc.set("observations", "logk", cfg.obs_logk ? "true" : "false");
  doc.set("observations", "logk_noise_std", fmt17(cfg.logk_noise_std));

  doc.set("surrogate", "hidden", join_int_list(cfg.surrogate.hidden));
  doc.set("surrogate", "n_fields", std::to_string(cfg.surrogate.n_fields));
  doc.set("surrogate", "n_pde", std::to_string(cfg.surrogate.n_pde));
  doc.set("surrogate", "n_bc", std::to_string(cfg.surrogate.n_bc));
  doc.set("surrogate", "n_ic", std::to_string(cfg.surrogate.n_ic));
  doc.set("surrogate", "labels_per_field",
          std::to_string(cfg.surrogate.labels_per_field));
  doc.set("surrogate", "epochs", std::to_string(cfg.surrogate.schedule.epochs));
  doc.set("surrogate", "lr", fmt17(cfg.surrogate.schedule.lr));
  doc.set("surrogate", "batch_pde",
          std::to_string(cfg.surrogate.schedule.batch_pde));
  doc.set("surrogate", "batch_data",
          std::to_string(cfg.surrogate.schedule.batch_data));
  doc.set("surrogate", "batch_bc",
          std::to_string(cfg.surrogate.schedule.batch_bc));
  doc.set("surrogate", "batch_ic",
          std::to_string(cfg.surrogate.schedule.batch_ic));
  doc.set("surrogate", "log_every",
          std::to_string(cfg.surrogate.schedule.log_every));

  doc.set("invert", "eps1", fmt17(cfg.invert.term.eps1));
  doc.set("invert", "eps2", fmt17(cfg.invert.term.eps2));
  doc.set("invert", "i_max", std::to_string(cfg.invert.term.i_max));
  doc.set("invert", "lambda0", fmt17(cfg.invert.lambda0));
  doc.set("invert", "lambda_min", fmt17(cfg.invert.lambda_min));
  doc.set("invert", "lambda_max", fmt17(cfg.invert.lambda_max));
  doc.set("invert", "max_retries", std::to_string(cfg.invert.max_retries));
  doc.set("invert", "ensemble_size", std::to_string(cfg.invert.ensemble_size));

  doc.set("training", "lr", fmt17(cfg.training.lr));
  doc.set("training", "iterations", std::to_string(cfg.training.iterations));

  doc.set("paramnet", "n_realizations",
          std::to_string(cfg.paramnet.n_realizations));
  doc.set("paramnet", "epochs", std::to_string(cfg.paramnet.epochs));
  doc.set("paramnet", "lr", fmt17(cfg.paramnet.lr));
  doc.set("paramnet", "batch", std::to_string(cfg.paramnet.batch));
  doc.set("paramnet", "hidden", join_int_list(cfg.paramnet.hidden));
  doc.set("paramnet", "samples_per_field",
          std::to_string(cfg.paramnet.samples_per_field));
  doc.set("paramnet", "n_heldout", std::to_string(cfg.paramnet.n_heldout));

  doc.set("direct", "n_f", std::to_string(cfg.direct.n_f));
  doc.set("direct", "n_b", std::to_string(cfg.direct.n_b));
  doc.set("direct", "n_i", std::to_string(cfg.direct.n_i));
  doc.set("direct", "epochs", std::to_string(cfg.direct.epochs));
  doc.set("direct", "lr", fmt17(cfg.direct.lr));
  doc.set("direct", "batch_f", std::to_string(cfg.direct.batch_f));
  doc.set("direct", "h_hidden", join_int_list(cfg.direct.h_hidden));
  doc.set("direct", "k_hidden", join_int_list(cfg.direct.k_hidden));
  doc.set("direct", "prior_penalty", cfg.direct.prior_penalty ? "true" : "false");
  doc.set("direct", "log_every", std::to_string(cfg.direct.log_every));

  doc.set("output", "out_dir", cfg.out_dir);
  doc.set("output", "basis_path", cfg.basis_path);
  doc.set("output", "surrogate_path", cfg.surrogate_path);
  doc.set("output", "paramnet_path", cfg.paramnet_path);
  doc.set("output", "seed", std::to_string(cfg.seed));
  doc.set("output", "timings", cfg.timings ? "true" : "false");
  return doc;
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_ini(IniDoc::parse(read_text_file(path)));
}

void save_config(const ExperimentConfig& cfg, const std::string& path) {
  write_text_file(path, config_to_ini(cfg).serialize());
}

void save_field_csv(const Grid& grid, const Eigen::VectorXd& values,
                    const std::string& path) {
  if (values.size() != grid.cell_count())
    throw ConfigError("save_field_csv: value count does not match grid");
  std::ostringstream out;
  out << "i,j,x,y,value\n";
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i)
      out << i << "," << j << "," << fmt17(grid.xc(i)) << ","
          << fmt17(grid.yc(j)) << "," << fmt17(values(grid.index(i, j)))
          << "\n";
  write_text_file(path, out.str());
}

void save_trace_csv(const std::vector<double>& values, const std::string& name,
                    const std::string& path) {
  std::ostringstream out;
  out << "index," << name << "\n";
  for (std::size_t i = 0; i < values.size(); ++i)
    out << i << "," << fmt17(values[i]) << "\n";
  write_text_file(path, out.str());
}

ReferenceCase make_reference_case(const ExperimentConfig& cfg,
                                  const KleBasis& truth_basis) {
  const Rng root(cfg.seed);
  Rng truth_rng = root.substream("truth-field");
  ReferenceCase ref;
  ref.xi_truth = sample_xi(truth_rng, truth_basis.n_terms());
  ref.lnK_cells = truth_basis.evaluate_grid(ref.xi_truth);
  ref.history = solve_flow(cfg.problem, ref.lnK_cells);

  Rng noise_rng = root.substream("obs-noise");
  const std::vector<std::pair<double, double>> points =
      observation_layout(cfg.obs_layout);
  ref.observations =
      make_head_observations(ref.history, points, cfg.obs_t_first,
                             cfg.obs_last_step(), cfg.noise_std, &noise_rng);
  if (cfg.obs_logk)
    append_logk_observations(ref.observations, cfg.problem.grid, ref.lnK_cells,
                             points, cfg.logk_noise_std, &noise_rng);
  return ref;
}

namespace {

// Dispatches one surrogate-space engine. Single-realization methods start
// from the zero coefficient vector (the prior mean field); rng feeds the
// ensemble draws.
InvertResult run_engine(const ExperimentConfig& cfg, const std::string& method,
                        const TgnnSurrogate& surr, const ObservationSet& obs,
                        Rng& rng) {
  const SurrogateForwardModel model(surr, obs);
  const PriorSpec prior =
      PriorSpec::standard(model.n_param(), obs.variances());
  const Eigen::VectorXd d_obs = obs.values();
  if (method == "gradient") {
    const Eigen::VectorXd xi0 = Eigen::VectorXd::Zero(model.n_param());
    return invert_gradient_single(model, d_obs, prior, cfg.invert, xi0);
  }
  if (method == "gradient-ensemble")
    return invert_gradient_ensemble(model, d_obs, prior, cfg.invert, rng);
  if (method == "ies") return invert_ies(model, d_obs, prior, cfg.invert, rng);
  if (method == "training") {
    const Eigen::VectorXd xi0 = Eigen::VectorXd::Zero(model.n_param());
    return invert_training(model, d_obs, prior, cfg.training, xi0);
  }
  throw ConfigError("unknown surrogate inversion method '" + method + "'");
}

bool is_surrogate_method(const std::string& method) {
  return method == "gradient" || method == "gradient-ensemble" ||
         method == "ies" || method == "training";
}

RunReport base_report(const ExperimentConfig& cfg, const std::string& method) {
  RunReport report;
  report.method = method;
  report.seed = cfg.seed;
  return report;
}

}  // namespace

RunReport run_reference_case(const ExperimentConfig& cfg,
                             const std::string& method,
                             const TgnnSurrogate* surr, const ParamNet* pn) {
  if (is_surrogate_method(method) && surr == nullptr)
    throw ConfigError("method '" + method + "' requires a trained surrogate");
  if (method == "tgnn-geo" && pn == nullptr)
    throw ConfigError("method 'tgnn-geo' requires a pretrained parameter "
                      "network");

  KleBasis local_basis;
  const KleBasis* basis = nullptr;
  if (surr != nullptr) {
    basis = &surr->basis;
  } else if (pn != nullptr) {
    basis = &pn->basis;
  } else {
    local_basis = build_kle(cfg.cov, cfg.problem.grid, cfg.n_terms);
    basis = &local_basis;
  }

  const ReferenceCase ref = make_reference_case(cfg, *basis);
  const Rng root(cfg.seed);
  Rng engine_rng = root.substream("engine-" + method);

  RunReport report = base_report(cfg, method);
  Eigen::VectorXd estimate;
  const WallTimer timer;

  if (is_surrogate_method(method)) {
    const InvertResult result =
        run_engine(cfg, method, *surr, ref.observations, engine_rng);
    estimate = basis->evaluate_grid(result.xi_mean());
    report.iterations = result.iterations;
    report.mis_trace = result.mis_trace;
    report.final_mis =
        result.mis_trace.empty() ? 0.0 : result.mis_trace.back();
    report.metrics["stop_reason_iteration_limit"] =
        result.stop_reason == "iteration limit reached" ? 1.0 : 0.0;
    if (!result.objective_trace.empty())
      report.metrics["final_objective"] = result.objective_trace.back();
  } else if (method == "tgnn-geo" || method == "pinn-no-geo") {
    DirectResult result =
        method == "tgnn-geo"
            ? invert_tgnn_geo(cfg.problem, *pn, ref.observations, cfg.direct,
                              engine_rng)
            : invert_pinn_no_geo(cfg.problem, ref.observations, cfg.direct,
                                 engine_rng);
    estimate = result.lnK_cells;
    report.iterations = result.epochs_run;
    report.mis_trace = result.loss_trace;
    report.final_mis = result.final_terms[4];
    report.metrics["loss_pde"] = result.final_terms[0];
    report.metrics["loss_bc"] = result.final_terms[1];
    report.metrics["loss_ic"] = result.final_terms[2];
    report.metrics["loss_kdata"] = result.final_terms[3];
    report.metrics["loss_hdata"] = result.final_terms[4];
    if (method == "tgnn-geo")
      report.metrics["paramnet_heldout_rmse"] = pn->heldout_rmse;
  } else {
    throw ConfigError("unknown inversion method '" + method + "'");
  }

  if (cfg.timings) report.wall_seconds = timer.seconds();
  report.rmse = rmse(ref.lnK_cells, estimate);
  report.metrics["n_obs"] = static_cast<double>(ref.observations.size());

  const std::string field_path = out_path(cfg, method + "_field.csv");
  save_field_csv(cfg.problem.grid, estimate, field_path);
  report.artifacts["estimated_field"] = field_path;
  const std::string truth_path = out_path(cfg, "truth_field.csv");
  save_field_csv(cfg.problem.grid, ref.lnK_cells, truth_path);
  report.artifacts["truth_field"] = truth_path;
  const std::string trace_path = out_path(cfg, method + "_mis.csv");
  save_trace_csv(report.mis_trace, "mis", trace_path);
  report.artifacts["mis_trace"] = trace_path;
  const std::string report_path = out_path(cfg, method + "_report.json");
  report.artifacts["report"] = report_path;
  save_report(report, report_path);
  return report;
}

std::vector<SweepRow> run_ensemble_size_sweep(const ExperimentConfig& cfg,
                                              const TgnnSurrogate& surr,
                                              const std::vector<int>& sizes,
                                              int repeats) {
  if (repeats < 1)
    throw ConfigError("run_ensemble_size_sweep: repeats must be >= 1");
  const ReferenceCase ref = make_reference_case(cfg, surr.basis);
  const Rng root(cfg.seed);
  const SurrogateForwardModel model(surr, ref.observations);
  const PriorSpec prior =
      PriorSpec::standard(model.n_param(), ref.observations.variances());
  const Eigen::VectorXd d_obs = ref.observations.values();

  std::vector<SweepRow> rows;
  for (const int size : sizes) {
    if (size < 2)
      throw ConfigError("run_ensemble_size_sweep: sizes must be >= 2");
    SweepRow row;
    row.size = size;
    row.repeats = repeats;
    std::vector<double> errors;
    InvertOptions options = cfg.invert;
    options.ensemble_size = size;
    Eigen::MatrixXd last_xi;
    for (int rep = 0; rep < repeats; ++rep) {
      Rng rng = root.substream("sweep-" + std::to_string(size),
                               static_cast<std::uint64_t>(rep));
      const InvertResult result =
          invert_ies(model, d_obs, prior, options, rng);
      errors.push_back(
          rmse(ref.lnK_cells, surr.basis.evaluate_grid(result.xi_mean())));
      last_xi = result.xi;
    }
    double mean = 0.0;
    for (const double e : errors) mean += e;
    mean /= static_cast<double>(errors.size());
    double var = 0.0;
    for (const double e : errors) var += (e - mean) * (e - mean);
    row.rmse_mean = mean;
    row.rmse_std = errors.size() > 1
                       ? std::sqrt(var / static_cast<double>(errors.size() - 1))
                       : 0.0;

    if (cfg.timings && last_xi.size() > 0) {
      const WallTimer surrogate_timer;
      model.predict_many(last_xi);
      row.surrogate_seconds = surrogate_timer.seconds();
      const WallTimer simulator_timer;
      solve_flow(cfg.problem, surr.basis.evaluate_grid(last_xi.col(0)));
      row.simulator_seconds = simulator_timer.seconds() * size;
    }
    rows.push_back(row);
  }
  return rows;
}

void save_sweep_csv(const std::vector<SweepRow>& rows,
                    const std::string& path) {
  std::ostringstream out;
  out << "size,repeats,rmse_mean,rmse_std,surrogate_seconds,"
         "simulator_seconds\n";
  for (const SweepRow& row : rows)
    out << row.size << "," << row.repeats << "," << fmt17(row.rmse_mean) << ","
        << fmt17(row.rmse_std) << "," << fmt17(row.surrogate_seconds) << ","
        << fmt17(row.simulator_seconds) << "\n";
  write_text_file(path, out.str());
}

RunReport run_prediction_split(const ExperimentConfig& cfg,
                               const TgnnSurrogate& surr,
                               const std::string& method, int split_step) {
  if (!is_surrogate_method(method))
    throw ConfigError("run_prediction_split: '" + method +
                      "' is not a surrogate method");
  if (split_step < 1 || split_step >= cfg.problem.n_t)
    throw ConfigError("run_prediction_split: split step must be in [1, n_t)");

  const ReferenceCase ref = make_reference_case(cfg, surr.basis);
  ObservationSet fit_set;
  for (const ObsRecord& rec : ref.observations.records)
    if (rec.kind != ObsKind::head || rec.t_index <= split_step)
      fit_set.records.push_back(rec);

  const Rng root(cfg.seed);
  Rng engine_rng = root.substream("engine-" + method + "-split");
  const InvertResult result = run_engine(cfg, method, surr, fit_set, engine_rng);
  const Eigen::VectorXd estimate = surr.basis.evaluate_grid(result.xi_mean());
  const HeadHistory predicted = solve_flow(cfg.problem, estimate);

  const std::vector<std::pair<double, double>> points =
      observation_layout(cfg.obs_layout);
  std::vector<double> match_err, pred_err;
  std::ostringstream series;
  series << "point,x,y,t,h_ref,h_est\n";
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (int t = 1; t <= cfg.problem.n_t; ++t) {
      const double h_ref =
          ref.history.interp(t, points[p].first, points[p].second);
      const double h_est =
          predicted.interp(t, points[p].first, points[p].second);
      series << p << "," << fmt17(points[p].first) << ","
             << fmt17(points[p].second) << "," << fmt17(t * cfg.problem.dt())
             << "," << fmt17(h_ref) << "," << fmt17(h_est) << "\n";
      const double err = std::abs(h_est - h_ref);
      if (t <= split_step)
        match_err.push_back(err);
      else
        pred_err.push_back(err);
    }
  }

  RunReport report = base_report(cfg, method + "-split");
  report.rmse = rmse(ref.lnK_cells, estimate);
  report.iterations = result.iterations;
  report.mis_trace = result.mis_trace;
  report.final_mis = result.mis_trace.empty() ? 0.0 : result.mis_trace.back();
  report.metrics["split_step"] = static_cast<double>(split_step);
  report.metrics["match_median_abs_err"] = median(match_err);
  report.metrics["pred_median_abs_err"] = median(pred_err);

  const std::string series_path =
      out_path(cfg, method + "_prediction.csv");
  write_text_file(series_path, series.str());
  report.artifacts["prediction_series"] = series_path;
  const std::string report_path =
      out_path(cfg, method + "_split_report.json");
  report.artifacts["report"] = report_path;
  save_report(report, report_path);
  return report;
}

std::array<RunReport, 3> run_high_resolution_case(const ExperimentConfig& cfg,
                                                  const TgnnSurrogate& surr) {
  const KleBasis truth_basis =
      build_kle_energy(cfg.cov, cfg.problem.grid, 0.90);
  const ReferenceCase ref = make_reference_case(cfg, truth_basis);
  const Rng root(cfg.seed);

  const Eigen::VectorXd xi_floor = surr.basis.project_grid(ref.lnK_cells);
  const double floor_rmse =
      rmse(ref.lnK_cells, surr.basis.evaluate_grid(xi_floor));

  const std::array<std::string, 3> methods = {"gradient", "ies", "training"};
  std::array<RunReport, 3> reports;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    Rng engine_rng = root.substream("engine-" + methods[m] + "-highres");
    const InvertResult result =
        run_engine(cfg, methods[m], surr, ref.observations, engine_rng);
    const Eigen::VectorXd estimate =
        surr.basis.evaluate_grid(result.xi_mean());

    RunReport report = base_report(cfg, methods[m] + "-highres");
    report.rmse = rmse(ref.lnK_cells, estimate);
    report.iterations = result.iterations;
    report.mis_trace = result.mis_trace;
    report.final_mis =
        result.mis_trace.empty() ? 0.0 : result.mis_trace.back();
    report.metrics["projection_floor_rmse"] = floor_rmse;
    report.metrics["truth_terms"] = static_cast<double>(truth_basis.n_terms());

    const std::string report_path =
        out_path(cfg, methods[m] + "_highres_report.json");
    report.artifacts["report"] = report_path;
    save_report(report, report_path);
    reports[m] = std::move(report);
  }
  return reports;
}

std::vector<PriorVariantRow> run_prior_sensitivity(
    const ExperimentConfig& cfg, const TgnnSurrogate* surr, const ParamNet* pn,
    const std::vector<std::string>& variants,
    const std::vector<std::string>& methods, bool with_and_without_logk) {
  std::vector<PriorVariantRow> rows;
  for (const std::string& variant : variants) {
    CovarianceSpec truth_cov = cfg.cov;
    if (variant == "var0.5") {
      truth_cov.variance = 0.5;
    } else if (variant == "var2.0") {
      truth_cov.variance = 2.0;
    } else if (variant == "eta204") {
      truth_cov.eta_x = 204.0;
      truth_cov.eta_y = 204.0;
    } else {
      throw ConfigError("unknown prior variant '" + variant +
                        "' (expected var0.5, var2.0, or eta204)");
    }
    const KleBasis truth_basis =
        build_kle_energy(truth_cov, cfg.problem.grid, 0.80);

    for (const std::string& method : methods) {
      if (method == "ies" && surr == nullptr)
        throw ConfigError("prior sensitivity: method 'ies' requires a "
                          "surrogate");
      if (method == "tgnn-geo" && pn == nullptr)
        throw ConfigError("prior sensitivity: method 'tgnn-geo' requires a "
                          "parameter network");
      if (method != "ies" && method != "tgnn-geo")
        throw ConfigError("prior sensitivity: unsupported method '" + method +
                          "'");

      std::vector<bool> logk_states;
      if (with_and_without_logk)
        logk_states = {false, true};
      else
        logk_states = {cfg.obs_logk};

      for (const bool with_logk : logk_states) {
        ExperimentConfig variant_cfg = cfg;
        variant_cfg.obs_logk = with_logk;
        const ReferenceCase ref =
            make_reference_case(variant_cfg, truth_basis);
        const Rng root(cfg.seed);
        Rng engine_rng = root.substream("engine-" + method + "-prior-" +
                                        variant + (with_logk ? "-logk" : ""));

        PriorVariantRow row;
        row.variant = variant;
        row.method = method;
        row.with_logk = with_logk;
        if (method == "ies") {
          const InvertResult result =
              run_engine(cfg, "ies", *surr, ref.observations, engine_rng);
          row.rmse = rmse(ref.lnK_cells,
                          surr->basis.evaluate_grid(result.xi_mean()));
        } else {
          const DirectResult result = invert_tgnn_geo(
              cfg.problem, *pn, ref.observations, cfg.direct, engine_rng);
          row.rmse = rmse(ref.lnK_cells, result.lnK_cells);
        }
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

void save_prior_csv(const std::vector<PriorVariantRow>& rows,
                    const std::string& path) {
  std::ostringstream out;
  out << "variant,method,with_logk,rmse\n";
  for (const PriorVariantRow& row : rows)
    out << row.variant << "," << row.method << ","
        << (row.with_logk ? "true" : "false") << "," << fmt17(row.rmse)
        << "\n";
  write_text_file(path, out.str());
}

}  // namespace gwinv

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cto/csv.hpp"
#include "cto/design_space.hpp"
#include "cto/emulator.hpp"
#include "cto/errors.hpp"
#include "cto/models.hpp"
#include "cto/pareto.hpp"
#include "cto/posterior.hpp"
#include "cto/rng.hpp"
#include "cto/sampler.hpp"
#include "cto/stats.hpp"
#include "cto/svg.hpp"
#include "cto/util.hpp"

namespace cto {

enum class Command { emulate, prelim, cto, bands };

inline std::string command_name(Command c) {
  switch (c) {
    case Command::emulate: return "emulate";
    case Command::prelim: return "prelim";
    case Command::cto: return "cto";
    case Command::bands: return "bands";
  }
  return "?";
}

inline Command parse_command(const std::string& name) {
  if (name == "emulate") return Command::emulate;
  if (name == "prelim") return Command::prelim;
  if (name == "cto") return Command::cto;
  if (name == "bands") return Command::bands;
  throw ConfigError("unknown command '" + name +
                    "' (expected emulate, prelim, cto, or bands)");
}

struct ModelConfig {
  enum class Kind { builtin, csv };
  Kind kind = Kind::builtin;
  std::string builtin_name;
  std::string csv_path;
  std::vector<VariableSpec> variables;  // csv only
  bool use_emulator = false;            // builtin only; csv always emulates
  int runs = 500;                       // builtin: LHS sample size
  int mle_starts = 8;
};

struct TargetConfig {
  enum class Mode { utopia, explicit_values, ray };
  Mode mode = Mode::utopia;
  Eigen::VectorXd values;  // explicit mode, native units
  double standoff = 1.0;   // ray mode / prelim suggestion, standardized units
};

struct NoiseConfig {
  enum class Mode { command_default, sampled, fixed };
  Mode mode = Mode::command_default;
  Eigen::VectorXd sigma2;  // fixed mode, standardized scale; size 1 broadcasts
};

struct BandsConfig {
  bool present = false;
  std::string free_output;
  std::string constrained_output;
  int points = 10;
  double range_lo = 0.0;
  double range_hi = 0.0;
};

struct RunConfig {
  Command command = Command::cto;
  ModelConfig model;
  TargetConfig target;
  NoiseConfig noise;
  ChainConfig chain;
  int control_grid = 2;
  std::vector<std::pair<double, double>> theta_bounds_native;  // optional
  BandsConfig bands;
  std::string predictive = "default";  // "mean" | "sample" | "default"
  bool svg = false;                    // also emit front/band SVG scatters
  std::string out_dir = "cto-out";
  std::uint64_t seed = 0;
  std::vector<std::string> defaults_applied;
};

namespace detail {

inline int levenshtein(const std::string& a, const std::string& b) {
  std::vector<int> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Reject unknown keys, suggesting the intended one. A few semantic aliases
/// are mapped directly; otherwise the nearest known key by edit distance is
/// offered.
inline void check_keys(const nlohmann::json& obj, const std::vector<std::string>& known,
                       const std::string& context) {
  static const std::map<std::string, std::string> aliases = {
      {"sigma", "noise"},        {"sigma2", "noise"},   {"variance", "noise"},
      {"noise_mode", "noise"},   {"iterations", "chain"}, {"burn_in", "chain"},
      {"burnin", "chain"},       {"chains", "chain"},   {"outdir", "out"},
      {"out_dir", "out"},        {"output", "out"},     {"targets", "target"},
  };
  for (const auto& item : obj.items()) {
    const std::string& key = item.key();
    if (std::find(known.begin(), known.end(), key) != known.end()) continue;
    std::string suggestion;
    const auto alias = aliases.find(key);
    if (alias != aliases.end() &&
        std::find(known.begin(), known.end(), alias->second) != known.end()) {
      suggestion = alias->second;
    } else {
      int best = std::numeric_limits<int>::max();
      for (const auto& k : known) {
        const int d = levenshtein(key, k);
        if (d < best) {
          best = d;
          suggestion = k;
        }
      }
      if (best > static_cast<int>(std::max<std::size_t>(key.size(), 3)))
        suggestion.clear();
    }
    std::string message = "unknown key '" + key + "' in " + context;
    if (!suggestion.empty()) message += "; did you mean '" + suggestion + "'?";
    throw ConfigError(message);
  }
}

inline Eigen::VectorXd parse_vector(const nlohmann::json& arr, const std::string& context) {
  if (!arr.is_array()) throw ConfigError(context + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  Eigen::Index i = 0;
  for (const auto& x : arr) {
    if (!x.is_number()) throw ConfigError(context + ": expected an array of numbers");
    v(i++) = x.get<double>();
  }
  return v;
}

}  // namespace detail

/// Parse and validate a run configuration document. Unknown keys are
/// rejected; every default that gets applied is recorded so the run log can
/// echo it.
inline RunConfig parse_config(const nlohmann::json& doc,
                              std::optional<Command> cli_command = std::nullopt) {
  if (!doc.is_object()) throw ConfigError("config root must be a JSON object");
  detail::check_keys(doc,
                     {"command", "model", "target", "noise", "chain", "control_grid",
                      "theta_bounds", "bands", "predictive", "svg", "out", "seed"},
                     "config root");
  RunConfig cfg;
  auto note_default = [&cfg](const std::string& line) { cfg.defaults_applied.push_back(line); };

  if (doc.contains("command")) {
    cfg.command = parse_command(doc.at("command").get<std::string>());
    if (cli_command && *cli_command != cfg.command)
      throw ConfigError("config command '" + command_name(cfg.command) +
                        "' does not match CLI subcommand '" + command_name(*cli_command) + "'");
  } else if (cli_command) {
    cfg.command = *cli_command;
  } else {
    throw ConfigError("missing 'command'");
  }

  if (!doc.contains("model")) throw ConfigError("missing 'model'");
  {
    const auto& m = doc.at("model");
    detail::check_keys(
        m, {"builtin", "csv", "variables", "use_emulator", "runs", "mle_starts"},
        "model");
    const bool has_builtin = m.contains("builtin");
    const bool has_csv = m.contains("csv");
    if (has_builtin == has_csv)
      throw ConfigError("model: exactly one of 'builtin' or 'csv' is required");
    if (has_builtin) {
      cfg.model.kind = ModelConfig::Kind::builtin;
      cfg.model.builtin_name = m.at("builtin").get<std::string>();
      if (cfg.model.builtin_name != "simulated_example")
        throw ConfigError("model: unknown builtin '" + cfg.model.builtin_name +
                          "' (available: simulated_example)");
      if (m.contains("variables"))
        throw ConfigError("model: 'variables' applies only to csv models");
    } else {
      cfg.model.kind = ModelConfig::Kind::csv;
      cfg.model.csv_path = m.at("csv").get<std::string>();
      if (!m.contains("variables"))
        throw ConfigError("model: csv models require 'variables' with name/lower/upper/kind");
      for (const auto& v : m.at("variables")) {
        detail::check_keys(v, {"name", "lower", "upper", "kind"}, "model.variables entry");
        const std::string kind = v.at("kind").get<std::string>();
        if (kind != "control" && kind != "design")
          throw ConfigError("model.variables: kind must be 'control' or 'design'");
        cfg.model.variables.push_back({v.at("name").get<std::string>(),
                                       v.at("lower").get<double>(),
                                       v.at("upper").get<double>(),
                                       kind == "control" ? VarKind::control : VarKind::design});
      }
      if (m.contains("use_emulator") && !m.at("use_emulator").get<bool>())
        throw ConfigError("model: csv models always use an emulator");
    }
    if (m.contains("use_emulator") && has_builtin)
      cfg.model.use_emulator = m.at("use_emulator").get<bool>();
    if (m.contains("runs")) {
      cfg.model.runs = m.at("runs").get<int>();
      if (cfg.model.runs < 2) throw ConfigError("model.runs must be at least 2");
    } else if (has_builtin) {
      note_default("model.runs = 500");
    }
    if (m.contains("mle_starts")) {
      cfg.model.mle_starts = m.at("mle_starts").get<int>();
      if (cfg.model.mle_starts < 1) throw ConfigError("model.mle_starts must be positive");
    }
  }

  if (doc.contains("target")) {
    const auto& t = doc.at("target");
    detail::check_keys(t, {"mode", "values", "standoff"}, "target");
    const std::string mode =
        t.contains("mode") ? t.at("mode").get<std::string>() : std::string("utopia");
    if (mode == "utopia") {
      cfg.target.mode = TargetConfig::Mode::utopia;
    } else if (mode == "explicit") {
      cfg.target.mode = TargetConfig::Mode::explicit_values;
      if (!t.contains("values"))
        throw ConfigError("target: explicit mode requires 'values' (native units)");
    } else if (mode == "ray") {
      cfg.target.mode = TargetConfig::Mode::ray;
    } else {
      throw ConfigError("target.mode must be 'utopia', 'explicit', or 'ray'");
    }
    if (t.contains("values"))
      cfg.target.values = detail::parse_vector(t.at("values"), "target.values");
    if (t.contains("standoff")) {
      cfg.target.standoff = t.at("standoff").get<double>();
      if (cfg.target.standoff < 0.0) throw ConfigError("target.standoff must be >= 0");
    }
  } else {
    note_default("target.mode = utopia");
  }

  if (doc.contains("noise")) {
    const auto& n = doc.at("noise");
    detail::check_keys(n, {"mode", "sigma2"}, "noise");
    const std::string mode = n.at("mode").get<std::string>();
    if (mode == "sampled") {
      cfg.noise.mode = NoiseConfig::Mode::sampled;
      if (n.contains("sigma2"))
        throw ConfigError("noise: 'sigma2' applies only to fixed mode");
    } else if (mode == "fixed") {
      cfg.noise.mode = NoiseConfig::Mode::fixed;
      if (!n.contains("sigma2"))
        throw ConfigError("noise: fixed mode requires 'sigma2' (standardized scale)");
      if (n.at("sigma2").is_number()) {
        cfg.noise.sigma2 = Eigen::VectorXd::Constant(1, n.at("sigma2").get<double>());
      } else {
        cfg.noise.sigma2 = detail::parse_vector(n.at("sigma2"), "noise.sigma2");
      }
      if ((cfg.noise.sigma2.array() <= 0.0).any())
        throw ConfigError("noise.sigma2 entries must be positive");
    } else {
      throw ConfigError("noise.mode must be 'sampled' or 'fixed'");
    }
  }

  if (doc.contains("chain")) {
    const auto& c = doc.at("chain");
    detail::check_keys(c,
                       {"iterations", "burn_in", "chains", "adapt_interval",
                        "target_accept_theta", "target_accept_sigma2"},
                       "chain");
    if (c.contains("iterations")) cfg.chain.iterations = c.at("iterations").get<int>();
    else note_default("chain.iterations = 6000");
    if (c.contains("burn_in")) cfg.chain.burn_in = c.at("burn_in").get<int>();
    else note_default("chain.burn_in = 3000");
    if (c.contains("chains")) cfg.chain.n_chains = c.at("chains").get<int>();
    else note_default("chain.chains = 3");
    if (c.contains("adapt_interval")) cfg.chain.adapt_interval = c.at("adapt_interval").get<int>();
    if (c.contains("target_accept_theta"))
      cfg.chain.target_accept_theta = c.at("target_accept_theta").get<double>();
    if (c.contains("target_accept_sigma2"))
      cfg.chain.target_accept_sigma2 = c.at("target_accept_sigma2").get<double>();
  } else {
    note_default("chain.iterations = 6000");
    note_default("chain.burn_in = 3000");
    note_default("chain.chains = 3");
  }
  try {
    cfg.chain.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }

  if (doc.contains("control_grid")) {
    cfg.control_grid = doc.at("control_grid").get<int>();
    if (cfg.control_grid < 1) throw ConfigError("control_grid must be positive");
  } else {
    note_default("control_grid = 2");
  }

  if (doc.contains("theta_bounds")) {
    for (const auto& b : doc.at("theta_bounds")) {
      if (!b.is_array() || b.size() != 2)
        throw ConfigError("theta_bounds must be an array of [lower, upper] pairs");
      cfg.theta_bounds_native.emplace_back(b[0].get<double>(), b[1].get<double>());
    }
  }

  if (doc.contains("bands")) {
    const auto& b = doc.at("bands");
    detail::check_keys(b, {"free", "constrained", "points", "range"}, "bands");
    cfg.bands.present = true;
    cfg.bands.free_output = b.at("free").get<std::string>();
    cfg.bands.constrained_output = b.at("constrained").get<std::string>();
    if (b.contains("points")) cfg.bands.points = b.at("points").get<int>();
    if (cfg.bands.points < 1) throw ConfigError("bands.points must be positive");
    const auto& range = b.at("range");
    if (!range.is_array() || range.size() != 2)
      throw ConfigError("bands.range must be [lower, upper]");
    cfg.bands.range_lo = range[0].get<double>();
    cfg.bands.range_hi = range[1].get<double>();
    if (!(cfg.bands.range_lo <= cfg.bands.range_hi))
      throw ConfigError("bands.range: lower bound exceeds upper bound");
  }
  if (cfg.command == Command::bands && !cfg.bands.present)
    throw ConfigError("bands command requires a 'bands' section");

  if (doc.contains("predictive")) {
    cfg.predictive = doc.at("predictive").get<std::string>();
    if (cfg.predictive != "mean" && cfg.predictive != "sample")
      throw ConfigError("predictive must be 'mean' or 'sample'");
  }
  if (doc.contains("svg")) cfg.svg = doc.at("svg").get<bool>();

  if (doc.contains("out")) cfg.out_dir = doc.at("out").get<std::string>();
  else note_default("out = cto-out");
  if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
  else note_default("seed = 0");
  cfg.chain.master_seed = cfg.seed;

  if (cfg.noise.mode == NoiseConfig::Mode::command_default) {
    if (cfg.command == Command::prelim)
      note_default("noise = fixed, sigma2 = 5e7 per output (preliminary run)");
    else if (cfg.command == Command::cto)
      note_default("noise = sampled, Gamma(4, scale 1/8) prior");
  }
  return cfg;
}

struct PipelineResult {
  nlohmann::json summary;
  nlohmann::json manifest;
  bool converged = true;
  std::string out_dir;
};

namespace detail {

struct RunLog {
  std::vector<std::string> lines;
  void add(const std::string& line) { lines.push_back(line); }
  std::string str() const {
    std::string out;
    for (const auto& l : lines) {
      out += l;
      out += '\n';
    }
    return out;
  }
};

struct ArtifactWriter {
  std::filesystem::path dir;
  nlohmann::json manifest_files = nlohmann::json::object();

  void write(const std::string& name, const std::string& content) {
    write_text_file((dir / name).string(), content);
    manifest_files[name] = {{"hash", fnv1a64_hex(content)}, {"bytes", content.size()}};
  }
};

/// Everything the commands share: the response source, its dataset (native
/// and standardized), and the space.
struct Sources {
  std::shared_ptr<const ComputerModel> model;  // builtin only
  SimulationDataset data;
  DesignSpace space{{{"_", 0.0, 1.0, VarKind::design}}};
  std::shared_ptr<const Emulator> emulator;    // set when the emulator path is used
  bool emulator_loaded_from_disk = false;
};

inline Sources materialize_sources(const RunConfig& cfg, RunLog& log) {
  Sources s;
  if (cfg.model.kind == ModelConfig::Kind::builtin) {
    auto model = std::make_shared<ComputerModel>(simulated_example_model());
    s.space = model->space;
    const Eigen::MatrixXd design = latin_hypercube(
        cfg.model.runs, s.space.dim(), derive_seed(cfg.seed, Stream::reference_design));
    s.data = sample_model(*model, design);
    s.model = std::move(model);
    log.add("model: builtin " + cfg.model.builtin_name + ", " +
            std::to_string(cfg.model.runs) + " reference runs");
  } else {
    s.space = DesignSpace(cfg.model.variables);
    s.data = load_tabulated_sim(cfg.model.csv_path, s.space);
    log.add("model: tabulated runs from " + cfg.model.csv_path + " (" +
            std::to_string(s.data.n()) + " rows)");
  }
  return s;
}

/// Unit-scale bounds for the design variables, from config overrides or the
/// full design ranges.
inline Eigen::MatrixXd theta_bounds_unit(const RunConfig& cfg, const DesignSpace& space) {
  const int p = space.p(), q = space.q();
  Eigen::MatrixXd bounds(q, 2);
  bounds.col(0).setZero();
  bounds.col(1).setOnes();
  if (cfg.theta_bounds_native.empty()) return bounds;
  if (static_cast<int>(cfg.theta_bounds_native.size()) != q)
    throw ConfigError("theta_bounds: expected " + std::to_string(q) + " pairs");
  for (int i = 0; i < q; ++i) {
    const auto& v = space.variable(p + i);
    const auto [lo, hi] = cfg.theta_bounds_native[static_cast<std::size_t>(i)];
    if (!(lo < hi) || lo < v.lower || hi > v.upper)
      throw ConfigError("theta_bounds for '" + v.name + "' must lie within [" +
                        std::to_string(v.lower) + ", " + std::to_string(v.upper) + "]");
    bounds(i, 0) = (lo - v.lower) / (v.upper - v.lower);
    bounds(i, 1) = (hi - v.lower) / (v.upper - v.lower);
  }
  return bounds;
}

inline Eigen::VectorXd theta_unit_to_native(const DesignSpace& space,
                                            const Eigen::VectorXd& unit) {
  const int p = space.p();
  Eigen::VectorXd native(unit.size());
  for (Eigen::Index i = 0; i < unit.size(); ++i) {
    const auto& v = space.variable(p + static_cast<int>(i));
    native(i) = v.lower + unit(i) * (v.upper - v.lower);
  }
  return native;
}

/// Fit an emulator or load a previously saved one from the output
/// directory; newly fitted emulators are saved alongside their dataset.
inline void ensure_emulator(const RunConfig& cfg, Sources& s, ArtifactWriter& artifacts,
                            RunLog& log, bool allow_fit) {
  const std::filesystem::path emulator_path = artifacts.dir / "emulator.json";
  if (std::filesystem::exists(emulator_path)) {
    const nlohmann::json doc = nlohmann::json::parse(read_text_file(emulator_path.string()));
    const std::string dataset_rel = doc.at("dataset").at("path").get<std::string>();
    const std::string dataset_path = (artifacts.dir / dataset_rel).string();
    const std::string bytes = read_text_file(dataset_path);
    const std::string expected = doc.at("dataset").at("hash").get<std::string>();
    if (fnv1a64_hex(bytes) != expected)
      throw StateError("emulator.json references dataset '" + dataset_rel +
                       "' whose content hash changed; re-run emulate");
    auto [data, space] = load_dataset(dataset_path);
    s.data = std::move(data);
    s.space = std::move(space);
    s.emulator = std::make_shared<Emulator>(Emulator::from_json(doc, s.data));
    s.emulator_loaded_from_disk = true;
    log.add("emulator: loaded from " + emulator_path.string());
    return;
  }
  if (!allow_fit)
    throw StateError("no emulator artifacts in '" + artifacts.dir.string() +
                     "'; run 'emulate' (or 'prelim') with this output directory first");
  log.add("emulator: fitting " + std::to_string(s.data.m()) + " output GPs (" +
          std::to_string(cfg.model.mle_starts) + " starts each)");
  s.emulator = std::make_shared<Emulator>(
      Emulator::fit(s.data, cfg.model.mle_starts, derive_seed(cfg.seed, Stream::mle_starts)));
  save_dataset(s.data, s.space, (artifacts.dir / "dataset.csv").string());
  const std::string csv_bytes = read_text_file((artifacts.dir / "dataset.csv").string());
  artifacts.manifest_files["dataset.csv"] = {{"hash", fnv1a64_hex(csv_bytes)},
                                             {"bytes", csv_bytes.size()}};
  const std::string meta_bytes =
      read_text_file((artifacts.dir / "dataset.csv.meta.json").string());
  artifacts.manifest_files["dataset.csv.meta.json"] = {{"hash", fnv1a64_hex(meta_bytes)},
                                                       {"bytes", meta_bytes.size()}};
  const nlohmann::json doc = s.emulator->to_json("dataset.csv", fnv1a64_hex(csv_bytes));
  artifacts.write("emulator.json", doc.dump(2) + "\n");
  for (int i = 0; i < s.data.m(); ++i) {
    const auto& gp = s.emulator->output(i);
    std::string rho = "[";
    for (Eigen::Index k = 0; k < gp.hyper.rho.size(); ++k)
      rho += (k ? ", " : "") + format_double(gp.hyper.rho(k));
    rho += "]";
    log.add("emulator: output " + gp.name + " rho = " + rho +
            ", precision = " + format_double(gp.hyper.precision));
  }
}

/// Whether this run evaluates the model directly inside the chain (no
/// emulator). Builtin models default to the direct path.
inline bool direct_path(const RunConfig& cfg) {
  return cfg.model.kind == ModelConfig::Kind::builtin && !cfg.model.use_emulator;
}

inline NoiseSpec resolve_noise(const RunConfig& cfg, int m) {
  switch (cfg.noise.mode) {
    case NoiseConfig::Mode::sampled:
      return NoiseSpec::sampled(m);
    case NoiseConfig::Mode::fixed: {
      Eigen::VectorXd values = cfg.noise.sigma2;
      if (values.size() == 1) values = Eigen::VectorXd::Constant(m, values(0));
      if (values.size() != m)
        throw ConfigError("noise.sigma2 must have one entry per output (" +
                          std::to_string(m) + ") or a single broadcast value");
      return NoiseSpec::fixed(values);
    }
    case NoiseConfig::Mode::command_default:
      break;
  }
  if (cfg.command == Command::prelim)
    return NoiseSpec::fixed(Eigen::VectorXd::Constant(m, NoiseSpec::kPreliminarySigma2));
  return NoiseSpec::sampled(m);
}

inline Eigen::VectorXd resolve_target_native(const RunConfig& cfg, const Sources& s,
                                             RunLog& log) {
  switch (cfg.target.mode) {
    case TargetConfig::Mode::explicit_values: {
      if (cfg.target.values.size() != s.data.m())
        throw ConfigError("target.values must have one entry per output (" +
                          std::to_string(s.data.m()) + ")");
      return cfg.target.values;
    }
    case TargetConfig::Mode::utopia: {
      const Eigen::VectorXd utopia = estimate_utopia(s.data.raw_outputs);
      std::string line = "target: estimated utopia point (";
      for (Eigen::Index i = 0; i < utopia.size(); ++i)
        line += (i ? ", " : "") + format_double(utopia(i));
      log.add(line + ")");
      return utopia;
    }
    case TargetConfig::Mode::ray: {
      const std::filesystem::path path =
          std::filesystem::path(cfg.out_dir) / "suggested_target.json";
      if (!std::filesystem::exists(path))
        throw StateError("target mode 'ray' needs " + path.string() +
                         "; run 'prelim' with this output directory first");
      const nlohmann::json doc = nlohmann::json::parse(read_text_file(path.string()));
      const auto values = doc.at("native").get<std::vector<double>>();
      if (static_cast<int>(values.size()) != s.data.m())
        throw StateError("suggested_target.json output count does not match the model");
      log.add("target: suggested ray target from " + path.string());
      return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                               static_cast<Eigen::Index>(values.size()));
    }
  }
  throw ConfigError("unresolved target mode");
}

struct ChainSummary {
  Eigen::MatrixXd pooled_theta;   // kept x q, unit
  Eigen::MatrixXd pooled_sigma2;  // kept x n_sampled
  Eigen::VectorXd pooled_log_post;
  Eigen::VectorXd rhat;           // per theta component; empty for 1 chain
  double accept_theta_mean = 0.0;
  Eigen::VectorXd accept_sigma2_mean;
  bool converged = true;
};

inline ChainSummary summarize_chains(const std::vector<ChainOutput>& chains,
                                     double rhat_limit = 1.1) {
  ChainSummary s;
  const int kept = static_cast<int>(chains.front().theta_draws.rows());
  const int q = static_cast<int>(chains.front().theta_draws.cols());
  const int ns = static_cast<int>(chains.front().sigma2_draws.cols());
  const int n_chains = static_cast<int>(chains.size());
  s.pooled_theta.resize(kept * n_chains, q);
  s.pooled_sigma2.resize(kept * n_chains, ns);
  s.pooled_log_post.resize(kept * n_chains);
  s.accept_sigma2_mean = Eigen::VectorXd::Zero(ns);
  for (int c = 0; c < n_chains; ++c) {
    s.pooled_theta.middleRows(c * kept, kept) = chains[static_cast<std::size_t>(c)].theta_draws;
    s.pooled_sigma2.middleRows(c * kept, kept) = chains[static_cast<std::size_t>(c)].sigma2_draws;
    s.pooled_log_post.segment(c * kept, kept) = chains[static_cast<std::size_t>(c)].log_post;
    s.accept_theta_mean += chains[static_cast<std::size_t>(c)].accept_rate_theta;
    s.accept_sigma2_mean += chains[static_cast<std::size_t>(c)].accept_rate_sigma2;
  }
  s.accept_theta_mean /= n_chains;
  s.accept_sigma2_mean /= n_chains;
  if (n_chains >= 2) {
    std::vector<Eigen::MatrixXd> theta_only;
    theta_only.reserve(chains.size());
    for (const auto& c : chains) theta_only.push_back(c.theta_draws);
    s.rhat = gelman_rubin(theta_only);
    s.converged = (s.rhat.array() <= rhat_limit).all();
  }
  return s;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

}  // namespace detail

/// Execute a configured run end to end, writing every artifact into the
/// output directory and returning the summary plus a manifest of written
/// files with content hashes.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  detail::RunLog log;
  fs::create_directories(cfg.out_dir);
  detail::ArtifactWriter artifacts{fs::path(cfg.out_dir)};

  log.add("command: " + command_name(cfg.command));
  log.add("seed: " + std::to_string(cfg.seed));
  for (const auto& line : cfg.defaults_applied) log.add("[default] " + line);

  detail::Sources sources = detail::materialize_sources(cfg, log);

  PipelineResult result;
  result.out_dir = cfg.out_dir;
  nlohmann::json& summary = result.summary;
  summary["command"] = command_name(cfg.command);
  summary["seed"] = cfg.seed;
  summary["defaults_applied"] = cfg.defaults_applied;

  const bool needs_emulator = !detail::direct_path(cfg);
  if (cfg.command == Command::emulate) {
    detail::ensure_emulator(cfg, sources, artifacts, log, /*allow_fit=*/true);
    summary["outputs"] = sources.data.output_names;
    summary["n_runs"] = sources.data.n();
  } else if (needs_emulator) {
    const bool allow_fit = cfg.command == Command::prelim;
    detail::ensure_emulator(cfg, sources, artifacts, log, allow_fit);
  }

  if (cfg.command != Command::emulate) {
    const int m_all = sources.data.m();
    const Eigen::MatrixXd bounds = detail::theta_bounds_unit(cfg, sources.space);
    const int q = sources.space.q();
    const int p = sources.space.p();

    if (cfg.command == Command::bands) {
      // Reduce to the two band objectives, dropping the rest from the run.
      const auto& names = sources.data.output_names;
      auto find_output = [&](const std::string& name) {
        for (int i = 0; i < m_all; ++i)
          if (names[static_cast<std::size_t>(i)] == name) return i;
        throw ConfigError("bands: unknown output '" + name + "'");
      };
      const int free_full = find_output(cfg.bands.free_output);
      const int constrained_full = find_output(cfg.bands.constrained_output);
      if (free_full == constrained_full)
        throw ConfigError("bands: free and constrained outputs must differ");
      const std::vector<int> keep = {free_full, constrained_full};

      SimulationDataset reduced = SimulationDataset::from_runs(
          sources.data.inputs,
          [&] {
            Eigen::MatrixXd raw(sources.data.n(), 2);
            raw.col(0) = sources.data.raw_outputs.col(free_full);
            raw.col(1) = sources.data.raw_outputs.col(constrained_full);
            return raw;
          }(),
          {cfg.bands.free_output, cfg.bands.constrained_output});
      const int free_idx = 0, constrained_idx = 1;

      // Grid must stay inside the observed range of the constrained output
      // (with a small standardized slack so an endpoint at the observed
      // extreme is allowed).
      const double obs_lo = reduced.raw_outputs.col(constrained_idx).minCoeff();
      const double obs_hi = reduced.raw_outputs.col(constrained_idx).maxCoeff();
      const double slack = 0.25 * reduced.transform.sds(constrained_idx);
      if (cfg.bands.range_lo < obs_lo - slack || cfg.bands.range_hi > obs_hi + slack)
        throw RangeError("bands.range [" + format_double(cfg.bands.range_lo) + ", " +
                         format_double(cfg.bands.range_hi) +
                         "] outside observed '" + cfg.bands.constrained_output +
                         "' range [" + format_double(obs_lo) + ", " + format_double(obs_hi) +
                         "]");

      PosteriorSpec base;
      if (detail::direct_path(cfg)) {
        base.model = std::make_shared<ComputerModel>(
            reduce_model_outputs(*sources.model, keep));
      } else {
        // Per-output GPs: reuse the already-fitted hyperparameters for the
        // two retained outputs.
        base.emulator = std::make_shared<Emulator>(Emulator::with_hyperparameters(
            reduced, {sources.emulator->output(free_full).hyper,
                      sources.emulator->output(constrained_full).hyper}));
      }
      base.theta_bounds = bounds;
      base.transform = reduced.transform;
      base.noise = NoiseSpec::sampled(2);
      base.target = TargetSet::constant_over_grid(
          reduced.transform.means, reduced.transform, cfg.control_grid, p);

      Eigen::MatrixXd grid(cfg.bands.points, 1);
      for (int i = 0; i < cfg.bands.points; ++i) {
        const double f = cfg.bands.points == 1
                             ? 0.5
                             : static_cast<double>(i) / (cfg.bands.points - 1);
        grid(i, 0) = cfg.bands.range_lo + f * (cfg.bands.range_hi - cfg.bands.range_lo);
      }

      // Infeasibly good target for the free objective: one standardized unit
      // below its observed minimum.
      const double free_target_std =
          reduced.outputs.col(free_idx).minCoeff() - 1.0;

      const PredictiveMode pmode = (cfg.predictive == "mean" || base.model != nullptr)
                                       ? PredictiveMode::mean
                                       : PredictiveMode::sample;
      BandRunner runner = [&](const TargetSet& target, const NoiseSpec& noise,
                              std::uint64_t job_seed) {
        PosteriorSpec spec = base;
        spec.target = target;
        spec.noise = noise;
        ChainConfig chain_cfg = cfg.chain;
        chain_cfg.master_seed = job_seed;
        const std::vector<ChainOutput> chains = run_chains(spec, chain_cfg);
        const detail::ChainSummary cs = detail::summarize_chains(chains);
        const Eigen::MatrixXd predictive = posterior_predictive(
            spec, cs.pooled_theta, pmode, derive_seed(job_seed, Stream::predictive));
        const int g = spec.target.grid_size();
        Eigen::VectorXd free_values(predictive.rows() * g);
        Eigen::Index at = 0;
        for (int j = 0; j < g; ++j)
          for (Eigen::Index r = 0; r < predictive.rows(); ++r)
            free_values(at++) = predictive(r, j * 2 + free_idx);
        BandRunResult br;
        br.free_predictive = std::move(free_values);
        br.max_rhat = cs.rhat.size() ? cs.rhat.maxCoeff() : 1.0;
        return br;
      };

      log.add("bands: " + std::to_string(cfg.bands.points) + " grid points over " +
              cfg.bands.constrained_output + " in [" + format_double(cfg.bands.range_lo) +
              ", " + format_double(cfg.bands.range_hi) + "], free output " +
              cfg.bands.free_output);
      const ParetoBand band = pareto_bands(
          reduced.transform, {constrained_idx}, grid, free_idx, free_target_std,
          cfg.control_grid, p, runner, cfg.seed);

      CsvWriter band_csv({cfg.bands.constrained_output + "_grid",
                          "median_" + cfg.bands.free_output,
                          "lower_" + cfg.bands.free_output,
                          "upper_" + cfg.bands.free_output, "max_rhat", "reliable"});
      bool all_reliable = true;
      for (int i = 0; i < band.size(); ++i) {
        band_csv.add_row({band.grid(i, 0), band.medians(i), band.lower(i), band.upper(i),
                          band.max_rhat(i),
                          band.reliable[static_cast<std::size_t>(i)] ? 1.0 : 0.0});
        all_reliable = all_reliable && band.reliable[static_cast<std::size_t>(i)];
      }
      artifacts.write("bands.csv", band_csv.str());
      if (cfg.svg) {
        artifacts.write("bands.svg",
                        svg::band_chart(band.grid.col(0), band.medians, band.lower,
                                        band.upper, cfg.bands.constrained_output,
                                        cfg.bands.free_output));
      }
      result.converged = all_reliable;
      summary["converged"] = all_reliable;
      summary["band"] = {{"points", band.size()},
                         {"free", cfg.bands.free_output},
                         {"constrained", cfg.bands.constrained_output},
                         {"max_rhat", band.max_rhat.maxCoeff()}};
      log.add(all_reliable ? "bands: all grid points converged"
                           : "bands: one or more grid points failed convergence");
    } else {
      // prelim / cto: one calibration run.
      PosteriorSpec spec;
      if (detail::direct_path(cfg)) {
        spec.model = sources.model;
      } else {
        spec.emulator = sources.emulator;
      }
      spec.theta_bounds = bounds;
      spec.transform = sources.data.transform;
      spec.noise = detail::resolve_noise(cfg, m_all);
      const Eigen::VectorXd target_native = detail::resolve_target_native(cfg, sources, log);
      spec.target = TargetSet::constant_over_grid(target_native, sources.data.transform,
                                                  cfg.control_grid, p);
      spec.validate();

      summary["target"] = {{"native", detail::vector_to_json(spec.target.native_targets)},
                           {"standardized", detail::vector_to_json(spec.target.targets)}};

      log.add("chains: " + std::to_string(cfg.chain.n_chains) + " x " +
              std::to_string(cfg.chain.iterations) + " iterations (" +
              std::to_string(cfg.chain.burn_in) + " burn-in)");
      const std::vector<ChainOutput> chains = run_chains(spec, cfg.chain);
      const detail::ChainSummary cs = detail::summarize_chains(chains);

      // Preliminary fronts are always filtered on predictive means; cto
      // defaults to predictive sampling when an emulator is in play.
      const bool want_sample = spec.emulator != nullptr &&
                               cfg.command == Command::cto && cfg.predictive != "mean";
      const PredictiveMode pmode =
          want_sample ? PredictiveMode::sample : PredictiveMode::mean;
      const Eigen::MatrixXd predictive = posterior_predictive(
          spec, cs.pooled_theta, pmode, derive_seed(cfg.seed, Stream::predictive));
      const Eigen::MatrixXd predictive_means = average_over_grid(predictive, m_all);

      // Shared summary: posterior moments, diagnostics, predictive moments.
      const int kept = static_cast<int>(chains.front().theta_draws.rows());
      Eigen::VectorXd theta_mean_unit(q), theta_sd_unit(q);
      Eigen::VectorXd theta_mean_native(q), theta_sd_native(q);
      for (int i = 0; i < q; ++i) {
        theta_mean_unit(i) = cs.pooled_theta.col(i).mean();
        theta_sd_unit(i) = sample_sd(cs.pooled_theta.col(i));
        const auto& v = sources.space.variable(p + i);
        theta_mean_native(i) = v.lower + theta_mean_unit(i) * (v.upper - v.lower);
        theta_sd_native(i) = theta_sd_unit(i) * (v.upper - v.lower);
      }
      summary["posterior"]["theta_mean_unit"] = detail::vector_to_json(theta_mean_unit);
      summary["posterior"]["theta_sd_unit"] = detail::vector_to_json(theta_sd_unit);
      summary["posterior"]["theta_mean_native"] = detail::vector_to_json(theta_mean_native);
      summary["posterior"]["theta_sd_native"] = detail::vector_to_json(theta_sd_native);
      const auto sampled_noise = spec.noise.sampled_indices();
      if (!sampled_noise.empty()) {
        Eigen::VectorXd s2_mean(static_cast<Eigen::Index>(sampled_noise.size()));
        for (std::size_t k = 0; k < sampled_noise.size(); ++k)
          s2_mean(static_cast<Eigen::Index>(k)) =
              cs.pooled_sigma2.col(static_cast<Eigen::Index>(k)).mean();
        summary["posterior"]["sigma2_mean"] = detail::vector_to_json(s2_mean);
      }
      summary["acceptance"] = {{"theta", cs.accept_theta_mean}};
      if (cs.accept_sigma2_mean.size())
        summary["acceptance"]["sigma2"] = detail::vector_to_json(cs.accept_sigma2_mean);
      if (cs.rhat.size()) {
        summary["rhat"] = detail::vector_to_json(cs.rhat);
        summary["max_rhat"] = cs.rhat.maxCoeff();
      }
      summary["converged"] = cs.converged;
      summary["n_kept"] = kept * cfg.chain.n_chains;
      result.converged = cs.converged;

      Eigen::VectorXd pred_mean(m_all), pred_sd(m_all);
      for (int i = 0; i < m_all; ++i) {
        pred_mean(i) = predictive_means.col(i).mean();
        pred_sd(i) = predictive_means.rows() > 1 ? sample_sd(predictive_means.col(i)) : 0.0;
      }
      summary["predictive"]["mean_native"] = detail::vector_to_json(pred_mean);
      summary["predictive"]["sd_native"] = detail::vector_to_json(pred_sd);
      Eigen::VectorXd pred_mean_std(m_all), pred_sd_std(m_all);
      for (int i = 0; i < m_all; ++i) {
        pred_mean_std(i) = sources.data.transform.standardize(i, pred_mean(i));
        pred_sd_std(i) = pred_sd(i) / sources.data.transform.sds(i);
      }
      summary["predictive"]["mean_standardized"] = detail::vector_to_json(pred_mean_std);
      summary["predictive"]["sd_standardized"] = detail::vector_to_json(pred_sd_std);

      log.add("acceptance: theta " + format_double(cs.accept_theta_mean));
      if (cs.rhat.size()) log.add("max rhat: " + format_double(cs.rhat.maxCoeff()));

      if (cfg.command == Command::prelim) {
        // Pareto filter of the per-draw predictive means, then a suggested
        // target one standoff unit from the front toward the utopia point.
        Eigen::MatrixXd means_std(predictive_means.rows(), m_all);
        for (int i = 0; i < m_all; ++i)
          means_std.col(i) = (predictive_means.col(i).array() -
                              sources.data.transform.means(i)) /
                             sources.data.transform.sds(i);
        const std::vector<int> retained = pareto_filter(means_std);
        ParetoFront front;
        front.outputs_std.resize(static_cast<Eigen::Index>(retained.size()), m_all);
        front.outputs_native.resize(static_cast<Eigen::Index>(retained.size()), m_all);
        front.settings.resize(static_cast<Eigen::Index>(retained.size()), q);
        for (std::size_t k = 0; k < retained.size(); ++k) {
          front.outputs_std.row(static_cast<Eigen::Index>(k)) = means_std.row(retained[k]);
          front.outputs_native.row(static_cast<Eigen::Index>(k)) =
              predictive_means.row(retained[k]);
          front.settings.row(static_cast<Eigen::Index>(k)) = cs.pooled_theta.row(retained[k]);
        }
        log.add("front: retained " + std::to_string(front.size()) + " of " +
                std::to_string(predictive_means.rows()) + " predictions");

        std::vector<std::string> front_header;
        for (const auto& name : sources.data.output_names) front_header.push_back(name);
        for (const auto& name : sources.data.output_names) front_header.push_back(name + "_std");
        for (int i = 0; i < q; ++i)
          front_header.push_back("theta_" + sources.space.variable(p + i).name);
        CsvWriter front_csv(front_header);
        for (int r = 0; r < front.size(); ++r) {
          std::vector<double> row;
          for (int i = 0; i < m_all; ++i) row.push_back(front.outputs_native(r, i));
          for (int i = 0; i < m_all; ++i) row.push_back(front.outputs_std(r, i));
          const Eigen::VectorXd native = detail::theta_unit_to_native(
              sources.space, front.settings.row(r).transpose());
          for (int i = 0; i < q; ++i) row.push_back(native(i));
          front_csv.add_row(row);
        }
        artifacts.write("front.csv", front_csv.str());

        if (cfg.svg) {
          // One scatter per output pair: predictive cloud plus the front.
          for (int i = 0; i < m_all; ++i) {
            for (int j = i + 1; j < m_all; ++j) {
              const std::string& ni = sources.data.output_names[static_cast<std::size_t>(i)];
              const std::string& nj = sources.data.output_names[static_cast<std::size_t>(j)];
              artifacts.write("front_" + ni + "_" + nj + ".svg",
                              svg::front_scatter(predictive_means.col(i),
                                                 predictive_means.col(j),
                                                 front.outputs_native.col(i),
                                                 front.outputs_native.col(j), ni, nj));
            }
          }
        }

        const Eigen::VectorXd utopia_std =
            estimate_utopia(sources.data.outputs);
        const Eigen::VectorXd suggested_std =
            select_target_on_ray(front, utopia_std, cfg.target.standoff);
        Eigen::VectorXd suggested_native(m_all);
        for (int i = 0; i < m_all; ++i)
          suggested_native(i) = sources.data.transform.destandardize(i, suggested_std(i));
        nlohmann::json suggestion;
        suggestion["native"] = detail::vector_to_json(suggested_native);
        suggestion["standardized"] = detail::vector_to_json(suggested_std);
        suggestion["standoff"] = cfg.target.standoff;
        suggestion["utopia_native"] =
            detail::vector_to_json(estimate_utopia(sources.data.raw_outputs));
        suggestion["utopia_standardized"] = detail::vector_to_json(utopia_std);
        artifacts.write("suggested_target.json", suggestion.dump(2) + "\n");
        summary["suggested_target"] = suggestion;
        summary["front_size"] = front.size();
      } else {
        // cto: full draw and predictive traces.
        std::vector<std::string> draw_header = {"chain", "iteration"};
        for (int i = 0; i < q; ++i)
          draw_header.push_back("theta_" + sources.space.variable(p + i).name);
        for (const int i : sampled_noise)
          draw_header.push_back("sigma2_" +
                                sources.data.output_names[static_cast<std::size_t>(i)]);
        draw_header.push_back("log_post");
        CsvWriter draws_csv(draw_header);
        for (std::size_t c = 0; c < chains.size(); ++c) {
          const ChainOutput& chain = chains[c];
          for (int r = 0; r < kept; ++r) {
            std::vector<double> row = {static_cast<double>(c),
                                       static_cast<double>(cfg.chain.burn_in + r)};
            const Eigen::VectorXd native = detail::theta_unit_to_native(
                sources.space, chain.theta_draws.row(r).transpose());
            for (int i = 0; i < q; ++i) row.push_back(native(i));
            for (int k = 0; k < static_cast<int>(sampled_noise.size()); ++k)
              row.push_back(chain.sigma2_draws(r, k));
            row.push_back(chain.log_post(r));
            draws_csv.add_row(row);
          }
        }
        artifacts.write("draws.csv", draws_csv.str());

        std::vector<std::string> pred_header = {"chain", "iteration", "grid_index"};
        for (int j = 0; j < p; ++j)
          pred_header.push_back(sources.space.variable(j).name);
        for (const auto& name : sources.data.output_names) pred_header.push_back(name);
        CsvWriter pred_csv(pred_header);
        const int g = spec.target.grid_size();
        for (Eigen::Index r = 0; r < predictive.rows(); ++r) {
          const int c = static_cast<int>(r) / kept;
          const int it = cfg.chain.burn_in + static_cast<int>(r) % kept;
          for (int j = 0; j < g; ++j) {
            std::vector<double> row = {static_cast<double>(c), static_cast<double>(it),
                                       static_cast<double>(j)};
            for (int k = 0; k < p; ++k) {
              const auto& v = sources.space.variable(k);
              row.push_back(v.lower + spec.target.control_grid(j, k) * (v.upper - v.lower));
            }
            for (int i = 0; i < m_all; ++i) row.push_back(predictive(r, j * m_all + i));
            pred_csv.add_row(row);
          }
        }
        artifacts.write("predictive.csv", pred_csv.str());
      }
    }
  }

  artifacts.write("summary.json", summary.dump(2) + "\n");
  artifacts.write("run.log", log.str());
  result.manifest["command"] = command_name(cfg.command);
  result.manifest["files"] = artifacts.manifest_files;
  write_text_file((fs::path(cfg.out_dir) / "manifest.json").string(),
                  result.manifest.dump(2) + "\n");
  return result;
}

}  // namespace cto

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "cto/pipeline.hpp"

using cto::Command;
using cto::parse_config;
using cto::run_pipeline;
using cto::RunConfig;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cto_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json minimal_cto_config(const fs::path& out) {
  return nlohmann::json{{"command", "cto"},
                        {"model", {{"builtin", "simulated_example"}, {"runs", 200}}},
                        {"target", {{"mode", "explicit"}, {"values", {0.7311, 0.6675, 15.0}}}},
                        {"chain", {{"iterations", 600}, {"burn_in", 300}, {"chains", 2}}},
                        {"out", out.string()},
                        {"seed", 7}};
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("minimal config applies the reference defaults") {
  const nlohmann::json doc = {{"command", "cto"},
                              {"model", {{"builtin", "simulated_example"}}}};
  const RunConfig cfg = parse_config(doc);
  CHECK(cfg.chain.iterations == 6000);
  CHECK(cfg.chain.burn_in == 3000);
  CHECK(cfg.chain.n_chains == 3);
  CHECK(cfg.chain.target_accept_theta == 0.23);
  CHECK(cfg.chain.target_accept_sigma2 == 0.44);
  CHECK(cfg.model.runs == 500);
  CHECK(cfg.target.mode == cto::TargetConfig::Mode::utopia);
  CHECK(cfg.noise.mode == cto::NoiseConfig::Mode::command_default);
  // Every applied default is recorded for the run log.
  CHECK(cfg.defaults_applied.size() >= 5);
  bool saw_iterations = false;
  for (const auto& line : cfg.defaults_applied)
    if (line.find("chain.iterations = 6000") != std::string::npos) saw_iterations = true;
  CHECK(saw_iterations);
}

TEST_CASE("config validation errors") {
  // iterations below burn-in violate the chain invariant.
  CHECK_THROWS_AS(parse_config({{"command", "cto"},
                                {"model", {{"builtin", "simulated_example"}}},
                                {"chain", {{"iterations", 100}, {"burn_in", 200}}}}),
                  cto::ConfigError);
  // Unknown top-level key with a semantic suggestion.
  CHECK_THROWS_WITH_AS(parse_config({{"command", "cto"},
                                     {"model", {{"builtin", "simulated_example"}}},
                                     {"sigma", 0.1}}),
                       doctest::Contains("'noise'"), cto::ConfigError);
  // Near-miss key suggests its neighbor.
  CHECK_THROWS_WITH_AS(parse_config({{"command", "cto"},
                                     {"model", {{"builtin", "simulated_example"}}},
                                     {"sed", 3}}),
                       doctest::Contains("'seed'"), cto::ConfigError);
  // Nested sections get the same treatment.
  CHECK_THROWS_WITH_AS(parse_config({{"command", "cto"},
                                     {"model", {{"builtin", "simulated_example"}}},
                                     {"chain", {{"iteration", 100}}}}),
                       doctest::Contains("'iterations'"), cto::ConfigError);
  // Unknown builtin, missing model, contradictory command.
  CHECK_THROWS_AS(parse_config({{"command", "cto"}, {"model", {{"builtin", "nope"}}}}),
                  cto::ConfigError);
  CHECK_THROWS_AS(parse_config({{"command", "cto"}}), cto::ConfigError);
  CHECK_THROWS_AS(parse_config({{"command", "cto"},
                                {"model", {{"builtin", "simulated_example"}}}},
                               Command::prelim),
                  cto::ConfigError);
  // bands command requires a bands section.
  CHECK_THROWS_AS(parse_config({{"command", "bands"},
                                {"model", {{"builtin", "simulated_example"}}}}),
                  cto::ConfigError);
  // Explicit target without values.
  CHECK_THROWS_AS(parse_config({{"command", "cto"},
                                {"model", {{"builtin", "simulated_example"}}},
                                {"target", {{"mode", "explicit"}}}}),
                  cto::ConfigError);
  // Fixed noise without variances.
  CHECK_THROWS_AS(parse_config({{"command", "cto"},
                                {"model", {{"builtin", "simulated_example"}}},
                                {"noise", {{"mode", "fixed"}}}}),
                  cto::ConfigError);
}

TEST_CASE("cto pipeline writes schema-valid artifacts") {
  const fs::path out = fresh_dir("cto_smoke");
  const RunConfig cfg = parse_config(minimal_cto_config(out));
  const cto::PipelineResult result = run_pipeline(cfg);

  CHECK(fs::exists(out / "draws.csv"));
  CHECK(fs::exists(out / "predictive.csv"));
  CHECK(fs::exists(out / "summary.json"));
  CHECK(fs::exists(out / "run.log"));
  CHECK(fs::exists(out / "manifest.json"));

  // Artifacts round-trip through the generic CSV parser.
  const cto::CsvTable draws = cto::read_csv((out / "draws.csv").string());
  CHECK(draws.header ==
        std::vector<std::string>{"chain", "iteration", "theta_t1", "theta_t2",
                                 "sigma2_y1", "sigma2_y2", "sigma2_y3", "log_post"});
  CHECK(draws.rows() == 2 * 300);  // 2 chains x kept draws
  CHECK(draws.values.allFinite());
  // Native design draws stay inside their declared ranges.
  CHECK(draws.values.col(2).minCoeff() >= 0.0);
  CHECK(draws.values.col(2).maxCoeff() <= 3.0);
  CHECK(draws.values.col(3).minCoeff() >= 0.0);
  CHECK(draws.values.col(3).maxCoeff() <= 6.0);

  const cto::CsvTable predictive = cto::read_csv((out / "predictive.csv").string());
  CHECK(predictive.rows() == draws.rows() * cfg.control_grid);
  CHECK(predictive.column_index("y3") == 6);

  const nlohmann::json summary =
      nlohmann::json::parse(cto::read_text_file((out / "summary.json").string()));
  CHECK(summary.at("command") == "cto");
  CHECK(summary.at("posterior").contains("theta_mean_native"));
  CHECK(summary.at("predictive").contains("mean_native"));
  CHECK(summary.contains("max_rhat"));

  // Manifest hashes match the bytes on disk.
  const nlohmann::json manifest =
      nlohmann::json::parse(cto::read_text_file((out / "manifest.json").string()));
  for (const auto& [name, entry] : manifest.at("files").items()) {
    const std::string bytes = cto::read_text_file((out / name).string());
    CHECK(entry.at("hash") == cto::fnv1a64_hex(bytes));
  }
  CHECK(result.summary.at("command") == "cto");
}

TEST_CASE("pipeline reruns are byte-identical") {
  const fs::path out_a = fresh_dir("det_a");
  const fs::path out_b = fresh_dir("det_b");
  nlohmann::json doc = minimal_cto_config(out_a);
  run_pipeline(parse_config(doc));
  doc["out"] = out_b.string();
  run_pipeline(parse_config(doc));
  CHECK(cto::read_text_file((out_a / "draws.csv").string()) ==
        cto::read_text_file((out_b / "draws.csv").string()));
  CHECK(cto::read_text_file((out_a / "predictive.csv").string()) ==
        cto::read_text_file((out_b / "predictive.csv").string()));
}

TEST_CASE("prelim emits a front and a usable suggested target") {
  const fs::path out = fresh_dir("prelim_flow");
  nlohmann::json doc = {{"command", "prelim"},
                        {"model", {{"builtin", "simulated_example"}, {"runs", 200}}},
                        {"chain", {{"iterations", 1200}, {"burn_in", 600}, {"chains", 2}}},
                        {"out", out.string()},
                        {"seed", 3}};
  const cto::PipelineResult prelim_result = run_pipeline(parse_config(doc));
  CHECK(fs::exists(out / "front.csv"));
  CHECK(fs::exists(out / "suggested_target.json"));
  CHECK(!fs::exists(out / "draws.csv"));  // prelim keeps front artifacts only

  const cto::CsvTable front = cto::read_csv((out / "front.csv").string());
  CHECK(front.rows() >= 1);
  CHECK(front.header.size() == 3 + 3 + 2);  // native, standardized, settings

  // No front point dominates another (standardized block).
  const Eigen::MatrixXd front_std = front.values.middleCols(3, 3);
  for (int i = 0; i < front.rows(); ++i)
    for (int j = 0; j < front.rows(); ++j)
      if (i != j)
        CHECK(!cto::dominates(front_std.row(i).transpose(), front_std.row(j).transpose()));

  const nlohmann::json suggestion =
      nlohmann::json::parse(cto::read_text_file((out / "suggested_target.json").string()));
  CHECK(suggestion.at("native").size() == 3);
  CHECK(prelim_result.summary.at("front_size").get<int>() == front.rows());

  // The suggested target feeds a follow-up calibration via ray mode.
  nlohmann::json cto_doc = {{"command", "cto"},
                            {"model", {{"builtin", "simulated_example"}, {"runs", 200}}},
                            {"target", {{"mode", "ray"}}},
                            {"chain", {{"iterations", 400}, {"burn_in", 200}, {"chains", 2}}},
                            {"out", out.string()},
                            {"seed", 3}};
  const cto::PipelineResult cto_result = run_pipeline(parse_config(cto_doc));
  CHECK(fs::exists(out / "draws.csv"));
  const auto target_native = cto_result.summary.at("target").at("native");
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(target_native[i].get<double>() ==
          doctest::Approx(suggestion.at("native")[i].get<double>()));
}

TEST_CASE("ray target without prelim artifacts is a state error") {
  const fs::path out = fresh_dir("ray_missing");
  nlohmann::json doc = minimal_cto_config(out);
  doc["target"] = {{"mode", "ray"}};
  CHECK_THROWS_WITH_AS(run_pipeline(parse_config(doc)), doctest::Contains("prelim"),
                       cto::StateError);
}

TEST_CASE("tabulated cto without emulator artifacts names the prerequisite") {
  const fs::path out = fresh_dir("csv_no_emulator");
  // Build a small tabulated file from the builtin model.
  const cto::ComputerModel model = cto::simulated_example_model();
  const cto::SimulationDataset data =
      cto::sample_model(model, cto::latin_hypercube(40, 3, 2));
  const std::string csv_path = (out / "runs.csv").string();
  cto::save_dataset(data, model.space, csv_path);

  nlohmann::json doc = {
      {"command", "cto"},
      {"model",
       {{"csv", csv_path},
        {"variables",
         {{{"name", "x"}, {"lower", 1.95}, {"upper", 2.05}, {"kind", "control"}},
          {{"name", "t1"}, {"lower", 0.0}, {"upper", 3.0}, {"kind", "design"}},
          {{"name", "t2"}, {"lower", 0.0}, {"upper", 6.0}, {"kind", "design"}}}}}},
      {"target", {{"mode", "explicit"}, {"values", {0.7311, 0.6675, 15.0}}}},
      {"chain", {{"iterations", 200}, {"burn_in", 100}, {"chains", 2}}},
      {"out", out.string()},
      {"seed", 1}};
  CHECK_THROWS_WITH_AS(run_pipeline(parse_config(doc)), doctest::Contains("emulate"),
                       cto::StateError);
}

TEST_CASE("emulate then cto on a tabulated source") {
  const fs::path out = fresh_dir("csv_flow");
  const cto::ComputerModel model = cto::simulated_example_model();
  const cto::SimulationDataset data =
      cto::sample_model(model, cto::latin_hypercube(40, 3, 2));
  const std::string csv_path = (out / "runs.csv").string();
  cto::save_dataset(data, model.space, csv_path);

  nlohmann::json doc = {
      {"command", "emulate"},
      {"model",
       {{"csv", csv_path},
        {"mle_starts", 2},
        {"variables",
         {{{"name", "x"}, {"lower", 1.95}, {"upper", 2.05}, {"kind", "control"}},
          {{"name", "t1"}, {"lower", 0.0}, {"upper", 3.0}, {"kind", "design"}},
          {{"name", "t2"}, {"lower", 0.0}, {"upper", 6.0}, {"kind", "design"}}}}}},
      {"out", out.string()},
      {"seed", 1}};
  run_pipeline(parse_config(doc));
  CHECK(fs::exists(out / "emulator.json"));
  CHECK(fs::exists(out / "dataset.csv"));

  doc["command"] = "cto";
  doc["target"] = {{"mode", "explicit"}, {"values", {0.7311, 0.6675, 15.0}}};
  doc["chain"] = {{"iterations", 300}, {"burn_in", 150}, {"chains", 2}};
  const cto::PipelineResult result = run_pipeline(parse_config(doc));
  CHECK(fs::exists(out / "draws.csv"));
  CHECK(result.summary.at("posterior").contains("sigma2_mean"));
}

TEST_CASE("stale emulator artifacts are rejected by content hash") {
  const fs::path out = fresh_dir("stale_emulator");
  nlohmann::json doc = {{"command", "emulate"},
                        {"model",
                         {{"builtin", "simulated_example"},
                          {"runs", 30},
                          {"use_emulator", true},
                          {"mle_starts", 2}}},
                        {"out", out.string()},
                        {"seed", 9}};
  run_pipeline(parse_config(doc));
  // Tamper with the referenced dataset; the loader must refuse it.
  std::ofstream(out / "dataset.csv", std::ios::app) << "tampered\n";
  doc["command"] = "cto";
  doc["target"] = {{"mode", "explicit"}, {"values", {0.7311, 0.6675, 15.0}}};
  doc["chain"] = {{"iterations", 100}, {"burn_in", 50}, {"chains", 2}};
  CHECK_THROWS_WITH_AS(run_pipeline(parse_config(doc)), doctest::Contains("hash"),
                       cto::StateError);
}

TEST_CASE("builtin model with an emulator: prelim fits, cto reloads") {
  const fs::path out = fresh_dir("builtin_emulated");
  nlohmann::json doc = {{"command", "prelim"},
                        {"model",
                         {{"builtin", "simulated_example"},
                          {"runs", 60},
                          {"use_emulator", true},
                          {"mle_starts", 2}}},
                        {"chain", {{"iterations", 400}, {"burn_in", 200}, {"chains", 2}}},
                        {"out", out.string()},
                        {"seed", 12}};
  run_pipeline(parse_config(doc));
  REQUIRE(fs::exists(out / "emulator.json"));
  const std::string emulator_before = cto::read_text_file((out / "emulator.json").string());

  doc["command"] = "cto";
  doc["target"] = {{"mode", "ray"}};
  const cto::PipelineResult result = run_pipeline(parse_config(doc));
  CHECK(fs::exists(out / "draws.csv"));
  // cto reused the saved emulator instead of refitting it.
  CHECK(cto::read_text_file((out / "emulator.json").string()) == emulator_before);
  CHECK(result.summary.at("posterior").contains("sigma2_mean"));
}

TEST_CASE("bands range outside the observed outputs is rejected") {
  const fs::path out = fresh_dir("bands_range");
  nlohmann::json doc = {{"command", "bands"},
                        {"model", {{"builtin", "simulated_example"}, {"runs", 200}}},
                        {"bands",
                         {{"free", "y1"},
                          {"constrained", "y3"},
                          {"points", 3},
                          {"range", {40.0, 50.0}}}},
                        {"chain", {{"iterations", 200}, {"burn_in", 100}, {"chains", 2}}},
                        {"out", out.string()},
                        {"seed", 5}};
  CHECK_THROWS_AS(run_pipeline(parse_config(doc)), cto::RangeError);
}

TEST_CASE("bands pipeline writes a monotone-checkable band") {
  const fs::path out = fresh_dir("bands_smoke");
  nlohmann::json doc = {{"command", "bands"},
                        {"model", {{"builtin", "simulated_example"}, {"runs", 200}}},
                        {"bands",
                         {{"free", "y1"},
                          {"constrained", "y3"},
                          {"points", 3},
                          {"range", {16.0, 20.0}}}},
                        {"chain", {{"iterations", 1000}, {"burn_in", 500}, {"chains", 2}}},
                        {"out", out.string()},
                        {"seed", 5}};
  run_pipeline(parse_config(doc));
  const cto::CsvTable bands = cto::read_csv((out / "bands.csv").string());
  REQUIRE(bands.rows() == 3);
  CHECK(bands.header[0] == "y3_grid");
  for (int i = 0; i < 3; ++i) {
    CHECK(bands.values(i, 2) <= bands.values(i, 1));  // lower <= median
    CHECK(bands.values(i, 1) <= bands.values(i, 3));  // median <= upper
  }
}

TEST_CASE("optional svg artifacts") {
  const fs::path out = fresh_dir("svg");
  nlohmann::json doc = {{"command", "prelim"},
                        {"model", {{"builtin", "simulated_example"}, {"runs", 150}}},
                        {"chain", {{"iterations", 400}, {"burn_in", 200}, {"chains", 2}}},
                        {"svg", true},
                        {"out", out.string()},
                        {"seed", 4}};
  run_pipeline(parse_config(doc));
  for (const std::string name : {"front_y1_y2.svg", "front_y1_y3.svg", "front_y2_y3.svg"}) {
    REQUIRE(fs::exists(out / name));
    const std::string body = cto::read_text_file((out / name).string());
    CHECK(body.find("<svg") != std::string::npos);
    CHECK(body.find("<circle") != std::string::npos);
  }

  nlohmann::json bands_doc = {{"command", "bands"},
                              {"model", {{"builtin", "simulated_example"}, {"runs", 150}}},
                              {"bands",
                               {{"free", "y1"},
                                {"constrained", "y3"},
                                {"points", 3},
                                {"range", {16.0, 19.0}}}},
                              {"chain", {{"iterations", 400}, {"burn_in", 200}, {"chains", 2}}},
                              {"svg", true},
                              {"out", out.string()},
                              {"seed", 4}};
  run_pipeline(parse_config(bands_doc));
  const std::string body = cto::read_text_file((out / "bands.svg").string());
  CHECK(body.find("<polygon") != std::string::npos);
  CHECK(body.find("<polyline") != std::string::npos);

  // The chart builders reject inconsistent columns.
  CHECK_THROWS_AS(cto::svg::band_chart(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2),
                                       Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(3),
                                       "a", "b"),
                  cto::ShapeError);
}

TEST_CASE("theta_bounds restrict the design prior") {
  const fs::path out = fresh_dir("theta_bounds");
  nlohmann::json doc = minimal_cto_config(out);
  doc["theta_bounds"] = {{0.5, 1.5}, {2.0, 4.0}};
  run_pipeline(parse_config(doc));
  const cto::CsvTable draws = cto::read_csv((out / "draws.csv").string());
  CHECK(draws.values.col(2).minCoeff() >= 0.5);
  CHECK(draws.values.col(2).maxCoeff() <= 1.5);
  CHECK(draws.values.col(3).minCoeff() >= 2.0);
  CHECK(draws.values.col(3).maxCoeff() <= 4.0);

  // Bounds outside the variable ranges are rejected.
  doc["theta_bounds"] = {{0.5, 3.5}, {2.0, 4.0}};
  CHECK_THROWS_AS(run_pipeline(parse_config(doc)), cto::ConfigError);
}

TEST_CASE("command line binary round-trip") {
  const fs::path out = fresh_dir("cli_smoke");
  const fs::path config_path = out / "config.json";
  nlohmann::json doc = minimal_cto_config(out / "artifacts");
  doc.erase("command");
  cto::write_text_file(config_path.string(), doc.dump(2));
  const std::string command = std::string(CTO_LAB_BINARY) + " cto --config " +
                              config_path.string() + " > " + (out / "stdout.txt").string();
  const int status = std::system(command.c_str());
  CHECK(status == 0);
  CHECK(fs::exists(out / "artifacts" / "draws.csv"));
}

}  // TEST_SUITE

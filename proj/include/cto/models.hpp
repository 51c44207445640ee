#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cto/csv.hpp"
#include "cto/design_space.hpp"
#include "cto/errors.hpp"

namespace cto {

/// A deterministic response function evaluable at native-unit inputs,
/// together with the space its inputs live in.
struct ComputerModel {
  DesignSpace space;
  std::vector<std::string> output_names;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> evaluate;  // native in/out

  int m() const { return static_cast<int>(output_names.size()); }

  /// Evaluate at a unit-hypercube point.
  Eigen::VectorXd evaluate_unit(const Eigen::VectorXd& unit) const {
    return evaluate(space.unscale_from_unit(unit));
  }
};

/// Built-in trivariate test response: one control input x in [1.95, 2.05]
/// and design variables t1 in [0, 3], t2 in [0, 6]. All three outputs are
/// positive; y1 and y2 lie in (0, 1], y3 >= 15.
inline Eigen::VectorXd simulated_example(double x, double t1, double t2) {
  Eigen::VectorXd y(3);
  const double kink = std::abs(t2 - std::numbers::pi * x / 2.0);
  y(0) = 1.0 / (t1 * std::exp(-(t1 + kink)) + 1.0);
  // Exponent x-1 stays in [0.95, 1.05], so pow(0, x-1) = 0 and no special
  // casing is needed at t2 = 0.
  y(1) = 1.0 / (std::pow(t2, x - 1.0) * std::exp(-0.75 * t2) + 1.0);
  y(2) = 15.0 + 2.0 * t1 + t2 * t2 / 4.0;
  return y;
}

inline ComputerModel simulated_example_model() {
  DesignSpace space({{"x", 1.95, 2.05, VarKind::control},
                     {"t1", 0.0, 3.0, VarKind::design},
                     {"t2", 0.0, 6.0, VarKind::design}});
  ComputerModel model{std::move(space),
                      {"y1", "y2", "y3"},
                      [](const Eigen::VectorXd& in) {
                        return simulated_example(in(0), in(1), in(2));
                      }};
  return model;
}

/// Restrict a model to a subset of its outputs (used by the band procedure,
/// which drops objectives from the calibration).
inline ComputerModel reduce_model_outputs(const ComputerModel& model,
                                          const std::vector<int>& keep) {
  std::vector<std::string> names;
  names.reserve(keep.size());
  for (const int i : keep) names.push_back(model.output_names.at(static_cast<std::size_t>(i)));
  auto inner = model.evaluate;
  auto indices = keep;
  ComputerModel reduced{model.space, std::move(names),
                        [inner, indices](const Eigen::VectorXd& in) {
                          const Eigen::VectorXd full = inner(in);
                          Eigen::VectorXd out(static_cast<Eigen::Index>(indices.size()));
                          for (std::size_t k = 0; k < indices.size(); ++k)
                            out(static_cast<Eigen::Index>(k)) = full(indices[k]);
                          return out;
                        }};
  return reduced;
}

/// Evaluate a model over a unit-scale design and package the runs.
inline SimulationDataset sample_model(const ComputerModel& model,
                                      const Eigen::MatrixXd& unit_design) {
  if (unit_design.cols() != model.space.dim())
    throw ShapeError("sample_model: design width != model input dimension");
  Eigen::MatrixXd raw(unit_design.rows(), model.m());
  for (Eigen::Index r = 0; r < unit_design.rows(); ++r) {
    const Eigen::VectorXd out = model.evaluate_unit(unit_design.row(r).transpose());
    if (!out.allFinite())
      throw DataError("sample_model: non-finite model output at design row " +
                      std::to_string(r));
    raw.row(r) = out.transpose();
  }
  return SimulationDataset::from_runs(unit_design, std::move(raw), model.output_names);
}

/// Ingest tabulated simulator runs from CSV. The header must name the p+q
/// input columns (matching the space, in order) followed by one or more
/// output columns. Values are native units.
inline SimulationDataset load_tabulated_sim(const std::string& path,
                                            const DesignSpace& space) {
  const CsvTable table = read_csv(path);
  const int d = space.dim();
  if (table.cols() < d + 1)
    throw IngestError("file " + path + ": expected at least " + std::to_string(d + 1) +
                      " columns (" + std::to_string(d) + " inputs + outputs)");
  for (int j = 0; j < d; ++j) {
    if (table.header[static_cast<std::size_t>(j)] != space.variable(j).name)
      throw IngestError("file " + path + ": column " + std::to_string(j + 1) + " is '" +
                        table.header[static_cast<std::size_t>(j)] + "', expected input '" +
                        space.variable(j).name + "'");
  }
  if (table.rows() < 2) throw IngestError("file " + path + ": need at least 2 data rows");

  const int m = table.cols() - d;
  Eigen::MatrixXd unit_inputs(table.rows(), d);
  for (int r = 0; r < table.rows(); ++r) {
    const int file_row = r + 2;  // physical line: header is row 1
    for (int j = 0; j < table.cols(); ++j) {
      const double v = table.values(r, j);
      if (!std::isfinite(v))
        throw IngestError("file " + path + ": non-finite value at row " +
                          std::to_string(file_row) + ", column '" +
                          table.header[static_cast<std::size_t>(j)] + "'");
    }
    try {
      unit_inputs.row(r) =
          space.scale_to_unit(table.values.row(r).head(d).transpose()).transpose();
    } catch (const RangeError& e) {
      throw IngestError("file " + path + ", row " + std::to_string(file_row) + ": " +
                        e.what());
    }
  }
  std::vector<std::string> names(table.header.begin() + d, table.header.end());
  Eigen::MatrixXd raw = table.values.rightCols(m);
  return SimulationDataset::from_runs(std::move(unit_inputs), std::move(raw),
                                      std::move(names));
}

/// Write a dataset back out in the ingestion schema (native units), plus a
/// JSON sidecar recording the variable ranges and output transform.
inline void save_dataset(const SimulationDataset& data, const DesignSpace& space,
                         const std::string& csv_path) {
  std::vector<std::string> header;
  for (const auto& v : space.variables()) header.push_back(v.name);
  for (const auto& n : data.output_names) header.push_back(n);
  CsvWriter writer(header);
  const Eigen::MatrixXd native_inputs = space.unscale_rows_from_unit(data.inputs);
  for (int r = 0; r < data.n(); ++r) {
    std::vector<double> row;
    row.reserve(header.size());
    for (int j = 0; j < space.dim(); ++j) row.push_back(native_inputs(r, j));
    for (int j = 0; j < data.m(); ++j) row.push_back(data.raw_outputs(r, j));
    writer.add_row(row);
  }
  write_text_file(csv_path, writer.str());

  nlohmann::json sidecar;
  for (const auto& v : space.variables()) {
    sidecar["variables"].push_back({{"name", v.name},
                                    {"lower", v.lower},
                                    {"upper", v.upper},
                                    {"kind", v.kind == VarKind::control ? "control" : "design"}});
  }
  sidecar["outputs"] = data.output_names;
  sidecar["transform"]["means"] =
      std::vector<double>(data.transform.means.data(),
                          data.transform.means.data() + data.transform.means.size());
  sidecar["transform"]["sds"] =
      std::vector<double>(data.transform.sds.data(),
                          data.transform.sds.data() + data.transform.sds.size());
  write_text_file(csv_path + ".meta.json", sidecar.dump(2) + "\n");
}

/// Reload a dataset written by save_dataset, reconstructing the space from
/// the sidecar.
inline std::pair<SimulationDataset, DesignSpace> load_dataset(const std::string& csv_path) {
  const nlohmann::json sidecar = nlohmann::json::parse(read_text_file(csv_path + ".meta.json"));
  std::vector<VariableSpec> vars;
  for (const auto& v : sidecar.at("variables")) {
    vars.push_back({v.at("name").get<std::string>(), v.at("lower").get<double>(),
                    v.at("upper").get<double>(),
                    v.at("kind").get<std::string>() == "control" ? VarKind::control
                                                                 : VarKind::design});
  }
  DesignSpace space(std::move(vars));
  SimulationDataset data = load_tabulated_sim(csv_path, space);
  return {std::move(data), std::move(space)};
}

}  // namespace cto

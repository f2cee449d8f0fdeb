#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pil/lti_world.hpp"

namespace pil {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view text);

nlohmann::json noise_to_json(const NoiseModel& model);
NoiseModel noise_from_json(const nlohmann::json& j);

/// Sidecar path for a CSV file: data.csv -> data.meta.json
std::filesystem::path sidecar_path(const std::filesystem::path& csv);

/// Dataset CSV: one row per (traj, t) with columns
///   traj,t,y_0..y_{obs-1},v_0..v_{m-1},x_0..x_{n-1},u_0..u_{m-1}
/// Inputs are empty on the final row (t = T) of each trajectory.
void write_dataset(const TrajectoryDataset& ds, const std::filesystem::path& csv);

struct ExpectedDims
{
  std::optional<int> n;
  std::optional<int> m;
  std::optional<int> obs_dim;
};

/// Reads a dataset and its sidecar. Throws IoError on malformed files and
/// ShapeError when the header, rows or `expect` disagree with the metadata.
TrajectoryDataset read_dataset(const std::filesystem::path& csv, const ExpectedDims& expect = {});

/// Named matrices (gains, predictors) in long form: name,row,col,value.
struct MatrixBundle
{
  std::vector<std::pair<std::string, Mat>> items;
  nlohmann::json meta = nlohmann::json::object();

  const Mat& get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

void write_matrices(const MatrixBundle& bundle, const std::filesystem::path& csv);
MatrixBundle read_matrices(const std::filesystem::path& csv);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace pil

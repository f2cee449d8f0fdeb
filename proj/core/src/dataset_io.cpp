#include "pil/dataset_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace pil {

namespace {

std::vector<std::string_view> split_commas(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

long parse_int(std::string_view text)
{
  long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw IoError("expected an integer, got '" + std::string(text) + "'");
  return v;
}

std::vector<double> to_vector(const Mat& M) { return {M.data(), M.data() + M.size()}; }

}  // namespace

std::string format_double(double v)
{
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw IoError("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text)
{
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw IoError("expected a number, got '" + std::string(text) + "'");
  return v;
}

nlohmann::json noise_to_json(const NoiseModel& model)
{
  nlohmann::json j;
  j["dim"] = model.dim();
  switch (model.kind()) {
    case NoiseKind::None: j["kind"] = "none"; break;
    case NoiseKind::Gaussian:
      j["kind"] = "gaussian";
      j["covariance"] = to_vector(model.covariance());
      break;
    case NoiseKind::Uniform:
      j["kind"] = "uniform";
      j["bounds"] = to_vector(model.bounds());
      break;
  }
  return j;
}

NoiseModel noise_from_json(const nlohmann::json& j)
{
  try {
    const int dim = j.at("dim").get<int>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "none") return NoiseModel::none(dim);
    if (kind == "gaussian") {
      const auto c = j.at("covariance").get<std::vector<double>>();
      if (static_cast<int>(c.size()) != dim * dim) throw ShapeError("noise covariance has wrong size");
      return NoiseModel::gaussian(Eigen::Map<const Mat>(c.data(), dim, dim));
    }
    if (kind == "uniform") {
      const auto b = j.at("bounds").get<std::vector<double>>();
      if (static_cast<int>(b.size()) != dim) throw ShapeError("noise bounds have wrong size");
      return NoiseModel::uniform(Eigen::Map<const Vec>(b.data(), dim));
    }
    throw IoError("unknown noise kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed noise description: ") + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv)
{
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

void write_text_file(const std::filesystem::path& path, const std::string& content)
{
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string read_text_file(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_dataset(const TrajectoryDataset& ds, const std::filesystem::path& csv)
{
  ds.validate();
  const auto& meta = ds.meta;
  std::string out;
  out += "traj,t";
  for (int i = 0; i < meta.obs_dim; ++i) out += ",y_" + std::to_string(i);
  for (int i = 0; i < meta.m; ++i) out += ",v_" + std::to_string(i);
  for (int i = 0; i < meta.n; ++i) out += ",x_" + std::to_string(i);
  for (int i = 0; i < meta.m; ++i) out += ",u_" + std::to_string(i);
  out += '\n';

  for (std::size_t k = 0; k < ds.trajectories.size(); ++k) {
    const auto& tr = ds.trajectories[k];
    for (int t = 0; t <= meta.T; ++t) {
      out += std::to_string(k) + ',' + std::to_string(t);
      for (int i = 0; i < meta.obs_dim; ++i) out += ',' + format_double(tr.y(i, t));
      for (int i = 0; i < meta.m; ++i) out += t < meta.T ? ',' + format_double(tr.v(i, t)) : std::string(",");
      for (int i = 0; i < meta.n; ++i) out += ',' + format_double(tr.x(i, t));
      for (int i = 0; i < meta.m; ++i) out += t < meta.T ? ',' + format_double(tr.u(i, t)) : std::string(",");
      out += '\n';
    }
  }
  write_text_file(csv, out);

  nlohmann::json j;
  j["format"] = "pil-dataset";
  j["version"] = 1;
  j["n"] = meta.n;
  j["m"] = meta.m;
  j["T"] = meta.T;
  j["obs_dim"] = meta.obs_dim;
  j["n_traj"] = ds.trajectories.size();
  j["encoder"] = meta.encoder;
  j["noise"] = {{"x0", noise_to_json(meta.x0)}, {"xi", noise_to_json(meta.xi)}, {"eta", noise_to_json(meta.eta)}};
  j["seed"] = meta.seed;
  j["expert"] = meta.expert;
  j["extra"] = meta.extra;
  write_text_file(sidecar_path(csv), j.dump(2) + "\n");
}

TrajectoryDataset read_dataset(const std::filesystem::path& csv, const ExpectedDims& expect)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(sidecar_path(csv)));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset metadata '" + sidecar_path(csv).string() + "': " + e.what());
  }

  TrajectoryDataset ds;
  auto& meta = ds.meta;
  std::size_t n_traj = 0;
  try {
    if (j.at("format").get<std::string>() != "pil-dataset") throw IoError("not a pil dataset sidecar");
    meta.n = j.at("n").get<int>();
    meta.m = j.at("m").get<int>();
    meta.T = j.at("T").get<int>();
    meta.obs_dim = j.at("obs_dim").get<int>();
    n_traj = j.at("n_traj").get<std::size_t>();
    meta.encoder = j.at("encoder").get<std::string>();
    meta.x0 = noise_from_json(j.at("noise").at("x0"));
    meta.xi = noise_from_json(j.at("noise").at("xi"));
    meta.eta = noise_from_json(j.at("noise").at("eta"));
    meta.seed = j.at("seed").get<std::uint64_t>();
    meta.expert = j.at("expert").get<std::string>();
    meta.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("dataset metadata missing field: " + std::string(e.what()));
  }

  auto check = [](const char* what, const std::optional<int>& want, int got) {
    if (want && *want != got)
      throw ShapeError(std::string("dataset dimension mismatch: ") + what + " is " + std::to_string(got) +
                       ", expected " + std::to_string(*want));
  };
  check("n", expect.n, meta.n);
  check("m", expect.m, meta.m);
  check("obs_dim", expect.obs_dim, meta.obs_dim);

  const int cols = 2 + meta.obs_dim + 2 * meta.m + meta.n;
  std::istringstream in(read_text_file(csv));
  std::string line;
  if (!std::getline(in, line)) throw IoError("dataset '" + csv.string() + "' is empty");
  {
    const auto header = split_commas(line);
    if (static_cast<int>(header.size()) != cols)
      throw ShapeError("dataset header has " + std::to_string(header.size()) + " columns, metadata implies " +
                       std::to_string(cols));
    int c = 2;
    auto expect_prefix = [&](const char* prefix, int count) {
      for (int i = 0; i < count; ++i, ++c)
        if (header[static_cast<std::size_t>(c)] != std::string(prefix) + std::to_string(i))
          throw ShapeError("dataset header column " + std::to_string(c) + " is '" +
                           std::string(header[static_cast<std::size_t>(c)]) + "', expected " + prefix + std::to_string(i));
    };
    if (header[0] != "traj" || header[1] != "t") throw ShapeError("dataset header must start with traj,t");
    expect_prefix("y_", meta.obs_dim);
    expect_prefix("v_", meta.m);
    expect_prefix("x_", meta.n);
    expect_prefix("u_", meta.m);
  }

  ds.trajectories.resize(n_traj);
  for (auto& tr : ds.trajectories) {
    tr.x.resize(meta.n, meta.T + 1);
    tr.u.resize(meta.m, meta.T);
    tr.y.resize(meta.obs_dim, meta.T + 1);
    tr.v.resize(meta.m, meta.T);
  }

  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (static_cast<int>(f.size()) != cols)
      throw ShapeError("dataset row " + std::to_string(rows + 1) + " has " + std::to_string(f.size()) + " fields");
    const long k = parse_int(f[0]);
    const long t = parse_int(f[1]);
    if (k < 0 || static_cast<std::size_t>(k) >= n_traj || t < 0 || t > meta.T)
      throw ShapeError("dataset row index (" + std::to_string(k) + "," + std::to_string(t) + ") out of range");
    auto& tr = ds.trajectories[static_cast<std::size_t>(k)];
    std::size_t c = 2;
    for (int i = 0; i < meta.obs_dim; ++i) tr.y(i, t) = parse_double(f[c++]);
    for (int i = 0; i < meta.m; ++i, ++c)
      if (t < meta.T) tr.v(i, t) = parse_double(f[c]);
    for (int i = 0; i < meta.n; ++i) tr.x(i, t) = parse_double(f[c++]);
    for (int i = 0; i < meta.m; ++i, ++c)
      if (t < meta.T) tr.u(i, t) = parse_double(f[c]);
    ++rows;
  }
  if (rows != n_traj * static_cast<std::size_t>(meta.T + 1))
    throw ShapeError("dataset has " + std::to_string(rows) + " rows, metadata implies " +
                     std::to_string(n_traj * static_cast<std::size_t>(meta.T + 1)));

  // Noise records are recoverable only when y lives in raw state coordinates.
  ds.has_noise_records = meta.encoder == "raw" && meta.obs_dim == meta.n;
  if (ds.has_noise_records)
    for (auto& tr : ds.trajectories) {
      tr.xi = tr.y - tr.x;
      tr.eta = tr.v - tr.u;
    }
  return ds;
}

const Mat& MatrixBundle::get(const std::string& name) const
{
  for (const auto& [k, v] : items)
    if (k == name) return v;
  throw IoError("matrix bundle has no entry '" + name + "'");
}

bool MatrixBundle::contains(const std::string& name) const
{
  for (const auto& item : items)
    if (item.first == name) return true;
  return false;
}

void write_matrices(const MatrixBundle& bundle, const std::filesystem::path& csv)
{
  std::string out = "name,row,col,value\n";
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [name, M] : bundle.items) {
    shapes.push_back({{"name", name}, {"rows", M.rows()}, {"cols", M.cols()}});
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        out += name + ',' + std::to_string(i) + ',' + std::to_string(c) + ',' + format_double(M(i, c)) + '\n';
  }
  write_text_file(csv, out);
  nlohmann::json j;
  j["format"] = "pil-matrices";
  j["version"] = 1;
  j["matrices"] = shapes;
  j["meta"] = bundle.meta;
  write_text_file(sidecar_path(csv), j.dump(2) + "\n");
}

MatrixBundle read_matrices(const std::filesystem::path& csv)
{
  MatrixBundle bundle;
  std::map<std::string, std::size_t> index;
  try {
    const auto j = nlohmann::json::parse(read_text_file(sidecar_path(csv)));
    if (j.at("format").get<std::string>() != "pil-matrices") throw IoError("not a pil matrix sidecar");
    bundle.meta = j.value("meta", nlohmann::json::object());
    for (const auto& s : j.at("matrices")) {
      index[s.at("name").get<std::string>()] = bundle.items.size();
      bundle.items.emplace_back(s.at("name").get<std::string>(),
                                Mat::Constant(s.at("rows").get<int>(), s.at("cols").get<int>(),
                                              std::numeric_limits<double>::quiet_NaN()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed matrix metadata: " + std::string(e.what()));
  }

  std::istringstream in(read_text_file(csv));
  std::string line;
  std::getline(in, line);
  if (line != "name,row,col,value") throw IoError("matrix file '" + csv.string() + "' has an unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != 4) throw IoError("matrix row has " + std::to_string(f.size()) + " fields");
    const auto it = index.find(std::string(f[0]));
    if (it == index.end()) throw ShapeError("matrix '" + std::string(f[0]) + "' is not declared in the sidecar");
    Mat& M = bundle.items[it->second].second;
    const long r = parse_int(f[1]);
    const long c = parse_int(f[2]);
    if (r < 0 || c < 0 || r >= M.rows() || c >= M.cols())
      throw ShapeError("matrix '" + std::string(f[0]) + "' index out of range");
    M(r, c) = parse_double(f[3]);
  }
  for (const auto& [name, M] : bundle.items)
    if (!M.allFinite()) throw IoError("matrix '" + name + "' is incomplete");
  return bundle;
}

}  // namespace pil

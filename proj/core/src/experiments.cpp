#include "pil/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <set>
#include <thread>

#include "pil/dataset_io.hpp"

namespace pil {

namespace {

using json = nlohmann::json;

/// Reads one JSON object, remembering which keys were consumed so that
/// leftovers can be reported by their full path.
class ObjectReader
{
public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path))
  {
    if (!j_.is_object())
      throw ConfigError("'" + label() + "' must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json& at(const char* key)
  {
    seen_.insert(key);
    return j_.at(key);
  }

  std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  void read(const char* key, T& out)
  {
    if (!has(key))
      return;
    try {
      out = at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + sub(key) + "' has the wrong type");
    }
  }

  void finish() const
  {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ConfigError("unknown key '" + sub(it.key().c_str()) + "'");
  }

private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json matrix_to_json(const Mat& M)
{
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c)
      row.push_back(M(r, c));
    rows.push_back(row);
  }
  return rows;
}

Mat matrix_from_json(const json& j, const std::string& path)
{
  if (!j.is_array() || j.empty())
    throw ConfigError("'" + path + "' must be a non-empty list of rows");
  const std::size_t cols = j.front().is_array() ? j.front().size() : 0;
  if (cols == 0)
    throw ConfigError("'" + path + "' must be a non-empty list of rows");
  Mat M(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ConfigError("'" + path + "' rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        throw ConfigError("'" + path + "' entries must be numbers");
      M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return M;
}

}  // namespace

Mat WeightSpec::resolve(int n, const std::string& what) const
{
  if (is_scalar)
    return scalar * Mat::Identity(n, n);
  if (matrix.rows() != n || matrix.cols() != n)
    throw ConfigError("'" + what + "' must be " + std::to_string(n) + "x" + std::to_string(n));
  return matrix;
}

json WeightSpec::to_json() const { return is_scalar ? json(scalar) : matrix_to_json(matrix); }

WeightSpec WeightSpec::parse(const json& j, const std::string& path)
{
  WeightSpec w;
  if (j.is_number()) {
    w.scalar = j.get<double>();
  } else {
    w.is_scalar = false;
    w.matrix = matrix_from_json(j, path);
  }
  return w;
}

NoiseModel NoiseSpec::resolve(int dim, const std::string& what) const
{
  if (kind == "none")
    return NoiseModel::none(dim);
  if (scale.size() != 1 && static_cast<int>(scale.size()) != dim)
    throw ConfigError("'" + what + ".scale' needs 1 or " + std::to_string(dim) + " entries");
  Vec s(dim);
  for (int i = 0; i < dim; ++i) {
    const double v = scale.size() == 1 ? scale[0] : scale[static_cast<std::size_t>(i)];
    if (v < 0.0)
      throw ConfigError("'" + what + ".scale' must be non-negative");
    s[i] = units == "deg" ? deg_to_rad(v) : v;
  }
  if (kind == "gaussian") {
    if (s.isZero(0.0))
      return NoiseModel::none(dim);
    return NoiseModel::gaussian(s.cwiseAbs2().asDiagonal());
  }
  if (kind == "uniform") {
    if (s.isZero(0.0))
      return NoiseModel::none(dim);
    return NoiseModel::uniform(s);
  }
  throw ConfigError("'" + what + ".kind' must be none, gaussian or uniform");
}

json NoiseSpec::to_json() const { return {{"kind", kind}, {"scale", scale}, {"units", units}}; }

NoiseSpec NoiseSpec::parse(const json& j, const std::string& path)
{
  ObjectReader r(j, path);
  NoiseSpec s;
  r.read("kind", s.kind);
  r.read("scale", s.scale);
  r.read("units", s.units);
  r.finish();
  if (s.kind != "none" && s.kind != "gaussian" && s.kind != "uniform")
    throw ConfigError("'" + path + ".kind' must be none, gaussian or uniform");
  if (s.units != "rad" && s.units != "deg")
    throw ConfigError("'" + path + ".units' must be rad or deg");
  if (s.kind != "none" && s.scale.empty())
    throw ConfigError("'" + path + ".scale' is required for " + s.kind + " noise");
  return s;
}

const std::vector<std::string>& experiment_ids()
{
  static const std::vector<std::string> ids{"lin-noise-sweep", "lin-pred-order", "pendulum", "theory-scan", "pipeline"};
  return ids;
}

namespace {

std::vector<std::uint64_t> seed_range(int n)
{
  std::vector<std::uint64_t> s(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    s[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);
  return s;
}

NoiseSpec gaussian(double std) { return {"gaussian", {std}, "rad"}; }
NoiseSpec uniform(std::vector<double> half, std::string units = "rad") { return {"uniform", std::move(half), std::move(units)}; }

}  // namespace

// Full-scale settings. The network experiments take hours at these widths on
// a single core; configs/*.desk.json scale them down.
ExperimentConfig ExperimentConfig::defaults(const std::string& experiment)
{
  ExperimentConfig c;
  c.experiment = experiment;
  c.out = "results/" + experiment;
  if (experiment == "lin-noise-sweep") {
    c.seeds = seed_range(100);
    c.H = {1, 2, 4, 8, 16};
    c.methods = {"bc", "pil"};
    c.noise = {{"high_state_noise", gaussian(0.1), gaussian(0.01)}, {"high_input_noise", gaussian(0.01), gaussian(0.3)}};
    c.eval.n_test = 1000;
  } else if (experiment == "lin-pred-order") {
    c.seeds = seed_range(10);
    c.H = {2, 4, 8};
    c.methods = {"bc", "rollout", "pil"};
    c.noise = {{"uniform_0.01", uniform({0.01}), uniform({0.01})}};
    c.loss.Q = 0.1;
    c.loss.R = 1.0;
    c.loss.P = 1.0;
    c.model.encoder_hidden = {512, 512, 512, 512};
    c.model.predictor_hidden = {512};
    c.train.epochs = 300;
    c.train.lr_end = 5e-4;  // constant rate
    c.eval.n_test = 100;
  } else if (experiment == "pendulum") {
    c.seeds = seed_range(5);
    c.H = {4};
    c.methods = {"bc", "rollout", "rollout_nograd", "pil", "pil_nograd"};
    c.data.x0 = uniform({std::numbers::pi, 1.0});
    c.noise = {{"no_noise", {}, {}}, {"noise", uniform({1.0, 0.001}, "deg"), uniform({0.1})}};
    c.model.encoder_hidden = {1024, 1024, 1024, 1024};
    c.model.predictor_hidden = {1024};
    c.train.epochs = 5000;
    c.eval.n_test = 1000;
  } else if (experiment == "theory-scan") {
    c.seeds = seed_range(1);
    c.methods = {"pil_fixed_g"};
    // Per-coordinate variances on n = 2, m = 1: tr Sigma_xi = tr Sigma_eta, then 100x.
    c.comparison.cases = {{"equal_trace", 0.005, 0.01}, {"state_dominant_100x", 0.5, 0.01}};
  } else if (experiment == "pipeline") {
    c.seeds = seed_range(1);
    c.H = {2};
    c.methods = {"bc", "pil"};
    c.noise = {{"default", gaussian(0.1), gaussian(0.01)}};
  } else {
    throw ConfigError("unknown experiment '" + experiment + "'");
  }
  return c;
}

namespace {

void parse_model(const json& j, ModelSection& m)
{
  ObjectReader r(j, "model");
  r.read("encoder_hidden", m.encoder_hidden);
  r.read("predictor_hidden", m.predictor_hidden);
  r.read("policy_hidden", m.policy_hidden);
  r.read("activation", m.activation);
  r.finish();
}

void parse_weight(ObjectReader& r, const char* key, WeightSpec& w)
{
  if (r.has(key))
    w = WeightSpec::parse(r.at(key), r.sub(key));
}

void parse_noise(ObjectReader& r, const char* key, NoiseSpec& n)
{
  if (r.has(key))
    n = NoiseSpec::parse(r.at(key), r.sub(key));
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j)
{
  if (!j.is_object() || !j.contains("experiment") || !j.at("experiment").is_string())
    throw ConfigError("config needs a string 'experiment' key");
  ExperimentConfig c = defaults(j.at("experiment").get<std::string>());
  ObjectReader r(j, "");
  (void)r.at("experiment");
  r.read("seeds", c.seeds);
  r.read("out", c.out);
  r.read("environment", c.environment);

  if (r.has("system")) {
    const json& s = r.at("system");
    if (s.is_string()) {
      if (s.get<std::string>() != "reference")
        throw ConfigError("'system' must be \"reference\" or an object with A and B");
      c.reference_system = true;
    } else {
      ObjectReader sr(s, "system");
      c.reference_system = false;
      if (!sr.has("A") || !sr.has("B"))
        throw ConfigError("'system' needs both A and B");
      c.A = matrix_from_json(sr.at("A"), "system.A");
      c.B = matrix_from_json(sr.at("B"), "system.B");
      sr.finish();
    }
  }
  if (r.has("pendulum"))
    c.pendulum = PendulumParams::from_json(r.at("pendulum"));
  if (r.has("expert")) {
    ObjectReader er(r.at("expert"), "expert");
    parse_weight(er, "Qc", c.linear.Qc);
    parse_weight(er, "Rc", c.linear.Rc);
    er.read("k_e", c.k_e);
    er.finish();
  }
  if (r.has("data")) {
    ObjectReader dr(r.at("data"), "data");
    dr.read("n_traj", c.data.n_traj);
    dr.read("T", c.data.T);
    parse_noise(dr, "x0", c.data.x0);
    dr.finish();
  }
  if (r.has("noise")) {
    const json& arr = r.at("noise");
    if (!arr.is_array())
      throw ConfigError("'noise' must be a list of cases");
    c.noise.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = "noise[" + std::to_string(i) + "]";
      ObjectReader nr(arr[i], path);
      NoiseCase nc;
      nr.read("name", nc.name);
      parse_noise(nr, "xi", nc.xi);
      parse_noise(nr, "eta", nc.eta);
      nr.finish();
      if (nc.name.empty())
        throw ConfigError("'" + path + ".name' is required");
      c.noise.push_back(nc);
    }
  }
  r.read("H", c.H);
  r.read("methods", c.methods);
  if (r.has("linear")) {
    ObjectReader lr(r.at("linear"), "linear");
    parse_weight(lr, "R", c.linear.R);
    parse_weight(lr, "P", c.linear.P);
    lr.read("decay", c.linear.decay);
    lr.read("predictors", c.linear.predictors);
    lr.read("ridge", c.linear.ridge);
    lr.finish();
  }
  if (r.has("model"))
    parse_model(r.at("model"), c.model);
  if (r.has("loss")) {
    ObjectReader lr(r.at("loss"), "loss");
    parse_weight(lr, "Q", c.loss.Q);
    parse_weight(lr, "R", c.loss.R);
    parse_weight(lr, "P", c.loss.P);
    lr.read("decay", c.loss.decay);
    lr.finish();
  }
  if (r.has("train")) {
    ObjectReader tr(r.at("train"), "train");
    tr.read("epochs", c.train.epochs);
    tr.read("batch_size", c.train.batch_size);
    tr.read("steps_per_epoch", c.train.steps_per_epoch);
    tr.read("lr_start", c.train.lr_start);
    tr.read("lr_end", c.train.lr_end);
    tr.finish();
  }
  if (r.has("eval")) {
    ObjectReader er(r.at("eval"), "eval");
    er.read("n_test", c.eval.n_test);
    er.read("T", c.eval.T);
    parse_noise(er, "x0", c.eval.x0);
    er.finish();
  }
  if (r.has("scaling")) {
    ObjectReader sr(r.at("scaling"), "scaling");
    auto& s = c.scaling;
    sr.read("estimator", s.estimator);
    sr.read("H", s.H);
    sr.read("decay", s.decay);
    parse_weight(sr, "Q", s.Q);
    parse_weight(sr, "R", s.R);
    parse_weight(sr, "P", s.P);
    sr.read("T_grid", s.T_grid);
    sr.read("xi_levels", s.xi_levels);
    sr.read("eta_variance", s.eta_variance);
    sr.read("segment_length", s.segment_length);
    sr.read("seeds", s.seeds);
    sr.read("plateau_points", s.plateau_points);
    sr.finish();
  }
  if (r.has("comparison")) {
    ObjectReader cr(r.at("comparison"), "comparison");
    auto& s = c.comparison;
    cr.read("draws", s.draws);
    cr.read("n_traj", s.n_traj);
    cr.read("T", s.T);
    parse_weight(cr, "Q", s.Q);
    parse_weight(cr, "R", s.R);
    if (cr.has("cases")) {
      const json& arr = cr.at("cases");
      if (!arr.is_array())
        throw ConfigError("'comparison.cases' must be a list");
      s.cases.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        ObjectReader kr(arr[i], "comparison.cases[" + std::to_string(i) + "]");
        ComparisonCase cc;
        kr.read("name", cc.name);
        kr.read("xi_variance", cc.xi_variance);
        kr.read("eta_variance", cc.eta_variance);
        kr.finish();
        s.cases.push_back(cc);
      }
    }
    cr.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path)
{
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const
{
  json j;
  j["experiment"] = experiment;
  j["seeds"] = seeds;
  j["out"] = out;
  j["environment"] = environment;
  if (reference_system)
    j["system"] = "reference";
  else
    j["system"] = {{"A", matrix_to_json(A)}, {"B", matrix_to_json(B)}};
  j["pendulum"] = pendulum.to_json();
  j["expert"] = {{"Qc", linear.Qc.to_json()}, {"Rc", linear.Rc.to_json()}, {"k_e", k_e}};
  j["data"] = {{"n_traj", data.n_traj}, {"T", data.T}, {"x0", data.x0.to_json()}};
  json cases = json::array();
  for (const auto& n : noise)
    cases.push_back({{"name", n.name}, {"xi", n.xi.to_json()}, {"eta", n.eta.to_json()}});
  j["noise"] = cases;
  j["H"] = H;
  j["methods"] = methods;
  j["linear"] = {{"R", linear.R.to_json()},
                 {"P", linear.P.to_json()},
                 {"decay", linear.decay},
                 {"predictors", linear.predictors},
                 {"ridge", linear.ridge}};
  j["model"] = {{"encoder_hidden", model.encoder_hidden},
                {"predictor_hidden", model.predictor_hidden},
                {"policy_hidden", model.policy_hidden},
                {"activation", model.activation}};
  j["loss"] = {{"Q", loss.Q.to_json()}, {"R", loss.R.to_json()}, {"P", loss.P.to_json()}, {"decay", loss.decay}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"steps_per_epoch", train.steps_per_epoch},
                {"lr_start", train.lr_start},
                {"lr_end", train.lr_end}};
  j["eval"] = {{"n_test", eval.n_test}, {"T", eval.T}, {"x0", eval.x0.to_json()}};
  const auto& s = scaling;
  j["scaling"] = {{"estimator", s.estimator},   {"H", s.H},
                  {"decay", s.decay},           {"Q", s.Q.to_json()},
                  {"R", s.R.to_json()},         {"P", s.P.to_json()},
                  {"T_grid", s.T_grid},         {"xi_levels", s.xi_levels},
                  {"eta_variance", s.eta_variance}, {"segment_length", s.segment_length},
                  {"seeds", s.seeds},           {"plateau_points", s.plateau_points}};
  json cc = json::array();
  for (const auto& k : comparison.cases)
    cc.push_back({{"name", k.name}, {"xi_variance", k.xi_variance}, {"eta_variance", k.eta_variance}});
  j["comparison"] = {{"draws", comparison.draws}, {"n_traj", comparison.n_traj}, {"T", comparison.T},
                     {"Q", comparison.Q.to_json()}, {"R", comparison.R.to_json()}, {"cases", cc}};
  return j;
}

namespace {

bool is_nn_method(const std::string& m)
{
  return m == "bc" || m == "rollout" || m == "rollout_nograd" || m == "pil" || m == "pil_nograd";
}

}  // namespace

void ExperimentConfig::validate() const
{
  if (std::find(experiment_ids().begin(), experiment_ids().end(), experiment) == experiment_ids().end())
    throw ConfigError("unknown experiment '" + experiment + "'");
  if (seeds.empty())
    throw ConfigError("'seeds' must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("'seeds' must be distinct");
  if (data.n_traj < 1 || data.T < 1)
    throw ConfigError("'data.n_traj' and 'data.T' must be positive");
  if (eval.n_test < 1 || eval.T < 1)
    throw ConfigError("'eval.n_test' and 'eval.T' must be positive");
  for (int h : H)
    if (h < 1 || h > data.T)
      throw ConfigError("'H' entries must lie in [1, data.T]");
  if (train.epochs < 1 || train.batch_size < 1 || train.steps_per_epoch < 0)
    throw ConfigError("'train.epochs' and 'train.batch_size' must be positive");
  if (!(train.lr_start > 0.0) || train.lr_end < 0.0 || train.lr_end > train.lr_start)
    throw ConfigError("'train' needs lr_start > 0 and 0 <= lr_end <= lr_start");
  if (!(linear.decay > 0.0 && linear.decay <= 1.0) || !(loss.decay > 0.0 && loss.decay <= 1.0))
    throw ConfigError("decay factors must lie in (0, 1]");
  if (linear.predictors != "ols" && linear.predictors != "true")
    throw ConfigError("'linear.predictors' must be ols or true");
  (void)nn::activation_from_string(model.activation);
  if (!reference_system)
    (void)LtiSystem(A, B);

  const bool needs_noise = experiment != "theory-scan";
  if (needs_noise && noise.empty())
    throw ConfigError("'noise' needs at least one case");
  if (needs_noise && H.empty())
    throw ConfigError("'H' must not be empty");

  for (const auto& m : methods) {
    bool ok = false;
    if (experiment == "lin-noise-sweep")
      ok = m == "bc" || m == "pil";
    else if (experiment == "theory-scan")
      ok = m == "pil_fixed_g" || m == "bc" || m == "pil_h1";
    else if (experiment == "pipeline" && environment == "linear_lqr")
      ok = m == "bc" || m == "pil";
    else
      ok = is_nn_method(m);
    if (!ok)
      throw ConfigError("method '" + m + "' is not available for " + experiment +
                        (experiment == "pipeline" ? " (" + environment + ")" : std::string()));
  }
  if (methods.empty())
    throw ConfigError("'methods' must not be empty");
  if (experiment == "pipeline" && environment != "linear_lqr" && environment != "linear_mlp" &&
      environment != "pendulum")
    throw ConfigError("'environment' must be linear_lqr, linear_mlp or pendulum");
  if (experiment == "theory-scan") {
    (void)estimator_from_string(scaling.estimator);
    if (comparison.draws < 1 || comparison.n_traj < 1 || comparison.T < 2)
      throw ConfigError("'comparison' needs draws >= 1, n_traj >= 1 and T >= 2");
    for (const auto& k : comparison.cases)
      if (k.xi_variance < 0.0 || k.eta_variance < 0.0)
        throw ConfigError("comparison variances must be non-negative");
  }
}

std::string ExperimentConfig::hash() const
{
  // The output directory is where results go, not what they are.
  nlohmann::json j = to_json();
  j.erase("out");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

LtiSystem ExperimentConfig::system() const { return reference_system ? reference_lti_system() : LtiSystem(A, B); }

Aggregate aggregate(const std::vector<ResultRow>& rows, const std::string& method, int H, const std::string& metric)
{
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.method == method && r.H == H && r.metric == metric)
      v.push_back(r.value);
  Aggregate a;
  a.count = static_cast<int>(v.size());
  summarize(v, a.mean, a.std);
  return a;
}

std::string format_results_csv(const std::vector<ResultRow>& rows, const std::string& config_hash)
{
  std::string out = "# config_hash=" + config_hash + "\nexperiment,method,H,seed,metric,value\n";
  for (const auto& r : rows)
    out += r.experiment + ',' + r.method + ',' + std::to_string(r.H) + ',' + std::to_string(r.seed) + ',' + r.metric +
           ',' + format_double(r.value) + '\n';
  return out;
}

int threads_from_env()
{
  if (const char* s = std::getenv("PIL_THREADS")) {
    const int v = std::atoi(s);
    if (v >= 1)
      return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int count, int threads, const std::function<void(int)>& fn)
{
  if (count <= 0)
    return;
  threads = std::clamp(threads, 1, count);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
  auto work = [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  };
  if (threads == 1) {
    for (int i = 0; i < count; ++i)
      work(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int i = next++; i < count; i = next++)
          work(i);
      });
    for (auto& th : pool)
      th.join();
  }
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

namespace {

constexpr std::uint64_t kDataKey = 1;
constexpr std::uint64_t kEvalKey = 2;
constexpr std::uint64_t kInitKey = 3;
constexpr std::uint64_t kBatchKey = 4;
constexpr std::uint64_t kExpertKey = 5;

std::string join_csv(const std::string& hash, const std::string& header, const std::vector<std::string>& lines)
{
  std::string out = "# config_hash=" + hash + "\n" + header + "\n";
  for (const auto& l : lines)
    out += l + "\n";
  return out;
}

NoiseModel eval_x0(const ExperimentConfig& cfg, int n)
{
  return cfg.eval.x0.kind == "none" ? cfg.data.x0.resolve(n, "data.x0") : cfg.eval.x0.resolve(n, "eval.x0");
}

struct NnRun
{
  TrainMode mode;
  bool gradient;
};

NnRun nn_method(const std::string& m)
{
  if (m == "bc")
    return {TrainMode::Bc, true};
  if (m == "rollout")
    return {TrainMode::Rollout, true};
  if (m == "rollout_nograd")
    return {TrainMode::Rollout, false};
  if (m == "pil")
    return {TrainMode::Pil, true};
  if (m == "pil_nograd")
    return {TrainMode::Pil, false};
  throw ConfigError("unknown method '" + m + "'");
}

PilModelSpec model_spec(const ExperimentConfig& cfg, const TrajectoryDataset& ds, const Dynamics& dyn, int H)
{
  PilModelSpec s;
  s.obs_dim = ds.meta.obs_dim;
  s.n = ds.meta.n;
  s.m = ds.meta.m;
  s.H = H;
  s.encoder = ds.meta.encoder;
  s.periodic = dyn.periodic();
  s.encoder_hidden = cfg.model.encoder_hidden;
  s.predictor_hidden = cfg.model.predictor_hidden;
  s.policy_hidden = cfg.model.policy_hidden;
  s.activation = nn::activation_from_string(cfg.model.activation);
  return s;
}

PilLossConfig loss_config(const ExperimentConfig& cfg, int n, int m, int H, const NnRun& run)
{
  PilLossConfig l;
  l.Q = cfg.loss.Q.resolve(n, "loss.Q");
  l.R = cfg.loss.R.resolve(m, "loss.R");
  l.P = cfg.loss.P.resolve(n, "loss.P");
  l.H = H;
  l.decay = cfg.loss.decay;
  l.mode = run.mode;
  l.dynamics_gradient = run.gradient;
  return l;
}

TrainConfig train_config(const ExperimentConfig& cfg)
{
  TrainConfig t;
  t.epochs = cfg.train.epochs;
  t.batch_size = cfg.train.batch_size;
  t.steps_per_epoch = cfg.train.steps_per_epoch;
  t.lr_start = cfg.train.lr_start;
  t.lr_end = cfg.train.lr_end;
  return t;
}

struct TrainedModel
{
  PilModel model;
  TrainResult log;
};

/// Same seed, same policy initialization and minibatch stream for every method.
TrainedModel train_nn(const ExperimentConfig& cfg, const TrajectoryDataset& ds, const Dynamics& dyn,
                      const std::string& method, int H, const RngStream& root)
{
  const NnRun run = nn_method(method);
  const int h = run.mode == TrainMode::Bc ? 1 : H;
  TrainedModel out;
  out.model = PilModel(model_spec(cfg, ds, dyn, h), run.mode == TrainMode::Pil);
  out.model.init(root.substream(kInitKey));
  RngStream batches = root.substream(kBatchKey);
  out.log = train(out.model, ds, dyn, loss_config(cfg, ds.meta.n, ds.meta.m, h, run), train_config(cfg), batches);
  return out;
}

/// Horizons a method is trained for: bc ignores H.
std::vector<int> method_horizons(const ExperimentConfig& cfg, const std::string& method)
{
  if (method == "bc")
    return {1};
  return cfg.H;
}

std::string metric_name(const std::string& scope, const std::string& metric)
{
  return scope.empty() ? metric : scope + "/" + metric;
}

}  // namespace

RunOutput run_lin_noise_sweep(const ExperimentConfig& cfg, int threads)
{
  const LtiSystem sys = cfg.system();
  const int n = sys.n();
  const int m = sys.m();
  const Mat Kstar = lqr_gain(sys, cfg.linear.Qc.resolve(n, "expert.Qc"), cfg.linear.Rc.resolve(m, "expert.Rc")).K;
  const Policy expert = linear_policy(Kstar);
  const NoiseModel x0 = cfg.data.x0.resolve(n, "data.x0");
  const NoiseModel x0_test = eval_x0(cfg, n);
  const bool has_bc = std::find(cfg.methods.begin(), cfg.methods.end(), "bc") != cfg.methods.end();
  const bool has_pil = std::find(cfg.methods.begin(), cfg.methods.end(), "pil") != cfg.methods.end();

  const int seeds = static_cast<int>(cfg.seeds.size());
  std::vector<std::vector<ResultRow>> per_seed(static_cast<std::size_t>(seeds));
  parallel_for(seeds, threads, [&](int si) {
    const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];
    const RngStream root(seed);
    auto& rows = per_seed[static_cast<std::size_t>(si)];
    for (std::size_t ci = 0; ci < cfg.noise.size(); ++ci) {
      const NoiseCase& nc = cfg.noise[ci];
      const NoiseModel xi = nc.xi.resolve(n, "noise.xi");
      const NoiseModel eta = nc.eta.resolve(m, "noise.eta");
      RngStream data_rng = root.substream(kDataKey).substream(ci);
      const TrajectoryDataset ds = generate_expert_dataset(sys, {Kstar}, cfg.data.n_traj, cfg.data.T, x0, xi, eta, data_rng);
      const ObservationView view(ds);
      const RngStream eval_rng = root.substream(kEvalKey).substream(ci);

      auto evaluate = [&](const Mat& K) {
        RngStream r = eval_rng;  // common random numbers across estimators
        return max_discrepancy(sys, expert, linear_policy(K), cfg.eval.n_test, cfg.eval.T, x0_test, xi, r).mean;
      };
      const double bc_disc = evaluate(fit_bc(view).K);
      if (has_bc)
        rows.push_back({cfg.experiment, "bc", 0, seed, metric_name(nc.name, "discrepancy"), bc_disc});
      if (!has_pil)
        continue;
      for (int H : cfg.H) {
        const PredictorSetLinear G = cfg.linear.predictors == "ols"
                                         ? fit_predictors_ols(view, H, cfg.linear.ridge)
                                         : PredictorSetLinear::closed_loop_powers(sys, Kstar, H);
        const LossWeightsLinear w(Mat::Identity(n, n), cfg.linear.R.resolve(m, "linear.R"),
                                  cfg.linear.P.resolve(n, "linear.P"), H, cfg.linear.decay);
        const Mat K = fit_pil_fixed_G(view, sys, G, w).K;
        const double d = evaluate(K);
        rows.push_back({cfg.experiment, "pil", H, seed, metric_name(nc.name, "discrepancy"), d});
        rows.push_back({cfg.experiment, "pil", H, seed, metric_name(nc.name, "ratio_to_bc"), d / bc_disc});
        rows.push_back({cfg.experiment, "pil", H, seed, metric_name(nc.name, "gain_error"), spectral_norm(K - Kstar)});
      }
    }
  });

  RunOutput out;
  for (auto& v : per_seed)
    out.rows.insert(out.rows.end(), v.begin(), v.end());
  const std::string hash = cfg.hash();
  for (const auto& nc : cfg.noise) {
    std::vector<std::string> lines;
    for (int H : cfg.H) {
      const Aggregate a = aggregate(out.rows, "pil", H, metric_name(nc.name, "ratio_to_bc"));
      lines.push_back(std::to_string(H) + ',' + format_double(a.mean) + ',' + format_double(0.5 * a.std));
    }
    out.files["fig2_" + nc.name + ".csv"] = join_csv(hash, "H,pil_over_bc_mean,pil_over_bc_half_std", lines);
  }
  return out;
}

RunOutput run_lin_pred_order(const ExperimentConfig& cfg, int threads)
{
  const LtiSystem sys = cfg.system();
  const LinearDynamics dyn(sys);
  const int n = sys.n();
  const int m = sys.m();
  const NoiseModel x0 = cfg.data.x0.resolve(n, "data.x0");
  const NoiseModel x0_test = eval_x0(cfg, n);
  const NoiseCase& nc = cfg.noise.front();
  const NoiseModel xi = nc.xi.resolve(n, "noise.xi");
  const NoiseModel eta = nc.eta.resolve(m, "noise.eta");

  struct Job
  {
    std::size_t seed_index;
    std::string method;
    int H;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
    for (const auto& meth : cfg.methods)
      for (int H : method_horizons(cfg, meth))
        jobs.push_back({si, meth, H});

  std::vector<std::vector<ResultRow>> per_job(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int ji) {
    const Job& job = jobs[static_cast<std::size_t>(ji)];
    const std::uint64_t seed = cfg.seeds[job.seed_index];
    const RngStream root(seed);
    const MlpExpert expert = mlp_expert_linear(root.substream(kExpertKey).seed());
    const Policy expert_pol = expert.policy();
    RngStream data_rng = root.substream(kDataKey);
    const TrajectoryDataset ds = generate_nonlinear_dataset(dyn, expert_pol, cfg.data.n_traj, cfg.data.T, x0, xi, eta,
                                                            ObsEncoder::raw(n), data_rng);
    const TrainedModel tm = train_nn(cfg, ds, dyn, job.method, job.H, root);
    RngStream eval_rng = root.substream(kEvalKey);
    const DiscrepancyResult d =
        max_discrepancy(dyn, expert_pol, deploy_policy(tm.model), cfg.eval.n_test, cfg.eval.T, x0_test, xi, eval_rng);
    auto& rows = per_job[static_cast<std::size_t>(ji)];
    const int h = job.method == "bc" ? 0 : job.H;
    rows.push_back({cfg.experiment, job.method, h, seed, "discrepancy", d.mean});
    rows.push_back({cfg.experiment, job.method, h, seed, "final_train_loss", tm.log.log.back().loss.total});
  });

  RunOutput out;
  for (auto& v : per_job)
    out.rows.insert(out.rows.end(), v.begin(), v.end());
  std::vector<std::string> lines;
  std::string header = "H";
  for (const auto& meth : cfg.methods)
    header += "," + meth + "_mean," + meth + "_half_std";
  for (int H : cfg.H) {
    std::string line = std::to_string(H);
    for (const auto& meth : cfg.methods) {
      const Aggregate a = aggregate(out.rows, meth, meth == "bc" ? 0 : H, "discrepancy");
      line += ',' + format_double(a.mean) + ',' + format_double(0.5 * a.std);
    }
    lines.push_back(line);
  }
  out.files["fig3.csv"] = join_csv(cfg.hash(), header, lines);
  return out;
}

RunOutput run_pendulum(const ExperimentConfig& cfg, int threads)
{
  const Pendulum pend(cfg.pendulum);
  const Policy expert = pendulum_expert(pend, cfg.k_e);
  const NoiseModel x0 = cfg.data.x0.resolve(2, "data.x0");
  const NoiseModel x0_test = eval_x0(cfg, 2);
  const ObsEncoder enc = ObsEncoder::trig_angle(pend.periodic());

  struct Job
  {
    std::size_t seed_index;
    std::size_t case_index;
    std::string method;
    int H;
  };
  std::vector<Job> jobs;
  for (std::size_t si = 0; si < cfg.seeds.size(); ++si)
    for (std::size_t ci = 0; ci < cfg.noise.size(); ++ci)
      for (const auto& meth : cfg.methods)
        for (int H : method_horizons(cfg, meth))
          jobs.push_back({si, ci, meth, H});

  std::vector<std::vector<ResultRow>> per_job(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int ji) {
    const Job& job = jobs[static_cast<std::size_t>(ji)];
    const std::uint64_t seed = cfg.seeds[job.seed_index];
    const NoiseCase& nc = cfg.noise[job.case_index];
    const NoiseModel xi = nc.xi.resolve(2, "noise.xi");
    const NoiseModel eta = nc.eta.resolve(1, "noise.eta");
    const RngStream root = RngStream(seed).substream(100 + job.case_index);
    RngStream data_rng = root.substream(kDataKey);
    TrajectoryDataset ds =
        generate_nonlinear_dataset(pend, expert, cfg.data.n_traj, cfg.data.T, x0, xi, eta, enc, data_rng);
    const TrainedModel tm = train_nn(cfg, ds, pend, job.method, job.H, root);
    const Policy learned = deploy_policy(tm.model);
    RngStream eval_rng = root.substream(kEvalKey);
    const DiscrepancyResult d =
        max_discrepancy(pend, expert, learned, cfg.eval.n_test, cfg.eval.T, x0_test, xi, eval_rng);
    RngStream ret_rng = root.substream(kEvalKey + 10);
    const ReturnResult ret = episode_return(pend, learned, expert, cfg.eval.n_test, cfg.eval.T, x0_test, xi, ret_rng);
    auto& rows = per_job[static_cast<std::size_t>(ji)];
    const int h = job.method == "bc" ? 0 : job.H;
    rows.push_back({cfg.experiment, job.method, h, seed, metric_name(nc.name, "discrepancy"), d.mean});
    rows.push_back({cfg.experiment, job.method, h, seed, metric_name(nc.name, "return_ratio"), ret.ratio});
    rows.push_back({cfg.experiment, job.method, h, seed, metric_name(nc.name, "final_train_loss"),
                    tm.log.log.back().loss.total});
  });

  RunOutput out;
  for (auto& v : per_job)
    out.rows.insert(out.rows.end(), v.begin(), v.end());
  std::vector<std::string> lines;
  for (const auto& nc : cfg.noise)
    for (const auto& meth : cfg.methods)
      for (int H : method_horizons(cfg, meth)) {
        const int h = meth == "bc" ? 0 : H;
        const Aggregate d = aggregate(out.rows, meth, h, metric_name(nc.name, "discrepancy"));
        const Aggregate r = aggregate(out.rows, meth, h, metric_name(nc.name, "return_ratio"));
        lines.push_back(nc.name + ',' + meth + ',' + std::to_string(h) + ',' + format_double(d.mean) + ',' +
                        format_double(0.5 * d.std) + ',' + format_double(r.mean) + ',' + format_double(0.5 * r.std));
      }
  out.files["table1.csv"] = join_csv(
      cfg.hash(), "case,method,H,discrepancy_mean,discrepancy_half_std,return_ratio_mean,return_ratio_half_std", lines);
  return out;
}

RunOutput run_theory_scan(const ExperimentConfig& cfg, int threads)
{
  const LtiSystem sys = cfg.system();
  const int n = sys.n();
  const int m = sys.m();
  const Mat Kstar = lqr_gain(sys, cfg.linear.Qc.resolve(n, "expert.Qc"), cfg.linear.Rc.resolve(m, "expert.Rc")).K;
  const std::uint64_t base = cfg.seeds.front();
  const std::string hash = cfg.hash();
  RunOutput out;

  for (const auto& meth : cfg.methods) {
    const auto& s = cfg.scaling;
    ScalingConfig sc;
    sc.sys = sys;
    sc.K_star = Kstar;
    sc.weights = LossWeightsLinear(s.Q.resolve(n, "scaling.Q"), s.R.resolve(m, "scaling.R"), s.P.resolve(n, "scaling.P"),
                                   s.H, s.decay);
    sc.estimator = estimator_from_string(meth);
    sc.T_grid = s.T_grid;
    sc.xi_levels = s.xi_levels;
    sc.eta_variance = s.eta_variance;
    sc.segment_length = s.segment_length;
    sc.seeds = s.seeds;
    sc.seed = base;
    sc.plateau_points = s.plateau_points;
    const ScalingFit fit = scaling_scan(sc);
    const int h = sc.estimator == Estimator::PilFixedG ? s.H : 1;

    std::vector<std::string> cells;
    for (const auto& c : fit.cells)
      cells.push_back(std::to_string(c.T) + ',' + std::to_string(c.T_eff) + ',' + format_double(c.xi_level) + ',' +
                      format_double(c.mean_err) + ',' + format_double(c.std_err));
    out.files["scaling_cells_" + meth + ".csv"] = join_csv(hash, "T,T_eff,xi_level,mean_err,std_err", cells);

    auto row = [&](const std::string& metric, double v) { out.rows.push_back({cfg.experiment, meth, h, base, metric, v}); };
    row("slope_fitted", fit.slope_fitted ? 1.0 : 0.0);
    if (fit.slope_fitted) {
      row("slope", fit.slope);
      row("kappa1", std::exp(fit.intercept));
    }
    for (std::size_t k = 0; k < fit.plateaus.size(); ++k)
      row("plateau@" + format_double(fit.plateau_levels[k]), fit.plateaus[k]);
    for (std::size_t k = 0; k < fit.plateau_ratios.size(); ++k)
      row("plateau_ratio@" + format_double(fit.plateau_levels[k + 1]), fit.plateau_ratios[k]);
    row("kappa2", fit.noise_floor);
  }

  const auto& cmp = cfg.comparison;
  const Mat Q = cmp.Q.resolve(n, "comparison.Q");
  const Mat R = cmp.R.resolve(m, "comparison.R");
  const NoiseModel x0 = cfg.data.x0.resolve(n, "data.x0");
  std::vector<std::string> lines;
  for (std::size_t ci = 0; ci < cmp.cases.size(); ++ci) {
    const ComparisonCase& cc = cmp.cases[ci];
    const Mat Sxi = cc.xi_variance * Mat::Identity(n, n);
    const Mat Seta = cc.eta_variance * Mat::Identity(m, m);
    const NoiseModel xi = NoiseModel::isotropic_gaussian(n, cc.xi_variance);
    const NoiseModel eta = NoiseModel::isotropic_gaussian(m, cc.eta_variance);
    std::vector<ComparisonReport> reports(static_cast<std::size_t>(cmp.draws));
    parallel_for(cmp.draws, threads, [&](int d) {
      RngStream rng = RngStream(base).substream(1000 + ci).substream(static_cast<std::uint64_t>(d));
      const TrajectoryDataset ds = generate_expert_dataset(sys, {Kstar}, cmp.n_traj, cmp.T, x0, xi, eta, rng);
      reports[static_cast<std::size_t>(d)] = compare_pil_bc(ds, sys, Q, R, Sxi, Seta);
    });
    double pil = 0.0;
    double bc = 0.0;
    for (const auto& r : reports) {
      pil += r.omega_pil_norm;
      bc += r.omega_bc_norm;
    }
    pil /= cmp.draws;
    bc /= cmp.draws;
    const ComparisonReport& r0 = reports.front();
    auto row = [&](const std::string& metric, double v) {
      out.rows.push_back({cfg.experiment, "comparison", 1, base, metric_name(cc.name, metric), v});
    };
    row("mean_omega_pil", pil);
    row("mean_omega_bc", bc);
    row("bound_lhs", r0.lhs);
    row("bound_rhs", r0.rhs);
    row("condition_holds", r0.condition_holds ? 1.0 : 0.0);
    row("empirical_holds", pil <= bc ? 1.0 : 0.0);
    lines.push_back(cc.name + ',' + format_double(Sxi.trace()) + ',' + format_double(Seta.trace()) + ',' +
                    format_double(pil) + ',' + format_double(bc) + ',' + format_double(r0.lhs) + ',' +
                    format_double(r0.rhs) + ',' + (r0.condition_holds ? "1" : "0") + ',' + (pil <= bc ? "1" : "0"));
  }
  out.files["theorem2.csv"] = join_csv(hash,
                                       "case,xi_trace,eta_trace,mean_omega_pil,mean_omega_bc,bound_lhs,bound_rhs,"
                                       "condition_holds,empirical_holds",
                                       lines);
  return out;
}

RunOutput run_experiment(const ExperimentConfig& cfg, int threads)
{
  if (cfg.experiment == "lin-noise-sweep")
    return run_lin_noise_sweep(cfg, threads);
  if (cfg.experiment == "lin-pred-order")
    return run_lin_pred_order(cfg, threads);
  if (cfg.experiment == "pendulum")
    return run_pendulum(cfg, threads);
  if (cfg.experiment == "theory-scan")
    return run_theory_scan(cfg, threads);
  throw ConfigError("experiment '" + cfg.experiment + "' is run stage by stage (gen-data, train, eval)");
}

void write_outputs(const RunOutput& out, const ExperimentConfig& cfg, const std::filesystem::path& dir)
{
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string hash = cfg.hash();
  write_text_file(dir / "results.csv", format_results_csv(out.rows, hash));
  json meta = cfg.to_json();
  meta["config_hash"] = hash;
  write_text_file(dir / "config.json", meta.dump(2) + "\n");
  for (const auto& [name, content] : out.files) {
    const auto path = dir / name;
    std::filesystem::create_directories(path.parent_path(), ec);
    write_text_file(path, content);
  }
}

namespace {

struct Environment
{
  std::unique_ptr<Dynamics> dyn;
  Policy expert;
  ObsEncoder encoder;
  Mat Kstar;  // linear_lqr only
};

Environment make_environment(const ExperimentConfig& cfg, std::uint64_t seed)
{
  Environment env;
  if (cfg.environment == "pendulum") {
    auto p = std::make_unique<Pendulum>(cfg.pendulum);
    env.expert = pendulum_expert(*p, cfg.k_e);
    env.encoder = ObsEncoder::trig_angle(p->periodic());
    env.dyn = std::move(p);
    return env;
  }
  const LtiSystem sys = cfg.system();
  env.encoder = ObsEncoder::raw(sys.n());
  if (cfg.environment == "linear_mlp") {
    env.expert = mlp_expert_linear(RngStream(seed).substream(kExpertKey).seed()).policy();
  } else {
    env.Kstar =
        lqr_gain(sys, cfg.linear.Qc.resolve(sys.n(), "expert.Qc"), cfg.linear.Rc.resolve(sys.m(), "expert.Rc")).K;
    env.expert = linear_policy(env.Kstar);
  }
  env.dyn = std::make_unique<LinearDynamics>(sys);
  return env;
}

std::filesystem::path dataset_path(const std::filesystem::path& dir, std::uint64_t seed)
{
  return dir / "data" / ("seed" + std::to_string(seed) + ".csv");
}

std::filesystem::path model_path(const ExperimentConfig& cfg, const std::filesystem::path& dir,
                                 const std::string& method, int H, std::uint64_t seed)
{
  const std::string stem = method + "_H" + std::to_string(H) + "_seed" + std::to_string(seed);
  return dir / "models" / (stem + (cfg.environment == "linear_lqr" ? ".csv" : ".json"));
}

void ensure_dir(const std::filesystem::path& p)
{
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec)
    throw IoError("cannot create " + p.string() + ": " + ec.message());
}

struct PipelineJob
{
  std::uint64_t seed;
  std::string method;
  int H;
};

std::vector<PipelineJob> pipeline_jobs(const ExperimentConfig& cfg)
{
  std::vector<PipelineJob> jobs;
  for (auto seed : cfg.seeds)
    for (const auto& meth : cfg.methods)
      for (int H : method_horizons(cfg, meth))
        jobs.push_back({seed, meth, H});
  return jobs;
}

}  // namespace

void stage_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads)
{
  if (cfg.experiment != "pipeline")
    throw ConfigError("gen-data needs a pipeline config");
  ensure_dir(dir / "data");
  const NoiseCase& nc = cfg.noise.front();
  parallel_for(static_cast<int>(cfg.seeds.size()), threads, [&](int si) {
    const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];
    const Environment env = make_environment(cfg, seed);
    const int n = env.dyn->state_dim();
    const int m = env.dyn->input_dim();
    RngStream rng = RngStream(seed).substream(kDataKey);
    TrajectoryDataset ds = generate_nonlinear_dataset(*env.dyn, env.expert, cfg.data.n_traj, cfg.data.T,
                                                      cfg.data.x0.resolve(n, "data.x0"), nc.xi.resolve(n, "noise.xi"),
                                                      nc.eta.resolve(m, "noise.eta"), env.encoder, rng);
    ds.meta.expert = cfg.environment;
    ds.meta.extra["config_hash"] = cfg.hash();
    if (nc.xi.units == "deg")
      ds.meta.extra["xi_scale_deg"] = nc.xi.scale;
    write_dataset(ds, dataset_path(dir, seed));
  });
}

void stage_train(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads)
{
  if (cfg.experiment != "pipeline")
    throw ConfigError("train needs a pipeline config");
  ensure_dir(dir / "models");
  ensure_dir(dir / "logs");
  const auto jobs = pipeline_jobs(cfg);
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int ji) {
    const PipelineJob& job = jobs[static_cast<std::size_t>(ji)];
    const Environment env = make_environment(cfg, job.seed);
    const int n = env.dyn->state_dim();
    const int m = env.dyn->input_dim();
    const TrajectoryDataset ds =
        read_dataset(dataset_path(dir, job.seed), ExpectedDims{n, m, env.encoder.obs_dim()});
    const std::string hash = cfg.hash();
    if (cfg.environment == "linear_lqr") {
      const ObservationView view(ds);
      const LtiSystem sys = cfg.system();
      MatrixBundle bundle;
      if (job.method == "bc") {
        bundle.items.push_back({"K", fit_bc(view).K});
      } else {
        const PredictorSetLinear G = cfg.linear.predictors == "ols"
                                         ? fit_predictors_ols(view, job.H, cfg.linear.ridge)
                                         : PredictorSetLinear::closed_loop_powers(sys, env.Kstar, job.H);
        const LossWeightsLinear w(Mat::Identity(n, n), cfg.linear.R.resolve(m, "linear.R"),
                                  cfg.linear.P.resolve(n, "linear.P"), job.H, cfg.linear.decay);
        bundle.items.push_back({"K", fit_pil_fixed_G(view, sys, G, w).K});
        for (int tau = 1; tau <= job.H; ++tau)
          bundle.items.push_back({"G" + std::to_string(tau), G.at(tau)});
      }
      bundle.meta = {{"config_hash", hash}, {"seed", job.seed}, {"method", job.method}, {"H", job.H}};
      write_matrices(bundle, model_path(cfg, dir, job.method, job.H, job.seed));
      return;
    }
    const TrainedModel tm = train_nn(cfg, ds, *env.dyn, job.method, job.H, RngStream(job.seed));
    nn::save_checkpoint(model_path(cfg, dir, job.method, job.H, job.seed),
                        tm.model.to_checkpoint({{"config_hash", hash}, {"seed", job.seed}, {"method", job.method}}));
    const std::string stem = job.method + "_H" + std::to_string(job.H) + "_seed" + std::to_string(job.seed);
    write_text_file(dir / "logs" / (stem + ".csv"), "# config_hash=" + hash + "\n" + format_train_log(tm.log));
  });
}

void stage_eval(const ExperimentConfig& cfg, const std::filesystem::path& dir, int threads)
{
  if (cfg.experiment != "pipeline")
    throw ConfigError("eval needs a pipeline config");
  const auto jobs = pipeline_jobs(cfg);
  const NoiseCase& nc = cfg.noise.front();
  std::vector<ResultRow> rows(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), threads, [&](int ji) {
    const PipelineJob& job = jobs[static_cast<std::size_t>(ji)];
    const Environment env = make_environment(cfg, job.seed);
    const int n = env.dyn->state_dim();
    Policy learned;
    const auto path = model_path(cfg, dir, job.method, job.H, job.seed);
    if (cfg.environment == "linear_lqr")
      learned = linear_policy(read_matrices(path).get("K"));
    else
      learned = deploy_policy(PilModel::from_checkpoint(nn::load_checkpoint(path)));
    RngStream rng = RngStream(job.seed).substream(kEvalKey);
    const DiscrepancyResult d = max_discrepancy(*env.dyn, env.expert, learned, cfg.eval.n_test, cfg.eval.T,
                                                eval_x0(cfg, n), nc.xi.resolve(n, "noise.xi"), rng);
    rows[static_cast<std::size_t>(ji)] = {cfg.experiment, job.method, job.method == "bc" ? 0 : job.H, job.seed,
                                          "discrepancy", d.mean};
  });
  ensure_dir(dir);
  write_text_file(dir / "results.csv", format_results_csv(rows, cfg.hash()));
}

}  // namespace pil

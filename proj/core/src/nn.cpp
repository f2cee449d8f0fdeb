#include "pil/nn.hpp"

#include <cmath>
#include <numbers>

#include "pil/dataset_io.hpp"

namespace pil::nn {

const char* to_string(Activation a)
{
  switch (a) {
    case Activation::Linear: return "linear";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& s)
{
  if (s == "linear")
    return Activation::Linear;
  if (s == "leaky_relu")
    return Activation::LeakyRelu;
  if (s == "relu")
    return Activation::Relu;
  if (s == "tanh")
    return Activation::Tanh;
  throw ConfigError("unknown activation '" + s + "'");
}

std::size_t MlpSpec::parameter_count() const
{
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l)
    total += static_cast<std::size_t>(widths[l + 1]) * static_cast<std::size_t>(widths[l] + 1);
  return total;
}

void MlpSpec::validate() const
{
  if (widths.size() < 2)
    throw ConfigError("mlp needs at least an input and an output width");
  for (int w : widths)
    if (w <= 0)
      throw ConfigError("mlp widths must be positive");
  if (hidden == Activation::Linear && widths.size() > 2)
    throw ConfigError("mlp hidden activation cannot be linear");
  if (leaky_slope < 0.0 || !std::isfinite(leaky_slope))
    throw ConfigError("mlp leaky slope must be finite and non-negative");
}

nlohmann::json MlpSpec::to_json() const
{
  return {{"widths", widths}, {"hidden", to_string(hidden)}, {"output", to_string(output)}, {"leaky_slope", leaky_slope}};
}

MlpSpec MlpSpec::from_json(const nlohmann::json& j)
{
  MlpSpec s;
  try {
    s.widths = j.at("widths").get<std::vector<int>>();
    s.hidden = activation_from_string(j.value("hidden", std::string("leaky_relu")));
    s.output = activation_from_string(j.value("output", std::string("linear")));
    s.leaky_slope = j.value("leaky_slope", 0.01);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("mlp spec: ") + e.what());
  }
  s.validate();
  return s;
}

Mlp::Mlp(MlpSpec spec, ad::ParamStore& store, const std::string& segment_name)
    : spec_(std::move(spec)), name_(segment_name)
{
  spec_.validate();
  offset_ = store.add_segment(segment_name, spec_.parameter_count()).offset;
}

Mlp::Mlp(MlpSpec spec, const ad::Segment& segment) : spec_(std::move(spec)), name_(segment.name), offset_(segment.offset)
{
  spec_.validate();
  if (segment.size != spec_.parameter_count())
    throw ShapeError("segment '" + segment.name + "' has " + std::to_string(segment.size) + " entries, spec needs " +
                     std::to_string(spec_.parameter_count()));
}

void Mlp::init(ad::ParamStore& store, RngStream& rng) const
{
  std::size_t off = offset_;
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const auto count = static_cast<std::size_t>(out) * static_cast<std::size_t>(in + 1);
    for (std::size_t k = 0; k < count; ++k)
      store.flat[static_cast<Eigen::Index>(off + k)] = rng.uniform(-bound, bound);
    off += count;
  }
}

namespace {

ad::Var activate(ad::Tape& tape, ad::Var h, Activation a, double slope)
{
  switch (a) {
    case Activation::Linear: return h;
    case Activation::LeakyRelu: return tape.leaky_relu(h, slope);
    case Activation::Relu: return tape.relu(h);
    case Activation::Tanh: return tape.tanh(h);
  }
  return h;
}

void activate_inplace(Mat& h, Activation a, double slope)
{
  switch (a) {
    case Activation::Linear: break;
    case Activation::LeakyRelu: h = h.unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; }); break;
    case Activation::Relu: h = h.cwiseMax(0.0); break;
    case Activation::Tanh: h = h.array().tanh().matrix(); break;
  }
}

}  // namespace

ad::Var Mlp::forward(ad::Tape& tape, ad::Var x) const
{
  if (tape.value(x).rows() != spec_.in_dim())
    throw ShapeError("mlp '" + name_ + "': input " + describe_shape(tape.value(x)) + ", expected " +
                     std::to_string(spec_.in_dim()) + " rows");
  std::size_t off = offset_;
  ad::Var h = x;
  const std::size_t layers = spec_.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    ad::Var W = tape.param(off, out, in);
    off += static_cast<std::size_t>(out) * static_cast<std::size_t>(in);
    ad::Var b = tape.param(off, out, 1);
    off += static_cast<std::size_t>(out);
    h = tape.add(tape.matmul(W, h), b);
    h = activate(tape, h, l + 1 < layers ? spec_.hidden : spec_.output, spec_.leaky_slope);
  }
  return h;
}

Mat Mlp::eval(const Vec& flat, const Mat& X) const
{
  if (X.rows() != spec_.in_dim())
    throw ShapeError("mlp '" + name_ + "': input " + describe_shape(X) + ", expected " +
                     std::to_string(spec_.in_dim()) + " rows");
  std::size_t off = offset_;
  Mat h = X;
  const std::size_t layers = spec_.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    Eigen::Map<const Mat> W(flat.data() + off, out, in);
    off += static_cast<std::size_t>(out) * static_cast<std::size_t>(in);
    Eigen::Map<const Vec> b(flat.data() + off, out);
    off += static_cast<std::size_t>(out);
    Mat next = W * h;
    next.colwise() += b;
    activate_inplace(next, l + 1 < layers ? spec_.hidden : spec_.output, spec_.leaky_slope);
    h = std::move(next);
  }
  return h;
}

void adam_step(ad::ParamStore& params, AdamState& state, double lr)
{
  if (state.m.size() != params.flat.size() || state.v.size() != params.flat.size())
    throw ShapeError("adam: moment vectors do not match parameter count");
  if (!params.grad.allFinite())
    throw NumericalError("adam: non-finite gradient at step " + std::to_string(state.step + 1));
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  state.m = b1 * state.m + (1.0 - b1) * params.grad;
  state.v = b2 * state.v + (1.0 - b2) * params.grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  params.flat.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
  params.zero_grad();
}

double cosine_lr(long step, long total, double lr_start, double lr_end)
{
  if (total <= 0)
    throw ConfigError("cosine_lr: total steps must be positive");
  if (step < 0 || step > total)
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(std::numbers::pi * frac));
}

Mlp Checkpoint::net(const std::string& name) const
{
  for (const auto& n : nets)
    if (n.name == name)
      return Mlp(n.spec, params.segment(name));
  throw ConfigError("checkpoint has no network '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
  nlohmann::json j;
  j["format"] = "pil-checkpoint";
  j["version"] = 1;
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : ckpt.params.segments())
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"size", s.size}});
  j["segments"] = segs;
  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : ckpt.nets)
    nets.push_back({{"name", n.name}, {"spec", n.spec.to_json()}});
  j["nets"] = nets;
  j["meta"] = ckpt.meta;
  // Strings keep the exact shortest round-trip text independent of the JSON
  // library's number formatting.
  nlohmann::json flat = nlohmann::json::array();
  for (Eigen::Index i = 0; i < ckpt.params.flat.size(); ++i)
    flat.push_back(format_double(ckpt.params.flat[i]));
  j["flat"] = flat;
  write_text_file(path, j.dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": " + e.what());
  }
  Checkpoint ck;
  try {
    if (j.at("format").get<std::string>() != "pil-checkpoint")
      throw IoError("checkpoint " + path.string() + ": wrong format tag");
    if (j.at("version").get<int>() != 1)
      throw IoError("checkpoint " + path.string() + ": unsupported version");
    for (const auto& s : j.at("segments"))
      ck.params.add_segment(s.at("name").get<std::string>(), s.at("size").get<std::size_t>());
    for (const auto& n : j.at("nets"))
      ck.nets.push_back({n.at("name").get<std::string>(), MlpSpec::from_json(n.at("spec"))});
    ck.meta = j.value("meta", nlohmann::json::object());
    const auto& flat = j.at("flat");
    if (flat.size() != ck.params.size())
      throw IoError("checkpoint " + path.string() + ": parameter count mismatch");
    for (std::size_t i = 0; i < flat.size(); ++i)
      ck.params.flat[static_cast<Eigen::Index>(i)] = parse_double(flat[i].get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path.string() + ": " + e.what());
  }
  for (const auto& n : ck.nets)
    (void)ck.net(n.name);  // validates segment sizes
  return ck;
}

}  // namespace pil::nn

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pil/autodiff.hpp"

namespace pil::nn {

enum class Activation { Linear, LeakyRelu, Relu, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected network. widths = {in, hidden..., out}.
struct MlpSpec
{
  std::vector<int> widths;
  Activation hidden = Activation::LeakyRelu;
  Activation output = Activation::Linear;
  double leaky_slope = 0.01;

  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }
  std::size_t parameter_count() const;
  /// Throws ConfigError unless there are >= 2 widths, all positive.
  void validate() const;

  nlohmann::json to_json() const;
  static MlpSpec from_json(const nlohmann::json& j);
};

/// MLP whose weights live in a ParamStore segment. Layer l stores W_l
/// (out x in, column-major) followed by b_l.
class Mlp
{
public:
  Mlp() = default;
  Mlp(MlpSpec spec, ad::ParamStore& store, const std::string& segment_name);
  /// Binds to an existing segment (e.g. after loading a checkpoint).
  Mlp(MlpSpec spec, const ad::Segment& segment);

  const MlpSpec& spec() const noexcept { return spec_; }
  const std::string& name() const noexcept { return name_; }
  std::size_t offset() const noexcept { return offset_; }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  void init(ad::ParamStore& store, RngStream& rng) const;

  ad::Var forward(ad::Tape& tape, ad::Var x) const;
  /// Tape-free evaluation on a column batch.
  Mat eval(const Vec& flat, const Mat& X) const;

private:
  MlpSpec spec_;
  std::string name_;
  std::size_t offset_ = 0;
};

struct AdamState
{
  Vec m;
  Vec v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(Vec::Zero(static_cast<Eigen::Index>(n))), v(Vec::Zero(static_cast<Eigen::Index>(n))) {}
};

/// Bias-corrected Adam step, then zeroes the gradient. Throws NumericalError
/// on a non-finite gradient.
void adam_step(ad::ParamStore& params, AdamState& state, double lr);

/// lr_end + 0.5 (lr_start - lr_end)(1 + cos(pi step / total))
double cosine_lr(long step, long total, double lr_start, double lr_end);

struct NamedNet
{
  std::string name;
  MlpSpec spec;
};

struct Checkpoint
{
  ad::ParamStore params;
  std::vector<NamedNet> nets;
  nlohmann::json meta = nlohmann::json::object();

  /// Network bound to the segment of the same name.
  Mlp net(const std::string& name) const;
};

/// JSON text file tagged {"format": "pil-checkpoint", "version": 1}. Doubles
/// are written in shortest round-trip form, so load(save(x)) is exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pil::nn

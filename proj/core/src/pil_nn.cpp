#include "pil/pil_nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pil/dataset_io.hpp"

namespace pil {

const char* to_string(TrainMode m)
{
  switch (m) {
    case TrainMode::Bc: return "bc";
    case TrainMode::Rollout: return "rollout";
    case TrainMode::Pil: return "pil";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s)
{
  if (s == "bc")
    return TrainMode::Bc;
  if (s == "rollout")
    return TrainMode::Rollout;
  if (s == "pil")
    return TrainMode::Pil;
  throw ConfigError("unknown training mode '" + s + "'");
}

PilLossConfig PilLossConfig::defaults(int n, int m, int H, TrainMode mode)
{
  PilLossConfig c;
  c.Q = 0.25 * Mat::Identity(n, n);
  c.R = 0.01 * Mat::Identity(m, m);
  c.P = Mat::Identity(n, n);
  c.H = H;
  c.decay = 0.9;
  c.mode = mode;
  return c;
}

void PilLossConfig::validate(int n, int m) const
{
  if (H < 1)
    throw ConfigError("loss: horizon must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0))
    throw ConfigError("loss: decay must lie in (0, 1]");
  if (R.rows() != m || R.cols() != m || !is_psd(R))
    throw ConfigError("loss: R must be a PSD " + std::to_string(m) + "x" + std::to_string(m) + " matrix");
  if (mode == TrainMode::Bc)
    return;
  if (Q.rows() != n || Q.cols() != n || !is_psd(Q))
    throw ConfigError("loss: Q must be a PSD " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
  if (mode == TrainMode::Pil && (P.rows() != n || P.cols() != n || !is_psd(P)))
    throw ConfigError("loss: P must be a PSD " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
}

double PilLossConfig::weight(int tau) const { return std::pow(decay, tau - 1); }

void PilModelSpec::validate() const
{
  if (obs_dim <= 0 || n <= 0 || m <= 0)
    throw ConfigError("model: dimensions must be positive");
  if (H < 1)
    throw ConfigError("model: horizon must be >= 1");
  if (static_cast<int>(periodic.size()) != n)
    throw ConfigError("model: periodic mask must have one entry per state");
  for (const auto* w : {&encoder_hidden, &predictor_hidden, &policy_hidden})
    for (int v : *w)
      if (v <= 0)
        throw ConfigError("model: hidden widths must be positive");
  if (encoder_hidden.empty() && encoder == "trig_angle")
    throw ConfigError("model: an identity encoder needs raw observations");
}

nlohmann::json PilModelSpec::to_json() const
{
  std::vector<int> per;
  for (bool b : periodic)
    per.push_back(b ? 1 : 0);
  return {{"obs_dim", obs_dim},
          {"n", n},
          {"m", m},
          {"H", H},
          {"encoder", encoder},
          {"periodic", per},
          {"encoder_hidden", encoder_hidden},
          {"predictor_hidden", predictor_hidden},
          {"policy_hidden", policy_hidden},
          {"activation", nn::to_string(activation)}};
}

PilModelSpec PilModelSpec::from_json(const nlohmann::json& j)
{
  PilModelSpec s;
  try {
    s.obs_dim = j.at("obs_dim").get<int>();
    s.n = j.at("n").get<int>();
    s.m = j.at("m").get<int>();
    s.H = j.at("H").get<int>();
    s.encoder = j.at("encoder").get<std::string>();
    for (int b : j.at("periodic").get<std::vector<int>>())
      s.periodic.push_back(b != 0);
    s.encoder_hidden = j.at("encoder_hidden").get<std::vector<int>>();
    s.predictor_hidden = j.at("predictor_hidden").get<std::vector<int>>();
    s.policy_hidden = j.at("policy_hidden").get<std::vector<int>>();
    s.activation = nn::activation_from_string(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

int feature_dim(const std::vector<bool>& periodic)
{
  return static_cast<int>(periodic.size() + static_cast<std::size_t>(std::count(periodic.begin(), periodic.end(), true)));
}

bool any_periodic(const std::vector<bool>& periodic)
{
  return std::any_of(periodic.begin(), periodic.end(), [](bool b) { return b; });
}

nn::MlpSpec make_spec(int in, const std::vector<int>& hidden, int out, nn::Activation act, nn::Activation out_act)
{
  nn::MlpSpec s;
  s.widths.push_back(in);
  s.widths.insert(s.widths.end(), hidden.begin(), hidden.end());
  s.widths.push_back(out);
  s.hidden = act;
  s.output = out_act;
  return s;
}

}  // namespace

PilModel::PilModel(PilModelSpec spec, bool with_predictors) : spec_(std::move(spec))
{
  spec_.validate();
  policy_ = nn::Mlp(make_spec(feature_dim(spec_.periodic), spec_.policy_hidden, spec_.m, spec_.activation,
                              nn::Activation::Linear),
                    params, "policy");
  if (!with_predictors)
    return;
  int latent = spec_.obs_dim;
  if (!spec_.encoder_hidden.empty()) {
    // Last hidden layer is the latent code; it keeps the hidden activation.
    std::vector<int> inner(spec_.encoder_hidden.begin(), spec_.encoder_hidden.end() - 1);
    latent = spec_.encoder_hidden.back();
    encoder_ = nn::Mlp(make_spec(spec_.obs_dim, inner, latent, spec_.activation, spec_.activation), params, "encoder");
  }
  for (int tau = 1; tau <= spec_.H; ++tau)
    predictors_.emplace_back(make_spec(latent, spec_.predictor_hidden, spec_.n, spec_.activation, nn::Activation::Linear),
                             params, "pred_" + std::to_string(tau));
}

void PilModel::init(const RngStream& rng)
{
  RngStream rp = rng.substream(1);
  policy_.init(params, rp);
  if (!encoder_.name().empty()) {
    RngStream re = rng.substream(2);
    encoder_.init(params, re);
  }
  for (std::size_t k = 0; k < predictors_.size(); ++k) {
    RngStream rg = rng.substream(100 + k);
    predictors_[k].init(params, rg);
  }
  params.zero_grad();
}

ad::Var PilModel::policy_forward(ad::Tape& tape, ad::Var x) const
{
  if (any_periodic(spec_.periodic))
    x = tape.trig_features(x, spec_.periodic);
  return policy_.forward(tape, x);
}

ad::Var PilModel::encoder_forward(ad::Tape& tape, ad::Var y) const
{
  if (encoder_.name().empty())
    return y;
  return encoder_.forward(tape, y);
}

ad::Var PilModel::predictor_forward(ad::Tape& tape, int tau, ad::Var z) const
{
  if (tau < 1 || tau > static_cast<int>(predictors_.size()))
    throw ConfigError("model has no predictor head for tau = " + std::to_string(tau));
  return predictors_[static_cast<std::size_t>(tau - 1)].forward(tape, z);
}

Mat PilModel::policy_eval(const Mat& X) const
{
  if (X.rows() != spec_.n)
    throw ShapeError("policy: input " + describe_shape(X) + ", expected " + std::to_string(spec_.n) + " rows");
  if (!any_periodic(spec_.periodic))
    return policy_.eval(params.flat, X);
  const ObsEncoder feats = ObsEncoder::trig_angle(spec_.periodic);
  return policy_.eval(params.flat, feats.encode(X));
}

nn::Checkpoint PilModel::to_checkpoint(const nlohmann::json& meta) const
{
  nn::Checkpoint ck;
  ck.params = params;
  ck.nets.push_back({"policy", policy_.spec()});
  if (!encoder_.name().empty())
    ck.nets.push_back({"encoder", encoder_.spec()});
  for (const auto& p : predictors_)
    ck.nets.push_back({p.name(), p.spec()});
  ck.meta = meta;
  ck.meta["model"] = spec_.to_json();
  ck.meta["with_predictors"] = has_predictors();
  return ck;
}

PilModel PilModel::from_checkpoint(const nn::Checkpoint& ckpt)
{
  if (!ckpt.meta.contains("model"))
    throw IoError("checkpoint lacks a model description");
  PilModel m(PilModelSpec::from_json(ckpt.meta.at("model")), ckpt.meta.value("with_predictors", false));
  const auto& a = m.params.segments();
  const auto& b = ckpt.params.segments();
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i)
    same = a[i].name == b[i].name && a[i].offset == b[i].offset && a[i].size == b[i].size;
  if (!same)
    throw IoError("checkpoint segment layout does not match its model description");
  m.params.flat = ckpt.params.flat;
  return m;
}

std::vector<ChunkIndex> enumerate_chunks(const TrajectoryDataset& ds, int H)
{
  if (H < 1 || H > ds.meta.T)
    throw ConfigError("chunks: need 1 <= H <= T (H = " + std::to_string(H) + ", T = " + std::to_string(ds.meta.T) + ")");
  std::vector<ChunkIndex> out;
  out.reserve(ds.size() * static_cast<std::size_t>(ds.meta.T - H + 1));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (int t = 0; t <= ds.meta.T - H; ++t)
      out.push_back({static_cast<int>(i), t});
  return out;
}

ChunkBatch assemble_batch(const TrajectoryDataset& ds, const std::vector<ChunkIndex>& idx, int H,
                          const ObsEncoder& encoder)
{
  const auto B = static_cast<Eigen::Index>(idx.size());
  const int n = ds.meta.n;
  const int m = ds.meta.m;
  ChunkBatch b;
  b.y_obs.resize(ds.meta.obs_dim, B);
  std::vector<Mat> y_enc(static_cast<std::size_t>(H + 1), Mat(ds.meta.obs_dim, B));
  b.v.assign(static_cast<std::size_t>(H), Mat(m, B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const ChunkIndex& c = idx[static_cast<std::size_t>(j)];
    const Trajectory& tr = ds.trajectories[static_cast<std::size_t>(c.traj)];
    if (c.t < 0 || c.t + H > tr.length())
      throw ShapeError("chunk (" + std::to_string(c.traj) + ", " + std::to_string(c.t) + ") exceeds trajectory");
    for (int tau = 0; tau <= H; ++tau)
      y_enc[static_cast<std::size_t>(tau)].col(j) = tr.y.col(c.t + tau);
    for (int tau = 0; tau < H; ++tau)
      b.v[static_cast<std::size_t>(tau)].col(j) = tr.v.col(c.t + tau);
  }
  b.y_obs = y_enc[0];
  b.x_meas.reserve(static_cast<std::size_t>(H + 1));
  for (const auto& y : y_enc) {
    b.x_meas.push_back(encoder.decode(y));
    if (b.x_meas.back().rows() != n)
      throw ShapeError("chunk: decoded state has wrong dimension");
  }
  return b;
}

namespace {

LossBreakdown finish(ad::Tape& tape, ad::Var state, ad::Var input, ad::Var cons, ad::Var& total, double inv_b)
{
  LossBreakdown lb;
  ad::Var sum = input;
  if (state.valid())
    sum = tape.add(sum, state);
  if (cons.valid())
    sum = tape.add(sum, cons);
  total = tape.scale(sum, inv_b);
  lb.state_err = state.valid() ? tape.scalar(state) * inv_b : 0.0;
  lb.input_err = tape.scalar(input) * inv_b;
  lb.consistency = cons.valid() ? tape.scalar(cons) * inv_b : 0.0;
  lb.total = tape.scalar(total);
  return lb;
}

ad::Var accumulate(ad::Tape& tape, ad::Var acc, ad::Var term)
{
  return acc.valid() ? tape.add(acc, term) : term;
}

}  // namespace

ChunkLoss predictive_terms(ad::Tape& tape, const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                           ad::Var x0, const std::vector<ad::Var>& preds, const PilLossConfig& cfg,
                           bool with_consistency, const std::vector<ad::Var>* inputs)
{
  const int H = cfg.H;
  if (batch.H() < H || static_cast<int>(preds.size()) != H)
    throw ShapeError("predictive loss: batch horizon " + std::to_string(batch.H()) + ", " +
                     std::to_string(preds.size()) + " predictions, H = " + std::to_string(H));
  const auto per = dyn.periodic();
  ad::Var state, input, cons;
  ad::Var prev = x0;
  for (int tau = 1; tau <= H; ++tau) {
    const double d = cfg.weight(tau);
    const ad::Var x_tau = preds[static_cast<std::size_t>(tau - 1)];
    const ad::Var u = inputs ? (*inputs)[static_cast<std::size_t>(tau - 1)] : model.policy_forward(tape, prev);

    const ad::Var target = tape.constant(batch.x_meas[static_cast<std::size_t>(tau)]);
    const ad::Var ey = tape.wrap_periodic(tape.sub(target, x_tau), per);
    state = accumulate(tape, state, tape.scale(tape.square_norm_weighted(ey, cfg.Q), d));

    const ad::Var ev = tape.sub(tape.constant(batch.v[static_cast<std::size_t>(tau - 1)]), u);
    input = accumulate(tape, input, tape.scale(tape.square_norm_weighted(ev, cfg.R), d));

    if (with_consistency) {
      ad::Var f = tape.apply_dynamics(dyn, prev, u);
      if (!cfg.dynamics_gradient)
        f = tape.stop_gradient(f);
      const ad::Var w = tape.wrap_periodic(tape.sub(x_tau, f), per);
      cons = accumulate(tape, cons, tape.scale(tape.square_norm_weighted(w, cfg.P), d));
    }
    prev = x_tau;
  }
  ChunkLoss out;
  out.values = finish(tape, state, input, cons, out.total, 1.0 / batch.size());
  return out;
}

ChunkLoss pil_chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                         const PilLossConfig& cfg, ad::Tape& tape)
{
  if (!model.has_predictors())
    throw ConfigError("pil loss: model has no predictor heads");
  if (model.spec().H < cfg.H)
    throw ConfigError("pil loss: model has " + std::to_string(model.spec().H) + " heads, loss needs " +
                      std::to_string(cfg.H));
  const ad::Var x0 = tape.constant(batch.x_meas[0]);
  const ad::Var z = model.encoder_forward(tape, tape.constant(batch.y_obs));
  std::vector<ad::Var> preds;
  for (int tau = 1; tau <= cfg.H; ++tau)
    preds.push_back(model.predictor_forward(tape, tau, z));
  return predictive_terms(tape, model, dyn, batch, x0, preds, cfg, true);
}

ChunkLoss rollout_chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch,
                             const PilLossConfig& cfg, ad::Tape& tape)
{
  const ad::Var x0 = tape.constant(batch.x_meas[0]);
  std::vector<ad::Var> preds;
  std::vector<ad::Var> inputs;
  ad::Var x = x0;
  for (int tau = 1; tau <= cfg.H; ++tau) {
    const ad::Var u = model.policy_forward(tape, x);
    x = tape.apply_dynamics(dyn, x, u);
    if (!cfg.dynamics_gradient)
      x = tape.stop_gradient(x);
    inputs.push_back(u);
    preds.push_back(x);
  }
  return predictive_terms(tape, model, dyn, batch, x0, preds, cfg, false, &inputs);
}

ChunkLoss bc_chunk_loss(const PilModel& model, const ChunkBatch& batch, const PilLossConfig& cfg, ad::Tape& tape)
{
  const ad::Var u = model.policy_forward(tape, tape.constant(batch.x_meas[0]));
  const ad::Var ev = tape.sub(tape.constant(batch.v[0]), u);
  ChunkLoss out;
  out.values = finish(tape, ad::Var{}, tape.square_norm_weighted(ev, cfg.R), ad::Var{}, out.total, 1.0 / batch.size());
  return out;
}

ChunkLoss chunk_loss(const PilModel& model, const Dynamics& dyn, const ChunkBatch& batch, const PilLossConfig& cfg,
                     ad::Tape& tape)
{
  switch (cfg.mode) {
    case TrainMode::Bc: return bc_chunk_loss(model, batch, cfg, tape);
    case TrainMode::Rollout: return rollout_chunk_loss(model, dyn, batch, cfg, tape);
    case TrainMode::Pil: return pil_chunk_loss(model, dyn, batch, cfg, tape);
  }
  throw ConfigError("unknown training mode");
}

namespace {

int window(const PilLossConfig& cfg) { return cfg.mode == TrainMode::Bc ? 1 : cfg.H; }

ObsEncoder dataset_encoder(const TrajectoryDataset& ds, const Dynamics& dyn)
{
  if (ds.meta.n != dyn.state_dim() || ds.meta.m != dyn.input_dim())
    throw ShapeError("dataset dimensions do not match the dynamics");
  return ObsEncoder::from_name(ds.meta.encoder, dyn.periodic());
}

}  // namespace

LossBreakdown evaluate_loss(const PilModel& model, const TrajectoryDataset& ds, const Dynamics& dyn,
                            const PilLossConfig& cfg)
{
  cfg.validate(ds.meta.n, ds.meta.m);
  const ObsEncoder enc = dataset_encoder(ds, dyn);
  const int H = window(cfg);
  const auto chunks = enumerate_chunks(ds, H);
  constexpr std::size_t block = 1024;
  LossBreakdown acc;
  for (std::size_t s = 0; s < chunks.size(); s += block) {
    const std::vector<ChunkIndex> part(chunks.begin() + static_cast<std::ptrdiff_t>(s),
                                       chunks.begin() + static_cast<std::ptrdiff_t>(std::min(chunks.size(), s + block)));
    // Forward only: the tape never writes to the store unless backward() runs.
    ad::Tape tape(const_cast<ad::ParamStore*>(&model.params));
    const ChunkLoss cl = chunk_loss(model, dyn, assemble_batch(ds, part, H, enc), cfg, tape);
    const double w = static_cast<double>(part.size());
    acc.state_err += w * cl.values.state_err;
    acc.input_err += w * cl.values.input_err;
    acc.consistency += w * cl.values.consistency;
  }
  const double inv = 1.0 / static_cast<double>(chunks.size());
  acc.state_err *= inv;
  acc.input_err *= inv;
  acc.consistency *= inv;
  acc.total = acc.state_err + acc.input_err + acc.consistency;
  return acc;
}

TrainResult train(PilModel& model, const TrajectoryDataset& ds, const Dynamics& dyn, const PilLossConfig& cfg,
                  const TrainConfig& tc, RngStream& rng)
{
  cfg.validate(ds.meta.n, ds.meta.m);
  if (tc.epochs < 1 || tc.batch_size < 1 || tc.steps_per_epoch < 0)
    throw ConfigError("train: epochs and batch size must be positive");
  if (cfg.mode == TrainMode::Pil && !model.has_predictors())
    throw ConfigError("train: pil mode needs a model with predictor heads");
  const ObsEncoder enc = dataset_encoder(ds, dyn);
  const int H = window(cfg);
  const auto chunks = enumerate_chunks(ds, H);
  if (chunks.empty())
    throw ConfigError("train: dataset has no windows");
  const int steps = tc.steps_per_epoch > 0
                        ? tc.steps_per_epoch
                        : static_cast<int>((chunks.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
                                           static_cast<std::size_t>(tc.batch_size));
  const long total_steps = static_cast<long>(steps) * tc.epochs;

  TrainResult result;
  result.log.push_back({0, evaluate_loss(model, ds, dyn, cfg), tc.lr_start});

  nn::AdamState adam(model.params.size());
  model.params.zero_grad();
  std::vector<ChunkIndex> pick(static_cast<std::size_t>(tc.batch_size));
  long step = 0;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    LossBreakdown sum;
    double lr = 0.0;
    for (int s = 0; s < steps; ++s, ++step) {
      for (auto& p : pick)
        p = chunks[rng.index(chunks.size())];
      const ChunkBatch batch = assemble_batch(ds, pick, H, enc);
      ad::Tape tape(&model.params);
      const ChunkLoss cl = chunk_loss(model, dyn, batch, cfg, tape);
      lr = nn::cosine_lr(step, total_steps, tc.lr_start, tc.lr_end);
      if (!std::isfinite(cl.values.total)) {
        std::ostringstream os;
        os << "training diverged: non-finite loss at epoch " << epoch << ", batch " << s << ", lr " << lr;
        throw NumericalError(os.str());
      }
      tape.backward(cl.total);
      nn::adam_step(model.params, adam, lr);
      sum.state_err += cl.values.state_err;
      sum.input_err += cl.values.input_err;
      sum.consistency += cl.values.consistency;
      sum.total += cl.values.total;
    }
    const double inv = 1.0 / steps;
    sum.state_err *= inv;
    sum.input_err *= inv;
    sum.consistency *= inv;
    sum.total *= inv;
    result.log.push_back({epoch, sum, lr});
  }
  return result;
}

std::string format_train_log(const TrainResult& r)
{
  std::string out = "epoch,state_err,input_err,consistency,total,lr\n";
  for (const auto& row : r.log) {
    out += std::to_string(row.epoch) + ',' + format_double(row.loss.state_err) + ',' + format_double(row.loss.input_err) +
           ',' + format_double(row.loss.consistency) + ',' + format_double(row.loss.total) + ',' +
           format_double(row.lr) + '\n';
  }
  return out;
}

Policy deploy_policy(const PilModel& model)
{
  auto shared = std::make_shared<const PilModel>(model);
  return [shared](const Mat& Y) { return shared->policy_eval(Y); };
}

Policy deploy_policy(const PilModel& model, const ObsEncoder& encoder)
{
  auto shared = std::make_shared<const PilModel>(model);
  return [shared, encoder](const Mat& Y) { return shared->policy_eval(encoder.decode(Y)); };
}

}  // namespace pil

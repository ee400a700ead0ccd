#include "ds4d/learner.hpp"

#include "ds4d/checksum.hpp"
#include "ds4d/pipeline.hpp"
#include "ds4d/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <numbers>

namespace ds4d::learner {

using nlohmann::json;

std::string_view to_string(Errc e) {
  switch (e) {
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::BadVersion: return "BadVersion";
    case Errc::CorruptFile: return "CorruptFile";
    case Errc::Io: return "Io";
  }
  return "?";
}

namespace {

[[noreturn]] void fail(Errc code, const std::string& what) {
  throw LearnerError(code, std::string(to_string(code)) + ": " + what);
}

// Activations of every layer for a batch of normalized inputs; the last entry
// is the (scaled-space) network output.
std::vector<MatrixXd> forward_all(const MlpPolicy& p, const MatrixXd& xn) {
  const std::size_t layers = p.weights.size();
  std::vector<MatrixXd> a;
  a.reserve(layers + 1);
  a.push_back(xn);
  for (std::size_t l = 0; l < layers; ++l) {
    MatrixXd z = p.weights[l] * a.back();
    z.colwise() += p.biases[l];
    if (l + 1 < layers) z = z.array().tanh().matrix();
    a.push_back(std::move(z));
  }
  return a;
}

MatrixXd select_inputs(const MlpPolicy& p, const MatrixXd& x) {
  if (p.inputs.empty()) return x;
  MatrixXd out(static_cast<Eigen::Index>(p.inputs.size()), x.cols());
  for (std::size_t i = 0; i < p.inputs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(p.inputs[i]);
  return out;
}

MatrixXd normalize_obs(const MlpPolicy& p, const MatrixXd& x) {
  return ((select_inputs(p, x).colwise() - p.obs_mean).array().colwise() / p.obs_std.array()).matrix();
}

void check_inputs(const std::vector<int>& inputs, std::size_t source_dim) {
  for (int i : inputs) {
    if (i < 0 || static_cast<std::size_t>(i) >= source_dim) {
      fail(Errc::DimMismatch, "input index " + std::to_string(i) + " outside the observation");
    }
  }
}

MatrixXd scale_actions(const MlpPolicy& p, const MatrixXd& y) {
  return (y.array().colwise() / p.action_scale.array()).matrix();
}

double mse(const MatrixXd& out, const MatrixXd& yn) {
  return (out - yn).squaredNorm() / static_cast<double>(out.size());
}

struct LayerGrads {
  std::vector<MatrixXd> w;
  std::vector<VectorXd> b;
};

// Backpropagation of mean((out - yn)^2) through the cached activations.
LayerGrads backprop(const MlpPolicy& p, const std::vector<MatrixXd>& a, const MatrixXd& yn) {
  const std::size_t layers = p.weights.size();
  LayerGrads g;
  g.w.resize(layers);
  g.b.resize(layers);
  MatrixXd dz = (2.0 / static_cast<double>(yn.size())) * (a.back() - yn);
  for (std::size_t l = layers; l-- > 0;) {
    g.w[l] = dz * a[l].transpose();
    g.b[l] = dz.rowwise().sum();
    if (l > 0) {
      MatrixXd da = p.weights[l].transpose() * dz;
      dz = (da.array() * (1.0 - a[l].array().square())).matrix();
    }
  }
  return g;
}

VectorXd flatten(const LayerGrads& g) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < g.w.size(); ++l) n += g.w[l].size() + g.b[l].size();
  VectorXd out(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < g.w.size(); ++l) {
    out.segment(k, g.w[l].size()) = g.w[l].reshaped();
    k += g.w[l].size();
    out.segment(k, g.b[l].size()) = g.b[l];
    k += g.b[l].size();
  }
  return out;
}

void check_sizes(const std::vector<int>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("policy needs at least input and output sizes");
  for (int s : sizes) {
    if (s <= 0) throw std::invalid_argument("layer sizes must be positive");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// MlpPolicy

std::size_t MlpPolicy::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

VectorXd MlpPolicy::params() const {
  LayerGrads view{weights, biases};
  return flatten(view);
}

void MlpPolicy::set_params(const VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != param_count()) {
    fail(Errc::DimMismatch, "parameter vector has " + std::to_string(p.size()) + " entries");
  }
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] = p.segment(k, weights[l].size()).reshaped(weights[l].rows(), weights[l].cols());
    k += weights[l].size();
    biases[l] = p.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

bool MlpPolicy::operator==(const MlpPolicy& o) const {
  const auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  if (sizes != o.sizes || inputs != o.inputs || source_dim != o.source_dim || !same(obs_mean, o.obs_mean) || !same(obs_std, o.obs_std) ||
      !same(action_scale, o.action_scale)) {
    return false;
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!same(weights[l], o.weights[l]) || !same(biases[l], o.biases[l])) return false;
  }
  return true;
}

MlpPolicy zero_policy(const std::vector<int>& sizes) {
  check_sizes(sizes);
  MlpPolicy p;
  p.sizes = sizes;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    p.weights.push_back(MatrixXd::Zero(sizes[l + 1], sizes[l]));
    p.biases.push_back(VectorXd::Zero(sizes[l + 1]));
  }
  p.obs_mean = VectorXd::Zero(sizes.front());
  p.obs_std = VectorXd::Ones(sizes.front());
  p.action_scale = VectorXd::Ones(sizes.back());
  return p;
}

MlpPolicy make_policy(const std::vector<int>& sizes, std::uint64_t seed) {
  MlpPolicy p = zero_policy(sizes);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const CounterRng rng(seed, l);
    const double limit = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
    MatrixXd& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = rng.uniform(static_cast<std::uint64_t>(i), -limit, limit);
    }
  }
  return p;
}

std::vector<double> forward_policy(const MlpPolicy& policy, std::span<const double> obs) {
  if (obs.size() != policy.obs_dim()) {
    fail(Errc::DimMismatch, "observation has " + std::to_string(obs.size()) + " entries, policy expects " +
                                std::to_string(policy.obs_dim()));
  }
  const MatrixXd x = Eigen::Map<const MatrixXd>(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
  const auto a = forward_all(policy, normalize_obs(policy, x));
  const VectorXd out = a.back().col(0).cwiseProduct(policy.action_scale);
  return {out.data(), out.data() + out.size()};
}

// ---------------------------------------------------------------------------
// Data

Samples samples_from(const recorder::Dataset& d, const std::vector<std::size_t>& demo_indices) {
  std::size_t n = 0;
  for (std::size_t i : demo_indices) n += d.demos.at(i).steps.size();
  const auto od = static_cast<Eigen::Index>(d.header.obs_dim);
  const auto ad = static_cast<Eigen::Index>(d.header.action_dim);
  Samples s{MatrixXd(od, static_cast<Eigen::Index>(n)), MatrixXd(ad, static_cast<Eigen::Index>(n))};
  Eigen::Index c = 0;
  for (std::size_t i : demo_indices) {
    for (const auto& step : d.demos[i].steps) {
      if (static_cast<Eigen::Index>(step.obs.size()) != od ||
          static_cast<Eigen::Index>(step.action.size()) != ad) {
        fail(Errc::DimMismatch, "step dimensions differ from the dataset header");
      }
      s.obs.col(c) = Eigen::Map<const VectorXd>(step.obs.data(), od);
      s.action.col(c) = Eigen::Map<const VectorXd>(step.action.data(), ad);
      ++c;
    }
  }
  return s;
}

Samples samples_from(const recorder::Dataset& d) {
  std::vector<std::size_t> all(d.demos.size());
  std::iota(all.begin(), all.end(), 0);
  return samples_from(d, all);
}

// ---------------------------------------------------------------------------
// Loss and gradient

double loss(const MlpPolicy& policy, const Samples& batch) {
  if (batch.obs.rows() != static_cast<Eigen::Index>(policy.obs_dim()) ||
      batch.action.rows() != static_cast<Eigen::Index>(policy.action_dim()) ||
      batch.obs.cols() != batch.action.cols()) {
    fail(Errc::DimMismatch, "batch does not match the policy");
  }
  const auto a = forward_all(policy, normalize_obs(policy, batch.obs));
  return mse(a.back(), scale_actions(policy, batch.action));
}

LossGrad loss_and_gradient(const MlpPolicy& policy, const Samples& batch) {
  if (batch.obs.rows() != static_cast<Eigen::Index>(policy.obs_dim()) ||
      batch.action.rows() != static_cast<Eigen::Index>(policy.action_dim()) ||
      batch.obs.cols() != batch.action.cols()) {
    fail(Errc::DimMismatch, "batch does not match the policy");
  }
  const MatrixXd yn = scale_actions(policy, batch.action);
  const auto a = forward_all(policy, normalize_obs(policy, batch.obs));
  return {mse(a.back(), yn), flatten(backprop(policy, a, yn))};
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0) throw std::invalid_argument("epochs and batch size must be positive");
  if (!(learning_rate >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("learning rate must be >= 0 and momentum in [0, 1)");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5)) {
    throw std::invalid_argument("validation fraction must be in [0, 0.5]");
  }
  if (!(obs_std_floor >= 1e-8) || !(action_scale_floor >= 1e-8)) {
    throw std::invalid_argument("normalizer floors must be >= 1e-8");
  }
  if (!(input_noise >= 0.0)) throw std::invalid_argument("input noise must be >= 0");
}

void fit_normalizers(MlpPolicy& policy, const Samples& s, double obs_std_floor,
                     double action_scale_floor) {
  const double n = static_cast<double>(s.size());
  const MatrixXd x = select_inputs(policy, s.obs);
  policy.obs_mean = x.rowwise().sum() / n;
  const MatrixXd centered = x.colwise() - policy.obs_mean;
  policy.obs_std = (centered.array().square().rowwise().sum() / n).sqrt().max(obs_std_floor).matrix();
  policy.action_scale =
      (s.action.array().square().rowwise().sum() / n).sqrt().max(action_scale_floor).matrix();
}

TrainResult train_bc(const Samples& train, const Samples& validation, const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) fail(Errc::EmptyDataset, "no training samples");
  if (train.obs.cols() != train.action.cols()) fail(Errc::DimMismatch, "obs/action count differ");
  if (validation.size() > 0 &&
      (validation.obs.rows() != train.obs.rows() || validation.action.rows() != train.action.rows())) {
    fail(Errc::DimMismatch, "validation dims differ from training dims");
  }

  const auto source_dim = static_cast<std::size_t>(train.obs.rows());
  check_inputs(cfg.inputs, source_dim);
  const int input_dim = cfg.inputs.empty() ? static_cast<int>(source_dim) : static_cast<int>(cfg.inputs.size());
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(static_cast<int>(train.action.rows()));

  TrainResult out;
  MlpPolicy& p = out.policy;
  p = make_policy(sizes, cfg.seed);
  p.inputs = cfg.inputs;
  p.source_dim = cfg.inputs.empty() ? 0 : source_dim;
  fit_normalizers(p, train, cfg.obs_std_floor, cfg.action_scale_floor);

  const MatrixXd xn = normalize_obs(p, train.obs);
  const MatrixXd yn = scale_actions(p, train.action);
  MatrixXd val_xn, val_yn;
  if (validation.size() > 0) {
    val_xn = normalize_obs(p, validation.obs);
    val_yn = scale_actions(p, validation.action);
  }

  std::vector<MatrixXd> vw;
  std::vector<VectorXd> vb;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    vw.push_back(MatrixXd::Zero(p.weights[l].rows(), p.weights[l].cols()));
    vb.push_back(VectorXd::Zero(p.biases[l].size()));
  }

  const Eigen::Index n = train.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  MatrixXd bx(xn.rows(), cfg.batch_size);
  MatrixXd by(yn.rows(), cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const CounterRng rng(cfg.seed, 0x45504F43ULL + static_cast<std::uint64_t>(epoch));
    for (Eigen::Index i = n - 1; i > 0; --i) {
      const auto j = static_cast<Eigen::Index>(rng.bits(static_cast<std::uint64_t>(i)) %
                                               static_cast<std::uint64_t>(i + 1));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const CounterRng jitter(cfg.seed, 0x4E4F4953ULL + static_cast<std::uint64_t>(epoch));
    const double lr = cfg.cosine_decay
                          ? 0.5 * cfg.learning_rate *
                                (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(cfg.epochs)))
                          : cfg.learning_rate;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
      bx.resize(xn.rows(), b);
      by.resize(yn.rows(), b);
      for (Eigen::Index k = 0; k < b; ++k) {
        const Eigen::Index c = order[static_cast<std::size_t>(start + k)];
        bx.col(k) = xn.col(c);
        by.col(k) = yn.col(c);
      }
      if (cfg.input_noise > 0.0) {
        for (Eigen::Index k = 0; k < b; ++k) {
          for (Eigen::Index r = 0; r < bx.rows(); ++r) {
            bx(r, k) += cfg.input_noise *
                        jitter.normal(static_cast<std::uint64_t>((start + k) * bx.rows() + r));
          }
        }
      }
      const auto a = forward_all(p, bx);
      const LayerGrads g = backprop(p, a, by);
      for (std::size_t l = 0; l < p.weights.size(); ++l) {
        vw[l] = cfg.momentum * vw[l] + g.w[l];
        vb[l] = cfg.momentum * vb[l] + g.b[l];
        p.weights[l] -= lr * vw[l];
        p.biases[l] -= lr * vb[l];
      }
    }
    out.train_loss.push_back(mse(forward_all(p, xn).back(), yn));
    if (validation.size() > 0) out.val_loss.push_back(mse(forward_all(p, val_xn).back(), val_yn));
  }
  return out;
}

namespace {

// Steps where the gripper is being driven across its range are rare next to
// the steps that hold it; repeating them keeps the onset of a grasp or release
// from being averaged away.
Samples repeat_gripper_onsets(const Samples& s, int repeat) {
  constexpr Eigen::Index kWidth = 7;
  constexpr Eigen::Index kGrip = recorder::kActionDim - 1;
  if (s.obs.rows() <= kWidth || s.action.rows() != recorder::kActionDim) return s;
  const double lo = s.action.row(kGrip).minCoeff();
  const double hi = s.action.row(kGrip).maxCoeff();
  const double half = 0.5 * (hi - lo);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index c = 0; c < s.size(); ++c) {
    const bool onset = half > 0.0 && std::abs(s.action(kGrip, c) - s.obs(kWidth, c)) > half;
    for (int r = 0; r < (onset ? repeat : 1); ++r) cols.push_back(c);
  }
  Samples out{MatrixXd(s.obs.rows(), static_cast<Eigen::Index>(cols.size())),
              MatrixXd(s.action.rows(), static_cast<Eigen::Index>(cols.size()))};
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.obs.col(static_cast<Eigen::Index>(i)) = s.obs.col(cols[i]);
    out.action.col(static_cast<Eigen::Index>(i)) = s.action.col(cols[i]);
  }
  return out;
}

}  // namespace

std::vector<int> task_inputs(const sim::TaskSpec& task) {
  std::vector<int> in;
  if (task.kind == sim::TaskKind::PickPlace) in = {4, 5, 6};
  in.push_back(7);
  for (std::size_t k = 0; k < task.objects.size(); ++k) {
    const int base = 8 + 10 * static_cast<int>(k) + 7;
    in.insert(in.end(), {base, base + 1, base + 2});
  }
  return in;
}

TrainConfig default_train_config(const sim::TaskSpec& task) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.inputs = task_inputs(task);
  cfg.gripper_onset_repeat = 20;
  cfg.cosine_decay = true;
  return cfg;
}

TrainResult train_bc(const recorder::Dataset& d, const TrainConfig& cfg) {
  cfg.validate();
  std::size_t steps = 0;
  for (const auto& demo : d.demos) steps += demo.steps.size();
  if (steps == 0) fail(Errc::EmptyDataset, "dataset has no steps");
  if (d.header.action_dim != recorder::kActionDim) fail(Errc::DimMismatch, "unexpected action_dim");

  std::vector<std::size_t> idx(d.demos.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto n_val = static_cast<std::size_t>(
      std::floor(cfg.validation_fraction * static_cast<double>(idx.size())));
  std::vector<std::size_t> val;
  if (n_val > 0 && n_val < idx.size()) {
    const CounterRng rng(cfg.seed, 0x56414CULL);
    for (std::size_t i = 0; i < n_val; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.bits(i) % (idx.size() - i));
      std::swap(idx[i], idx[j]);
    }
    val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    idx.erase(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::sort(val.begin(), val.end());
    std::sort(idx.begin(), idx.end());
  }
  Samples train = samples_from(d, idx);
  if (train.size() == 0) fail(Errc::EmptyDataset, "training split has no steps");
  if (cfg.gripper_onset_repeat > 1) train = repeat_gripper_onsets(train, cfg.gripper_onset_repeat);
  return train_bc(train, samples_from(d, val), cfg);
}

// ---------------------------------------------------------------------------
// Gradient check

double grad_check(const MlpPolicy& policy, const Samples& batch, std::size_t count,
                  std::uint64_t seed, double h, double floor, const GradientFn& gradient) {
  const VectorXd analytic = gradient ? gradient(policy, batch) : loss_and_gradient(policy, batch).grad;
  const VectorXd theta = policy.params();
  const std::size_t total = static_cast<std::size_t>(theta.size());
  if (static_cast<std::size_t>(analytic.size()) != total) {
    fail(Errc::DimMismatch, "gradient size differs from parameter count");
  }
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t picks = std::min(count, total);
  const CounterRng rng(seed, 0x475243ULL);
  for (std::size_t i = 0; i < picks; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.bits(i) % (total - i));
    std::swap(idx[i], idx[j]);
  }

  MlpPolicy probe = policy;
  double worst = 0.0;
  for (std::size_t i = 0; i < picks; ++i) {
    const auto k = static_cast<Eigen::Index>(idx[i]);
    VectorXd t = theta;
    t[k] = theta[k] + h;
    probe.set_params(t);
    const double up = loss(probe, batch);
    t[k] = theta[k] - h;
    probe.set_params(t);
    const double down = loss(probe, batch);
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Evaluation

std::uint64_t eval_seed(std::uint64_t base, std::uint64_t episode) {
  return CounterRng(base, 0x4556414CULL).bits(episode) | (1ULL << 63);
}

std::string format_rate(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f ± %.1f", 100.0 * mean, 100.0 * std);
  return buf;
}

std::string EvalReport::formatted() const { return format_rate(mean, std); }

EvalReport evaluate(const sim::SimModel& model, sim::TaskKind task, int episodes,
                    const std::vector<std::uint64_t>& seeds, const ControllerFactory& factory) {
  if (episodes <= 0 || seeds.empty()) throw std::invalid_argument("need episodes > 0 and at least one seed");
  const sim::TaskSpec& spec = model.task(task);
  const auto limits = recorder::ActionLimits::from(model.world);
  EvalReport r;
  r.task = std::string(sim::to_string(task));
  r.seeds = seeds;
  r.episodes = episodes;
  for (std::uint64_t s : seeds) {
    int ok = 0;
    for (int e = 0; e < episodes; ++e) {
      const std::uint64_t reset_seed = eval_seed(s, static_cast<std::uint64_t>(e));
      sim::World world = sim::reset(model, spec, reset_seed);
      Transform previous = world.ee_pose;
      const ActionFn act = factory(reset_seed);
      for (std::uint64_t t = 0; t < spec.horizon_ticks && !world.success; ++t) {
        const std::vector<double> a = act(recorder::observation(world));
        execute_action(world, previous, a, limits);
      }
      ok += world.success ? 1 : 0;
    }
    r.rates.push_back(static_cast<double>(ok) / episodes);
  }
  const double n = static_cast<double>(r.rates.size());
  r.mean = std::accumulate(r.rates.begin(), r.rates.end(), 0.0) / n;
  if (r.rates.size() > 1) {
    double ss = 0.0;
    for (double x : r.rates) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / (n - 1.0));
  }
  return r;
}

std::vector<double> snap_gripper(std::vector<double> action, double lo, double hi) {
  if (action.size() == recorder::kActionDim) {
    action[6] = action[6] >= 0.5 * (lo + hi) ? hi : lo;
  }
  return action;
}

EvalReport evaluate(const MlpPolicy& policy, const sim::SimModel& model, sim::TaskKind task,
                    int episodes, const std::vector<std::uint64_t>& seeds) {
  if (policy.obs_dim() != recorder::obs_dim(model.task(task)) ||
      policy.action_dim() != recorder::kActionDim) {
    fail(Errc::DimMismatch, "policy dims (" + std::to_string(policy.obs_dim()) + ", " +
                                std::to_string(policy.action_dim()) + ") do not fit task " +
                                std::string(sim::to_string(task)));
  }
  const double lo = model.world.gripper_min;
  const double hi = model.world.gripper_max;
  return evaluate(model, task, episodes, seeds, [&policy, lo, hi](std::uint64_t) -> ActionFn {
    return [&policy, lo, hi](const std::vector<double>& obs) {
      return snap_gripper(forward_policy(policy, obs), lo, hi);
    };
  });
}

std::string format_report(const std::vector<EvalReport>& reports, const std::string& method) {
  std::string out;
  char line[512];
  for (const auto& r : reports) {
    std::string seeds;
    for (std::size_t i = 0; i < r.rates.size(); ++i) {
      char cell[64];
      std::snprintf(cell, sizeof cell, "  seed %llu: %5.1f", static_cast<unsigned long long>(r.seeds[i]),
                    100.0 * r.rates[i]);
      seeds += cell;
    }
    std::snprintf(line, sizeof line, "%-10s %-6s %14s  (%d episodes per seed;%s)\n", r.task.c_str(),
                  method.c_str(), r.formatted().c_str(), r.episodes, seeds.c_str());
    out += line;
  }
  return out;
}

json report_json(const std::vector<EvalReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) {
    arr.push_back({{"task", r.task},
                   {"seeds", r.seeds},
                   {"rates", r.rates},
                   {"mean", r.mean},
                   {"std", r.std},
                   {"episodes", r.episodes},
                   {"formatted", r.formatted()}});
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Policy file

namespace {

constexpr char kMagic[4] = {'D', 'S', '4', 'P'};
constexpr std::uint32_t kPolicyVersion = 1;

void put_u64(std::vector<std::byte>& out, std::uint64_t v, int n = 8) {
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
}

std::uint64_t get_u64(std::span<const std::byte> in, std::size_t& pos, int n = 8) {
  if (in.size() - pos < static_cast<std::size_t>(n)) fail(Errc::CorruptFile, "unexpected end of data");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += static_cast<std::size_t>(n);
  return v;
}

}  // namespace

std::vector<std::byte> serialize_policy(const MlpPolicy& p, const json& metadata) {
  std::vector<std::byte> out;
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u64(out, kPolicyVersion, 4);
  const json meta = {{"sizes", p.sizes},
                     {"inputs", p.inputs},
                     {"source_dim", p.source_dim},
                     {"activation", "tanh"},
                     {"output", "identity"},
                     {"param_count", p.param_count()},
                     {"layout", "obs_mean, obs_std, action_scale, then per layer W (column-major), b"},
                     {"extra", metadata.is_null() ? json::object() : metadata}};
  const std::string text = meta.dump();
  put_u64(out, text.size(), 4);
  for (char c : text) out.push_back(static_cast<std::byte>(c));
  const VectorXd params = p.params();
  std::vector<double> blob(p.obs_mean.data(), p.obs_mean.data() + p.obs_mean.size());
  blob.insert(blob.end(), p.obs_std.data(), p.obs_std.data() + p.obs_std.size());
  blob.insert(blob.end(), p.action_scale.data(), p.action_scale.data() + p.action_scale.size());
  blob.insert(blob.end(), params.data(), params.data() + params.size());
  put_u64(out, blob.size());
  for (double v : blob) put_u64(out, std::bit_cast<std::uint64_t>(v));
  put_u64(out, crc64(std::span<const std::byte>(out)));
  return out;
}

PolicyFile deserialize_policy(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8 + 8 ||
      !std::equal(kMagic, kMagic + 4, reinterpret_cast<const char*>(bytes.data()))) {
    fail(Errc::CorruptFile, "not a policy file");
  }
  std::size_t pos = 4;
  const auto version = static_cast<std::uint32_t>(get_u64(bytes, pos, 4));
  if (version != kPolicyVersion) fail(Errc::BadVersion, "policy version " + std::to_string(version));
  const auto body = bytes.first(bytes.size() - 8);
  std::size_t tail = bytes.size() - 8;
  if (crc64(body) != get_u64(bytes, tail)) fail(Errc::CorruptFile, "checksum mismatch");

  const auto len = static_cast<std::size_t>(get_u64(body, pos, 4));
  if (len > body.size() - pos) fail(Errc::CorruptFile, "metadata overruns file");
  PolicyFile f;
  std::vector<int> sizes;
  std::vector<int> inputs;
  std::size_t source_dim = 0;
  try {
    const json meta = json::parse(reinterpret_cast<const char*>(body.data() + pos),
                                  reinterpret_cast<const char*>(body.data() + pos + len));
    sizes = meta.at("sizes").get<std::vector<int>>();
    inputs = meta.at("inputs").get<std::vector<int>>();
    source_dim = meta.at("source_dim").get<std::size_t>();
    f.metadata = meta.at("extra");
  } catch (const json::exception& e) {
    fail(Errc::CorruptFile, std::string("metadata: ") + e.what());
  }
  pos += len;
  try {
    f.policy = zero_policy(sizes);
  } catch (const std::invalid_argument& e) {
    fail(Errc::CorruptFile, e.what());
  }
  MlpPolicy& p = f.policy;
  if (!inputs.empty()) {
    if (inputs.size() != p.input_dim()) fail(Errc::CorruptFile, "input list does not match the layer sizes");
    try {
      check_inputs(inputs, source_dim);
    } catch (const LearnerError&) {
      fail(Errc::CorruptFile, "input index outside the observation");
    }
    p.inputs = std::move(inputs);
    p.source_dim = source_dim;
  }
  const std::uint64_t count = get_u64(body, pos);
  const std::size_t expected = p.input_dim() * 2 + p.action_dim() + p.param_count();
  if (count != expected || (body.size() - pos) != 8 * expected) {
    fail(Errc::DimMismatch, "weight blob size does not match the layer sizes");
  }
  std::vector<double> blob(expected);
  for (double& v : blob) v = std::bit_cast<double>(get_u64(body, pos));
  if (!std::all_of(blob.begin(), blob.end(), [](double v) { return std::isfinite(v); })) {
    fail(Errc::CorruptFile, "non-finite parameter");
  }
  const auto od = static_cast<Eigen::Index>(p.input_dim());
  const auto ad = static_cast<Eigen::Index>(p.action_dim());
  p.obs_mean = Eigen::Map<const VectorXd>(blob.data(), od);
  p.obs_std = Eigen::Map<const VectorXd>(blob.data() + od, od);
  p.action_scale = Eigen::Map<const VectorXd>(blob.data() + 2 * od, ad);
  p.set_params(Eigen::Map<const VectorXd>(blob.data() + 2 * od + ad,
                                          static_cast<Eigen::Index>(p.param_count())));
  return f;
}

void save_policy(const MlpPolicy& p, const std::string& path, const json& metadata) {
  const auto bytes = serialize_policy(p, metadata);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(Errc::Io, "cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(Errc::Io, "write failed for " + path);
}

PolicyFile load_policy(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::Io, "cannot open " + path);
  const std::vector<char> raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_policy(std::as_bytes(std::span<const char>(raw)));
}

}  // namespace ds4d::learner

#pragma once

#include "ds4d/recorder.hpp"
#include "ds4d/sim.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ds4d::learner {

enum class Errc { DimMismatch, EmptyDataset, BadVersion, CorruptFile, Io };

std::string_view to_string(Errc e);

class LearnerError : public std::runtime_error {
public:
  LearnerError(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

private:
  Errc code_;
};

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Fully connected network, tanh on hidden layers and identity on the output.
/// Inputs are standardized with per-dimension mean/std; outputs are multiplied
/// by a per-dimension scale (no shift, so an all-zero net emits zero actions).
/// When `inputs` is set the network reads only those observation entries.
struct MlpPolicy {
  std::vector<int> sizes;  // [input_dim, hidden..., action_dim]
  std::vector<MatrixXd> weights;
  std::vector<VectorXd> biases;
  VectorXd obs_mean;
  VectorXd obs_std;
  VectorXd action_scale;
  std::vector<int> inputs;     // observation indices fed to the network; empty means all
  std::size_t source_dim = 0;  // observation size when `inputs` is set

  /// Size of the observation the policy consumes.
  std::size_t obs_dim() const { return inputs.empty() ? input_dim() : source_dim; }
  std::size_t input_dim() const { return static_cast<std::size_t>(sizes.front()); }
  std::size_t action_dim() const { return static_cast<std::size_t>(sizes.back()); }
  std::size_t param_count() const;
  /// Layer by layer: W (column-major) then b.
  VectorXd params() const;
  void set_params(const VectorXd& p);

  bool operator==(const MlpPolicy& o) const;
};

/// Glorot-uniform weights, zero biases, identity normalization.
MlpPolicy make_policy(const std::vector<int>& sizes, std::uint64_t seed);
MlpPolicy zero_policy(const std::vector<int>& sizes);

/// Throws DimMismatch.
std::vector<double> forward_policy(const MlpPolicy& policy, std::span<const double> obs);

/// Training pairs, one sample per column.
struct Samples {
  MatrixXd obs;     // obs_dim x N
  MatrixXd action;  // action_dim x N

  Eigen::Index size() const { return obs.cols(); }
};

Samples samples_from(const recorder::Dataset& d, const std::vector<std::size_t>& demo_indices);
Samples samples_from(const recorder::Dataset& d);

/// Mean squared error in scaled action space and its gradient over params().
struct LossGrad {
  double loss = 0.0;
  VectorXd grad;
};
double loss(const MlpPolicy& policy, const Samples& batch);
LossGrad loss_and_gradient(const MlpPolicy& policy, const Samples& batch);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  bool cosine_decay = false;  // learning rate follows a half cosine from its value to 0 over the epochs
  std::uint64_t seed = 1;
  double validation_fraction = 0.0;  // in [0, 0.5]; whole demonstrations are held out
  std::vector<int> hidden = {64, 64};
  double obs_std_floor = 1e-2;
  double action_scale_floor = 1e-3;
  double input_noise = 0.0;  // std of Gaussian noise added to normalized training inputs
  std::vector<int> inputs;   // observation entries the policy reads; empty means all
  /// Dataset training only: steps whose commanded gripper width is more than
  /// half the gripper range away from the measured width appear this many times.
  int gripper_onset_repeat = 1;

  void validate() const;
};

struct TrainResult {
  MlpPolicy policy;
  std::vector<double> train_loss;  // per epoch, full pass after the update
  std::vector<double> val_loss;    // empty without a validation split
};

/// Observation entries the default policy reads for a task: gripper width,
/// every object-minus-EE relative position and, when the goal is fixed in the
/// world (PickPlace), the EE position.
std::vector<int> task_inputs(const sim::TaskSpec& task);

/// Default training setup used by the CLI and acceptance runs.
TrainConfig default_train_config(const sim::TaskSpec& task);

/// Throws EmptyDataset or DimMismatch. Deterministic in (data, cfg).
TrainResult train_bc(const recorder::Dataset& d, const TrainConfig& cfg);
TrainResult train_bc(const Samples& train, const Samples& validation, const TrainConfig& cfg);

/// Fits the normalizers of `policy` to the samples.
void fit_normalizers(MlpPolicy& policy, const Samples& s, double obs_std_floor,
                     double action_scale_floor);

using GradientFn = std::function<VectorXd(const MlpPolicy&, const Samples&)>;

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over
/// `count` randomly chosen parameters, with central differences of step h.
/// `gradient` defaults to the backprop gradient.
double grad_check(const MlpPolicy& policy, const Samples& batch, std::size_t count = 200,
                  std::uint64_t seed = 0, double h = 1e-6, double floor = 1e-5,
                  const GradientFn& gradient = {});

// ---------------------------------------------------------------------------
// Evaluation

/// Reset seeds for evaluation; the top bit is always set.
std::uint64_t eval_seed(std::uint64_t base, std::uint64_t episode);

using ActionFn = std::function<std::vector<double>(const std::vector<double>& obs)>;
/// Builds the controller for one episode, given its reset seed.
using ControllerFactory = std::function<ActionFn(std::uint64_t reset_seed)>;

struct EvalReport {
  std::string task;
  std::vector<std::uint64_t> seeds;
  std::vector<double> rates;  // success fraction per seed
  double mean = 0.0;
  double std = 0.0;  // sample std across seeds, 0 for a single seed
  int episodes = 0;

  /// "mean ± std" in percent with one decimal.
  std::string formatted() const;
};

std::string format_rate(double mean, double std);
std::string format_report(const std::vector<EvalReport>& reports, const std::string& method = "BC");
nlohmann::json report_json(const std::vector<EvalReport>& reports);

/// Rolls out `episodes` episodes per seed until success or the task horizon.
EvalReport evaluate(const sim::SimModel& model, sim::TaskKind task, int episodes,
                    const std::vector<std::uint64_t>& seeds, const ControllerFactory& factory);
/// Gripper entry of a policy action forced to fully open or fully closed,
/// split at the midpoint. Demonstrated widths are already at the bounds.
std::vector<double> snap_gripper(std::vector<double> action, double lo, double hi);

/// Throws DimMismatch when the policy does not fit the task. The policy's
/// gripper output passes through snap_gripper.
EvalReport evaluate(const MlpPolicy& policy, const sim::SimModel& model, sim::TaskKind task,
                    int episodes, const std::vector<std::uint64_t>& seeds);

// ---------------------------------------------------------------------------
// Policy file

struct PolicyFile {
  MlpPolicy policy;
  nlohmann::json metadata;  // free-form extras (task, model hash, training config)
};

std::vector<std::byte> serialize_policy(const MlpPolicy& p, const nlohmann::json& metadata = {});
PolicyFile deserialize_policy(std::span<const std::byte> bytes);
void save_policy(const MlpPolicy& p, const std::string& path, const nlohmann::json& metadata = {});
PolicyFile load_policy(const std::string& path);

}  // namespace ds4d::learner

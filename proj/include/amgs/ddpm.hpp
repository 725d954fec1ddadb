// Conditional denoising diffusion model over decision vectors: noise
// schedule, per-dimension normalizer, a fully connected denoiser with
// hand-written reverse-mode gradients, classifier-free training and guided
// ancestral sampling.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "amgs/config.hpp"
#include "amgs/rng.hpp"
#include "amgs/transcribe.hpp"

namespace amgs {

class NoiseSchedule {
 public:
  // Linearly spaced betas; requires 0 < beta_1 < beta_T < 1 and T >= 2.
  static NoiseSchedule linear(int T, double beta_1, double beta_T);
  // Arbitrary betas in (0, 1); for tests of the closed forms.
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  // 1-based step index t in [1, T].
  double beta(int t) const { return beta_.at(static_cast<std::size_t>(t - 1)); }
  double alpha(int t) const { return alpha_.at(static_cast<std::size_t>(t - 1)); }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t - 1)); }
  double beta_1() const { return beta_.front(); }
  double beta_T() const { return beta_.back(); }

 private:
  std::vector<double> beta_, alpha_, alpha_bar_;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Eigen::VectorXd forward_noising(const Eigen::VectorXd& x0, int t, const Eigen::VectorXd& eps, const NoiseSchedule& s);

// Per-dimension affine map of the training range onto [-1, 1]. Dimensions
// with no spread keep unit half-span, so they map to 0.
struct Normalizer {
  Eigen::VectorXd center;
  Eigen::VectorXd half_span;

  // Columns are data points.
  static Normalizer fit(const Eigen::MatrixXd& data);
  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& z) const;
};

struct DenoiserTopology {
  int dim = 0;
  int width = 256;
  int n_hidden = 4;
  int time_embedding = 64;
  int cond_embedding = 64;

  void validate() const;
  int input_width() const { return dim + time_embedding + cond_embedding; }
};

// Sinusoidal embedding of the integer step t, width w (even).
Eigen::VectorXd time_embedding(int t, int w);

// Counters filled by forward passes, for instrumentation.
struct ForwardStats {
  long conditional = 0;
  long null_token = 0;
};

// Fully connected noise predictor eps(x_t, t, y). All parameters live in one
// flat vector: hidden layers (W, b), output layer (W, b), condition map
// (W, b) and the null token.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserTopology& topo, std::uint64_t seed);

  const DenoiserTopology& topology() const { return topo_; }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }
  Normalizer normalizer;

  // Columns of x are normalized noisy points; use_null[j] replaces y[j] with the null token.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x, const std::vector<int>& t, const Eigen::VectorXd& y,
                          const std::vector<char>& use_null, ForwardStats* stats = nullptr) const;

  // Mean over columns of |predict - target|^2 and, when grad is given, its
  // gradient with respect to params().
  double loss_and_gradient(const Eigen::MatrixXd& x, const std::vector<int>& t, const Eigen::VectorXd& y,
                           const std::vector<char>& use_null, const Eigen::MatrixXd& target, Eigen::VectorXd* grad,
                           ForwardStats* stats = nullptr) const;

 private:
  DenoiserTopology topo_;
  Eigen::VectorXd theta_;
};

// Per-element draws of one loss evaluation.
struct LossDraws {
  std::vector<int> t;           // in [1, T]
  Eigen::MatrixXd eps;          // dim x B
  std::vector<char> use_null;   // Bernoulli(p_uncond)
};

LossDraws draw_loss_inputs(int batch, int dim, const NoiseSchedule& s, double p_uncond, CounterRng& rng);

struct LossResult {
  double loss = 0.0;
  ForwardStats stats;
};

// Noise predictor signature used by the generic loss: (x_t, t, y, use_null) -> eps_hat.
using EpsPredictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, const std::vector<int>&,
                                                    const Eigen::VectorXd&, const std::vector<char>&)>;

// Classifier-free loss for a batch of normalized points x0 (dim x B) with
// conditions y; throws kNonFinite naming batch_index on a non-finite loss.
LossResult cfg_loss(const EpsPredictor& f, const Eigen::MatrixXd& x0, const Eigen::VectorXd& y, const LossDraws& d,
                    const NoiseSchedule& s, long batch_index = 0);
LossResult cfg_loss(const Denoiser& m, const Eigen::MatrixXd& x0, const Eigen::VectorXd& y, const LossDraws& d,
                    const NoiseSchedule& s, Eigen::VectorXd* grad, long batch_index = 0);

struct TrainConfig {
  int epochs = 2000;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double lr_decay = 0.999;  // per epoch
  double grad_clip = 1.0;   // global norm; 0 disables
  double p_uncond = 0.1;
  int T = 500;
  double beta_1 = 1e-4;
  double beta_T = 0.02;
  std::uint64_t seed = 1;
  bool keep_best = false;
  int width = 256;
  int n_hidden = 4;
  int time_embedding = 64;
  int cond_embedding = 64;

  void validate() const;
  NoiseSchedule schedule() const { return NoiseSchedule::linear(T, beta_1, beta_T); }
};

Json to_json(const TrainConfig& c);
void apply_json(const Json& j, TrainConfig& c, const std::string& where = "train");

struct TrainResult {
  Denoiser model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  bool diverged = false;
  std::string message;
};

// Columns of data are raw decision vectors, y their conditions. When curve_csv
// is non-empty the per-epoch losses are written there.
TrainResult train(const Eigen::MatrixXd& data, const Eigen::VectorXd& y, const TrainConfig& cfg,
                  const std::string& curve_csv = "",
                  const std::function<void(int, double)>& on_epoch = {});

// eps_bar = w eps(x_t, t, y) + (1 - w) eps(x_t, t, null), per column.
Eigen::MatrixXd guided_noise(const Denoiser& m, const Eigen::MatrixXd& x_t, int t, double y, double w);

struct SampleResult {
  Eigen::MatrixXd samples;  // dim x n, denormalized and clipped when a box is given
  int out_of_box = 0;       // samples with an entry outside the box before clipping
};

// Ancestral sampling; chain i draws from derive_seed(seed, i).
SampleResult sample_ddpm(const Denoiser& m, const NoiseSchedule& s, double y, double w, int n, std::uint64_t seed,
                         const Box* box = nullptr);

struct Checkpoint {
  Denoiser model;
  TrainConfig train;
  std::string dataset_fingerprint;
  Json extra = Json::object();
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace amgs

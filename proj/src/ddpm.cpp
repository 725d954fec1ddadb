#include "amgs/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "amgs/error.hpp"

namespace amgs {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::linear(int T, double beta_1, double beta_T) {
  require(T >= 2, ErrorCode::kDomain, "schedule needs T >= 2");
  require(std::isfinite(beta_1) && std::isfinite(beta_T) && 0.0 < beta_1 && beta_1 < beta_T && beta_T < 1.0,
          ErrorCode::kDomain, "schedule needs 0 < beta_1 < beta_T < 1");
  std::vector<double> b(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) b[static_cast<std::size_t>(i)] = beta_1 + (beta_T - beta_1) * i / (T - 1);
  return from_betas(std::move(b));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  require(!betas.empty(), ErrorCode::kDomain, "schedule needs at least one step");
  NoiseSchedule s;
  double prod = 1.0;
  for (double b : betas) {
    require(std::isfinite(b) && b > 0.0 && b < 1.0, ErrorCode::kDomain, "betas must lie in (0, 1)");
    s.alpha_.push_back(1.0 - b);
    prod *= 1.0 - b;
    s.alpha_bar_.push_back(prod);
  }
  s.beta_ = std::move(betas);
  return s;
}

VectorXd forward_noising(const VectorXd& x0, int t, const VectorXd& eps, const NoiseSchedule& s) {
  require(t >= 1 && t <= s.steps(), ErrorCode::kDomain, "diffusion step out of range");
  require(x0.size() == eps.size(), ErrorCode::kInvalidArgument, "x0 and eps sizes differ");
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// -------------------------------------------------------------- normalizer

Normalizer Normalizer::fit(const MatrixXd& data) {
  require(data.cols() > 0 && data.rows() > 0, ErrorCode::kInvalidArgument, "cannot fit a normalizer to no data");
  require(data.allFinite(), ErrorCode::kNonFinite, "normalizer data is not finite");
  Normalizer n;
  const VectorXd lo = data.rowwise().minCoeff(), hi = data.rowwise().maxCoeff();
  n.center = 0.5 * (lo + hi);
  n.half_span = 0.5 * (hi - lo);
  for (Eigen::Index i = 0; i < n.half_span.size(); ++i)
    if (!(n.half_span[i] > 1e-12 * std::max(1.0, std::abs(n.center[i])))) n.half_span[i] = 1.0;
  return n;
}

VectorXd Normalizer::normalize(const VectorXd& x) const {
  require(x.size() == center.size(), ErrorCode::kInvalidArgument, "normalizer dimension mismatch");
  return (x - center).cwiseQuotient(half_span);
}

VectorXd Normalizer::denormalize(const VectorXd& z) const {
  require(z.size() == center.size(), ErrorCode::kInvalidArgument, "normalizer dimension mismatch");
  return z.cwiseProduct(half_span) + center;
}

// ---------------------------------------------------------------- denoiser

void DenoiserTopology::validate() const {
  require(dim > 0 && width > 0 && n_hidden > 0 && cond_embedding > 0, ErrorCode::kInvalidArgument,
          "denoiser sizes must be positive");
  require(time_embedding > 0 && time_embedding % 2 == 0, ErrorCode::kInvalidArgument,
          "time embedding width must be positive and even");
}

VectorXd time_embedding(int t, int w) {
  const int h = w / 2;
  VectorXd e(w);
  for (int k = 0; k < h; ++k) {
    const double f = std::exp(-std::log(10000.0) * k / h);
    e[k] = std::sin(t * f);
    e[h + k] = std::cos(t * f);
  }
  return e;
}

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) { return z * sigmoid(z); }
inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

struct Offsets {
  std::vector<Eigen::Index> w, b;
  Eigen::Index wo, bo, wc, bc, null, total;
};

Offsets offsets(const DenoiserTopology& t) {
  Offsets o;
  Eigen::Index at = 0;
  for (int l = 0; l < t.n_hidden; ++l) {
    const int in = l == 0 ? t.input_width() : t.width;
    o.w.push_back(at);
    at += static_cast<Eigen::Index>(t.width) * in;
    o.b.push_back(at);
    at += t.width;
  }
  o.wo = at;
  at += static_cast<Eigen::Index>(t.dim) * t.width;
  o.bo = at;
  at += t.dim;
  o.wc = at;
  at += t.cond_embedding;
  o.bc = at;
  at += t.cond_embedding;
  o.null = at;
  at += t.cond_embedding;
  o.total = at;
  return o;
}

using CMap = Eigen::Map<const MatrixXd>;
using CVMap = Eigen::Map<const VectorXd>;
using Map = Eigen::Map<MatrixXd>;
using VMap = Eigen::Map<VectorXd>;

struct Cache {
  std::vector<MatrixXd> h;  // h[0] input, h[l+1] activation of hidden layer l
  std::vector<MatrixXd> z;  // pre-activations of hidden layers
  MatrixXd zc;              // condition pre-activations (columns of null rows unused)
  MatrixXd out;
};

}  // namespace

Denoiser::Denoiser(const DenoiserTopology& topo, std::uint64_t seed) : topo_(topo) {
  topo_.validate();
  const Offsets o = offsets(topo_);
  theta_.resize(o.total);
  CounterRng rng(seed);
  auto fill = [&](Eigen::Index at, Eigen::Index count, double k) {
    for (Eigen::Index i = 0; i < count; ++i) theta_[at + i] = rng.uniform(-k, k);
  };
  for (int l = 0; l < topo_.n_hidden; ++l) {
    const int in = l == 0 ? topo_.input_width() : topo_.width;
    const double k = 1.0 / std::sqrt(static_cast<double>(in));
    fill(o.w[static_cast<std::size_t>(l)], static_cast<Eigen::Index>(topo_.width) * in, k);
    fill(o.b[static_cast<std::size_t>(l)], topo_.width, k);
  }
  const double ko = 1.0 / std::sqrt(static_cast<double>(topo_.width));
  fill(o.wo, static_cast<Eigen::Index>(topo_.dim) * topo_.width, ko);
  fill(o.bo, topo_.dim, ko);
  fill(o.wc, topo_.cond_embedding, 1.0);
  fill(o.bc, topo_.cond_embedding, 1.0);
  fill(o.null, topo_.cond_embedding, 0.5);
  normalizer.center = VectorXd::Zero(topo_.dim);
  normalizer.half_span = VectorXd::Ones(topo_.dim);
}

namespace {

void forward(const DenoiserTopology& tp, const VectorXd& theta, const MatrixXd& x, const std::vector<int>& t,
             const VectorXd& y, const std::vector<char>& use_null, Cache& c, ForwardStats* stats) {
  const Eigen::Index B = x.cols();
  require(x.rows() == tp.dim, ErrorCode::kInvalidArgument, "denoiser input has the wrong dimension");
  require(static_cast<Eigen::Index>(t.size()) == B && y.size() == B && static_cast<Eigen::Index>(use_null.size()) == B,
          ErrorCode::kInvalidArgument, "denoiser batch arrays disagree in length");
  const Offsets o = offsets(tp);
  const int ce = tp.cond_embedding, te = tp.time_embedding;

  MatrixXd h0(tp.input_width(), B);
  h0.topRows(tp.dim) = x;
  c.zc.resize(ce, B);
  const CVMap wc(theta.data() + o.wc, ce), bc(theta.data() + o.bc, ce), null(theta.data() + o.null, ce);
  for (Eigen::Index j = 0; j < B; ++j) {
    h0.block(tp.dim, j, te, 1) = time_embedding(t[static_cast<std::size_t>(j)], te);
    if (use_null[static_cast<std::size_t>(j)]) {
      h0.block(tp.dim + te, j, ce, 1) = null;
      if (stats) ++stats->null_token;
    } else {
      c.zc.col(j) = wc * y[j] + bc;
      h0.block(tp.dim + te, j, ce, 1) = c.zc.col(j).unaryExpr(&silu);
      if (stats) ++stats->conditional;
    }
  }
  c.h.assign(1, std::move(h0));
  c.z.clear();
  for (int l = 0; l < tp.n_hidden; ++l) {
    const int in = l == 0 ? tp.input_width() : tp.width;
    const CMap W(theta.data() + o.w[static_cast<std::size_t>(l)], tp.width, in);
    const CVMap b(theta.data() + o.b[static_cast<std::size_t>(l)], tp.width);
    MatrixXd z = W * c.h.back();
    z.colwise() += b;
    c.h.push_back(z.unaryExpr(&silu));
    c.z.push_back(std::move(z));
  }
  const CMap Wo(theta.data() + o.wo, tp.dim, tp.width);
  const CVMap bo(theta.data() + o.bo, tp.dim);
  c.out = Wo * c.h.back();
  c.out.colwise() += bo;
}

}  // namespace

MatrixXd Denoiser::predict(const MatrixXd& x, const std::vector<int>& t, const VectorXd& y,
                           const std::vector<char>& use_null, ForwardStats* stats) const {
  Cache c;
  forward(topo_, theta_, x, t, y, use_null, c, stats);
  return std::move(c.out);
}

double Denoiser::loss_and_gradient(const MatrixXd& x, const std::vector<int>& t, const VectorXd& y,
                                   const std::vector<char>& use_null, const MatrixXd& target, VectorXd* grad,
                                   ForwardStats* stats) const {
  Cache c;
  forward(topo_, theta_, x, t, y, use_null, c, stats);
  const double B = static_cast<double>(x.cols());
  const MatrixXd r = c.out - target;
  const double loss = r.squaredNorm() / B;
  if (!grad) return loss;

  const Offsets o = offsets(topo_);
  grad->setZero(theta_.size());
  VectorXd& g = *grad;
  MatrixXd d = (2.0 / B) * r;
  Map(g.data() + o.wo, topo_.dim, topo_.width) = d * c.h.back().transpose();
  VMap(g.data() + o.bo, topo_.dim) = d.rowwise().sum();
  MatrixXd dh = CMap(theta_.data() + o.wo, topo_.dim, topo_.width).transpose() * d;
  for (int l = topo_.n_hidden - 1; l >= 0; --l) {
    const auto ls = static_cast<std::size_t>(l);
    const int in = l == 0 ? topo_.input_width() : topo_.width;
    const MatrixXd dz = dh.cwiseProduct(c.z[ls].unaryExpr(&silu_grad));
    Map(g.data() + o.w[ls], topo_.width, in) = dz * c.h[ls].transpose();
    VMap(g.data() + o.b[ls], topo_.width) = dz.rowwise().sum();
    dh = CMap(theta_.data() + o.w[ls], topo_.width, in).transpose() * dz;
  }
  const int ce = topo_.cond_embedding;
  VMap gwc(g.data() + o.wc, ce), gbc(g.data() + o.bc, ce), gnull(g.data() + o.null, ce);
  const auto dc = dh.bottomRows(ce);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (use_null[static_cast<std::size_t>(j)]) {
      gnull += dc.col(j);
    } else {
      const VectorXd dzc = dc.col(j).cwiseProduct(c.zc.col(j).unaryExpr(&silu_grad));
      gwc += dzc * y[j];
      gbc += dzc;
    }
  }
  return loss;
}

// -------------------------------------------------------------------- loss

LossDraws draw_loss_inputs(int batch, int dim, const NoiseSchedule& s, double p_uncond, CounterRng& rng) {
  require(batch > 0 && dim > 0, ErrorCode::kInvalidArgument, "loss batch must be nonempty");
  require(p_uncond >= 0.0 && p_uncond <= 1.0, ErrorCode::kInvalidArgument, "p_uncond must lie in [0, 1]");
  LossDraws d;
  d.t.resize(static_cast<std::size_t>(batch));
  d.use_null.resize(static_cast<std::size_t>(batch));
  d.eps.resize(dim, batch);
  for (int j = 0; j < batch; ++j) {
    d.t[static_cast<std::size_t>(j)] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.steps())));
    d.use_null[static_cast<std::size_t>(j)] = rng.bernoulli(p_uncond) ? 1 : 0;
    for (int i = 0; i < dim; ++i) d.eps(i, j) = rng.normal();
  }
  return d;
}

namespace {

MatrixXd noised(const MatrixXd& x0, const LossDraws& d, const NoiseSchedule& s) {
  require(d.eps.rows() == x0.rows() && d.eps.cols() == x0.cols(), ErrorCode::kInvalidArgument,
          "loss draws do not match the batch");
  MatrixXd xt(x0.rows(), x0.cols());
  for (Eigen::Index j = 0; j < x0.cols(); ++j) {
    const double ab = s.alpha_bar(d.t[static_cast<std::size_t>(j)]);
    xt.col(j) = std::sqrt(ab) * x0.col(j) + std::sqrt(1.0 - ab) * d.eps.col(j);
  }
  return xt;
}

void check_loss(double loss, long batch_index) {
  require(std::isfinite(loss), ErrorCode::kNonFinite, "non-finite loss at batch " + std::to_string(batch_index));
}

}  // namespace

LossResult cfg_loss(const EpsPredictor& f, const MatrixXd& x0, const VectorXd& y, const LossDraws& d,
                    const NoiseSchedule& s, long batch_index) {
  require(x0.cols() > 0 && y.size() == x0.cols(), ErrorCode::kInvalidArgument, "loss batch is empty or ragged");
  const MatrixXd xt = noised(x0, d, s);
  LossResult r;
  for (char n : d.use_null) (n ? r.stats.null_token : r.stats.conditional)++;
  r.loss = (f(xt, d.t, y, d.use_null) - d.eps).squaredNorm() / static_cast<double>(x0.cols());
  check_loss(r.loss, batch_index);
  return r;
}

LossResult cfg_loss(const Denoiser& m, const MatrixXd& x0, const VectorXd& y, const LossDraws& d,
                    const NoiseSchedule& s, VectorXd* grad, long batch_index) {
  require(x0.cols() > 0 && y.size() == x0.cols(), ErrorCode::kInvalidArgument, "loss batch is empty or ragged");
  const MatrixXd xt = noised(x0, d, s);
  LossResult r;
  r.loss = m.loss_and_gradient(xt, d.t, y, d.use_null, d.eps, grad, &r.stats);
  check_loss(r.loss, batch_index);
  if (grad) require(grad->allFinite(), ErrorCode::kNonFinite, "non-finite gradient at batch " + std::to_string(batch_index));
  return r;
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  require(epochs > 0 && batch_size > 0, ErrorCode::kInvalidArgument, "epochs and batch_size must be positive");
  require(learning_rate > 0.0 && lr_decay > 0.0 && lr_decay <= 1.0, ErrorCode::kInvalidArgument,
          "learning rate must be positive and lr_decay in (0, 1]");
  require(grad_clip >= 0.0, ErrorCode::kInvalidArgument, "grad_clip must be non-negative");
  require(p_uncond >= 0.0 && p_uncond < 1.0, ErrorCode::kInvalidArgument, "p_uncond must lie in [0, 1)");
  DenoiserTopology{1, width, n_hidden, time_embedding, cond_embedding}.validate();
  (void)schedule();
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lr_decay"] = c.lr_decay;
  j["grad_clip"] = c.grad_clip;
  j["p_uncond"] = c.p_uncond;
  j["T"] = c.T;
  j["beta_1"] = c.beta_1;
  j["beta_T"] = c.beta_T;
  j["seed"] = c.seed;
  j["keep_best"] = c.keep_best;
  j["width"] = c.width;
  j["n_hidden"] = c.n_hidden;
  j["time_embedding"] = c.time_embedding;
  j["cond_embedding"] = c.cond_embedding;
  return j;
}

void apply_json(const Json& j, TrainConfig& c, const std::string& where) {
  require(j.is_object(), ErrorCode::kParse, where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const Json& v = it.value();
    auto num = [&] {
      require(v.is_number(), ErrorCode::kParse, where + "." + k + " must be a number");
      return v.get<double>();
    };
    auto integer = [&] {
      require(v.is_number_integer(), ErrorCode::kParse, where + "." + k + " must be an integer");
      return v.get<long long>();
    };
    if (k == "epochs") c.epochs = static_cast<int>(integer());
    else if (k == "batch_size") c.batch_size = static_cast<int>(integer());
    else if (k == "learning_rate") c.learning_rate = num();
    else if (k == "lr_decay") c.lr_decay = num();
    else if (k == "grad_clip") c.grad_clip = num();
    else if (k == "p_uncond") c.p_uncond = num();
    else if (k == "T") c.T = static_cast<int>(integer());
    else if (k == "beta_1") c.beta_1 = num();
    else if (k == "beta_T") c.beta_T = num();
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(integer());
    else if (k == "keep_best") {
      require(v.is_boolean(), ErrorCode::kParse, where + ".keep_best must be a boolean");
      c.keep_best = v.get<bool>();
    } else if (k == "width") c.width = static_cast<int>(integer());
    else if (k == "n_hidden") c.n_hidden = static_cast<int>(integer());
    else if (k == "time_embedding") c.time_embedding = static_cast<int>(integer());
    else if (k == "cond_embedding") c.cond_embedding = static_cast<int>(integer());
    else fail(ErrorCode::kParse, "unknown key " + where + "." + k);
  }
}

TrainResult train(const MatrixXd& data, const VectorXd& y, const TrainConfig& cfg, const std::string& curve_csv,
                  const std::function<void(int, double)>& on_epoch) {
  cfg.validate();
  require(data.cols() > 0, ErrorCode::kInvalidArgument, "training data is empty");
  require(y.size() == data.cols(), ErrorCode::kInvalidArgument, "one condition per data point is required");
  require(y.allFinite(), ErrorCode::kNonFinite, "conditions are not finite");
  const NoiseSchedule sched = cfg.schedule();
  const DenoiserTopology topo{static_cast<int>(data.rows()), cfg.width, cfg.n_hidden, cfg.time_embedding,
                              cfg.cond_embedding};

  TrainResult res;
  res.model = Denoiser(topo, derive_seed(cfg.seed, 0));
  res.model.normalizer = Normalizer::fit(data);
  MatrixXd z(data.rows(), data.cols());
  for (Eigen::Index j = 0; j < data.cols(); ++j) z.col(j) = res.model.normalizer.normalize(data.col(j));

  const Eigen::Index n = data.cols(), np = res.model.params().size();
  VectorXd m1 = VectorXd::Zero(np), m2 = VectorXd::Zero(np), grad(np);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long step = 0;
  VectorXd best = res.model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));

  std::ofstream curve;
  if (!curve_csv.empty()) {
    curve.open(curve_csv);
    require(curve.good(), ErrorCode::kIo, "cannot write " + curve_csv);
    curve << "epoch,loss,learning_rate\n";
  }

  for (int epoch = 0; epoch < cfg.epochs && !res.diverged; ++epoch) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    CounterRng shuffle(derive_seed(cfg.seed, 1'000'000 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    const double lr = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    double total = 0.0;
    long count = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index B = std::min<Eigen::Index>(cfg.batch_size, n - start);
      MatrixXd xb(z.rows(), B);
      VectorXd yb(B);
      for (Eigen::Index j = 0; j < B; ++j) {
        xb.col(j) = z.col(order[static_cast<std::size_t>(start + j)]);
        yb[j] = y[order[static_cast<std::size_t>(start + j)]];
      }
      CounterRng rng(derive_seed(cfg.seed, 2'000'000'000ULL + static_cast<std::uint64_t>(step)));
      const LossDraws d = draw_loss_inputs(static_cast<int>(B), static_cast<int>(z.rows()), sched, cfg.p_uncond, rng);
      LossResult lr_out;
      try {
        lr_out = cfg_loss(res.model, xb, yb, d, sched, &grad, step);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        res.diverged = true;
        res.message = std::string(e.what()) + " (epoch " + std::to_string(epoch) + "); kept the last good parameters";
        break;
      }
      if (cfg.grad_clip > 0.0) {
        const double gn = grad.norm();
        if (gn > cfg.grad_clip) grad *= cfg.grad_clip / gn;
      }
      ++step;
      m1 = b1 * m1 + (1.0 - b1) * grad;
      m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(step)), c2 = 1.0 - std::pow(b2, static_cast<double>(step));
      res.model.params().array() -= lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
      total += lr_out.loss * static_cast<double>(B);
      count += B;
    }
    if (res.diverged) break;
    const double mean = total / static_cast<double>(count);
    res.epoch_loss.push_back(mean);
    if (curve.is_open()) curve << epoch << "," << mean << "," << lr << "\n";
    if (cfg.keep_best && mean < best_loss) {
      best_loss = mean;
      best = res.model.params();
    }
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (cfg.keep_best && std::isfinite(best_loss)) res.model.params() = best;
  return res;
}

// ---------------------------------------------------------------- sampling

MatrixXd guided_noise(const Denoiser& m, const MatrixXd& x_t, int t, double y, double w) {
  const auto B = static_cast<std::size_t>(x_t.cols());
  const std::vector<int> ts(B, t);
  const VectorXd ys = VectorXd::Constant(x_t.cols(), y);
  if (w == 1.0) return m.predict(x_t, ts, ys, std::vector<char>(B, 0));
  if (w == 0.0) return m.predict(x_t, ts, ys, std::vector<char>(B, 1));
  const MatrixXd ec = m.predict(x_t, ts, ys, std::vector<char>(B, 0));
  const MatrixXd eu = m.predict(x_t, ts, ys, std::vector<char>(B, 1));
  return w * ec + (1.0 - w) * eu;
}

SampleResult sample_ddpm(const Denoiser& m, const NoiseSchedule& s, double y, double w, int n, std::uint64_t seed,
                         const Box* box) {
  require(n >= 0, ErrorCode::kInvalidArgument, "sample count must be non-negative");
  const int dim = m.topology().dim;
  SampleResult res;
  res.samples.resize(dim, n);
  if (n == 0) return res;
  require(m.normalizer.center.size() == dim, ErrorCode::kInvalidArgument, "model has no normalizer");
  if (box)
    require(box->lower.size() == dim && box->upper.size() == dim, ErrorCode::kInvalidArgument,
            "sampling box has the wrong dimension");

  std::vector<CounterRng> rngs;
  rngs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rngs.emplace_back(derive_seed(seed, static_cast<std::uint64_t>(i)));
  MatrixXd x(dim, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < dim; ++i) x(i, j) = rngs[static_cast<std::size_t>(j)].normal();

  for (int t = s.steps(); t >= 1; --t) {
    const MatrixXd e = guided_noise(m, x, t, y, w);
    const double a = s.alpha(t), ab = s.alpha_bar(t), b = s.beta(t);
    x = (x - (b / std::sqrt(1.0 - ab)) * e) / std::sqrt(a);
    if (t > 1) {
      const double sigma = std::sqrt(b);
      for (int j = 0; j < n; ++j)
        for (int i = 0; i < dim; ++i) x(i, j) += sigma * rngs[static_cast<std::size_t>(j)].normal();
    }
  }
  for (int j = 0; j < n; ++j) {
    VectorXd v = m.normalizer.denormalize(x.col(j));
    if (box) {
      bool out = false;
      for (int i = 0; i < dim; ++i) {
        if (v[i] < box->lower[i] || v[i] > box->upper[i]) out = true;
        v[i] = std::clamp(v[i], box->lower[i], box->upper[i]);
      }
      if (out) ++res.out_of_box;
    }
    res.samples.col(j) = v;
  }
  return res;
}

// -------------------------------------------------------------- checkpoint

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  const Denoiser& m = c.model;
  const auto& tp = m.topology();
  Json j;
  j["format"] = "amgs-denoiser";
  j["format_version"] = 1;
  j["code_version"] = kCodeVersion;
  j["topology"] = Json{{"dim", tp.dim},
                       {"width", tp.width},
                       {"n_hidden", tp.n_hidden},
                       {"time_embedding", tp.time_embedding},
                       {"cond_embedding", tp.cond_embedding}};
  j["schedule"] = Json{{"T", c.train.T}, {"beta_1", c.train.beta_1}, {"beta_T", c.train.beta_T}};
  j["train"] = to_json(c.train);
  j["dataset_fingerprint"] = c.dataset_fingerprint;
  j["normalizer"] = Json{{"center", std::vector<double>(m.normalizer.center.data(), m.normalizer.center.data() + tp.dim)},
                         {"half_span", std::vector<double>(m.normalizer.half_span.data(),
                                                           m.normalizer.half_span.data() + tp.dim)}};
  j["params"] = std::vector<double>(m.params().data(), m.params().data() + m.params().size());
  j["config"] = c.extra;
  write_text_atomic(path, j.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
  const Json j = read_json_file(path);
  try {
    require(j.value("format", "") == "amgs-denoiser", ErrorCode::kParse, path + ": not a denoiser checkpoint");
    Checkpoint c;
    apply_json(j.at("train"), c.train, "train");
    const Json& t = j.at("topology");
    const DenoiserTopology tp{t.at("dim").get<int>(), t.at("width").get<int>(), t.at("n_hidden").get<int>(),
                              t.at("time_embedding").get<int>(), t.at("cond_embedding").get<int>()};
    c.model = Denoiser(tp, 0);
    const auto p = j.at("params").get<std::vector<double>>();
    require(static_cast<Eigen::Index>(p.size()) == c.model.params().size(), ErrorCode::kHeaderMismatch,
            path + ": parameter count does not match the topology");
    c.model.params() = Eigen::Map<const VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    const auto center = j.at("normalizer").at("center").get<std::vector<double>>();
    const auto half = j.at("normalizer").at("half_span").get<std::vector<double>>();
    require(static_cast<int>(center.size()) == tp.dim && static_cast<int>(half.size()) == tp.dim,
            ErrorCode::kHeaderMismatch, path + ": normalizer dimension does not match the topology");
    c.model.normalizer.center = Eigen::Map<const VectorXd>(center.data(), tp.dim);
    c.model.normalizer.half_span = Eigen::Map<const VectorXd>(half.data(), tp.dim);
    c.dataset_fingerprint = j.value("dataset_fingerprint", "");
    c.extra = j.value("config", Json::object());
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
}

}  // namespace amgs

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lsdf/binary_io.hpp"
#include "lsdf/errors.hpp"
#include "lsdf/parallel.hpp"
#include "lsdf/placement.hpp"

namespace lsdf {

/// Uniform rotation: normalised 4-D Gaussian as a unit quaternion.
template <typename Rng>
Eigen::Matrix3d sample_rotation(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q;
  do {
    q.coeffs() << n(rng), n(rng), n(rng), n(rng);
  } while (q.coeffs().squaredNorm() < 1e-12);
  q.normalize();
  return q.toRotationMatrix();
}

/// Network input: the rotation matrix entries in row-major order.
inline Eigen::Matrix<float, 9, 1> rotation_features(const Eigen::Matrix3d& r) {
  Eigen::Matrix<float, 9, 1> x;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) x[3 * i + j] = static_cast<float>(r(i, j));
  return x;
}

/// f(R) ~ R^T P for a fixed canonical point set P:
///   y = W2^T relu(W1^T x + b1) + b2, x = vec(R) (9), hidden H, output 3 V_r.
/// Output entry 3 v + a is coordinate a of point v.
class TinyMlp {
 public:
  TinyMlp() = default;

  TinyMlp(int hidden, std::size_t points) { resize(hidden, points); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  template <typename Rng>
  static TinyMlp random(int hidden, std::size_t points, Rng& rng) {
    TinyMlp m(hidden, points);
    auto fill = [&](auto& mat, double fan_in) {
      std::uniform_real_distribution<float> u(static_cast<float>(-1.0 / std::sqrt(fan_in)),
                                              static_cast<float>(1.0 / std::sqrt(fan_in)));
      for (Eigen::Index i = 0; i < mat.size(); ++i) mat.data()[i] = u(rng);
    };
    fill(m.w1_, 9.0);
    fill(m.b1_, 9.0);
    fill(m.w2_, static_cast<double>(hidden));
    fill(m.b2_, static_cast<double>(hidden));
    return m;
  }

  int hidden() const { return static_cast<int>(w1_.rows()); }
  std::size_t points() const { return static_cast<std::size_t>(b2_.size() / 3); }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size());
  }

  // Storage: w1 is H x 9 and w2 is 3V x H, column-major, which is the
  // row-major layout of the declared 9 x H and H x 3V matrices.
  Eigen::MatrixXf& w1() { return w1_; }
  Eigen::VectorXf& b1() { return b1_; }
  Eigen::MatrixXf& w2() { return w2_; }
  Eigen::VectorXf& b2() { return b2_; }
  const Eigen::MatrixXf& w1() const { return w1_; }
  const Eigen::VectorXf& b1() const { return b1_; }
  const Eigen::MatrixXf& w2() const { return w2_; }
  const Eigen::VectorXf& b2() const { return b2_; }

  bool all_finite() const {
    return w1_.allFinite() && b1_.allFinite() && w2_.allFinite() && b2_.allFinite();
  }

  /// x: 9 x N features -> 3V x N outputs.
  Eigen::MatrixXf forward(const Eigen::Ref<const Eigen::MatrixXf>& x) const {
    Eigen::MatrixXf h = w1_ * x;
    h.colwise() += b1_;
    h = h.cwiseMax(0.0f);
    Eigen::MatrixXf y = w2_ * h;
    y.colwise() += b2_;
    return y;
  }

  bool operator==(const TinyMlp& o) const {
    return w1_ == o.w1_ && b1_ == o.b1_ && w2_ == o.w2_ && b2_ == o.b2_;
  }

 private:
  void resize(int hidden, std::size_t points) {
    if (hidden <= 0 || points == 0) throw ValidationError("TinyMlp needs positive hidden width and point count");
    const auto out = static_cast<Eigen::Index>(3 * points);
    w1_.setZero(hidden, 9);
    b1_.setZero(hidden);
    w2_.setZero(out, hidden);
    b2_.setZero(out);
  }

  Eigen::MatrixXf w1_, w2_;
  Eigen::VectorXf b1_, b2_;
};

// ---------------------------------------------------------------------------
// TMLP model file: "TMLP", u32 version, u32 H, u32 V_r, then W1 (9 x H),
// b1 (H), W2 (H x 3V_r), b2 (3V_r), row-major f32 little-endian.

inline constexpr std::uint32_t kTmlpVersion = 1;

inline void write_tiny_mlp(std::ostream& os, const TinyMlp& m) {
  io::write_magic(os, "TMLP");
  io::write_u32(os, kTmlpVersion);
  io::write_u32(os, static_cast<std::uint32_t>(m.hidden()));
  io::write_u32(os, static_cast<std::uint32_t>(m.points()));
  io::write_f32s(os, {m.w1().data(), static_cast<std::size_t>(m.w1().size())});
  io::write_f32s(os, {m.b1().data(), static_cast<std::size_t>(m.b1().size())});
  io::write_f32s(os, {m.w2().data(), static_cast<std::size_t>(m.w2().size())});
  io::write_f32s(os, {m.b2().data(), static_cast<std::size_t>(m.b2().size())});
  if (!os) throw Error("failed writing TMLP stream");
}

inline TinyMlp read_tiny_mlp(std::istream& is) {
  io::read_magic(is, "TMLP");
  const std::uint32_t version = io::read_u32(is, "TMLP version");
  if (version != kTmlpVersion) throw FormatError("unsupported TMLP version " + std::to_string(version));
  const std::uint32_t hidden = io::read_u32(is, "TMLP hidden");
  const std::uint32_t points = io::read_u32(is, "TMLP V_r");
  if (hidden == 0 || hidden > 4096 || points == 0 || points > (1u << 24)) throw FormatError("TMLP header out of range");
  TinyMlp m(static_cast<int>(hidden), points);
  io::read_f32s(is, {m.w1().data(), static_cast<std::size_t>(m.w1().size())}, "TMLP W1");
  io::read_f32s(is, {m.b1().data(), static_cast<std::size_t>(m.b1().size())}, "TMLP b1");
  io::read_f32s(is, {m.w2().data(), static_cast<std::size_t>(m.w2().size())}, "TMLP W2");
  io::read_f32s(is, {m.b2().data(), static_cast<std::size_t>(m.b2().size())}, "TMLP b2");
  if (!m.all_finite()) throw FormatError("TMLP weights are not finite");
  return m;
}

inline void save_tiny_mlp(const std::filesystem::path& path, const TinyMlp& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_tiny_mlp(os, m);
}

inline TinyMlp load_tiny_mlp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_tiny_mlp(is);
}

// ---------------------------------------------------------------------------
// Inference

/// Neural transform provider: G = f(R) - R^T (shift / e_r). Batched calls run
/// one pair of matrix products over all rotations.
class NeuralGridTransform {
 public:
  NeuralGridTransform(const TinyMlp& model, const CanonicalWindow& window) : model_(&model), window_(&window) {
    if (model.points() != window.active_count()) {
      throw DimensionMismatch("model predicts " + std::to_string(model.points()) + " points, window has " +
                              std::to_string(window.active_count()));
    }
  }

  const CanonicalWindow& window() const { return *window_; }

  GridTransform operator()(const Eigen::Matrix3d& rotation, const Vec3& shift) const {
    Eigen::Matrix3d r[1] = {rotation};
    Vec3 s[1] = {shift};
    return std::move(batch(r, s).front());
  }

  std::vector<GridTransform> batch(std::span<const Eigen::Matrix3d> rotations, std::span<const Vec3> shifts) const {
    std::vector<GridTransform> out(rotations.size());
    const std::size_t chunk = 256;
    for (std::size_t b0 = 0; b0 < rotations.size(); b0 += chunk) {
      const std::size_t n = std::min(chunk, rotations.size() - b0);
      Eigen::MatrixXf x(9, static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) x.col(static_cast<Eigen::Index>(i)) = rotation_features(rotations[b0 + i]);
      const Eigen::MatrixXf y = model_->forward(x);
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Matrix3d& r = rotations[b0 + i];
        const Eigen::Vector3f offset = -(r.transpose() * (shifts[b0 + i] / window_->extent)).cast<float>();
        GridTransform g = Eigen::Map<const Eigen::Matrix3Xf>(y.col(static_cast<Eigen::Index>(i)).data(), 3,
                                                             static_cast<Eigen::Index>(model_->points()));
        g.colwise() += offset;
        out[b0 + i] = std::move(g);
      }
    }
    return out;
  }

 private:
  const TinyMlp* model_;
  const CanonicalWindow* window_;
};

/// G for one rotation and shift from a trained model.
inline GridTransform infer_grid_transform(const TinyMlp& model, const Eigen::Matrix3d& rotation, const Vec3& shift,
                                          const CanonicalWindow& window) {
  return NeuralGridTransform(model, window)(rotation, shift);
}

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  int hidden = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t steps = 200000;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t validation_size = 10000;
  std::size_t eval_every = 1000;
  // Early stop once the validation max error is at or below this.
  double stop_max_error = 0.0013;
  // Accept the model only if its validation max error is at or below this.
  double target_max_error = 0.0013;
  bool require_convergence = true;
};

struct TrainingCheckpoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  double validation_mae = 0.0;
  double validation_max = 0.0;
};

struct TrainingResult {
  TinyMlp model;
  std::vector<TrainingCheckpoint> history;
  double validation_max = 0.0;
  double validation_mae = 0.0;
  bool converged = false;
};

struct ApproximationError {
  double max_abs_error = 0.0;
  double mean_abs_error = 0.0;
};

namespace detail {

// Exact targets R^T P for a block of rotations, laid out like the network
// output (3V x N).
inline void exact_targets(std::span<const Eigen::Matrix3d> rotations, const Eigen::Matrix3Xf& points,
                          Eigen::MatrixXf& out) {
  const auto v = points.cols();
  out.resize(3 * v, static_cast<Eigen::Index>(rotations.size()));
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    Eigen::Map<Eigen::Matrix3Xf> col(out.col(static_cast<Eigen::Index>(i)).data(), 3, v);
    col.noalias() = rotations[i].transpose().cast<float>() * points;
  }
}

inline Eigen::MatrixXf features(std::span<const Eigen::Matrix3d> rotations) {
  Eigen::MatrixXf x(9, static_cast<Eigen::Index>(rotations.size()));
  for (std::size_t i = 0; i < rotations.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = rotation_features(rotations[i]);
  return x;
}

// Error of f(R) against R^T P over the given rotations.
template <typename Predict>
ApproximationError measure_error(std::span<const Eigen::Matrix3d> rotations, const Eigen::Matrix3Xf& points,
                                 const Predict& predict) {
  ApproximationError e;
  double sum = 0.0;
  std::size_t count = 0;
  const std::size_t chunk = 256;
  Eigen::MatrixXf target;
  for (std::size_t b0 = 0; b0 < rotations.size(); b0 += chunk) {
    const auto block = rotations.subspan(b0, std::min(chunk, rotations.size() - b0));
    exact_targets(block, points, target);
    const Eigen::MatrixXf y = predict(block);
    const Eigen::ArrayXXf diff = (y - target).array().abs();
    e.max_abs_error = std::max(e.max_abs_error, static_cast<double>(diff.maxCoeff()));
    sum += diff.cast<double>().sum();
    count += static_cast<std::size_t>(diff.size());
  }
  e.mean_abs_error = count ? sum / static_cast<double>(count) : 0.0;
  return e;
}

struct AdamState {
  Eigen::ArrayXf m, v;
  void init(Eigen::Index n) {
    m.setZero(n);
    v.setZero(n);
  }
  template <typename Param, typename Grad>
  void step(Param& p, const Grad& g, float lr_t, float beta1, float beta2, float eps) {
    float* pd = p.data();
    const float* gd = g.data();
    float* md = m.data();
    float* vd = v.data();
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      md[i] = beta1 * md[i] + (1.0f - beta1) * gd[i];
      vd[i] = beta2 * vd[i] + (1.0f - beta2) * gd[i] * gd[i];
      pd[i] -= lr_t * md[i] / (std::sqrt(vd[i]) + eps);
    }
  }
};

}  // namespace detail

/// Max and mean componentwise error of `model` against the exact transform
/// over `n_samples` uniform rotations.
template <typename Rng>
ApproximationError evaluate_approximator(const TinyMlp& model, const CanonicalWindow& window, std::size_t n_samples,
                                         Rng& rng) {
  if (model.points() != window.active_count()) throw DimensionMismatch("model does not match window");
  std::vector<Eigen::Matrix3d> rotations(n_samples);
  for (auto& r : rotations) r = sample_rotation(rng);
  return detail::measure_error(rotations, window.points, [&](std::span<const Eigen::Matrix3d> block) {
    return model.forward(detail::features(block));
  });
}

/// Same measurement for the exact provider; zero by construction, kept as the
/// reference path of the comparison.
template <typename Rng>
ApproximationError evaluate_exact_provider(const CanonicalWindow& window, std::size_t n_samples, Rng& rng) {
  std::vector<Eigen::Matrix3d> rotations(n_samples);
  for (auto& r : rotations) r = sample_rotation(rng);
  const ExactGridTransform exact(window);
  return detail::measure_error(rotations, window.points, [&](std::span<const Eigen::Matrix3d> block) {
    Eigen::MatrixXf y(3 * window.points.cols(), static_cast<Eigen::Index>(block.size()));
    for (std::size_t i = 0; i < block.size(); ++i) {
      const GridTransform g = exact(block[i], Vec3::Zero());
      y.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXf>(g.data(), g.size());
    }
    return y;
  });
}

/// Supervised L1 regression of f(R) onto R^T P with Adam, fresh uniform
/// rotations every step. Deterministic for a fixed seed.
inline TrainingResult train_approximator(const Eigen::Matrix3Xf& points, const TrainingConfig& cfg,
                                         const std::function<void(const TrainingCheckpoint&)>& on_checkpoint = {}) {
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (cfg.batch_size == 0 || cfg.eval_every == 0 || cfg.validation_size == 0) throw ValidationError("batch size, eval interval and validation size must be positive");
  std::mt19937_64 rng(cfg.seed);
  const std::size_t npts = static_cast<std::size_t>(points.cols());

  TrainingResult result;
  TinyMlp& model = result.model;
  model = TinyMlp::random(cfg.hidden, npts, rng);

  std::mt19937_64 val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Eigen::Matrix3d> validation(cfg.validation_size);
  for (auto& r : validation) r = sample_rotation(val_rng);
  auto validate = [&] {
    return detail::measure_error(validation, points, [&](std::span<const Eigen::Matrix3d> block) {
      return model.forward(detail::features(block));
    });
  };

  detail::AdamState s_w1, s_b1, s_w2, s_b2;
  s_w1.init(model.w1().size());
  s_b1.init(model.b1().size());
  s_w2.init(model.w2().size());
  s_b2.init(model.b2().size());

  const float scale = 1.0f / static_cast<float>(3 * npts * cfg.batch_size);
  const auto b1 = static_cast<float>(cfg.beta1), b2 = static_cast<float>(cfg.beta2);
  std::vector<Eigen::Matrix3d> rotations(cfg.batch_size);
  Eigen::MatrixXf target, z1, a1, y, dz1;
  Eigen::MatrixXf g_w1, g_w2;
  Eigen::VectorXf g_b1, g_b2;
  double b1_pow = 1.0, b2_pow = 1.0;
  double loss = 0.0;

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    for (auto& r : rotations) r = sample_rotation(rng);
    const Eigen::MatrixXf x = detail::features(rotations);
    detail::exact_targets(rotations, points, target);

    // forward
    z1.noalias() = model.w1() * x;
    z1.colwise() += model.b1();
    a1 = z1.cwiseMax(0.0f);
    y.noalias() = model.w2() * a1;
    y.colwise() += model.b2();

    // d(mean |y - t|)/dy, reusing y's storage
    {
      float* yd = y.data();
      const float* td = target.data();
      double abs_sum = 0.0;
      for (Eigen::Index i = 0; i < y.size(); ++i) {
        const float d = yd[i] - td[i];
        abs_sum += std::fabs(d);
        yd[i] = d > 0.0f ? scale : (d < 0.0f ? -scale : 0.0f);
      }
      loss = abs_sum * scale;
    }

    // backward
    g_w2.noalias() = y * a1.transpose();
    g_b2 = y.rowwise().sum();
    dz1.noalias() = model.w2().transpose() * y;
    dz1 = (z1.array() > 0.0f).select(dz1, 0.0f);
    g_w1.noalias() = dz1 * x.transpose();
    g_b1 = dz1.rowwise().sum();

    // Adam with bias correction folded into the step size
    b1_pow *= cfg.beta1;
    b2_pow *= cfg.beta2;
    const auto lr_t = static_cast<float>(cfg.learning_rate * std::sqrt(1.0 - b2_pow) / (1.0 - b1_pow));
    const auto eps_t = static_cast<float>(cfg.epsilon * std::sqrt(1.0 - b2_pow));
    s_w1.step(model.w1(), g_w1, lr_t, b1, b2, eps_t);
    s_b1.step(model.b1(), g_b1, lr_t, b1, b2, eps_t);
    s_w2.step(model.w2(), g_w2, lr_t, b1, b2, eps_t);
    s_b2.step(model.b2(), g_b2, lr_t, b1, b2, eps_t);

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const ApproximationError e = validate();
      TrainingCheckpoint cp{step, loss, e.mean_abs_error, e.max_abs_error};
      result.history.push_back(cp);
      if (on_checkpoint) on_checkpoint(cp);
      result.validation_max = e.max_abs_error;
      result.validation_mae = e.mean_abs_error;
      if (e.max_abs_error <= cfg.stop_max_error) break;
    }
  }

  if (!model.all_finite()) throw NotConverged("training diverged to non-finite weights", result.validation_max);
  result.converged = result.validation_max <= cfg.target_max_error;
  if (cfg.require_convergence && !result.converged) {
    throw NotConverged("validation max error " + std::to_string(result.validation_max) + " above target " +
                           std::to_string(cfg.target_max_error),
                       result.validation_max);
  }
  return result;
}

}  // namespace lsdf

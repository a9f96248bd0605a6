#pragma once

// Adafactor without momentum: factored second moments for matrices, a full
// second moment for vectors, relative step size min(1e-2, 1/sqrt(t)), decay
// 1 - t^-0.8, and update clipping at RMS 1.0. Accumulators are kept in
// double regardless of the parameter scalar so eps1 = 1e-30 survives.
// An Adam fallback with inverse-square-root warmup hides behind the same
// walk-all-tensors interface.

#include <Eigen/Core>
#include <map>
#include <string>

#include "beatgrid/model.hpp"

namespace beatgrid::nn {

struct AdafactorConfig {
  double eps1 = 1e-30;          // added to squared gradients
  double eps2 = 1e-3;           // floor for the parameter RMS in the step size
  double clip_threshold = 1.0;  // update RMS clip
  double rel_step_cap = 1e-2;   // rho_t = min(cap, 1/sqrt(t))
  double decay_exponent = 0.8;  // beta2_t = 1 - t^-exponent
};

struct AdafactorTensorState {
  Eigen::VectorXd row;   // factored: per-row accumulator
  Eigen::VectorXd col;   // factored: per-column accumulator
  Eigen::ArrayXXd full;  // vectors/scalars: elementwise accumulator
  bool factored = false;
  bool initialized = false;
};

// One optimizer step for a single tensor. `step` is 1-based.
template <typename T>
void adafactor_update(Mat<T>& param, const Mat<T>& grad, AdafactorTensorState& st, long step,
                      const AdafactorConfig& cfg = {}) {
  require(param.rows() == grad.rows() && param.cols() == grad.cols(), Errc::shape_mismatch,
          "gradient shape does not match parameter");
  require(step >= 1, Errc::invalid_config, "step must be >= 1");
  const Eigen::Index n = param.rows(), m = param.cols();
  const bool factored = n > 1 && m > 1;

  if (!st.initialized) {
    st.factored = factored;
    if (factored) {
      st.row = Eigen::VectorXd::Zero(n);
      st.col = Eigen::VectorXd::Zero(m);
    } else {
      st.full = Eigen::ArrayXXd::Zero(n, m);
    }
    st.initialized = true;
  }
  require(st.factored == factored, Errc::shape_mismatch, "optimizer state shape changed");

  const double beta2 = 1.0 - std::pow(static_cast<double>(step), -cfg.decay_exponent);
  const double rho = std::min(cfg.rel_step_cap, 1.0 / std::sqrt(static_cast<double>(step)));
  const double param_rms =
      std::sqrt(param.template cast<double>().array().square().mean());
  const double alpha = std::max(cfg.eps2, param_rms) * rho;

  Eigen::ArrayXXd g2 = grad.template cast<double>().array().square() + cfg.eps1;
  Eigen::ArrayXXd update(n, m);
  if (factored) {
    st.row = beta2 * st.row + (1.0 - beta2) * g2.rowwise().sum().matrix();
    st.col = beta2 * st.col + (1.0 - beta2) * g2.colwise().sum().matrix().transpose();
    // V = (R C^T) / sum(R); dividing by sum(R) keeps the row/col split scale-free
    const double denom = st.row.sum();
    update = grad.template cast<double>().array() /
             (((st.row * st.col.transpose()).array() / denom).sqrt());
  } else {
    st.full = beta2 * st.full + (1.0 - beta2) * g2;
    update = grad.template cast<double>().array() / st.full.sqrt();
  }
  const double update_rms = std::sqrt(update.square().mean());
  if (update_rms > cfg.clip_threshold) update /= update_rms / cfg.clip_threshold;
  param.array() -= (alpha * update).template cast<T>();
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamTensorState {
  Eigen::ArrayXXd m, v;
  bool initialized = false;
};

template <typename T>
void adam_update(Mat<T>& param, const Mat<T>& grad, AdamTensorState& st, long step, double lr,
                 const AdamConfig& cfg = {}) {
  require(param.rows() == grad.rows() && param.cols() == grad.cols(), Errc::shape_mismatch,
          "gradient shape does not match parameter");
  if (!st.initialized) {
    st.m = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
    st.v = Eigen::ArrayXXd::Zero(param.rows(), param.cols());
    st.initialized = true;
  }
  const Eigen::ArrayXXd g = grad.template cast<double>().array();
  st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g;
  st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * g.square();
  const double mc = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double vc = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const Eigen::ArrayXXd update = (st.m / mc) / ((st.v / vc).sqrt() + cfg.eps);
  param.array() -= (lr * update).template cast<T>();
}

// Inverse-square-root schedule with linear warmup, scaled by 1/sqrt(d_model).
inline double adam_warmup_lr(long step, int d_model, long warmup_steps = 4000, double scale = 1.0) {
  const double s = static_cast<double>(std::max<long>(step, 1));
  const double w = static_cast<double>(warmup_steps);
  return scale / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

enum class OptimizerKind { adafactor, adam_fallback };

inline OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "adafactor") return OptimizerKind::adafactor;
  if (name == "adam-fallback") return OptimizerKind::adam_fallback;
  raise(Errc::invalid_config, "unknown optimizer '" + std::string(name) + "'");
}

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::adafactor ? "adafactor" : "adam-fallback";
}

// Whole-model optimizer; walks parameter and gradient trees in lockstep.
template <typename T>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, int d_model, long warmup_steps = 4000, double adam_scale = 1.0)
      : kind_(kind), d_model_(d_model), warmup_(warmup_steps), adam_scale_(adam_scale) {}

  // Applies one update; returns the learning rate used (for the metrics log;
  // Adafactor reports its relative step size).
  double step(ModelParamsT<T>& params, const ModelParamsT<T>& grads) {
    ++step_;
    double lr;
    if (kind_ == OptimizerKind::adafactor) {
      lr = std::min(1e-2, 1.0 / std::sqrt(static_cast<double>(step_)));
      walk(params, grads, [&](const std::string& name, Mat<T>& p, const Mat<T>& g) {
        adafactor_update(p, g, ada_state_[name], step_);
      });
    } else {
      lr = adam_warmup_lr(step_, d_model_, warmup_, adam_scale_);
      walk(params, grads, [&](const std::string& name, Mat<T>& p, const Mat<T>& g) {
        adam_update(p, g, adam_state_[name], step_, lr);
      });
    }
    return lr;
  }

  long current_step() const { return step_; }

 private:
  template <typename F>
  void walk(ModelParamsT<T>& params, const ModelParamsT<T>& grads, F&& f) {
    std::vector<std::pair<std::string, Mat<T>*>> ps;
    visit_tensors(params, [&](const std::string& n, Mat<T>& m) { ps.emplace_back(n, &m); });
    std::vector<const Mat<T>*> gs;
    visit_tensors(grads, [&](const std::string&, const Mat<T>& m) { gs.push_back(&m); });
    require(ps.size() == gs.size(), Errc::shape_mismatch, "param/grad tree mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) f(ps[i].first, *ps[i].second, *gs[i]);
  }

  OptimizerKind kind_;
  int d_model_;
  long warmup_;
  double adam_scale_;
  long step_ = 0;
  std::map<std::string, AdafactorTensorState> ada_state_;
  std::map<std::string, AdamTensorState> adam_state_;
};

}  // namespace beatgrid::nn

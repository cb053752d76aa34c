#pragma once

#include <memory>

#include "hodl/linalg.hpp"
#include "hodl/params.hpp"

namespace hodl {

struct LossVjp {
  Vector wrt_u;
  Vector wrt_w;
};

/// Upper-level loss l(u, w). Besides value and first derivatives it exposes
/// the VJP of (u, w) -> grad_u l(u, w), which the reverse pass needs because
/// the aggregated inner iteration consumes grad_u inside the unrolled loop.
class LossFunction {
 public:
  virtual ~LossFunction() = default;
  virtual const char* kind() const = 0;
  virtual double value(const Vector& u, const ParamVector& w) const = 0;
  virtual Vector grad_u(const Vector& u, const ParamVector& w) const = 0;
  virtual Vector grad_w(const Vector& u, const ParamVector& w) const = 0;
  virtual LossVjp grad_u_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const = 0;
  /// Smoothness constant L of grad_u (0 when the loss ignores u).
  virtual double smoothness() const = 0;
};

/// scale/2 * |u_block - target|^2 on a contiguous block of the state.
/// scale = 1/samples turns the stacked objective into a mean over samples.
class MseLoss final : public LossFunction {
 public:
  MseLoss(Vector target, double scale, Eigen::Index state_dim, Eigen::Index block_offset = 0);

  const char* kind() const override { return "mse"; }
  double value(const Vector& u, const ParamVector& w) const override;
  Vector grad_u(const Vector& u, const ParamVector& w) const override;
  Vector grad_w(const Vector& u, const ParamVector& w) const override;
  LossVjp grad_u_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double smoothness() const override { return scale_; }

  const Vector& target() const { return target_; }

 private:
  Vector target_;
  double scale_;
  Eigen::Index state_dim_, offset_;
};

/// Mean squared validation error (1/n) |X u - y|^2.
class ValidationMseLoss final : public LossFunction {
 public:
  ValidationMseLoss(Matrix x, Vector y);

  const char* kind() const override { return "validation_mse"; }
  double value(const Vector& u, const ParamVector& w) const override;
  Vector grad_u(const Vector& u, const ParamVector& w) const override;
  Vector grad_w(const Vector& u, const ParamVector& w) const override;
  LossVjp grad_u_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double smoothness() const override { return smoothness_; }

 private:
  Matrix x_;
  Vector y_;
  double smoothness_;
};

/// 1/2 |w|^2, a loss that ignores the state entirely. Test support: its
/// hypergradient must be w itself regardless of the inner loop.
class OmegaRegLoss final : public LossFunction {
 public:
  const char* kind() const override { return "omega_reg"; }
  double value(const Vector& u, const ParamVector& w) const override;
  Vector grad_u(const Vector& u, const ParamVector& w) const override;
  Vector grad_w(const Vector& u, const ParamVector& w) const override;
  LossVjp grad_u_vjp(const Vector& u, const ParamVector& w, const Vector& cot) const override;
  double smoothness() const override { return 0.0; }
};

}  // namespace hodl

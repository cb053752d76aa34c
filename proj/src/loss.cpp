#include "hodl/loss.hpp"

#include <stdexcept>

namespace hodl {

MseLoss::MseLoss(Vector target, double scale, Eigen::Index state_dim, Eigen::Index block_offset)
    : target_(std::move(target)), scale_(scale), state_dim_(state_dim), offset_(block_offset) {
  if (!(scale_ > 0.0)) throw std::invalid_argument("MseLoss: scale must be positive");
  if (offset_ < 0 || offset_ + target_.size() > state_dim_)
    throw std::invalid_argument("MseLoss: block outside the state");
}

double MseLoss::value(const Vector& u, const ParamVector&) const {
  if (u.size() != state_dim_) throw std::invalid_argument("MseLoss: dimension mismatch");
  return 0.5 * scale_ * (u.segment(offset_, target_.size()) - target_).squaredNorm();
}

Vector MseLoss::grad_u(const Vector& u, const ParamVector&) const {
  if (u.size() != state_dim_) throw std::invalid_argument("MseLoss: dimension mismatch");
  Vector g = Vector::Zero(state_dim_);
  g.segment(offset_, target_.size()) = scale_ * (u.segment(offset_, target_.size()) - target_);
  return g;
}

Vector MseLoss::grad_w(const Vector&, const ParamVector& w) const { return Vector::Zero(w.size()); }

LossVjp MseLoss::grad_u_vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  Vector wrt_u = Vector::Zero(state_dim_);
  wrt_u.segment(offset_, target_.size()) = scale_ * cot.segment(offset_, target_.size());
  return {std::move(wrt_u), Vector::Zero(w.size())};
}

ValidationMseLoss::ValidationMseLoss(Matrix x, Vector y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.rows() != y_.size()) throw std::invalid_argument("ValidationMseLoss: X/y mismatch");
  const double lmax = power_iteration_norm(x_);
  smoothness_ = 2.0 * lmax * lmax / static_cast<double>(x_.rows());
}

double ValidationMseLoss::value(const Vector& u, const ParamVector&) const {
  return (x_ * u - y_).squaredNorm() / static_cast<double>(x_.rows());
}

Vector ValidationMseLoss::grad_u(const Vector& u, const ParamVector&) const {
  return (2.0 / static_cast<double>(x_.rows())) * (x_.transpose() * (x_ * u - y_));
}

Vector ValidationMseLoss::grad_w(const Vector&, const ParamVector& w) const {
  return Vector::Zero(w.size());
}

LossVjp ValidationMseLoss::grad_u_vjp(const Vector&, const ParamVector& w, const Vector& cot) const {
  Vector wrt_u = (2.0 / static_cast<double>(x_.rows())) * (x_.transpose() * (x_ * cot));
  return {std::move(wrt_u), Vector::Zero(w.size())};
}

double OmegaRegLoss::value(const Vector&, const ParamVector& w) const {
  return 0.5 * w.flat.squaredNorm();
}

Vector OmegaRegLoss::grad_u(const Vector& u, const ParamVector&) const {
  return Vector::Zero(u.size());
}

Vector OmegaRegLoss::grad_w(const Vector&, const ParamVector& w) const { return w.flat; }

LossVjp OmegaRegLoss::grad_u_vjp(const Vector& u, const ParamVector& w, const Vector&) const {
  return {Vector::Zero(u.size()), Vector::Zero(w.size())};
}

}  // namespace hodl

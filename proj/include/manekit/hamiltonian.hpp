#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <utility>
#include <vector>

#include <manekit/finite_diff.hpp>
#include <manekit/types.hpp>

namespace manekit {

enum class ModelKind {
  FiberwiseQuadratic,
  Natural,
  MomentumLinear,
  Custom,
  Composite,
  Pullback,
};

enum class DerivativeMode { Analytic, CentralFD };

// Scalar function of the base point with optional analytic derivatives.
template <typename S>
struct ScalarField {
  std::function<S(const VecX<S>&)> value;
  std::function<VecX<S>(const VecX<S>&)> grad;
  std::function<MatX<S>(const VecX<S>&)> hess;

  bool has_derivatives() const { return static_cast<bool>(grad) && static_cast<bool>(hess); }

  static ScalarField zero() {
    ScalarField f;
    f.value = [](const VecX<S>&) { return S(0); };
    f.grad = [](const VecX<S>& q) { return VecX<S>::Zero(q.size()).eval(); };
    f.hess = [](const VecX<S>& q) {
      return MatX<S>::Zero(q.size(), q.size()).eval();
    };
    return f;
  }
};

// Symmetric-matrix-valued function of the base point.  d1(q, k) is the
// derivative along q_k, d2(q, k, l) the second derivative.
template <typename S>
struct SymMatrixField {
  std::function<MatX<S>(const VecX<S>&)> value;
  std::function<MatX<S>(const VecX<S>&, int)> d1;
  std::function<MatX<S>(const VecX<S>&, int, int)> d2;

  bool has_derivatives() const { return static_cast<bool>(d1) && static_cast<bool>(d2); }
};

// Finite trigonometric sum a0 + sum_m a_m sin(w_m . q + c_m), closed under
// differentiation, so analytic derivative callbacks come for free.
template <typename S>
struct TrigScalarField {
  struct Term {
    S amplitude;
    VecX<S> freq;
    S phase;
  };
  S constant = S(0);
  std::vector<Term> terms;

  ScalarField<S> to_field() const {
    TrigScalarField copy = *this;
    ScalarField<S> f;
    f.value = [copy](const VecX<S>& q) {
      S v = copy.constant;
      for (const auto& t : copy.terms) v += t.amplitude * std::sin(t.freq.dot(q) + t.phase);
      return v;
    };
    f.grad = [copy](const VecX<S>& q) {
      VecX<S> g = VecX<S>::Zero(q.size());
      for (const auto& t : copy.terms)
        g += t.amplitude * std::cos(t.freq.dot(q) + t.phase) * t.freq;
      return g;
    };
    f.hess = [copy](const VecX<S>& q) {
      MatX<S> h = MatX<S>::Zero(q.size(), q.size());
      for (const auto& t : copy.terms)
        h -= t.amplitude * std::sin(t.freq.dot(q) + t.phase) * (t.freq * t.freq.transpose());
      return h;
    };
    return f;
  }
};

template <typename S>
struct TrigSymMatrixField {
  struct Term {
    MatX<S> amplitude;
    VecX<S> freq;
    S phase;
  };
  MatX<S> constant;
  std::vector<Term> terms;

  SymMatrixField<S> to_field() const {
    TrigSymMatrixField copy = *this;
    SymMatrixField<S> f;
    f.value = [copy](const VecX<S>& q) {
      MatX<S> m = copy.constant;
      for (const auto& t : copy.terms) m += std::sin(t.freq.dot(q) + t.phase) * t.amplitude;
      return m;
    };
    f.d1 = [copy](const VecX<S>& q, int k) {
      MatX<S> m = MatX<S>::Zero(copy.constant.rows(), copy.constant.cols());
      for (const auto& t : copy.terms)
        m += t.freq[k] * std::cos(t.freq.dot(q) + t.phase) * t.amplitude;
      return m;
    };
    f.d2 = [copy](const VecX<S>& q, int k, int l) {
      MatX<S> m = MatX<S>::Zero(copy.constant.rows(), copy.constant.cols());
      for (const auto& t : copy.terms)
        m -= t.freq[k] * t.freq[l] * std::sin(t.freq.dot(q) + t.phase) * t.amplitude;
      return m;
    };
    return f;
  }
};

namespace detail {

template <typename S>
struct HamImpl {
  Domain<S> domain;
  ModelKind kind = ModelKind::Custom;

  virtual ~HamImpl() = default;
  virtual S value(const VecX<S>& x) const = 0;
  virtual bool analytic_gradient() const { return false; }
  virtual bool analytic_hessian() const { return false; }
  virtual VecX<S> gradient(const VecX<S>&) const {
    throw EvaluationError("model has no analytic gradient");
  }
  virtual MatX<S> hessian(const VecX<S>&) const {
    throw EvaluationError("model has no analytic Hessian");
  }
};

}  // namespace detail

// Hamiltonian on T*M with value/gradient/Hessian access.  The derivative mode
// selects analytic callbacks (when the model has them) or central differences
// with steps 1e-5 (gradients) and 1e-4 (Hessians), scaled per coordinate.
// Immutable; copies share the underlying model.
template <typename S>
class Hamiltonian {
 public:
  Hamiltonian() = default;
  Hamiltonian(std::shared_ptr<const detail::HamImpl<S>> impl, DerivativeMode mode)
      : impl_(std::move(impl)), mode_(mode) {}

  bool valid() const { return static_cast<bool>(impl_); }
  const Domain<S>& domain() const { return impl_->domain; }
  int base_dim() const { return impl_->domain.base_dim; }
  int phase_dim() const { return 2 * impl_->domain.base_dim; }
  ModelKind kind() const { return impl_->kind; }
  DerivativeMode derivative_mode() const { return mode_; }

  Hamiltonian with_mode(DerivativeMode mode) const {
    Hamiltonian h = *this;
    h.mode_ = mode;
    return h;
  }

  Hamiltonian with_fd_steps(S h_grad, S h_hess) const {
    Hamiltonian h = *this;
    h.h_grad_ = h_grad;
    h.h_hess_ = h_hess;
    return h;
  }

  S value(const VecX<S>& x) const {
    check_point(x);
    const S v = impl_->value(x);
    if (!std::isfinite(v)) throw EvaluationError("Hamiltonian value is not finite");
    return v;
  }

  VecX<S> gradient(const VecX<S>& x) const {
    check_point(x);
    if (mode_ == DerivativeMode::Analytic && impl_->analytic_gradient())
      return impl_->gradient(x);
    return fd_gradient([this](const VecX<S>& y) { return impl_->value(y); }, x, h_grad_);
  }

  MatX<S> hessian(const VecX<S>& x) const {
    check_point(x);
    if (mode_ == DerivativeMode::Analytic && impl_->analytic_hessian()) {
      MatX<S> h = impl_->hessian(x);
      const S scale = S(1) + h.cwiseAbs().maxCoeff();
      const S asym = (h - h.transpose().eval()).cwiseAbs().maxCoeff();
      if (asym > S(1e-10) * scale) {
        std::ostringstream os;
        os << "Hamiltonian Hessian asymmetry " << asym << " exceeds 1e-10 relative";
        throw EvaluationError(os.str());
      }
      return ((h + h.transpose().eval()) / 2).eval();
    }
    if (mode_ == DerivativeMode::Analytic && impl_->analytic_gradient()) {
      return fd_hessian_from_gradient(
          [this](const VecX<S>& y) { return impl_->gradient(y); }, x, h_hess_);
    }
    return fd_hessian_value([this](const VecX<S>& y) { return impl_->value(y); }, x,
                            h_hess_);
  }

  const detail::HamImpl<S>& impl() const { return *impl_; }
  std::shared_ptr<const detail::HamImpl<S>> impl_ptr() const { return impl_; }

 private:
  void check_point(const VecX<S>& x) const {
    if (!impl_) throw EvaluationError("empty Hamiltonian");
    if (x.size() != 2 * impl_->domain.base_dim)
      throw DimensionError("Hamiltonian: point size does not match phase dim");
    if (!all_finite(x)) throw EvaluationError("Hamiltonian: non-finite input point");
  }

  std::shared_ptr<const detail::HamImpl<S>> impl_;
  DerivativeMode mode_ = DerivativeMode::Analytic;
  S h_grad_ = S(1e-5);
  S h_hess_ = S(1e-4);
};

// Configuration-space perturbation u(q) with derivative access and an optional
// axis-aligned support box used to skip evaluations far from the bump.
template <typename S>
class PotentialField {
 public:
  PotentialField() = default;
  PotentialField(ScalarField<S> f, Domain<S> dom)
      : f_(std::move(f)), domain_(std::move(dom)) {}

  const Domain<S>& domain() const { return domain_; }

  S value(const VecX<S>& q) const {
    check_point(q);
    if (!f_.value) return S(0);
    return f_.value(q);
  }

  VecX<S> gradient(const VecX<S>& q) const {
    check_point(q);
    if (!f_.value) return VecX<S>::Zero(q.size());
    if (f_.grad) return f_.grad(q);
    return fd_gradient(f_.value, q, S(1e-5));
  }

  MatX<S> hessian(const VecX<S>& q) const {
    check_point(q);
    if (!f_.value) return MatX<S>::Zero(q.size(), q.size());
    if (f_.hess) {
      const MatX<S> h = f_.hess(q);
      return ((h + h.transpose().eval()) / 2).eval();
    }
    if (f_.grad) return fd_hessian_from_gradient(f_.grad, q, S(1e-4));
    return fd_hessian_value(f_.value, q, S(1e-4));
  }

  bool has_support_box() const { return has_box_; }
  const VecX<S>& support_lo() const { return lo_; }
  const VecX<S>& support_hi() const { return hi_; }

  PotentialField with_support_box(VecX<S> lo, VecX<S> hi) const {
    if (lo.size() != domain_.base_dim || hi.size() != domain_.base_dim)
      throw DimensionError("support box size does not match base_dim");
    PotentialField u = *this;
    u.has_box_ = true;
    u.lo_ = std::move(lo);
    u.hi_ = std::move(hi);
    return u;
  }

  // Conservative: false only when q is guaranteed outside the support.
  bool possibly_supported_at(const VecX<S>& q) const {
    if (!has_box_) return true;
    for (int i = 0; i < domain_.base_dim; ++i) {
      S qi = q[i];
      if (domain_.periodic[i]) {
        const S t = domain_.periods[i];
        if (hi_[i] - lo_[i] >= t) continue;
        qi = lo_[i] + qi - t * std::floor((qi - lo_[i]) / t);
      }
      if (qi < lo_[i] || qi > hi_[i]) return false;
    }
    return true;
  }

 private:
  void check_point(const VecX<S>& q) const {
    if (domain_.base_dim > 0 && q.size() != domain_.base_dim)
      throw DimensionError("PotentialField: point size does not match base_dim");
  }

  ScalarField<S> f_;
  Domain<S> domain_;
  bool has_box_ = false;
  VecX<S> lo_, hi_;
};

namespace detail {

template <typename S>
struct FiberwiseQuadraticImpl : HamImpl<S> {
  SymMatrixField<S> g;
  ScalarField<S> v;
  bool has_analytic = false;

  S value(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    const VecX<S> q = x.head(n);
    const VecX<S> p = x.tail(n);
    S out = S(0.5) * p.dot(g.value(q) * p);
    if (v.value) out += v.value(q);
    return out;
  }

  bool analytic_gradient() const override { return has_analytic; }
  bool analytic_hessian() const override { return has_analytic; }

  VecX<S> gradient(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    const VecX<S> q = x.head(n);
    const VecX<S> p = x.tail(n);
    VecX<S> out(2 * n);
    for (int k = 0; k < n; ++k) out[k] = S(0.5) * p.dot(g.d1(q, k) * p);
    if (v.grad) out.head(n) += v.grad(q);
    out.tail(n) = g.value(q) * p;
    return out;
  }

  MatX<S> hessian(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    const VecX<S> q = x.head(n);
    const VecX<S> p = x.tail(n);
    MatX<S> out = MatX<S>::Zero(2 * n, 2 * n);
    for (int k = 0; k < n; ++k) {
      for (int l = k; l < n; ++l) {
        out(k, l) = S(0.5) * p.dot(g.d2(q, k, l) * p);
        out(l, k) = out(k, l);
      }
      const VecX<S> col = g.d1(q, k) * p;
      out.block(k, n, 1, n) = col.transpose();
      out.block(n, k, n, 1) = col;
    }
    if (v.hess) out.topLeftCorner(n, n) += v.hess(q);
    out.bottomRightCorner(n, n) = g.value(q);
    return out;
  }
};

template <typename S>
struct MomentumLinearImpl : HamImpl<S> {
  S value(const VecX<S>& x) const override {
    return x[this->domain.base_dim];
  }
  bool analytic_gradient() const override { return true; }
  bool analytic_hessian() const override { return true; }
  VecX<S> gradient(const VecX<S>& x) const override {
    VecX<S> g = VecX<S>::Zero(x.size());
    g[this->domain.base_dim] = S(1);
    return g;
  }
  MatX<S> hessian(const VecX<S>& x) const override {
    return MatX<S>::Zero(x.size(), x.size());
  }
};

template <typename S>
struct CustomImpl : HamImpl<S> {
  std::function<S(const VecX<S>&)> f;
  std::function<VecX<S>(const VecX<S>&)> df;
  std::function<MatX<S>(const VecX<S>&)> d2f;

  S value(const VecX<S>& x) const override { return f(x); }
  bool analytic_gradient() const override { return static_cast<bool>(df); }
  bool analytic_hessian() const override { return static_cast<bool>(d2f); }
  VecX<S> gradient(const VecX<S>& x) const override { return df(x); }
  MatX<S> hessian(const VecX<S>& x) const override { return d2f(x); }
};

template <typename S>
struct CompositeImpl : HamImpl<S> {
  Hamiltonian<S> base;
  PotentialField<S> u;

  S value(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    return base.value(x) + u.value(x.head(n));
  }
  bool analytic_gradient() const override { return true; }
  bool analytic_hessian() const override { return true; }
  VecX<S> gradient(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    VecX<S> g = base.gradient(x);
    g.head(n) += u.gradient(x.head(n));
    return g;
  }
  MatX<S> hessian(const VecX<S>& x) const override {
    const int n = this->domain.base_dim;
    MatX<S> h = base.hessian(x);
    h.topLeftCorner(n, n) += u.hessian(x.head(n));
    return h;
  }
};

}  // namespace detail

template <typename S>
Hamiltonian<S> make_fiberwise_quadratic(SymMatrixField<S> g, ScalarField<S> v,
                                        Domain<S> dom,
                                        ModelKind kind = ModelKind::FiberwiseQuadratic) {
  if (!g.value) throw DimensionError("make_fiberwise_quadratic: missing matrix field");
  auto impl = std::make_shared<detail::FiberwiseQuadraticImpl<S>>();
  impl->domain = std::move(dom);
  impl->kind = kind;
  impl->has_analytic = g.has_derivatives() && (!v.value || v.has_derivatives());
  impl->g = std::move(g);
  impl->v = std::move(v);
  return Hamiltonian<S>(std::move(impl), DerivativeMode::Analytic);
}

template <typename S>
Hamiltonian<S> make_fiberwise_quadratic(const TrigSymMatrixField<S>& g,
                                        const TrigScalarField<S>& v, Domain<S> dom) {
  return make_fiberwise_quadratic(g.to_field(), v.to_field(), std::move(dom));
}

// Kinetic-plus-potential model; the supplied matrix is the fiber Hessian of
// the kinetic term and must be positive definite.
template <typename S>
Hamiltonian<S> make_natural(SymMatrixField<S> cometric, ScalarField<S> v,
                            Domain<S> dom) {
  if (!cometric.value) throw DimensionError("make_natural: missing cometric field");
  const MatX<S> probe = cometric.value(VecX<S>::Zero(dom.base_dim));
  Eigen::SelfAdjointEigenSolver<MatX<S>> es(probe);
  if (es.eigenvalues().minCoeff() <= S(0))
    throw HypothesisViolation("make_natural: cometric is not positive definite at q = 0");
  return make_fiberwise_quadratic(std::move(cometric), std::move(v), std::move(dom),
                                  ModelKind::Natural);
}

template <typename S, typename Derived>
Hamiltonian<S> make_natural(const Eigen::MatrixBase<Derived>& cometric,
                            const TrigScalarField<S>& v, Domain<S> dom) {
  TrigSymMatrixField<S> g;
  g.constant = cometric;
  return make_natural(g.to_field(), v.to_field(), std::move(dom));
}

template <typename S, typename Derived>
Hamiltonian<S> make_natural(const Eigen::MatrixBase<Derived>& cometric, ScalarField<S> v,
                            Domain<S> dom) {
  TrigSymMatrixField<S> g;
  g.constant = cometric;
  return make_natural(g.to_field(), std::move(v), std::move(dom));
}

// H(q, p) = p_1.
template <typename S>
Hamiltonian<S> make_momentum_linear(Domain<S> dom) {
  auto impl = std::make_shared<detail::MomentumLinearImpl<S>>();
  impl->domain = std::move(dom);
  impl->kind = ModelKind::MomentumLinear;
  return Hamiltonian<S>(std::move(impl), DerivativeMode::Analytic);
}

template <typename S, typename F>
Hamiltonian<S> make_custom(F&& value, Domain<S> dom) {
  auto impl = std::make_shared<detail::CustomImpl<S>>();
  impl->domain = std::move(dom);
  impl->kind = ModelKind::Custom;
  impl->f = std::forward<F>(value);
  return Hamiltonian<S>(std::move(impl), DerivativeMode::CentralFD);
}

template <typename S, typename F, typename DF, typename D2F>
Hamiltonian<S> make_custom(F&& value, DF&& grad, D2F&& hess, Domain<S> dom) {
  auto impl = std::make_shared<detail::CustomImpl<S>>();
  impl->domain = std::move(dom);
  impl->kind = ModelKind::Custom;
  impl->f = std::forward<F>(value);
  impl->df = std::forward<DF>(grad);
  impl->d2f = std::forward<D2F>(hess);
  return Hamiltonian<S>(std::move(impl), DerivativeMode::Analytic);
}

// (H, u) -> H + u with exact derivative bookkeeping; fiber derivatives of the
// sum coincide with those of H.
template <typename S>
Hamiltonian<S> add_potential(const Hamiltonian<S>& h, const PotentialField<S>& u) {
  if (u.domain().base_dim != 0 && u.domain().base_dim != h.base_dim())
    throw DimensionError("add_potential: base dimensions differ");
  auto impl = std::make_shared<detail::CompositeImpl<S>>();
  impl->domain = h.domain();
  impl->kind = ModelKind::Composite;
  impl->base = h;
  impl->u = u;
  return Hamiltonian<S>(std::move(impl), DerivativeMode::Analytic);
}

template <typename S>
PotentialField<S> make_trig_potential(const TrigScalarField<S>& f, Domain<S> dom) {
  return PotentialField<S>(f.to_field(), std::move(dom));
}

// Copy of a fiberwise-quadratic model with its base potential removed.
template <typename S>
Hamiltonian<S> strip_base_potential(const Hamiltonian<S>& h) {
  const auto* fq =
      dynamic_cast<const detail::FiberwiseQuadraticImpl<S>*>(&h.impl());
  if (fq == nullptr)
    throw HypothesisViolation("strip_base_potential: model is not fiberwise quadratic");
  return make_fiberwise_quadratic(fq->g, ScalarField<S>{}, h.domain(), h.kind());
}

}  // namespace manekit

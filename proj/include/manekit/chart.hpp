#pragma once

// Fibered coordinate changes along an orbit segment.  A chart is an ordered
// composition of elementary pieces, each acting on the base alone or shifting
// the momentum by an exact differential, so the lifted phase map is
// symplectic by construction.

#include <functional>
#include <memory>
#include <utility>
#include <variant>
#include <vector>

#include <manekit/errors.hpp>
#include <manekit/finite_diff.hpp>
#include <manekit/hamiltonian.hpp>
#include <manekit/types.hpp>

namespace manekit {

// Base diffeomorphism lifted to (q, p) -> (phi(q), dphi(q)^{-T} p).
// dphi_dir(q, v) is the directional derivative of dphi along v; when empty a
// central difference of dphi stands in.  phi_inv may stay empty for pieces
// that are never inverted.
template <typename S>
struct HomogeneousPiece {
  std::function<VecX<S>(const VecX<S>&)> phi;
  std::function<MatX<S>(const VecX<S>&)> dphi;
  std::function<MatX<S>(const VecX<S>&, const VecX<S>&)> dphi_dir;
  std::function<VecX<S>(const VecX<S>&)> phi_inv;
};

// Momentum shift (q, p) -> (q, p + dg(q)) generated by the function g.
template <typename S>
struct VerticalPiece {
  std::function<S(const VecX<S>&)> g;
  std::function<VecX<S>(const VecX<S>&)> dg;
  std::function<MatX<S>(const VecX<S>&)> d2g;
};

template <typename S>
using ChartPiece = std::variant<HomogeneousPiece<S>, VerticalPiece<S>>;

namespace detail {

template <typename S>
VecX<S> piece_apply(const HomogeneousPiece<S>& f, const VecX<S>& x) {
  const int n = static_cast<int>(x.size()) / 2;
  const VecX<S> q = x.head(n);
  const MatX<S> a = f.dphi(q);
  VecX<S> out(2 * n);
  out.head(n) = f.phi(q);
  out.tail(n) = a.transpose().partialPivLu().solve(x.tail(n));
  return out;
}

template <typename S>
VecX<S> piece_apply(const VerticalPiece<S>& f, const VecX<S>& x) {
  const int n = static_cast<int>(x.size()) / 2;
  VecX<S> out = x;
  out.tail(n) += f.dg(x.head(n));
  return out;
}

template <typename S>
VecX<S> piece_inverse(const HomogeneousPiece<S>& f, const VecX<S>& x) {
  if (!f.phi_inv)
    throw EvaluationError("FiberedChart: homogeneous piece has no inverse callback");
  const int n = static_cast<int>(x.size()) / 2;
  const VecX<S> q = f.phi_inv(x.head(n));
  VecX<S> out(2 * n);
  out.head(n) = q;
  out.tail(n) = f.dphi(q).transpose() * x.tail(n);
  return out;
}

template <typename S>
VecX<S> piece_inverse(const VerticalPiece<S>& f, const VecX<S>& x) {
  const int n = static_cast<int>(x.size()) / 2;
  VecX<S> out = x;
  out.tail(n) -= f.dg(x.head(n));
  return out;
}

// Phase Jacobian [[dphi, 0], [L, dphi^{-T}]].  Column j of L differentiates
// dphi^{-T} p along q_j; it is linear in p and vanishes on the zero section.
template <typename S>
MatX<S> piece_jacobian(const HomogeneousPiece<S>& f, const VecX<S>& x) {
  const int n = static_cast<int>(x.size()) / 2;
  const VecX<S> q = x.head(n);
  const MatX<S> a = f.dphi(q);
  const auto lu = a.transpose().partialPivLu();
  const VecX<S> p_new = lu.solve(x.tail(n));
  MatX<S> jac = MatX<S>::Zero(2 * n, 2 * n);
  jac.topLeftCorner(n, n) = a;
  jac.bottomRightCorner(n, n) = lu.solve(MatX<S>::Identity(n, n));
  const S h = S(3e-5) * (S(1) + q.cwiseAbs().maxCoeff());
  for (int j = 0; j < n; ++j) {
    MatX<S> tj;
    if (f.dphi_dir) {
      VecX<S> ej = VecX<S>::Zero(n);
      ej[j] = S(1);
      tj = f.dphi_dir(q, ej);
    } else {
      VecX<S> qp = q, qm = q;
      qp[j] += h;
      qm[j] -= h;
      tj = ((f.dphi(qp) - f.dphi(qm)) / (2 * h)).eval();
    }
    jac.block(n, j, n, 1) = -lu.solve(VecX<S>(tj.transpose() * p_new));
  }
  return jac;
}

template <typename S>
MatX<S> piece_jacobian(const VerticalPiece<S>& f, const VecX<S>& x) {
  const int n = static_cast<int>(x.size()) / 2;
  MatX<S> jac = MatX<S>::Identity(2 * n, 2 * n);
  jac.bottomLeftCorner(n, n) = f.d2g(x.head(n));
  return jac;
}

}  // namespace detail

// Ordered composition of chart pieces over a tube of the given radius around
// the axis segment.  Pieces are stored in construction order: the last pushed
// piece acts first under apply(), so apply realizes pieces[0] ∘ pieces[1] ∘ …
// (model coordinates in, ambient coordinates out).
template <typename S>
class FiberedChart {
 public:
  FiberedChart() = default;
  FiberedChart(int base_dim, S radius) : base_dim_(base_dim), radius_(radius) {
    if (base_dim < 1) throw DimensionError("FiberedChart: base_dim must be positive");
    if (!(radius > S(0))) throw DimensionError("FiberedChart: radius must be positive");
  }

  int base_dim() const { return base_dim_; }
  S radius() const { return radius_; }
  const std::vector<ChartPiece<S>>& pieces() const { return pieces_; }

  void push(HomogeneousPiece<S> piece) {
    if (!piece.phi || !piece.dphi)
      throw DimensionError("FiberedChart: homogeneous piece needs phi and dphi");
    pieces_.emplace_back(std::move(piece));
  }

  void push(VerticalPiece<S> piece) {
    if (!piece.g || !piece.dg || !piece.d2g)
      throw DimensionError("FiberedChart: vertical piece needs g, dg and d2g");
    pieces_.emplace_back(std::move(piece));
  }

  VecX<S> apply(const VecX<S>& x) const {
    check_point(x);
    VecX<S> y = x;
    for (auto it = pieces_.rbegin(); it != pieces_.rend(); ++it)
      y = std::visit([&y](const auto& f) { return detail::piece_apply(f, y); }, *it);
    return y;
  }

  VecX<S> apply_inverse(const VecX<S>& x) const {
    check_point(x);
    VecX<S> y = x;
    for (const auto& piece : pieces_)
      y = std::visit([&y](const auto& f) { return detail::piece_inverse(f, y); },
                     piece);
    return y;
  }

  // Phase Jacobian of apply at x, accumulated piece by piece along the same
  // evaluation sweep.
  MatX<S> jacobian(const VecX<S>& x) const {
    check_point(x);
    MatX<S> jac = MatX<S>::Identity(2 * base_dim_, 2 * base_dim_);
    VecX<S> y = x;
    for (auto it = pieces_.rbegin(); it != pieces_.rend(); ++it) {
      jac = std::visit([&y](const auto& f) { return detail::piece_jacobian(f, y); },
                       *it) *
            jac;
      y = std::visit([&y](const auto& f) { return detail::piece_apply(f, y); }, *it);
    }
    return jac;
  }

 private:
  void check_point(const VecX<S>& x) const {
    if (base_dim_ < 1) throw DimensionError("FiberedChart: chart is uninitialized");
    if (x.size() != 2 * base_dim_)
      throw DimensionError("FiberedChart: point size does not match phase dim");
  }

  int base_dim_ = 0;
  S radius_ = S(0);
  std::vector<ChartPiece<S>> pieces_;
};

// Composition H ∘ chart as a model with analytic value and gradient (chain
// rule through the chart Jacobian) and a finite-difference Hessian over that
// gradient with the given relative step.
template <typename S>
Hamiltonian<S> pull_back(const Hamiltonian<S>& h, const FiberedChart<S>& chart,
                         S fd_step = S(1e-4)) {
  if (h.base_dim() != chart.base_dim())
    throw DimensionError("pull_back: chart and model base dims differ");
  if (!(fd_step > S(0))) throw DimensionError("pull_back: fd_step must be positive");
  auto ch = std::make_shared<const FiberedChart<S>>(chart);
  auto value = [h, ch](const VecX<S>& x) { return h.value(ch->apply(x)); };
  auto grad = [h, ch](const VecX<S>& x) {
    return VecX<S>(ch->jacobian(x).transpose() * h.gradient(ch->apply(x)));
  };
  auto hess = [grad, fd_step](const VecX<S>& x) {
    return fd_hessian_from_gradient(grad, x, fd_step);
  };
  auto impl = std::make_shared<detail::CustomImpl<S>>();
  impl->domain = Domain<S>::euclidean(chart.base_dim());
  impl->kind = ModelKind::Pullback;
  impl->f = std::move(value);
  impl->df = std::move(grad);
  impl->d2f = std::move(hess);
  return Hamiltonian<S>(std::move(impl), DerivativeMode::Analytic);
}

}  // namespace manekit

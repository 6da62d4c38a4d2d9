#include "pdeinv/fem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pdeinv {

Mesh::Mesh(int n_elements) : n_elements_(n_elements), h_(0.0) {
  if (n_elements < 1) {
    throw std::invalid_argument("mesh needs at least one element, got " + std::to_string(n_elements));
  }
  h_ = 1.0 / n_elements;
  nodes_.resize(n_elements + 1);
  for (int i = 0; i <= n_elements; ++i) nodes_[i] = static_cast<double>(i) / n_elements;
  nodes_[n_elements] = 1.0;
}

int Mesh::element_of(double x) const {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw std::out_of_range("location " + std::to_string(x) + " outside [0, 1]");
  }
  int e = static_cast<int>(std::floor(x * n_elements_));
  return std::clamp(e, 0, n_elements_ - 1);
}

Vector SymTridiagonal::apply(const Vector& x) const {
  const Eigen::Index n = size();
  Vector y = diagonal.cwiseProduct(x);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    y[i] += off_diagonal[i] * x[i + 1];
    y[i + 1] += off_diagonal[i] * x[i];
  }
  return y;
}

Matrix SymTridiagonal::to_dense() const {
  const Eigen::Index n = size();
  Matrix a = Matrix::Zero(n, n);
  a.diagonal() = diagonal;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    a(i, i + 1) = off_diagonal[i];
    a(i + 1, i) = off_diagonal[i];
  }
  return a;
}

SymTridiagonal& SymTridiagonal::operator*=(double s) {
  diagonal *= s;
  off_diagonal *= s;
  return *this;
}

SymTridiagonal& SymTridiagonal::operator+=(const SymTridiagonal& other) {
  diagonal += other.diagonal;
  off_diagonal += other.off_diagonal;
  return *this;
}

TridiagonalFactor::TridiagonalFactor(const SymTridiagonal& a) {
  const Eigen::Index n = a.size();
  pivots_.resize(n);
  multipliers_.resize(n > 0 ? n - 1 : 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double d = a.diagonal[i];
    if (i > 0) d -= multipliers_[i - 1] * a.off_diagonal[i - 1];
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << "tridiagonal matrix is not positive definite: pivot " << i << " = " << d;
      throw IndefiniteMatrixError(msg.str());
    }
    pivots_[i] = d;
    if (i + 1 < n) multipliers_[i] = a.off_diagonal[i] / d;
  }
}

TridiagonalFactor TridiagonalFactor::grounded(const Vector& ground, const Vector& conductance) {
  const Eigen::Index n = ground.size();
  if (conductance.size() != (n > 0 ? n - 1 : 0)) throw std::invalid_argument("conductance vector has wrong length");
  if ((ground.array() < 0.0).any() || (conductance.array() < 0.0).any())
    throw std::invalid_argument("grounded factor needs nonnegative ground and conductance");
  TridiagonalFactor f;
  f.pivots_.resize(n);
  f.multipliers_.resize(conductance.size());
  double leak = 0.0;  // Schur-complement grounding carried from eliminated nodes
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = ground[i] + leak;
    const double c = i + 1 < n ? conductance[i] : 0.0;
    const double d = g + c;
    if (!(d > 0.0) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << "grounded tridiagonal matrix is singular at pivot " << i;
      throw IndefiniteMatrixError(msg.str());
    }
    f.pivots_[i] = d;
    if (i + 1 < n) {
      f.multipliers_[i] = -c / d;
      leak = c * (g / d);
    }
  }
  return f;
}

Vector TridiagonalFactor::solve(const Vector& b) const {
  const Eigen::Index n = size();
  if (b.size() != n) throw std::invalid_argument("right-hand side has wrong length");
  Vector x = b;
  for (Eigen::Index i = 1; i < n; ++i) x[i] -= multipliers_[i - 1] * x[i - 1];
  for (Eigen::Index i = 0; i < n; ++i) x[i] /= pivots_[i];
  for (Eigen::Index i = n - 2; i >= 0; --i) x[i] -= multipliers_[i] * x[i + 1];
  return x;
}

double TridiagonalFactor::log_det() const { return pivots_.array().log().sum(); }

Vector solve_spd(const SymTridiagonal& a, const Vector& b, SolveCounter* counter) {
  TridiagonalFactor factor(a);
  if (counter) counter->add();
  return factor.solve(b);
}

SymTridiagonal assemble_mass(const Mesh& mesh) {
  const int n = mesh.n_nodes();
  const double h = mesh.h();
  SymTridiagonal m(n);
  for (int e = 0; e < mesh.n_elements(); ++e) {
    m.diagonal[e] += h / 3.0;
    m.diagonal[e + 1] += h / 3.0;
    m.off_diagonal[e] += h / 6.0;
  }
  return m;
}

SymTridiagonal assemble_weighted_stiffness(const Mesh& mesh, const Vector& u) {
  return ExpWeightedElements(mesh, u).stiffness();
}

void check_nodal(const Mesh& mesh, const Vector& v, const char* name) {
  if (v.size() != mesh.n_nodes()) {
    std::ostringstream msg;
    msg << name << " has " << v.size() << " entries, mesh has " << mesh.n_nodes() << " nodes";
    throw std::invalid_argument(msg.str());
  }
  if (!v.allFinite()) throw std::domain_error(std::string(name) + " has non-finite entries");
}

Eigen::Vector3d ExpWeightedElements::decay_moments(double kappa) {
  Eigen::Vector3d g;
  if (kappa <= 1.0) {
    // int t^n e^{-kappa t} = sum_k (-kappa)^k / (k! (n + k + 1))
    g.setZero();
    double term = 1.0;  // (-kappa)^k / k!
    for (int k = 0; k < 30; ++k) {
      for (int n = 0; n < 3; ++n) g[n] += term / (n + k + 1);
      term *= -kappa / (k + 1);
    }
    return g;
  }
  const double e = std::exp(-kappa);
  g[0] = (1.0 - e) / kappa;
  g[1] = (g[0] - e) / kappa;
  g[2] = (2.0 * g[1] - e) / kappa;
  return g;
}

ExpWeightedElements::ExpWeightedElements(const Mesh& mesh, const Vector& u) : mesh_(&mesh), u_(u) {
  check_nodal(mesh, u, "u");
  if (u.maxCoeff() > kMaxLogConductivity) {
    throw std::domain_error("log-conductivity entry exceeds " + std::to_string(kMaxLogConductivity) +
                            "; e^u overflows");
  }
  elements_.resize(mesh.n_elements());
  const double h = mesh.h();
  for (int e = 0; e < mesh.n_elements(); ++e) {
    const double ua = u[e];
    const double ub = u[e + 1];
    const Eigen::Vector3d g = decay_moments(std::abs(ua - ub));
    // Moments measured from the endpoint with the larger u, then mapped to the hats.
    const double near1 = g[0] - g[1];               // int (1 - t) e^{-kt}
    const double near2 = g[0] - 2.0 * g[1] + g[2];  // int (1 - t)^2 e^{-kt}
    const double cross = g[1] - g[2];               // int t (1 - t) e^{-kt}
    Element& el = elements_[e];
    el.base = h * std::exp(std::max(ua, ub));
    el.m0 = g[0];
    el.mab = cross;
    if (ua >= ub) {
      el.ma = near1;
      el.mb = g[1];
      el.maa = near2;
      el.mbb = g[2];
    } else {
      el.ma = g[1];
      el.mb = near1;
      el.maa = g[2];
      el.mbb = near2;
    }
  }
}

SymTridiagonal ExpWeightedElements::stiffness() const {
  SymTridiagonal k(mesh_->n_nodes());
  const double inv_h2 = 1.0 / (mesh_->h() * mesh_->h());
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const double c = elements_[e].base * elements_[e].m0 * inv_h2;
    k.diagonal[e] += c;
    k.diagonal[e + 1] += c;
    k.off_diagonal[e] -= c;
  }
  return k;
}

SymTridiagonal ExpWeightedElements::directional(const Vector& v) const {
  SymTridiagonal k(mesh_->n_nodes());
  const double inv_h2 = 1.0 / (mesh_->h() * mesh_->h());
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const Element& el = elements_[e];
    const double c = el.base * (v[e] * el.ma + v[e + 1] * el.mb) * inv_h2;
    k.diagonal[e] += c;
    k.diagonal[e + 1] += c;
    k.off_diagonal[e] -= c;
  }
  return k;
}

SymTridiagonal ExpWeightedElements::directional2(const Vector& v, const Vector& z) const {
  SymTridiagonal k(mesh_->n_nodes());
  const double inv_h2 = 1.0 / (mesh_->h() * mesh_->h());
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const Element& el = elements_[e];
    const double va = v[e], vb = v[e + 1], za = z[e], zb = z[e + 1];
    const double c = el.base * (va * za * el.maa + (va * zb + vb * za) * el.mab + vb * zb * el.mbb) * inv_h2;
    k.diagonal[e] += c;
    k.diagonal[e + 1] += c;
    k.off_diagonal[e] -= c;
  }
  return k;
}

Vector ExpWeightedElements::nodal_form(const Vector& x, const Vector& y) const {
  Vector g = Vector::Zero(mesh_->n_nodes());
  const double inv_h2 = 1.0 / (mesh_->h() * mesh_->h());
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const Element& el = elements_[e];
    const double grad = (x[e + 1] - x[e]) * (y[e + 1] - y[e]) * inv_h2 * el.base;
    g[e] += grad * el.ma;
    g[e + 1] += grad * el.mb;
  }
  return g;
}

Vector ExpWeightedElements::nodal_form(const Vector& v, const Vector& x, const Vector& y) const {
  Vector g = Vector::Zero(mesh_->n_nodes());
  const double inv_h2 = 1.0 / (mesh_->h() * mesh_->h());
  for (std::size_t e = 0; e < elements_.size(); ++e) {
    const Element& el = elements_[e];
    const double grad = (x[e + 1] - x[e]) * (y[e + 1] - y[e]) * inv_h2 * el.base;
    g[e] += grad * (v[e] * el.maa + v[e + 1] * el.mab);
    g[e + 1] += grad * (v[e] * el.mab + v[e + 1] * el.mbb);
  }
  return g;
}

}  // namespace pdeinv

#include "kwass/fields.hpp"

#include "kwass/ensemble_io.hpp"
#include "kwass/errors.hpp"
#include "kwass/parallel.hpp"
#include "kwass/transport.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

namespace kwass {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
using Complex = std::complex<double>;
using ComplexGrid = std::vector<Complex>;

Index ipow(int n, int d) {
  Index r = 1;
  for (int a = 0; a < d; ++a) r *= n;
  return r;
}

// Signed wave number of FFT index idx.
int wave_number(Index idx, int n) { return idx <= n / 2 ? static_cast<int>(idx) : static_cast<int>(idx - n); }

// Wave number used for first derivatives: the Nyquist mode has no odd part.
int derivative_wave_number(Index idx, int n) {
  if (n % 2 == 0 && idx == n / 2) return 0;
  return wave_number(idx, n);
}

Index coordinate(Index flat, int axis, int n) {
  for (int a = 0; a < axis; ++a) flat /= n;
  return flat % n;
}

// In-place d-dimensional transform as successive 1-d transforms per axis.
// The inverse includes the 1/n^d normalization.
void fft_nd(ComplexGrid& data, int n, int d, bool inverse) {
  Eigen::FFT<double> fft;
  std::vector<Complex> line(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
  const auto total = static_cast<Index>(data.size());
  Index stride = 1;
  for (int axis = 0; axis < d; ++axis) {
    const Index block = stride * n;
    for (Index base = 0; base < total; base += block) {
      for (Index s = 0; s < stride; ++s) {
        for (int k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = data[static_cast<std::size_t>(base + s + k * stride)];
        if (inverse) {
          fft.inv(out, line);
        } else {
          fft.fwd(out, line);
        }
        for (int k = 0; k < n; ++k) data[static_cast<std::size_t>(base + s + k * stride)] = out[static_cast<std::size_t>(k)];
      }
    }
    stride = block;
  }
}

ComplexGrid to_complex(const Vector& v) {
  ComplexGrid c(static_cast<std::size_t>(v.size()));
  for (Index k = 0; k < v.size(); ++k) c[static_cast<std::size_t>(k)] = v[k];
  return c;
}

Vector real_part(const ComplexGrid& c) {
  Vector v(static_cast<Index>(c.size()));
  for (Index k = 0; k < v.size(); ++k) v[k] = c[static_cast<std::size_t>(k)].real();
  return v;
}

double squared_wave_norm(Index flat, int n, int d) {
  double k2 = 0.0;
  for (int a = 0; a < d; ++a) {
    const double k = wave_number(coordinate(flat, a, n), n);
    k2 += k * k;
  }
  return k2;
}

// Spectral derivative along `axis` of a transformed grid.
ComplexGrid differentiate(const ComplexGrid& hat, int axis, int n) {
  ComplexGrid out(hat.size());
  for (std::size_t k = 0; k < hat.size(); ++k) {
    const double kw = derivative_wave_number(coordinate(static_cast<Index>(k), axis, n), n);
    out[k] = Complex(0.0, kTwoPi * kw) * hat[k];
  }
  return out;
}

// Linear (cloud-in-cell) stencil of a point on a cell-centred grid.
struct Stencil {
  Index lo[3];
  Index hi[3];
  double frac[3];
};

Stencil stencil(const double* x, int n, int d) {
  Stencil st{};
  for (int a = 0; a < d; ++a) {
    const double s = x[a] * n - 0.5;
    const double fl = std::floor(s);
    double frac = s - fl;
    if (frac >= 1.0) frac = 0.0;
    auto i0 = static_cast<Index>(fl);
    i0 = ((i0 % n) + n) % n;
    st.lo[a] = i0;
    st.hi[a] = (i0 + 1) % n;
    st.frac[a] = frac;
  }
  return st;
}

template <typename F>
void for_each_corner(const Stencil& st, int n, int d, F&& f) {
  for (int corner = 0; corner < (1 << d); ++corner) {
    Index flat = 0;
    Index scale = 1;
    double weight = 1.0;
    for (int a = 0; a < d; ++a) {
      const bool up = (corner >> a) & 1;
      flat += (up ? st.hi[a] : st.lo[a]) * scale;
      weight *= up ? st.frac[a] : 1.0 - st.frac[a];
      scale *= n;
    }
    f(flat, weight);
  }
}

void require_dim(int d) {
  if (d < 1 || d > 3) throw std::invalid_argument("grids support dimensions 1 to 3");
}

}  // namespace

// ---------------------------------------------------------------------------

KernelSpec KernelSpec::zero() {
  KernelSpec k;
  k.name_ = "zero";
  k.zero_ = true;
  k.modes_ = std::vector<double>{};
  return k;
}

KernelSpec KernelSpec::single_mode(double B) {
  if (!(B >= 0.0) || !std::isfinite(B)) throw std::invalid_argument("single_mode: B must be >= 0");
  KernelSpec k = sum_of_modes({B});
  k.name_ = "single_mode";
  return k;
}

KernelSpec KernelSpec::sum_of_modes(std::vector<double> coefficients) {
  KernelSpec k;
  k.name_ = "sum_of_modes";
  for (double c : coefficients) {
    if (!std::isfinite(c)) throw std::invalid_argument("sum_of_modes: non-finite coefficient");
    k.B_ += std::abs(c);
  }
  k.zero_ = k.B_ == 0.0;
  k.modes_ = std::move(coefficients);
  return k;
}

KernelSpec KernelSpec::custom(Gradient gradient, double hessian_bound, Potential potential) {
  if (!gradient) throw std::invalid_argument("custom kernel needs a gradient");
  if (!(hessian_bound >= 0.0)) throw std::invalid_argument("custom kernel: hessian bound must be >= 0");
  KernelSpec k;
  k.name_ = "custom";
  k.B_ = hessian_bound;
  k.gradient_ = std::move(gradient);
  k.potential_ = std::move(potential);
  return k;
}

Vector KernelSpec::gradient(const Eigen::Ref<const Vector>& dx) const {
  const int d = static_cast<int>(dx.size());
  Vector out = Vector::Zero(d);
  if (modes_) {
    for (int a = 0; a < d; ++a) {
      for (std::size_t k = 0; k < modes_->size(); ++k) {
        const double w = kTwoPi * static_cast<double>(k + 1);
        out[a] += (*modes_)[k] * std::sin(w * dx[a]) / w;
      }
    }
  } else {
    gradient_(dx.data(), out.data(), d);
  }
  return out;
}

double KernelSpec::potential(const Eigen::Ref<const Vector>& dx) const {
  if (modes_) {
    double k_value = 0.0;
    for (Index a = 0; a < dx.size(); ++a) {
      for (std::size_t k = 0; k < modes_->size(); ++k) {
        const double w = kTwoPi * static_cast<double>(k + 1);
        k_value -= (*modes_)[k] * std::cos(w * dx[a]) / (w * w);
      }
    }
    return k_value;
  }
  if (!potential_) throw DomainError("kernel '" + name_ + "' has no potential");
  return potential_(dx.data(), static_cast<int>(dx.size()));
}

double empirical_gradient_lipschitz(const KernelSpec& kernel, int d, std::size_t pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double best = 0.0;
  Vector a(d), b(d);
  for (std::size_t k = 0; k < pairs; ++k) {
    for (int i = 0; i < d; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
    }
    const double dist = torus_distance(a, b);
    if (dist <= 0.0) continue;
    best = std::max(best, (kernel.gradient(a) - kernel.gradient(b)).norm() / dist);
  }
  return best;
}

Vector kernel_force(const PhaseEnsemble& ens, const KernelSpec& kernel, const Eigen::Ref<const Vector>& x) {
  const Index d = ens.dim();
  if (x.size() != d) throw std::invalid_argument("kernel_force: query dimension mismatch");
  Vector f = Vector::Zero(d);
  if (kernel.is_zero()) return f;
  for (Index j = 0; j < ens.size(); ++j) {
    f += ens.weights()[j] * kernel.gradient(torus_displacement(x, ens.positions().col(j)));
  }
  return f;
}

Matrix kernel_forces_pairwise(const PhaseEnsemble& ens, const KernelSpec& kernel) {
  const Index d = ens.dim();
  const Index n = ens.size();
  Matrix out = Matrix::Zero(d, n);
  if (kernel.is_zero()) return out;
  parallel::parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
    for (auto i = static_cast<Index>(lo); i < static_cast<Index>(hi); ++i) {
      out.col(i) = kernel_force(ens, kernel, ens.positions().col(i));
    }
  });
  return out;
}

Matrix kernel_forces(const PhaseEnsemble& ens, const KernelSpec& kernel) {
  if (!kernel.modes()) return kernel_forces_pairwise(ens, kernel);
  const Index d = ens.dim();
  const Index n = ens.size();
  Matrix out = Matrix::Zero(d, n);
  if (kernel.is_zero()) return out;
  const auto& modes = *kernel.modes();
  const Matrix& x = ens.positions();
  const Vector& w = ens.weights();
  // sum_j w_j sin(a (x_i - x_j)) = sin(a x_i) C - cos(a x_i) S.
  for (Index a = 0; a < d; ++a) {
    for (std::size_t k = 0; k < modes.size(); ++k) {
      if (modes[k] == 0.0) continue;
      const double freq = kTwoPi * static_cast<double>(k + 1);
      double c_sum = 0.0, s_sum = 0.0;
      for (Index j = 0; j < n; ++j) {
        c_sum += w[j] * std::cos(freq * x(a, j));
        s_sum += w[j] * std::sin(freq * x(a, j));
      }
      const double amp = modes[k] / freq;
      parallel::parallel_for(static_cast<std::size_t>(n), [&](std::size_t lo, std::size_t hi) {
        for (auto i = static_cast<Index>(lo); i < static_cast<Index>(hi); ++i) {
          out(a, i) += amp * (std::sin(freq * x(a, i)) * c_sum - std::cos(freq * x(a, i)) * s_sum);
        }
      });
    }
  }
  return out;
}

double kernel_pair_energy(const PhaseEnsemble& ens, const KernelSpec& kernel) {
  if (kernel.is_zero()) return 0.0;
  const Index n = ens.size();
  const Matrix& x = ens.positions();
  const Vector& w = ens.weights();
  if (kernel.modes()) {
    const auto& modes = *kernel.modes();
    double total = 0.0;
    for (Index a = 0; a < ens.dim(); ++a) {
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const double freq = kTwoPi * static_cast<double>(k + 1);
        double c_sum = 0.0, s_sum = 0.0;
        for (Index j = 0; j < n; ++j) {
          c_sum += w[j] * std::cos(freq * x(a, j));
          s_sum += w[j] * std::sin(freq * x(a, j));
        }
        total -= 0.5 * modes[k] / (freq * freq) * (c_sum * c_sum + s_sum * s_sum);
      }
    }
    return total;
  }
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) total += w[i] * w[j] * kernel.potential(torus_displacement(x.col(i), x.col(j)));
  }
  return 0.5 * total;
}

// ---------------------------------------------------------------------------

TorusGrid::TorusGrid(int n_, int d_) : TorusGrid(n_, d_, 0.0) {}

TorusGrid::TorusGrid(int n_, int d_, double fill) : n(n_), d(d_) {
  if (n_ < 1) throw std::invalid_argument("TorusGrid: n must be >= 1");
  require_dim(d_);
  values = Vector::Constant(ipow(n_, d_), fill);
}

Vector TorusGrid::node(Index flat) const {
  Vector x(d);
  for (int a = 0; a < d; ++a) x[a] = (static_cast<double>(coordinate(flat, a, n)) + 0.5) / n;
  return x;
}

TorusGrid TorusGrid::sample(int n, int d, const std::function<double(const Eigen::Ref<const Vector>&)>& f) {
  TorusGrid g(n, d);
  for (Index k = 0; k < g.size(); ++k) g.values[k] = f(g.node(k));
  return g;
}

TorusGrid deposit_density(const PhaseEnsemble& ens, int n) {
  if (n < 4) throw std::invalid_argument("deposit_density: n must be >= 4");
  const int d = static_cast<int>(ens.dim());
  TorusGrid grid(n, d);
  const double scale = static_cast<double>(ipow(n, d));
  // Sequential scatter keeps the summation order fixed.
  for (Index i = 0; i < ens.size(); ++i) {
    const double mass = ens.weights()[i] * scale;
    const Stencil st = stencil(ens.positions().col(i).data(), n, d);
    for_each_corner(st, n, d, [&](Index flat, double w) { grid.values[flat] += mass * w; });
  }
  return grid;
}

double interpolate(const TorusGrid& grid, const Eigen::Ref<const Vector>& x) {
  if (x.size() != grid.d) throw std::invalid_argument("interpolate: dimension mismatch");
  const Vector xw = wrap_position(Vector(x));
  double value = 0.0;
  for_each_corner(stencil(xw.data(), grid.n, grid.d), grid.n, grid.d,
                  [&](Index flat, double w) { value += w * grid.values[flat]; });
  return value;
}

FieldSolution poisson_solve(const TorusGrid& rho, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw std::invalid_argument("poisson_solve: eps must be > 0");
  if (!rho.values.allFinite()) throw NumericalError("poisson_solve: density contains NaN or Inf");
  const int n = rho.n;
  const int d = rho.d;
  FieldSolution sol;
  sol.eps = eps;
  const double mean = rho.mean();
  sol.mean_deviation = mean - 1.0;
  sol.neutrality_warning = std::abs(sol.mean_deviation) > 1e-6;

  ComplexGrid hat = to_complex((rho.values.array() - mean).matrix());
  fft_nd(hat, n, d, false);
  const double inv_eps2 = 1.0 / (eps * eps);
  for (std::size_t k = 0; k < hat.size(); ++k) {
    const double k2 = squared_wave_norm(static_cast<Index>(k), n, d);
    hat[k] = k2 == 0.0 ? Complex(0.0) : hat[k] * (inv_eps2 / (kTwoPi * kTwoPi * k2));
  }

  ComplexGrid u = hat;
  fft_nd(u, n, d, true);
  sol.potential = TorusGrid(n, d);
  sol.potential.values = real_part(u);

  for (int a = 0; a < d; ++a) {
    ComplexGrid e = differentiate(hat, a, n);
    for (auto& c : e) c = -c;
    fft_nd(e, n, d, true);
    TorusGrid g(n, d);
    g.values = real_part(e);
    sol.field.push_back(std::move(g));
  }
  return sol;
}

double spectral_residual(const FieldSolution& sol, const TorusGrid& rho) {
  const int n = rho.n;
  const int d = rho.d;
  if (sol.potential.n != n || sol.potential.d != d) throw std::invalid_argument("spectral_residual: grid mismatch");
  ComplexGrid hat = to_complex(sol.potential.values);
  fft_nd(hat, n, d, false);
  const double eps2 = sol.eps * sol.eps;
  for (std::size_t k = 0; k < hat.size(); ++k) {
    hat[k] *= eps2 * kTwoPi * kTwoPi * squared_wave_norm(static_cast<Index>(k), n, d);
  }
  fft_nd(hat, n, d, true);
  const Vector lhs = real_part(hat);
  return (lhs.array() - (rho.values.array() - rho.mean())).abs().maxCoeff();
}

Matrix gather_field(const FieldSolution& sol, const PhaseEnsemble& ens) {
  const int d = static_cast<int>(ens.dim());
  if (static_cast<int>(sol.field.size()) != d) throw std::invalid_argument("gather_field: dimension mismatch");
  const int n = sol.potential.n;
  Matrix out = Matrix::Zero(d, ens.size());
  parallel::parallel_for(static_cast<std::size_t>(ens.size()), [&](std::size_t lo, std::size_t hi) {
    for (auto i = static_cast<Index>(lo); i < static_cast<Index>(hi); ++i) {
      const Stencil st = stencil(ens.positions().col(i).data(), n, d);
      for_each_corner(st, n, d, [&](Index flat, double w) {
        for (int a = 0; a < d; ++a) out(a, i) += w * sol.field[static_cast<std::size_t>(a)].values[flat];
      });
    }
  });
  return out;
}

double field_energy(const FieldSolution& sol) {
  double sq = 0.0;
  for (const auto& g : sol.field) sq += g.values.squaredNorm();
  return 0.5 * sol.eps * sol.eps * sq / static_cast<double>(sol.potential.size());
}

double field_curl_max(const FieldSolution& sol) {
  const int d = sol.potential.d;
  const int n = sol.potential.n;
  if (d < 2) return 0.0;
  std::vector<ComplexGrid> hats;
  for (const auto& g : sol.field) {
    ComplexGrid h = to_complex(g.values);
    fft_nd(h, n, d, false);
    hats.push_back(std::move(h));
  }
  double worst = 0.0;
  for (int a = 0; a < d; ++a) {
    for (int b = a + 1; b < d; ++b) {
      ComplexGrid dab = differentiate(hats[static_cast<std::size_t>(b)], a, n);
      const ComplexGrid dba = differentiate(hats[static_cast<std::size_t>(a)], b, n);
      for (std::size_t k = 0; k < dab.size(); ++k) dab[k] -= dba[k];
      fft_nd(dab, n, d, true);
      worst = std::max(worst, real_part(dab).cwiseAbs().maxCoeff());
    }
  }
  return worst;
}

namespace {

PhaseEnsemble cell_ensemble(const TorusGrid& rho) {
  if ((rho.values.array() < 0.0).any()) throw DomainError("density grid has negative values");
  Matrix x(rho.d, rho.size());
  for (Index k = 0; k < rho.size(); ++k) x.col(k) = rho.node(k);
  return PhaseEnsemble(std::move(x), Matrix::Zero(rho.d, rho.size()), rho.values);
}

}  // namespace

LoeperCheck verify_loeper_L2(const TorusGrid& rho1, const TorusGrid& rho2, double eps) {
  if (rho1.n != rho2.n || rho1.d != rho2.d) throw std::invalid_argument("verify_loeper_L2: grid mismatch");
  const FieldSolution s1 = poisson_solve(rho1, eps);
  const FieldSolution s2 = poisson_solve(rho2, eps);
  double sq = 0.0;
  for (int a = 0; a < rho1.d; ++a) {
    sq += (s1.field[static_cast<std::size_t>(a)].values - s2.field[static_cast<std::size_t>(a)].values).squaredNorm();
  }
  LoeperCheck out;
  out.lhs = eps * eps * std::sqrt(sq / static_cast<double>(rho1.size()));
  if ((rho1.values - rho2.values).cwiseAbs().maxCoeff() > 0.0) {
    ExactOptions opts;
    opts.capacity = std::max<Index>(opts.capacity, rho1.size());
    out.w2 = solve_exact(cell_ensemble(rho1), cell_ensemble(rho2), CostSpec::plain(2.0), opts).value;
  }
  const double rho_max = std::max(rho1.values.cwiseAbs().maxCoeff(), rho2.values.cwiseAbs().maxCoeff());
  out.rhs = std::sqrt(rho_max) * out.w2;
  out.pass = out.lhs <= out.rhs * 1.05;
  return out;
}

LogLipschitzEstimate log_lipschitz_modulus(const FieldSolution& field, const TorusGrid& rho, std::size_t samples,
                                           std::uint64_t seed) {
  if (samples < 1000) throw std::invalid_argument("log_lipschitz_modulus: need at least 1000 samples");
  LogLipschitzEstimate out;
  const double dev = (rho.values.array() - 1.0).abs().maxCoeff();
  if (!(dev > 0.0)) {
    out.degenerate = true;
    return out;
  }
  const int d = rho.d;
  const double eps2 = field.eps * field.eps;
  const double log_scale = 4.0 * std::sqrt(static_cast<double>(d));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(d), y(d), ex(d), ey(d);
  for (std::size_t k = 0; k < samples; ++k) {
    // Separations log-uniform in [1e-4, 1/2] probe all scales of the modulus.
    const double sep = 1e-4 * std::pow(5e3, u(rng));
    for (int a = 0; a < d; ++a) x[a] = u(rng);
    Vector dir(d);
    for (int a = 0; a < d; ++a) dir[a] = u(rng) - 0.5;
    if (dir.norm() == 0.0) continue;
    y = wrap_position((x + sep * dir / dir.norm()).eval());
    const double dist = torus_distance(x, y);
    if (!(dist > 0.0) || dist >= 1.0) continue;
    for (int a = 0; a < d; ++a) {
      ex[a] = interpolate(field.field[static_cast<std::size_t>(a)], x);
      ey[a] = interpolate(field.field[static_cast<std::size_t>(a)], y);
    }
    const double ratio = eps2 * (ex - ey).norm() / (dist * std::log(log_scale / dist) * dev);
    out.constant = std::max(out.constant, ratio);
  }
  return out;
}

void write_grid_csv(std::ostream& out, const TorusGrid& grid) {
  for (int a = 0; a < grid.d; ++a) out << 'i' << a << ',';
  out << "value\n";
  for (Index k = 0; k < grid.size(); ++k) {
    for (int a = 0; a < grid.d; ++a) out << coordinate(k, a, grid.n) << ',';
    out << format_number(grid.values[k]) << '\n';
  }
}

}  // namespace kwass

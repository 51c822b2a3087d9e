#include "said/numerics/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "said/error.hpp"

namespace said::linalg {

namespace {
void require_matrix(const Tensor& a, const char* what) {
  if (a.rank() != 2) throw DimensionMismatch(std::string(what) + ": expected a matrix, got " + shape_string(a.shape()));
}
void require_square(const Tensor& a, const char* what) {
  require_matrix(a, what);
  if (a.rows() != a.cols()) throw DimensionMismatch(std::string(what) + ": matrix is not square");
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw DimensionMismatch("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor c({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t k = a.rows(), n = a.cols(), m = b.cols();
  if (b.rows() != k) throw DimensionMismatch("matmul_tn: " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()));
  Tensor c({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = pa + p * n;
    const double* bp = pb + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = pc + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) throw DimensionMismatch("matmul_nt: " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  Tensor c({n, m});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = pa + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = pb + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      pc[i * m + j] = s;
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

std::vector<double> matvec(const Tensor& a, std::span<const double> x) {
  require_matrix(a, "matvec");
  if (a.cols() != x.size()) throw DimensionMismatch("matvec: size mismatch");
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    y[i] = std::inner_product(r.begin(), r.end(), x.begin(), 0.0);
  }
  return y;
}

double trace(const Tensor& a) {
  require_square(a, "trace");
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return s;
}

double asymmetry(const Tensor& a) {
  require_square(a, "asymmetry");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j) - a(j, i)));
  return m;
}

Tensor cholesky(const Tensor& a) {
  require_square(a, "cholesky");
  const std::size_t n = a.rows();
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t p = 0; p < j; ++p) d -= l(j, p) * l(j, p);
    if (!(d > 1e-12)) {
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(d) + " at column " + std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t p = 0; p < j; ++p) s -= l(i, p) * l(j, p);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

void cholesky_solve_inplace(const Tensor& l, std::span<double> b) {
  const std::size_t n = l.rows();
  if (b.size() != n) throw DimensionMismatch("cholesky_solve: size mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t p = 0; p < i; ++p) s -= l(i, p) * b[p];
    b[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t p = ii + 1; p < n; ++p) s -= l(p, ii) * b[p];
    b[ii] = s / l(ii, ii);
  }
}

std::vector<double> cholesky_solve(const Tensor& l, std::span<const double> b) {
  std::vector<double> x(b.begin(), b.end());
  cholesky_solve_inplace(l, x);
  return x;
}

Tensor cholesky_inverse(const Tensor& l) {
  const std::size_t n = l.rows();
  Tensor inv({n, n});
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    cholesky_solve_inplace(l, col);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

double cholesky_logdet(const Tensor& l) {
  double s = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

std::vector<double> solve(const Tensor& a, std::span<const double> b) {
  require_square(a, "solve");
  const std::size_t n = a.rows();
  if (b.size() != n) throw DimensionMismatch("solve: size mismatch");
  Tensor m = a;
  std::vector<double> x(b.begin(), b.end());
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) <= 1e-14 * scale) throw NumericalError("solve: singular matrix");
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(m(c, j), m(piv, j));
      std::swap(x[c], x[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = m(r, c) / m(c, c);
      if (f == 0.0) continue;
      for (std::size_t j = c; j < n; ++j) m(r, j) -= f * m(c, j);
      x[r] -= f * x[c];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= m(ii, j) * x[j];
    x[ii] = s / m(ii, ii);
  }
  return x;
}

SymmetricEigen sym_eigen(const Tensor& a_in, double tol, int max_sweeps) {
  require_square(a_in, "sym_eigen");
  const std::size_t n = a_in.rows();
  Tensor a = a_in;
  // Work on the exactly symmetric part.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
  Tensor v = Tensor::identity(n);

  const double norm = std::max(frobenius_norm(a), 1e-300);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (std::sqrt(off) <= tol * norm) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  SymmetricEigen out{std::vector<double>(n), Tensor({n, n})};
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = a(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(r, order[c]);
  }
  return out;
}

Tensor sym_sqrt(const Tensor& a) {
  require_square(a, "sym_sqrt");
  const double scale = std::max(1.0, max_abs(a));
  if (asymmetry(a) > 1e-8 * scale) throw NotSymmetric("sym_sqrt: matrix is not symmetric");
  const std::size_t n = a.rows();
  const SymmetricEigen eig = sym_eigen(a);
  const double spectral = std::max(1.0, std::abs(eig.values.empty() ? 0.0 : eig.values.back()));
  Tensor r({n, n});
  for (std::size_t c = 0; c < n; ++c) {
    double lambda = eig.values[c];
    if (lambda < -1e-10 * spectral) throw NotPSD("sym_sqrt: eigenvalue " + std::to_string(lambda) + " is negative");
    const double root = std::sqrt(std::max(lambda, 0.0));
    if (root == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vi = eig.vectors(i, c) * root;
      for (std::size_t j = 0; j < n; ++j) r(i, j) += vi * eig.vectors(j, c);
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) r(i, j) = r(j, i) = 0.5 * (r(i, j) + r(j, i));
  return r;
}

}  // namespace said::linalg

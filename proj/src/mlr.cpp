#include "dsv/mlr.hpp"

#include "dsv/errors.hpp"
#include "dsv/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace dsv {

namespace {

void check_shapes(std::size_t x_size, std::size_t y_size, std::size_t T, std::size_t n_in,
                  std::size_t n_out) {
    if (T < 2) throw ValidationError("mlr fit: need at least 2 samples");
    if (x_size != T * n_in || y_size != T * n_out)
        throw DimensionError("mlr fit: X/Y sizes do not match (T, G_in, G_out)");
}

} // namespace

void MlrModel::predict(std::span<const double> x, std::span<double> y) const {
    if (x.size() != n_in || y.size() != n_out)
        throw DimensionError("mlr predict: sample length mismatch");
    for (std::size_t g = 0; g < n_out; ++g) {
        const double* w = weights.data() + g * n_in;
        double s = intercept[g];
        for (std::size_t i = 0; i < n_in; ++i) s += w[i] * x[i];
        y[g] = s;
    }
}

std::vector<double> MlrModel::predict_batch(std::span<const double> x,
                                            std::size_t n_samples) const {
    if (x.size() != n_samples * n_in) throw DimensionError("mlr predict_batch: size mismatch");
    std::vector<double> out(n_samples * n_out);
    for (std::size_t t = 0; t < n_samples; ++t)
        predict(x.subspan(t * n_in, n_in), {out.data() + t * n_out, n_out});
    return out;
}

MlrModel mlr_fit_closed_form(std::span<const double> x, std::span<const double> y,
                             std::size_t n_samples, std::size_t n_in, std::size_t n_out,
                             double lambda) {
    check_shapes(x.size(), y.size(), n_samples, n_in, n_out);
    if (lambda < 0.0) throw ValidationError("mlr fit: lambda must be >= 0");
    const std::size_t T = n_samples;

    std::vector<double> x_mean(n_in, 0.0), y_mean(n_out, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < n_in; ++i) x_mean[i] += x[t * n_in + i];
        for (std::size_t g = 0; g < n_out; ++g) y_mean[g] += y[t * n_out + g];
    }
    for (double& v : x_mean) v /= double(T);
    for (double& v : y_mean) v /= double(T);

    // Normal matrix of centered inputs plus the ridge term.
    std::vector<double> normal(n_in * n_in, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < n_in; ++i) {
            const double xi = x[t * n_in + i] - x_mean[i];
            for (std::size_t j = i; j < n_in; ++j)
                normal[i * n_in + j] += xi * (x[t * n_in + j] - x_mean[j]);
        }
    for (std::size_t i = 0; i < n_in; ++i) {
        normal[i * n_in + i] += lambda;
        for (std::size_t j = 0; j < i; ++j) normal[i * n_in + j] = normal[j * n_in + i];
    }

    std::vector<double> factor = normal;
    const bool spd = cholesky_factor(factor, n_in);
    if (!spd && lambda == 0.0)
        throw ValidationError(
            "mlr fit: singular normal matrix with lambda = 0; use lambda > 0");

    MlrModel m;
    m.n_in = n_in;
    m.n_out = n_out;
    m.intercept.resize(n_out);
    m.weights.assign(n_out * n_in, 0.0);

    std::vector<double> rhs(n_in);
    for (std::size_t g = 0; g < n_out; ++g) {
        std::fill(rhs.begin(), rhs.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            const double yc = y[t * n_out + g] - y_mean[g];
            for (std::size_t i = 0; i < n_in; ++i)
                rhs[i] += (x[t * n_in + i] - x_mean[i]) * yc;
        }
        std::vector<double> beta;
        if (spd) {
            beta = rhs;
            cholesky_solve(factor, n_in, beta);
        } else {
            beta = pseudo_inverse_solve(normal, n_in, rhs);
        }
        double b0 = y_mean[g];
        for (std::size_t i = 0; i < n_in; ++i) {
            m.weights[g * n_in + i] = beta[i];
            b0 -= beta[i] * x_mean[i];
        }
        m.intercept[g] = b0;
    }
    return m;
}

MlrModel mlr_fit_gradient(std::span<const double> x, std::span<const double> y,
                          std::size_t n_samples, std::size_t n_in, std::size_t n_out,
                          double lambda, double tol, std::size_t max_iter) {
    check_shapes(x.size(), y.size(), n_samples, n_in, n_out);
    if (lambda < 0.0) throw ValidationError("mlr fit: lambda must be >= 0");
    const std::size_t T = n_samples;

    MlrModel m;
    m.n_in = n_in;
    m.n_out = n_out;
    m.intercept.assign(n_out, 0.0);
    m.weights.assign(n_out * n_in, 0.0);

    std::vector<double> resid(T), grad(n_in + 1), xd(T);
    for (std::size_t g = 0; g < n_out; ++g) {
        double b0 = 0.0;
        double* beta = m.weights.data() + g * n_in;

        double grad_scale = 0.0;
        for (std::size_t iter = 0; iter < max_iter; ++iter) {
            for (std::size_t t = 0; t < T; ++t) {
                double s = b0;
                const double* xt = x.data() + t * n_in;
                for (std::size_t i = 0; i < n_in; ++i) s += beta[i] * xt[i];
                resid[t] = y[t * n_out + g] - s;
            }
            double g0 = 0.0;
            for (std::size_t t = 0; t < T; ++t) g0 -= 2.0 * resid[t];
            grad[0] = g0;
            for (std::size_t i = 0; i < n_in; ++i) grad[i + 1] = 2.0 * lambda * beta[i];
            for (std::size_t t = 0; t < T; ++t) {
                const double r2 = -2.0 * resid[t];
                const double* xt = x.data() + t * n_in;
                for (std::size_t i = 0; i < n_in; ++i) grad[i + 1] += r2 * xt[i];
            }

            double gnorm = 0.0, gsq = 0.0;
            for (double v : grad) {
                gnorm = std::max(gnorm, std::fabs(v));
                gsq += v * v;
            }
            if (iter == 0) grad_scale = std::max(1.0, gnorm);
            if (gnorm <= tol * grad_scale) break;

            // Exact line search along -grad for the quadratic objective.
            for (std::size_t t = 0; t < T; ++t) {
                double s = grad[0];
                const double* xt = x.data() + t * n_in;
                for (std::size_t i = 0; i < n_in; ++i) s += grad[i + 1] * xt[i];
                xd[t] = s;
            }
            double dhd = 0.0;
            for (std::size_t t = 0; t < T; ++t) dhd += xd[t] * xd[t];
            double dl = 0.0;
            for (std::size_t i = 0; i < n_in; ++i) dl += grad[i + 1] * grad[i + 1];
            dhd = 2.0 * (dhd + lambda * dl);
            if (!(dhd > 0.0)) break;
            const double alpha = gsq / dhd;

            b0 -= alpha * grad[0];
            for (std::size_t i = 0; i < n_in; ++i) beta[i] -= alpha * grad[i + 1];
        }
        m.intercept[g] = b0;
    }
    return m;
}

} // namespace dsv

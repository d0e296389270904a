#include "bln/norm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bln {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

void check_sigma_floor(const std::vector<double>& sigma) {
    for (std::size_t i = 0; i < sigma.size(); ++i)
        if (std::fabs(sigma[i]) < kSigmaFloor)
            throw DegenerateError("sigma below floor at unit " + std::to_string(i));
}

// Validates a_in against the sharing mode; returns (units, instance axes).
std::pair<std::size_t, std::vector<std::size_t>> norm_layout(const Shape& s, Sharing sharing,
                                                             std::size_t n_units) {
    if (sharing == Sharing::per_feature) {
        if (s.size() != 2) throw ShapeError("per-feature normalization expects [N,C]");
        if (s[1] != n_units) throw ShapeError("normalized axis length mismatch");
        return {s[1], {1}};
    }
    if (s.size() != 4) throw ShapeError("per-channel normalization expects [N,C,H,W]");
    if (s[1] != n_units) throw ShapeError("channel count mismatch");
    return {s[1], {1, 2, 3}};
}

// [C] parameter reshaped so it broadcasts against a_in.
Tensor bcast_param(const Tensor& p, Sharing sharing) {
    if (sharing == Sharing::per_feature) return p;
    return reshape(p, Shape{p.shape()[0], 1, 1});
}

}  // namespace

std::vector<double> sigma_from_param(const std::vector<double>& p, SigmaMode mode) {
    std::vector<double> s(p.size());
    switch (mode) {
        case SigmaMode::direct:
            s = p;
            break;
        case SigmaMode::log:
            for (std::size_t i = 0; i < p.size(); ++i) s[i] = std::exp(p[i]);
            break;
        case SigmaMode::inverse:
            for (std::size_t i = 0; i < p.size(); ++i) {
                if (p[i] == 0.0) throw DegenerateError("inverse sigma parameter is zero");
                s[i] = 1.0 / p[i];
            }
            break;
    }
    return s;
}

std::vector<double> param_from_sigma(const std::vector<double>& sigma, SigmaMode mode) {
    check_sigma_floor(sigma);
    std::vector<double> p(sigma.size());
    switch (mode) {
        case SigmaMode::direct:
            p = sigma;
            break;
        case SigmaMode::log:
            for (std::size_t i = 0; i < sigma.size(); ++i) p[i] = std::log(std::fabs(sigma[i]));
            break;
        case SigmaMode::inverse:
            for (std::size_t i = 0; i < sigma.size(); ++i) p[i] = 1.0 / sigma[i];
            break;
    }
    return p;
}

Tensor sigma_from_param(const Tensor& p, SigmaMode mode) {
    switch (mode) {
        case SigmaMode::direct:
            return p;
        case SigmaMode::log:
            return exp(p);
        case SigmaMode::inverse:
            for (double v : p.values())
                if (v == 0.0) throw DegenerateError("inverse sigma parameter is zero");
            return reciprocal(p);
    }
    throw ContractError("unreachable");
}

double exact_nll(double nll, double lambda) { return nll + lambda * kHalfLog2Pi; }

BatchlessOut batchless_forward(const Tensor& a_in, const Tensor& mu,
                               const Tensor& sigma_param, const Tensor& gamma,
                               const Tensor& beta, SigmaMode mode, Sharing sharing,
                               double lambda) {
    const auto [units, inst_axes] = norm_layout(a_in.shape(), sharing, mu.shape()[0]);
    (void)units;

    Tensor sigma = sigma_from_param(sigma_param, mode);
    check_sigma_floor(sigma.values());

    Tensor mu_b = bcast_param(mu, sharing);
    Tensor sigma_b = bcast_param(sigma, sharing);

    // nll: lambda * (1/2 ((sg a - mu)/sigma)^2 + log|sigma|), per-instance mean
    Tensor z = div(sub(stop_gradient(a_in), mu_b), sigma_b);
    Tensor term = add(scale(square(z), 0.5), log(abs(sigma_b)));
    Tensor nll_pi = scale(reduce(term, Reduce::mean, inst_axes), lambda);
    Tensor nll = reduce_all(nll_pi, Reduce::mean);

    // a_out: gradients must not reach mu/sigma from here
    Tensor a_out = add(mul(div(sub(a_in, stop_gradient(mu_b)), stop_gradient(sigma_b)),
                           bcast_param(gamma, sharing)),
                       bcast_param(beta, sharing));

    // Gauged per-activation loss: the log terms cancel in the forward value,
    // leaving lambda * (z^2 - 1) / 2.
    double gsum = 0.0, gsq = 0.0;
    const std::vector<double>& zv = z.values();
    for (double v : zv) {
        const double gl = lambda * 0.5 * (v * v - 1.0);
        gsum += gl;
        gsq += gl * gl;
    }
    const double n = static_cast<double>(zv.size());

    return BatchlessOut{a_out, nll_pi, nll, gsum / n, gsq / n};
}

void BatchNormState::init(std::size_t units) {
    moving_mu.assign(units, 0.0);
    moving_var.assign(units, 1.0);
    population_mu.clear();
    population_var.clear();
    finalized = false;
}

namespace {

struct BatchStats {
    Tensor mu;      // [C] on tape
    Tensor var;     // [C] on tape (biased)
    Tensor sigma;   // [C] on tape, sqrt(var + eps)
};

// Per-unit batch statistics: reduction over the batch axis, plus the spatial
// axes under per-channel sharing.
BatchStats batch_stats(const Tensor& a_in, Sharing sharing, double eps) {
    const std::vector<std::size_t> axes =
        sharing == Sharing::per_feature ? std::vector<std::size_t>{0}
                                        : std::vector<std::size_t>{0, 2, 3};
    Tensor mu = reduce(a_in, Reduce::mean, axes);
    Tensor var = reduce(square(sub(a_in, bcast_param(mu, sharing))), Reduce::mean, axes);
    Tensor sigma = sqrt(shift(var, eps));
    return {mu, var, sigma};
}

std::size_t stats_count(const Shape& s, Sharing sharing) {
    return sharing == Sharing::per_feature ? s[0] : s[0] * s[2] * s[3];
}

Tensor eval_normalize(const Tensor& a_in, const Tensor& gamma, const Tensor& beta,
                      const BatchNormState& state, Sharing sharing) {
    const std::vector<double>& m = state.finalized ? state.population_mu : state.moving_mu;
    const std::vector<double>& v = state.finalized ? state.population_var : state.moving_var;
    Tape& t = *a_in.tape;
    std::vector<double> sd(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sd[i] = std::sqrt(v[i] + state.epsilon);
    const Shape stat_shape{m.size()};  // sized before leaf() can move its data
    Tensor mu_c = bcast_param(t.leaf(stat_shape, m), sharing);
    Tensor sd_c = bcast_param(t.leaf(stat_shape, std::move(sd)), sharing);
    return add(mul(div(sub(a_in, mu_c), sd_c), bcast_param(gamma, sharing)),
               bcast_param(beta, sharing));
}

void update_moving_stats(BatchNormState& state, const std::vector<double>& mu_b,
                         const std::vector<double>& var_b) {
    const double m = state.momentum;
    for (std::size_t i = 0; i < state.moving_mu.size(); ++i) {
        state.moving_mu[i] = m * state.moving_mu[i] + (1.0 - m) * mu_b[i];
        state.moving_var[i] = m * state.moving_var[i] + (1.0 - m) * var_b[i];
    }
}

void check_train_batch(const Tensor& a_in, Sharing sharing) {
    if (stats_count(a_in.shape(), sharing) < 2)
        throw InsufficientBatchError(
            "batch statistics need more than one value per unit (batch size 1)");
}

}  // namespace

Tensor batchnorm_forward(const Tensor& a_in, const Tensor& gamma, const Tensor& beta,
                         BatchNormState& state, Phase phase, Sharing sharing,
                         bool update_moving) {
    const auto [units, inst_axes] = norm_layout(a_in.shape(), sharing, state.moving_mu.size());
    (void)units;
    (void)inst_axes;
    if (phase == Phase::eval) return eval_normalize(a_in, gamma, beta, state, sharing);
    check_train_batch(a_in, sharing);
    BatchStats st = batch_stats(a_in, sharing, state.epsilon);
    Tensor xhat = div(sub(a_in, bcast_param(st.mu, sharing)), bcast_param(st.sigma, sharing));
    if (update_moving) update_moving_stats(state, st.mu.values(), st.var.values());
    return add(mul(xhat, bcast_param(gamma, sharing)), bcast_param(beta, sharing));
}

Tensor batchrenorm_forward(const Tensor& a_in, const Tensor& gamma, const Tensor& beta,
                           BatchNormState& state, Phase phase, Sharing sharing,
                           bool update_moving) {
    const auto [units, inst_axes] = norm_layout(a_in.shape(), sharing, state.moving_mu.size());
    (void)units;
    (void)inst_axes;
    if (phase == Phase::eval) return eval_normalize(a_in, gamma, beta, state, sharing);
    check_train_batch(a_in, sharing);
    BatchStats st = batch_stats(a_in, sharing, state.epsilon);

    // r and d from values only: constants in the backward pass. Copies, not
    // references: growing the tape below reallocates its node storage.
    const std::vector<double> mu_b = st.mu.values();
    const std::vector<double> sg_b = st.sigma.values();
    const std::vector<double> var_b = st.var.values();
    const std::size_t C = mu_b.size();
    std::vector<double> r(C), d(C);
    const double r_lo = 1.0 / state.r_max;
    const double d_hi = state.d_max - 1.0;
    for (std::size_t i = 0; i < C; ++i) {
        const double s_mov = std::sqrt(state.moving_var[i] + state.epsilon);
        r[i] = std::clamp(sg_b[i] / s_mov, r_lo, state.r_max);
        d[i] = std::clamp((mu_b[i] - state.moving_mu[i]) / s_mov, -d_hi, d_hi);
    }
    Tape& t = *a_in.tape;
    Tensor r_c = bcast_param(t.leaf(Shape{C}, std::move(r)), sharing);
    Tensor d_c = bcast_param(t.leaf(Shape{C}, std::move(d)), sharing);

    Tensor xhat = add(mul(div(sub(a_in, bcast_param(st.mu, sharing)),
                              bcast_param(st.sigma, sharing)),
                          r_c),
                      d_c);
    if (update_moving) update_moving_stats(state, mu_b, var_b);
    return add(mul(xhat, bcast_param(gamma, sharing)), bcast_param(beta, sharing));
}

}  // namespace bln

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "neam/brdf_core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

namespace neam::testing {

/// Relative agreement check used for every gradient comparison. Components
/// where both values are below `floor` in magnitude are not compared.
inline bool grad_close(double analytic, double numeric, double rtol, double floor = 1e-6) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    if (scale <= floor) return true;
    return std::abs(analytic - numeric) <= rtol * scale;
}

/// Relative tolerance plus an absolute allowance for the cancellation error
/// of a central difference (about eps * |f| / step).
inline bool fd_close(double analytic, double numeric, double rtol, double atol) {
    return std::abs(analytic - numeric) <= rtol * std::max(std::abs(analytic), std::abs(numeric)) + atol;
}

inline double rel_err(double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

/// Parameters well inside their ranges, with a tilted shading normal.
inline AnalyticalParams random_params(std::mt19937_64& rng, bool tilt = true) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AnalyticalParams p;
    for (int k = 0; k < 3; ++k) {
        p.rho_d[k] = 0.05 + 0.8 * u(rng);
        p.rho_s[k] = 0.05 + 0.9 * u(rng);
    }
    p.alpha_x = 0.2 + 0.6 * u(rng);
    p.alpha_y = 0.2 + 0.6 * u(rng);
    p.f0 = 0.02 + 0.5 * u(rng);
    p.n_theta = tilt ? 0.3 * u(rng) : 0.0;
    p.n_phi = 2.0 * kPi * u(rng);
    p.t_theta = 2.0 * kPi * u(rng);
    return p;
}

/// Any parameters inside their ranges, including the extremes.
inline AnalyticalParams random_params_full(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AnalyticalParams p;
    for (int k = 0; k < 3; ++k) {
        p.rho_d[k] = 2.0 * u(rng);
        p.rho_s[k] = 2.0 * u(rng);
    }
    p.alpha_x = kAlphaMin + (1.0 - kAlphaMin) * u(rng);
    p.alpha_y = kAlphaMin + (1.0 - kAlphaMin) * u(rng);
    p.f0 = u(rng);
    p.n_theta = 0.5 * kPi * u(rng) * 0.999;
    p.n_phi = 2.0 * kPi * u(rng);
    p.t_theta = 2.0 * kPi * u(rng) * 0.999999;
    return p;
}

inline Direction random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    return normalize(Direction{n(rng), n(rng), n(rng)});
}

/// Upper-hemisphere direction with polar angle at most max_theta.
inline Direction random_upper(std::mt19937_64& rng, double max_theta = 1.2) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double ct = 1.0 - u(rng) * (1.0 - std::cos(max_theta));
    const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
    const double phi = 2.0 * kPi * u(rng);
    return {st * std::cos(phi), st * std::sin(phi), ct};
}

inline std::pair<Direction, Direction> random_pair(std::mt19937_64& rng, double max_theta = 1.2) {
    return {random_upper(rng, max_theta), random_upper(rng, max_theta)};
}

}  // namespace neam::testing

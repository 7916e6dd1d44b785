// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file brdf_core.hpp
///
/// Closed-form reflectance terms used as terminal nodes of the model
/// graphs, plus the direction and parameterization helpers they need.
///
/// Every term is written once as a template over the scalar type so the
/// same source is evaluated in plain doubles and in forward-mode jets
/// (exact partial derivatives for the graph's backward pass).
///

#pragma once

#include "neam/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

namespace neam {

template <typename T>
struct Vec3T {
    T x{}, y{}, z{};

    Vec3T() = default;
    Vec3T(T x_, T y_, T z_) : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}

    template <typename U>
    static Vec3T from(const Vec3T<U>& v) { return {T(v.x), T(v.y), T(v.z)}; }

    Vec3T operator+(const Vec3T& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3T operator-(const Vec3T& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3T operator-() const { return {-x, -y, -z}; }
    Vec3T operator*(const T& s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3T&) const = default;
};

template <typename T>
T dot(const Vec3T<T>& a, const Vec3T<T>& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

template <typename T>
Vec3T<T> cross(const Vec3T<T>& a, const Vec3T<T>& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

template <typename T>
T length(const Vec3T<T>& v) {
    using std::sqrt;
    return sqrt(dot(v, v));
}

template <typename T>
Vec3T<T> normalize(const Vec3T<T>& v) {
    T inv = T(1.0) / length(v);
    return v * inv;
}

using Vec3 = Vec3T<double>;
/// Unit vector in the local frame whose z axis is the geometric normal.
using Direction = Vec3;

inline double scalar_value(double v) { return v; }
template <typename J>
auto scalar_value(const J& v) -> decltype(v.a) { return v.a; }

template <typename T>
T clamp_min(const T& v, double lo) { return scalar_value(v) < lo ? T(lo) : v; }

/// Positions of the 12 analytical parameters inside flat parameter arrays.
namespace param {
inline constexpr int kRhoD = 0;
inline constexpr int kRhoS = 3;
inline constexpr int kAlphaX = 6;
inline constexpr int kAlphaY = 7;
inline constexpr int kF0 = 8;
inline constexpr int kNTheta = 9;
inline constexpr int kNPhi = 10;
inline constexpr int kTTheta = 11;
inline constexpr int kCount = 12;
}  // namespace param

template <typename T>
using ParamArray = std::array<T, param::kCount>;

/// The 12 decoded analytical parameters of one material.
struct AnalyticalParams {
    Rgb rho_d{0.5, 0.5, 0.5};
    Rgb rho_s{0.5, 0.5, 0.5};
    double alpha_x = 0.3;
    double alpha_y = 0.3;
    double f0 = 0.05;
    double n_theta = 0.0;
    double n_phi = 0.0;
    double t_theta = 0.0;

    ParamArray<double> to_array() const;
    static AnalyticalParams from_array(const ParamArray<double>& a);

    /// Throws OutOfRange if any range constraint is violated.
    void validate() const;

    bool operator==(const AnalyticalParams&) const = default;
};

struct ShadingFrame {
    Direction n, t, b;
};

template <typename T>
struct FrameT {
    Vec3T<T> n, t, b;
};

/// Shading normal from its spherical angles; tangent is the world x axis
/// projected onto the plane orthogonal to n, then rotated about n.
template <typename T>
FrameT<T> shading_frame(const T& n_theta, const T& n_phi, const T& t_theta) {
    using std::cos;
    using std::sin;
    const T st = sin(n_theta);
    Vec3T<T> n{st * cos(n_phi), st * sin(n_phi), cos(n_theta)};
    Vec3T<T> ref{T(1.0), T(0.0), T(0.0)};
    Vec3T<T> t0 = ref - n * n.x;
    if (scalar_value(length(t0)) < 1e-6) {
        ref = {T(0.0), T(1.0), T(0.0)};
        t0 = ref - n * n.y;
    }
    t0 = normalize(t0);
    const Vec3T<T> t = t0 * cos(t_theta) + cross(n, t0) * sin(t_theta);
    return {n, t, cross(n, t)};
}

ShadingFrame make_shading_frame(const AnalyticalParams& p);

/// Rusinkiewicz half/difference angles.
struct HalfDiffAngles {
    double theta_h = 0.0;
    double phi_h = 0.0;
    double theta_d = 0.0;
    double phi_d = 0.0;
};

/// Throws OutOfRange outside theta in [0, pi/2], phi in [0, 2pi).
std::pair<Direction, Direction> halfdiff_to_dirs(const HalfDiffAngles& a);
HalfDiffAngles dirs_to_halfdiff(const Direction& wi, const Direction& wo);

Direction spherical_direction(double theta, double phi);

// ---------------------------------------------------------------------------
// Terminal terms
// ---------------------------------------------------------------------------

enum class Term {
    Lambertian,         // rho_d / pi                     (RGB)
    SpecularAlbedo,     // rho_s                          (RGB)
    GgxDistribution,    // anisotropic GGX D(h)
    SchlickFresnel,     // F0 + (1 - F0)(1 - wi.h)^5
    SmithGeometry,      // separable Smith G1(wi) G1(wo) for GGX
    ReciprocalNorm,     // 1 / (4 cos_i cos_o)
    BeckmannDistribution,
    VCavityGeometry,
    WardLobe,           // exp(-tan^2 term) / (4 pi ax ay)
    WardNorm,           // 1 / sqrt(cos_i cos_o)
    GgxSpecularLobe,    // rho_s D F G / (4 cos_i cos_o), lumped (RGB)
};

int term_dim(Term term);
bool term_uses_directions(Term term);
const char* term_name(Term term);

/// Quantities shared by all terms evaluated for one (params, wi, wo) tuple.
template <typename T>
struct TermContext {
    ParamArray<T> p;
    FrameT<T> frame;
    Vec3T<T> wi, wo, h;
};

template <typename T>
TermContext<T> make_term_context(const ParamArray<T>& p, const Vec3T<T>& wi, const Vec3T<T>& wo) {
    TermContext<T> c;
    c.p = p;
    c.frame = shading_frame(p[param::kNTheta], p[param::kNPhi], p[param::kTTheta]);
    c.wi = wi;
    c.wo = wo;
    c.h = normalize(wi + wo);
    return c;
}

namespace terms {

template <typename T>
T ggx_d(const TermContext<T>& c) {
    const T hz = dot(c.h, c.frame.n);
    if (scalar_value(hz) <= 0.0) return T(0.0);
    const T hx = dot(c.h, c.frame.t);
    const T hy = dot(c.h, c.frame.b);
    const T& ax = c.p[param::kAlphaX];
    const T& ay = c.p[param::kAlphaY];
    const T s = hx * hx / (ax * ax) + hy * hy / (ay * ay) + hz * hz;
    return T(1.0) / (T(kPi) * ax * ay * s * s);
}

template <typename T>
T schlick_f(const TermContext<T>& c) {
    T cos_d = dot(c.wi, c.h);
    if (scalar_value(cos_d) < 0.0) cos_d = T(0.0);
    if (scalar_value(cos_d) > 1.0) cos_d = T(1.0);
    const T m = T(1.0) - cos_d;
    const T m2 = m * m;
    const T& f0 = c.p[param::kF0];
    return f0 + (T(1.0) - f0) * (m2 * m2 * m);
}

/// Smith G1 for anisotropic GGX with the cosine clamped to kCosEpsilon.
template <typename T>
T smith_g1(const TermContext<T>& c, const Vec3T<T>& v) {
    using std::sqrt;
    const T vz = clamp_min(dot(v, c.frame.n), kCosEpsilon);
    const T vx = dot(v, c.frame.t);
    const T vy = dot(v, c.frame.b);
    const T& ax = c.p[param::kAlphaX];
    const T& ay = c.p[param::kAlphaY];
    const T tan2 = (ax * ax * vx * vx + ay * ay * vy * vy) / (vz * vz);
    return T(2.0) / (T(1.0) + sqrt(T(1.0) + tan2));
}

template <typename T>
T smith_g(const TermContext<T>& c) {
    return smith_g1(c, c.wi) * smith_g1(c, c.wo);
}

template <typename T>
T recip_norm(const TermContext<T>& c) {
    const T ci = clamp_min(dot(c.frame.n, c.wi), kCosEpsilon);
    const T co = clamp_min(dot(c.frame.n, c.wo), kCosEpsilon);
    return T(1.0) / (T(4.0) * ci * co);
}

template <typename T>
T beckmann_d(const TermContext<T>& c) {
    using std::exp;
    const T hz = dot(c.h, c.frame.n);
    if (scalar_value(hz) <= 0.0) return T(0.0);
    const T hx = dot(c.h, c.frame.t);
    const T hy = dot(c.h, c.frame.b);
    const T& ax = c.p[param::kAlphaX];
    const T& ay = c.p[param::kAlphaY];
    const T hz2 = hz * hz;
    const T e = (hx * hx / (ax * ax) + hy * hy / (ay * ay)) / hz2;
    return exp(-e) / (T(kPi) * ax * ay * hz2 * hz2);
}

template <typename T>
T vcavity_g(const TermContext<T>& c) {
    const T nh = dot(c.frame.n, c.h);
    if (scalar_value(nh) <= 0.0) return T(0.0);
    const T ci = clamp_min(dot(c.frame.n, c.wi), kCosEpsilon);
    const T co = clamp_min(dot(c.frame.n, c.wo), kCosEpsilon);
    const T oh = clamp_min(dot(c.wo, c.h), kCosEpsilon);
    const T gi = T(2.0) * nh * ci / oh;
    const T go = T(2.0) * nh * co / oh;
    T g = scalar_value(gi) < scalar_value(go) ? gi : go;
    if (scalar_value(g) > 1.0) g = T(1.0);
    return g;
}

template <typename T>
T ward_lobe(const TermContext<T>& c) {
    using std::exp;
    const T hz = dot(c.h, c.frame.n);
    if (scalar_value(hz) <= 0.0) return T(0.0);
    const T hx = dot(c.h, c.frame.t);
    const T hy = dot(c.h, c.frame.b);
    const T& ax = c.p[param::kAlphaX];
    const T& ay = c.p[param::kAlphaY];
    const T e = (hx * hx / (ax * ax) + hy * hy / (ay * ay)) / (hz * hz);
    return exp(-e) / (T(4.0 * kPi) * ax * ay);
}

template <typename T>
T ward_norm(const TermContext<T>& c) {
    using std::sqrt;
    const T ci = clamp_min(dot(c.frame.n, c.wi), kCosEpsilon);
    const T co = clamp_min(dot(c.frame.n, c.wo), kCosEpsilon);
    return T(1.0) / sqrt(ci * co);
}

/// Exact unpolarized dielectric Fresnel with the index of refraction
/// implied by F0. Agrees with Schlick at normal and grazing incidence.
template <typename T>
T dielectric_f(const TermContext<T>& c) {
    using std::sqrt;
    T cos_d = dot(c.wi, c.h);
    if (scalar_value(cos_d) < 0.0) cos_d = T(0.0);
    if (scalar_value(cos_d) > 1.0) cos_d = T(1.0);
    const T sf0 = sqrt(clamp_min(c.p[param::kF0], 0.0));
    const T eta = (T(1.0) + sf0) / clamp_min(T(1.0) - sf0, 1e-6);
    const T g = sqrt(eta * eta - T(1.0) + cos_d * cos_d);
    const T a = (g - cos_d) / (g + cos_d);
    const T num = cos_d * (g + cos_d) - T(1.0);
    const T den = cos_d * (g - cos_d) + T(1.0);
    const T b = num / den;
    return T(0.5) * a * a * (T(1.0) + b * b);
}

/// Height-correlated Smith masking-shadowing for anisotropic GGX.
template <typename T>
T smith_g_height_correlated(const TermContext<T>& c) {
    auto lambda = [&](const Vec3T<T>& v) {
        using std::sqrt;
        const T vz = clamp_min(dot(v, c.frame.n), kCosEpsilon);
        const T vx = dot(v, c.frame.t);
        const T vy = dot(v, c.frame.b);
        const T& ax = c.p[param::kAlphaX];
        const T& ay = c.p[param::kAlphaY];
        const T tan2 = (ax * ax * vx * vx + ay * ay * vy * vy) / (vz * vz);
        return (sqrt(T(1.0) + tan2) - T(1.0)) * T(0.5);
    };
    return T(1.0) / (T(1.0) + lambda(c.wi) + lambda(c.wo));
}

/// Kelemen-style normalization 1 / |wi + wo|^2.
template <typename T>
T kelemen_norm(const TermContext<T>& c) {
    const Vec3T<T> s = c.wi + c.wo;
    return T(1.0) / clamp_min(dot(s, s), 4.0 * kCosEpsilon);
}

}  // namespace terms

/// Evaluates one terminal term into out[0 .. term_dim(term)).
template <typename T>
void eval_term(Term term, const TermContext<T>& c, T* out) {
    switch (term) {
        case Term::Lambertian:
            for (int k = 0; k < 3; ++k) out[k] = c.p[param::kRhoD + k] * T(kInvPi);
            return;
        case Term::SpecularAlbedo:
            for (int k = 0; k < 3; ++k) out[k] = c.p[param::kRhoS + k];
            return;
        case Term::GgxDistribution: out[0] = terms::ggx_d(c); return;
        case Term::SchlickFresnel: out[0] = terms::schlick_f(c); return;
        case Term::SmithGeometry: out[0] = terms::smith_g(c); return;
        case Term::ReciprocalNorm: out[0] = terms::recip_norm(c); return;
        case Term::BeckmannDistribution: out[0] = terms::beckmann_d(c); return;
        case Term::VCavityGeometry: out[0] = terms::vcavity_g(c); return;
        case Term::WardLobe: out[0] = terms::ward_lobe(c); return;
        case Term::WardNorm: out[0] = terms::ward_norm(c); return;
        case Term::GgxSpecularLobe: {
            const T lobe = terms::ggx_d(c) * terms::schlick_f(c) * terms::smith_g(c) * terms::recip_norm(c);
            for (int k = 0; k < 3; ++k) out[k] = c.p[param::kRhoS + k] * lobe;
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// Named double-precision entry points
// ---------------------------------------------------------------------------

Rgb node_lambertian(const AnalyticalParams& p);
double node_distribution_ggx(const AnalyticalParams& p, const Direction& h);
double node_fresnel_schlick(const AnalyticalParams& p, const Direction& wi, const Direction& h);
double node_geometry_smith(const AnalyticalParams& p, const Direction& wi, const Direction& wo);
double node_recip_norm(const Direction& wi, const Direction& wo, const ShadingFrame& frame);

/// rho_d/pi + rho_s D F G / (4 cos_i cos_o), written out directly.
Rgb eval_analytical_ggx(const AnalyticalParams& p, const Direction& wi, const Direction& wo);
/// Beckmann D, V-cavity G, Schlick F.
Rgb eval_analytical_cooktorrance(const AnalyticalParams& p, const Direction& wi, const Direction& wo);
/// Anisotropic Ward; F0 is unused.
Rgb eval_analytical_ward(const AnalyticalParams& p, const Direction& wi, const Direction& wo);

}  // namespace neam

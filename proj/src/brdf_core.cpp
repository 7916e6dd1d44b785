// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/brdf_core.hpp"

#include <cmath>
#include <sstream>

namespace neam {

ParamArray<double> AnalyticalParams::to_array() const {
    return {rho_d[0], rho_d[1], rho_d[2], rho_s[0], rho_s[1], rho_s[2],
            alpha_x,  alpha_y,  f0,       n_theta,  n_phi,    t_theta};
}

AnalyticalParams AnalyticalParams::from_array(const ParamArray<double>& a) {
    AnalyticalParams p;
    p.rho_d = {a[0], a[1], a[2]};
    p.rho_s = {a[3], a[4], a[5]};
    p.alpha_x = a[param::kAlphaX];
    p.alpha_y = a[param::kAlphaY];
    p.f0 = a[param::kF0];
    p.n_theta = a[param::kNTheta];
    p.n_phi = a[param::kNPhi];
    p.t_theta = a[param::kTTheta];
    return p;
}

void AnalyticalParams::validate() const {
    auto fail = [](const char* what, double v) {
        std::ostringstream os;
        os << what << " = " << v;
        throw Error(ErrorCode::OutOfRange, os.str());
    };
    for (int k = 0; k < 3; ++k) {
        if (!(rho_d[k] >= 0.0) || !std::isfinite(rho_d[k])) fail("rho_d", rho_d[k]);
        if (!(rho_s[k] >= 0.0) || !std::isfinite(rho_s[k])) fail("rho_s", rho_s[k]);
    }
    if (!(alpha_x >= kAlphaMin && alpha_x <= 1.0)) fail("alpha_x", alpha_x);
    if (!(alpha_y >= kAlphaMin && alpha_y <= 1.0)) fail("alpha_y", alpha_y);
    if (!(f0 >= 0.0 && f0 <= 1.0)) fail("f0", f0);
    if (!(n_theta >= 0.0 && n_theta < 0.5 * kPi)) fail("n_theta", n_theta);
    if (!std::isfinite(n_phi)) fail("n_phi", n_phi);
    if (!(t_theta >= 0.0 && t_theta < 2.0 * kPi)) fail("t_theta", t_theta);
}

ShadingFrame make_shading_frame(const AnalyticalParams& p) {
    const auto f = shading_frame(p.n_theta, p.n_phi, p.t_theta);
    return {f.n, f.t, f.b};
}

Direction spherical_direction(double theta, double phi) {
    const double st = std::sin(theta);
    return {st * std::cos(phi), st * std::sin(phi), std::cos(theta)};
}

namespace {

Vec3 rotate_z(const Vec3& v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
}

Vec3 rotate_y(const Vec3& v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v.x + s * v.z, v.y, -s * v.x + c * v.z};
}

double wrap_two_pi(double a) {
    a = std::fmod(a, 2.0 * kPi);
    if (a < 0.0) a += 2.0 * kPi;
    if (a >= 2.0 * kPi) a = 0.0;
    return a;
}

double clamped_acos(double c) { return std::acos(std::clamp(c, -1.0, 1.0)); }

}  // namespace

std::pair<Direction, Direction> halfdiff_to_dirs(const HalfDiffAngles& a) {
    const double half_pi = 0.5 * kPi;
    if (!(a.theta_h >= 0.0 && a.theta_h <= half_pi) || !(a.theta_d >= 0.0 && a.theta_d <= half_pi) ||
        !(a.phi_h >= 0.0 && a.phi_h < 2.0 * kPi) || !(a.phi_d >= 0.0 && a.phi_d < 2.0 * kPi)) {
        std::ostringstream os;
        os << "half/diff angles (" << a.theta_h << ", " << a.phi_h << ", " << a.theta_d << ", "
           << a.phi_d << ")";
        throw Error(ErrorCode::OutOfRange, os.str());
    }
    const Direction h = spherical_direction(a.theta_h, a.phi_h);
    const Direction d = spherical_direction(a.theta_d, a.phi_d);
    const Direction wi = normalize(rotate_z(rotate_y(d, a.theta_h), a.phi_h));
    const Direction wo = normalize(h * (2.0 * dot(wi, h)) - wi);
    return {wi, wo};
}

HalfDiffAngles dirs_to_halfdiff(const Direction& wi, const Direction& wo) {
    const Direction h = normalize(wi + wo);
    HalfDiffAngles a;
    a.theta_h = clamped_acos(h.z);
    a.phi_h = wrap_two_pi(std::atan2(h.y, h.x));
    const Direction d = rotate_y(rotate_z(wi, -a.phi_h), -a.theta_h);
    a.theta_d = clamped_acos(d.z);
    a.phi_d = wrap_two_pi(std::atan2(d.y, d.x));
    return a;
}

int term_dim(Term term) {
    switch (term) {
        case Term::Lambertian:
        case Term::SpecularAlbedo:
        case Term::GgxSpecularLobe: return 3;
        default: return 1;
    }
}

bool term_uses_directions(Term term) {
    return term != Term::Lambertian && term != Term::SpecularAlbedo;
}

const char* term_name(Term term) {
    switch (term) {
        case Term::Lambertian: return "M";
        case Term::SpecularAlbedo: return "S";
        case Term::GgxDistribution: return "D";
        case Term::SchlickFresnel: return "F";
        case Term::SmithGeometry: return "G";
        case Term::ReciprocalNorm: return "1/E";
        case Term::BeckmannDistribution: return "D_beckmann";
        case Term::VCavityGeometry: return "G_vcavity";
        case Term::WardLobe: return "L_ward";
        case Term::WardNorm: return "N_ward";
        case Term::GgxSpecularLobe: return "Spec";
    }
    return "?";
}

namespace {

TermContext<double> context_with_half(const AnalyticalParams& p, const Direction& wi,
                                      const Direction& wo, const Direction& h) {
    TermContext<double> c;
    c.p = p.to_array();
    c.frame = shading_frame(p.n_theta, p.n_phi, p.t_theta);
    c.wi = wi;
    c.wo = wo;
    c.h = h;
    return c;
}

}  // namespace

Rgb node_lambertian(const AnalyticalParams& p) {
    return {p.rho_d[0] * kInvPi, p.rho_d[1] * kInvPi, p.rho_d[2] * kInvPi};
}

double node_distribution_ggx(const AnalyticalParams& p, const Direction& h) {
    return terms::ggx_d(context_with_half(p, h, h, h));
}

double node_fresnel_schlick(const AnalyticalParams& p, const Direction& wi, const Direction& h) {
    return terms::schlick_f(context_with_half(p, wi, wi, h));
}

double node_geometry_smith(const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
    return terms::smith_g(context_with_half(p, wi, wo, normalize(wi + wo)));
}

double node_recip_norm(const Direction& wi, const Direction& wo, const ShadingFrame& frame) {
    const double ci = std::max(dot(frame.n, wi), kCosEpsilon);
    const double co = std::max(dot(frame.n, wo), kCosEpsilon);
    return 1.0 / (4.0 * ci * co);
}

namespace {

struct LocalDirs {
    double ci, co;        // clamped cosines against the shading normal
    Vec3 h_local;         // half vector in (t, b, n) coordinates
    Vec3 wi_local, wo_local;
    double cos_d;         // wi . h, clamped to [0, 1]
};

LocalDirs to_local(const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
    const ShadingFrame f = make_shading_frame(p);
    auto local = [&](const Vec3& v) { return Vec3{dot(v, f.t), dot(v, f.b), dot(v, f.n)}; };
    const Vec3 h = normalize(wi + wo);
    LocalDirs d;
    d.wi_local = local(wi);
    d.wo_local = local(wo);
    d.h_local = local(h);
    d.ci = std::max(d.wi_local.z, kCosEpsilon);
    d.co = std::max(d.wo_local.z, kCosEpsilon);
    d.cos_d = std::clamp(dot(wi, h), 0.0, 1.0);
    return d;
}

double schlick(double f0, double cos_d) { return f0 + (1.0 - f0) * std::pow(1.0 - cos_d, 5.0); }

}  // namespace

Rgb eval_analytical_ggx(const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
    const LocalDirs d = to_local(p, wi, wo);
    const double ax = p.alpha_x, ay = p.alpha_y;
    double D = 0.0;
    if (d.h_local.z > 0.0) {
        const Vec3& h = d.h_local;
        const double s = (h.x / ax) * (h.x / ax) + (h.y / ay) * (h.y / ay) + h.z * h.z;
        D = 1.0 / (kPi * ax * ay * s * s);
    }
    auto g1 = [&](const Vec3& v, double cos_clamped) {
        const double t2 = (ax * ax * v.x * v.x + ay * ay * v.y * v.y) / (cos_clamped * cos_clamped);
        return 2.0 / (1.0 + std::sqrt(1.0 + t2));
    };
    const double G = g1(d.wi_local, d.ci) * g1(d.wo_local, d.co);
    const double F = schlick(p.f0, d.cos_d);
    const double spec = D * F * G / (4.0 * d.ci * d.co);
    Rgb out;
    for (int k = 0; k < 3; ++k) out[k] = p.rho_d[k] / kPi + p.rho_s[k] * spec;
    return out;
}

Rgb eval_analytical_cooktorrance(const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
    const LocalDirs d = to_local(p, wi, wo);
    const double ax = p.alpha_x, ay = p.alpha_y;
    const Vec3& h = d.h_local;
    double D = 0.0, G = 0.0;
    if (h.z > 0.0) {
        const double c2 = h.z * h.z;
        const double tan2 = ((h.x / ax) * (h.x / ax) + (h.y / ay) * (h.y / ay)) / c2;
        D = std::exp(-tan2) / (kPi * ax * ay * c2 * c2);
        const double oh = std::max(d.cos_d, kCosEpsilon);
        G = std::min({1.0, 2.0 * h.z * d.ci / oh, 2.0 * h.z * d.co / oh});
    }
    const double F = schlick(p.f0, d.cos_d);
    const double spec = D * F * G / (4.0 * d.ci * d.co);
    Rgb out;
    for (int k = 0; k < 3; ++k) out[k] = p.rho_d[k] / kPi + p.rho_s[k] * spec;
    return out;
}

Rgb eval_analytical_ward(const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
    const LocalDirs d = to_local(p, wi, wo);
    const double ax = p.alpha_x, ay = p.alpha_y;
    const Vec3& h = d.h_local;
    double lobe = 0.0;
    if (h.z > 0.0) {
        const double e = ((h.x / ax) * (h.x / ax) + (h.y / ay) * (h.y / ay)) / (h.z * h.z);
        lobe = std::exp(-e) / (4.0 * kPi * ax * ay * std::sqrt(d.ci * d.co));
    }
    Rgb out;
    for (int k = 0; k < 3; ++k) out[k] = p.rho_d[k] / kPi + p.rho_s[k] * lobe;
    return out;
}

}  // namespace neam

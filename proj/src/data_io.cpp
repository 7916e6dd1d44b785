// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/data_io.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace neam {

void SampleSet::validate(double unit_tolerance) const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        auto fail = [&](const char* what) {
            std::ostringstream os;
            os << material_id << " sample " << i << ": " << what;
            throw Error(ErrorCode::OutOfRange, os.str());
        };
        if (std::abs(length(s.wi) - 1.0) > unit_tolerance) fail("wi is not unit length");
        if (std::abs(length(s.wo) - 1.0) > unit_tolerance) fail("wo is not unit length");
        for (double v : s.value) {
            if (!std::isfinite(v) || v < 0.0) fail("value must be finite and non-negative");
        }
    }
}

// ---------------------------------------------------------------------------
// MERL
// ---------------------------------------------------------------------------

Rgb MerlTable::cell(int theta_h, int theta_d, int phi_d) const {
    const std::size_t i = index(theta_h, theta_d, phi_d);
    Rgb v;
    for (int c = 0; c < 3; ++c) {
        const double stored = raw[i + static_cast<std::size_t>(c) * kCells];
        if (stored < 0.0) return {0.0, 0.0, 0.0};
        v[c] = stored * kScale[c];
    }
    return v;
}

MerlTable read_merl(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    if (r.remaining() < 12) throw Error(ErrorCode::Truncated, path.string() + ": missing header");
    const std::int32_t dims[3] = {r.i32(), r.i32(), r.i32()};
    if (dims[0] != MerlTable::kThetaH || dims[1] != MerlTable::kThetaD || dims[2] != MerlTable::kPhiD) {
        std::ostringstream os;
        os << path.string() << ": dimensions (" << dims[0] << ", " << dims[1] << ", " << dims[2]
           << ") differ from (90, 90, 180)";
        throw Error(ErrorCode::BadHeader, os.str());
    }
    MerlTable t;
    if (r.remaining() < t.raw.size() * sizeof(double)) {
        throw Error(ErrorCode::Truncated, path.string() + ": payload shorter than 3 x 90 x 90 x 180 doubles");
    }
    for (double& v : t.raw) v = r.f64();
    // Extra bytes mean the header lies about the layout.
    if (r.remaining() != 0) throw Error(ErrorCode::BadHeader, path.string() + ": trailing bytes after the payload");
    return t;
}

void write_merl(const MerlTable& table, const std::filesystem::path& path) {
    if (table.raw.size() != 3 * MerlTable::kCells) throw Error(ErrorCode::DimensionMismatch, "MERL payload size");
    detail::ByteWriter w;
    w.i32(MerlTable::kThetaH);
    w.i32(MerlTable::kThetaD);
    w.i32(MerlTable::kPhiD);
    for (double v : table.raw) w.f64(v);
    detail::write_file(path, w.data());
}

int merl_theta_h_index(double theta_h) {
    if (theta_h <= 0.0) return 0;
    const int i = static_cast<int>(std::sqrt(theta_h / (0.5 * kPi)) * MerlTable::kThetaH);
    return std::clamp(i, 0, MerlTable::kThetaH - 1);
}

int merl_theta_d_index(double theta_d) {
    const int i = static_cast<int>(theta_d / (0.5 * kPi) * MerlTable::kThetaD);
    return std::clamp(i, 0, MerlTable::kThetaD - 1);
}

int merl_phi_d_index(double phi_d) {
    // Reciprocity: phi_d and phi_d + pi share a cell.
    phi_d = std::fmod(phi_d, kPi);
    if (phi_d < 0.0) phi_d += kPi;
    const int i = static_cast<int>(phi_d / kPi * MerlTable::kPhiD);
    return std::clamp(i, 0, MerlTable::kPhiD - 1);
}

Rgb merl_lookup(const MerlTable& table, const Direction& wi, const Direction& wo) {
    if (wi.z <= 0.0 || wo.z <= 0.0) return {0.0, 0.0, 0.0};
    const HalfDiffAngles a = dirs_to_halfdiff(wi, wo);
    return table.cell(merl_theta_h_index(a.theta_h), merl_theta_d_index(a.theta_d), merl_phi_d_index(a.phi_d));
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::vector<std::pair<Direction, Direction>> sample_directions(std::size_t n, SamplingMode mode, std::uint64_t seed) {
    if (n < 1) throw Error(ErrorCode::OutOfRange, "sample count must be at least 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<Direction, Direction>> out;
    out.reserve(n);
    const double half_pi = 0.5 * kPi;
    // Acceptance is well above 1/4 for these densities; a pathological
    // stream would trip this bound long before looping forever.
    const std::size_t max_draws = 64 * n + 1024;
    std::size_t draws = 0;
    while (out.size() < n) {
        if (++draws > max_draws) throw Error(ErrorCode::NonFinite, "direction sampler exceeded its retry budget");
        HalfDiffAngles a;
        a.theta_h = half_pi * u(rng);
        a.theta_d = half_pi * u(rng);
        a.phi_d = std::min(2.0 * kPi * u(rng), std::nextafter(2.0 * kPi, 0.0));
        const double phi_h = 2.0 * kPi * u(rng);
        a.phi_h = mode == SamplingMode::Anisotropic4Angle ? std::min(phi_h, std::nextafter(2.0 * kPi, 0.0)) : 0.0;
        const auto dirs = halfdiff_to_dirs(a);
        if (dirs.first.z <= 0.0 || dirs.second.z <= 0.0) continue;
        out.push_back(dirs);
    }
    return out;
}

std::vector<std::pair<Direction, Direction>> sample_fixed_view(std::size_t n, const Direction& wo,
                                                               std::uint64_t seed) {
    if (wo.z <= 0.0) throw Error(ErrorCode::OutOfRange, "fixed view below the horizon");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<Direction, Direction>> out;
    out.reserve(n);
    while (out.size() < n) {
        const double z = 1.0 - u(rng);  // (0, 1]
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = 2.0 * kPi * u(rng);
        out.push_back({Direction{r * std::cos(phi), r * std::sin(phi), z}, wo});
    }
    return out;
}

std::vector<AnalyticalParams> random_materials(std::size_t count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<AnalyticalParams> out;
    for (std::size_t i = 0; i < count; ++i) {
        AnalyticalParams p;
        const double base_d = 0.05 + 0.45 * u(rng);
        const double base_s = 0.2 + 0.8 * u(rng);
        for (int k = 0; k < 3; ++k) {
            p.rho_d[k] = base_d * (0.5 + u(rng));
            p.rho_s[k] = base_s * (0.8 + 0.4 * u(rng));
        }
        p.alpha_x = 0.08 + 0.42 * u(rng);
        p.alpha_y = p.alpha_x * (0.6 + 0.8 * u(rng));
        p.alpha_y = std::clamp(p.alpha_y, 0.05, 1.0);
        p.f0 = 0.02 + 0.1 * u(rng);
        p.n_theta = 0.1 * u(rng);
        p.n_phi = 2.0 * kPi * u(rng);
        p.t_theta = 2.0 * kPi * u(rng) * 0.999;
        out.push_back(p);
    }
    return out;
}

Corruption parse_corruption(const std::string& name) {
    if (name == "fresnel") return Corruption::FresnelSwap;
    if (name == "fresnel-exact") return Corruption::FresnelExact;
    if (name == "geometry") return Corruption::GeometrySwap;
    if (name == "norm") return Corruption::NormSwap;
    throw Error(ErrorCode::Usage, "unknown corruption '" + name + "' (fresnel|fresnel-exact|geometry|norm)");
}

const char* corruption_name(Corruption c) {
    switch (c) {
        case Corruption::FresnelSwap: return "fresnel";
        case Corruption::FresnelExact: return "fresnel-exact";
        case Corruption::GeometrySwap: return "geometry";
        case Corruption::NormSwap: return "norm";
    }
    return "?";
}

Rgb eval_corrupted_ggx(const AnalyticalParams& p, Corruption corruption, const Direction& wi, const Direction& wo) {
    const auto c = make_term_context(p.to_array(), wi, wo);
    const double d = terms::ggx_d(c);
    double f = terms::schlick_f(c);
    if (corruption == Corruption::FresnelSwap) {
        const double m = 1.0 - std::clamp(dot(wi, c.h), 0.0, 1.0);
        f = p.f0 + (1.0 - p.f0) * m * m;
    } else if (corruption == Corruption::FresnelExact) {
        f = terms::dielectric_f(c);
    }
    const double g = corruption == Corruption::GeometrySwap ? terms::smith_g_height_correlated(c) : terms::smith_g(c);
    const double e = corruption == Corruption::NormSwap ? terms::kelemen_norm(c) : terms::recip_norm(c);
    const double spec = d * f * g * e;
    Rgb out;
    for (int k = 0; k < 3; ++k) out[k] = p.rho_d[k] * kInvPi + p.rho_s[k] * spec;
    return out;
}

namespace {

template <typename Eval>
std::vector<SampleSet> generate(const std::vector<AnalyticalParams>& params, std::size_t n, NoiseModel noise,
                                std::uint64_t seed, SamplingMode mode, const std::string& prefix, Eval eval) {
    std::vector<SampleSet> out;
    for (std::size_t m = 0; m < params.size(); ++m) {
        params[m].validate();
        const auto dirs = sample_directions(n, mode, derive_seed(seed, m, 1));
        std::mt19937_64 rng(derive_seed(seed, m, 2));
        std::normal_distribution<double> factor(noise.mu, noise.sigma > 0.0 ? noise.sigma : 1.0);
        SampleSet set;
        set.material_id = prefix + std::to_string(m);
        set.source = SampleSource::SyntheticGgx;
        set.samples.reserve(n);
        for (const auto& [wi, wo] : dirs) {
            Rgb v = eval(params[m], wi, wo);
            if (noise.sigma > 0.0) {
                const double k = std::max(0.0, factor(rng));
                for (double& c : v) c *= k;
            } else if (noise.mu != 1.0) {
                for (double& c : v) c *= std::max(0.0, noise.mu);
            }
            set.samples.push_back({wi, wo, v});
        }
        out.push_back(std::move(set));
    }
    return out;
}

}  // namespace

std::vector<SampleSet> gen_synthetic_ggx(const std::vector<AnalyticalParams>& params, std::size_t n_per_material,
                                         NoiseModel noise, std::uint64_t seed, SamplingMode mode) {
    return generate(params, n_per_material, noise, seed, mode, "ggx", eval_analytical_ggx);
}

std::vector<SampleSet> gen_corrupted_ggx(const std::vector<AnalyticalParams>& params, Corruption corruption,
                                         std::size_t n_per_material, NoiseModel noise, std::uint64_t seed,
                                         SamplingMode mode) {
    return generate(params, n_per_material, noise, seed, mode, std::string(corruption_name(corruption)),
                    [corruption](const AnalyticalParams& p, const Direction& wi, const Direction& wo) {
                        return eval_corrupted_ggx(p, corruption, wi, wo);
                    });
}

SampleSet merl_to_sampleset(const MerlTable& table, std::size_t n, std::uint64_t seed, std::string material_id) {
    SampleSet set;
    set.material_id = std::move(material_id);
    set.source = SampleSource::Merl;
    for (const auto& [wi, wo] : sample_directions(n, SamplingMode::Isotropic3Angle, seed)) {
        set.samples.push_back({wi, wo, merl_lookup(table, wi, wo)});
    }
    return set;
}

// ---------------------------------------------------------------------------
// Sample-set file
// ---------------------------------------------------------------------------

void write_sampleset(const SampleSet& set, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.magic("NEAS");
    w.u32(kSampleSetVersion);
    w.u32(static_cast<std::uint32_t>(set.samples.size()));
    for (const Sample& s : set.samples) {
        for (double v : {s.wi.x, s.wi.y, s.wi.z, s.wo.x, s.wo.y, s.wo.z}) w.f32(static_cast<float>(v));
        for (double v : s.value) w.f32(static_cast<float>(v));
    }
    detail::write_file(path, w.data());
}

SampleSet read_sampleset(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    if (r.remaining() < 4) throw Error(ErrorCode::Truncated, path.string() + ": missing magic");
    if (!r.magic("NEAS")) throw Error(ErrorCode::BadMagic, path.string() + " is not a sample-set file");
    const std::uint32_t version = r.u32();
    if (version != kSampleSetVersion) {
        throw Error(ErrorCode::VersionUnsupported, path.string() + ": version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    if (r.remaining() < static_cast<std::size_t>(count) * 9 * sizeof(float)) {
        throw Error(ErrorCode::Truncated, path.string() + ": fewer records than the header promises");
    }
    SampleSet set;
    set.material_id = path.stem().string();
    set.source = SampleSource::File;
    set.samples.resize(count);
    for (Sample& s : set.samples) {
        float f[9];
        for (float& v : f) v = r.f32();
        s.wi = normalize(Direction{f[0], f[1], f[2]});
        s.wo = normalize(Direction{f[3], f[4], f[5]});
        s.value = {f[6], f[7], f[8]};
    }
    return set;
}

std::uint64_t content_hash(const std::vector<SampleSet>& sets) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& set : sets) {
        const std::uint64_t n = set.samples.size();
        h = detail::fnv1a(reinterpret_cast<const unsigned char*>(&n), sizeof(n), h);
        for (const Sample& s : set.samples) {
            const double v[9] = {s.wi.x, s.wi.y, s.wi.z, s.wo.x, s.wo.y, s.wo.z, s.value[0], s.value[1], s.value[2]};
            h = detail::fnv1a(reinterpret_cast<const unsigned char*>(v), sizeof(v), h);
        }
    }
    return h;
}

std::vector<SampleSet> synthetic_dataset(const std::string& spec) {
    auto fail = [&](const std::string& why) { throw Error(ErrorCode::ParseError, "synthetic:" + spec + ": " + why); };
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
        const auto colon = spec.find(':', start);
        parts.push_back(spec.substr(start, colon - start));
        if (colon == std::string::npos) break;
        start = colon + 1;
    }
    const std::string kind = parts[0];
    const bool planted = kind.rfind("planted-", 0) == 0;
    if (!planted && kind != "ggx") fail("unknown kind '" + kind + "'");
    Corruption corruption = Corruption::FresnelSwap;
    if (planted) {
        try {
            corruption = parse_corruption(kind.substr(8));
        } catch (const Error&) {
            fail("unknown corruption '" + kind.substr(8) + "'");
        }
    }
    std::uint64_t materials = 4, samples = 10000, seed = 1;
    double sigma = planted ? 0.0 : 0.1;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto eq = parts[i].find('=');
        if (eq == std::string::npos) fail("expected key=value, got '" + parts[i] + "'");
        const std::string key = parts[i].substr(0, eq), val = parts[i].substr(eq + 1);
        std::size_t used = 0;
        try {
            if (key == "sigma") {
                sigma = std::stod(val, &used);
            } else if (key == "materials" || key == "samples" || key == "seed") {
                if (val.empty() || val[0] == '-') fail(key + " must be non-negative");
                const std::uint64_t v = std::stoull(val, &used);
                (key == "materials" ? materials : key == "samples" ? samples : seed) = v;
            } else {
                fail("unknown key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            fail("bad value for " + key);
        }
        if (used != val.size()) fail("bad value for " + key);
    }
    if (materials < 1 || samples < 1) fail("materials and samples must be positive");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) fail("sigma must be a finite non-negative number");
    const auto params = random_materials(materials, seed);
    const NoiseModel noise{1.0, sigma};
    return planted ? gen_corrupted_ggx(params, corruption, samples, noise, seed + 2)
                   : gen_synthetic_ggx(params, samples, noise, seed + 2);
}

}  // namespace neam

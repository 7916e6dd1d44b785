// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file data_io.hpp
///
/// Reflectance samples: MERL tables, synthetic virtual measurements and the
/// binary sample-set file.
///

#pragma once

#include "neam/brdf_core.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace neam {

struct Sample {
    Direction wi;
    Direction wo;
    Rgb value{};

    bool operator==(const Sample&) const = default;
};

enum class SampleSource { Merl, SyntheticGgx, File };

struct SampleSet {
    std::string material_id;
    std::vector<Sample> samples;
    SampleSource source = SampleSource::File;

    /// Throws OutOfRange unless every direction is unit and every value is
    /// finite and non-negative.
    void validate(double unit_tolerance = 1e-9) const;

    bool operator==(const SampleSet&) const = default;
};

// ---------------------------------------------------------------------------
// MERL
// ---------------------------------------------------------------------------

/// Standard MERL layout: (theta_h, theta_d, phi_d) = (90, 90, 180) cells,
/// three channel planes of doubles. Raw stored values are kept so a write
/// reproduces the input bytes; scaling happens on lookup.
struct MerlTable {
    static constexpr int kThetaH = 90;
    static constexpr int kThetaD = 90;
    static constexpr int kPhiD = 180;
    static constexpr std::size_t kCells = static_cast<std::size_t>(kThetaH) * kThetaD * kPhiD;
    static constexpr double kScale[3] = {1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0};

    std::vector<double> raw = std::vector<double>(3 * kCells, 0.0);  // R plane, G plane, B plane

    static std::size_t index(int theta_h, int theta_d, int phi_d) {
        return static_cast<std::size_t>(phi_d) + static_cast<std::size_t>(theta_d) * kPhiD +
               static_cast<std::size_t>(theta_h) * kPhiD * kThetaD;
    }

    /// Scaled reflectance of one cell; cells with a negative stored value read
    /// as zero.
    Rgb cell(int theta_h, int theta_d, int phi_d) const;
};

MerlTable read_merl(const std::filesystem::path& path);
void write_merl(const MerlTable& table, const std::filesystem::path& path);

/// Cell indices used by merl_lookup (square-root warp on theta_h).
int merl_theta_h_index(double theta_h);
int merl_theta_d_index(double theta_d);
int merl_phi_d_index(double phi_d);

/// Nearest-cell lookup; zero if either direction is below the horizon.
Rgb merl_lookup(const MerlTable& table, const Direction& wi, const Direction& wo);

// ---------------------------------------------------------------------------
// Sampling and synthetic data
// ---------------------------------------------------------------------------

enum class SamplingMode { Isotropic3Angle, Anisotropic4Angle };

/// Uniform draws of the half/difference angles (phi_h = 0 in isotropic
/// mode); pairs with a direction at or below the horizon are redrawn.
std::vector<std::pair<Direction, Direction>> sample_directions(std::size_t n, SamplingMode mode,
                                                               std::uint64_t seed);

/// One fixed view, n light directions uniform over the upper hemisphere.
std::vector<std::pair<Direction, Direction>> sample_fixed_view(std::size_t n, const Direction& wo,
                                                               std::uint64_t seed);

struct NoiseModel {
    double mu = 1.0;
    double sigma = 0.1;
};

/// GGX materials spread over plausible ranges, deterministic in the seed.
std::vector<AnalyticalParams> random_materials(std::size_t count, std::uint64_t seed);

/// Virtual measurements of the analytical GGX model with multiplicative
/// Gaussian noise (one factor per sample, clamped at zero).
std::vector<SampleSet> gen_synthetic_ggx(const std::vector<AnalyticalParams>& params, std::size_t n_per_material,
                                         NoiseModel noise, std::uint64_t seed,
                                         SamplingMode mode = SamplingMode::Anisotropic4Angle);

/// Planted alternatives for one GGX term.
///  - FresnelSwap: F0 + (1 - F0)(1 - cos_d)^2, a softer falloff than Schlick's
///    fifth power that no choice of GGX parameters reproduces.
///  - FresnelExact: exact dielectric Fresnel with the IOR implied by F0
///    (within a few percent of Schlick, mostly at grazing angles).
///  - GeometrySwap: height-correlated instead of separable Smith.
///  - NormSwap: Kelemen normalization 1 / |wi + wo|^2 instead of 1 / (4 cos_i cos_o).
enum class Corruption { FresnelSwap, FresnelExact, GeometrySwap, NormSwap };

Corruption parse_corruption(const std::string& name);
const char* corruption_name(Corruption c);

Rgb eval_corrupted_ggx(const AnalyticalParams& p, Corruption corruption, const Direction& wi, const Direction& wo);

std::vector<SampleSet> gen_corrupted_ggx(const std::vector<AnalyticalParams>& params, Corruption corruption,
                                         std::size_t n_per_material, NoiseModel noise, std::uint64_t seed,
                                         SamplingMode mode = SamplingMode::Anisotropic4Angle);

/// Queries a MERL table at n isotropic direction pairs.
SampleSet merl_to_sampleset(const MerlTable& table, std::size_t n, std::uint64_t seed, std::string material_id);

/// Inline dataset description, "<kind>[:key=value]...". Kinds: ggx,
/// planted-fresnel, planted-fresnel-exact, planted-geometry, planted-norm.
/// Keys: materials (4), samples (10000), sigma (0 for planted kinds, 0.1
/// for ggx), seed (1). Materials come from random_materials(materials,
/// seed) and the samples from the stream seed + 2. Throws ParseError.
std::vector<SampleSet> synthetic_dataset(const std::string& spec);

// ---------------------------------------------------------------------------
// Sample-set file: "NEAS", u32 version 1, u32 count, count x 9 f32 LE
// (wi xyz, wo xyz, rgb).
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kSampleSetVersion = 1;

void write_sampleset(const SampleSet& set, const std::filesystem::path& path);
/// Directions are renormalized after the f32 round trip. The material id is
/// the file stem.
SampleSet read_sampleset(const std::filesystem::path& path);

/// FNV-1a over every sample of every set, in order.
std::uint64_t content_hash(const std::vector<SampleSet>& sets);

}  // namespace neam

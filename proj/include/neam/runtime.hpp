// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file runtime.hpp
///
/// Using an enhanced model after the search: per-material fitting with frozen
/// module weights, model files, analytical proxy refit, shader export and
/// BRDF slice images.
///

#pragma once

#include "neam/optimize.hpp"

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace neam {

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct FitResult {
    AnalyticalParams analytical;
    NeuralParamVec neural;
    double final_loss = 0.0;
    int epochs_run = 0;
    bool diverged = false;

    bool operator==(const FitResult&) const = default;
    MaterialParams params() const { return {analytical, neural}; }
};

struct FitConfig {
    int epochs = 1000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    /// Starting point; analytical defaults and neural 0.5 when unset.
    std::optional<MaterialParams> init;
    std::size_t chunk_size = 4096;
};

/// Full-batch RMSProp over the 12 + p per-material parameters; module
/// weights are never touched. On a non-finite loss the best parameters seen
/// so far are returned with diverged set.
FitResult fit_material(const EnhancedModel& model, const SampleSet& data, const FitConfig& cfg = {});

/// Best pure-GGX fit (all-zero state) of the data.
FitResult fit_analytical_proxy(const SampleSet& data, const FitConfig& cfg = {});

/// Proxy for a fitted model: the model is sampled at n direction pairs and
/// the samples are refitted.
FitResult fit_analytical_proxy(const EnhancedModel& model, const FitResult& fit, std::size_t n_samples,
                               std::uint64_t seed, const FitConfig& cfg = {});

/// Mean loss of one material's parameters on a sample set.
double evaluate_loss(const EnhancedModel& model, const MaterialParams& params, const SampleSet& data);

/// Mean absolute log error: mean over samples and channels of
/// |log(1 + truth) - log(1 + pred)| (no cosine weight).
double mean_abs_log_error(const EnhancedModel& model, const MaterialParams& params, const SampleSet& data);

// ---------------------------------------------------------------------------
// Fit results as text and material editing
// ---------------------------------------------------------------------------

/// key=value lines; doubles are printed with 17 significant digits.
std::string fit_to_text(const FitResult& fit);
FitResult fit_from_text(const std::string& text);
void save_fit(const FitResult& fit, const std::filesystem::path& path);
FitResult load_fit(const std::filesystem::path& path);

/// Keys: rho_d, rho_s (all three channels), rho_d_r/g/b, rho_s_r/g/b,
/// alpha_x, alpha_y, f0, n_theta, n_phi, t_theta, z<k> (neural entry k).
/// Throws OutOfRange on an unknown key or an edit leaving the valid range.
FitResult edit_params(const FitResult& fit, const std::map<std::string, double>& edits);

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelFileVersion = 1;

/// "NEAM", u32 version, the constants the evaluation depends on, the model,
/// and a trailing FNV-1a checksum.
void save_model(const EnhancedModel& model, const std::filesystem::path& path);
EnhancedModel load_model(const std::filesystem::path& path);

std::vector<unsigned char> encode_model_file(const EnhancedModel& model);
EnhancedModel decode_model_file(const std::vector<unsigned char>& bytes);

// ---------------------------------------------------------------------------
// Shader export
// ---------------------------------------------------------------------------

/// One function, `vec3 eval_brdf(vec3 wi, vec3 wo, float params[P])`, with
/// module weights and the fitted parameters (default_params) inlined as
/// constant arrays.
std::string shader_source(const EnhancedModel& model, const FitResult& fit);
void export_shader(const EnhancedModel& model, const FitResult& fit, const std::filesystem::path& path);

/// Reference interpreter for the exported subset, evaluated in f32.
class ShaderProgram {
public:
    static ShaderProgram parse(const std::string& source);

    ShaderProgram(ShaderProgram&&) noexcept;
    ShaderProgram& operator=(ShaderProgram&&) noexcept;
    ~ShaderProgram();

    int param_count() const;
    std::array<float, 3> eval(const std::array<float, 3>& wi, const std::array<float, 3>& wo,
                              std::span<const float> params) const;
    /// Contents of a global constant array (empty if absent).
    std::vector<float> constant(const std::string& name) const;
    std::vector<std::string> constant_names() const;

private:
    struct Impl;
    explicit ShaderProgram(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Slices
// ---------------------------------------------------------------------------

struct SliceSpec {
    enum class Mode { FixedWo, ThetaHThetaD };
    Mode mode = Mode::FixedWo;
    double theta_o = 0.0;
    double phi_o = 0.0;
    int resolution = 256;
};

/// Row-major RGB floats, row 0 at the top.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    float at(int x, int y, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

struct SlicePixel {
    Direction wi, wo;
    bool valid = false;
};

/// Equal-area concentric map from [0,1]^2 to the upper hemisphere.
Direction square_to_hemisphere(double u, double v);

/// Directions behind every pixel. FixedWo: wi over the hemisphere via the
/// concentric map, pixels outside the disk invalid. ThetaHThetaD: theta_d
/// along x, theta_h along y, phi_d = pi / 2.
std::vector<SlicePixel> slice_pixels(const SliceSpec& spec);

/// Cosine-weighted BRDF values, zero at invalid pixels.
Image render_slice_image(const EnhancedModel& model, const FitResult& fit, const SliceSpec& spec);
void write_pfm(const Image& img, const std::filesystem::path& path);
Image read_pfm(const std::filesystem::path& path);
void render_slice(const EnhancedModel& model, const FitResult& fit, const SliceSpec& spec,
                  const std::filesystem::path& path);

}  // namespace neam

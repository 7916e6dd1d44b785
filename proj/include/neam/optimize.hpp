// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file optimize.hpp
///
/// Log-relative L1 loss, RMSProp, and joint training of module weights,
/// neural parameters and analytical parameters.
///

#pragma once

#include "neam/data_io.hpp"
#include "neam/graph.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace neam {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

inline constexpr double kLogFloor = 1e-12;

/// sum_c |log(1 + truth_c cos_i) - log(1 + pred_c cos_i)|, log arguments
/// clamped to >= 1e-12.
double loss_log_l1(const Rgb& pred, const Rgb& truth, double cos_i);

/// Loss and its gradient with respect to pred (truth is a constant).
double loss_log_l1_grad(const Rgb& pred, const Rgb& truth, double cos_i, Rgb& d_pred);

/// Cosine weight against the geometric normal (0, 0, 1).
inline double loss_cosine(const Direction& wi) { return wi.z > 0.0 ? wi.z : 0.0; }

// ---------------------------------------------------------------------------
// RMSProp
// ---------------------------------------------------------------------------

struct RmsPropConfig {
    double alpha = 0.9;
    double lr = 1e-3;
    double eps = 1e-8;
};

class RmsProp {
public:
    explicit RmsProp(std::size_t n = 0, RmsPropConfig cfg = {}) : cfg_(cfg), v_(n, 0.0) {}

    /// v <- alpha v + (1 - alpha) g^2; theta <- theta - lr g / (sqrt(v) + eps).
    void step(std::span<double> params, std::span<const double> grads);

    const std::vector<double>& accumulator() const { return v_; }
    std::vector<double>& accumulator() { return v_; }
    const RmsPropConfig& config() const { return cfg_; }

private:
    RmsPropConfig cfg_;
    std::vector<double> v_;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct MaterialParams {
    AnalyticalParams analytical;
    NeuralParamVec neural;

    bool operator==(const MaterialParams&) const = default;
};

using ParamTable = std::vector<MaterialParams>;

inline constexpr double kNeuralInit = 0.5;

/// Analytical defaults and neural values of 0.5. The seed is accepted for
/// interface stability; the initialization itself is deterministic.
ParamTable init_material_params(std::size_t n_materials, int p_neural, std::uint64_t seed = 0);

/// Maps analytical parameters back into their valid ranges after a step:
/// albedos >= 0, roughness in [alpha_min, 1], F0 in [0, 1], a negative
/// polar angle is reflected through the pole, azimuths wrap to [0, 2 pi).
void project_params(AnalyticalParams& p);

std::vector<MaterialInput> to_inputs(const ParamTable& table);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

/// Samples from several materials, flattened.
struct SamplePool {
    std::vector<int> material;
    std::vector<Direction> wi;
    std::vector<Direction> wo;
    std::vector<Rgb> truth;

    std::size_t size() const { return material.size(); }
    void push(int m, const Sample& s);
};

struct DataSplit {
    SamplePool train;
    SamplePool val;
    std::size_t n_materials = 0;
};

/// Holds out round(fraction * n) samples of each material (at least one when
/// the material has two or more samples), chosen by a seeded shuffle.
DataSplit split_data(const std::vector<SampleSet>& sets, double val_fraction, std::uint64_t seed);

/// Everything in the training pool, nothing held out.
DataSplit pool_all(const std::vector<SampleSet>& sets);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
    std::size_t batch_size = 100000;
    int epochs_per_stage = 30;
    std::uint64_t seed = 0;
    RmsPropConfig rmsprop;
    double clip_norm = 1e3;
    /// Samples per evaluation chunk; gradients are summed chunk by chunk in a
    /// fixed order, so results do not depend on the thread count.
    std::size_t chunk_size = 2048;
    int threads = 1;

    void validate() const;
};

/// Which parameter groups receive updates.
struct UpdateMask {
    bool weights = true;
    bool neural = true;
    bool analytical = true;
};

/// A model together with its per-material parameters.
struct Candidate {
    EnhancedModel model;
    ParamTable params;
};

struct CandidateResult {
    double train_loss = 0.0;  // mean over the last epoch
    double val_loss = 0.0;    // mean over the held-out pool
    bool diverged = false;
    int epochs_run = 0;
};

/// One line per epoch and candidate: "epoch, state_bits, train_loss, val_loss".
using LogSink = std::function<void(const std::string&)>;

std::string format_log_line(int epoch, const EnhancementState& state, double train_loss, double val_loss);

/// Mean log-relative loss of a candidate over a pool (forward only).
double mean_loss(const Candidate& c, const SamplePool& pool, std::size_t chunk_size = 2048);

/// Mean loss and its gradient over the given sample indices.
double batch_gradient(const Candidate& c, const SamplePool& pool, std::span<const std::size_t> indices,
                      std::size_t chunk_size, BatchGradients& grads);

/// Trains one candidate in place for cfg.epochs_per_stage epochs. A
/// non-finite loss or gradient stops training and reports val_loss = +inf.
CandidateResult train_candidate(Candidate& c, const DataSplit& data, const TrainConfig& cfg,
                                std::uint64_t candidate_seed, const UpdateMask& mask = {},
                                const LogSink& log = {});

/// Per-candidate stream: independent of candidate order and thread count.
std::uint64_t candidate_seed(std::uint64_t seed, const EnhancementState& state);

/// Trains every candidate independently (up to cfg.threads at a time).
std::vector<CandidateResult> train_jointly(std::vector<Candidate>& candidates, const DataSplit& data,
                                           const TrainConfig& cfg, const LogSink& log = {});

}  // namespace neam

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file graph.hpp
///
/// Computational graph of an analytical BRDF. Each slot (terminal node or
/// binary operator) is realized either by its closed form or by a neural
/// module, as selected by the enhancement state. Evaluation works on
/// column batches; the backward pass is exact reverse mode, with terminal
/// partials supplied by forward-mode jets.
///

#pragma once

#include "neam/brdf_core.hpp"
#include "neam/neural.hpp"

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace neam {

enum class OpKind { Add, Mul };

/// Which concatenation a replacement module receives.
enum class InputSignature { ParamsOnly, ParamsAndDirections, Operands };

struct NodeSpec {
    int id = 0;
    bool terminal = true;
    Term term = Term::Lambertian;  // terminals only
    OpKind op = OpKind::Add;       // operators only
    std::vector<int> children;     // empty for terminals, two for operators
    int out_dim = 1;
    InputSignature signature = InputSignature::ParamsOnly;
    std::string label;
};

struct CompGraph {
    std::string model_name;
    std::vector<NodeSpec> nodes;  // topological order, root last

    int n_slots() const { return static_cast<int>(nodes.size()); }
    int root() const { return n_slots() - 1; }
    int terminal_count() const;
    int operator_count() const;

    /// Throws DimensionMismatch if the node list is not a single-rooted DAG
    /// in topological order with consistent dimensions.
    void validate() const;
};

CompGraph build_ggx_graph();
CompGraph build_cooktorrance_graph();
CompGraph build_ward_graph();
/// M + Spec with the whole specular lobe as one RGB terminal (3 slots).
CompGraph build_toy_graph();
/// "ggx", "cooktorrance", "ward" or "toy".
CompGraph build_graph(const std::string& name);

struct EnhancementState {
    std::vector<std::uint8_t> bits;

    EnhancementState() = default;
    explicit EnhancementState(int n) : bits(static_cast<std::size_t>(n), 0) {}
    static EnhancementState all_ones(int n);
    /// Parses a string of '0'/'1' characters, slot 0 first.
    static EnhancementState parse(const std::string& s);

    int size() const { return static_cast<int>(bits.size()); }
    int ones() const;
    bool operator[](int i) const { return bits[static_cast<std::size_t>(i)] != 0; }
    std::string str() const;

    auto operator<=>(const EnhancementState&) const = default;
};

int hamming_distance(const EnhancementState& a, const EnhancementState& b);

struct StateConstraints {
    std::map<int, int> fixed_bits;
    std::optional<int> max_ones;

    bool admits(const EnhancementState& s) const;
};

/// All states within Hamming distance <= threshold that satisfy the
/// constraints, the input state first; then ordered by flip count and
/// lexicographically by flipped slot indices.
std::vector<EnhancementState> state_neighbors(const EnhancementState& state, int threshold,
                                              const StateConstraints& constraints = {});

struct ModuleConfig {
    int p_neural = 27;
    std::array<int, 3> hidden = kDefaultHidden;
    double leaky_slope = kDefaultLeakySlope;

    bool operator==(const ModuleConfig&) const = default;
};

using NeuralParamVec = std::vector<double>;

struct EnhancedModel {
    CompGraph graph;
    EnhancementState state;
    ModuleConfig config;
    std::map<int, NeuralModule> modules;  // exactly the slots whose bit is set

    /// Modules for set bits are Xavier-initialized with seeds derived from
    /// (seed, slot).
    static EnhancedModel create(CompGraph graph, EnhancementState state, ModuleConfig config = {},
                                std::uint64_t seed = 0);

    int module_input_dim(int slot) const;
    std::vector<int> module_dims(int slot) const;

    /// Switches a slot to neural (fresh Xavier module) or back to analytical.
    void set_slot(int slot, bool neural, std::uint64_t seed);

    std::size_t module_weight_count() const;
    int parameter_count() const { return param::kCount + config.p_neural; }

    /// Throws DimensionMismatch if modules and state disagree.
    void validate() const;
};

/// Per-material inputs in decoded parameter space.
struct MaterialInput {
    ParamArray<double> analytical{};
    NeuralParamVec neural;
};

struct BatchGradients {
    std::vector<ParamArray<double>> d_analytical;  // per material
    std::vector<NeuralParamVec> d_neural;          // per material
    std::map<int, ModuleGradient> d_modules;       // per neural slot

    static BatchGradients zeros(const EnhancedModel& model, std::size_t n_materials);
    void set_zero();
};

/// Batched evaluator bound to one model. Holds the intermediates of the last
/// forward pass, so each worker owns its own instance.
class GraphEvaluator {
public:
    explicit GraphEvaluator(const EnhancedModel& model);

    /// Returns 3 x B reflectance. With `for_backward` the pass records
    /// everything backward() needs.
    const Eigen::MatrixXd& forward(std::span<const MaterialInput> materials, std::span<const int> material_of,
                                   std::span<const Direction> wi, std::span<const Direction> wo,
                                   bool for_backward);

    /// Accumulates gradients of sum_b <grad_out(:, b), output(:, b)>.
    void backward(const Eigen::MatrixXd& grad_out, BatchGradients& grads);

    /// Output of one slot from the last forward pass (out_dim x B).
    const Eigen::MatrixXd& slot_values(int slot) const { return values_.at(static_cast<std::size_t>(slot)); }
    /// Recorded activations of a neural slot (recording passes only).
    const NeuralModule::Activations& activations(int slot) const { return caches_.at(static_cast<std::size_t>(slot)); }

private:
    const EnhancedModel& model_;
    std::vector<int> material_of_;
    std::size_t n_materials_ = 0;
    std::vector<Eigen::MatrixXd> values_;     // per slot, out_dim x B
    std::vector<Eigen::MatrixXd> jacobians_;  // analytical terminals, (out_dim * 12) x B
    std::vector<NeuralModule::Activations> caches_;
    bool have_intermediates_ = false;
};

Rgb forward(const EnhancedModel& model, const AnalyticalParams& a, const NeuralParamVec& z,
            const Direction& wi, const Direction& wo);

struct Gradients {
    ParamArray<double> d_analytical{};
    NeuralParamVec d_neural;
    std::map<int, ModuleGradient> d_weights;
};

Gradients backward(const EnhancedModel& model, const AnalyticalParams& a, const NeuralParamVec& z,
                   const Direction& wi, const Direction& wo, const Rgb& grad_out);

}  // namespace neam

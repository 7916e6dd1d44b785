// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "neam/common.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace neam {

inline constexpr double kDefaultLeakySlope = 0.01;
inline constexpr std::array<int, 3> kDefaultHidden{16, 32, 16};

struct DenseLayer {
    Eigen::MatrixXd weight;  // fan_out x fan_in
    Eigen::VectorXd bias;    // fan_out

    bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

/// Gradient buffers shaped like a module's layers.
struct ModuleGradient {
    std::vector<DenseLayer> layers;

    void set_zero();
    void add(const ModuleGradient& other);
    double squared_norm() const;
    void scale(double s);
};

/// [d_in, hidden..., d_out]; always five entries (four dense layers).
std::vector<int> module_dims(int d_in, const std::array<int, 3>& hidden, int d_out);

/// Sum over layers of fan_in * fan_out + fan_out.
std::size_t weight_count(std::span<const int> dims);

/// A small fully connected network: four dense layers, leaky ReLU after
/// the first three. Column-major batches: one sample per column.
class NeuralModule {
public:
    struct Activations {
        std::vector<Eigen::MatrixXd> pre;   // pre-activation of each layer
        std::vector<Eigen::MatrixXd> post;  // post[0] = input, post[l + 1] = act(pre[l])
    };

    NeuralModule() = default;
    /// All weights and biases zero.
    explicit NeuralModule(std::vector<int> dims, double leaky_slope = kDefaultLeakySlope);

    /// Uniform Xavier weights, zero biases; deterministic in the seed.
    static NeuralModule xavier(std::vector<int> dims, std::uint64_t seed,
                               double leaky_slope = kDefaultLeakySlope);

    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    const std::vector<int>& dims() const { return dims_; }
    double leaky_slope() const { return leaky_slope_; }
    std::size_t weight_count() const { return neam::weight_count(dims_); }

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x, Activations* cache = nullptr) const;

    /// Accumulates weight/bias gradients of <grad_out, output> into grad and
    /// returns the gradient with respect to the input batch.
    Eigen::MatrixXd backward_batch(const Activations& cache, const Eigen::MatrixXd& grad_out,
                                   ModuleGradient& grad) const;

    ModuleGradient zero_gradient() const;

    bool operator==(const NeuralModule& o) const {
        return dims_ == o.dims_ && leaky_slope_ == o.leaky_slope_ && layers_ == o.layers_;
    }

private:
    std::vector<int> dims_;
    double leaky_slope_ = kDefaultLeakySlope;
    std::vector<DenseLayer> layers_;
};

struct MlpGradients {
    std::vector<Eigen::MatrixXd> d_weights;
    std::vector<Eigen::VectorXd> d_biases;
    Eigen::VectorXd d_x;
};

/// Single-sample convenience wrapper over forward_batch/backward_batch.
MlpGradients mlp_backward(const NeuralModule& m, const Eigen::VectorXd& x, const Eigen::VectorXd& grad_out);

}  // namespace neam

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/neural.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace neam {

namespace {

void check_dims(const std::vector<int>& dims) {
    if (dims.size() != 5) {
        throw Error(ErrorCode::DimensionMismatch, "neural module needs exactly four layers");
    }
    for (int d : dims) {
        if (d < 1) throw Error(ErrorCode::DimensionMismatch, "layer width must be positive");
    }
}

}  // namespace

void ModuleGradient::set_zero() {
    for (auto& l : layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
}

void ModuleGradient::add(const ModuleGradient& other) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].weight += other.layers[i].weight;
        layers[i].bias += other.layers[i].bias;
    }
}

double ModuleGradient::squared_norm() const {
    double s = 0.0;
    for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s;
}

void ModuleGradient::scale(double s) {
    for (auto& l : layers) {
        l.weight *= s;
        l.bias *= s;
    }
}

std::vector<int> module_dims(int d_in, const std::array<int, 3>& hidden, int d_out) {
    return {d_in, hidden[0], hidden[1], hidden[2], d_out};
}

std::size_t weight_count(std::span<const int> dims) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        n += static_cast<std::size_t>(dims[i]) * dims[i + 1] + dims[i + 1];
    }
    return n;
}

NeuralModule::NeuralModule(std::vector<int> dims, double leaky_slope)
    : dims_(std::move(dims)), leaky_slope_(leaky_slope) {
    check_dims(dims_);
    layers_.resize(4);
    for (int l = 0; l < 4; ++l) {
        layers_[l].weight = Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]);
        layers_[l].bias = Eigen::VectorXd::Zero(dims_[l + 1]);
    }
}

NeuralModule NeuralModule::xavier(std::vector<int> dims, std::uint64_t seed, double leaky_slope) {
    NeuralModule m(std::move(dims), leaky_slope);
    std::mt19937_64 rng(seed);
    for (auto& layer : m.layers_) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.weight.cols() + layer.weight.rows()));
        std::uniform_real_distribution<double> u(-bound, bound);
        // Row-major fill so the draw order does not depend on storage order.
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = u(rng);
        }
    }
    return m;
}

Eigen::VectorXd NeuralModule::forward(const Eigen::VectorXd& x) const {
    return forward_batch(x);
}

Eigen::MatrixXd NeuralModule::forward_batch(const Eigen::MatrixXd& x, Activations* cache) const {
    if (x.rows() != input_dim()) {
        std::ostringstream os;
        os << "module expects " << input_dim() << " inputs, got " << x.rows();
        throw Error(ErrorCode::DimensionMismatch, os.str());
    }
    if (cache) {
        cache->pre.resize(4);
        cache->post.resize(4);
        cache->post[0] = x;
    }
    Eigen::MatrixXd a = x;
    for (int l = 0; l < 4; ++l) {
        Eigen::MatrixXd z = layers_[l].weight * a;
        z.colwise() += layers_[l].bias;
        if (l == 3) {
            if (cache) cache->pre[l] = z;
            return z;
        }
        a = z.unaryExpr([s = leaky_slope_](double v) { return v > 0.0 ? v : s * v; });
        if (cache) {
            cache->pre[l] = std::move(z);
            cache->post[l + 1] = a;
        }
    }
    return a;  // unreachable
}

Eigen::MatrixXd NeuralModule::backward_batch(const Activations& cache, const Eigen::MatrixXd& grad_out,
                                             ModuleGradient& grad) const {
    Eigen::MatrixXd delta = grad_out;
    for (int l = 3; l >= 0; --l) {
        if (l < 3) {
            delta.array() *= cache.pre[l].array().unaryExpr(
                [s = leaky_slope_](double v) { return v > 0.0 ? 1.0 : s; });
        }
        grad.layers[l].weight.noalias() += delta * cache.post[l].transpose();
        grad.layers[l].bias += delta.rowwise().sum();
        delta = layers_[l].weight.transpose() * delta;
    }
    return delta;
}

ModuleGradient NeuralModule::zero_gradient() const {
    ModuleGradient g;
    g.layers.resize(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        g.layers[l].weight = Eigen::MatrixXd::Zero(layers_[l].weight.rows(), layers_[l].weight.cols());
        g.layers[l].bias = Eigen::VectorXd::Zero(layers_[l].bias.size());
    }
    return g;
}

MlpGradients mlp_backward(const NeuralModule& m, const Eigen::VectorXd& x, const Eigen::VectorXd& grad_out) {
    if (grad_out.size() != m.output_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "grad_out length differs from module output");
    }
    NeuralModule::Activations cache;
    m.forward_batch(x, &cache);
    ModuleGradient g = m.zero_gradient();
    MlpGradients out;
    out.d_x = m.backward_batch(cache, grad_out, g);
    for (auto& l : g.layers) {
        out.d_weights.push_back(std::move(l.weight));
        out.d_biases.push_back(std::move(l.bias));
    }
    return out;
}

}  // namespace neam

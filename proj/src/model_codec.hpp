// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Shared encoders for models and parameter tables (model files and search
// checkpoints). Doubles are stored as f64 so round trips are exact.

#include "binary_io.hpp"
#include "neam/optimize.hpp"

#include <string>

namespace neam::detail {

inline void encode_state(ByteWriter& w, const EnhancementState& s) {
    w.u32(static_cast<std::uint32_t>(s.size()));
    for (auto b : s.bits) w.u8(b ? 1 : 0);
}

inline EnhancementState decode_state(ByteReader& r) {
    const std::uint32_t n = r.u32();
    if (n > 4096) throw Error(ErrorCode::BadHeader, "implausible state length");
    EnhancementState s(static_cast<int>(n));
    for (auto& b : s.bits) {
        b = r.u8();
        if (b > 1) throw Error(ErrorCode::BadHeader, "state bit is neither 0 nor 1");
    }
    return s;
}

inline void encode_model(ByteWriter& w, const EnhancedModel& m) {
    w.str(m.graph.model_name);
    encode_state(w, m.state);
    w.i32(m.config.p_neural);
    for (int h : m.config.hidden) w.i32(h);
    w.f64(m.config.leaky_slope);
    w.u32(static_cast<std::uint32_t>(m.modules.size()));
    for (const auto& [slot, module] : m.modules) {
        w.i32(slot);
        w.u32(static_cast<std::uint32_t>(module.dims().size()));
        for (int d : module.dims()) w.i32(d);
        w.f64(module.leaky_slope());
        for (const auto& l : module.layers()) {
            for (Eigen::Index i = 0; i < l.weight.size(); ++i) w.f64(l.weight.data()[i]);
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) w.f64(l.bias.data()[i]);
        }
    }
}

inline EnhancedModel decode_model(ByteReader& r) {
    const std::string name = r.str();
    CompGraph graph;
    try {
        graph = build_graph(name);
    } catch (const Error&) {
        throw Error(ErrorCode::BadHeader, "unknown model name '" + name + "'");
    }
    const EnhancementState state = decode_state(r);
    if (state.size() != graph.n_slots()) throw Error(ErrorCode::BadHeader, "state length differs from the graph");
    ModuleConfig cfg;
    cfg.p_neural = r.i32();
    for (int& h : cfg.hidden) h = r.i32();
    cfg.leaky_slope = r.f64();
    if (cfg.p_neural < 0 || cfg.p_neural > 4096) throw Error(ErrorCode::BadHeader, "neural parameter count");
    for (int h : cfg.hidden) {
        if (h < 1 || h > 4096) throw Error(ErrorCode::BadHeader, "hidden width");
    }
    EnhancedModel m = EnhancedModel::create(std::move(graph), EnhancementState(state.size()), cfg, 0);
    const std::uint32_t n_modules = r.u32();
    if (n_modules != static_cast<std::uint32_t>(state.ones())) {
        throw Error(ErrorCode::BadHeader, "module count differs from the state");
    }
    for (std::uint32_t k = 0; k < n_modules; ++k) {
        const int slot = r.i32();
        if (slot < 0 || slot >= state.size() || !state[slot] || m.modules.count(slot)) {
            throw Error(ErrorCode::BadHeader, "module slot " + std::to_string(slot));
        }
        const std::uint32_t n_dims = r.u32();
        std::vector<int> dims(n_dims);
        for (int& d : dims) d = r.i32();
        const double slope = r.f64();
        m.state.bits[static_cast<std::size_t>(slot)] = 1;
        if (dims != m.module_dims(slot)) throw Error(ErrorCode::BadHeader, "module shape at slot " + std::to_string(slot));
        NeuralModule module(dims, slope);
        for (auto& l : module.layers()) {
            for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = r.f64();
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias.data()[i] = r.f64();
        }
        m.modules.emplace(slot, std::move(module));
    }
    m.validate();
    return m;
}

inline void encode_params(ByteWriter& w, const ParamTable& t) {
    w.u32(static_cast<std::uint32_t>(t.size()));
    for (const auto& m : t) {
        for (double v : m.analytical.to_array()) w.f64(v);
        w.u32(static_cast<std::uint32_t>(m.neural.size()));
        for (double v : m.neural) w.f64(v);
    }
}

inline ParamTable decode_params(ByteReader& r) {
    const std::uint32_t n = r.u32();
    r.need(static_cast<std::size_t>(n) * (param::kCount * 8 + 4));
    ParamTable t(n);
    for (auto& m : t) {
        ParamArray<double> a;
        for (double& v : a) v = r.f64();
        m.analytical = AnalyticalParams::from_array(a);
        const std::uint32_t p = r.u32();
        r.need(static_cast<std::size_t>(p) * 8);
        m.neural.resize(p);
        for (double& v : m.neural) v = r.f64();
    }
    return t;
}

/// Appends an FNV-1a checksum of everything written so far.
inline void seal(ByteWriter& w) {
    const auto& d = w.data();
    w.u64(fnv1a(d.data(), d.size()));
}

/// Verifies and strips the trailing checksum.
inline std::size_t checked_length(const std::vector<unsigned char>& bytes, const std::string& what) {
    if (bytes.size() < 8) throw Error(ErrorCode::Truncated, what + ": too short");
    const std::size_t n = bytes.size() - 8;
    ByteReader tail(bytes.data() + n, 8);
    if (tail.u64() != fnv1a(bytes.data(), n)) throw Error(ErrorCode::ChecksumMismatch, what + ": checksum mismatch");
    return n;
}

}  // namespace neam::detail

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/optimize.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace neam {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

double loss_log_l1(const Rgb& pred, const Rgb& truth, double cos_i) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double lt = std::log(std::max(1.0 + truth[c] * cos_i, kLogFloor));
        const double lp = std::log(std::max(1.0 + pred[c] * cos_i, kLogFloor));
        sum += std::abs(lt - lp);
    }
    return sum;
}

double loss_log_l1_grad(const Rgb& pred, const Rgb& truth, double cos_i, Rgb& d_pred) {
    double sum = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double at = 1.0 + truth[c] * cos_i;
        const double ap = 1.0 + pred[c] * cos_i;
        const double lt = std::log(std::max(at, kLogFloor));
        const double lp = std::log(std::max(ap, kLogFloor));
        const double diff = lp - lt;
        sum += std::abs(diff);
        // The clamp is flat below the floor.
        if (ap <= kLogFloor || diff == 0.0) {
            d_pred[c] = 0.0;
        } else {
            d_pred[c] = (diff > 0.0 ? 1.0 : -1.0) * cos_i / ap;
        }
    }
    return sum;
}

// ---------------------------------------------------------------------------
// RMSProp
// ---------------------------------------------------------------------------

void RmsProp::step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != v_.size() || grads.size() != v_.size()) {
        throw Error(ErrorCode::DimensionMismatch, "RMSProp state, parameter and gradient sizes differ");
    }
    const double a = cfg_.alpha;
    for (std::size_t i = 0; i < v_.size(); ++i) {
        const double g = grads[i];
        v_[i] = a * v_[i] + (1.0 - a) * g * g;
        params[i] -= cfg_.lr * g / (std::sqrt(v_[i]) + cfg_.eps);
    }
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

ParamTable init_material_params(std::size_t n_materials, int p_neural, std::uint64_t /*seed*/) {
    if (p_neural < 0) throw Error(ErrorCode::OutOfRange, "p_neural must be non-negative");
    MaterialParams m;
    m.neural.assign(static_cast<std::size_t>(p_neural), kNeuralInit);
    return ParamTable(n_materials, m);
}

void project_params(AnalyticalParams& p) {
    const double two_pi = 2.0 * kPi;
    auto wrap = [two_pi](double a) {
        a = std::fmod(a, two_pi);
        if (a < 0.0) a += two_pi;
        return a >= two_pi ? 0.0 : a;
    };
    for (int k = 0; k < 3; ++k) {
        p.rho_d[k] = std::max(p.rho_d[k], 0.0);
        p.rho_s[k] = std::max(p.rho_s[k], 0.0);
    }
    p.alpha_x = std::clamp(p.alpha_x, kAlphaMin, 1.0);
    p.alpha_y = std::clamp(p.alpha_y, kAlphaMin, 1.0);
    p.f0 = std::clamp(p.f0, 0.0, 1.0);
    if (p.n_theta < 0.0) {
        p.n_theta = -p.n_theta;
        p.n_phi += kPi;
    }
    p.n_theta = std::min(p.n_theta, 0.5 * kPi - 1e-3);
    p.n_phi = wrap(p.n_phi);
    p.t_theta = wrap(p.t_theta);
}

std::vector<MaterialInput> to_inputs(const ParamTable& table) {
    std::vector<MaterialInput> out(table.size());
    for (std::size_t m = 0; m < table.size(); ++m) {
        out[m].analytical = table[m].analytical.to_array();
        out[m].neural = table[m].neural;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

void SamplePool::push(int m, const Sample& s) {
    material.push_back(m);
    wi.push_back(s.wi);
    wo.push_back(s.wo);
    truth.push_back(s.value);
}

DataSplit split_data(const std::vector<SampleSet>& sets, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw Error(ErrorCode::OutOfRange, "validation fraction");
    DataSplit split;
    split.n_materials = sets.size();
    for (std::size_t m = 0; m < sets.size(); ++m) {
        const auto& samples = sets[m].samples;
        const std::size_t n = samples.size();
        std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
        if (val_fraction > 0.0 && n >= 2) n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(seed, m, 0x5a11));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<char> held(n, 0);
        for (std::size_t i = 0; i < n_val; ++i) held[order[i]] = 1;
        // Keep file order inside each pool.
        for (std::size_t i = 0; i < n; ++i) {
            (held[i] ? split.val : split.train).push(static_cast<int>(m), samples[i]);
        }
    }
    return split;
}

DataSplit pool_all(const std::vector<SampleSet>& sets) {
    DataSplit split;
    split.n_materials = sets.size();
    for (std::size_t m = 0; m < sets.size(); ++m) {
        for (const auto& s : sets[m].samples) split.train.push(static_cast<int>(m), s);
    }
    return split;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 1) throw Error(ErrorCode::OutOfRange, "batch_size must be at least 1");
    if (epochs_per_stage < 0) throw Error(ErrorCode::OutOfRange, "epochs must be non-negative");
    if (chunk_size < 1) throw Error(ErrorCode::OutOfRange, "chunk_size must be at least 1");
    if (threads < 1) throw Error(ErrorCode::OutOfRange, "threads must be at least 1");
}

std::string format_log_line(int epoch, const EnhancementState& state, double train_loss, double val_loss) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%d, %s, %.9g, %.9g", epoch, state.str().c_str(), train_loss, val_loss);
    return buf;
}

namespace {

struct ChunkBuffers {
    std::vector<int> material;
    std::vector<Direction> wi, wo;

    void gather(const SamplePool& pool, std::span<const std::size_t> idx) {
        material.resize(idx.size());
        wi.resize(idx.size());
        wo.resize(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            material[k] = pool.material[idx[k]];
            wi[k] = pool.wi[idx[k]];
            wo[k] = pool.wo[idx[k]];
        }
    }
};

// Flat view over the trainable groups, in a fixed order: module weights by
// slot (layer by layer, weight then bias), then per material neural and
// analytical values.
void gather_params(const Candidate& c, const UpdateMask& mask, std::vector<double>& out) {
    out.clear();
    if (mask.weights) {
        for (const auto& [slot, module] : c.model.modules) {
            for (const auto& l : module.layers()) {
                out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
                out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
            }
        }
    }
    for (const auto& m : c.params) {
        if (mask.neural) out.insert(out.end(), m.neural.begin(), m.neural.end());
        if (mask.analytical) {
            const auto a = m.analytical.to_array();
            out.insert(out.end(), a.begin(), a.end());
        }
    }
}

void scatter_params(Candidate& c, const UpdateMask& mask, const std::vector<double>& in) {
    std::size_t k = 0;
    if (mask.weights) {
        for (auto& [slot, module] : c.model.modules) {
            for (auto& l : module.layers()) {
                std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(k), l.weight.size(), l.weight.data());
                k += static_cast<std::size_t>(l.weight.size());
                std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(k), l.bias.size(), l.bias.data());
                k += static_cast<std::size_t>(l.bias.size());
            }
        }
    }
    for (auto& m : c.params) {
        if (mask.neural) {
            std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(k), m.neural.size(), m.neural.begin());
            k += m.neural.size();
        }
        if (mask.analytical) {
            ParamArray<double> a;
            std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(k), param::kCount, a.begin());
            k += param::kCount;
            m.analytical = AnalyticalParams::from_array(a);
            project_params(m.analytical);
        }
    }
}

void gather_grads(const BatchGradients& g, const UpdateMask& mask, std::vector<double>& out) {
    out.clear();
    if (mask.weights) {
        for (const auto& [slot, mg] : g.d_modules) {
            for (const auto& l : mg.layers) {
                out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
                out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
            }
        }
    }
    for (std::size_t m = 0; m < g.d_analytical.size(); ++m) {
        if (mask.neural) out.insert(out.end(), g.d_neural[m].begin(), g.d_neural[m].end());
        if (mask.analytical) out.insert(out.end(), g.d_analytical[m].begin(), g.d_analytical[m].end());
    }
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double mean_loss(const Candidate& c, const SamplePool& pool, std::size_t chunk_size) {
    if (pool.size() == 0) return 0.0;
    GraphEvaluator ev(c.model);
    const auto inputs = to_inputs(c.params);
    ChunkBuffers buf;
    std::vector<std::size_t> idx;
    double total = 0.0;
    for (std::size_t start = 0; start < pool.size(); start += chunk_size) {
        const std::size_t end = std::min(pool.size(), start + chunk_size);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        buf.gather(pool, idx);
        const auto& out = ev.forward(inputs, buf.material, buf.wi, buf.wo, false);
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto col = static_cast<Eigen::Index>(k);
            const Rgb pred{out(0, col), out(1, col), out(2, col)};
            total += loss_log_l1(pred, pool.truth[idx[k]], loss_cosine(buf.wi[k]));
        }
    }
    return total / static_cast<double>(pool.size());
}

double batch_gradient(const Candidate& c, const SamplePool& pool, std::span<const std::size_t> indices,
                      std::size_t chunk_size, BatchGradients& grads) {
    if (indices.empty()) return 0.0;
    GraphEvaluator ev(c.model);
    const auto inputs = to_inputs(c.params);
    ChunkBuffers buf;
    const double inv_n = 1.0 / static_cast<double>(indices.size());
    double total = 0.0;
    Eigen::MatrixXd grad_out;
    for (std::size_t start = 0; start < indices.size(); start += chunk_size) {
        const auto idx = indices.subspan(start, std::min(chunk_size, indices.size() - start));
        buf.gather(pool, idx);
        const auto& out = ev.forward(inputs, buf.material, buf.wi, buf.wo, true);
        grad_out.resize(3, static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto col = static_cast<Eigen::Index>(k);
            const Rgb pred{out(0, col), out(1, col), out(2, col)};
            Rgb d{};
            total += loss_log_l1_grad(pred, pool.truth[idx[k]], loss_cosine(buf.wi[k]), d);
            for (int ch = 0; ch < 3; ++ch) grad_out(ch, col) = d[ch] * inv_n;
        }
        ev.backward(grad_out, grads);
    }
    return total * inv_n;
}

std::uint64_t candidate_seed(std::uint64_t seed, const EnhancementState& state) {
    std::uint64_t h = static_cast<std::uint64_t>(state.size());
    for (int i = 0; i < state.size(); ++i) h = mix_seed(h ^ (state[i] ? 2u : 1u));
    return derive_seed(seed, h);
}

CandidateResult train_candidate(Candidate& c, const DataSplit& data, const TrainConfig& cfg,
                                std::uint64_t cand_seed, const UpdateMask& mask, const LogSink& log) {
    cfg.validate();
    c.model.validate();
    if (c.params.size() != data.n_materials) {
        throw Error(ErrorCode::DimensionMismatch, "parameter table does not cover every material");
    }
    CandidateResult result;
    const std::size_t n_train = data.train.size();
    std::vector<double> flat, grad_flat;
    gather_params(c, mask, flat);
    RmsProp opt(flat.size(), cfg.rmsprop);
    BatchGradients grads = BatchGradients::zeros(c.model, data.n_materials);
    std::vector<std::size_t> order(n_train);

    const SamplePool& val_pool = data.val.size() > 0 ? data.val : data.train;
    for (int epoch = 0; epoch < cfg.epochs_per_stage; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(derive_seed(cand_seed, static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, n_train - start);
            const std::span<const std::size_t> idx(order.data() + start, len);
            grads.set_zero();
            const double loss = batch_gradient(c, data.train, idx, cfg.chunk_size, grads);
            gather_grads(grads, mask, grad_flat);
            if (!std::isfinite(loss) || !all_finite(grad_flat)) {
                result.diverged = true;
                break;
            }
            epoch_loss += loss * static_cast<double>(len);
            double sq = 0.0;
            for (double g : grad_flat) sq += g * g;
            const double norm = std::sqrt(sq);
            if (norm > cfg.clip_norm) {
                const double s = cfg.clip_norm / norm;
                for (double& g : grad_flat) g *= s;
            }
            opt.step(flat, grad_flat);
            scatter_params(c, mask, flat);
            // Projection may have moved values; keep the flat copy in sync.
            if (mask.analytical) gather_params(c, mask, flat);
        }
        if (result.diverged) break;
        result.epochs_run = epoch + 1;
        result.train_loss = n_train > 0 ? epoch_loss / static_cast<double>(n_train) : 0.0;
        if (log) {
            const double v = mean_loss(c, val_pool, cfg.chunk_size);
            log(format_log_line(epoch + 1, c.model.state, result.train_loss, v));
        }
    }
    if (result.diverged) {
        result.train_loss = std::numeric_limits<double>::infinity();
        result.val_loss = std::numeric_limits<double>::infinity();
        return result;
    }
    result.val_loss = mean_loss(c, val_pool, cfg.chunk_size);
    if (!std::isfinite(result.val_loss)) {
        result.diverged = true;
        result.val_loss = std::numeric_limits<double>::infinity();
    }
    return result;
}

std::vector<CandidateResult> train_jointly(std::vector<Candidate>& candidates, const DataSplit& data,
                                           const TrainConfig& cfg, const LogSink& log) {
    cfg.validate();
    std::vector<CandidateResult> results(candidates.size());
    std::vector<std::vector<std::string>> logs(candidates.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr error;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= candidates.size()) return;
            try {
                LogSink sink;
                if (log) sink = [&logs, i](const std::string& line) { logs[i].push_back(line); };
                results[i] = train_candidate(candidates[i], data, cfg,
                                             candidate_seed(cfg.seed, candidates[i].model.state), {}, sink);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    const int n_threads = std::min<int>(cfg.threads, static_cast<int>(candidates.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    // Logs are emitted in candidate order so output does not depend on timing.
    if (log) {
        for (const auto& lines : logs) {
            for (const auto& l : lines) log(l);
        }
    }
    return results;
}

}  // namespace neam

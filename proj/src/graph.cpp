// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/graph.hpp"

#include <ceres/jet.h>

#include <algorithm>
#include <functional>
#include <sstream>

namespace neam {

using Jet12 = ceres::Jet<double, param::kCount>;

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

int CompGraph::terminal_count() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const NodeSpec& n) { return n.terminal; }));
}

int CompGraph::operator_count() const { return n_slots() - terminal_count(); }

void CompGraph::validate() const {
    auto fail = [&](const std::string& msg) {
        throw Error(ErrorCode::DimensionMismatch, model_name + ": " + msg);
    };
    if (nodes.empty()) fail("empty graph");
    std::vector<int> parents(nodes.size(), 0);
    for (int i = 0; i < n_slots(); ++i) {
        const NodeSpec& n = nodes[i];
        if (n.id != i) fail("node ids must match positions");
        if (n.terminal) {
            if (!n.children.empty()) fail("terminal with children");
            if (n.out_dim != term_dim(n.term)) fail("terminal dimension mismatch");
            if (n.signature == InputSignature::Operands) fail("terminal with operand signature");
        } else {
            if (n.children.size() != 2) fail("operators take exactly two children");
            int dim = 1;
            for (int c : n.children) {
                if (c < 0 || c >= i) fail("children must precede parents");
                ++parents[c];
                dim = std::max(dim, nodes[c].out_dim);
            }
            if (n.out_dim != dim) fail("operator dimension must equal broadcast dimension");
            if (n.signature != InputSignature::Operands) fail("operator needs operand signature");
        }
    }
    for (int i = 0; i < root(); ++i) {
        if (parents[i] == 0) fail("node " + std::to_string(i) + " is unreachable from the root");
    }
    if (parents[root()] != 0) fail("root has a parent");
}

namespace {

class GraphBuilder {
public:
    explicit GraphBuilder(std::string name) { g_.model_name = std::move(name); }

    int terminal(Term t) {
        NodeSpec n;
        n.id = g_.n_slots();
        n.terminal = true;
        n.term = t;
        n.out_dim = term_dim(t);
        n.signature = term_uses_directions(t) ? InputSignature::ParamsAndDirections : InputSignature::ParamsOnly;
        n.label = term_name(t);
        g_.nodes.push_back(n);
        return n.id;
    }

    int op(OpKind kind, int a, int b) {
        NodeSpec n;
        n.id = g_.n_slots();
        n.terminal = false;
        n.op = kind;
        n.children = {a, b};
        n.out_dim = std::max(g_.nodes[a].out_dim, g_.nodes[b].out_dim);
        n.signature = InputSignature::Operands;
        const char* sym = kind == OpKind::Add ? "+" : "*";
        n.label = "(" + g_.nodes[a].label + sym + g_.nodes[b].label + ")";
        g_.nodes.push_back(n);
        return n.id;
    }

    CompGraph finish() {
        g_.validate();
        return std::move(g_);
    }

private:
    CompGraph g_;
};

CompGraph microfacet_graph(const char* name, Term d, Term g) {
    GraphBuilder b(name);
    const int m = b.terminal(Term::Lambertian);
    const int s = b.terminal(Term::SpecularAlbedo);
    const int dn = b.terminal(d);
    const int f = b.terminal(Term::SchlickFresnel);
    const int gn = b.terminal(g);
    const int e = b.terminal(Term::ReciprocalNorm);
    const int df = b.op(OpKind::Mul, dn, f);
    const int dfg = b.op(OpKind::Mul, df, gn);
    const int dfge = b.op(OpKind::Mul, dfg, e);
    const int spec = b.op(OpKind::Mul, s, dfge);
    b.op(OpKind::Add, m, spec);
    return b.finish();
}

}  // namespace

CompGraph build_ggx_graph() { return microfacet_graph("ggx", Term::GgxDistribution, Term::SmithGeometry); }

CompGraph build_cooktorrance_graph() {
    return microfacet_graph("cooktorrance", Term::BeckmannDistribution, Term::VCavityGeometry);
}

CompGraph build_ward_graph() {
    GraphBuilder b("ward");
    const int m = b.terminal(Term::Lambertian);
    const int s = b.terminal(Term::SpecularAlbedo);
    const int lobe = b.terminal(Term::WardLobe);
    const int norm = b.terminal(Term::WardNorm);
    const int ln = b.op(OpKind::Mul, lobe, norm);
    const int spec = b.op(OpKind::Mul, s, ln);
    b.op(OpKind::Add, m, spec);
    return b.finish();
}

CompGraph build_toy_graph() {
    GraphBuilder b("toy");
    const int m = b.terminal(Term::Lambertian);
    const int spec = b.terminal(Term::GgxSpecularLobe);
    b.op(OpKind::Add, m, spec);
    return b.finish();
}

CompGraph build_graph(const std::string& name) {
    if (name == "ggx") return build_ggx_graph();
    if (name == "cooktorrance") return build_cooktorrance_graph();
    if (name == "ward") return build_ward_graph();
    if (name == "toy") return build_toy_graph();
    throw Error(ErrorCode::Usage, "unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Enhancement states
// ---------------------------------------------------------------------------

EnhancementState EnhancementState::all_ones(int n) {
    EnhancementState s(n);
    std::fill(s.bits.begin(), s.bits.end(), 1);
    return s;
}

EnhancementState EnhancementState::parse(const std::string& text) {
    EnhancementState s;
    for (char c : text) {
        if (c != '0' && c != '1') throw Error(ErrorCode::ParseError, "state must be a 0/1 string: " + text);
        s.bits.push_back(c == '1' ? 1 : 0);
    }
    return s;
}

int EnhancementState::ones() const { return static_cast<int>(std::count(bits.begin(), bits.end(), 1)); }

std::string EnhancementState::str() const {
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
}

int hamming_distance(const EnhancementState& a, const EnhancementState& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "state lengths differ");
    int d = 0;
    for (int i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

bool StateConstraints::admits(const EnhancementState& s) const {
    for (const auto& [slot, value] : fixed_bits) {
        if (slot < 0 || slot >= s.size() || static_cast<int>(s[slot]) != value) return false;
    }
    return !max_ones || s.ones() <= *max_ones;
}

std::vector<EnhancementState> state_neighbors(const EnhancementState& state, int threshold,
                                              const StateConstraints& constraints) {
    std::vector<EnhancementState> out{state};
    const int n = state.size();
    std::vector<int> flips;
    // Depth-first over increasing index sets gives lexicographic order per size.
    std::function<void(int, int)> visit = [&](int start, int remaining) {
        if (remaining == 0) {
            EnhancementState s = state;
            for (int i : flips) s.bits[i] ^= 1;
            if (constraints.admits(s)) out.push_back(std::move(s));
            return;
        }
        for (int i = start; i <= n - remaining; ++i) {
            flips.push_back(i);
            visit(i + 1, remaining - 1);
            flips.pop_back();
        }
    };
    for (int k = 1; k <= std::min(threshold, n); ++k) visit(0, k);
    return out;
}

// ---------------------------------------------------------------------------
// Enhanced model
// ---------------------------------------------------------------------------

EnhancedModel EnhancedModel::create(CompGraph graph, EnhancementState state, ModuleConfig config,
                                    std::uint64_t seed) {
    graph.validate();
    if (state.size() != graph.n_slots()) {
        throw Error(ErrorCode::DimensionMismatch, "state length differs from the graph's slot count");
    }
    EnhancedModel m;
    m.graph = std::move(graph);
    m.state = EnhancementState(m.graph.n_slots());
    m.config = config;
    for (int slot = 0; slot < m.graph.n_slots(); ++slot) {
        if (state[slot]) m.set_slot(slot, true, derive_seed(seed, static_cast<std::uint64_t>(slot)));
    }
    return m;
}

int EnhancedModel::module_input_dim(int slot) const {
    const NodeSpec& n = graph.nodes.at(static_cast<std::size_t>(slot));
    switch (n.signature) {
        case InputSignature::ParamsOnly: return param::kCount + config.p_neural;
        case InputSignature::ParamsAndDirections: return param::kCount + config.p_neural + 6;
        case InputSignature::Operands:
            return graph.nodes[n.children[0]].out_dim + graph.nodes[n.children[1]].out_dim;
    }
    return 0;
}

std::vector<int> EnhancedModel::module_dims(int slot) const {
    return neam::module_dims(module_input_dim(slot), config.hidden, graph.nodes.at(slot).out_dim);
}

void EnhancedModel::set_slot(int slot, bool neural, std::uint64_t seed) {
    if (slot < 0 || slot >= graph.n_slots()) throw Error(ErrorCode::OutOfRange, "slot index");
    state.bits[static_cast<std::size_t>(slot)] = neural ? 1 : 0;
    if (neural) {
        modules[slot] = NeuralModule::xavier(module_dims(slot), seed, config.leaky_slope);
    } else {
        modules.erase(slot);
    }
}

std::size_t EnhancedModel::module_weight_count() const {
    std::size_t n = 0;
    for (const auto& [slot, m] : modules) n += m.weight_count();
    return n;
}

void EnhancedModel::validate() const {
    graph.validate();
    if (state.size() != graph.n_slots()) throw Error(ErrorCode::DimensionMismatch, "state length");
    for (int slot = 0; slot < graph.n_slots(); ++slot) {
        const auto it = modules.find(slot);
        if (state[slot] != (it != modules.end())) {
            throw Error(ErrorCode::DimensionMismatch, "module set differs from state at slot " + std::to_string(slot));
        }
        if (it != modules.end() && it->second.dims() != module_dims(slot)) {
            throw Error(ErrorCode::DimensionMismatch, "module shape at slot " + std::to_string(slot));
        }
    }
}

BatchGradients BatchGradients::zeros(const EnhancedModel& model, std::size_t n_materials) {
    BatchGradients g;
    g.d_analytical.assign(n_materials, ParamArray<double>{});
    g.d_neural.assign(n_materials, NeuralParamVec(static_cast<std::size_t>(model.config.p_neural), 0.0));
    for (const auto& [slot, m] : model.modules) g.d_modules.emplace(slot, m.zero_gradient());
    return g;
}

void BatchGradients::set_zero() {
    for (auto& a : d_analytical) a.fill(0.0);
    for (auto& z : d_neural) std::fill(z.begin(), z.end(), 0.0);
    for (auto& [slot, g] : d_modules) g.set_zero();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

GraphEvaluator::GraphEvaluator(const EnhancedModel& model) : model_(model) {
    model_.validate();
    const std::size_t n = static_cast<std::size_t>(model_.graph.n_slots());
    values_.resize(n);
    jacobians_.resize(n);
    caches_.resize(n);
}

namespace {

Eigen::MatrixXd broadcast(const Eigen::MatrixXd& v, int dim) {
    if (v.rows() == dim) return v;
    return v.replicate(dim, 1);
}

/// Folds a broadcast adjoint back to the operand's dimension.
Eigen::MatrixXd reduce_to(const Eigen::MatrixXd& adj, int dim) {
    if (adj.rows() == dim) return adj;
    return adj.colwise().sum();
}

}  // namespace

const Eigen::MatrixXd& GraphEvaluator::forward(std::span<const MaterialInput> materials,
                                               std::span<const int> material_of, std::span<const Direction> wi,
                                               std::span<const Direction> wo, bool for_backward) {
    const auto B = static_cast<Eigen::Index>(wi.size());
    if (wo.size() != wi.size() || material_of.size() != wi.size()) {
        throw Error(ErrorCode::DimensionMismatch, "batch arrays differ in length");
    }
    const int p_neural = model_.config.p_neural;
    for (const auto& m : materials) {
        if (static_cast<int>(m.neural.size()) != p_neural) {
            std::ostringstream os;
            os << "neural parameter vector has " << m.neural.size() << " entries, expected " << p_neural;
            throw Error(ErrorCode::DimensionMismatch, os.str());
        }
    }
    for (int m : material_of) {
        if (m < 0 || static_cast<std::size_t>(m) >= materials.size()) {
            throw Error(ErrorCode::OutOfRange, "material index");
        }
    }
    material_of_.assign(material_of.begin(), material_of.end());
    n_materials_ = materials.size();
    have_intermediates_ = for_backward;

    const auto& nodes = model_.graph.nodes;
    std::vector<int> analytic_terms;
    for (const auto& n : nodes) {
        values_[n.id].resize(n.out_dim, B);
        if (n.terminal && !model_.state[n.id]) {
            analytic_terms.push_back(n.id);
            if (for_backward) jacobians_[n.id].resize(n.out_dim * param::kCount, B);
        }
    }

    // Analytical terminals, one shared context per sample.
    if (!analytic_terms.empty()) {
        if (for_backward) {
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto& src = materials[material_of[b]].analytical;
                ParamArray<Jet12> p;
                for (int j = 0; j < param::kCount; ++j) p[j] = Jet12(src[j], j);
                const auto ctx = make_term_context(p, Vec3T<Jet12>::from(wi[b]), Vec3T<Jet12>::from(wo[b]));
                Jet12 out[3];
                for (int id : analytic_terms) {
                    eval_term(nodes[id].term, ctx, out);
                    for (int k = 0; k < nodes[id].out_dim; ++k) {
                        values_[id](k, b) = out[k].a;
                        for (int j = 0; j < param::kCount; ++j) jacobians_[id](k * param::kCount + j, b) = out[k].v[j];
                    }
                }
            }
        } else {
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto ctx = make_term_context(materials[material_of[b]].analytical, wi[b], wo[b]);
                double out[3];
                for (int id : analytic_terms) {
                    eval_term(nodes[id].term, ctx, out);
                    for (int k = 0; k < nodes[id].out_dim; ++k) values_[id](k, b) = out[k];
                }
            }
        }
    }

    for (const auto& n : nodes) {
        if (model_.state[n.id]) {
            const NeuralModule& module = model_.modules.at(n.id);
            Eigen::MatrixXd x(module.input_dim(), B);
            if (n.terminal) {
                for (Eigen::Index b = 0; b < B; ++b) {
                    const MaterialInput& mat = materials[material_of[b]];
                    int r = 0;
                    for (double v : mat.analytical) x(r++, b) = v;
                    for (double v : mat.neural) x(r++, b) = v;
                    if (n.signature == InputSignature::ParamsAndDirections) {
                        x(r++, b) = wi[b].x;
                        x(r++, b) = wi[b].y;
                        x(r++, b) = wi[b].z;
                        x(r++, b) = wo[b].x;
                        x(r++, b) = wo[b].y;
                        x(r++, b) = wo[b].z;
                    }
                }
            } else {
                const auto& a = values_[n.children[0]];
                const auto& c = values_[n.children[1]];
                x.topRows(a.rows()) = a;
                x.bottomRows(c.rows()) = c;
            }
            values_[n.id] = module.forward_batch(x, for_backward ? &caches_[n.id] : nullptr);
        } else if (!n.terminal) {
            const auto& a = values_[n.children[0]];
            const auto& c = values_[n.children[1]];
            if (n.op == OpKind::Add) {
                values_[n.id] = broadcast(a, n.out_dim) + broadcast(c, n.out_dim);
            } else {
                values_[n.id] = broadcast(a, n.out_dim).cwiseProduct(broadcast(c, n.out_dim));
            }
        }
    }
    return values_[model_.graph.root()];
}

void GraphEvaluator::backward(const Eigen::MatrixXd& grad_out, BatchGradients& grads) {
    if (!have_intermediates_) throw Error(ErrorCode::DimensionMismatch, "backward without a recording forward pass");
    const auto& nodes = model_.graph.nodes;
    const int root = model_.graph.root();
    if (grad_out.rows() != nodes[root].out_dim || grad_out.cols() != values_[root].cols()) {
        throw Error(ErrorCode::DimensionMismatch, "grad_out shape");
    }
    if (grads.d_analytical.size() != n_materials_ || grads.d_neural.size() != n_materials_) {
        throw Error(ErrorCode::DimensionMismatch, "gradient buffers sized for a different material count");
    }
    const Eigen::Index B = grad_out.cols();
    std::vector<Eigen::MatrixXd> adj(nodes.size());
    for (const auto& n : nodes) adj[n.id] = Eigen::MatrixXd::Zero(n.out_dim, B);
    adj[root] = grad_out;

    for (int id = root; id >= 0; --id) {
        const NodeSpec& n = nodes[id];
        const Eigen::MatrixXd& a = adj[id];
        if (model_.state[id]) {
            const NeuralModule& module = model_.modules.at(id);
            auto git = grads.d_modules.find(id);
            if (git == grads.d_modules.end()) git = grads.d_modules.emplace(id, module.zero_gradient()).first;
            const Eigen::MatrixXd dx = module.backward_batch(caches_[id], a, git->second);
            if (n.terminal) {
                const int p_neural = model_.config.p_neural;
                for (Eigen::Index b = 0; b < B; ++b) {
                    const int m = material_of_[b];
                    for (int j = 0; j < param::kCount; ++j) grads.d_analytical[m][j] += dx(j, b);
                    for (int j = 0; j < p_neural; ++j) grads.d_neural[m][j] += dx(param::kCount + j, b);
                }
            } else {
                const int d0 = nodes[n.children[0]].out_dim;
                adj[n.children[0]] += dx.topRows(d0);
                adj[n.children[1]] += dx.bottomRows(dx.rows() - d0);
            }
        } else if (n.terminal) {
            const Eigen::MatrixXd& jac = jacobians_[id];
            for (Eigen::Index b = 0; b < B; ++b) {
                auto& dst = grads.d_analytical[material_of_[b]];
                for (int k = 0; k < n.out_dim; ++k) {
                    const double w = a(k, b);
                    if (w == 0.0) continue;
                    for (int j = 0; j < param::kCount; ++j) dst[j] += w * jac(k * param::kCount + j, b);
                }
            }
        } else {
            const int c0 = n.children[0], c1 = n.children[1];
            const int d0 = nodes[c0].out_dim, d1 = nodes[c1].out_dim;
            if (n.op == OpKind::Add) {
                adj[c0] += reduce_to(a, d0);
                adj[c1] += reduce_to(a, d1);
            } else {
                adj[c0] += reduce_to(a.cwiseProduct(broadcast(values_[c1], n.out_dim)), d0);
                adj[c1] += reduce_to(a.cwiseProduct(broadcast(values_[c0], n.out_dim)), d1);
            }
        }
    }
}

namespace {

MaterialInput single_material(const EnhancedModel& model, const AnalyticalParams& a, const NeuralParamVec& z) {
    if (static_cast<int>(z.size()) != model.config.p_neural) {
        std::ostringstream os;
        os << "neural parameter vector has " << z.size() << " entries, expected " << model.config.p_neural;
        throw Error(ErrorCode::DimensionMismatch, os.str());
    }
    return {a.to_array(), z};
}

}  // namespace

Rgb forward(const EnhancedModel& model, const AnalyticalParams& a, const NeuralParamVec& z, const Direction& wi,
            const Direction& wo) {
    const MaterialInput mat = single_material(model, a, z);
    const int idx = 0;
    GraphEvaluator ev(model);
    const auto& out = ev.forward({&mat, 1}, {&idx, 1}, {&wi, 1}, {&wo, 1}, false);
    return {out(0, 0), out(1, 0), out(2, 0)};
}

Gradients backward(const EnhancedModel& model, const AnalyticalParams& a, const NeuralParamVec& z,
                   const Direction& wi, const Direction& wo, const Rgb& grad_out) {
    const MaterialInput mat = single_material(model, a, z);
    const int idx = 0;
    GraphEvaluator ev(model);
    ev.forward({&mat, 1}, {&idx, 1}, {&wi, 1}, {&wo, 1}, true);
    BatchGradients g = BatchGradients::zeros(model, 1);
    Eigen::MatrixXd go(3, 1);
    go << grad_out[0], grad_out[1], grad_out[2];
    ev.backward(go, g);
    return {g.d_analytical[0], g.d_neural[0], std::move(g.d_modules)};
}

}  // namespace neam

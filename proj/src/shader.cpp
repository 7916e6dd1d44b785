// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

// Shader export and a small f32 interpreter for the emitted subset of GLSL.

#include "neam/runtime.hpp"

#include "binary_io.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>
#include <unordered_map>

namespace neam {

// ---------------------------------------------------------------------------
// Emitter
// ---------------------------------------------------------------------------

namespace {

/// f32-rounded literal that always parses back as a float.
std::string flit(double v) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "non-finite value in shader export");
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(static_cast<float>(v)));
    std::string s = buf;
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

class Emitter {
public:
    std::ostringstream os;
    int depth = 1;

    void line(const std::string& s) { os << std::string(static_cast<std::size_t>(depth) * 4, ' ') << s << '\n'; }
    void open(const std::string& s) {
        line(s + " {");
        ++depth;
    }
    void close() {
        --depth;
        line("}");
    }
};

const std::string kEps = flit(kCosEpsilon);
const std::string kPiLit = flit(kPi);

// Writes statements that leave the scalar term value in `target`, which is
// already declared and zero.
void emit_smith_g1(Emitter& e, const std::string& v, const std::string& out) {
    e.line("float " + out + "z = max(dot(" + v + ", n), " + kEps + ");");
    e.line("float " + out + "x = dot(" + v + ", t);");
    e.line("float " + out + "y = dot(" + v + ", b);");
    e.line("float " + out + "t = (ax * ax * " + out + "x * " + out + "x + ay * ay * " + out + "y * " + out + "y) / (" +
           out + "z * " + out + "z);");
    e.line("float " + out + " = 2.0 / (1.0 + sqrt(1.0 + " + out + "t));");
}

void emit_scalar_term(Emitter& e, Term term, const std::string& target) {
    e.open("");
    switch (term) {
        case Term::GgxDistribution:
            e.line("float hz = dot(h, n);");
            e.open("if (hz > 0.0)");
            e.line("float hx = dot(h, t);");
            e.line("float hy = dot(h, b);");
            e.line("float q = hx * hx / (ax * ax) + hy * hy / (ay * ay) + hz * hz;");
            e.line(target + " = 1.0 / (" + kPiLit + " * ax * ay * q * q);");
            e.close();
            break;
        case Term::SchlickFresnel:
            e.line("float cd = min(max(dot(wi, h), 0.0), 1.0);");
            e.line("float m = 1.0 - cd;");
            e.line("float m2 = m * m;");
            e.line(target + " = f0 + (1.0 - f0) * (m2 * m2 * m);");
            break;
        case Term::SmithGeometry:
            emit_smith_g1(e, "wi", "gi");
            emit_smith_g1(e, "wo", "go");
            e.line(target + " = gi * go;");
            break;
        case Term::ReciprocalNorm:
            e.line("float ci = max(dot(n, wi), " + kEps + ");");
            e.line("float co = max(dot(n, wo), " + kEps + ");");
            e.line(target + " = 1.0 / (4.0 * ci * co);");
            break;
        case Term::BeckmannDistribution:
            e.line("float hz = dot(h, n);");
            e.open("if (hz > 0.0)");
            e.line("float hx = dot(h, t);");
            e.line("float hy = dot(h, b);");
            e.line("float hz2 = hz * hz;");
            e.line("float ex = (hx * hx / (ax * ax) + hy * hy / (ay * ay)) / hz2;");
            e.line(target + " = exp(-ex) / (" + kPiLit + " * ax * ay * hz2 * hz2);");
            e.close();
            break;
        case Term::VCavityGeometry:
            e.line("float nh = dot(n, h);");
            e.open("if (nh > 0.0)");
            e.line("float ci = max(dot(n, wi), " + kEps + ");");
            e.line("float co = max(dot(n, wo), " + kEps + ");");
            e.line("float oh = max(dot(wo, h), " + kEps + ");");
            e.line(target + " = min(min(2.0 * nh * ci / oh, 2.0 * nh * co / oh), 1.0);");
            e.close();
            break;
        case Term::WardLobe:
            e.line("float hz = dot(h, n);");
            e.open("if (hz > 0.0)");
            e.line("float hx = dot(h, t);");
            e.line("float hy = dot(h, b);");
            e.line("float ex = (hx * hx / (ax * ax) + hy * hy / (ay * ay)) / (hz * hz);");
            e.line(target + " = exp(-ex) / (" + flit(4.0 * kPi) + " * ax * ay);");
            e.close();
            break;
        case Term::WardNorm:
            e.line("float ci = max(dot(n, wi), " + kEps + ");");
            e.line("float co = max(dot(n, wo), " + kEps + ");");
            e.line(target + " = 1.0 / sqrt(ci * co);");
            break;
        default: throw Error(ErrorCode::DimensionMismatch, std::string("not a scalar term: ") + term_name(term));
    }
    e.close();
}

void emit_term(Emitter& e, Term term, const std::string& target) {
    switch (term) {
        case Term::Lambertian:
            e.line("vec3 " + target + " = vec3(params[0], params[1], params[2]) * " + flit(kInvPi) + ";");
            return;
        case Term::SpecularAlbedo:
            e.line("vec3 " + target + " = vec3(params[3], params[4], params[5]);");
            return;
        case Term::GgxSpecularLobe:
            e.line("vec3 " + target + " = vec3(0.0, 0.0, 0.0);");
            e.open("");
            for (auto [t, v] : {std::pair{Term::GgxDistribution, "ld"}, std::pair{Term::SchlickFresnel, "lf"},
                                std::pair{Term::SmithGeometry, "lg"}, std::pair{Term::ReciprocalNorm, "lr"}}) {
                e.line(std::string("float ") + v + " = 0.0;");
                emit_scalar_term(e, t, v);
            }
            e.line(target + " = vec3(params[3], params[4], params[5]) * (ld * lf * lg * lr);");
            e.close();
            return;
        default:
            e.line("float " + target + " = 0.0;");
            emit_scalar_term(e, term, target);
    }
}

std::string slot_var(int id) { return "s" + std::to_string(id); }

void emit_const_array(std::ostringstream& os, const std::string& name, const std::vector<double>& v) {
    const std::string n = std::to_string(v.size());
    os << "const float " << name << "[" << n << "] = float[" << n << "](";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << (i % 8 == 0 ? ",\n    " : ", ");
        os << flit(v[i]);
    }
    os << ");\n";
}

}  // namespace

std::string shader_source(const EnhancedModel& model, const FitResult& fit) {
    model.validate();
    fit.analytical.validate();
    const int P = model.parameter_count();
    if (static_cast<int>(fit.neural.size()) != model.config.p_neural) {
        throw Error(ErrorCode::DimensionMismatch, "fit has the wrong number of neural parameters");
    }
    const auto& nodes = model.graph.nodes;
    std::ostringstream out;
    out << "// " << model.graph.model_name << " BRDF, state " << model.state.str() << ", " << P
        << " parameters per material.\n";
    out << "// params: rho_d rgb, rho_s rgb, alpha_x, alpha_y, f0, n_theta, n_phi, t_theta";
    if (model.config.p_neural > 0) out << ", " << model.config.p_neural << " neural";
    out << ".\n";
    out << "// Weights are row-major: W[o * fan_in + i].\n\n";

    std::vector<double> defaults;
    for (double v : fit.analytical.to_array()) defaults.push_back(v);
    defaults.insert(defaults.end(), fit.neural.begin(), fit.neural.end());
    emit_const_array(out, "default_params", defaults);

    for (const auto& [slot, module] : model.modules) {
        const auto& layers = module.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& w = layers[l].weight;
            std::vector<double> flat;
            flat.reserve(static_cast<std::size_t>(w.size()));
            for (Eigen::Index o = 0; o < w.rows(); ++o) {
                for (Eigen::Index i = 0; i < w.cols(); ++i) flat.push_back(w(o, i));
            }
            const std::string tag = std::to_string(slot) + "_" + std::to_string(l);
            emit_const_array(out, "W" + tag, flat);
            emit_const_array(out, "B" + tag, std::vector<double>(layers[l].bias.data(),
                                                                  layers[l].bias.data() + layers[l].bias.size()));
        }
    }
    out << "\nvec3 eval_brdf(vec3 wi, vec3 wo, float params[" << P << "]) {\n";

    Emitter e;
    e.line("float ax = params[6];");
    e.line("float ay = params[7];");
    e.line("float f0 = params[8];");
    e.line("float st = sin(params[9]);");
    e.line("vec3 n = vec3(st * cos(params[10]), st * sin(params[10]), cos(params[9]));");
    e.line("vec3 t0 = vec3(1.0, 0.0, 0.0) - n * n.x;");
    e.open("if (length(t0) < " + flit(1e-6) + ")");
    e.line("t0 = vec3(0.0, 1.0, 0.0) - n * n.y;");
    e.close();
    e.line("t0 = normalize(t0);");
    e.line("vec3 t = t0 * cos(params[11]) + cross(n, t0) * sin(params[11]);");
    e.line("vec3 b = cross(n, t);");
    e.line("vec3 h = normalize(wi + wo);");

    for (const auto& node : nodes) {
        const std::string sv = slot_var(node.id);
        const std::string type = node.out_dim == 3 ? "vec3 " : "float ";
        e.line("// slot " + std::to_string(node.id) + ": " + node.label +
               (model.state[node.id] ? " (neural)" : ""));
        if (!model.state[node.id]) {
            if (node.terminal) {
                emit_term(e, node.term, sv);
            } else {
                const char* op = node.op == OpKind::Add ? " + " : " * ";
                e.line(type + sv + " = " + slot_var(node.children[0]) + op + slot_var(node.children[1]) + ";");
            }
            continue;
        }
        const NeuralModule& m = model.modules.at(node.id);
        const auto& dims = m.dims();
        const std::string id = std::to_string(node.id);
        const std::string x = "x" + id;
        e.line("float " + x + "[" + std::to_string(dims[0]) + "];");
        int r = 0;
        if (node.terminal) {
            e.open("for (int i = 0; i < " + std::to_string(P) + "; i++)");
            e.line(x + "[i] = params[i];");
            e.close();
            r = P;
            if (node.signature == InputSignature::ParamsAndDirections) {
                for (const char* d : {"wi", "wo"}) {
                    for (const char* c : {"x", "y", "z"}) {
                        e.line(x + "[" + std::to_string(r++) + "] = " + d + "." + c + ";");
                    }
                }
            }
        } else {
            for (int child : node.children) {
                const std::string cv = slot_var(child);
                if (nodes[child].out_dim == 3) {
                    for (const char* c : {"x", "y", "z"}) e.line(x + "[" + std::to_string(r++) + "] = " + cv + "." + c + ";");
                } else {
                    e.line(x + "[" + std::to_string(r++) + "] = " + cv + ";");
                }
            }
        }
        std::string in = x;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::string tag = id + "_" + std::to_string(l);
            const std::string a = "a" + tag;
            const std::string fan_in = std::to_string(dims[l]);
            e.line("float " + a + "[" + std::to_string(dims[l + 1]) + "];");
            e.open("for (int o = 0; o < " + std::to_string(dims[l + 1]) + "; o++)");
            e.line("float acc = B" + tag + "[o];");
            e.open("for (int i = 0; i < " + fan_in + "; i++)");
            e.line("acc += W" + tag + "[o * " + fan_in + " + i] * " + in + "[i];");
            e.close();
            if (l + 2 < dims.size()) {
                e.open("if (acc < 0.0)");
                e.line("acc = acc * " + flit(m.leaky_slope()) + ";");
                e.close();
            }
            e.line(a + "[o] = acc;");
            e.close();
            in = a;
        }
        if (node.out_dim == 3) {
            e.line("vec3 " + sv + " = vec3(" + in + "[0], " + in + "[1], " + in + "[2]);");
        } else {
            e.line("float " + sv + " = " + in + "[0];");
        }
    }
    const auto& root = nodes.back();
    if (root.out_dim == 3) {
        e.line("return " + slot_var(root.id) + ";");
    } else {
        e.line("return vec3(" + slot_var(root.id) + ");");
    }
    out << e.os.str() << "}\n";
    return out.str();
}

void export_shader(const EnhancedModel& model, const FitResult& fit, const std::filesystem::path& path) {
    const std::string src = shader_source(model, fit);
    detail::write_file(path, std::vector<unsigned char>(src.begin(), src.end()));
}

// ---------------------------------------------------------------------------
// Interpreter
// ---------------------------------------------------------------------------

namespace {

enum class Kind : std::uint8_t { Float, Int, Vec3, Bool };

struct Val {
    Kind k = Kind::Float;
    int i = 0;
    float v[3] = {0.0f, 0.0f, 0.0f};

    static Val f(float x) {
        Val r;
        r.v[0] = x;
        return r;
    }
    static Val n(int x) {
        Val r;
        r.k = Kind::Int;
        r.i = x;
        return r;
    }
    static Val b(bool x) {
        Val r;
        r.k = Kind::Bool;
        r.i = x;
        return r;
    }
    static Val vec(float x, float y, float z) {
        Val r;
        r.k = Kind::Vec3;
        r.v[0] = x;
        r.v[1] = y;
        r.v[2] = z;
        return r;
    }
    float scalar() const { return k == Kind::Int ? static_cast<float>(i) : v[0]; }
    float comp(int c) const { return k == Kind::Vec3 ? v[c] : scalar(); }
};

enum class Fn { Vec3, Float, Sin, Cos, Sqrt, Exp, Pow, Max, Min, Clamp, Dot, Cross, Normalize, Length, Abs };

const std::unordered_map<std::string, std::pair<Fn, int>>& builtins() {
    static const std::unordered_map<std::string, std::pair<Fn, int>> m = {
        {"vec3", {Fn::Vec3, -1}}, {"float", {Fn::Float, 1}},   {"sin", {Fn::Sin, 1}},
        {"cos", {Fn::Cos, 1}},    {"sqrt", {Fn::Sqrt, 1}},     {"exp", {Fn::Exp, 1}},
        {"pow", {Fn::Pow, 2}},    {"max", {Fn::Max, 2}},       {"min", {Fn::Min, 2}},
        {"clamp", {Fn::Clamp, 3}}, {"dot", {Fn::Dot, 2}},      {"cross", {Fn::Cross, 2}},
        {"normalize", {Fn::Normalize, 1}}, {"length", {Fn::Length, 1}}, {"abs", {Fn::Abs, 1}},
    };
    return m;
}

struct Expr {
    enum Op { Lit, Var, LocalIndex, GlobalIndex, Member, Neg, Add, Sub, Mul, Div, Lt, Gt, Le, Ge, Call };
    Op op = Lit;
    Val lit;
    int slot = 0;  // variable, array, member component
    Fn fn = Fn::Vec3;
    std::vector<std::unique_ptr<Expr>> kids;
};

struct Stmt {
    enum Op { Block, Decl, DeclArray, Assign, AssignIndex, If, For, Return, Eval };
    Op op = Block;
    int slot = 0;       // scalar or array slot
    Kind type = Kind::Float;
    char assign = '=';  // '=', '+', '-', '*', '/'
    std::unique_ptr<Expr> a, b;  // Decl/Assign: a = value; AssignIndex: a = index, b = value; If/For: a = cond
    std::vector<std::unique_ptr<Stmt>> body;   // Block, If-then, For body
    std::vector<std::unique_ptr<Stmt>> other;  // If-else; For: [init, step]
};

struct Frame {
    std::vector<Val> vars;
    std::vector<std::vector<float>> arrays;
    Val ret;
};

[[noreturn]] void runtime_fail(const std::string& why) { throw Error(ErrorCode::ParseError, "shader: " + why); }

Val arith(Expr::Op op, const Val& x, const Val& y) {
    if (x.k == Kind::Int && y.k == Kind::Int) {
        switch (op) {
            case Expr::Add: return Val::n(x.i + y.i);
            case Expr::Sub: return Val::n(x.i - y.i);
            case Expr::Mul: return Val::n(x.i * y.i);
            case Expr::Div:
                if (y.i == 0) runtime_fail("integer division by zero");
                return Val::n(x.i / y.i);
            case Expr::Lt: return Val::b(x.i < y.i);
            case Expr::Gt: return Val::b(x.i > y.i);
            case Expr::Le: return Val::b(x.i <= y.i);
            case Expr::Ge: return Val::b(x.i >= y.i);
            default: break;
        }
    }
    if (x.k == Kind::Bool || y.k == Kind::Bool) runtime_fail("arithmetic on a boolean");
    if (op >= Expr::Lt) {
        if (x.k == Kind::Vec3 || y.k == Kind::Vec3) runtime_fail("comparison of vectors");
        const float a = x.scalar(), c = y.scalar();
        switch (op) {
            case Expr::Lt: return Val::b(a < c);
            case Expr::Gt: return Val::b(a > c);
            case Expr::Le: return Val::b(a <= c);
            default: return Val::b(a >= c);
        }
    }
    const bool vec = x.k == Kind::Vec3 || y.k == Kind::Vec3;
    Val r = vec ? Val::vec(0, 0, 0) : Val::f(0);
    for (int c = 0; c < (vec ? 3 : 1); ++c) {
        const float a = x.comp(c), d = y.comp(c);
        switch (op) {
            case Expr::Add: r.v[c] = a + d; break;
            case Expr::Sub: r.v[c] = a - d; break;
            case Expr::Mul: r.v[c] = a * d; break;
            default: r.v[c] = a / d; break;
        }
    }
    return r;
}

class Machine {
public:
    const std::vector<std::vector<float>>& globals;

    Val eval(const Expr& e, Frame& f) const {
        switch (e.op) {
            case Expr::Lit: return e.lit;
            case Expr::Var: return f.vars[static_cast<std::size_t>(e.slot)];
            case Expr::LocalIndex: return Val::f(at(f.arrays[static_cast<std::size_t>(e.slot)], index(*e.kids[0], f)));
            case Expr::GlobalIndex: return Val::f(at(globals[static_cast<std::size_t>(e.slot)], index(*e.kids[0], f)));
            case Expr::Member: {
                const Val v = eval(*e.kids[0], f);
                if (v.k != Kind::Vec3) runtime_fail("member access on a scalar");
                return Val::f(v.v[e.slot]);
            }
            case Expr::Neg: {
                Val v = eval(*e.kids[0], f);
                if (v.k == Kind::Int) return Val::n(-v.i);
                if (v.k == Kind::Bool) runtime_fail("negating a boolean");
                for (float& c : v.v) c = -c;
                return v;
            }
            case Expr::Call: return call(e, f);
            default: return arith(e.op, eval(*e.kids[0], f), eval(*e.kids[1], f));
        }
    }

    // Returns true when a return statement ran.
    bool exec(const Stmt& s, Frame& f) const {
        switch (s.op) {
            case Stmt::Block:
                for (const auto& c : s.body) {
                    if (exec(*c, f)) return true;
                }
                return false;
            case Stmt::Decl: {
                Val v;
                if (s.a) {
                    v = convert(eval(*s.a, f), s.type);
                } else {
                    v = s.type == Kind::Vec3 ? Val::vec(0, 0, 0) : (s.type == Kind::Int ? Val::n(0) : Val::f(0));
                }
                f.vars[static_cast<std::size_t>(s.slot)] = v;
                return false;
            }
            case Stmt::DeclArray: {
                auto& arr = f.arrays[static_cast<std::size_t>(s.slot)];
                std::fill(arr.begin(), arr.end(), 0.0f);
                return false;
            }
            case Stmt::Assign: {
                Val& dst = f.vars[static_cast<std::size_t>(s.slot)];
                Val v = eval(*s.a, f);
                if (s.assign != '=') v = arith(compound(s.assign), dst, v);
                dst = convert(v, dst.k);
                return false;
            }
            case Stmt::AssignIndex: {
                auto& arr = f.arrays[static_cast<std::size_t>(s.slot)];
                const int i = index(*s.a, f);
                if (i < 0 || static_cast<std::size_t>(i) >= arr.size()) runtime_fail("array index out of bounds");
                Val v = eval(*s.b, f);
                if (s.assign != '=') v = arith(compound(s.assign), Val::f(arr[static_cast<std::size_t>(i)]), v);
                arr[static_cast<std::size_t>(i)] = convert(v, Kind::Float).v[0];
                return false;
            }
            case Stmt::If: {
                if (truth(eval(*s.a, f))) {
                    for (const auto& c : s.body) {
                        if (exec(*c, f)) return true;
                    }
                } else {
                    for (const auto& c : s.other) {
                        if (exec(*c, f)) return true;
                    }
                }
                return false;
            }
            case Stmt::For: {
                exec(*s.other[0], f);
                for (int guard = 0; truth(eval(*s.a, f)); ++guard) {
                    if (guard > 100000000) runtime_fail("loop does not terminate");
                    for (const auto& c : s.body) {
                        if (exec(*c, f)) return true;
                    }
                    exec(*s.other[1], f);
                }
                return false;
            }
            case Stmt::Return: f.ret = eval(*s.a, f); return true;
            case Stmt::Eval: eval(*s.a, f); return false;
        }
        return false;
    }

private:
    static Expr::Op compound(char c) {
        switch (c) {
            case '+': return Expr::Add;
            case '-': return Expr::Sub;
            case '*': return Expr::Mul;
            default: return Expr::Div;
        }
    }

    static bool truth(const Val& v) {
        if (v.k != Kind::Bool) runtime_fail("condition is not boolean");
        return v.i != 0;
    }

    static Val convert(const Val& v, Kind to) {
        if (v.k == to) return v;
        if (to == Kind::Float && v.k == Kind::Int) return Val::f(static_cast<float>(v.i));
        if (to == Kind::Int && v.k == Kind::Float) return Val::n(static_cast<int>(v.v[0]));
        runtime_fail("type mismatch in assignment");
    }

    static float at(const std::vector<float>& arr, int i) {
        if (i < 0 || static_cast<std::size_t>(i) >= arr.size()) runtime_fail("array index out of bounds");
        return arr[static_cast<std::size_t>(i)];
    }

    int index(const Expr& e, Frame& f) const {
        const Val v = eval(e, f);
        if (v.k != Kind::Int) runtime_fail("array index is not an int");
        return v.i;
    }

    Val call(const Expr& e, Frame& f) const {
        Val a[3];
        const std::size_t n = e.kids.size();
        for (std::size_t i = 0; i < n && i < 3; ++i) a[i] = eval(*e.kids[i], f);
        auto unary = [&](float (*g)(float)) {
            Val r = a[0].k == Kind::Vec3 ? a[0] : Val::f(a[0].scalar());
            for (int c = 0; c < (r.k == Kind::Vec3 ? 3 : 1); ++c) r.v[c] = g(r.v[c]);
            return r;
        };
        auto need_vec = [&](int count) {
            for (int i = 0; i < count; ++i) {
                if (a[i].k != Kind::Vec3) runtime_fail("vector argument expected");
            }
        };
        auto dot3 = [](const Val& x, const Val& y) { return x.v[0] * y.v[0] + x.v[1] * y.v[1] + x.v[2] * y.v[2]; };
        switch (e.fn) {
            case Fn::Vec3:
                if (n == 1) return Val::vec(a[0].scalar(), a[0].scalar(), a[0].scalar());
                return Val::vec(a[0].scalar(), a[1].scalar(), a[2].scalar());
            case Fn::Float: return Val::f(a[0].scalar());
            case Fn::Sin: return unary([](float x) { return std::sin(x); });
            case Fn::Cos: return unary([](float x) { return std::cos(x); });
            case Fn::Sqrt: return unary([](float x) { return std::sqrt(x); });
            case Fn::Exp: return unary([](float x) { return std::exp(x); });
            case Fn::Abs: return unary([](float x) { return std::abs(x); });
            case Fn::Pow:
            case Fn::Max:
            case Fn::Min: {
                const bool vec = a[0].k == Kind::Vec3 || a[1].k == Kind::Vec3;
                Val r = vec ? Val::vec(0, 0, 0) : Val::f(0);
                for (int c = 0; c < (vec ? 3 : 1); ++c) {
                    const float x = a[0].comp(c), y = a[1].comp(c);
                    r.v[c] = e.fn == Fn::Pow ? std::pow(x, y) : e.fn == Fn::Max ? (x < y ? y : x) : (y < x ? y : x);
                }
                return r;
            }
            case Fn::Clamp: {
                const bool vec = a[0].k == Kind::Vec3;
                Val r = vec ? Val::vec(0, 0, 0) : Val::f(0);
                for (int c = 0; c < (vec ? 3 : 1); ++c) {
                    r.v[c] = std::min(std::max(a[0].comp(c), a[1].comp(c)), a[2].comp(c));
                }
                return r;
            }
            case Fn::Dot: need_vec(2); return Val::f(dot3(a[0], a[1]));
            case Fn::Cross:
                need_vec(2);
                return Val::vec(a[0].v[1] * a[1].v[2] - a[0].v[2] * a[1].v[1], a[0].v[2] * a[1].v[0] - a[0].v[0] * a[1].v[2],
                                a[0].v[0] * a[1].v[1] - a[0].v[1] * a[1].v[0]);
            case Fn::Length: need_vec(1); return Val::f(std::sqrt(dot3(a[0], a[0])));
            case Fn::Normalize: {
                need_vec(1);
                const float inv = 1.0f / std::sqrt(dot3(a[0], a[0]));
                return Val::vec(a[0].v[0] * inv, a[0].v[1] * inv, a[0].v[2] * inv);
            }
        }
        runtime_fail("unknown builtin");
    }
};

// --- Lexer -----------------------------------------------------------------

struct Token {
    enum Type { Ident, Number, Punct, End };
    Type type = End;
    std::string text;
    bool is_float = false;
    int line = 0;
};

std::vector<Token> lex(const std::string& src) {
    std::vector<Token> out;
    std::size_t p = 0;
    int line = 1;
    auto fail = [&](const std::string& why) {
        throw Error(ErrorCode::ParseError, "shader line " + std::to_string(line) + ": " + why);
    };
    while (p < src.size()) {
        const char c = src[p];
        if (c == '\n') {
            ++line;
            ++p;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++p;
        } else if (c == '/' && p + 1 < src.size() && src[p + 1] == '/') {
            while (p < src.size() && src[p] != '\n') ++p;
        } else if (c == '/' && p + 1 < src.size() && src[p + 1] == '*') {
            const auto e = src.find("*/", p + 2);
            if (e == std::string::npos) fail("unterminated comment");
            for (std::size_t i = p; i < e; ++i) line += src[i] == '\n';
            p = e + 2;
        } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            Token t{Token::Ident, "", false, line};
            while (p < src.size() && (std::isalnum(static_cast<unsigned char>(src[p])) || src[p] == '_')) t.text += src[p++];
            out.push_back(t);
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '.' && p + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[p + 1])))) {
            Token t{Token::Number, "", false, line};
            while (p < src.size() && (std::isdigit(static_cast<unsigned char>(src[p])) || src[p] == '.')) {
                t.is_float |= src[p] == '.';
                t.text += src[p++];
            }
            if (p < src.size() && (src[p] == 'e' || src[p] == 'E')) {
                t.is_float = true;
                t.text += src[p++];
                if (p < src.size() && (src[p] == '+' || src[p] == '-')) t.text += src[p++];
                if (p >= src.size() || !std::isdigit(static_cast<unsigned char>(src[p]))) fail("bad exponent");
                while (p < src.size() && std::isdigit(static_cast<unsigned char>(src[p]))) t.text += src[p++];
            }
            if (p < src.size() && (src[p] == 'f' || src[p] == 'F')) {
                t.is_float = true;
                ++p;
            }
            out.push_back(t);
        } else {
            static const char* two[] = {"<=", ">=", "==", "!=", "+=", "-=", "*=", "/=", "++", "--", "&&", "||"};
            Token t{Token::Punct, std::string(1, c), false, line};
            for (const char* op : two) {
                if (src.compare(p, 2, op) == 0) t.text = op;
            }
            if (t.text.size() == 1 && std::string("()[]{},;.+-*/<>=").find(c) == std::string::npos) {
                fail(std::string("unexpected character '") + c + "'");
            }
            p += t.text.size();
            out.push_back(t);
        }
    }
    out.push_back({Token::End, "", false, line});
    return out;
}

// --- Parser ----------------------------------------------------------------

struct Sym {
    bool array = false;
    bool global = false;
    Kind type = Kind::Float;
    int slot = 0;
};

class Parser {
public:
    explicit Parser(const std::string& src) : toks_(lex(src)) {}

    std::vector<std::vector<float>> globals;
    std::vector<std::string> global_names;
    std::vector<std::size_t> array_sizes;  // local arrays, slot order
    int n_vars = 0;
    int n_params = 0;
    int params_array = -1;
    int wi_slot = -1, wo_slot = -1;
    std::unique_ptr<Stmt> body;

    void program() {
        scopes_.emplace_back();  // globals
        bool have_fn = false;
        while (peek().type != Token::End) {
            if (accept("const")) {
                global_array();
            } else if (peek().text == "vec3" && peek(1).text == "eval_brdf") {
                if (have_fn) fail("eval_brdf defined twice");
                function();
                have_fn = true;
            } else {
                fail("expected a constant array or eval_brdf, found '" + peek().text + "'");
            }
        }
        if (!have_fn) fail("no eval_brdf function");
    }

private:
    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    std::vector<std::unordered_map<std::string, Sym>> scopes_;

    const Token& peek(std::size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
    [[noreturn]] void fail(const std::string& why) const {
        throw Error(ErrorCode::ParseError, "shader line " + std::to_string(peek().line) + ": " + why);
    }
    bool accept(const std::string& s) {
        if (peek().type != Token::End && peek().text == s) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(const std::string& s) {
        if (!accept(s)) fail("expected '" + s + "', found '" + peek().text + "'");
    }
    std::string ident() {
        if (peek().type != Token::Ident) fail("expected an identifier, found '" + peek().text + "'");
        return toks_[pos_++].text;
    }
    int int_literal() {
        if (peek().type != Token::Number || peek().is_float) fail("expected an integer literal");
        return std::stoi(toks_[pos_++].text);
    }
    float number() {
        bool neg = accept("-");
        if (peek().type != Token::Number) fail("expected a number");
        const float v = std::stof(toks_[pos_++].text);
        return neg ? -v : v;
    }
    static bool is_type(const std::string& s) { return s == "float" || s == "vec3" || s == "int"; }
    static Kind kind_of(const std::string& s) {
        return s == "vec3" ? Kind::Vec3 : s == "int" ? Kind::Int : Kind::Float;
    }

    void declare(const std::string& name, Sym s) {
        if (builtins().count(name) || is_type(name)) fail("'" + name + "' is reserved");
        if (scopes_.back().count(name)) fail("'" + name + "' redeclared in the same scope");
        scopes_.back()[name] = s;
    }
    const Sym& lookup(const std::string& name) const {
        for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
            auto f = it->find(name);
            if (f != it->end()) return f->second;
        }
        fail("undeclared identifier '" + name + "'");
    }

    void global_array() {
        expect("float");
        const std::string name = ident();
        expect("[");
        const int n = int_literal();
        expect("]");
        expect("=");
        expect("float");
        expect("[");
        if (int_literal() != n) fail("array constructor size differs from the declaration");
        expect("]");
        expect("(");
        std::vector<float> v;
        if (!accept(")")) {
            do {
                v.push_back(number());
            } while (accept(","));
            expect(")");
        }
        expect(";");
        if (static_cast<int>(v.size()) != n) fail("array '" + name + "' has the wrong number of elements");
        declare(name, Sym{true, true, Kind::Float, static_cast<int>(globals.size())});
        globals.push_back(std::move(v));
        global_names.push_back(name);
    }

    void function() {
        expect("vec3");
        expect("eval_brdf");
        expect("(");
        scopes_.emplace_back();
        expect("vec3");
        const std::string a = ident();
        wi_slot = n_vars++;
        declare(a, Sym{false, false, Kind::Vec3, wi_slot});
        expect(",");
        expect("vec3");
        const std::string b = ident();
        wo_slot = n_vars++;
        declare(b, Sym{false, false, Kind::Vec3, wo_slot});
        expect(",");
        expect("float");
        const std::string p = ident();
        expect("[");
        n_params = int_literal();
        expect("]");
        expect(")");
        params_array = static_cast<int>(array_sizes.size());
        array_sizes.push_back(static_cast<std::size_t>(n_params));
        declare(p, Sym{true, false, Kind::Float, params_array});
        body = block();
        scopes_.pop_back();
    }

    std::unique_ptr<Stmt> block() {
        expect("{");
        scopes_.emplace_back();
        auto s = std::make_unique<Stmt>();
        s->op = Stmt::Block;
        while (!accept("}")) {
            if (peek().type == Token::End) fail("unterminated block");
            s->body.push_back(statement());
        }
        scopes_.pop_back();
        return s;
    }

    std::unique_ptr<Stmt> statement() {
        if (peek().text == "{") return block();
        if (accept("if")) {
            auto s = std::make_unique<Stmt>();
            s->op = Stmt::If;
            expect("(");
            s->a = expr();
            expect(")");
            s->body.push_back(block());
            if (accept("else")) s->other.push_back(peek().text == "if" ? statement() : block());
            return s;
        }
        if (accept("for")) return for_loop();
        if (accept("return")) {
            auto s = std::make_unique<Stmt>();
            s->op = Stmt::Return;
            s->a = expr();
            expect(";");
            return s;
        }
        if (is_type(peek().text)) {
            auto s = declaration();
            expect(";");
            return s;
        }
        auto s = assignment();
        expect(";");
        return s;
    }

    std::unique_ptr<Stmt> declaration() {
        const Kind type = kind_of(ident());
        const std::string name = ident();
        auto s = std::make_unique<Stmt>();
        if (accept("[")) {
            if (type != Kind::Float) fail("only float arrays are supported");
            const int n = int_literal();
            if (n <= 0) fail("array size must be positive");
            expect("]");
            s->op = Stmt::DeclArray;
            s->slot = static_cast<int>(array_sizes.size());
            array_sizes.push_back(static_cast<std::size_t>(n));
            declare(name, Sym{true, false, Kind::Float, s->slot});
            return s;
        }
        s->op = Stmt::Decl;
        s->type = type;
        if (accept("=")) s->a = expr();  // initializer sees the outer binding
        s->slot = n_vars++;
        declare(name, Sym{false, false, type, s->slot});
        return s;
    }

    std::unique_ptr<Stmt> assignment() {
        const std::string name = ident();
        const Sym sym = lookup(name);
        auto s = std::make_unique<Stmt>();
        s->slot = sym.slot;
        if (sym.array) {
            if (sym.global) fail("cannot assign to constant array '" + name + "'");
            expect("[");
            s->op = Stmt::AssignIndex;
            s->a = expr();
            expect("]");
        } else {
            s->op = Stmt::Assign;
        }
        if (accept("++") || accept("--")) {
            if (sym.array) fail("increment of an array element");
            const bool inc = toks_[pos_ - 1].text == "++";
            s->assign = inc ? '+' : '-';
            s->a = literal(Val::n(1));
            return s;
        }
        const std::string op = peek().text;
        if (op == "=" || op == "+=" || op == "-=" || op == "*=" || op == "/=") {
            ++pos_;
            s->assign = op[0];
        } else {
            fail("expected an assignment operator");
        }
        (sym.array ? s->b : s->a) = expr();
        return s;
    }

    std::unique_ptr<Stmt> for_loop() {
        expect("(");
        scopes_.emplace_back();
        auto s = std::make_unique<Stmt>();
        s->op = Stmt::For;
        s->other.push_back(declaration());
        expect(";");
        s->a = expr();
        expect(";");
        s->other.push_back(assignment());
        expect(")");
        s->body.push_back(block());
        scopes_.pop_back();
        return s;
    }

    static std::unique_ptr<Expr> literal(Val v) {
        auto e = std::make_unique<Expr>();
        e->op = Expr::Lit;
        e->lit = v;
        return e;
    }
    static std::unique_ptr<Expr> binary(Expr::Op op, std::unique_ptr<Expr> l, std::unique_ptr<Expr> r) {
        auto e = std::make_unique<Expr>();
        e->op = op;
        e->kids.push_back(std::move(l));
        e->kids.push_back(std::move(r));
        return e;
    }

    std::unique_ptr<Expr> expr() {
        auto l = additive();
        static const std::pair<const char*, Expr::Op> cmp[] = {
            {"<", Expr::Lt}, {">", Expr::Gt}, {"<=", Expr::Le}, {">=", Expr::Ge}};
        for (auto [t, op] : cmp) {
            if (accept(t)) return binary(op, std::move(l), additive());
        }
        return l;
    }
    std::unique_ptr<Expr> additive() {
        auto l = term();
        for (;;) {
            if (accept("+")) {
                l = binary(Expr::Add, std::move(l), term());
            } else if (accept("-")) {
                l = binary(Expr::Sub, std::move(l), term());
            } else {
                return l;
            }
        }
    }
    std::unique_ptr<Expr> term() {
        auto l = unary();
        for (;;) {
            if (accept("*")) {
                l = binary(Expr::Mul, std::move(l), unary());
            } else if (accept("/")) {
                l = binary(Expr::Div, std::move(l), unary());
            } else {
                return l;
            }
        }
    }
    std::unique_ptr<Expr> unary() {
        if (accept("-")) {
            auto e = std::make_unique<Expr>();
            e->op = Expr::Neg;
            e->kids.push_back(unary());
            return e;
        }
        if (accept("+")) return unary();
        return postfix();
    }
    std::unique_ptr<Expr> postfix() {
        auto e = primary();
        while (accept(".")) {
            const std::string m = ident();
            auto mem = std::make_unique<Expr>();
            mem->op = Expr::Member;
            if (m == "x" || m == "r") {
                mem->slot = 0;
            } else if (m == "y" || m == "g") {
                mem->slot = 1;
            } else if (m == "z" || m == "b") {
                mem->slot = 2;
            } else {
                fail("unsupported member '." + m + "'");
            }
            mem->kids.push_back(std::move(e));
            e = std::move(mem);
        }
        return e;
    }
    std::unique_ptr<Expr> primary() {
        if (accept("(")) {
            auto e = expr();
            expect(")");
            return e;
        }
        if (peek().type == Token::Number) {
            const Token& t = toks_[pos_++];
            return literal(t.is_float ? Val::f(std::stof(t.text)) : Val::n(std::stoi(t.text)));
        }
        const std::string name = ident();
        if (accept("(")) {
            auto it = builtins().find(name);
            if (it == builtins().end()) fail("unknown function '" + name + "'");
            auto e = std::make_unique<Expr>();
            e->op = Expr::Call;
            e->fn = it->second.first;
            if (!accept(")")) {
                do {
                    e->kids.push_back(expr());
                } while (accept(","));
                expect(")");
            }
            const int want = it->second.second;
            const int got = static_cast<int>(e->kids.size());
            if (want >= 0 ? got != want : (got != 1 && got != 3)) fail("wrong argument count for '" + name + "'");
            return e;
        }
        const Sym& sym = lookup(name);
        auto e = std::make_unique<Expr>();
        e->slot = sym.slot;
        if (sym.array) {
            expect("[");
            e->op = sym.global ? Expr::GlobalIndex : Expr::LocalIndex;
            e->kids.push_back(expr());
            expect("]");
        } else {
            e->op = Expr::Var;
        }
        return e;
    }
};

}  // namespace

struct ShaderProgram::Impl {
    std::vector<std::vector<float>> globals;
    std::vector<std::string> global_names;
    std::vector<std::size_t> array_sizes;
    int n_vars = 0;
    int n_params = 0;
    int params_array = 0;
    int wi_slot = 0, wo_slot = 0;
    std::unique_ptr<Stmt> body;
};

ShaderProgram::ShaderProgram(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
ShaderProgram::ShaderProgram(ShaderProgram&&) noexcept = default;
ShaderProgram& ShaderProgram::operator=(ShaderProgram&&) noexcept = default;
ShaderProgram::~ShaderProgram() = default;

ShaderProgram ShaderProgram::parse(const std::string& source) {
    Parser p(source);
    p.program();
    auto impl = std::make_unique<Impl>();
    impl->globals = std::move(p.globals);
    impl->global_names = std::move(p.global_names);
    impl->array_sizes = std::move(p.array_sizes);
    impl->n_vars = p.n_vars;
    impl->n_params = p.n_params;
    impl->params_array = p.params_array;
    impl->wi_slot = p.wi_slot;
    impl->wo_slot = p.wo_slot;
    impl->body = std::move(p.body);
    return ShaderProgram(std::move(impl));
}

int ShaderProgram::param_count() const { return impl_->n_params; }

std::array<float, 3> ShaderProgram::eval(const std::array<float, 3>& wi, const std::array<float, 3>& wo,
                                         std::span<const float> params) const {
    if (static_cast<int>(params.size()) != impl_->n_params) {
        throw Error(ErrorCode::DimensionMismatch, "shader expects " + std::to_string(impl_->n_params) + " parameters");
    }
    Frame f;
    f.vars.resize(static_cast<std::size_t>(impl_->n_vars));
    f.arrays.reserve(impl_->array_sizes.size());
    for (std::size_t n : impl_->array_sizes) f.arrays.emplace_back(n, 0.0f);
    f.vars[static_cast<std::size_t>(impl_->wi_slot)] = Val::vec(wi[0], wi[1], wi[2]);
    f.vars[static_cast<std::size_t>(impl_->wo_slot)] = Val::vec(wo[0], wo[1], wo[2]);
    auto& p = f.arrays[static_cast<std::size_t>(impl_->params_array)];
    std::copy(params.begin(), params.end(), p.begin());

    const Machine m{impl_->globals};
    if (!m.exec(*impl_->body, f)) runtime_fail("eval_brdf finished without returning");
    if (f.ret.k != Kind::Vec3) runtime_fail("eval_brdf must return a vec3");
    return {f.ret.v[0], f.ret.v[1], f.ret.v[2]};
}

std::vector<float> ShaderProgram::constant(const std::string& name) const {
    for (std::size_t i = 0; i < impl_->global_names.size(); ++i) {
        if (impl_->global_names[i] == name) return impl_->globals[i];
    }
    return {};
}

std::vector<std::string> ShaderProgram::constant_names() const { return impl_->global_names; }

}  // namespace neam

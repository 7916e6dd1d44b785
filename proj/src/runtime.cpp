// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/runtime.hpp"

#include "binary_io.hpp"
#include "model_codec.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace neam {

namespace {

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

MaterialParams default_init(int p_neural) {
    return {AnalyticalParams{}, NeuralParamVec(static_cast<std::size_t>(p_neural), kNeuralInit)};
}

// Same order as AnalyticalParams::to_array.
constexpr const char* kFieldNames[param::kCount] = {"rho_d_r", "rho_d_g", "rho_d_b", "rho_s_r", "rho_s_g", "rho_s_b",
                                                    "alpha_x", "alpha_y", "f0",      "n_theta", "n_phi",   "t_theta"};

int field_index(const std::string& key) {
    for (int i = 0; i < param::kCount; ++i) {
        if (key == kFieldNames[i]) return i;
    }
    return -1;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

double evaluate_loss(const EnhancedModel& model, const MaterialParams& params, const SampleSet& data) {
    const Candidate c{model, {params}};
    return mean_loss(c, pool_all({data}).train);
}

double mean_abs_log_error(const EnhancedModel& model, const MaterialParams& params, const SampleSet& data) {
    if (data.samples.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& s : data.samples) {
        const Rgb f = forward(model, params.analytical, params.neural, s.wi, s.wo);
        for (int k = 0; k < 3; ++k) {
            sum += std::abs(std::log(std::max(1.0 + s.value[k], kLogFloor)) - std::log(std::max(1.0 + f[k], kLogFloor)));
        }
    }
    return sum / (3.0 * static_cast<double>(data.samples.size()));
}

FitResult fit_material(const EnhancedModel& model, const SampleSet& data, const FitConfig& cfg) {
    if (cfg.epochs < 0) throw Error(ErrorCode::OutOfRange, "epochs must be >= 0");
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw Error(ErrorCode::OutOfRange, "learning rate");
    if (cfg.chunk_size == 0) throw Error(ErrorCode::OutOfRange, "chunk size must be positive");
    if (data.samples.empty()) throw Error(ErrorCode::OutOfRange, "no samples to fit");
    model.validate();

    const int p = model.config.p_neural;
    MaterialParams init = cfg.init ? *cfg.init : default_init(p);
    if (static_cast<int>(init.neural.size()) != p) {
        throw Error(ErrorCode::DimensionMismatch, "initial neural vector has the wrong length");
    }
    init.analytical.validate();

    // The candidate owns a copy of the model; only its parameter table moves.
    Candidate c{model, {init}};
    const DataSplit split = pool_all({data});
    std::vector<std::size_t> idx(split.train.size());
    std::iota(idx.begin(), idx.end(), 0);

    const std::size_t n = static_cast<std::size_t>(param::kCount + p);
    RmsProp opt(n, RmsPropConfig{0.9, cfg.lr, 1e-8});
    BatchGradients grads = BatchGradients::zeros(c.model, 1);
    std::vector<double> flat(n), g(n);
    constexpr double kClip = 1e3;

    FitResult out;
    MaterialParams best = init;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        grads.set_zero();
        const double loss = batch_gradient(c, split.train, idx, cfg.chunk_size, grads);
        std::copy(grads.d_analytical[0].begin(), grads.d_analytical[0].end(), g.begin());
        std::copy(grads.d_neural[0].begin(), grads.d_neural[0].end(), g.begin() + param::kCount);
        if (!std::isfinite(loss) || !all_finite(g)) {
            out.diverged = true;
            break;
        }
        if (loss < best_loss) {
            best_loss = loss;
            best = c.params[0];
        }
        double sq = 0.0;
        for (double v : g) sq += v * v;
        if (std::sqrt(sq) > kClip) {
            const double s = kClip / std::sqrt(sq);
            for (double& v : g) v *= s;
        }
        MaterialParams& cur = c.params[0];
        const auto a = cur.analytical.to_array();
        std::copy(a.begin(), a.end(), flat.begin());
        std::copy(cur.neural.begin(), cur.neural.end(), flat.begin() + param::kCount);
        opt.step(flat, g);
        ParamArray<double> na;
        std::copy(flat.begin(), flat.begin() + param::kCount, na.begin());
        cur.analytical = AnalyticalParams::from_array(na);
        project_params(cur.analytical);
        std::copy(flat.begin() + param::kCount, flat.end(), cur.neural.begin());
        out.epochs_run = epoch + 1;
    }
    if (!out.diverged) {
        const double final_loss = mean_loss(c, split.train, cfg.chunk_size);
        if (std::isfinite(final_loss) && final_loss <= best_loss) {
            best_loss = final_loss;
            best = c.params[0];
        } else if (!std::isfinite(final_loss)) {
            out.diverged = true;
        }
    }
    if (!std::isfinite(best_loss)) {
        // Diverged on the very first evaluation: nothing better than the start.
        best = init;
        best_loss = std::numeric_limits<double>::infinity();
    }
    out.analytical = best.analytical;
    out.neural = best.neural;
    out.final_loss = best_loss;
    return out;
}

FitResult fit_analytical_proxy(const SampleSet& data, const FitConfig& cfg) {
    ModuleConfig mc;
    mc.p_neural = 0;
    const EnhancedModel ggx = EnhancedModel::create(build_ggx_graph(), EnhancementState(11), mc);
    FitConfig c = cfg;
    if (c.init) c.init->neural.clear();
    return fit_material(ggx, data, c);
}

FitResult fit_analytical_proxy(const EnhancedModel& model, const FitResult& fit, std::size_t n_samples,
                               std::uint64_t seed, const FitConfig& cfg) {
    SampleSet set;
    set.material_id = "proxy";
    set.source = SampleSource::SyntheticGgx;
    for (const auto& [wi, wo] : sample_directions(n_samples, SamplingMode::Anisotropic4Angle, seed)) {
        set.samples.push_back({wi, wo, forward(model, fit.analytical, fit.neural, wi, wo)});
    }
    FitConfig c = cfg;
    if (!c.init) c.init = MaterialParams{fit.analytical, {}};
    return fit_analytical_proxy(set, c);
}

// ---------------------------------------------------------------------------
// Text form and edits
// ---------------------------------------------------------------------------

std::string fit_to_text(const FitResult& fit) {
    std::ostringstream os;
    const auto a = fit.analytical.to_array();
    for (int i = 0; i < param::kCount; ++i) os << kFieldNames[i] << '=' << fmt17(a[i]) << '\n';
    os << "neural=";
    for (std::size_t i = 0; i < fit.neural.size(); ++i) os << (i ? " " : "") << fmt17(fit.neural[i]);
    os << '\n';
    os << "final_loss=" << fmt17(fit.final_loss) << '\n';
    os << "epochs_run=" << fit.epochs_run << '\n';
    os << "diverged=" << (fit.diverged ? 1 : 0) << '\n';
    return os.str();
}

FitResult fit_from_text(const std::string& text) {
    FitResult fit;
    ParamArray<double> a{};
    std::array<bool, param::kCount> seen{};
    bool have_loss = false;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(lineno) + ": " + why);
    };
    auto number = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            fail("not a number: '" + s + "'");
        }
        if (used != s.size()) fail("trailing characters in '" + s + "'");
        return v;
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (const int i = field_index(key); i >= 0) {
            a[i] = number(val);
            seen[i] = true;
        } else if (key == "neural") {
            std::istringstream vs(val);
            std::string tok;
            fit.neural.clear();
            while (vs >> tok) fit.neural.push_back(number(tok));
        } else if (key == "final_loss") {
            fit.final_loss = number(val);
            have_loss = true;
        } else if (key == "epochs_run") {
            fit.epochs_run = static_cast<int>(number(val));
        } else if (key == "diverged") {
            fit.diverged = number(val) != 0.0;
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    for (int i = 0; i < param::kCount; ++i) {
        if (!seen[i]) throw Error(ErrorCode::ParseError, std::string("missing ") + kFieldNames[i]);
    }
    if (!have_loss) throw Error(ErrorCode::ParseError, "missing final_loss");
    fit.analytical = AnalyticalParams::from_array(a);
    return fit;
}

void save_fit(const FitResult& fit, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    f << fit_to_text(fit);
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

FitResult load_fit(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return fit_from_text(ss.str());
}

FitResult edit_params(const FitResult& fit, const std::map<std::string, double>& edits) {
    FitResult out = fit;
    auto a = out.analytical.to_array();
    for (const auto& [key, v] : edits) {
        if (!std::isfinite(v)) throw Error(ErrorCode::OutOfRange, key + " must be finite");
        if (key == "rho_d" || key == "rho_s") {
            const int base = key == "rho_d" ? param::kRhoD : param::kRhoS;
            for (int k = 0; k < 3; ++k) a[base + k] = v;
        } else if (const int i = field_index(key); i >= 0) {
            a[i] = v;
        } else if (key.size() > 1 && key[0] == 'z' && key.find_first_not_of("0123456789", 1) == std::string::npos) {
            const std::size_t k = std::stoul(key.substr(1));
            if (k >= out.neural.size()) throw Error(ErrorCode::OutOfRange, "no neural parameter " + key);
            out.neural[k] = v;
        } else {
            throw Error(ErrorCode::OutOfRange, "unknown parameter '" + key + "'");
        }
    }
    out.analytical = AnalyticalParams::from_array(a);
    out.analytical.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

std::vector<unsigned char> encode_model_file(const EnhancedModel& model) {
    model.validate();
    detail::ByteWriter w;
    w.magic("NEAM");
    w.u32(kModelFileVersion);
    w.f64(kCosEpsilon);
    w.f64(kAlphaMin);
    w.f64(model.config.leaky_slope);
    detail::encode_model(w, model);
    detail::seal(w);
    return w.data();
}

EnhancedModel decode_model_file(const std::vector<unsigned char>& bytes) {
    detail::ByteReader head(bytes);
    if (bytes.size() < 4) throw Error(ErrorCode::Truncated, "model file: too short");
    if (!head.magic("NEAM")) throw Error(ErrorCode::BadMagic, "not a model file");
    const std::uint32_t version = head.u32();
    if (version != kModelFileVersion) {
        throw Error(ErrorCode::VersionUnsupported, "model file version " + std::to_string(version));
    }
    const std::size_t n = detail::checked_length(bytes, "model file");
    detail::ByteReader r(bytes.data(), n);
    r.magic("NEAM");
    r.u32();
    const double eps = r.f64();
    const double alpha_min = r.f64();
    const double slope = r.f64();
    if (eps != kCosEpsilon || alpha_min != kAlphaMin) {
        throw Error(ErrorCode::BadHeader, "model file built with different clamping constants");
    }
    EnhancedModel m = detail::decode_model(r);
    if (m.config.leaky_slope != slope) throw Error(ErrorCode::BadHeader, "leaky slope disagrees with the header");
    if (r.remaining() != 0) throw Error(ErrorCode::BadHeader, "trailing bytes in model file");
    return m;
}

void save_model(const EnhancedModel& model, const std::filesystem::path& path) {
    detail::write_file(path, encode_model_file(model));
}

EnhancedModel load_model(const std::filesystem::path& path) { return decode_model_file(detail::read_file(path)); }

// ---------------------------------------------------------------------------
// Slices
// ---------------------------------------------------------------------------

Direction square_to_hemisphere(double u, double v) {
    const double a = 2.0 * u - 1.0;
    const double b = 2.0 * v - 1.0;
    if (a == 0.0 && b == 0.0) return {0.0, 0.0, 1.0};
    double r, phi;
    if (std::abs(a) > std::abs(b)) {
        r = a;
        phi = 0.25 * kPi * (b / a);
    } else {
        r = b;
        phi = 0.5 * kPi - 0.25 * kPi * (a / b);
    }
    const double r2 = r * r;
    const double s = std::sqrt(std::max(0.0, 2.0 - r2));
    return normalize(Direction{r * std::cos(phi) * s, r * std::sin(phi) * s, 1.0 - r2});
}

std::vector<SlicePixel> slice_pixels(const SliceSpec& spec) {
    if (spec.resolution < 8) throw Error(ErrorCode::OutOfRange, "slice resolution must be >= 8");
    if (spec.resolution > 16384) throw Error(ErrorCode::OutOfRange, "slice resolution too large");
    const int res = spec.resolution;
    std::vector<SlicePixel> px(static_cast<std::size_t>(res) * res);
    if (spec.mode == SliceSpec::Mode::FixedWo) {
        if (!(spec.theta_o >= 0.0 && spec.theta_o < 0.5 * kPi)) {
            throw Error(ErrorCode::OutOfRange, "theta_o must lie in [0, pi/2)");
        }
        const Direction wo = spherical_direction(spec.theta_o, spec.phi_o);
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                SlicePixel& p = px[static_cast<std::size_t>(y) * res + x];
                p.wi = square_to_hemisphere((x + 0.5) / res, 1.0 - (y + 0.5) / res);
                p.wo = wo;
                p.valid = p.wi.z > 0.0;
            }
        }
    } else {
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                SlicePixel& p = px[static_cast<std::size_t>(y) * res + x];
                HalfDiffAngles h;
                h.theta_d = (x + 0.5) / res * 0.5 * kPi;
                h.theta_h = (y + 0.5) / res * 0.5 * kPi;
                h.phi_d = 0.5 * kPi;
                std::tie(p.wi, p.wo) = halfdiff_to_dirs(h);
                p.valid = p.wi.z > 0.0 && p.wo.z > 0.0;
            }
        }
    }
    return px;
}

Image render_slice_image(const EnhancedModel& model, const FitResult& fit, const SliceSpec& spec) {
    model.validate();
    const auto px = slice_pixels(spec);
    Image img;
    img.width = img.height = spec.resolution;
    img.rgb.assign(px.size() * 3, 0.0f);

    const MaterialInput mat{fit.analytical.to_array(), fit.neural};
    GraphEvaluator eval(model);
    constexpr std::size_t kChunk = 4096;
    std::vector<int> material_of;
    std::vector<Direction> wi, wo;
    std::vector<std::size_t> where;
    for (std::size_t start = 0; start < px.size(); start += kChunk) {
        const std::size_t end = std::min(px.size(), start + kChunk);
        wi.clear();
        wo.clear();
        where.clear();
        for (std::size_t i = start; i < end; ++i) {
            if (!px[i].valid) continue;
            wi.push_back(px[i].wi);
            wo.push_back(px[i].wo);
            where.push_back(i);
        }
        if (where.empty()) continue;
        material_of.assign(where.size(), 0);
        const Eigen::MatrixXd& f = eval.forward({&mat, 1}, material_of, wi, wo, false);
        for (std::size_t j = 0; j < where.size(); ++j) {
            const double c = loss_cosine(wi[j]);
            for (int k = 0; k < 3; ++k) {
                img.rgb[where[j] * 3 + k] = static_cast<float>(f(k, static_cast<Eigen::Index>(j)) * c);
            }
        }
    }
    return img;
}

void write_pfm(const Image& img, const std::filesystem::path& path) {
    if (img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3) {
        throw Error(ErrorCode::DimensionMismatch, "image buffer size");
    }
    detail::ByteWriter w;
    const std::string header = "PF\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
    w.bytes(header.data(), header.size());
    // PFM stores the bottom row first.
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) w.f32(img.at(x, y, c));
        }
    }
    detail::write_file(path, w.data());
}

Image read_pfm(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
        return t;
    };
    if (token() != "PF") throw Error(ErrorCode::BadMagic, "not an RGB PFM file");
    Image img;
    try {
        img.width = std::stoi(token());
        img.height = std::stoi(token());
        if (std::stod(token()) >= 0.0) throw Error(ErrorCode::BadHeader, "big-endian PFM is not supported");
    } catch (const std::logic_error&) {
        throw Error(ErrorCode::BadHeader, "malformed PFM header");
    }
    if (img.width <= 0 || img.height <= 0) throw Error(ErrorCode::BadHeader, "PFM dimensions");
    ++pos;  // the single whitespace byte ending the header
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * 3;
    if (pos > bytes.size() || bytes.size() - pos < n * 4) throw Error(ErrorCode::Truncated, "PFM pixel data");
    detail::ByteReader r(bytes.data() + pos, n * 4);
    img.rgb.resize(n);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) img.rgb[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = r.f32();
        }
    }
    return img;
}

void render_slice(const EnhancedModel& model, const FitResult& fit, const SliceSpec& spec,
                  const std::filesystem::path& path) {
    write_pfm(render_slice_image(model, fit, spec), path);
}

}  // namespace neam

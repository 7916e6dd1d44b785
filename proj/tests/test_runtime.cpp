// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/runtime.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace neam;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "neam_test_runtime";
    std::filesystem::create_directories(dir);
    return dir / name;
}

EnhancedModel ggx_model(const std::string& bits = "00000000000", std::uint64_t seed = 5) {
    return EnhancedModel::create(build_ggx_graph(), EnhancementState::parse(bits), {}, seed);
}

AnalyticalParams known_params() {
    AnalyticalParams p;
    p.rho_d = {0.3, 0.2, 0.1};
    p.rho_s = {0.7, 0.6, 0.5};
    p.alpha_x = 0.25;
    p.alpha_y = 0.35;
    p.f0 = 0.06;
    return p;
}

SampleSet from_model(const EnhancedModel& m, const MaterialParams& mp, std::size_t n, std::uint64_t seed) {
    SampleSet s;
    s.material_id = "synthetic";
    for (const auto& [wi, wo] : sample_directions(n, SamplingMode::Anisotropic4Angle, seed)) {
        s.samples.push_back({wi, wo, forward(m, mp.analytical, mp.neural, wi, wo)});
    }
    return s;
}

NeuralParamVec halves(int p = 27) { return NeuralParamVec(static_cast<std::size_t>(p), 0.5); }

std::vector<unsigned char> slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

void spill(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::Usage;
}

}  // namespace

TEST_CASE("fit_material recovers self-generated GGX data") {
    const auto model = ggx_model();
    const auto data = from_model(model, {known_params(), halves()}, 800, 11);
    FitConfig cfg;
    const FitResult fit = fit_material(model, data, cfg);
    CHECK(fit.epochs_run == 1000);
    CHECK(!fit.diverged);
    CHECK(fit.final_loss >= 0.0);
    CHECK(fit.final_loss < 1e-3);
    CHECK(fit.neural.size() == 27);
    CHECK(fit.final_loss == doctest::Approx(evaluate_loss(model, fit.params(), data)).epsilon(1e-12));
    // Starting loss was far higher.
    CHECK(evaluate_loss(model, {AnalyticalParams{}, halves()}, data) > 10.0 * fit.final_loss);
}

TEST_CASE("fit_material: zero epochs, determinism, frozen weights") {
    const auto model = ggx_model("00010000000", 9);
    const auto data = from_model(model, {known_params(), halves()}, 300, 4);
    FitConfig cfg;
    cfg.epochs = 0;
    MaterialParams init{known_params(), halves()};
    init.analytical.alpha_x = 0.5;
    cfg.init = init;
    const FitResult zero = fit_material(model, data, cfg);
    CHECK(zero.analytical == init.analytical);
    CHECK(zero.neural == init.neural);
    CHECK(zero.epochs_run == 0);
    CHECK(zero.final_loss == evaluate_loss(model, init, data));

    cfg.epochs = 40;
    const auto before = model.modules;
    const FitResult a = fit_material(model, data, cfg);
    const FitResult b = fit_material(model, data, cfg);
    CHECK(a == b);
    CHECK(model.modules == before);
    CHECK(a.final_loss < zero.final_loss);
    // Neural parameters move when a module reads them.
    CHECK(a.neural != init.neural);

    cfg.init->neural.resize(3);
    CHECK(code_of([&] { fit_material(model, data, cfg); }) == ErrorCode::DimensionMismatch);
    cfg.init = init;
    cfg.epochs = -1;
    CHECK(code_of([&] { fit_material(model, data, cfg); }) == ErrorCode::OutOfRange);
}

TEST_CASE("fit_material keeps the best parameters on a non-finite loss") {
    const auto model = ggx_model();
    auto data = from_model(model, {known_params(), halves()}, 100, 2);
    data.samples[7].value[1] = std::numeric_limits<double>::quiet_NaN();
    FitConfig cfg;
    cfg.epochs = 10;
    const FitResult r = fit_material(model, data, cfg);
    CHECK(r.diverged);
    CHECK(r.epochs_run == 0);
    CHECK(r.analytical == AnalyticalParams{});
}

TEST_CASE("analytical proxy") {
    SUBCASE("pure GGX data: proxy equals the direct analytical fit") {
        const auto model = ggx_model();
        auto data = from_model(model, {known_params(), halves()}, 400, 6);
        for (auto& s : data.samples) {
            for (double& v : s.value) v *= 1.05;
        }
        FitConfig cfg;
        cfg.epochs = 200;
        const FitResult direct = fit_material(model, data, cfg);
        const FitResult proxy = fit_analytical_proxy(data, cfg);
        CHECK(proxy.neural.empty());
        CHECK(std::abs(proxy.final_loss - direct.final_loss) <= 1e-6);
        CHECK(proxy.analytical == direct.analytical);
        CHECK(fit_analytical_proxy(data, cfg) == proxy);
    }
    SUBCASE("corrupted Fresnel: the enhanced fit beats the proxy") {
        const auto data = gen_corrupted_ggx({known_params()}, Corruption::FresnelSwap, 2000, {1.0, 0.0}, 8);
        Candidate c{ggx_model("00010000000", 3), init_material_params(1, 27)};
        TrainConfig t;
        t.batch_size = 256;
        t.epochs_per_stage = 30;
        t.seed = 4;
        train_candidate(c, pool_all(data), t, 1);
        FitConfig cfg;
        cfg.epochs = 300;
        cfg.init = c.params[0];
        const FitResult enhanced = fit_material(c.model, data[0], cfg);
        FitConfig pcfg;
        pcfg.epochs = 300;
        pcfg.init = MaterialParams{c.params[0].analytical, {}};
        const FitResult proxy = fit_analytical_proxy(data[0], pcfg);
        CHECK(proxy.final_loss > enhanced.final_loss);

        // Refit from the enhanced model's own samples: deterministic, and a
        // plain GGX that stays close to the model.
        const FitResult from_model_a = fit_analytical_proxy(c.model, enhanced, 1500, 12, pcfg);
        const FitResult from_model_b = fit_analytical_proxy(c.model, enhanced, 1500, 12, pcfg);
        CHECK(from_model_a == from_model_b);
        CHECK(from_model_a.final_loss < 0.1);
    }
}

TEST_CASE("fit text round trip") {
    FitResult f;
    f.analytical = known_params();
    f.analytical.n_theta = 0.1234567890123456789;
    f.neural = {0.1, 1.0 / 3.0, -2e-17};
    f.final_loss = 0.000123456789;
    f.epochs_run = 1000;
    const std::string text = fit_to_text(f);
    CHECK(text.find("alpha_x=0.25\n") != std::string::npos);
    CHECK(fit_from_text(text) == f);
    const auto p = temp_path("fit.txt");
    save_fit(f, p);
    CHECK(load_fit(p) == f);

    CHECK(code_of([&] { fit_from_text("alpha_x=0.3\n"); }) == ErrorCode::ParseError);
    CHECK(code_of([&] { fit_from_text(text + "bogus=1\n"); }) == ErrorCode::ParseError);
    CHECK(code_of([&] { fit_from_text(text + "f0=abc\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("edit_params") {
    const auto model = ggx_model();
    FitResult fit;
    fit.analytical = known_params();
    fit.neural = halves();
    const Direction n{0, 0, 1};

    SUBCASE("zero diffuse albedo drops exactly rho_d / pi at normal incidence") {
        const FitResult e = edit_params(fit, {{"rho_d", 0.0}});
        CHECK(e.analytical.rho_d == Rgb{0, 0, 0});
        CHECK(e.analytical.rho_s == fit.analytical.rho_s);
        const Rgb before = forward(model, fit.analytical, fit.neural, n, n);
        const Rgb after = forward(model, e.analytical, e.neural, n, n);
        for (int k = 0; k < 3; ++k) {
            CHECK(before[k] - after[k] == doctest::Approx(fit.analytical.rho_d[k] / kPi).epsilon(1e-14));
        }
    }
    SUBCASE("scaling rho_s by 4 scales the specular product by 4") {
        std::map<std::string, double> edits;
        const char* keys[] = {"rho_s_r", "rho_s_g", "rho_s_b"};
        for (int k = 0; k < 3; ++k) edits[keys[k]] = 4.0 * fit.analytical.rho_s[k];
        const FitResult e = edit_params(fit, edits);
        const Direction wi = normalize(Direction{0.3, 0.1, 0.9});
        const Direction wo = normalize(Direction{-0.2, 0.2, 0.8});
        const Rgb before = forward(model, fit.analytical, fit.neural, wi, wo);
        const Rgb after = forward(model, e.analytical, e.neural, wi, wo);
        for (int k = 0; k < 3; ++k) {
            const double diffuse = fit.analytical.rho_d[k] / kPi;
            CHECK(after[k] - diffuse == doctest::Approx(4.0 * (before[k] - diffuse)).epsilon(1e-12));
        }
    }
    SUBCASE("editing albedo under a neural slot still changes the output") {
        const auto neural = ggx_model("10000000000", 17);
        const FitResult e = edit_params(fit, {{"rho_d_g", 0.9}});
        const Rgb before = forward(neural, fit.analytical, fit.neural, n, n);
        const Rgb after = forward(neural, e.analytical, e.neural, n, n);
        CHECK(before != after);
        const FitResult z = edit_params(fit, {{"z3", 0.9}});
        CHECK(z.neural[3] == 0.9);
        CHECK(forward(neural, z.analytical, z.neural, n, n) != before);
    }
    SUBCASE("invalid edits") {
        CHECK(code_of([&] { edit_params(fit, {{"alpha_x", 2.0}}); }) == ErrorCode::OutOfRange);
        CHECK(code_of([&] { edit_params(fit, {{"rho_d", -0.1}}); }) == ErrorCode::OutOfRange);
        CHECK(code_of([&] { edit_params(fit, {{"colour", 0.1}}); }) == ErrorCode::OutOfRange);
        CHECK(code_of([&] { edit_params(fit, {{"z27", 0.1}}); }) == ErrorCode::OutOfRange);
        CHECK(code_of([&] { edit_params(fit, {{"f0", std::nan("")}}); }) == ErrorCode::OutOfRange);
    }
}

TEST_CASE("model files") {
    const auto model = ggx_model("00011101000", 23);
    const auto p = temp_path("m.neam");
    save_model(model, p);
    const EnhancedModel back = load_model(p);
    CHECK(back.graph.model_name == "ggx");
    CHECK(back.state == model.state);
    CHECK(back.config == model.config);
    CHECK(back.modules == model.modules);
    CHECK(back.module_weight_count() == 6612);
    const auto bytes = slurp(p);
    CHECK(encode_model_file(back) == bytes);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "NEAM");

    auto trunc = bytes;
    trunc.resize(bytes.size() / 2);
    spill(p, trunc);
    CHECK_THROWS_AS(load_model(p), Error);
    spill(p, {'N', 'E'});
    CHECK(code_of([&] { load_model(p); }) == ErrorCode::Truncated);

    auto foreign = bytes;
    foreign[0] = 'X';
    CHECK(code_of([&] { decode_model_file(foreign); }) == ErrorCode::BadMagic);
    auto newer = bytes;
    newer[4] = 2;
    CHECK(code_of([&] { decode_model_file(newer); }) == ErrorCode::VersionUnsupported);
    auto damaged = bytes;
    damaged[bytes.size() / 2] ^= 0x10;
    CHECK(code_of([&] { decode_model_file(damaged); }) == ErrorCode::ChecksumMismatch);
    CHECK(code_of([&] { load_model(temp_path("missing.neam")); }) == ErrorCode::IoError);

    for (const char* name : {"cooktorrance", "ward", "toy"}) {
        const auto g = build_graph(name);
        const auto m = EnhancedModel::create(g, EnhancementState::all_ones(g.n_slots()), {}, 2);
        const auto d = decode_model_file(encode_model_file(m));
        CHECK(d.modules == m.modules);
        CHECK(d.graph.model_name == name);
    }
}

namespace {

// Worst norm-relative deviation between interpreter and forward().
double shader_deviation(const EnhancedModel& model, int configs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FitResult fit;
    fit.analytical = testing::random_params(rng);
    fit.neural.resize(static_cast<std::size_t>(model.config.p_neural));
    for (double& z : fit.neural) z = u(rng);
    const ShaderProgram prog = ShaderProgram::parse(shader_source(model, fit));
    REQUIRE(prog.param_count() == model.parameter_count());
    const auto dirs = sample_directions(static_cast<std::size_t>(configs), SamplingMode::Anisotropic4Angle, seed + 1);
    double worst = 0.0;
    for (int i = 0; i < configs; ++i) {
        AnalyticalParams a = testing::random_params(rng);
        NeuralParamVec z(static_cast<std::size_t>(model.config.p_neural));
        for (double& v : z) v = u(rng);
        std::vector<float> pf;
        for (double v : a.to_array()) pf.push_back(static_cast<float>(v));
        for (double v : z) pf.push_back(static_cast<float>(v));
        // The reference sees the same f32-rounded inputs.
        ParamArray<double> ar;
        for (int k = 0; k < param::kCount; ++k) ar[k] = pf[static_cast<std::size_t>(k)];
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = pf[param::kCount + k];
        auto [wi, wo] = dirs[static_cast<std::size_t>(i)];
        const std::array<float, 3> fi{float(wi.x), float(wi.y), float(wi.z)};
        const std::array<float, 3> fo{float(wo.x), float(wo.y), float(wo.z)};
        const Rgb ref = forward(model, AnalyticalParams::from_array(ar), z, Direction{fi[0], fi[1], fi[2]},
                                Direction{fo[0], fo[1], fo[2]});
        const auto got = prog.eval(fi, fo, pf);
        double num = 0.0, den = 0.0;
        for (int k = 0; k < 3; ++k) {
            num += (got[k] - ref[k]) * (got[k] - ref[k]);
            den += ref[k] * ref[k];
        }
        worst = std::max(worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-6));
    }
    return worst;
}

}  // namespace

TEST_CASE("shader export: all-zero GGX") {
    const auto model = ggx_model();
    FitResult fit;
    fit.analytical = known_params();
    fit.neural = halves();
    const std::string src = shader_source(model, fit);
    CHECK(src.find("vec3 eval_brdf(vec3 wi, vec3 wo, float params[39])") != std::string::npos);
    const ShaderProgram prog = ShaderProgram::parse(src);
    CHECK(prog.param_count() == 39);
    CHECK(prog.constant_names() == std::vector<std::string>{"default_params"});
    const auto defaults = prog.constant("default_params");
    REQUIRE(defaults.size() == 39);
    CHECK(defaults[6] == 0.25f);
    CHECK(defaults[30] == 0.5f);
    // Same structure as the closed form: D, F, G and the 1 / (4 cos cos) norm.
    for (const char* s : {"s2 = 1.0 / (", "m2 * m2 * m", "gi * go", "1.0 / (4.0 * ci * co)", "s10 = s0 + s9"}) {
        CHECK_MESSAGE(src.find(s) != std::string::npos, s);
    }
    const Direction wi = normalize(Direction{0.2, -0.1, 0.9});
    const Direction wo = normalize(Direction{-0.3, 0.2, 0.7});
    const Rgb ref = eval_analytical_ggx(fit.analytical, wi, wo);
    const auto got = prog.eval({float(wi.x), float(wi.y), float(wi.z)}, {float(wo.x), float(wo.y), float(wo.z)},
                               defaults);
    for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(ref[k]).epsilon(1e-5));
    CHECK(shader_deviation(model, 1000, 31) <= 1e-4);

    const auto p = temp_path("ggx.glsl");
    export_shader(model, fit, p);
    const auto bytes = slurp(p);
    CHECK(std::string(bytes.begin(), bytes.end()) == src);
}

TEST_CASE("shader export matches forward() on 1000 configurations") {
    SUBCASE("four-module state") { CHECK(shader_deviation(ggx_model("00011101000", 3), 1000, 41) <= 1e-4); }
    SUBCASE("all modules") { CHECK(shader_deviation(ggx_model("11111111111", 4), 1000, 42) <= 1e-4); }
    SUBCASE("other graphs") {
        for (const char* name : {"cooktorrance", "ward", "toy"}) {
            const auto g = build_graph(name);
            CHECK(shader_deviation(EnhancedModel::create(g, EnhancementState(g.n_slots())), 300, 43) <= 1e-4);
            auto half = EnhancementState(g.n_slots());
            for (int i = 0; i < g.n_slots(); i += 2) half.bits[static_cast<std::size_t>(i)] = 1;
            CHECK(shader_deviation(EnhancedModel::create(g, half, {}, 5), 300, 44) <= 1e-4);
        }
    }
}

TEST_CASE("shader interpreter: language subset and errors") {
    const std::string ok = R"(
        const float K[3] = float[3](1.0, -2.5e-1, 3);
        vec3 eval_brdf(vec3 wi, vec3 wo, float params[2]) {
            float s = 0.0;
            for (int i = 0; i < 3; i++) { s += K[i] * float(i + 1); }
            vec3 v = vec3(s) * params[0] + wi * 2.0 - wo / 2.0;
            if (v.x > 100.0) { v = vec3(0.0); } else { v = v + vec3(pow(2.0, 3.0), max(1.0, params[1]), min(1.0, 2.0)); }
            int j = 7 / 2;
            return v + vec3(float(j), dot(wi, wo), length(cross(wi, wo)));
        })";
    const auto prog = ShaderProgram::parse(ok);
    CHECK(prog.param_count() == 2);
    const auto r = prog.eval({1, 0, 0}, {0, 1, 0}, std::vector<float>{1.0f, 4.0f});
    // s = 1 - 0.5 + 9 = 9.5
    CHECK(r[0] == doctest::Approx(9.5 + 2.0 + 8.0 + 3.0));
    CHECK(r[1] == doctest::Approx(9.5 - 0.5 + 4.0 + 0.0));
    CHECK(r[2] == doctest::Approx(9.5 + 1.0 + 1.0));
    CHECK_THROWS_AS(prog.eval({1, 0, 0}, {0, 1, 0}, std::vector<float>{1.0f}), Error);

    const char* bad[] = {
        "vec3 eval_brdf(vec3 a, vec3 b, float p[1]) { return q; }",
        "vec3 eval_brdf(vec3 a, vec3 b, float p[1]) { return vec3(1.0) }",
        "const float K[2] = float[2](1.0); vec3 eval_brdf(vec3 a, vec3 b, float p[1]) { return a; }",
        "vec3 eval_brdf(vec3 a, vec3 b, float p[1]) { return foo(a); }",
        "float x = 1.0;",
        "",
    };
    for (const char* src : bad) {
        try {
            ShaderProgram::parse(src);
            FAIL("accepted: " << src);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseError);
        }
    }
    const auto oob = ShaderProgram::parse("vec3 eval_brdf(vec3 a, vec3 b, float p[1]) { return vec3(p[3]); }");
    CHECK_THROWS_AS(oob.eval({0, 0, 1}, {0, 0, 1}, std::vector<float>{1.0f}), Error);
}

TEST_CASE("square_to_hemisphere is equal-area") {
    CHECK(square_to_hemisphere(0.5, 0.5) == Direction{0, 0, 1});
    const int n = 400;
    double mean_z = 0.0;
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            const Direction d = square_to_hemisphere((x + 0.5) / n, (y + 0.5) / n);
            CHECK(std::abs(length(d) - 1.0) < 1e-12);
            CHECK(d.z >= 0.0);
            mean_z += d.z;
        }
    }
    // Uniform over the hemisphere: E[cos theta] = 1/2.
    CHECK(mean_z / (n * n) == doctest::Approx(0.5).epsilon(1e-4));
}

TEST_CASE("slices") {
    const auto model = ggx_model();
    FitResult lambert;
    lambert.analytical = known_params();
    lambert.analytical.rho_s = {0, 0, 0};
    lambert.neural = halves();

    SliceSpec spec;
    spec.theta_o = 0.4;
    spec.phi_o = 1.0;
    spec.resolution = 32;
    const Image img = render_slice_image(model, lambert, spec);
    CHECK(img.width == 32);
    CHECK(img.height == 32);
    const auto px = slice_pixels(spec);
    double lo = 1e9, hi = 0.0, zlo = 1e9, zhi = 0.0;
    for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) {
            const auto& p = px[static_cast<std::size_t>(y) * 32 + x];
            REQUIRE(p.valid);
            for (int c = 0; c < 3; ++c) {
                CHECK(img.at(x, y, c) == doctest::Approx(lambert.analytical.rho_d[c] / kPi * p.wi.z).epsilon(1e-6));
            }
            lo = std::min(lo, double(img.at(x, y, 0)));
            hi = std::max(hi, double(img.at(x, y, 0)));
            zlo = std::min(zlo, p.wi.z);
            zhi = std::max(zhi, p.wi.z);
        }
    }
    CHECK(hi / lo == doctest::Approx(zhi / zlo).epsilon(1e-5));

    const auto path = temp_path("slice.pfm");
    render_slice(model, lambert, spec, path);
    const Image back = read_pfm(path);
    CHECK(back.width == 32);
    CHECK(back.rgb == img.rgb);
    const auto bytes = slurp(path);
    CHECK(std::string(bytes.begin(), bytes.begin() + 13) == "PF\n32 32\n-1.0");
    CHECK(bytes.size() == 14 + 32 * 32 * 12);

    spec.resolution = 7;
    CHECK(code_of([&] { slice_pixels(spec); }) == ErrorCode::OutOfRange);

    SliceSpec hd;
    hd.mode = SliceSpec::Mode::ThetaHThetaD;
    hd.resolution = 16;
    const auto hp = slice_pixels(hd);
    CHECK(hp.front().valid);  // small theta_h and theta_d
    const Image himg = render_slice_image(model, lambert, hd);
    CHECK(himg.width == 16);
    for (std::size_t i = 0; i < hp.size(); ++i) {
        CHECK(hp[i].valid == (hp[i].wi.z > 0.0 && hp[i].wo.z > 0.0));
        if (!hp[i].valid) CHECK(himg.rgb[i * 3] == 0.0f);
    }
}

TEST_CASE("slice of a fit agrees with its ground truth") {
    const auto mats = std::vector<AnalyticalParams>{known_params()};
    const auto data = gen_corrupted_ggx(mats, Corruption::FresnelSwap, 2000, {1.0, 0.0}, 3);
    FitConfig cfg;
    cfg.epochs = 400;
    cfg.init = MaterialParams{known_params(), halves()};
    const auto model = ggx_model();
    const FitResult fit = fit_material(model, data[0], cfg);
    REQUIRE(fit.final_loss > 0.0);

    for (auto mode : {SliceSpec::Mode::FixedWo, SliceSpec::Mode::ThetaHThetaD}) {
        SliceSpec spec;
        spec.mode = mode;
        spec.theta_o = 0.5;
        spec.resolution = 48;
        const Image img = render_slice_image(model, fit, spec);
        const auto px = slice_pixels(spec);
        double sum = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < px.size(); ++i) {
            if (!px[i].valid) continue;
            const Rgb truth = eval_corrupted_ggx(known_params(), Corruption::FresnelSwap, px[i].wi, px[i].wo);
            for (int c = 0; c < 3; ++c) {
                const double t = truth[c] * px[i].wi.z;
                sum += std::abs(std::log1p(t) - std::log1p(double(img.rgb[i * 3 + c])));
            }
            ++count;
        }
        const double per_pixel = sum / count;
        MESSAGE("slice log difference " << per_pixel << " vs fit loss " << fit.final_loss);
        CHECK(per_pixel < 2.0 * fit.final_loss);
    }
}

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include "neam/runtime.hpp"
#include "neam/search.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace neam::cli {

namespace fs = std::filesystem;

namespace {

enum class LogLevel { Quiet, Info, Debug };

struct Globals {
    std::uint64_t seed = 0;
    int threads = 1;
    std::string log_level = "info";
    std::size_t merl_samples = 20000;

    LogLevel level() const {
        if (log_level == "quiet") return LogLevel::Quiet;
        if (log_level == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }
};

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::Usage:
        case ErrorCode::RefusedTooLarge: return kUsage;
        case ErrorCode::NonFinite: return kNumerical;
        default: return kDataError;
    }
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(s);
    while (std::getline(is, cur, sep)) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

/// Comma-separated sources: synthetic:<spec>, *.neas files, directories of
/// *.neas files, or MERL *.binary tables.
std::vector<SampleSet> load_data(const std::string& spec, const Globals& g) {
    std::vector<SampleSet> sets;
    std::uint64_t merl_index = 0;
    for (const std::string& item : split(spec, ',')) {
        if (item.rfind("synthetic:", 0) == 0) {
            auto s = synthetic_dataset(item.substr(10));
            sets.insert(sets.end(), s.begin(), s.end());
            continue;
        }
        const fs::path p(item);
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.path().extension() == ".neas") files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            if (files.empty()) throw Error(ErrorCode::IoError, "no .neas files in " + item);
            for (const auto& f : files) sets.push_back(read_sampleset(f));
        } else if (p.extension() == ".neas") {
            sets.push_back(read_sampleset(p));
        } else if (p.extension() == ".binary") {
            sets.push_back(merl_to_sampleset(read_merl(p), g.merl_samples, derive_seed(g.seed, 0x3e71, merl_index++),
                                             p.stem().string()));
        } else if (!fs::exists(p)) {
            throw Error(ErrorCode::IoError, "no such data source: " + item);
        } else {
            throw Error(ErrorCode::ParseError, "unrecognised data source (want .neas, .binary, a directory or synthetic:): " + item);
        }
    }
    if (sets.empty()) throw Error(ErrorCode::Usage, "--data names no samples");
    for (const auto& s : sets) s.validate(1e-5);
    return sets;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

std::string fmt(double v, const char* spec = "%.9g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

/// Shortest text that reads back as the same double.
std::string shortest(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

/// Parses "key=value" pairs.
std::pair<std::string, std::string> key_value(const std::string& s, const std::string& what) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::Usage, what + " expects key=value, got '" + s + "'");
    return {s.substr(0, eq), s.substr(eq + 1)};
}

double parse_double(const std::string& s, const std::string& what) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::logic_error&) {
        used = 0;
    }
    if (used == 0 || used != s.size()) throw Error(ErrorCode::Usage, what + ": not a number: '" + s + "'");
    return v;
}

std::string shell_quote(const std::string& v) {
    const bool plain = !v.empty() && v.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_./:=,+-") ==
                                         std::string::npos;
    if (plain) return v;
    std::string q = "'";
    for (char c : v) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

/// Every option of one (sub)command with its effective value.
void echo_options(const CLI::App& a, std::string& line) {
    for (const CLI::Option* o : a.get_options()) {
        if (o->get_lnames().empty()) continue;
        const std::string name = "--" + o->get_lnames().front();
        if (name == "--help" || name == "--config") continue;
        if (o->get_type_size() == 0) {
            if (o->count() > 0) line += " " + name;
            continue;
        }
        if (!o->results().empty()) {
            const auto& r = o->results();
            const std::size_t per = static_cast<std::size_t>(std::max(1, o->get_type_size()));
            for (std::size_t i = 0; i < r.size(); i += per) {
                line += " " + name;
                for (std::size_t k = i; k < std::min(r.size(), i + per); ++k) line += " " + shell_quote(r[k]);
            }
        } else if (!o->get_default_str().empty()) {
            line += " " + name + " " + shell_quote(o->get_default_str());
        }
    }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural enhancement of analytical BRDF models", "neam"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "Base random seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Worker threads for candidate training")
        ->envname("NEAM_THREADS")
        ->check(CLI::Range(1, 1024))
        ->capture_default_str();
    app.add_option("--log-level", g.log_level, "quiet, info or debug")
        ->check(CLI::IsMember({"quiet", "info", "debug"}))
        ->capture_default_str();
    app.add_option("--merl-samples", g.merl_samples, "Samples drawn from each MERL table used as data")
        ->check(CLI::Range(std::size_t{1}, std::size_t{100000000}))
        ->capture_default_str();

    // enhance ---------------------------------------------------------------
    auto* enhance = app.add_subcommand("enhance", "Search for the best enhancement state");
    std::string e_model = "ggx", e_data, e_out, e_checkpoint, e_fits, e_report;
    int e_epochs = 30, e_threshold = 1, e_max_stages = 20, e_p_neural = 27;
    std::optional<int> e_max_modules;
    std::vector<std::string> e_fix;
    std::size_t e_batch = 100000;
    double e_lr = 1e-3, e_val = 0.1;
    bool e_resume = false;
    enhance->add_option("--model", e_model, "Base model")
        ->check(CLI::IsMember({"ggx", "cooktorrance", "ward", "toy"}))
        ->capture_default_str();
    enhance->add_option("--data", e_data, "Data sources")->required();
    enhance->add_option("--epochs-per-stage", e_epochs)->check(CLI::Range(0, 1000000))->capture_default_str();
    enhance->add_option("--threshold", e_threshold, "Hamming threshold")->check(CLI::Range(1, 64))->capture_default_str();
    enhance->add_option("--max-modules", e_max_modules, "Upper bound on neural modules");
    enhance->add_option("--fix-bit", e_fix, "slot=0|1, repeatable");
    enhance->add_option("--max-stages", e_max_stages)->check(CLI::Range(1, 100000))->capture_default_str();
    enhance->add_option("--batch-size", e_batch)->check(CLI::Range(std::size_t{1}, std::size_t{1} << 40))->capture_default_str();
    enhance->add_option("--lr", e_lr)->check(CLI::PositiveNumber)->capture_default_str();
    enhance->add_option("--val-fraction", e_val)->check(CLI::Range(0.0, 0.9))->capture_default_str();
    enhance->add_option("--p-neural", e_p_neural)->check(CLI::Range(0, 4096))->capture_default_str();
    enhance->add_option("--out", e_out, "Model file to write")->required();
    enhance->add_option("--report", e_report, "Trace report (default <out>.report.txt)");
    enhance->add_option("--fits", e_fits, "Directory for per-material fit files");
    enhance->add_option("--checkpoint", e_checkpoint, "Checkpoint file, or a directory for search.ck");
    enhance->add_flag("--resume", e_resume, "Continue from the checkpoint if it exists");

    // fit -------------------------------------------------------------------
    auto* fit = app.add_subcommand("fit", "Fit per-material parameters with frozen module weights");
    std::string f_model, f_data, f_out, f_init;
    int f_epochs = 1000;
    double f_lr = 1e-3;
    fit->add_option("--model", f_model, "Model file")->required();
    fit->add_option("--data", f_data, "Data sources")->required();
    fit->add_option("--epochs", f_epochs)->check(CLI::Range(0, 100000000))->capture_default_str();
    fit->add_option("--lr", f_lr)->check(CLI::PositiveNumber)->capture_default_str();
    fit->add_option("--init", f_init, "Starting fit file");
    fit->add_option("--out", f_out, "Fit file (a directory when the data has several materials)")->required();

    // eval ------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Report losses of a fit");
    std::string v_model, v_fit, v_data;
    eval->add_option("--model", v_model)->required();
    eval->add_option("--fit", v_fit)->required();
    eval->add_option("--data", v_data)->required();

    // slice -----------------------------------------------------------------
    auto* slice = app.add_subcommand("slice", "Render a BRDF slice to a PFM image");
    std::string s_model, s_fit, s_out, s_mode = "fixed-wo", s_wo = "30,0";
    int s_res = 256;
    slice->add_option("--model", s_model)->required();
    slice->add_option("--fit", s_fit)->required();
    slice->add_option("--mode", s_mode)->check(CLI::IsMember({"fixed-wo", "theta-h-theta-d"}))->capture_default_str();
    slice->add_option("--wo", s_wo, "theta,phi of the view in degrees")->capture_default_str();
    slice->add_option("--res", s_res)->check(CLI::Range(8, 16384))->capture_default_str();
    slice->add_option("--out", s_out)->required();

    // export ----------------------------------------------------------------
    auto* exp = app.add_subcommand("export", "Write the model and a fit as one shader function");
    std::string x_model, x_fit, x_out;
    exp->add_option("--model", x_model)->required();
    exp->add_option("--fit", x_fit)->required();
    exp->add_option("--out", x_out)->required();

    // gen -------------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "Generate synthetic sample sets");
    std::string g_kind = "ggx", g_out;
    std::size_t g_materials = 4, g_samples = 10000;
    double g_sigma = 0.1;
    gen->add_option("--kind", g_kind, "ggx or corrupted:{fresnel,fresnel-exact,geometry,norm}")
        ->check(CLI::IsMember({"ggx", "corrupted:fresnel", "corrupted:fresnel-exact", "corrupted:geometry", "corrupted:norm"}))
        ->capture_default_str();
    gen->add_option("--materials", g_materials)->check(CLI::Range(std::size_t{1}, std::size_t{100000}))->capture_default_str();
    gen->add_option("--samples", g_samples)->check(CLI::Range(std::size_t{1}, std::size_t{100000000}))->capture_default_str();
    gen->add_option("--noise-sigma", g_sigma)->check(CLI::NonNegativeNumber)->capture_default_str();
    gen->add_option("--out", g_out, "Output directory")->required();

    // merl ------------------------------------------------------------------
    auto* merl = app.add_subcommand("merl", "Inspect or convert MERL tables");
    std::string m_info;
    std::vector<std::string> m_convert;
    merl->add_option("--info", m_info, "Print a summary of a table");
    merl->add_option("--to-sampleset", m_convert, "path n out")->expected(3);
    merl->require_option(1);

    // edit ------------------------------------------------------------------
    auto* edit = app.add_subcommand("edit", "Change parameters of a fit");
    std::string d_fit, d_out;
    std::vector<std::string> d_set;
    edit->add_option("--fit", d_fit)->required();
    edit->add_option("--set", d_set, "key=value, repeatable")->required();
    edit->add_option("--out", d_out)->required();

    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        return rc == 0 ? kOk : kUsage;
    }

    std::string echo = "neam";
    echo_options(app, echo);
    for (const CLI::App* sub : app.get_subcommands()) {
        echo += " " + sub->get_name();
        echo_options(*sub, echo);
    }
    echo += "\n";
    const LogLevel level = g.level();
    if (level != LogLevel::Quiet) err << "# config: " << echo << std::flush;
    auto info = [&](const std::string& s) {
        if (level != LogLevel::Quiet) err << s << '\n' << std::flush;
    };

    try {
        if (enhance->parsed()) {
            const auto data = load_data(e_data, g);
            SearchConfig sc;
            sc.hamming_threshold = e_threshold;
            sc.epochs_per_stage = e_epochs;
            sc.max_modules = e_max_modules;
            sc.max_stages = e_max_stages;
            sc.val_fraction = e_val;
            sc.module.p_neural = e_p_neural;
            for (const auto& f : e_fix) {
                const auto [k, v] = key_value(f, "--fix-bit");
                const double slot = parse_double(k, "--fix-bit slot");
                const double bit = parse_double(v, "--fix-bit value");
                if (slot != std::floor(slot) || slot < 0 || (bit != 0.0 && bit != 1.0)) {
                    throw Error(ErrorCode::Usage, "--fix-bit expects slot=0 or slot=1");
                }
                sc.fixed_bits[static_cast<int>(slot)] = static_cast<int>(bit);
            }
            TrainConfig tc;
            tc.batch_size = e_batch;
            tc.epochs_per_stage = e_epochs;
            tc.seed = g.seed;
            tc.rmsprop.lr = e_lr;
            tc.threads = g.threads;

            SearchOptions opts;
            opts.log = [&](const std::string& line) {
                const bool stage_line = line.rfind("stage", 0) == 0;
                if (level == LogLevel::Debug || (level == LogLevel::Info && stage_line)) err << line << '\n' << std::flush;
            };
            fs::path ck;
            if (!e_checkpoint.empty()) {
                ck = fs::is_directory(e_checkpoint) ? fs::path(e_checkpoint) / "search.ck" : fs::path(e_checkpoint);
                opts.checkpoint = ck;
            }
            info("enhance: " + std::to_string(data.size()) + " materials from " + e_data);
            const CompGraph graph = build_graph(e_model);
            try {
                sc.validate(graph.n_slots());
            } catch (const Error& e) {
                throw Error(ErrorCode::Usage, e.what());
            }
            const SearchResult r = e_resume && !ck.empty() && fs::exists(ck)
                                       ? resume_enhancement(ck, data, sc, tc, opts)
                                       : run_enhancement(graph, data, sc, tc, opts);
            save_model(r.model.model, e_out);
            std::string report = "# config: " + echo + r.trace.report();
            report += "weights " + std::to_string(r.model.model.module_weight_count()) + ", parameters per material " +
                      std::to_string(r.model.model.parameter_count()) + "\n";
            write_text(e_report.empty() ? fs::path(e_out + ".report.txt") : fs::path(e_report), report);
            if (!e_fits.empty()) {
                fs::create_directories(e_fits);
                for (std::size_t m = 0; m < data.size(); ++m) {
                    FitResult fr;
                    fr.analytical = r.model.params[m].analytical;
                    fr.neural = r.model.params[m].neural;
                    fr.final_loss = evaluate_loss(r.model.model, r.model.params[m], data[m]);
                    fr.epochs_run = static_cast<int>(r.trace.stages.size()) * e_epochs;
                    save_fit(fr, fs::path(e_fits) / (data[m].material_id + ".fit"));
                }
            }
            out << r.trace.report();
            if (!std::isfinite(r.trace.final_loss)) {
                err << "error: every candidate diverged\n";
                return kNumerical;
            }
            return kOk;
        }

        if (fit->parsed()) {
            const EnhancedModel model = load_model(f_model);
            const auto data = load_data(f_data, g);
            FitConfig fc;
            fc.epochs = f_epochs;
            fc.lr = f_lr;
            fc.seed = g.seed;
            if (!f_init.empty()) fc.init = load_fit(f_init).params();
            const bool many = data.size() > 1;
            if (many) fs::create_directories(f_out);
            bool diverged = false;
            for (const auto& set : data) {
                const FitResult r = fit_material(model, set, fc);
                const fs::path dest = many ? fs::path(f_out) / (set.material_id + ".fit") : fs::path(f_out);
                save_fit(r, dest);
                out << set.material_id << " loss " << fmt(r.final_loss) << " epochs " << r.epochs_run
                    << (r.diverged ? " diverged" : "") << '\n';
                diverged |= r.diverged;
            }
            if (diverged) {
                err << "error: non-finite loss; best parameters so far were written\n";
                return kNumerical;
            }
            return kOk;
        }

        if (eval->parsed()) {
            const EnhancedModel model = load_model(v_model);
            const FitResult fr = load_fit(v_fit);
            const auto data = load_data(v_data, g);
            for (const auto& set : data) {
                out << set.material_id << " loss " << fmt(evaluate_loss(model, fr.params(), set))
                    << " mean_abs_log_error " << fmt(mean_abs_log_error(model, fr.params(), set)) << '\n';
            }
            return kOk;
        }

        if (slice->parsed()) {
            const EnhancedModel model = load_model(s_model);
            const FitResult fr = load_fit(s_fit);
            SliceSpec spec;
            spec.resolution = s_res;
            spec.mode = s_mode == "fixed-wo" ? SliceSpec::Mode::FixedWo : SliceSpec::Mode::ThetaHThetaD;
            const auto parts = split(s_wo, ',');
            if (parts.size() != 2) throw Error(ErrorCode::Usage, "--wo expects theta,phi");
            spec.theta_o = parse_double(parts[0], "--wo") * kPi / 180.0;
            spec.phi_o = parse_double(parts[1], "--wo") * kPi / 180.0;
            if (!(spec.theta_o >= 0.0 && spec.theta_o < 0.5 * kPi)) {
                throw Error(ErrorCode::Usage, "--wo theta must lie in [0, 90) degrees");
            }
            render_slice(model, fr, spec, s_out);
            out << "wrote " << s_out << " (" << s_res << "x" << s_res << ")\n";
            return kOk;
        }

        if (exp->parsed()) {
            const EnhancedModel model = load_model(x_model);
            export_shader(model, load_fit(x_fit), x_out);
            out << "wrote " << x_out << " (" << model.parameter_count() << " parameters, "
                << model.module_weight_count() << " weights)\n";
            return kOk;
        }

        if (gen->parsed()) {
            std::string spec = g_kind == "ggx" ? "ggx" : "planted-" + g_kind.substr(10);
            spec += ":materials=" + std::to_string(g_materials) + ":samples=" + std::to_string(g_samples) +
                    ":sigma=" + shortest(g_sigma) + ":seed=" + std::to_string(g.seed);
            const auto sets = synthetic_dataset(spec);
            const auto truth = random_materials(g_materials, g.seed);
            fs::create_directories(g_out);
            for (std::size_t m = 0; m < sets.size(); ++m) {
                write_sampleset(sets[m], fs::path(g_out) / (sets[m].material_id + ".neas"));
                FitResult t;
                t.analytical = truth[m];
                save_fit(t, fs::path(g_out) / (sets[m].material_id + ".truth"));
            }
            out << "wrote " << sets.size() << " sample sets to " << g_out << " (synthetic:" << spec << ")\n";
            return kOk;
        }

        if (merl->parsed()) {
            if (!m_info.empty()) {
                const MerlTable t = read_merl(m_info);
                out << m_info << ": " << MerlTable::kThetaH << " x " << MerlTable::kThetaD << " x " << MerlTable::kPhiD
                    << " cells\n";
                const char* names[3] = {"red", "green", "blue"};
                for (int c = 0; c < 3; ++c) {
                    double lo = 1e300, hi = -1e300, sum = 0.0;
                    std::size_t negative = 0;
                    for (std::size_t i = 0; i < MerlTable::kCells; ++i) {
                        const double v = t.raw[c * MerlTable::kCells + i];
                        if (v < 0.0) {
                            ++negative;
                            continue;
                        }
                        const double s = v * MerlTable::kScale[c];
                        lo = std::min(lo, s);
                        hi = std::max(hi, s);
                        sum += s;
                    }
                    const std::size_t valid = MerlTable::kCells - negative;
                    out << names[c] << ": min " << fmt(valid ? lo : 0.0) << " max " << fmt(valid ? hi : 0.0) << " mean "
                        << fmt(valid ? sum / static_cast<double>(valid) : 0.0) << " invalid cells " << negative << '\n';
                }
            }
            if (!m_convert.empty()) {
                const double n = parse_double(m_convert[1], "--to-sampleset n");
                if (n < 1 || n != std::floor(n)) throw Error(ErrorCode::Usage, "--to-sampleset n must be a positive integer");
                const fs::path src(m_convert[0]);
                const SampleSet s = merl_to_sampleset(read_merl(src), static_cast<std::size_t>(n), g.seed, src.stem().string());
                write_sampleset(s, m_convert[2]);
                out << "wrote " << s.samples.size() << " samples to " << m_convert[2] << '\n';
            }
            return kOk;
        }

        if (edit->parsed()) {
            std::map<std::string, double> edits;
            for (const auto& s : d_set) {
                const auto [k, v] = key_value(s, "--set");
                edits[k] = parse_double(v, "--set " + k);
            }
            FitResult fr;
            try {
                fr = edit_params(load_fit(d_fit), edits);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::OutOfRange) throw Error(ErrorCode::Usage, e.what());
                throw;
            }
            save_fit(fr, d_out);
            out << "wrote " << d_out << '\n';
            return kOk;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsage;
}

}  // namespace neam::cli

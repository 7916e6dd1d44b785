// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

#include "neam/search.hpp"

#include "binary_io.hpp"
#include "model_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace neam {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint64_t kSplitSalt = 0x7a11;

}  // namespace

void SearchConfig::validate(int n_slots) const {
    if (hamming_threshold < 1) throw Error(ErrorCode::OutOfRange, "hamming threshold must be at least 1");
    if (epochs_per_stage < 0) throw Error(ErrorCode::OutOfRange, "epochs per stage must be non-negative");
    if (max_stages < 1) throw Error(ErrorCode::OutOfRange, "max_stages must be at least 1");
    if (max_modules && *max_modules < 0) throw Error(ErrorCode::OutOfRange, "max_modules must be non-negative");
    if (!(improvement >= 0.0)) throw Error(ErrorCode::OutOfRange, "improvement margin");
    int forced_on = 0;
    for (const auto& [slot, v] : fixed_bits) {
        if (slot < 0 || slot >= n_slots) throw Error(ErrorCode::OutOfRange, "fixed bit slot " + std::to_string(slot));
        if (v != 0 && v != 1) throw Error(ErrorCode::OutOfRange, "fixed bit value must be 0 or 1");
        forced_on += v;
    }
    if (max_modules && forced_on > *max_modules) {
        throw Error(ErrorCode::OutOfRange, "fixed bits switch on more modules than max_modules allows");
    }
}

StateConstraints SearchConfig::constraints() const {
    StateConstraints c;
    c.fixed_bits = fixed_bits;
    c.max_ones = max_modules;
    return c;
}

std::string SearchTrace::report() const {
    std::ostringstream os;
    char buf[64];
    auto num = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.6g", v);
        return std::string(buf);
    };
    for (const auto& s : stages) {
        os << "stage " << s.stage << ": current " << s.current.str() << ", " << s.candidates.size()
           << " candidates\n";
        for (std::size_t i = 0; i < s.candidates.size(); ++i) {
            os << "  " << s.candidates[i].str() << "  train " << num(s.train_losses[i]) << "  val "
               << num(s.val_losses[i]) << "\n";
        }
        os << "  chosen " << s.chosen.str() << "  loss " << num(s.chosen_loss) << "\n";
    }
    os << "final " << final_state.str() << "  loss " << num(final_loss);
    if (converged) os << "  (converged)";
    if (budget_exceeded) os << "  (stage budget exhausted)";
    if (stopped_on_regression) os << "  (stopped: best candidate worse than previous stage)";
    os << "\n";
    return os.str();
}

std::size_t select_candidate(const std::vector<EnhancementState>& states, const std::vector<double>& losses,
                             double improvement) {
    if (states.empty() || states.size() != losses.size()) {
        throw Error(ErrorCode::DimensionMismatch, "candidate states and losses differ");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < states.size(); ++i) {
        if (!std::isfinite(losses[i])) continue;
        if (best == 0) {
            best = i;
            continue;
        }
        const auto key = [&](std::size_t k) { return std::make_tuple(losses[k], states[k].ones(), states[k]); };
        if (key(i) < key(best)) best = i;
    }
    if (best == 0) return 0;
    const double current = losses[0];
    if (!std::isfinite(current) || losses[best] < current * (1.0 - improvement)) return best;
    return 0;
}

namespace {

struct Cursor {
    int next_stage = 0;
    Candidate current;
    double prev_loss = std::numeric_limits<double>::infinity();
    SearchTrace trace;
    bool finished = false;
};

std::uint64_t fingerprint(const CompGraph& graph, const SearchConfig& cfg, const TrainConfig& tcfg) {
    detail::ByteWriter w;
    w.str(graph.model_name);
    w.i32(cfg.hamming_threshold);
    w.i32(cfg.epochs_per_stage);
    w.i32(cfg.max_modules ? *cfg.max_modules : -1);
    for (const auto& [slot, v] : cfg.fixed_bits) {
        w.i32(slot);
        w.i32(v);
    }
    w.i32(cfg.max_stages);
    w.f64(cfg.improvement);
    w.f64(cfg.val_fraction);
    w.i32(cfg.module.p_neural);
    for (int h : cfg.module.hidden) w.i32(h);
    w.f64(cfg.module.leaky_slope);
    w.u64(tcfg.batch_size);
    w.u64(tcfg.seed);
    w.f64(tcfg.rmsprop.alpha);
    w.f64(tcfg.rmsprop.lr);
    w.f64(tcfg.rmsprop.eps);
    w.f64(tcfg.clip_norm);
    w.u64(tcfg.chunk_size);
    return detail::fnv1a(w.data().data(), w.data().size());
}

void encode_trace(detail::ByteWriter& w, const SearchTrace& t) {
    w.u32(static_cast<std::uint32_t>(t.stages.size()));
    for (const auto& s : t.stages) {
        w.i32(s.stage);
        detail::encode_state(w, s.current);
        w.u32(static_cast<std::uint32_t>(s.candidates.size()));
        for (std::size_t i = 0; i < s.candidates.size(); ++i) {
            detail::encode_state(w, s.candidates[i]);
            w.f64(s.train_losses[i]);
            w.f64(s.val_losses[i]);
        }
        detail::encode_state(w, s.chosen);
        w.f64(s.chosen_loss);
    }
    detail::encode_state(w, t.final_state);
    w.f64(t.final_loss);
    w.u8(t.converged);
    w.u8(t.budget_exceeded);
    w.u8(t.stopped_on_regression);
}

SearchTrace decode_trace(detail::ByteReader& r) {
    SearchTrace t;
    const std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
        StageRecord s;
        s.stage = r.i32();
        s.current = detail::decode_state(r);
        const std::uint32_t c = r.u32();
        for (std::uint32_t i = 0; i < c; ++i) {
            s.candidates.push_back(detail::decode_state(r));
            s.train_losses.push_back(r.f64());
            s.val_losses.push_back(r.f64());
        }
        s.chosen = detail::decode_state(r);
        s.chosen_loss = r.f64();
        t.stages.push_back(std::move(s));
    }
    t.final_state = detail::decode_state(r);
    t.final_loss = r.f64();
    t.converged = r.u8() != 0;
    t.budget_exceeded = r.u8() != 0;
    t.stopped_on_regression = r.u8() != 0;
    return t;
}

void write_checkpoint(const std::filesystem::path& path, const Cursor& cur, std::uint64_t fp,
                      std::uint64_t data_hash) {
    detail::ByteWriter w;
    w.magic("NECK");
    w.u32(kCheckpointVersion);
    w.str(cur.current.model.graph.model_name);
    w.u64(fp);
    w.u64(data_hash);
    w.i32(cur.next_stage);
    w.f64(cur.prev_loss);
    w.u8(cur.finished);
    detail::encode_model(w, cur.current.model);
    detail::encode_params(w, cur.current.params);
    encode_trace(w, cur.trace);
    detail::seal(w);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    // Write then rename so an interrupted write never leaves a torn checkpoint.
    auto tmp = path;
    tmp += ".tmp";
    detail::write_file(tmp, w.data());
    std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
    std::string model_name;
    std::uint64_t fingerprint = 0;
    std::uint64_t data_hash = 0;
    Cursor cursor;
};

LoadedCheckpoint read_checkpoint(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    const std::size_t n = detail::checked_length(bytes, path.string());
    detail::ByteReader r(bytes.data(), n);
    if (!r.magic("NECK")) throw Error(ErrorCode::BadMagic, path.string() + " is not a search checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(version));
    }
    LoadedCheckpoint c;
    c.model_name = r.str();
    c.fingerprint = r.u64();
    c.data_hash = r.u64();
    Cursor& cur = c.cursor;
    cur.next_stage = r.i32();
    cur.prev_loss = r.f64();
    cur.finished = r.u8() != 0;
    cur.current.model = detail::decode_model(r);
    cur.current.params = detail::decode_params(r);
    cur.trace = decode_trace(r);
    return c;
}

Cursor fresh_cursor(const CompGraph& graph, std::size_t n_materials, const SearchConfig& cfg,
                    const TrainConfig& tcfg) {
    EnhancementState start(graph.n_slots());
    for (const auto& [slot, v] : cfg.fixed_bits) start.bits[static_cast<std::size_t>(slot)] = static_cast<std::uint8_t>(v);
    Cursor cur;
    cur.current.model = EnhancedModel::create(graph, start, cfg.module, derive_seed(tcfg.seed, 0x51a7));
    cur.current.params = init_material_params(n_materials, cfg.module.p_neural, tcfg.seed);
    cur.trace.final_state = start;
    cur.trace.final_loss = std::numeric_limits<double>::infinity();
    return cur;
}

SearchResult drive(Cursor cur, const std::vector<SampleSet>& data, const SearchConfig& cfg, const TrainConfig& tcfg,
                   const SearchOptions& opts, std::uint64_t fp, std::uint64_t data_hash) {
    const DataSplit split = split_data(data, cfg.val_fraction, derive_seed(tcfg.seed, kSplitSalt));
    const StateConstraints constraints = cfg.constraints();
    int run_here = 0;
    auto log = [&opts](const std::string& s) {
        if (opts.log) opts.log(s);
    };

    while (!cur.finished) {
        if (cur.next_stage >= cfg.max_stages) {
            cur.trace.budget_exceeded = true;
            cur.finished = true;
            break;
        }
        if (opts.stop_after && run_here >= *opts.stop_after) break;

        const int stage = cur.next_stage;
        const EnhancementState& state = cur.current.model.state;
        const auto neighbors = state_neighbors(state, cfg.hamming_threshold, constraints);
        std::vector<Candidate> candidates;
        candidates.reserve(neighbors.size());
        for (const auto& s : neighbors) {
            Candidate c = cur.current;
            for (int slot = 0; slot < s.size(); ++slot) {
                if (s[slot] != state[slot]) {
                    c.model.set_slot(slot, s[slot], derive_seed(tcfg.seed, static_cast<std::uint64_t>(stage) + 1,
                                                                static_cast<std::uint64_t>(slot)));
                }
            }
            candidates.push_back(std::move(c));
        }
        TrainConfig stage_cfg = tcfg;
        stage_cfg.epochs_per_stage = cfg.epochs_per_stage;
        stage_cfg.seed = derive_seed(tcfg.seed, static_cast<std::uint64_t>(stage) + 1);
        log("stage " + std::to_string(stage) + ": training " + std::to_string(candidates.size()) +
            " candidates around " + state.str());
        const auto results = train_jointly(candidates, split, stage_cfg, opts.log);

        StageRecord rec;
        rec.stage = stage;
        rec.current = state;
        rec.candidates = neighbors;
        for (const auto& r : results) {
            rec.train_losses.push_back(r.train_loss);
            rec.val_losses.push_back(r.val_loss);
        }
        const std::size_t pick = select_candidate(neighbors, rec.val_losses, cfg.improvement);
        const double loss = rec.val_losses[pick];
        if (!std::isfinite(loss) || loss > cur.prev_loss) {
            // Keep the previous snapshot: selected losses never increase.
            rec.chosen = state;
            rec.chosen_loss = cur.prev_loss;
            cur.trace.stopped_on_regression = true;
            cur.finished = true;
        } else {
            rec.chosen = neighbors[pick];
            rec.chosen_loss = loss;
            cur.prev_loss = loss;
            cur.trace.converged = pick == 0;
            cur.finished = pick == 0;
            cur.current = std::move(candidates[pick]);
        }
        char buf[96];
        std::snprintf(buf, sizeof(buf), "stage %d: chose %s (val %.6g)", stage, rec.chosen.str().c_str(),
                      rec.chosen_loss);
        log(buf);
        cur.trace.stages.push_back(std::move(rec));
        cur.trace.final_state = cur.current.model.state;
        cur.trace.final_loss = cur.prev_loss;
        cur.next_stage = stage + 1;
        ++run_here;
        if (!cur.finished && cur.next_stage >= cfg.max_stages) {
            cur.trace.budget_exceeded = true;
            cur.finished = true;
        }
        if (opts.checkpoint) write_checkpoint(*opts.checkpoint, cur, fp, data_hash);
    }
    return {std::move(cur.current), std::move(cur.trace)};
}

void check_data(const std::vector<SampleSet>& data) {
    if (data.empty()) throw Error(ErrorCode::OutOfRange, "no training data");
    for (const auto& s : data) {
        if (s.samples.empty()) throw Error(ErrorCode::OutOfRange, "material " + s.material_id + " has no samples");
    }
}

}  // namespace

SearchResult run_enhancement(const CompGraph& graph, const std::vector<SampleSet>& data, const SearchConfig& cfg,
                             const TrainConfig& tcfg, const SearchOptions& opts) {
    graph.validate();
    cfg.validate(graph.n_slots());
    tcfg.validate();
    check_data(data);
    const std::uint64_t fp = fingerprint(graph, cfg, tcfg);
    const std::uint64_t data_hash = content_hash(data);
    Cursor cur = fresh_cursor(graph, data.size(), cfg, tcfg);
    if (opts.checkpoint) write_checkpoint(*opts.checkpoint, cur, fp, data_hash);
    return drive(std::move(cur), data, cfg, tcfg, opts, fp, data_hash);
}

SearchResult resume_enhancement(const std::filesystem::path& checkpoint, const std::vector<SampleSet>& data,
                                const SearchConfig& cfg, const TrainConfig& tcfg, const SearchOptions& opts) {
    tcfg.validate();
    check_data(data);
    LoadedCheckpoint ck = read_checkpoint(checkpoint);
    const CompGraph graph = build_graph(ck.model_name);
    cfg.validate(graph.n_slots());
    const std::uint64_t fp = fingerprint(graph, cfg, tcfg);
    const std::uint64_t data_hash = content_hash(data);
    if (ck.fingerprint != fp) throw Error(ErrorCode::BadHeader, "checkpoint was written with different search settings");
    if (ck.data_hash != data_hash) throw Error(ErrorCode::BadHeader, "checkpoint was written for different data");
    SearchOptions o = opts;
    if (!o.checkpoint) o.checkpoint = checkpoint;
    return drive(std::move(ck.cursor), data, cfg, tcfg, o, fp, data_hash);
}

ExhaustiveResult exhaustive_search(const CompGraph& graph, const std::vector<SampleSet>& data,
                                   const TrainConfig& tcfg, const ModuleConfig& module, double val_fraction) {
    graph.validate();
    tcfg.validate();
    check_data(data);
    const int n = graph.n_slots();
    if (n > 6) {
        throw Error(ErrorCode::RefusedTooLarge,
                    "exhaustive search over " + std::to_string(n) + " slots refused (limit is 6)");
    }
    ExhaustiveResult out;
    for (std::uint32_t code = 0; code < (1u << n); ++code) {
        EnhancementState s(n);
        // Slot 0 is the most significant position so counting order is
        // lexicographic order of the bit strings.
        for (int i = 0; i < n; ++i) s.bits[static_cast<std::size_t>(i)] = (code >> (n - 1 - i)) & 1u;
        out.states.push_back(s);
    }
    const DataSplit split = split_data(data, val_fraction, derive_seed(tcfg.seed, kSplitSalt));
    std::vector<Candidate> candidates;
    for (const auto& s : out.states) {
        candidates.push_back({EnhancedModel::create(graph, s, module, derive_seed(tcfg.seed, 0x51a7)),
                              init_material_params(data.size(), module.p_neural, tcfg.seed)});
    }
    const auto results = train_jointly(candidates, split, tcfg);
    for (const auto& r : results) out.val_losses.push_back(r.val_loss);
    for (std::size_t i = 1; i < out.states.size(); ++i) {
        if (out.val_losses[i] < out.val_losses[out.best]) out.best = i;
    }
    return out;
}

}  // namespace neam

// Copyright 2026 The NEAM Authors
// SPDX-License-Identifier: Apache-2.0

///
/// @file search.hpp
///
/// Hypercube search over enhancement states: each stage trains every state
/// within the Hamming threshold of the current one and moves to the best.
///

#pragma once

#include "neam/optimize.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace neam {

struct SearchConfig {
    int hamming_threshold = 1;
    int epochs_per_stage = 30;
    std::optional<int> max_modules;
    std::map<int, int> fixed_bits;
    int max_stages = 20;
    /// A candidate replaces the current state only if it beats the current
    /// state's loss by this relative margin.
    double improvement = 1e-4;
    double val_fraction = 0.1;
    ModuleConfig module;

    /// Throws OutOfRange on inconsistent settings.
    void validate(int n_slots) const;
    StateConstraints constraints() const;
};

struct StageRecord {
    int stage = 0;
    EnhancementState current;
    std::vector<EnhancementState> candidates;  // candidates[0] == current
    std::vector<double> train_losses;
    std::vector<double> val_losses;
    EnhancementState chosen;
    double chosen_loss = 0.0;

    bool operator==(const StageRecord&) const = default;
};

struct SearchTrace {
    std::vector<StageRecord> stages;
    EnhancementState final_state;
    double final_loss = 0.0;
    bool converged = false;         // the state stopped changing
    bool budget_exceeded = false;   // max_stages reached first
    bool stopped_on_regression = false;

    bool operator==(const SearchTrace&) const = default;

    /// Human-readable report: one block per stage.
    std::string report() const;
};

struct SearchResult {
    Candidate model;
    SearchTrace trace;
};

/// Index of the candidate to adopt. candidates[0] is the current state; any
/// other candidate must beat it by the relative margin. Ties between the
/// others go to fewer modules, then lexicographic state order.
std::size_t select_candidate(const std::vector<EnhancementState>& states, const std::vector<double>& losses,
                             double improvement);

struct SearchOptions {
    /// Written after every stage when set.
    std::optional<std::filesystem::path> checkpoint;
    /// Stop (as if interrupted) after this many stages in this call.
    std::optional<int> stop_after;
    LogSink log;
};

SearchResult run_enhancement(const CompGraph& graph, const std::vector<SampleSet>& data, const SearchConfig& cfg,
                             const TrainConfig& tcfg, const SearchOptions& opts = {});

/// Continues a search from a checkpoint. Refuses (ChecksumMismatch) a
/// damaged file and (BadHeader) one written for different data or settings.
SearchResult resume_enhancement(const std::filesystem::path& checkpoint, const std::vector<SampleSet>& data,
                                const SearchConfig& cfg, const TrainConfig& tcfg, const SearchOptions& opts = {});

struct ExhaustiveResult {
    std::vector<EnhancementState> states;  // lexicographic order
    std::vector<double> val_losses;
    std::size_t best = 0;
};

/// Trains all 2^N states from a fresh start; N <= 6 only (RefusedTooLarge).
ExhaustiveResult exhaustive_search(const CompGraph& graph, const std::vector<SampleSet>& data,
                                   const TrainConfig& tcfg, const ModuleConfig& module = {},
                                   double val_fraction = 0.1);

}  // namespace neam

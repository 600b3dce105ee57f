#pragma once

#include "tokshift/model.hpp"

namespace tokshift {

struct CostEntry {
    std::string name;
    long long params = 0;
    long long macs = 0;
};

// Per-component parameter and multiply-accumulate counts.
//
// Headline MAC convention: one MAC per multiply-accumulate of the linear
// layers only (patch projection, QKV, attention output projection, FFN), per
// frame, times T. Attention score/value matmuls, softmax, layer-norm, GELU
// and the classification head are excluded from the headline and reported as
// informational entries; full_macs() adds the attention matmuls back in.
struct CostReport {
    std::vector<CostEntry> entries;        // headline components
    std::vector<CostEntry> informational;  // excluded from the headline totals

    long long total_params() const;
    long long total_macs() const;
    long long full_macs() const;  // headline + attention score/value matmuls
    double gflops_per_view() const { return static_cast<double>(total_macs()) / 1e9; }
    double full_gflops_per_view() const { return static_cast<double>(full_macs()) / 1e9; }

    std::string table() const;          // aligned plain text
    std::string machine_lines() const;  // "component<TAB>params<TAB>macs"
};

CostReport count_params(const ModelConfig& cfg);
CostReport count_flops(const ModelConfig& cfg);
long long word_count(const ModelConfig& cfg);  // T * (N+1)

}  // namespace tokshift

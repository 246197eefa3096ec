#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpr/geometry.hpp"
#include "tpr/grid.hpp"
#include "tpr/nn/tiling.hpp"
#include "tpr/synthesis.hpp"

namespace tpr {

/// sum(a * b) / sqrt(sum(a^2) * sum(b^2)); 0 when either side is all zero.
template <typename RangeA, typename RangeB>
double noncentered_correlation(const RangeA& a, const RangeB& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

/// Reconstruction quality: non-centered correlation with the ground truth.
double quality_factor(const VoxelVolume& reconstructed, const VoxelVolume& truth);

enum class MethodKind { mlos, mart, sf_mart, ai_pr };

struct Method {
    MethodKind kind = MethodKind::mlos;
    int iterations = 0;  // MART variants only

    /// "MLOS", "MART-10", "SF-MART-5", "AI-PR"
    std::string name() const;
    static Method parse(const std::string& name);
};

enum class Precision { f32, f64 };

struct SweepConfig {
    Dims3 volume_dims{128, 128, 64};
    std::vector<double> ppp_values{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
    std::vector<double> noise_levels{0.0};
    std::vector<Method> methods{Method{MethodKind::mlos}, Method{MethodKind::mart, 5}, Method{MethodKind::mart, 10}};
    std::vector<std::uint64_t> seeds{1};
    std::optional<std::filesystem::path> network_path;
    std::optional<CameraRig> rig;  // default_rig(volume_dims) when empty
    double mart_relaxation = 1.0;
    Precision precision = Precision::f64;
    nn::TilingOptions tiling{};
    SeedingOptions seeding{};
    bool single_thread_timing = false;
    std::optional<std::filesystem::path> slice_dir;  // central slices of the first cell

    void validate() const;
};

struct SweepRow {
    std::string method;
    double ppp = 0.0;
    double noise_level = 0.0;
    std::uint64_t seed = 0;
    double q = 0.0;
    double seconds = 0.0;
    std::size_t peak_memory_bytes = 0;  // estimate
};

using SweepResult = std::vector<SweepRow>;

/// Every (ppp, n, seed) cell: seeded field and images, noise, each method,
/// scored against the rendered truth. The field depends on (seed, ppp) only,
/// so noise levels are compared on identical particles.
SweepResult run_sweep(const SweepConfig& config);

struct SummaryRow {
    std::string method;
    double ppp = 0.0;
    double noise_level = 0.0;
    double mean_q = 0.0;
    double std_q = 0.0;  // population standard deviation over seeds
    double mean_seconds = 0.0;
    std::size_t seeds = 0;
};

std::vector<SummaryRow> summarize(const SweepResult& rows);

/// method,ppp,n,seed,Q,seconds
std::string format_results_csv(const SweepResult& rows, bool include_seconds = true);
/// method,ppp,n,mean_Q,std_Q,mean_seconds
std::string format_summary_csv(const std::vector<SummaryRow>& rows);
/// Mean Q pivot tables: n,ppp,<methods...> and ppp,n,<methods...>
std::string format_q_vs_ppp(const std::vector<SummaryRow>& rows);
std::string format_q_vs_n(const std::vector<SummaryRow>& rows);

/// Writes results.csv, summary.csv, summary_vs_ppp.csv and summary_vs_n.csv.
void write_sweep_outputs(const std::filesystem::path& dir, const SweepResult& rows);

/// 16-bit PGMs of the three axis-aligned central planes: <prefix>_xy.pgm,
/// <prefix>_xz.pgm, <prefix>_yz.pgm.
void write_central_slices(const std::filesystem::path& dir, const std::string& prefix, const VoxelVolume& volume);

}  // namespace tpr

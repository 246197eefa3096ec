#include "tpr/evaluation.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <map>
#include <sstream>

#include "tpr/algebraic.hpp"
#include "tpr/error.hpp"
#include "tpr/io.hpp"
#include "tpr/nn/network.hpp"
#include "tpr/parallel.hpp"

namespace tpr {

double quality_factor(const VoxelVolume& reconstructed, const VoxelVolume& truth) {
    if (!(reconstructed.dims() == truth.dims())) throw InvalidArgument("quality_factor: volume dimensions differ");
    if (std::all_of(truth.values().begin(), truth.values().end(), [](double v) { return v == 0.0; }))
        throw InvalidArgument("quality_factor: ground truth is all zero");
    return noncentered_correlation(reconstructed.values(), truth.values());
}

std::string Method::name() const {
    switch (kind) {
        case MethodKind::mlos: return "MLOS";
        case MethodKind::mart: return "MART-" + std::to_string(iterations);
        case MethodKind::sf_mart: return "SF-MART-" + std::to_string(iterations);
        case MethodKind::ai_pr: return "AI-PR";
    }
    return {};
}

Method Method::parse(const std::string& name) {
    if (name == "MLOS") return {MethodKind::mlos, 0};
    if (name == "AI-PR") return {MethodKind::ai_pr, 0};
    auto iterations = [&](std::size_t prefix) {
        const std::string digits = name.substr(prefix);
        if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit) || digits.size() > 6)
            throw ConfigError("bad iteration count in method '" + name + "'");
        const int k = std::stoi(digits);
        if (k < 1) throw ConfigError("method '" + name + "' needs at least one iteration");
        return k;
    };
    if (name.rfind("SF-MART-", 0) == 0) return {MethodKind::sf_mart, iterations(8)};
    if (name.rfind("MART-", 0) == 0) return {MethodKind::mart, iterations(5)};
    throw ConfigError("unknown method '" + name + "' (expected MLOS, MART-k, SF-MART-k or AI-PR)");
}

void SweepConfig::validate() const {
    if (volume_dims.nx < 1 || volume_dims.ny < 1 || volume_dims.nz < 1) throw ConfigError("sweep volume dims must be >= 1");
    if (ppp_values.empty() || noise_levels.empty() || methods.empty() || seeds.empty())
        throw ConfigError("sweep lists (ppp, noise, methods, seeds) must be nonempty");
    for (double p : ppp_values)
        if (!(p > 0.0 && p < 1.0)) throw ConfigError("sweep ppp values must be in (0, 1)");
    for (double n : noise_levels)
        if (!(n >= 0.0)) throw ConfigError("sweep noise levels must be >= 0");
    if (!(mart_relaxation > 0.0 && mart_relaxation <= 1.0)) throw ConfigError("MART relaxation must be in (0, 1]");
    const bool needs_net = std::any_of(methods.begin(), methods.end(), [](const Method& m) { return m.kind == MethodKind::ai_pr; });
    if (needs_net) {
        if (!network_path) throw ConfigError("AI-PR requested but no network file configured");
        if (!std::filesystem::is_regular_file(*network_path))
            throw ConfigError("network file not found: " + network_path->string());
    }
}

namespace {

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

struct LoadedNet {
    std::optional<nn::NetworkT<float>> f32;
    std::optional<nn::NetworkT<double>> f64;
};

}  // namespace

SweepResult run_sweep(const SweepConfig& config) {
    config.validate();
    using clock = std::chrono::steady_clock;
    auto seconds_since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };

    LoadedNet net;
    if (config.network_path &&
        std::any_of(config.methods.begin(), config.methods.end(), [](const Method& m) { return m.kind == MethodKind::ai_pr; })) {
        auto loaded = nn::load_network(*config.network_path);
        nn::validate_ai_pr(loaded);
        if (config.precision == Precision::f32)
            net.f32 = nn::cast_network<float>(loaded);
        else
            net.f64 = std::move(loaded);
    }

    const CameraRig rig = config.rig ? *config.rig : default_rig(config.volume_dims);
    const auto weights = build_weight_matrices(rig, config.volume_dims);
    std::size_t weight_bytes = 0;
    for (const auto& w : weights) weight_bytes += w.memory_bytes();
    const std::size_t volume_bytes = static_cast<std::size_t>(config.volume_dims.count()) * sizeof(double);

    struct Cell {
        double ppp, n;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (double ppp : config.ppp_values)
        for (double n : config.noise_levels)
            for (auto s : config.seeds) cells.push_back({ppp, n, s});

    const int saved_threads = thread_count();
    if (config.single_thread_timing) set_thread_count(1);

    std::vector<std::vector<SweepRow>> per_cell(cells.size());
    try {
        parallel_for(0, static_cast<std::ptrdiff_t>(cells.size()), [&](std::ptrdiff_t ci) {
            const Cell& cell = cells[static_cast<std::size_t>(ci)];
            const std::uint64_t field_seed = child_seed(cell.seed, bits(cell.ppp));
            const auto& cam0 = rig.cameras.front();
            const auto field = seed_particles(config.volume_dims, cell.ppp, cam0.image_width(), cam0.image_height(),
                                              field_seed, config.seeding);
            const VoxelVolume truth = render_volume(field);
            auto images = project_all(truth, rig, weights);
            if (cell.n > 0.0)
                for (std::size_t j = 0; j < images.size(); ++j)
                    images[j] = add_image_noise(images[j], cell.n, child_seed(field_seed, bits(cell.n) + j));

            auto t = clock::now();
            const VoxelVolume init = mlos(images, rig, config.volume_dims);
            const double mlos_seconds = seconds_since(t);

            auto& rows = per_cell[static_cast<std::size_t>(ci)];
            auto record = [&](const Method& m, const VoxelVolume& v, double secs, std::size_t mem) {
                rows.push_back({m.name(), cell.ppp, cell.n, cell.seed, quality_factor(v, truth), secs, mem});
                if (config.slice_dir && ci == 0) write_central_slices(*config.slice_dir, m.name(), v);
            };
            if (config.slice_dir && ci == 0) write_central_slices(*config.slice_dir, "truth", truth);

            for (const auto& m : config.methods) {
                switch (m.kind) {
                    case MethodKind::mlos:
                        record(m, init, mlos_seconds, volume_bytes);
                        break;
                    case MethodKind::mart:
                    case MethodKind::sf_mart: {
                        MartConfig mc{m.iterations, config.mart_relaxation,
                                      m.kind == MethodKind::sf_mart ? MartFilter::gaussian3 : MartFilter::none};
                        t = clock::now();
                        const VoxelVolume rec = mart(images, rig, weights, init, mc);
                        record(m, rec, mlos_seconds + seconds_since(t), weight_bytes + 2 * volume_bytes);
                        break;
                    }
                    case MethodKind::ai_pr: {
                        t = clock::now();
                        const VoxelVolume rec = net.f32 ? nn::infer_tiled(*net.f32, init, config.tiling)
                                                        : nn::infer_tiled(*net.f64, init, config.tiling);
                        const std::size_t scalar = net.f32 ? sizeof(float) : sizeof(double);
                        const auto tile_bytes = static_cast<std::size_t>(config.tiling.tile.count()) * 16 * scalar * 3;
                        record(m, rec, mlos_seconds + seconds_since(t), 2 * volume_bytes + tile_bytes);
                        break;
                    }
                }
            }
        });
    } catch (...) {
        set_thread_count(saved_threads);
        throw;
    }
    set_thread_count(saved_threads);

    SweepResult out;
    for (auto& rows : per_cell)
        for (auto& r : rows) out.push_back(std::move(r));
    return out;
}

std::vector<SummaryRow> summarize(const SweepResult& rows) {
    // Groups keep first-appearance order.
    std::vector<SummaryRow> out;
    std::vector<std::vector<const SweepRow*>> members;
    for (const auto& r : rows) {
        auto it = std::find_if(out.begin(), out.end(), [&](const SummaryRow& s) {
            return s.method == r.method && s.ppp == r.ppp && s.noise_level == r.noise_level;
        });
        if (it == out.end()) {
            out.push_back({r.method, r.ppp, r.noise_level});
            members.emplace_back();
            it = out.end() - 1;
        }
        members[static_cast<std::size_t>(it - out.begin())].push_back(&r);
    }
    for (std::size_t g = 0; g < out.size(); ++g) {
        const auto& m = members[g];
        double q = 0.0, secs = 0.0;
        for (const auto* r : m) {
            q += r->q;
            secs += r->seconds;
        }
        const double n = static_cast<double>(m.size());
        out[g].mean_q = q / n;
        out[g].mean_seconds = secs / n;
        double var = 0.0;
        for (const auto* r : m) var += (r->q - out[g].mean_q) * (r->q - out[g].mean_q);
        out[g].std_q = std::sqrt(var / n);
        out[g].seeds = m.size();
    }
    return out;
}

std::string format_results_csv(const SweepResult& rows, bool include_seconds) {
    std::ostringstream os;
    os << (include_seconds ? "method,ppp,n,seed,Q,seconds\n" : "method,ppp,n,seed,Q\n");
    for (const auto& r : rows) {
        os << r.method << ',' << io::format_double(r.ppp) << ',' << io::format_double(r.noise_level) << ',' << r.seed
           << ',' << io::format_double(r.q);
        if (include_seconds) os << ',' << io::format_double(r.seconds);
        os << '\n';
    }
    return os.str();
}

std::string format_summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << "method,ppp,n,mean_Q,std_Q,mean_seconds\n";
    for (const auto& r : rows)
        os << r.method << ',' << io::format_double(r.ppp) << ',' << io::format_double(r.noise_level) << ','
           << io::format_double(r.mean_q) << ',' << io::format_double(r.std_q) << ','
           << io::format_double(r.mean_seconds) << '\n';
    return os.str();
}

namespace {

std::string pivot(const std::vector<SummaryRow>& rows, bool ppp_major) {
    std::vector<std::string> methods;
    std::vector<double> ppps, ns;
    auto add_unique = [](auto& v, const auto& x) {
        if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
    };
    for (const auto& r : rows) {
        add_unique(methods, r.method);
        add_unique(ppps, r.ppp);
        add_unique(ns, r.noise_level);
    }
    std::sort(ppps.begin(), ppps.end());
    std::sort(ns.begin(), ns.end());
    std::ostringstream os;
    os << (ppp_major ? "n,ppp" : "ppp,n");
    for (const auto& m : methods) os << ',' << m;
    os << '\n';
    const auto& outer = ppp_major ? ns : ppps;
    const auto& inner = ppp_major ? ppps : ns;
    for (double a : outer) {
        for (double b : inner) {
            const double ppp = ppp_major ? b : a, n = ppp_major ? a : b;
            os << io::format_double(a) << ',' << io::format_double(b);
            for (const auto& m : methods) {
                const auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) {
                    return r.method == m && r.ppp == ppp && r.noise_level == n;
                });
                os << ',';
                if (it != rows.end()) os << io::format_double(it->mean_q);
            }
            os << '\n';
        }
    }
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    io::atomic_write(path, [&](std::ostream& os) { os << text; });
}

}  // namespace

std::string format_q_vs_ppp(const std::vector<SummaryRow>& rows) { return pivot(rows, true); }
std::string format_q_vs_n(const std::vector<SummaryRow>& rows) { return pivot(rows, false); }

void write_sweep_outputs(const std::filesystem::path& dir, const SweepResult& rows) {
    const auto summary = summarize(rows);
    write_text(dir / "results.csv", format_results_csv(rows));
    write_text(dir / "summary.csv", format_summary_csv(summary));
    write_text(dir / "summary_vs_ppp.csv", format_q_vs_ppp(summary));
    write_text(dir / "summary_vs_n.csv", format_q_vs_n(summary));
}

void write_central_slices(const std::filesystem::path& dir, const std::string& prefix, const VoxelVolume& v) {
    const auto& d = v.dims();
    ProjectionImage xy(d.nx, d.ny), xz(d.nx, d.nz), yz(d.ny, d.nz);
    for (std::int64_t y = 0; y < d.ny; ++y)
        for (std::int64_t x = 0; x < d.nx; ++x) xy.at(x, y) = v.at(x, y, d.nz / 2);
    for (std::int64_t z = 0; z < d.nz; ++z)
        for (std::int64_t x = 0; x < d.nx; ++x) xz.at(x, z) = v.at(x, d.ny / 2, z);
    for (std::int64_t z = 0; z < d.nz; ++z)
        for (std::int64_t y = 0; y < d.ny; ++y) yz.at(y, z) = v.at(d.nx / 2, y, z);
    io::write_pgm16(dir / (prefix + "_xy.pgm"), xy);
    io::write_pgm16(dir / (prefix + "_xz.pgm"), xz);
    io::write_pgm16(dir / (prefix + "_yz.pgm"), yz);
}

}  // namespace tpr

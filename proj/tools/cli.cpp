#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tpr/algebraic.hpp"
#include "tpr/error.hpp"
#include "tpr/evaluation.hpp"
#include "tpr/io.hpp"
#include "tpr/nn/network.hpp"
#include "tpr/nn/tiling.hpp"
#include "tpr/nn/train.hpp"
#include "tpr/parallel.hpp"
#include "tpr/synthesis.hpp"

namespace tpr::cli {

namespace fs = std::filesystem;

namespace {

// Options shared by every subcommand.
struct Common {
    std::optional<std::uint64_t> seed;
    int threads = 0;
    std::string precision = "f64";
    std::string out;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Master seed");
    sub->add_option("--threads", c.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--precision", c.precision, "Network arithmetic")->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--out", c.out, "Output path")->required();
    sub->fallthrough();
    sub->configurable();
}

Dims3 to_dims(const std::vector<std::int64_t>& v) {
    if (v.size() != 3 || v[0] < 1 || v[1] < 1 || v[2] < 1) throw ConfigError("--dims needs three positive sizes");
    return {v[0], v[1], v[2]};
}

std::uint64_t require_seed(const Common& c, const char* command) {
    if (!c.seed) throw ConfigError(std::string(command) + " is stochastic and needs --seed");
    return *c.seed;
}

void require_file(const std::string& path, const char* what) {
    if (!fs::is_regular_file(path)) throw ConfigError(std::string(what) + " not found: " + path);
}

void require_parent(const fs::path& out) {
    const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) throw ConfigError("output directory does not exist: " + parent.string());
}

// Fills a hidden sibling directory, then swaps it in for `dir`.
template <typename Fill>
void publish_directory(const fs::path& dir, Fill&& fill) {
    require_parent(dir);
    const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
    const fs::path tmp = parent / ("." + dir.filename().string() + ".partial");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    try {
        fill(tmp);
        fs::remove_all(dir);
        fs::rename(tmp, dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    io::atomic_write(path, [&](std::ostream& os) { os << text; });
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string mode = "dataset";
    std::size_t count = 500;
    std::vector<std::int64_t> dims{64, 64, 32};
    double ppp_min = 0.05, ppp_max = 0.30;
    double noise_fraction = 0.2;
    std::vector<double> noise_levels{0.05, 0.10, 0.15, 0.20};
    double ppp = 0.1;
    double noise = 0.0;
    std::string rig;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const std::uint64_t seed = require_seed(a.common, "synth");
    const Dims3 dims = to_dims(a.dims);
    const CameraRig rig = a.rig.empty() ? default_rig(dims) : io::read_rig(a.rig);
    const fs::path dir = a.common.out;
    require_parent(dir);

    if (a.mode == "dataset") {
        DatasetConfig cfg;
        cfg.count = a.count;
        cfg.dims = dims;
        cfg.ppp_min = a.ppp_min;
        cfg.ppp_max = a.ppp_max;
        cfg.noise_fraction = a.noise_fraction;
        cfg.noise_levels = a.noise_levels;
        cfg.seed = seed;
        const auto samples = build_dataset(cfg, rig);
        write_dataset(dir, samples, cfg, &rig);
        out << (dir / "manifest.csv").string() << '\n';
        return kExitOk;
    }

    // Single field: truth volume, one image per camera, the rig used.
    const auto weights = build_weight_matrices(rig, dims);
    const auto& cam0 = rig.cameras.front();
    const auto field = seed_particles(dims, a.ppp, cam0.image_width(), cam0.image_height(), child_seed(seed, 1));
    const VoxelVolume truth = render_volume(field);
    auto images = project_all(truth, rig, weights);
    if (a.noise < 0.0) throw ConfigError("--noise must be >= 0");
    for (std::size_t j = 0; j < images.size(); ++j)
        images[j] = add_image_noise(images[j], a.noise, child_seed(seed, 10 + j));
    publish_directory(dir, [&](const fs::path& tmp) {
        io::write_volume(tmp / "truth.tprv", truth);
        for (std::size_t j = 0; j < images.size(); ++j) {
            io::write_image(tmp / ("cam" + std::to_string(j) + ".tprv"), images[j]);
            io::write_pgm16(tmp / ("cam" + std::to_string(j) + ".pgm"), images[j]);
        }
        io::write_rig(tmp / "rig.cfg", rig);
        std::ostringstream meta;
        meta << "seed = " << seed << "\nppp = " << io::format_double(a.ppp) << "\nnoise = " << io::format_double(a.noise)
             << "\nparticles = " << field.particles.size() << "\nnx = " << dims.nx << "\nny = " << dims.ny
             << "\nnz = " << dims.nz << '\n';
        write_text(tmp / "field.cfg", meta.str());
    });
    out << (dir / "truth.tprv").string() << '\n';
    return kExitOk;
}

// --- reconstruct ---------------------------------------------------------------

struct ReconArgs {
    Common common;
    std::string method = "mlos";
    std::vector<std::string> images;
    std::string rig;
    std::vector<std::int64_t> dims;
    int iterations = 10;
    double mu = 1.0;
    std::string filter = "none";
    std::string network;
};

int cmd_reconstruct(const ReconArgs& a, std::ostream& out) {
    const bool algebraic = a.method == "mart" || a.method == "sfmart";
    if (a.method == "aipr") {
        if (a.network.empty()) throw ConfigError("method aipr needs --network");
        require_file(a.network, "network file");
    }
    require_file(a.rig, "rig file");
    for (const auto& p : a.images) require_file(p, "image file");
    const Dims3 dims = to_dims(a.dims);
    const fs::path dst = a.common.out;
    require_parent(dst);
    const CameraRig rig = io::read_rig(a.rig);
    if (a.images.size() != rig.cameras.size())
        throw ConfigError("rig has " + std::to_string(rig.cameras.size()) + " cameras but " +
                          std::to_string(a.images.size()) + " images were given");
    std::vector<ProjectionImage> images;
    for (const auto& p : a.images) images.push_back(io::read_any_image(p));

    MartConfig mc{a.iterations, a.mu, a.filter == "gaussian3" ? MartFilter::gaussian3 : MartFilter::none};
    if (algebraic) mc.validate();

    VoxelVolume result = mlos(images, rig, dims);
    std::ostringstream meta;
    meta << "method = " << a.method << '\n';
    if (algebraic) {
        const auto weights = build_weight_matrices(rig, dims);
        result = a.method == "mart" ? mart(images, rig, weights, result, mc) : sf_mart(images, rig, weights, result, mc);
        meta << "iterations = " << mc.iterations << "\nrelaxation = " << io::format_double(mc.relaxation)
             << "\nfilter = " << (a.method == "sfmart" || mc.filter == MartFilter::gaussian3 ? "gaussian3" : "none")
             << '\n';
    } else if (a.method == "aipr") {
        const auto net = nn::load_network(a.network);
        nn::validate_ai_pr(net);
        result = a.common.precision == "f32" ? nn::infer_tiled(nn::cast_network<float>(net), result)
                                             : nn::infer_tiled(net, result);
        meta << "precision = " << a.common.precision << "\nnetwork = " << a.network
             << "\nnetwork_sha256 = " << io::sha256_file(a.network) << '\n';
    }
    meta << "nx = " << dims.nx << "\nny = " << dims.ny << "\nnz = " << dims.nz << "\nrig = " << a.rig
         << "\nrig_sha256 = " << io::sha256_file(a.rig) << '\n';
    for (std::size_t j = 0; j < a.images.size(); ++j)
        meta << "image" << j << " = " << a.images[j] << "\nimage" << j << "_sha256 = " << io::sha256_file(a.images[j])
             << '\n';

    io::write_volume(dst, result);
    write_text(dst.string() + ".meta", meta.str());
    out << dst.string() << '\n';
    return kExitOk;
}

// --- train ---------------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string dataset;
    std::string log;
    std::string init;
    nn::TrainConfig config;
};

template <typename T>
std::pair<nn::Network, std::vector<nn::EpochLog>> train_as(const std::vector<TrainingSample>& data, const TrainArgs& a,
                                                           std::ostream& out) {
    std::optional<nn::NetworkT<T>> initial;
    if (!a.init.empty()) initial = nn::cast_network<T>(nn::load_network(a.init));
    auto report = [&](const nn::EpochLog& e) {
        out << "epoch " << e.epoch << " train_loss " << io::format_double(e.train_loss) << " val_loss "
            << io::format_double(e.val_loss) << " val_Q " << io::format_double(e.val_q) << '\n'
            << std::flush;
    };
    auto result = nn::train<T>(data, a.config, std::move(initial), report);
    return {nn::cast_network<double>(result.network), std::move(result.log)};
}

int cmd_train(TrainArgs a, std::ostream& out) {
    a.config.seed = require_seed(a.common, "train");
    a.config.validate();
    if (!fs::is_regular_file(fs::path(a.dataset) / "manifest.csv"))
        throw ConfigError("dataset manifest not found in " + a.dataset);
    if (!a.init.empty()) require_file(a.init, "initial network");
    const fs::path net_path = a.common.out;
    const fs::path log_path = a.log.empty() ? fs::path(net_path.string() + ".log.csv") : fs::path(a.log);
    require_parent(net_path);
    require_parent(log_path);

    const auto data = read_dataset(a.dataset);
    auto [net, log] = a.common.precision == "f32" ? train_as<float>(data, a, out) : train_as<double>(data, a, out);
    nn::save_network(net_path, net);
    nn::write_training_log(log_path, log);
    out << net_path.string() << '\n';
    return kExitOk;
}

// --- eval ----------------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string volume;
    std::string truth;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    require_file(a.volume, "volume");
    require_file(a.truth, "truth volume");
    const fs::path csv = a.common.out;
    require_parent(csv);
    const double q = quality_factor(io::read_volume(a.volume), io::read_volume(a.truth));

    std::string existing;
    if (fs::exists(csv)) {
        std::ifstream in(csv, std::ios::binary);
        existing.assign(std::istreambuf_iterator<char>(in), {});
    }
    if (existing.empty()) existing = "volume,truth,Q\n";
    existing += a.volume + "," + a.truth + "," + io::format_double(q) + "\n";
    write_text(csv, existing);
    out << "Q = " << io::format_double(q) << '\n';
    return kExitOk;
}

// --- sweep ---------------------------------------------------------------------

struct SweepArgs {
    Common common;
    std::vector<std::int64_t> dims{128, 128, 64};
    std::vector<double> ppp{0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
    std::vector<double> noise{0.0};
    std::vector<std::string> methods{"MLOS", "MART-5", "MART-10"};
    std::vector<std::uint64_t> seeds;
    std::string network;
    std::string rig;
    double mu = 1.0;
    bool single_thread_timing = false;
    std::string slices;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    SweepConfig cfg;
    cfg.volume_dims = to_dims(a.dims);
    cfg.ppp_values = a.ppp;
    cfg.noise_levels = a.noise;
    cfg.methods.clear();
    for (const auto& m : a.methods) cfg.methods.push_back(Method::parse(m));
    if (!a.seeds.empty())
        cfg.seeds = a.seeds;
    else
        cfg.seeds = {require_seed(a.common, "sweep")};
    if (!a.network.empty()) cfg.network_path = a.network;
    if (!a.rig.empty()) {
        require_file(a.rig, "rig file");
        cfg.rig = io::read_rig(a.rig);
    }
    cfg.mart_relaxation = a.mu;
    cfg.precision = a.common.precision == "f32" ? Precision::f32 : Precision::f64;
    cfg.single_thread_timing = a.single_thread_timing;
    cfg.validate();
    require_parent(a.common.out);
    if (!a.slices.empty()) {
        fs::create_directories(a.slices);
        cfg.slice_dir = a.slices;
    }

    const auto rows = run_sweep(cfg);
    const fs::path dir = a.common.out;
    fs::create_directories(dir);
    write_sweep_outputs(dir, rows);
    out << format_summary_csv(summarize(rows));
    return kExitOk;
}

std::string quoted(std::string s) {
    for (auto& c : s)
        if (c == '"' || c == '\n') c = '\'';
    return '"' + s + '"';
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tomographic particle reconstruction: synthesis, MART, AI-PR training and sweeps"};
    app.set_config("--config", "", "Key=value config file; a [<subcommand>] section holds its options");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a training dataset or a single test field");
    add_common(s, synth.common);
    s->add_option("--mode", synth.mode, "dataset or field")->check(CLI::IsMember({"dataset", "field"}));
    s->add_option("--count", synth.count, "Samples in dataset mode");
    s->add_option("--dims", synth.dims, "nx,ny,nz")->delimiter(',')->expected(3);
    s->add_option("--ppp-min", synth.ppp_min);
    s->add_option("--ppp-max", synth.ppp_max);
    s->add_option("--noise-fraction", synth.noise_fraction);
    s->add_option("--noise-levels", synth.noise_levels)->delimiter(',');
    s->add_option("--ppp", synth.ppp, "Seeding density in field mode");
    s->add_option("--noise", synth.noise, "Noise level in field mode");
    s->add_option("--rig", synth.rig, "Rig file (default: four-view rig sized to the volume)");

    ReconArgs recon;
    auto* r = app.add_subcommand("reconstruct", "Reconstruct a volume from projections");
    add_common(r, recon.common);
    r->add_option("--method", recon.method)->check(CLI::IsMember({"mlos", "mart", "sfmart", "aipr"}));
    r->add_option("--images", recon.images, "One image per camera (.tprv or .pgm)")->delimiter(',')->required();
    r->add_option("--rig", recon.rig)->required();
    r->add_option("--dims", recon.dims, "nx,ny,nz")->delimiter(',')->expected(3)->required();
    r->add_option("--iterations", recon.iterations);
    r->add_option("--mu", recon.mu, "MART relaxation");
    r->add_option("--filter", recon.filter)->check(CLI::IsMember({"none", "gaussian3"}));
    r->add_option("--network", recon.network);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the AI-PR network on a dataset");
    add_common(t, tr.common);
    t->add_option("--dataset", tr.dataset)->required();
    t->add_option("--log", tr.log, "Training log CSV (default: <out>.log.csv)");
    t->add_option("--init", tr.init, "Start from this network");
    t->add_option("--epochs", tr.config.epochs);
    t->add_option("--batch-size", tr.config.batch_size);
    t->add_option("--lr", tr.config.learning_rate);
    t->add_option("--loss-eps", tr.config.loss_epsilon);
    t->add_option("--val-fraction", tr.config.validation_fraction);

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Quality factor of a volume against ground truth");
    add_common(e, ev.common);
    e->add_option("--volume", ev.volume)->required();
    e->add_option("--truth", ev.truth)->required();

    SweepArgs sw;
    auto* w = app.add_subcommand("sweep", "Benchmark methods over ppp, noise and seeds");
    add_common(w, sw.common);
    w->add_option("--dims", sw.dims, "nx,ny,nz")->delimiter(',')->expected(3);
    w->add_option("--ppp", sw.ppp)->delimiter(',');
    w->add_option("--noise", sw.noise)->delimiter(',');
    w->add_option("--methods", sw.methods, "MLOS, MART-k, SF-MART-k, AI-PR")->delimiter(',');
    w->add_option("--seeds", sw.seeds)->delimiter(',');
    w->add_option("--network", sw.network);
    w->add_option("--rig", sw.rig);
    w->add_option("--mu", sw.mu);
    w->add_flag("--single-thread-timing", sw.single_thread_timing);
    w->add_option("--slices", sw.slices, "Directory for central-slice PGMs of the first cell");

    auto fail = [&](const char* kind, const std::string& msg, int code) {
        err << "tpr: error kind=" << kind << " msg=" << quoted(msg) << '\n';
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        if (ex.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        return fail("config", ex.what(), kExitConfig);
    }

    try {
        const Common* common = s->parsed()   ? &synth.common
                               : r->parsed() ? &recon.common
                               : t->parsed() ? &tr.common
                               : e->parsed() ? &ev.common
                                             : &sw.common;
        if (common->threads > 0) set_thread_count(common->threads);
        if (s->parsed()) return cmd_synth(synth, out);
        if (r->parsed()) return cmd_reconstruct(recon, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (e->parsed()) return cmd_eval(ev, out);
        return cmd_sweep(sw, out);
    } catch (const ConfigError& ex) {
        return fail("config", ex.what(), kExitConfig);
    } catch (const InvalidArgument& ex) {
        return fail("config", ex.what(), kExitConfig);
    } catch (const ResourceError& ex) {
        return fail("resource", ex.what(), kExitRuntime);
    } catch (const std::exception& ex) {
        return fail("runtime", ex.what(), kExitRuntime);
    }
}

}  // namespace tpr::cli

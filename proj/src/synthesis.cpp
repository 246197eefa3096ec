#include "tpr/synthesis.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "tpr/algebraic.hpp"
#include "tpr/error.hpp"
#include "tpr/io.hpp"
#include "tpr/parallel.hpp"

namespace tpr {

std::uint64_t child_seed(std::uint64_t master, std::uint64_t stream) {
    // splitmix64 finalizer over master + golden-ratio stride
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

ParticleField seed_particles(Dims3 dims, double ppp, std::int64_t image_width, std::int64_t image_height,
                             std::uint64_t seed, const SeedingOptions& options) {
    if (!(ppp > 0.0 && ppp < 1.0)) throw InvalidArgument("ppp must be in (0, 1)");
    if (dims.nx < 1 || dims.ny < 1 || dims.nz < 1 || image_width < 1 || image_height < 1)
        throw InvalidArgument("volume and image dimensions must be >= 1");
    if (!(options.diameter > 0.0)) throw InvalidArgument("particle diameter must be positive");
    if (!(options.min_peak > 0.0 && options.min_peak <= options.max_peak && options.max_peak <= 1.0))
        throw InvalidArgument("peak intensity range must lie in (0, 1]");

    const auto count = static_cast<std::size_t>(std::llround(ppp * static_cast<double>(image_width * image_height)));
    auto axis = [&](std::int64_t n) {
        const double mid = (n - 1) / 2.0;
        return std::uniform_real_distribution<double>(std::min(options.diameter, mid),
                                                      std::max(n - 1 - options.diameter, mid));
    };
    auto ux = axis(dims.nx), uy = axis(dims.ny), uz = axis(dims.nz);
    std::uniform_real_distribution<double> peak(options.min_peak, options.max_peak);
    std::mt19937_64 rng(seed);

    ParticleField field{{}, dims, seed};
    field.particles.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Particle p;
        p.position[0] = ux(rng);
        p.position[1] = uy(rng);
        p.position[2] = uz(rng);
        p.peak_intensity = peak(rng);
        p.diameter = options.diameter;
        field.particles.push_back(p);
    }
    return field;
}

VoxelVolume render_volume(const ParticleField& field) {
    const auto& d = field.volume_dims;
    VoxelVolume out(d);
    parallel_for(0, d.nz, [&](std::ptrdiff_t z) {
        for (const auto& p : field.particles) {
            const double dia = p.diameter, r2max = dia * dia;
            const double dz = static_cast<double>(z) - p.position[2];
            if (dz * dz > r2max) continue;
            const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.position[1] - dia)));
            const auto y1 = std::min<std::int64_t>(d.ny - 1, static_cast<std::int64_t>(std::floor(p.position[1] + dia)));
            const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(p.position[0] - dia)));
            const auto x1 = std::min<std::int64_t>(d.nx - 1, static_cast<std::int64_t>(std::floor(p.position[0] + dia)));
            for (std::int64_t y = y0; y <= y1; ++y) {
                const double dy = static_cast<double>(y) - p.position[1];
                for (std::int64_t x = x0; x <= x1; ++x) {
                    const double dx = static_cast<double>(x) - p.position[0];
                    const double r2 = dx * dx + dy * dy + dz * dz;
                    if (r2 <= r2max) out.at(x, y, z) += p.peak_intensity * std::exp(-8.0 * r2 / r2max);
                }
            }
        }
    });
    for (double& v : out.values()) v = std::min(v, 1.0);
    return out;
}

std::vector<ProjectionImage> project_all(const VoxelVolume& volume, const CameraRig& rig,
                                         const std::vector<WeightMatrix>& weights) {
    if (weights.size() != rig.cameras.size()) throw InvalidArgument("expected one weight matrix per camera");
    std::vector<ProjectionImage> images;
    images.reserve(rig.cameras.size());
    for (std::size_t j = 0; j < rig.cameras.size(); ++j)
        images.push_back(forward_project(volume, weights[j], rig.cameras[j]));
    return images;
}

std::vector<ProjectionImage> render_images(const ParticleField& field, const CameraRig& rig,
                                           const std::vector<WeightMatrix>& weights) {
    return project_all(render_volume(field), rig, weights);
}

ProjectionImage add_image_noise(const ProjectionImage& image, double n, std::uint64_t seed) {
    if (!(n >= 0.0)) throw InvalidArgument("noise level must be >= 0");
    ProjectionImage out = image;
    const auto values = image.values();
    if (n == 0.0 || values.empty()) return out;

    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sigma = std::sqrt(var / static_cast<double>(values.size()));
    if (sigma == 0.0) return out;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, n * sigma);
    for (double& v : out.values()) v = std::max(0.0, v + noise(rng));
    return out;
}

TrainingSample build_sample(const DatasetConfig& config, std::size_t index, const CameraRig& rig,
                            const std::vector<WeightMatrix>& weights) {
    const std::uint64_t seed = child_seed(config.seed, index);
    std::mt19937_64 rng(seed);
    const double ppp = std::uniform_real_distribution<double>(config.ppp_min, config.ppp_max)(rng);
    const bool noisy = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.noise_fraction;
    double n = 0.0;
    if (noisy && !config.noise_levels.empty())
        n = config.noise_levels[std::uniform_int_distribution<std::size_t>(0, config.noise_levels.size() - 1)(rng)];

    const auto& cam0 = rig.cameras.front();
    const ParticleField field =
        seed_particles(config.dims, ppp, cam0.image_width(), cam0.image_height(), child_seed(seed, 1), config.seeding);
    VoxelVolume truth = render_volume(field);
    auto images = project_all(truth, rig, weights);
    if (n > 0.0)
        for (std::size_t j = 0; j < images.size(); ++j) images[j] = add_image_noise(images[j], n, child_seed(seed, 10 + j));

    return {mlos(images, rig, config.dims), std::move(truth), {index, seed, ppp, n}};
}

std::vector<TrainingSample> build_dataset(const DatasetConfig& config, const CameraRig& rig) {
    if (config.count < 1) throw InvalidArgument("dataset count must be >= 1");
    if (!(config.ppp_min > 0.0 && config.ppp_min <= config.ppp_max && config.ppp_max < 1.0))
        throw InvalidArgument("ppp range must satisfy 0 < min <= max < 1");
    if (!(config.noise_fraction >= 0.0 && config.noise_fraction <= 1.0))
        throw InvalidArgument("noise fraction must be in [0, 1]");
    if (rig.cameras.empty()) throw InvalidArgument("rig has no cameras");

    const auto weights = build_weight_matrices(rig, config.dims);
    std::vector<TrainingSample> samples(config.count);
    parallel_for(0, static_cast<std::ptrdiff_t>(config.count), [&](std::ptrdiff_t i) {
        samples[static_cast<std::size_t>(i)] = build_sample(config, static_cast<std::size_t>(i), rig, weights);
    });
    return samples;
}

namespace {

std::string sample_name(std::size_t index, const char* kind) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "sample_%05zu_%s.tprv", index, kind);
    return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<TrainingSample>& samples,
                   const DatasetConfig& config, const CameraRig* rig) {
    namespace fs = std::filesystem;
    const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
    if (!fs::exists(parent)) throw ConfigError("output directory does not exist: " + parent.string());
    const fs::path tmp = parent / ("." + dir.filename().string() + ".partial");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    try {
        std::ostringstream manifest;
        manifest << "index,seed,ppp,n,input,target\n";
        for (const auto& s : samples) {
            io::write_volume(tmp / sample_name(s.meta.index, "input"), s.input);
            io::write_volume(tmp / sample_name(s.meta.index, "target"), s.target);
            manifest << s.meta.index << ',' << s.meta.seed << ',' << io::format_double(s.meta.ppp) << ','
                     << io::format_double(s.meta.noise_level) << ',' << sample_name(s.meta.index, "input") << ','
                     << sample_name(s.meta.index, "target") << '\n';
        }
        io::atomic_write(tmp / "manifest.csv", [&](std::ostream& os) { os << manifest.str(); });

        std::ostringstream cfg;
        cfg << "count = " << config.count << "\nnx = " << config.dims.nx << "\nny = " << config.dims.ny
            << "\nnz = " << config.dims.nz << "\nppp_min = " << io::format_double(config.ppp_min)
            << "\nppp_max = " << io::format_double(config.ppp_max)
            << "\nnoise_fraction = " << io::format_double(config.noise_fraction) << "\nseed = " << config.seed << "\n";
        io::atomic_write(tmp / "dataset.cfg", [&](std::ostream& os) { os << cfg.str(); });
        if (rig) io::write_rig(tmp / "rig.cfg", *rig);

        fs::remove_all(dir);
        fs::rename(tmp, dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
}

std::vector<TrainingSample> read_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.csv");
    if (!in) throw ConfigError("dataset manifest not found in " + dir.string());
    std::string line;
    std::getline(in, line);
    if (line != "index,seed,ppp,n,input,target") throw ConfigError("unexpected manifest header in " + dir.string());
    std::vector<TrainingSample> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 6) throw ConfigError("malformed manifest row: " + line);
        TrainingSample s;
        s.meta = {std::stoul(f[0]), std::stoull(f[1]), std::stod(f[2]), std::stod(f[3])};
        s.input = io::read_volume(dir / f[4]);
        s.target = io::read_volume(dir / f[5]);
        if (!(s.input.dims() == s.target.dims())) throw ConfigError("sample dims differ in row: " + line);
        out.push_back(std::move(s));
    }
    if (out.empty()) throw ConfigError("dataset is empty: " + dir.string());
    return out;
}

}  // namespace tpr

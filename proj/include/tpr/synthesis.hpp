#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "tpr/geometry.hpp"
#include "tpr/grid.hpp"

namespace tpr {

struct Particle {
    Vec3 position{};          // voxel units
    double peak_intensity = 1.0;  // (0, 1]
    double diameter = 3.0;        // e^-2 diameter, voxels
};

struct ParticleField {
    std::vector<Particle> particles;
    Dims3 volume_dims{};
    std::uint64_t seed = 0;
};

struct SeedingOptions {
    double diameter = 3.0;
    double min_peak = 0.5;
    double max_peak = 1.0;
};

/// Mixes a master seed with a stream index into an independent child seed.
std::uint64_t child_seed(std::uint64_t master, std::uint64_t stream);

/// round(ppp * W * H) particles, uniform over the volume interior with a margin
/// of one diameter, peaks uniform in [min_peak, max_peak].
ParticleField seed_particles(Dims3 volume_dims, double ppp, std::int64_t image_width,
                             std::int64_t image_height, std::uint64_t seed,
                             const SeedingOptions& options = {});

/// Sum of Gaussian blobs I * exp(-8 |x - x0|^2 / d^2) truncated at |x - x0| <= d,
/// clipped to [0, 1].
VoxelVolume render_volume(const ParticleField& field);

std::vector<ProjectionImage> render_images(const ParticleField& field, const CameraRig& rig,
                                           const std::vector<WeightMatrix>& weights);
std::vector<ProjectionImage> project_all(const VoxelVolume& volume, const CameraRig& rig,
                                         const std::vector<WeightMatrix>& weights);

/// Adds i.i.d. N(0, (n * sigma)^2) where sigma is the standard deviation of
/// the clean image, then clips negatives to zero.
ProjectionImage add_image_noise(const ProjectionImage& image, double noise_level, std::uint64_t seed);

struct SampleMeta {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    double ppp = 0.0;
    double noise_level = 0.0;
};

struct TrainingSample {
    VoxelVolume input;   // MLOS field
    VoxelVolume target;  // rendered ground truth
    SampleMeta meta;
};

struct DatasetConfig {
    std::size_t count = 500;
    Dims3 dims{64, 64, 32};
    double ppp_min = 0.05;
    double ppp_max = 0.30;
    double noise_fraction = 0.2;
    std::vector<double> noise_levels{0.05, 0.10, 0.15, 0.20};
    std::uint64_t seed = 0;
    SeedingOptions seeding{};
};

/// Builds one sample from its child seed; identical whichever order samples
/// are produced in.
TrainingSample build_sample(const DatasetConfig& config, std::size_t index, const CameraRig& rig,
                            const std::vector<WeightMatrix>& weights);

std::vector<TrainingSample> build_dataset(const DatasetConfig& config, const CameraRig& rig);

/// Dataset directory: sample_NNNNN_input.tprv / sample_NNNNN_target.tprv plus
/// manifest.csv (index,seed,ppp,n), dataset.cfg and, when given, rig.cfg.
/// Built in a hidden sibling directory and renamed into place.
void write_dataset(const std::filesystem::path& dir, const std::vector<TrainingSample>& samples,
                   const DatasetConfig& config, const CameraRig* rig = nullptr);
std::vector<TrainingSample> read_dataset(const std::filesystem::path& dir);

}  // namespace tpr

#include "tpr/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <numbers>
#include <random>
#include <sstream>

#include "tpr/error.hpp"

namespace tpr::io {

namespace {

static_assert(std::endian::native == std::endian::little, "containers assume a little-endian host");

constexpr char kVolumeMagic[4] = {'T', 'P', 'R', 'V'};
constexpr std::uint32_t kVolumeVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw RuntimeError("truncated file: " + path.string());
    return v;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path.string());
    return in;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

void write_grid(std::ostream& os, std::uint32_t nx, std::uint32_t ny, std::uint32_t nz,
                std::span<const double> values) {
    os.write(kVolumeMagic, 4);
    put_u32(os, kVolumeVersion);
    put_u32(os, nx);
    put_u32(os, ny);
    put_u32(os, nz);
    std::vector<float> buf(values.begin(), values.end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<double> read_grid(const std::filesystem::path& path, std::array<std::uint32_t, 3>& dims) {
    auto in = open_in(path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kVolumeMagic, 4) != 0)
        throw RuntimeError("not a TPRV container: " + path.string());
    const auto version = get_u32(in, path);
    if (version != kVolumeVersion) throw RuntimeError("unsupported TPRV version in " + path.string());
    for (auto& d : dims) d = get_u32(in, path);
    const std::size_t n = std::size_t{dims[0]} * dims[1] * dims[2];
    std::vector<float> buf(n);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw RuntimeError("truncated TPRV data: " + path.string());
    return {buf.begin(), buf.end()};
}

double parse_double(const std::string& text, const std::string& what) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end) throw ConfigError("invalid number for " + what + ": '" + text + "'");
    return v;
}

}  // namespace

void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& writer) {
    namespace fs = std::filesystem;
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (!fs::exists(dir)) throw ConfigError("output directory does not exist: " + dir.string());
    std::random_device rd;
    const fs::path tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(rd()));
    try {
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw RuntimeError("cannot write " + tmp.string());
            writer(out);
            out.flush();
            if (!out) throw RuntimeError("write failed: " + tmp.string());
        }
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_volume(const std::filesystem::path& path, const VoxelVolume& volume) {
    const auto& d = volume.dims();
    atomic_write(path, [&](std::ostream& os) {
        write_grid(os, static_cast<std::uint32_t>(d.nx), static_cast<std::uint32_t>(d.ny),
                   static_cast<std::uint32_t>(d.nz), volume.values());
    });
}

VoxelVolume read_volume(const std::filesystem::path& path) {
    std::array<std::uint32_t, 3> d{};
    auto values = read_grid(path, d);
    return {Dims3{d[0], d[1], d[2]}, std::move(values)};
}

void write_image(const std::filesystem::path& path, const ProjectionImage& image) {
    atomic_write(path, [&](std::ostream& os) {
        write_grid(os, static_cast<std::uint32_t>(image.width()), static_cast<std::uint32_t>(image.height()), 1,
                   image.values());
    });
}

ProjectionImage read_image(const std::filesystem::path& path) {
    std::array<std::uint32_t, 3> d{};
    auto values = read_grid(path, d);
    if (d[2] != 1) throw RuntimeError("image container must have nz = 1: " + path.string());
    ProjectionImage img(d[0], d[1]);
    std::copy(values.begin(), values.end(), img.values().begin());
    return img;
}

void write_pgm16(const std::filesystem::path& path, const ProjectionImage& image) {
    const double peak = image.max();
    const double scale = peak > 0.0 ? 65535.0 / peak : 1.0;
    atomic_write(path, [&](std::ostream& os) {
        os << "P5\n# scale=" << format_double(scale) << "\n" << image.width() << " " << image.height()
           << "\n65535\n";
        for (double v : image.values()) {
            const auto q = static_cast<std::uint16_t>(std::clamp(std::lround(v * scale), 0L, 65535L));
            const char be[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
            os.write(be, 2);
        }
    });
}

ProjectionImage read_pgm16(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    std::getline(in, line);
    if (trim(line) != "P5") throw RuntimeError("not a binary PGM: " + path.string());
    double scale = 1.0;
    std::vector<long> header;
    while (header.size() < 3 && std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') {
            const auto pos = line.find("scale=");
            if (pos != std::string::npos) scale = parse_double(trim(line.substr(pos + 6)), "PGM scale");
            continue;
        }
        std::istringstream ls(line);
        long v;
        while (ls >> v) header.push_back(v);
    }
    if (header.size() != 3 || header[2] != 65535) throw RuntimeError("unsupported PGM header: " + path.string());
    ProjectionImage img(header[0], header[1]);
    for (double& v : img.values()) {
        unsigned char be[2];
        if (!in.read(reinterpret_cast<char*>(be), 2)) throw RuntimeError("truncated PGM: " + path.string());
        v = ((be[0] << 8) | be[1]) / scale;
    }
    return img;
}

ProjectionImage read_any_image(const std::filesystem::path& path) {
    return path.extension() == ".pgm" ? read_pgm16(path) : read_image(path);
}

std::string sha256_bytes(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw RuntimeError("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_bytes(ss.str());
}

std::vector<KeyValueBlock> parse_key_values(const std::string& text, const std::string& origin) {
    std::vector<KeyValueBlock> blocks(1);
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": bad section header");
            blocks.push_back({trim(line.substr(1, line.size() - 2)), {}, lineno});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (!blocks.back().values.emplace(key, trim(line.substr(eq + 1))).second)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return blocks;
}

std::vector<KeyValueBlock> read_key_value_file(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_key_values(ss.str(), path.string());
}

CameraRig read_rig(const std::filesystem::path& path) {
    const auto blocks = read_key_value_file(path);
    CameraRig rig;
    const std::string origin = path.string();
    for (const auto& [k, v] : blocks.front().values) {
        if (k == "radius")
            rig.weight_radius = parse_double(v, "radius");
        else
            throw ConfigError(origin + ": unknown rig key '" + k + "'");
    }
    for (std::size_t b = 1; b < blocks.size(); ++b) {
        const auto& blk = blocks[b];
        if (blk.section != "camera")
            throw ConfigError(origin + ":" + std::to_string(blk.line) + ": unknown section [" + blk.section + "]");
        auto get = [&](const char* key, std::optional<double> fallback) {
            const auto it = blk.values.find(key);
            if (it == blk.values.end()) {
                if (!fallback)
                    throw ConfigError(origin + ":" + std::to_string(blk.line) + ": camera missing '" + key + "'");
                return *fallback;
            }
            return parse_double(it->second, key);
        };
        for (const auto& [k, v] : blk.values) {
            static const char* known[] = {"alpha", "beta", "gamma", "width", "height", "offset_x", "offset_y", "scale"};
            if (std::none_of(std::begin(known), std::end(known), [&](const char* s) { return k == s; }))
                throw ConfigError(origin + ":" + std::to_string(blk.line) + ": unknown camera key '" + k + "'");
        }
        try {
            rig.cameras.emplace_back(
                EulerAngles::from_degrees(get("alpha", std::nullopt), get("beta", std::nullopt),
                                          get("gamma", std::nullopt)),
                static_cast<std::int64_t>(get("width", std::nullopt)),
                static_cast<std::int64_t>(get("height", std::nullopt)),
                Vec2{get("offset_x", 0.0), get("offset_y", 0.0)}, get("scale", 1.0));
        } catch (const InvalidArgument& e) {
            throw ConfigError(origin + ":" + std::to_string(blk.line) + ": " + e.what());
        }
    }
    if (rig.cameras.empty()) throw ConfigError(origin + ": rig has no [camera] blocks");
    if (!(rig.weight_radius > 0.0)) throw ConfigError(origin + ": radius must be positive");
    return rig;
}

std::string format_rig(const CameraRig& rig) {
    constexpr double deg = 180.0 / std::numbers::pi;
    std::ostringstream os;
    os << "radius = " << format_double(rig.weight_radius) << "\n";
    for (const auto& cam : rig.cameras) {
        os << "\n[camera]\n"
           << "alpha = " << format_double(cam.angles().alpha() * deg) << "\n"
           << "beta = " << format_double(cam.angles().beta() * deg) << "\n"
           << "gamma = " << format_double(cam.angles().gamma() * deg) << "\n"
           << "width = " << cam.image_width() << "\n"
           << "height = " << cam.image_height() << "\n"
           << "offset_x = " << format_double(cam.origin_offset()[0]) << "\n"
           << "offset_y = " << format_double(cam.origin_offset()[1]) << "\n"
           << "scale = " << format_double(cam.scale()) << "\n";
    }
    return os.str();
}

void write_rig(const std::filesystem::path& path, const CameraRig& rig) {
    const std::string text = format_rig(rig);
    atomic_write(path, [&](std::ostream& os) { os << text; });
}

}  // namespace tpr::io

#include "gshield/corpus.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "gshield/error.hpp"
#include "gshield/metrics.hpp"
#include "gshield/rng.hpp"

namespace gshield::corpus {

namespace fs = std::filesystem;

namespace {

constexpr int kMargin = 8;

Image procedural_field(int size, Rng& rng) {
    Image field(size, size);
    const double pi = std::numbers::pi;
    // Linear gradient per channel.
    for (int c = 0; c < 3; ++c) {
        const double base = rng.uniform(0.25, 0.75);
        const double gx = rng.uniform(-0.3, 0.3) / size, gy = rng.uniform(-0.3, 0.3) / size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) field.at(c, y, x) = static_cast<float>(base + gx * x + gy * y);
    }
    // Low-frequency colour waves.
    const int waves = 2 + static_cast<int>(rng.below(3));
    for (int w = 0; w < waves; ++w) {
        const double freq = rng.uniform(0.5, 2.5) * 2.0 * pi / size;
        const double angle = rng.uniform(0.0, pi), phase = rng.uniform(0.0, 2.0 * pi);
        const double kx = freq * std::cos(angle), ky = freq * std::sin(angle);
        double amp[3];
        for (double& a : amp) a = rng.uniform(-0.12, 0.12);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double s = std::sin(kx * x + ky * y + phase);
                for (int c = 0; c < 3; ++c) field.at(c, y, x) += static_cast<float>(amp[c] * s);
            }
    }
    // Soft ellipses.
    const int blobs = 2 + static_cast<int>(rng.below(4));
    for (int b = 0; b < blobs; ++b) {
        const double cx = rng.uniform(0.1, 0.9) * size, cy = rng.uniform(0.1, 0.9) * size;
        const double ra = rng.uniform(0.08, 0.3) * size, rb = rng.uniform(0.08, 0.3) * size;
        const double theta = rng.uniform(0.0, pi), edge = rng.uniform(1.0, 3.0);
        const double ct = std::cos(theta), st = std::sin(theta);
        double color[3];
        for (double& col : color) col = rng.uniform(0.05, 0.95);
        const double weight = rng.uniform(0.5, 0.9);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x - cx, dy = y - cy;
                const double u = (ct * dx + st * dy) / ra, v = (-st * dx + ct * dy) / rb;
                const double r = std::sqrt(u * u + v * v);
                const double inside = 1.0 / (1.0 + std::exp((r - 1.0) * std::min(ra, rb) / edge));
                const double a = weight * inside;
                for (int c = 0; c < 3; ++c) {
                    float& px = field.at(c, y, x);
                    px = static_cast<float>((1.0 - a) * px + a * color[c]);
                }
            }
    }
    // Band-limited noise.
    Image noise(size, size);
    for (auto& v : noise.data) v = static_cast<float>(rng.normal());
    noise = metrics::gaussian_smooth(noise, rng.uniform(1.5, 3.0));
    const double amp = rng.uniform(0.05, 0.15);
    for (std::size_t i = 0; i < field.size(); ++i) field.data[i] += static_cast<float>(amp * noise.data[i]);
    // Keep headroom so an epsilon ball around any pixel stays mostly inside [0, 1].
    for (auto& v : field.data) v = std::clamp(v, 0.05f, 0.95f);
    return field;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <class U>
void put(std::string& out, U value) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::string& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

    template <class U>
    U get() {
        need(sizeof(U));
        std::uint64_t v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return static_cast<U>(v);
    }

    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void read_floats(float* dst, std::size_t n) {
        need(n * 4);
        for (std::size_t i = 0; i < n; ++i) dst[i] = std::bit_cast<float>(get<std::uint32_t>());
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError(path_.string() + ": truncated weights file");
    }
    const std::string& bytes_;
    fs::path path_;
    std::size_t pos_ = 0;
};

} // namespace

Scene generate_scene(int views, int size, std::uint64_t seed, const std::string& id) {
    if (size < 32) throw ConfigError("corpus.size must be at least 32");
    if (views < 1) throw ConfigError("corpus.views must be at least 1");
    Rng rng(seed);
    const Image field = procedural_field(size + kMargin, rng);
    Scene scene;
    scene.id = id;
    scene.provenance = fmt::format("procedural seed={}", seed);
    for (int v = 0; v < views; ++v) {
        const int top = v == 0 ? kMargin / 2 : static_cast<int>(rng.below(kMargin + 1));
        const int left = v == 0 ? kMargin / 2 : static_cast<int>(rng.below(kMargin + 1));
        scene.views.push_back(crop(field, top, left, size, size));
    }
    return scene;
}

std::vector<Scene> generate_corpus(int n_scenes, int views_per_scene, int size, std::uint64_t seed) {
    if (n_scenes < 0) throw ConfigError("corpus.scenes must be non-negative");
    std::vector<Scene> scenes;
    Rng root(seed);
    for (int i = 0; i < n_scenes; ++i) {
        const std::uint64_t scene_seed = root.split(static_cast<std::uint64_t>(i)).next_u64();
        scenes.push_back(generate_scene(views_per_scene, size, scene_seed, fmt::format("scene_{:03d}", i)));
    }
    return scenes;
}

Image read_png(const fs::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.c_str())) {
        throw DataError(fmt::format("{}: cannot decode PNG ({})", path.string(), png.message));
    }
    png.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buffer(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
        png_image_free(&png);
        throw DataError(fmt::format("{}: cannot decode PNG ({})", path.string(), png.message));
    }
    Image img(static_cast<int>(png.height), static_cast<int>(png.width));
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(c, y, x) = static_cast<float>(buffer[(static_cast<std::size_t>(y) * img.width + x) * 3 + c]) / 255.0f;
    return img;
}

void write_png(const fs::path& path, const Image& image) {
    if (image.channels != 3) throw DataError("write_png: only 3-channel images are supported");
    std::vector<unsigned char> buffer(static_cast<std::size_t>(image.height) * image.width * 3);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
                buffer[(static_cast<std::size_t>(y) * image.width + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
            }
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width);
    png.height = static_cast<png_uint_32>(image.height);
    png.format = PNG_FORMAT_RGB;
    png_alloc_size_t size = 0;
    png_image_write_get_memory_size(png, size, 0, buffer.data(), 0, nullptr);
    std::string bytes(size, '\0');
    if (!png_image_write_to_memory(&png, bytes.data(), &size, 0, buffer.data(), 0, nullptr)) {
        throw DataError(fmt::format("{}: cannot encode PNG ({})", path.string(), png.message));
    }
    bytes.resize(size);
    write_atomic(path, bytes);
}

std::vector<Scene> import_images(const fs::path& directory) {
    if (!fs::is_directory(directory)) throw DataError(directory.string() + ": not a directory");
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(directory))
        if (entry.is_directory()) subdirs.push_back(entry.path());
    std::sort(subdirs.begin(), subdirs.end());
    std::vector<Scene> scenes;
    for (const auto& dir : subdirs) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            auto ext = entry.path().extension().string();
            std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
            if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
        }
        if (files.empty()) continue;
        std::sort(files.begin(), files.end());
        Scene scene;
        scene.id = dir.filename().string();
        scene.provenance = dir.string();
        for (const auto& f : files) {
            scene.views.push_back(read_png(f));
            if (!scene.views.back().same_shape(scene.views.front())) {
                throw DataError(f.string() + ": view dimensions differ from the rest of the scene");
            }
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

void export_scenes(const fs::path& directory, const std::vector<Scene>& scenes) {
    for (const auto& scene : scenes) {
        const fs::path dir = directory / scene.id;
        fs::create_directories(dir);
        for (std::size_t v = 0; v < scene.views.size(); ++v) {
            write_png(dir / fmt::format("view_{:03d}.png", v), scene.views[v]);
        }
    }
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(tmp.string() + ": cannot open for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError(tmp.string() + ": write failed");
    }
    fs::rename(tmp, path);
}

void save_weights(const fs::path& path, const NamedTensors& tensors) {
    std::string out = "GSHW";
    put<std::uint32_t>(out, kWeightsVersion);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, tensor] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (auto d : tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        for (float v : tensor.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    }
    write_atomic(path, out);
}

NamedTensors load_weights(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open weights file");
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    Reader r(bytes, path);
    if (bytes.size() < 4 || bytes.compare(0, 4, "GSHW") != 0) throw DataError(path.string() + ": bad magic");
    r.take(4);
    const auto version = r.get<std::uint32_t>();
    if (version != kWeightsVersion) {
        throw DataError(fmt::format("{}: unsupported version {}", path.string(), version));
    }
    const auto count = r.get<std::uint64_t>();
    NamedTensors tensors;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>();
        std::string name = r.take(name_len);
        const auto rank = r.get<std::uint32_t>();
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint64_t>();
            if (dim > (1ULL << 40) || (dim != 0 && numel > (1ULL << 40) / dim)) {
                throw DataError(path.string() + ": implausible tensor dimensions for '" + name + "'");
            }
            numel *= dim;
            shape.push_back(static_cast<std::int64_t>(dim));
        }
        Tensor t(shape);
        r.read_floats(t.ptr(), static_cast<std::size_t>(numel));
        if (!tensors.emplace(name, std::move(t)).second) {
            throw DataError(path.string() + ": duplicate tensor name '" + name + "'");
        }
    }
    if (!r.done()) throw DataError(path.string() + ": trailing bytes after last tensor");
    return tensors;
}

std::uint64_t LabeledDataset::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& item : items) {
        h = fnv1a(h, &item.label, sizeof(item.label));
        h = fnv1a(h, item.image.data.data(), item.image.data.size() * sizeof(float));
    }
    for (const auto& p : pairs) {
        h = fnv1a(h, &p.clean, sizeof(p.clean));
        h = fnv1a(h, &p.poisoned, sizeof(p.poisoned));
    }
    return h;
}

LabeledDataset make_pairs(const std::vector<Scene>& scenes, const attack::AttackConfig& config) {
    LabeledDataset ds;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& views = scenes[s].views;
        auto scene_config = config;
        scene_config.seed = Rng(config.seed).split(s).next_u64();
        auto result = attack::poison(views, scene_config);
        for (std::size_t v = 0; v < views.size(); ++v) {
            Pair pair;
            pair.clean = ds.items.size();
            ds.items.push_back({views[v], 0, s, v});
            pair.poisoned = ds.items.size();
            ds.items.push_back({result.poisoned[v], 1, s, v});
            pair.degenerate = result.poisoned[v] == views[v];
            ds.pairs.push_back(pair);
        }
        ds.attacks.push_back(std::move(result));
    }
    return ds;
}

LabeledDataset pair_scenes(const std::vector<Scene>& clean, const std::vector<Scene>& poisoned) {
    if (clean.size() != poisoned.size()) {
        throw DataError("pair_scenes: " + std::to_string(clean.size()) + " clean scenes but " +
                        std::to_string(poisoned.size()) + " poisoned scenes");
    }
    LabeledDataset ds;
    for (std::size_t s = 0; s < clean.size(); ++s) {
        const auto& c = clean[s];
        const auto& p = poisoned[s];
        if (c.id != p.id || c.views.size() != p.views.size()) {
            throw DataError("pair_scenes: scene " + c.id + " does not match poisoned scene " + p.id);
        }
        for (std::size_t v = 0; v < c.views.size(); ++v) {
            if (!c.views[v].same_shape(p.views[v])) throw DataError("pair_scenes: view shapes differ in scene " + c.id);
            Pair pair;
            pair.clean = ds.items.size();
            ds.items.push_back({c.views[v], 0, s, v});
            pair.poisoned = ds.items.size();
            ds.items.push_back({p.views[v], 1, s, v});
            pair.degenerate = c.views[v] == p.views[v];
            ds.pairs.push_back(pair);
        }
    }
    return ds;
}

Image quantize_within(const Image& poisoned, const Image& clean, double epsilon) {
    if (!poisoned.same_shape(clean)) throw ShapeError("quantize_within: shapes differ");
    Image out = poisoned;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double c = clean.data[i];
        double level = std::round(static_cast<double>(poisoned.data[i]) * 255.0);
        const double lo = std::ceil((c - epsilon) * 255.0 - 1e-9), hi = std::floor((c + epsilon) * 255.0 + 1e-9);
        level = std::clamp(level, std::max(lo, 0.0), std::min(hi, 255.0));
        float v = static_cast<float>(level / 255.0);
        while (std::abs(static_cast<double>(v) - c) > epsilon) {
            level += level * (1.0 / 255.0) > c ? -1.0 : 1.0;
            v = static_cast<float>(level / 255.0);
        }
        out.data[i] = v;
    }
    return out;
}

void assign_splits(LabeledDataset& dataset, double val_fraction, double test_fraction, std::uint64_t seed) {
    if (val_fraction < 0.0 || test_fraction < 0.0 || val_fraction + test_fraction >= 1.0) {
        throw ConfigError("split fractions must be non-negative and sum to less than 1");
    }
    std::size_t scenes = 0;
    for (const auto& item : dataset.items) scenes = std::max(scenes, item.scene + 1);
    auto count = [&](double fraction) {
        if (fraction <= 0.0) return std::size_t{0};
        return std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(scenes)));
    };
    const std::size_t n_test = count(test_fraction), n_val = count(val_fraction);
    if (n_test + n_val >= scenes) throw DataError("too few scenes to form train, val and test splits");
    std::vector<std::size_t> order(scenes);
    for (std::size_t i = 0; i < scenes; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
    std::vector<Split> tag(scenes, Split::Train);
    for (std::size_t i = 0; i < n_test; ++i) tag[order[i]] = Split::Test;
    for (std::size_t i = n_test; i < n_test + n_val; ++i) tag[order[i]] = Split::Val;
    for (auto& item : dataset.items) item.split = tag[item.scene];
}

std::vector<LabeledItem> items_in(const LabeledDataset& dataset, Split split) {
    std::vector<LabeledItem> out;
    for (const auto& item : dataset.items)
        if (item.split == split) out.push_back(item);
    return out;
}

std::vector<std::pair<Image, Image>> pairs_in(const LabeledDataset& dataset, Split split) {
    std::vector<std::pair<Image, Image>> out;
    for (const auto& p : dataset.pairs) {
        if (dataset.items[p.clean].split != split) continue;
        out.emplace_back(dataset.items[p.poisoned].image, dataset.items[p.clean].image);
    }
    return out;
}

} // namespace gshield::corpus

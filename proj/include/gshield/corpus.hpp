#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gshield/attack.hpp"
#include "gshield/image.hpp"
#include "gshield/numerics/tensor.hpp"

namespace gshield::corpus {

struct Scene {
    std::string id;
    std::vector<Image> views;
    /// Generator name and seed, or the imported directory.
    std::string provenance;
};

/// Smooth natural-image surrogate: gradients, low-frequency colour fields,
/// soft ellipses and band-limited noise. Views are offset crops of one field.
Scene generate_scene(int views, int size, std::uint64_t seed, const std::string& id);

/// Scene i uses a stream split from `seed`, so scenes do not depend on each other.
std::vector<Scene> generate_corpus(int n_scenes, int views_per_scene, int size, std::uint64_t seed);

/// 8-bit RGB PNG. Values are rounded to the nearest level on write.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

/// One scene per subdirectory (sorted by name), one view per .png file in filename order.
std::vector<Scene> import_images(const std::filesystem::path& directory);
/// Writes <directory>/<scene.id>/view_###.png.
void export_scenes(const std::filesystem::path& directory, const std::vector<Scene>& scenes);

using NamedTensors = std::map<std::string, Tensor>;

inline constexpr std::uint32_t kWeightsVersion = 1;

/// Atomic write (temporary file then rename).
void save_weights(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_weights(const std::filesystem::path& path);

/// Writes bytes to a sibling temporary file and renames it into place.
void write_atomic(const std::filesystem::path& path, const std::string& bytes);

enum class Split { Train, Val, Test };

struct LabeledItem {
    Image image;
    int label = 0;  ///< 1 = poisoned
    std::size_t scene = 0;
    std::size_t view = 0;
    Split split = Split::Train;
};

struct Pair {
    std::size_t clean = 0;     ///< item index
    std::size_t poisoned = 0;  ///< item index
    bool degenerate = false;   ///< poisoned image equals the clean one
};

struct LabeledDataset {
    std::vector<LabeledItem> items;
    std::vector<Pair> pairs;
    std::vector<attack::PoisonResult> attacks;  ///< one per scene

    /// FNV-1a over labels and pixel bytes.
    std::uint64_t hash() const;
};

/// Poisons every scene and emits clean/poisoned items plus the pairing map.
/// Every item starts in the train split.
LabeledDataset make_pairs(const std::vector<Scene>& scenes, const attack::AttackConfig& config);

/// Pairs saved clean and poisoned scenes (matched by position; ids, view
/// counts and shapes must agree) without running the attack.
LabeledDataset pair_scenes(const std::vector<Scene>& clean, const std::vector<Scene>& poisoned);

/// Rounds to 8-bit levels while staying inside the epsilon ball around
/// `clean` (which must already lie on 8-bit levels) and inside [0, 1].
Image quantize_within(const Image& poisoned, const Image& clean, double epsilon);

/// Tags whole scenes as val/test so that no scene straddles splits. Counts are
/// rounded down but at least one scene goes to each nonzero fraction.
void assign_splits(LabeledDataset& dataset, double val_fraction, double test_fraction, std::uint64_t seed);

std::vector<LabeledItem> items_in(const LabeledDataset& dataset, Split split);

/// (poisoned, clean) image pairs whose clean item is in the split.
std::vector<std::pair<Image, Image>> pairs_in(const LabeledDataset& dataset, Split split);

} // namespace gshield::corpus

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gshield/attack.hpp"
#include "gshield/detector.hpp"
#include "gshield/purifier.hpp"
#include "gshield/splat2d.hpp"

namespace gshield::config {

struct CorpusSection {
    int scenes = 24;
    int views = 4;
    int size = 64;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    std::uint64_t seed = 0;        ///< derived
    std::uint64_t split_seed = 0;  ///< derived
};

struct DetectorSection {
    detect::DetectorTrainConfig train{};
    /// Random crops averaged at inference.
    int crops = 4;
    std::uint64_t crop_seed = 0;  ///< derived

    detect::CropPolicy policy() const { return {crops, train.crop, crop_seed}; }
};

struct PurifierSection {
    purify::PurifierTrainConfig train{};
    /// Run the discriminator pretrain and adversarial stages after warmup.
    bool adversarial = true;
};

struct MetricsSection {
    double smooth_sigma = 1.0;
    /// Views per scene fitted by the victim during evaluation; 0 = all.
    int fit_views = 0;
};

/// Every module's settings plus the global seed. Module seeds are derived
/// from the global seed, so only `seed` is exposed.
struct RunConfig {
    std::uint64_t seed = 0;
    CorpusSection corpus{};
    splat::VictimConfig victim{};
    attack::AttackConfig attack{};
    DetectorSection detector{};
    PurifierSection purifier{};
    MetricsSection metrics{};

    /// Copies `seed` into each module under its own stream.
    void derive_seeds();
    void validate() const;
};

/// All keys as "section.key" (global keys have no section), in file order.
std::vector<std::string> known_keys();

/// Sets one key; throws ConfigError for unknown keys or unparsable values.
void set_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& config, const std::string& key);

/// Text format:
///   # comment
///   seed = 7
///   [attack]
///   epsilon = 26/255
/// Numbers may be written as fractions a/b; booleans as true/false.
RunConfig parse(const std::string& text);
RunConfig load(const std::filesystem::path& path);

/// Complete snapshot that parses back to an identical config.
std::string to_text(const RunConfig& config);

/// Applies GSHIELD_SEED when set.
void apply_environment(RunConfig& config);

} // namespace gshield::config

#include "gshield/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include <fmt/format.h>

#include "gshield/error.hpp"

namespace gshield::config {

namespace {

struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        return attack::parse_fraction(text);
    } catch (const ConfigError&) {
        throw ConfigError("config: cannot parse '" + text + "' as a number for " + key);
    }
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
    Int value{};
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw ConfigError("config: cannot parse '" + text + "' as an integer for " + key);
    }
    return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError("config: expected true or false for " + key + ", got '" + text + "'");
}

template <class Member>
Field field(std::string key, Member member) {
    using V = std::remove_reference_t<decltype(member(std::declval<RunConfig&>()))>;
    Field f;
    f.key = key;
    f.get = [member](const RunConfig& c) {
        const V& v = member(const_cast<RunConfig&>(c));
        if constexpr (std::is_same_v<V, bool>) return std::string(v ? "true" : "false");
        else return fmt::format("{}", v);
    };
    f.set = [member, key](RunConfig& c, const std::string& text) {
        V& v = member(c);
        if constexpr (std::is_same_v<V, bool>) v = parse_bool(key, text);
        else if constexpr (std::is_floating_point_v<V>) v = parse_double(key, text);
        else v = parse_int<V>(key, text);
    };
    return f;
}

Field skip_field() {
    Field f;
    f.key = "purifier.skip";
    f.get = [](const RunConfig& c) { return purify::to_string(c.purifier.train.skip); };
    f.set = [](RunConfig& c, const std::string& v) { c.purifier.train.skip = purify::parse_skip_mode(v); };
    return f;
}

#define GSHIELD_FIELD(key, expr) field(key, [](RunConfig& c) -> auto& { return c.expr; })

const std::vector<Field>& fields() {
    static const std::vector<Field> table{
        GSHIELD_FIELD("seed", seed),
        GSHIELD_FIELD("corpus.scenes", corpus.scenes),
        GSHIELD_FIELD("corpus.views", corpus.views),
        GSHIELD_FIELD("corpus.size", corpus.size),
        GSHIELD_FIELD("corpus.val_fraction", corpus.val_fraction),
        GSHIELD_FIELD("corpus.test_fraction", corpus.test_fraction),
        GSHIELD_FIELD("victim.lambda_dssim", victim.lambda_dssim),
        GSHIELD_FIELD("victim.densify_threshold", victim.densify_threshold),
        GSHIELD_FIELD("victim.densify_interval", victim.densify_interval),
        GSHIELD_FIELD("victim.densify_until", victim.densify_until),
        GSHIELD_FIELD("victim.split_scale_threshold", victim.split_scale_threshold),
        GSHIELD_FIELD("victim.split_factor", victim.split_factor),
        GSHIELD_FIELD("victim.prune_opacity", victim.prune_opacity),
        GSHIELD_FIELD("victim.max_gaussians", victim.max_gaussians),
        GSHIELD_FIELD("victim.initial_gaussians", victim.initial_gaussians),
        GSHIELD_FIELD("victim.iterations", victim.iterations),
        GSHIELD_FIELD("victim.learning_rate", victim.learning_rate),
        GSHIELD_FIELD("victim.position_lr", victim.position_lr),
        GSHIELD_FIELD("victim.absolute_gradient", victim.absolute_gradient),
        GSHIELD_FIELD("attack.epsilon", attack.epsilon),
        GSHIELD_FIELD("attack.step_size", attack.step_size),
        GSHIELD_FIELD("attack.iterations", attack.iterations),
        GSHIELD_FIELD("attack.adaptive_beta", attack.adaptive_beta),
        GSHIELD_FIELD("attack.sigma_sq", attack.sigma_sq),
        GSHIELD_FIELD("attack.proxy_logging", attack.proxy_logging),
        GSHIELD_FIELD("attack.proxy_interval", attack.proxy_interval),
        GSHIELD_FIELD("detector.learning_rate", detector.train.learning_rate),
        GSHIELD_FIELD("detector.epochs", detector.train.epochs),
        GSHIELD_FIELD("detector.batch_size", detector.train.batch_size),
        GSHIELD_FIELD("detector.crop", detector.train.crop),
        GSHIELD_FIELD("detector.crops", detector.crops),
        skip_field(),
        GSHIELD_FIELD("purifier.batch_size", purifier.train.batch_size),
        GSHIELD_FIELD("purifier.crop", purifier.train.crop),
        GSHIELD_FIELD("purifier.augment", purifier.train.augment),
        GSHIELD_FIELD("purifier.warmup_lr", purifier.train.warmup_lr),
        GSHIELD_FIELD("purifier.warmup_epochs", purifier.train.warmup_epochs),
        GSHIELD_FIELD("purifier.disc_lr", purifier.train.disc_lr),
        GSHIELD_FIELD("purifier.disc_epochs", purifier.train.disc_epochs),
        GSHIELD_FIELD("purifier.adv_lr", purifier.train.adv_lr),
        GSHIELD_FIELD("purifier.adv_epochs", purifier.train.adv_epochs),
        GSHIELD_FIELD("purifier.alpha_mse", purifier.train.alpha_mse),
        GSHIELD_FIELD("purifier.alpha_proxy", purifier.train.alpha_proxy),
        GSHIELD_FIELD("purifier.alpha_adv", purifier.train.alpha_adv),
        GSHIELD_FIELD("purifier.adversarial", purifier.adversarial),
        GSHIELD_FIELD("metrics.smooth_sigma", metrics.smooth_sigma),
        GSHIELD_FIELD("metrics.fit_views", metrics.fit_views),
    };
    return table;
}

#undef GSHIELD_FIELD

const Field& find(const std::string& key) {
    for (const auto& f : fields())
        if (f.key == key) return f;
    throw ConfigError("config: unknown key '" + key + "'");
}

std::string section_of(const std::string& key) {
    const auto dot = key.find('.');
    return dot == std::string::npos ? std::string{} : key.substr(0, dot);
}

} // namespace

void RunConfig::derive_seeds() {
    Rng root(seed);
    victim.seed = root.split(1).next_u64();
    attack.seed = root.split(2).next_u64();
    attack.proxy_victim = victim;
    detector.train.seed = root.split(3).next_u64();
    purifier.train.seed = root.split(4).next_u64();
    corpus.seed = root.split(5).next_u64();
    corpus.split_seed = root.split(6).next_u64();
    detector.crop_seed = root.split(7).next_u64();
}

void RunConfig::validate() const {
    if (corpus.scenes < 0 || corpus.views < 1 || corpus.size < 32) {
        throw ConfigError("config: corpus needs scenes >= 0, views >= 1 and size >= 32");
    }
    if (corpus.val_fraction < 0.0 || corpus.test_fraction < 0.0 || corpus.val_fraction + corpus.test_fraction >= 1.0) {
        throw ConfigError("config: corpus split fractions must be non-negative and sum to less than 1");
    }
    attack.validate();
    detector.train.validate();
    if (detector.crops < 1) throw ConfigError("config: detector.crops must be at least 1");
    purifier.train.validate();
    if (!(metrics.smooth_sigma > 0.0)) throw ConfigError("config: metrics.smooth_sigma must be positive");
    if (metrics.fit_views < 0) throw ConfigError("config: metrics.fit_views must be non-negative");
    if (victim.iterations < 1 || victim.initial_gaussians < 1) {
        throw ConfigError("config: victim needs iterations >= 1 and initial_gaussians >= 1");
    }
}

std::vector<std::string> known_keys() {
    std::vector<std::string> keys;
    for (const auto& f : fields()) keys.push_back(f.key);
    return keys;
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) { find(key).set(config, trim(value)); }

std::string get_value(const RunConfig& config, const std::string& key) { return find(key).get(config); }

RunConfig parse(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line, section;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(fmt::format("config line {}: malformed section header", number));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("config line {}: expected key = value", number));
        const std::string name = trim(line.substr(0, eq));
        const std::string key = section.empty() ? name : section + "." + name;
        try {
            set_value(config, key, line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("config line {}: {}", number, e.what()));
        }
    }
    return config;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot read config file");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string to_text(const RunConfig& config) {
    std::string out, section;
    for (const auto& f : fields()) {
        const auto s = section_of(f.key);
        if (s != section) {
            out += fmt::format("\n[{}]\n", s);
            section = s;
        }
        const auto name = s.empty() ? f.key : f.key.substr(s.size() + 1);
        out += fmt::format("{} = {}\n", name, f.get(config));
    }
    return out;
}

void apply_environment(RunConfig& config) {
    if (const char* env = std::getenv("GSHIELD_SEED"); env != nullptr && *env != '\0') {
        set_value(config, "seed", env);
    }
}

} // namespace gshield::config

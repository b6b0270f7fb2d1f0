#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "gshield/config.hpp"
#include "gshield/corpus.hpp"
#include "gshield/error.hpp"
#include "gshield/pipeline.hpp"
#include "gshield/report.hpp"
#include "gshield/tv.hpp"

namespace gshield::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Context {
    fs::path workdir;
    config::RunConfig config;
    int jobs = 1;
    std::ostream* out = nullptr;

    fs::path path(const std::string& relative) const { return workdir / relative; }
    fs::path clean_dir() const { return path("corpus/clean"); }
    fs::path poisoned_dir() const { return path("corpus/poisoned"); }
    fs::path models_dir() const { return path("models"); }
    fs::path reports_dir(const std::string& name) const { return path("reports/" + name); }

    report::ExperimentReport new_report(const std::string& command) const {
        report::ExperimentReport r;
        r.command = command;
        r.run_id = fmt::format("{}-{}", command, config.seed);
        r.config = config::to_text(config);
        return r;
    }

    void finish(const std::string& name, report::ExperimentReport& r, std::chrono::steady_clock::time_point start) const {
        r.timing["total_seconds"] = seconds_since(start);
        const auto dir = reports_dir(name);
        report::write(dir, r);
        *out << "report written to " << dir.string() << "\n";
    }
};

std::vector<corpus::Scene> load_scenes(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + ": directory not found");
    auto scenes = corpus::import_images(dir);
    if (scenes.empty()) throw DataError(dir.string() + ": no scenes found");
    return scenes;
}

corpus::LabeledDataset load_dataset(const Context& ctx) {
    auto ds = corpus::pair_scenes(load_scenes(ctx.clean_dir()), load_scenes(ctx.poisoned_dir()));
    corpus::assign_splits(ds, ctx.config.corpus.val_fraction, ctx.config.corpus.test_fraction, ctx.config.corpus.split_seed);
    return ds;
}

void save_purifier(const fs::path& path, const purify::PurifierModel& model) {
    corpus::save_weights(path, nn::to_named(model.params));
    corpus::write_atomic(fs::path(path).replace_extension(".json"),
                         json{{"skip", purify::to_string(model.skip)}}.dump() + "\n");
}

purify::PurifierModel load_purifier(const fs::path& path) {
    std::ifstream meta(fs::path(path).replace_extension(".json"));
    if (!meta) throw DataError(path.string() + ": missing purifier metadata (.json)");
    json j;
    try {
        meta >> j;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad purifier metadata: " + e.what());
    }
    auto model = purify::PurifierModel::create(purify::parse_skip_mode(j.value("skip", "add")), 0);
    nn::from_named(model.params, corpus::load_weights(path));
    return model;
}

detect::DetectorModel load_detector(const fs::path& path) {
    auto model = detect::DetectorModel::create(0);
    nn::from_named(model.params, corpus::load_weights(path));
    return model;
}

std::vector<purify::ImagePair> as_pairs(const std::vector<std::pair<Image, Image>>& pairs) {
    return {pairs.begin(), pairs.end()};
}

/// Median PSNR gain, TV ratio and proxy of a purifier on (poisoned, clean) pairs.
void purifier_scalars(report::ExperimentReport& r, const std::string& prefix, const purify::PurifierModel& model,
                      const std::vector<purify::ImagePair>& pairs, const detect::DetectorModel* detector) {
    if (pairs.empty()) return;
    std::vector<double> psnr, gain, tv_ratio, proxy;
    for (const auto& [poisoned, clean] : pairs) {
        const auto restored = model.purify(poisoned);
        const double p = metrics::psnr(restored, clean);
        psnr.push_back(p);
        gain.push_back(p - metrics::psnr(poisoned, clean));
        tv_ratio.push_back(attack::tv_score(restored) / attack::tv_score(clean));
        if (detector != nullptr) proxy.push_back(purify::perceptual_proxy(*detector, restored, clean));
    }
    r.scalars[prefix + "psnr_median"] = metrics::median(psnr);
    r.scalars[prefix + "psnr_gain_median"] = metrics::median(gain);
    r.scalars[prefix + "tv_ratio_median"] = metrics::median(tv_ratio);
    if (!proxy.empty()) r.scalars[prefix + "proxy_median"] = metrics::median(proxy);
}

int cmd_gen_corpus(const Context& ctx, const std::string& output) {
    const auto start = std::chrono::steady_clock::now();
    const auto& c = ctx.config.corpus;
    const auto scenes = corpus::generate_corpus(c.scenes, c.views, c.size, c.seed);
    const fs::path dir = output.empty() ? ctx.clean_dir() : ctx.path(output);
    corpus::export_scenes(dir, scenes);
    auto r = ctx.new_report("gen-corpus");
    r.scalars["scenes"] = static_cast<double>(scenes.size());
    r.scalars["views"] = static_cast<double>(c.views);
    ctx.finish("gen-corpus", r, start);
    *ctx.out << fmt::format("wrote {} scenes to {}\n", scenes.size(), dir.string());
    return kOk;
}

int cmd_attack(const Context& ctx, const std::string& input, const std::string& output) {
    const auto start = std::chrono::steady_clock::now();
    const auto scenes = load_scenes(input.empty() ? ctx.clean_dir() : ctx.path(input));
    const fs::path dir = output.empty() ? ctx.poisoned_dir() : ctx.path(output);
    const auto& ac = ctx.config.attack;
    std::vector<corpus::Scene> poisoned(scenes.size());
    std::vector<attack::PoisonResult> results(scenes.size());
    pipeline::parallel_for(scenes.size(), ctx.jobs, [&](std::size_t s) {
        auto scene_config = ac;
        scene_config.seed = Rng(ac.seed).split(s).next_u64();
        auto result = ac.adaptive_beta > 0.0 ? attack::poison_adaptive(scenes[s].views, scene_config)
                                             : attack::poison(scenes[s].views, scene_config);
        for (std::size_t v = 0; v < result.poisoned.size(); ++v) {
            result.poisoned[v] = corpus::quantize_within(result.poisoned[v], scenes[s].views[v], ac.epsilon);
        }
        result.max_linf_deviation = attack::max_abs_deviation(result.poisoned, scenes[s].views);
        result.tv_after = attack::tv_score(result.poisoned);
        poisoned[s] = {scenes[s].id, result.poisoned, scenes[s].provenance + " +poison"};
        results[s] = std::move(result);
    });
    corpus::export_scenes(dir, poisoned);
    auto r = ctx.new_report("attack");
    std::vector<metrics::MetricRow> rows;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& res = results[s];
        rows.push_back({scenes[s].id,
                        "attack",
                        {{"tv_before", res.tv_before},
                         {"tv_after", res.tv_after},
                         {"tv_ratio", res.tv_after / res.tv_before},
                         {"max_linf", res.max_linf_deviation}}});
        for (std::size_t i = 0; i < res.objective_trace.size(); ++i) {
            r.series.push_back({static_cast<double>(i + 1), scenes[s].id + "/objective", res.objective_trace[i]});
            r.series.push_back({static_cast<double>(i + 1), scenes[s].id + "/tv", res.tv_trace[i]});
        }
        for (const auto& p : res.proxy_trace) {
            r.series.push_back({static_cast<double>(p.iteration), scenes[s].id + "/proxy_gaussians",
                                static_cast<double>(p.gaussians)});
        }
    }
    r.metrics = metrics::aggregate(std::move(rows));
    ctx.finish("attack", r, start);
    *ctx.out << fmt::format("poisoned {} scenes into {}; median TV ratio {:.3f}\n", scenes.size(), dir.string(),
                            r.metrics.find("attack")->median.at("tv_ratio"));
    return kOk;
}

int cmd_fit(const Context& ctx, const std::string& input, std::string name) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = input.empty() ? ctx.clean_dir() : ctx.path(input);
    const auto scenes = load_scenes(dir);
    if (name.empty()) name = dir.filename().string();
    const int views = ctx.config.metrics.fit_views;
    std::vector<metrics::MetricRow> rows(scenes.size());
    std::vector<std::vector<report::SeriesPoint>> series(scenes.size());
    std::vector<double> seconds(scenes.size(), 0.0);
    pipeline::parallel_for(scenes.size(), ctx.jobs, [&](std::size_t s) {
        const auto& scene = scenes[s];
        const std::size_t n = views > 0 ? std::min<std::size_t>(static_cast<std::size_t>(views), scene.views.size())
                                        : scene.views.size();
        double gaussians = 0.0, psnr = 0.0, ssim = 0.0, loss = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            auto victim = ctx.config.victim;
            victim.seed = Rng(ctx.config.victim.seed).split(v).next_u64();
            const auto fit = splat::fit(scene.views[v], victim);
            const auto render = splat::render(fit.scene);
            gaussians += static_cast<double>(fit.report.final_count);
            psnr += metrics::psnr(render, scene.views[v]);
            ssim += metrics::ssim(render, scene.views[v]);
            loss += fit.report.loss.empty() ? 0.0 : fit.report.loss.back();
            seconds[s] += fit.report.seconds;
            for (std::size_t i = 0; i < fit.report.gaussian_count.size(); ++i) {
                series[s].push_back({static_cast<double>(i + 1), fmt::format("{}/view{}/gaussians", scene.id, v),
                                     static_cast<double>(fit.report.gaussian_count[i])});
            }
        }
        const double k = static_cast<double>(n);
        rows[s] = {scene.id,
                   name,
                   {{"gaussians", gaussians},
                    {"model_bytes", gaussians * pipeline::kBytesPerGaussian},
                    {"psnr", psnr / k},
                    {"ssim", ssim / k},
                    {"final_loss", loss / k}}};
    });
    auto r = ctx.new_report("fit");
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        r.series.insert(r.series.end(), series[s].begin(), series[s].end());
        r.timing["fit_seconds/" + scenes[s].id] = seconds[s];
    }
    r.metrics = metrics::aggregate(std::move(rows));
    ctx.finish("fit-" + name, r, start);
    *ctx.out << fmt::format("fitted {} scenes; median Gaussian count {}\n", scenes.size(),
                            r.metrics.find(name)->median.at("gaussians"));
    return kOk;
}

int cmd_train_detector(const Context& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const auto ds = load_dataset(ctx);
    const auto result = detect::train_detector(corpus::items_in(ds, corpus::Split::Train), ctx.config.detector.train);
    fs::create_directories(ctx.models_dir());
    corpus::save_weights(ctx.models_dir() / "detector.gshw", nn::to_named(result.model.params));
    auto r = ctx.new_report("train-detector");
    for (const auto& e : result.curve) {
        r.series.push_back({static_cast<double>(e.epoch), "loss", e.loss});
        r.series.push_back({static_cast<double>(e.epoch), "train_accuracy", e.accuracy});
    }
    for (const auto& [split, name] : {std::pair{corpus::Split::Val, "val"}, std::pair{corpus::Split::Test, "test"}}) {
        const auto items = corpus::items_in(ds, split);
        if (items.empty()) continue;
        const auto rep = detect::evaluate_detector(result.model, items, ctx.config.detector.policy());
        r.scalars[std::string(name) + "_accuracy"] = rep.accuracy;
        r.scalars[std::string(name) + "_precision"] = rep.precision;
        r.scalars[std::string(name) + "_recall"] = rep.recall;
        r.scalars[std::string(name) + "_f1"] = rep.f1;
    }
    ctx.finish("train-detector", r, start);
    *ctx.out << fmt::format("detector saved; val accuracy {:.4f}, test accuracy {:.4f}\n", r.scalars["val_accuracy"],
                            r.scalars["test_accuracy"]);
    return kOk;
}

int cmd_train_purifier(const Context& ctx) {
    const auto start = std::chrono::steady_clock::now();
    const auto ds = load_dataset(ctx);
    const auto train = as_pairs(corpus::pairs_in(ds, corpus::Split::Train));
    const auto val = as_pairs(corpus::pairs_in(ds, corpus::Split::Val));
    const auto& pc = ctx.config.purifier;
    std::optional<detect::DetectorModel> detector;
    if (fs::exists(ctx.models_dir() / "detector.gshw")) detector = load_detector(ctx.models_dir() / "detector.gshw");
    if (pc.adversarial && pc.train.alpha_proxy > 0.0 && !detector) {
        throw DataError("train-purifier: the perceptual proxy needs models/detector.gshw (run train-detector first)");
    }
    auto r = ctx.new_report("train-purifier");
    auto t = std::chrono::steady_clock::now();
    const auto warm = purify::train_warmup(train, pc.train);
    r.timing["warmup_seconds"] = seconds_since(t);
    fs::create_directories(ctx.models_dir());
    save_purifier(ctx.models_dir() / "purifier_warmup.gshw", warm.model);
    for (std::size_t e = 0; e < warm.mse_curve.size(); ++e) {
        r.series.push_back({static_cast<double>(e + 1), "warmup_mse", warm.mse_curve[e]});
    }
    const detect::DetectorModel* det = detector ? &*detector : nullptr;
    purifier_scalars(r, "val_warmup_", warm.model, val, det);
    purify::PurifierModel final_model = warm.model;
    if (pc.adversarial) {
        t = std::chrono::steady_clock::now();
        const auto pre = purify::pretrain_discriminator(warm.model, train, pc.train);
        r.timing["disc_pretrain_seconds"] = seconds_since(t);
        r.scalars["disc_pretrain_accuracy"] = pre.accuracy;
        for (std::size_t e = 0; e < pre.loss_curve.size(); ++e) {
            r.series.push_back({static_cast<double>(e + 1), "disc_pretrain_loss", pre.loss_curve[e]});
        }
        t = std::chrono::steady_clock::now();
        const auto adv = purify::train_adversarial(warm.model, pre.discriminator, train,
                                                   det ? *det : detect::DetectorModel::create(0), pc.train);
        r.timing["adversarial_seconds"] = seconds_since(t);
        for (const auto& e : adv.curve) {
            const double x = e.epoch;
            r.series.push_back({x, "adv_disc_loss", e.disc_loss});
            r.series.push_back({x, "adv_gen_loss", e.gen_loss});
            r.series.push_back({x, "adv_mse", e.mse});
            r.series.push_back({x, "adv_proxy", e.proxy});
            r.series.push_back({x, "adv_adversarial", e.adv});
        }
        corpus::save_weights(ctx.models_dir() / "discriminator.gshw", nn::to_named(adv.discriminator.params));
        final_model = adv.model;
        purifier_scalars(r, "val_final_", final_model, val, det);
    }
    save_purifier(ctx.models_dir() / "purifier.gshw", final_model);
    ctx.finish("train-purifier", r, start);
    *ctx.out << "purifier saved to " << (ctx.models_dir() / "purifier.gshw").string() << "\n";
    return kOk;
}

int cmd_defend(const Context& ctx, const std::string& input, const std::string& output) {
    const auto start = std::chrono::steady_clock::now();
    if (input.empty() || output.empty()) throw UsageError("defend needs --input and --output");
    const auto scenes = load_scenes(ctx.path(input));
    const auto detector = load_detector(ctx.models_dir() / "detector.gshw");
    const auto purifier = load_purifier(ctx.models_dir() / "purifier.gshw");
    std::vector<corpus::Scene> out(scenes.size());
    std::vector<std::vector<pipeline::Decision>> decisions(scenes.size());
    pipeline::parallel_for(scenes.size(), ctx.jobs, [&](std::size_t s) {
        auto policy = ctx.config.detector.policy();
        policy.seed = Rng(policy.seed).split(s).next_u64();
        auto res = pipeline::remedy(scenes[s].views, detector, purifier, policy);
        out[s] = {scenes[s].id, std::move(res.images), scenes[s].provenance + " +remedy"};
        decisions[s] = std::move(res.decisions);
    });
    const fs::path dir = ctx.path(output);
    corpus::export_scenes(dir, out);
    std::string log;
    std::size_t flagged = 0, total = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        for (std::size_t v = 0; v < decisions[s].size(); ++v) {
            const auto& d = decisions[s][v];
            flagged += d.flagged;
            ++total;
            log += json{{"scene", scenes[s].id}, {"view", v}, {"probability", d.probability}, {"flagged", d.flagged},
                        {"purified", d.purified}}
                       .dump() +
                   "\n";
        }
    }
    corpus::write_atomic(dir / "decisions.jsonl", log);
    auto r = ctx.new_report("defend");
    r.scalars["images"] = static_cast<double>(total);
    r.scalars["flagged"] = static_cast<double>(flagged);
    ctx.finish("defend", r, start);
    *ctx.out << fmt::format("{} of {} images flagged and purified; output in {}\n", flagged, total, dir.string());
    return kOk;
}

corpus::Split parse_split(const std::string& name) {
    if (name == "train") return corpus::Split::Train;
    if (name == "val") return corpus::Split::Val;
    if (name == "test") return corpus::Split::Test;
    throw ConfigError("unknown split '" + name + "' (train, val or test)");
}

std::vector<pipeline::Scenario> parse_scenarios(const std::vector<std::string>& names) {
    std::vector<pipeline::Scenario> out;
    for (const auto& n : names) {
        bool found = false;
        for (const auto s : pipeline::kAllScenarios) {
            if (pipeline::to_string(s) == n) {
                out.push_back(s);
                found = true;
            }
        }
        if (!found) throw ConfigError("unknown scenario '" + n + "'");
    }
    return out;
}

int cmd_evaluate(const Context& ctx, const std::string& split_name, const std::vector<std::string>& scenario_names) {
    const auto start = std::chrono::steady_clock::now();
    const auto split = parse_split(split_name);
    auto scenarios = scenario_names.empty()
                         ? std::vector<pipeline::Scenario>(std::begin(pipeline::kAllScenarios), std::end(pipeline::kAllScenarios))
                         : parse_scenarios(scenario_names);
    const auto ds = load_dataset(ctx);
    std::optional<detect::DetectorModel> detector;
    std::optional<purify::PurifierModel> purifier;
    if (fs::exists(ctx.models_dir() / "detector.gshw")) detector = load_detector(ctx.models_dir() / "detector.gshw");
    if (fs::exists(ctx.models_dir() / "purifier.gshw")) purifier = load_purifier(ctx.models_dir() / "purifier.gshw");

    std::map<std::size_t, pipeline::SceneInputs> by_scene;
    for (const auto& pair : ds.pairs) {
        const auto& c = ds.items[pair.clean];
        if (c.split != split) continue;
        auto& scene = by_scene[c.scene];
        scene.id = fmt::format("scene_{:04d}", c.scene);
        scene.clean.push_back(c.image);
        scene.poisoned.push_back(ds.items[pair.poisoned].image);
    }
    if (by_scene.empty()) throw DataError("evaluate: no scenes in the " + split_name + " split");
    std::vector<pipeline::SceneInputs> scenes;
    for (auto& [_, s] : by_scene) scenes.push_back(std::move(s));

    pipeline::EvalConfig eval{ctx.config.victim, ctx.config.metrics.smooth_sigma, ctx.config.metrics.fit_views};
    pipeline::DefenseModels models{detector ? &*detector : nullptr, purifier ? &*purifier : nullptr,
                                   ctx.config.detector.policy()};
    std::vector<pipeline::SceneEvaluation> results(scenes.size());
    pipeline::parallel_for(scenes.size(), ctx.jobs, [&](std::size_t s) {
        auto m = models;
        m.policy.seed = Rng(models.policy.seed).split(s).next_u64();
        results[s] = pipeline::evaluate_scene(scenes[s], eval, m, scenarios);
    });

    auto r = ctx.new_report("evaluate");
    std::vector<metrics::MetricRow> rows;
    std::size_t flagged = 0, decided = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        rows.insert(rows.end(), results[s].rows.begin(), results[s].rows.end());
        for (const auto& [scenario, sec] : results[s].fit_seconds) r.timing["fit_seconds/" + scenes[s].id + "/" + scenario] = sec;
        for (const auto& d : results[s].decisions) {
            flagged += d.flagged;
            ++decided;
        }
    }
    if (decided > 0) r.scalars["remedied_flagged_fraction"] = static_cast<double>(flagged) / static_cast<double>(decided);
    r.metrics = metrics::aggregate(std::move(rows));
    if (detector) {
        const auto rep = detect::evaluate_detector(*detector, corpus::items_in(ds, split), ctx.config.detector.policy());
        r.scalars["detector_accuracy"] = rep.accuracy;
        r.scalars["detector_f1"] = rep.f1;
    }
    const auto pairs = as_pairs(corpus::pairs_in(ds, split));
    if (purifier) purifier_scalars(r, "purifier_", *purifier, pairs, detector ? &*detector : nullptr);
    if (fs::exists(ctx.models_dir() / "purifier_warmup.gshw")) {
        purifier_scalars(r, "warmup_", load_purifier(ctx.models_dir() / "purifier_warmup.gshw"), pairs,
                         detector ? &*detector : nullptr);
    }
    ctx.finish("evaluate", r, start);
    *ctx.out << fmt::format("{:<10} {:>10} {:>8} {:>7}\n", "scenario", "gaussians", "psnr", "ssim");
    for (const auto& s : r.metrics.summaries) {
        *ctx.out << fmt::format("{:<10} {:>10.1f} {:>8.2f} {:>7.4f}\n", s.scenario, s.median.at("gaussians"),
                                s.median.at("psnr"), s.median.at("ssim"));
    }
    return kOk;
}

int cmd_report(const Context& ctx, const std::vector<std::string>& inputs, const std::string& output) {
    if (inputs.empty()) throw UsageError("report needs at least one --inputs directory");
    std::vector<report::ExperimentReport> reports;
    for (const auto& in : inputs) {
        fs::path p = ctx.path(in);
        if (fs::is_directory(p)) p /= "report.jsonl";
        reports.push_back(report::read(p));
    }
    auto merged = report::merge(reports);
    merged.config = config::to_text(ctx.config);
    const fs::path dir = ctx.path(output);
    report::write(dir, merged);
    *ctx.out << fmt::format("merged {} reports ({} rows) into {}\n", reports.size(), merged.metrics.rows.size(),
                            dir.string());
    return kOk;
}

/// Splits "--section.key=value" overrides from the remaining arguments.
std::vector<std::pair<std::string, std::string>> take_overrides(std::vector<std::string>& args) {
    const auto keys = config::known_keys();
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> rest;
    for (const auto& a : args) {
        if (a.rfind("--", 0) == 0) {
            const auto eq = a.find('=');
            const auto key = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
            if (std::find(keys.begin(), keys.end(), key) != keys.end()) {
                if (eq == std::string::npos) throw UsageError("override --" + key + " needs the form --" + key + "=value");
                overrides.emplace_back(key, a.substr(eq + 1));
                continue;
            }
            if (key.find('.') != std::string::npos) throw ConfigError("unknown config key '" + key + "'");
        }
        rest.push_back(a);
    }
    args = std::move(rest);
    return overrides;
}

} // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    try {
        auto args = raw_args;
        const auto overrides = take_overrides(args);

        CLI::App app{"Poison-splat attack and detect-and-purify defense for 2D Gaussian splatting"};
        app.require_subcommand(1);
        std::string workdir = ".", config_path;
        int jobs = 1;
        app.add_option("--workdir", workdir, "Root for all relative paths");
        app.add_option("--config", config_path, "Config file (key = value with [sections])");
        app.add_option("--jobs", jobs, "Scene-level worker threads (results are deterministic only with 1)")
            ->check(CLI::PositiveNumber);
        app.footer("Config overrides: --section.key=value (e.g. --attack.epsilon=16/255). Exit codes: 0 ok, 1 usage, "
                   "2 config, 3 data, 4 numeric divergence.");

        std::string input, output, name, split = "test";
        std::vector<std::string> scenarios, inputs;
        auto* gen = app.add_subcommand("gen-corpus", "Generate the procedural clean corpus");
        gen->add_option("--output", output, "Output directory (default corpus/clean)");
        auto* atk = app.add_subcommand("attack", "Poison a directory of scenes");
        atk->add_option("--input", input, "Input scenes (default corpus/clean)");
        atk->add_option("--output", output, "Output directory (default corpus/poisoned)");
        auto* fit = app.add_subcommand("fit", "Fit the victim on every view of a directory of scenes");
        fit->add_option("--input", input, "Input scenes (default corpus/clean)");
        fit->add_option("--name", name, "Report name (default: input directory name)");
        auto* tdet = app.add_subcommand("train-detector", "Train the poison detector on corpus/clean + corpus/poisoned");
        auto* tpur = app.add_subcommand("train-purifier", "Train the purifier (warmup, then adversarial)");
        auto* def = app.add_subcommand("defend", "Detect and purify a directory of scenes");
        def->add_option("--input", input, "Input scenes")->required();
        def->add_option("--output", output, "Output directory")->required();
        auto* ev = app.add_subcommand("evaluate", "Fit the victim under each scenario and report metrics");
        ev->add_option("--split", split, "Scenes to evaluate: train, val or test");
        ev->add_option("--scenarios", scenarios, "Subset of clean,poisoned,smoothed,limited,remedied")->delimiter(',');
        auto* rep = app.add_subcommand("report", "Merge report directories");
        rep->add_option("--inputs", inputs, "Report directories or report.jsonl files")->required();
        std::string merged_output = "reports/merged";
        rep->add_option("--output", merged_output, "Output directory");

        std::vector<std::string> reversed(args.rbegin(), args.rend());
        try {
            app.parse(reversed);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return kOk;
        } catch (const CLI::ParseError& e) {
            err << "usage error: " << e.what() << "\n" << app.help();
            return kUsage;
        }

        Context ctx;
        ctx.workdir = workdir;
        ctx.jobs = jobs;
        ctx.out = &out;
        if (!config_path.empty()) ctx.config = config::load(ctx.path(config_path));
        config::apply_environment(ctx.config);
        for (const auto& [key, value] : overrides) config::set_value(ctx.config, key, value);
        ctx.config.derive_seeds();
        ctx.config.validate();

        if (gen->parsed()) return cmd_gen_corpus(ctx, output);
        if (atk->parsed()) return cmd_attack(ctx, input, output);
        if (fit->parsed()) return cmd_fit(ctx, input, name);
        if (tdet->parsed()) return cmd_train_detector(ctx);
        if (tpur->parsed()) return cmd_train_purifier(ctx);
        if (def->parsed()) return cmd_defend(ctx, input, output);
        if (ev->parsed()) return cmd_evaluate(ctx, split, scenarios);
        if (rep->parsed()) return cmd_report(ctx, inputs, merged_output);
        return kUsage;
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        static constexpr const char* kLabels[] = {"", "usage", "config", "data", "numeric"};
        err << kLabels[e.exit_code()] << " error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        err << "data error: " << e.what() << "\n";
        return kData;
    }
}

} // namespace gshield::cli

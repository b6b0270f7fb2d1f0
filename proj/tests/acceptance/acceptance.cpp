#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gshield/attack.hpp"
#include "gshield/config.hpp"
#include "gshield/corpus.hpp"
#include "gshield/detector.hpp"
#include "gshield/error.hpp"
#include "gshield/gan_math.hpp"
#include "gshield/metrics.hpp"
#include "gshield/numerics/grad_check.hpp"
#include "gshield/pipeline.hpp"
#include "gshield/purifier.hpp"
#include "gshield/report.hpp"
#include "gshield/splat2d.hpp"
#include "gshield/tv.hpp"

using namespace gshield;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Outcome {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
};

struct Suite {
    std::set<int> only;
    std::vector<Outcome> outcomes;
    report::ExperimentReport report;

    bool wants(int id) const { return only.empty() || only.contains(id); }
    bool wants_any(std::initializer_list<int> ids) const {
        return std::any_of(ids.begin(), ids.end(), [&](int id) { return wants(id); });
    }

    void record(int id, const std::string& name, bool passed, const std::string& detail) {
        outcomes.push_back({id, name, passed, detail});
        report.scalars[fmt::format("criterion_{:02d}_passed", id)] = passed ? 1.0 : 0.0;
        std::cout << fmt::format("{} {:2d} {}: {}", passed ? "PASS" : "FAIL", id, name, detail) << std::endl;
    }
};

void log(const std::string& message) { std::cerr << "  .. " << message << std::endl; }

template <class T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    BasicTensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

VarD cst(TensorD t) { return VarD::constant(std::move(t)); }

void randomize(BasicParamGraph<double>& params, const std::string& prefix, Rng& rng) {
    for (const auto& [key, var] : params.entries()) {
        if (key.rfind(prefix, 0) != 0) continue;
        auto& w = const_cast<VarD&>(var).mutable_value();
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(-0.2, 0.2);
    }
}

double mean_squared_deviation(std::span<const Image> a, std::span<const Image> b) {
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            const double d = static_cast<double>(a[i].data[k]) - b[i].data[k];
            total += d * d;
        }
        n += a[i].size();
    }
    return total / static_cast<double>(n);
}

struct PurifierStats {
    double psnr = 0.0;
    double gain = 0.0;
    double tv_ratio = 0.0;
    double proxy = 0.0;
};

PurifierStats purifier_stats(const purify::PurifierModel& model, const std::vector<purify::ImagePair>& pairs,
                             const detect::DetectorModel& detector) {
    std::vector<double> psnr, gain, tv_ratio, proxy;
    for (const auto& [poisoned, clean] : pairs) {
        const auto restored = model.purify(poisoned);
        psnr.push_back(metrics::psnr(restored, clean));
        gain.push_back(psnr.back() - metrics::psnr(poisoned, clean));
        tv_ratio.push_back(attack::tv_score(restored) / attack::tv_score(clean));
        proxy.push_back(purify::perceptual_proxy(detector, restored, clean));
    }
    return {metrics::median(psnr), metrics::median(gain), metrics::median(tv_ratio), metrics::median(proxy)};
}

// ---- criterion 9 ----

void check_math_oracles(Suite& suite, std::uint64_t seed) {
    const auto start = Clock::now();
    Rng rng(seed);
    std::size_t grid_ok = 0, identity_ok = 0, bound_ok = 0;
    double worst_identity = 0.0, worst_posterior = 0.0;
    constexpr int kTrials = 1000;
    for (int t = 0; t < kTrials; ++t) {
        const std::size_t n = 2 + rng.below(7);
        const auto pair = gan::random_pair(n, rng, t % 4 == 0 ? rng.below(n - 1) : 0);
        if (gan::grid_search_discriminator(pair).matches) ++grid_ok;
        const auto id = gan::gan_identity_check(pair, 1e-9);
        worst_identity = std::max(worst_identity, id.discrepancy);
        if (id.agrees) ++identity_ok;
        const auto joint = gan::random_joint(2 + rng.below(5), 2 + rng.below(5), rng);
        const auto q = gan::random_conditional(joint.nx, joint.ny, rng);
        const auto b = gan::ba_bound_check(joint, q, 1e-9);
        worst_posterior = std::max(worst_posterior, std::abs(b.posterior_gap));
        if (b.holds && b.tight) ++bound_ok;
    }
    const double secs = seconds_since(start);
    const bool ok = grid_ok == kTrials && identity_ok == kTrials && bound_ok == kTrials && secs < 60.0;
    suite.record(9, "math oracles", ok,
                 fmt::format("optimal discriminator {}/{}, GAN identity {}/{} (max err {:.1e}), "
                             "variational bound {}/{} (max posterior gap {:.1e}), {:.1f}s < 60s",
                             grid_ok, kTrials, identity_ok, kTrials, worst_identity, bound_ok, kTrials,
                             worst_posterior, secs));
}

// ---- criterion 10 ----

void check_gradients(Suite& suite, std::uint64_t seed) {
    Rng rng(seed);
    struct Case {
        std::string name;
        std::function<VarD(const std::vector<VarD>&)> fn;
        std::vector<std::pair<std::string, TensorD>> inputs;
    };
    const auto probe = random_tensor<double>({2, 3, 6, 6}, rng);
    const auto probe_conv = random_tensor<double>({1, 2, 6, 6}, rng);
    const auto target = random_tensor<double>({1, 3, 14, 13}, rng, 0, 1);
    const TensorD labels({4}, {1, 0, 1, 0});

    auto detector = detect::DetectorModel::create(seed + 1);
    auto det_params = nn::cast_params<double>(detector.params);
    randomize(det_params, "head", rng);
    const auto add = purify::PurifierModel::create(purify::SkipMode::Add, seed + 2);
    const auto concat = purify::PurifierModel::create(purify::SkipMode::Concat, seed + 3);
    const auto none = purify::PurifierModel::create(purify::SkipMode::None, seed + 4);
    auto add_params = nn::cast_params<double>(add.params);
    auto concat_params = nn::cast_params<double>(concat.params);
    auto none_params = nn::cast_params<double>(none.params);
    for (auto* p : {&add_params, &concat_params, &none_params}) randomize(*p, "dec1", rng);
    const auto disc = purify::Discriminator::create(seed + 5);
    auto disc_params = nn::cast_params<double>(disc.params);
    randomize(disc_params, "head", rng);

    splat::SplatScene scene;
    scene.width = scene.height = 8;
    scene.background = {0.3f, 0.3f, 0.3f};
    for (int g = 0; g < 3; ++g) {
        splat::Gaussian2D gs;
        gs.mu = {static_cast<float>(rng.uniform(1.5, 6.5)), static_cast<float>(rng.uniform(1.5, 6.5))};
        gs.log_scale = {static_cast<float>(rng.uniform(0.1, 0.8)), static_cast<float>(rng.uniform(0.1, 0.8))};
        gs.rotation = static_cast<float>(rng.uniform(-1.5, 1.5));
        gs.opacity_logit = static_cast<float>(rng.uniform(-0.5, 0.8));
        gs.color = {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                    static_cast<float>(rng.uniform())};
        gs.depth_key = static_cast<float>(g) * 0.3f;
        scene.gaussians.push_back(gs);
    }
    const auto keys = scene.depth_keys();
    const auto render_weights = random_tensor<double>({1, 3, 8, 8}, rng);

    const auto purifier_case = [&](const std::string& name, const BasicParamGraph<double>& params,
                                   purify::SkipMode skip) {
        return Case{name,
                    [&params, skip](const std::vector<VarD>& v) {
                        return ops::sum(purify::PurifierModel::forward(params, skip, v[0]));
                    },
                    {{"image", random_tensor<double>({1, 3, 16, 16}, rng, 0, 1)}}};
    };

    std::vector<Case> cases{
        {"conv2d",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::conv2d(v[0], v[1], v[2], 1, 1), cst(probe_conv))); },
         {{"x", random_tensor<double>({1, 3, 6, 6}, rng)}, {"w", random_tensor<double>({2, 3, 3, 3}, rng)},
          {"b", random_tensor<double>({2}, rng)}}},
        {"conv_transpose2d",
         [&](const std::vector<VarD>& v) {
             return ops::sum(ops::mul(ops::conv_transpose2d(v[0], v[1], v[2], 2, 1), cst(probe)));
         },
         {{"x", random_tensor<double>({2, 2, 3, 3}, rng)}, {"w", random_tensor<double>({2, 3, 4, 4}, rng)},
          {"b", random_tensor<double>({3}, rng)}}},
        {"dense",
         [](const std::vector<VarD>& v) {
             const auto y = ops::dense(v[0], v[1], v[2]);
             return ops::sum(ops::mul(y, y));
         },
         {{"x", random_tensor<double>({3, 4}, rng)}, {"w", random_tensor<double>({2, 4}, rng)},
          {"b", random_tensor<double>({2}, rng)}}},
        {"leaky_relu",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::leaky_relu(v[0], 0.2), cst(probe))); },
         {{"x", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"relu",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::relu(v[0]), cst(probe))); },
         {{"x", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"sigmoid",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::sigmoid(v[0]), cst(probe))); },
         {{"x", random_tensor<double>({2, 3, 6, 6}, rng, -4, 4)}}},
        {"global_avg_pool",
         [](const std::vector<VarD>& v) {
             const auto p = ops::global_avg_pool(v[0]);
             return ops::sum(ops::mul(p, p));
         },
         {{"x", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"concat_channels",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::concat_channels(v[0], v[1]), cst(probe))); },
         {{"a", random_tensor<double>({2, 1, 6, 6}, rng)}, {"b", random_tensor<double>({2, 2, 6, 6}, rng)}}},
        {"channel_normalize",
         [&](const std::vector<VarD>& v) { return ops::sum(ops::mul(ops::channel_normalize(v[0]), cst(probe))); },
         {{"x", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"mse", [](const std::vector<VarD>& v) { return ops::mse(v[0], v[1]); },
         {{"a", random_tensor<double>({2, 3, 6, 6}, rng)}, {"b", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"l1", [](const std::vector<VarD>& v) { return ops::l1(v[0], v[1]); },
         {{"a", random_tensor<double>({2, 3, 6, 6}, rng)}, {"b", random_tensor<double>({2, 3, 6, 6}, rng)}}},
        {"bce", [&](const std::vector<VarD>& v) { return ops::bce(v[0], labels); },
         {{"p", random_tensor<double>({4}, rng, 0.1, 0.9)}}},
        {"bce_with_logits", [&](const std::vector<VarD>& v) { return ops::bce_with_logits(v[0], labels); },
         {{"x", random_tensor<double>({4}, rng, -4, 4)}}},
        {"ssim", [&](const std::vector<VarD>& v) { return metrics::ssim_var(v[0], cst(target)); },
         {{"a", random_tensor<double>({1, 3, 14, 13}, rng, 0, 1)}}},
        {"reconstruction_loss",
         [&](const std::vector<VarD>& v) { return splat::reconstruction_loss_var(v[0], cst(target), 0.2); },
         {{"rendered", random_tensor<double>({1, 3, 14, 13}, rng, 0, 1)}}},
        {"render",
         [&](const std::vector<VarD>& v) {
             return ops::sum(ops::mul(splat::render_var(v[0], keys, 8, 8, scene.background), cst(render_weights)));
         },
         {{"packed", scene.packed().cast<double>()}}},
        {"detector",
         [&](const std::vector<VarD>& v) { return ops::sum(detect::DetectorModel::forward(det_params, v[0]).logits); },
         {{"image", random_tensor<double>({1, 3, 16, 16}, rng, 0, 1)}}},
        {"perceptual_proxy",
         [&](const std::vector<VarD>& v) { return purify::perceptual_proxy_var(det_params, v[0], v[1]); },
         {{"a", random_tensor<double>({1, 3, 16, 16}, rng, 0, 1)}, {"b", random_tensor<double>({1, 3, 16, 16}, rng, 0, 1)}}},
        purifier_case("purifier(add)", add_params, purify::SkipMode::Add),
        purifier_case("purifier(concat)", concat_params, purify::SkipMode::Concat),
        purifier_case("purifier(none)", none_params, purify::SkipMode::None),
        {"discriminator",
         [&](const std::vector<VarD>& v) { return ops::sum(purify::Discriminator::logits(disc_params, v[0], v[1])); },
         {{"image", random_tensor<double>({1, 3, 16, 16}, rng, 0, 1)}, {"latent", random_tensor<double>({1, 128, 1, 1}, rng)}}},
    };

    std::size_t passed = 0;
    double worst = 0.0;
    std::vector<std::string> failures;
    for (const auto& c : cases) {
        const auto rep = grad_check(c.fn, c.inputs, 1e-3);
        worst = std::max(worst, rep.max_rel_error);
        if (rep.passed) ++passed;
        else failures.push_back(fmt::format("{} ({:.1e})", c.name, rep.max_rel_error));
    }

    int tv_passed = 0;
    double tv_worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        Image img(6, 7);
        for (auto& v : img.data) v = static_cast<float>(rng.uniform());
        const Image grad = attack::tv_gradient(img);
        double num = 0, den_a = 0, den_n = 0;
        for (std::size_t k = 0; k < img.size(); ++k) {
            Image plus = img, minus = img;
            plus.data[k] += 1e-4f;
            minus.data[k] -= 1e-4f;
            const double h = (static_cast<double>(plus.data[k]) - minus.data[k]) / 2.0;
            const double fd = (attack::tv_score(plus) - attack::tv_score(minus)) / (2.0 * h);
            num += (fd - grad.data[k]) * (fd - grad.data[k]);
            den_a += static_cast<double>(grad.data[k]) * grad.data[k];
            den_n += fd * fd;
        }
        const double rel = std::sqrt(num) / (std::sqrt(den_a) + std::sqrt(den_n));
        tv_worst = std::max(tv_worst, rel);
        if (rel < 1e-3) ++tv_passed;
    }

    int adjoint_passed = 0, adjoint_trials = 0;
    double adjoint_worst = 0.0;
    struct Geometry { int h, k, stride, pad; };
    for (int t = 0; t < 20; ++t) {
        for (const Geometry g : {Geometry{5, 3, 2, 1}, {8, 4, 2, 1}, {6, 3, 1, 1}, {9, 3, 3, 0}, {16, 16, 16, 0}}) {
            const auto cin = 1 + static_cast<std::int64_t>(rng.below(3));
            const auto cout = 1 + static_cast<std::int64_t>(rng.below(3));
            const auto x = random_tensor<float>({1, cin, g.h, g.h}, rng);
            const auto w = random_tensor<float>({cout, cin, g.k, g.k}, rng);
            const auto cx = ops::conv2d(Var::constant(x), Var::constant(w), Var(), g.stride, g.pad).value();
            const auto y = random_tensor<float>(cx.shape(), rng);
            const auto ty = ops::conv_transpose2d(Var::constant(y), Var::constant(w), Var(), g.stride, g.pad).value();
            double lhs = 0.0, rhs = 0.0;
            for (std::int64_t i = 0; i < cx.numel(); ++i) lhs += static_cast<double>(cx[i]) * y[i];
            for (std::int64_t i = 0; i < x.numel(); ++i) rhs += static_cast<double>(x[i]) * ty[i];
            const double rel = std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs));
            adjoint_worst = std::max(adjoint_worst, rel);
            if (rel < 1e-4) ++adjoint_passed;
            ++adjoint_trials;
        }
    }

    const bool ok = passed == cases.size() && tv_passed == 5 && adjoint_passed == adjoint_trials;
    std::string detail = fmt::format("{}/{} graph checks (max rel {:.1e}), TV gradient {}/5 (max {:.1e}), "
                                     "transpose adjointness {}/{} (max {:.1e})",
                                     passed, cases.size(), worst, tv_passed, tv_worst, adjoint_passed, adjoint_trials,
                                     adjoint_worst);
    for (const auto& f : failures) detail += "; failed " + f;
    suite.record(10, "finite-difference checks", ok, detail);
}

// ---- criteria 1 and 2 ----

void check_attack(Suite& suite, const config::RunConfig& cfg, const splat::VictimConfig& victim, int jobs) {
    attack::AttackConfig ac = cfg.attack;
    ac.epsilon = 26.0 / 255.0;
    ac.iterations = 100;
    ac.adaptive_beta = 0.0;
    ac.proxy_logging = false;
    const auto scenes = corpus::generate_corpus(10, 4, cfg.corpus.size, Rng(cfg.corpus.seed).split(1001).next_u64());

    std::vector<pipeline::SceneInputs> inputs;
    std::size_t images = 0, increased = 0;
    double worst_linf = 0.0, worst_tv_ratio = INFINITY;
    auto start = Clock::now();
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        auto scene_config = ac;
        scene_config.seed = Rng(ac.seed).split(s).next_u64();
        const auto result = attack::poison(scenes[s].views, scene_config);
        for (std::size_t v = 0; v < result.poisoned.size(); ++v) {
            const Image* c = &scenes[s].views[v];
            const Image* p = &result.poisoned[v];
            worst_linf = std::max(worst_linf, attack::max_abs_deviation({p, 1}, {c, 1}));
            const double before = attack::tv_score(*c), after = attack::tv_score(*p);
            worst_tv_ratio = std::min(worst_tv_ratio, after / before);
            if (after > before) ++increased;
            ++images;
        }
        inputs.push_back({scenes[s].id, scenes[s].views, result.poisoned});
    }
    const double attack_seconds = seconds_since(start);
    suite.report.timing["attack_10x4_seconds"] = attack_seconds;
    suite.record(1, "attack soundness",
                 worst_linf <= ac.epsilon && increased == images && attack_seconds < 120.0,
                 fmt::format("max |poisoned - clean| = {:.9f} <= eps = {:.9f}, TV increased on {}/{} images "
                             "(smallest ratio {:.2f}), {:.1f}s < 120s",
                             worst_linf, ac.epsilon, increased, images, worst_tv_ratio, attack_seconds));
    if (!suite.wants(2)) return;

    start = Clock::now();
    pipeline::EvalConfig ec;
    ec.victim = victim;
    const pipeline::Scenario scenarios[] = {pipeline::Scenario::Clean, pipeline::Scenario::Poisoned};
    std::vector<std::vector<metrics::MetricRow>> rows(inputs.size());
    pipeline::parallel_for(inputs.size(), jobs, [&](std::size_t s) {
        rows[s] = pipeline::evaluate_scene(inputs[s], ec, {}, scenarios).rows;
    });
    std::vector<metrics::MetricRow> all;
    for (auto& r : rows)
        for (auto& row : r) all.push_back({"inflation/" + row.scene, row.scenario, row.values});
    const auto agg = metrics::aggregate(all);
    const double ratio = agg.find("poisoned")->median_ratio_to_clean.at("gaussians");
    const double secs = seconds_since(start);
    suite.report.timing["inflation_seconds"] = secs;
    suite.report.scalars["inflation_gaussian_ratio_median"] = ratio;
    suite.record(2, "Gaussian inflation", ratio >= 1.5 && secs < 600.0,
                 fmt::format("median poisoned/clean Gaussian count {:.2f} >= 1.5 over {} scenes x 4 views, "
                             "{:.0f}s < 600s",
                             ratio, inputs.size(), secs));
}

// ---- criteria 3 to 8, 11, 12 ----

struct Trained {
    detect::DetectorModel detector = detect::DetectorModel::create(0);
    purify::PurifierModel warmup = purify::PurifierModel::create(purify::SkipMode::Add, 0);
    purify::PurifierModel final_model = purify::PurifierModel::create(purify::SkipMode::Add, 0);
};

void run_defense(Suite& suite, const config::RunConfig& cfg, int jobs) {
    auto start = Clock::now();
    const auto scenes = corpus::generate_corpus(cfg.corpus.scenes, cfg.corpus.views, cfg.corpus.size, cfg.corpus.seed);
    auto ds = corpus::make_pairs(scenes, cfg.attack);
    corpus::assign_splits(ds, cfg.corpus.val_fraction, cfg.corpus.test_fraction, cfg.corpus.split_seed);
    const auto train_pairs_raw = corpus::pairs_in(ds, corpus::Split::Train);
    const auto test_pairs_raw = corpus::pairs_in(ds, corpus::Split::Test);
    const std::vector<purify::ImagePair> train(train_pairs_raw.begin(), train_pairs_raw.end());
    const std::vector<purify::ImagePair> test(test_pairs_raw.begin(), test_pairs_raw.end());
    suite.report.timing["corpus_seconds"] = seconds_since(start);
    log(fmt::format("corpus: {} scenes, {} train pairs, {} test pairs ({:.0f}s)", scenes.size(), train.size(),
                    test.size(), seconds_since(start)));

    Trained m;
    start = Clock::now();
    m.detector = detect::train_detector(corpus::items_in(ds, corpus::Split::Train), cfg.detector.train).model;
    const double det_seconds = seconds_since(start);
    suite.report.timing["detector_seconds"] = det_seconds;
    const auto policy = cfg.detector.policy();
    if (suite.wants(3)) {
        const auto rep = detect::evaluate_detector(m.detector, corpus::items_in(ds, corpus::Split::Test), policy);
        suite.report.scalars["detector_accuracy"] = rep.accuracy;
        suite.report.scalars["detector_f1"] = rep.f1;
        suite.record(3, "detector", rep.accuracy >= 0.9 && rep.f1 >= 0.9 && det_seconds < 900.0,
                     fmt::format("held-out accuracy {:.4f}, F1 {:.4f} (both >= 0.90) on {} images, "
                                 "training {:.0f}s < 900s",
                                 rep.accuracy, rep.f1, rep.total(), det_seconds));
    }
    if (!suite.wants_any({4, 5, 6, 7, 8, 11, 12})) return;

    const auto& pc = cfg.purifier.train;
    start = Clock::now();
    m.warmup = purify::train_warmup(train, pc).model;
    suite.report.timing["warmup_seconds"] = seconds_since(start);
    log(fmt::format("warmup trained ({:.0f}s)", seconds_since(start)));
    m.final_model = m.warmup;
    if (cfg.purifier.adversarial) {
        start = Clock::now();
        const auto pre = purify::pretrain_discriminator(m.warmup, train, pc);
        suite.report.timing["disc_pretrain_seconds"] = seconds_since(start);
        log(fmt::format("discriminator pretrained, accuracy {:.3f} ({:.0f}s)", pre.accuracy, seconds_since(start)));
        start = Clock::now();
        m.final_model = purify::train_adversarial(m.warmup, pre.discriminator, train, m.detector, pc).model;
        suite.report.timing["adversarial_seconds"] = seconds_since(start);
        log(fmt::format("adversarial stage done ({:.0f}s)", seconds_since(start)));
    }

    const auto warm_stats = purifier_stats(m.warmup, test, m.detector);
    const auto final_stats = purifier_stats(m.final_model, test, m.detector);
    for (const auto& [prefix, s] : {std::pair{"warmup_", warm_stats}, std::pair{"final_", final_stats}}) {
        suite.report.scalars[std::string(prefix) + "psnr_median"] = s.psnr;
        suite.report.scalars[std::string(prefix) + "psnr_gain_median"] = s.gain;
        suite.report.scalars[std::string(prefix) + "tv_ratio_median"] = s.tv_ratio;
        suite.report.scalars[std::string(prefix) + "proxy_median"] = s.proxy;
    }
    if (suite.wants(4)) {
        suite.record(4, "purifier utility", final_stats.gain >= 2.0 && final_stats.tv_ratio <= 1.2,
                     fmt::format("median PSNR gain {:+.2f} dB >= +2 dB (purified {:.2f} dB), "
                                 "median TV(purified)/TV(clean) {:.3f} <= 1.2 on {} held-out pairs "
                                 "(warmup stage: {:+.2f} dB, {:.3f})",
                                 final_stats.gain, final_stats.psnr, final_stats.tv_ratio, test.size(),
                                 warm_stats.gain, warm_stats.tv_ratio));
    }
    if (suite.wants(7)) {
        suite.record(7, "adversarial fine-tuning", final_stats.proxy < warm_stats.proxy,
                     fmt::format("median held-out perceptual proxy {:.6f} (fine-tuned) < {:.6f} (warmup)",
                                 final_stats.proxy, warm_stats.proxy));
    }

    if (suite.wants(6)) {
        std::vector<Image> clean_test;
        for (const auto& [poisoned, clean] : test) clean_test.push_back(clean);
        const auto out = pipeline::remedy(clean_test, m.detector, m.final_model, policy);
        std::size_t passed_through = 0, identical = 0;
        for (std::size_t i = 0; i < clean_test.size(); ++i) {
            if (out.decisions[i].flagged) continue;
            ++passed_through;
            if (out.images[i] == clean_test[i]) ++identical;
        }
        suite.record(6, "pass-through", passed_through > 0 && identical == passed_through,
                     fmt::format("{}/{} correctly classified clean images returned bit-identical "
                                 "({} of {} clean images flagged)",
                                 identical, passed_through, clean_test.size() - passed_through, clean_test.size()));
    }

    if (suite.wants(8)) {
        start = Clock::now();
        std::map<std::string, double> psnr;
        psnr["add"] = warm_stats.psnr;
        for (const auto skip : {purify::SkipMode::Concat, purify::SkipMode::None}) {
            auto variant = pc;
            variant.skip = skip;
            const auto model = purify::train_warmup(train, variant).model;
            psnr[purify::to_string(skip)] = purifier_stats(model, test, m.detector).psnr;
            log(fmt::format("ablation {} trained", purify::to_string(skip)));
        }
        suite.report.timing["ablation_seconds"] = seconds_since(start);
        for (const auto& [k, v] : psnr) suite.report.scalars["ablation_psnr_" + k] = v;
        const double g1 = psnr["add"] - psnr["concat"], g2 = psnr["concat"] - psnr["none"];
        suite.record(8, "skip-connection ablation", g1 >= 0.3 && g2 >= 0.3,
                     fmt::format("median held-out PSNR add {:.2f} / concat {:.2f} / none {:.2f} dB, "
                                 "gaps {:+.2f} and {:+.2f} dB (each >= 0.3)",
                                 psnr["add"], psnr["concat"], psnr["none"], g1, g2));
    }

    if (suite.wants(11)) {
        start = Clock::now();
        std::vector<double> deviation;
        std::vector<purify::ImagePair> beta20;
        for (const double beta : {1.0, 5.0, 20.0}) {
            auto ac = cfg.attack;
            ac.adaptive_beta = beta;
            std::vector<Image> all_clean, all_poisoned;
            for (std::size_t s = 0; s < scenes.size(); ++s) {
                bool in_test = false;
                for (const auto& item : ds.items) in_test |= item.scene == s && item.split == corpus::Split::Test;
                if (!in_test) continue;
                ac.seed = Rng(cfg.attack.seed).split(s).next_u64();
                const auto r = attack::poison_adaptive(scenes[s].views, ac);
                all_clean.insert(all_clean.end(), scenes[s].views.begin(), scenes[s].views.end());
                all_poisoned.insert(all_poisoned.end(), r.poisoned.begin(), r.poisoned.end());
            }
            deviation.push_back(mean_squared_deviation(all_poisoned, all_clean));
            if (beta == 20.0)
                for (std::size_t i = 0; i < all_clean.size(); ++i) beta20.emplace_back(all_poisoned[i], all_clean[i]);
        }
        const auto stats = purifier_stats(m.final_model, beta20, m.detector);
        suite.report.timing["adaptive_seconds"] = seconds_since(start);
        suite.report.scalars["adaptive_beta20_gain_median"] = stats.gain;
        const bool monotone = deviation[1] <= deviation[0] && deviation[2] <= deviation[1];
        suite.record(11, "adaptive attack", monotone && stats.gain >= 1.0,
                     fmt::format("mean squared deviation {:.3e} / {:.3e} / {:.3e} for beta 1 / 5 / 20 "
                                 "(non-increasing), purifier gain against beta 20 {:+.2f} dB >= +1 dB",
                                 deviation[0], deviation[1], deviation[2], stats.gain));
    }

    if (!suite.wants_any({5, 12})) return;
    start = Clock::now();
    std::vector<pipeline::SceneInputs> inputs;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        pipeline::SceneInputs in{scenes[s].id, {}, {}};
        for (const auto& p : ds.pairs) {
            const auto& c = ds.items[p.clean];
            if (c.scene != s || c.split != corpus::Split::Test) continue;
            in.clean.push_back(c.image);
            in.poisoned.push_back(ds.items[p.poisoned].image);
        }
        if (!in.clean.empty()) inputs.push_back(std::move(in));
    }
    pipeline::EvalConfig ec;
    ec.victim = cfg.victim;
    ec.smooth_sigma = cfg.metrics.smooth_sigma;
    ec.fit_views = cfg.metrics.fit_views;
    const pipeline::DefenseModels models{&m.detector, &m.final_model, policy};
    std::vector<std::vector<metrics::MetricRow>> rows(inputs.size());
    pipeline::parallel_for(inputs.size(), jobs, [&](std::size_t s) {
        rows[s] = pipeline::evaluate_scene(inputs[s], ec, models).rows;
    });
    std::vector<metrics::MetricRow> all;
    for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
    suite.report.metrics = metrics::aggregate(all);
    suite.report.timing["evaluation_seconds"] = seconds_since(start);
    log(fmt::format("victim evaluation on {} scenes ({:.0f}s)", inputs.size(), seconds_since(start)));
    const auto& agg = suite.report.metrics;
    if (suite.wants(5)) {
        const double ratio = agg.find("remedied")->median_ratio_to_clean.at("gaussians");
        const double poisoned = agg.find("poisoned")->median_ratio_to_clean.at("gaussians");
        suite.record(5, "remedied Gaussian count", ratio <= 1.3 && ratio >= 1.0 / 1.3,
                     fmt::format("median remedied/clean Gaussian count {:.3f} within 1.3x (poisoned {:.3f}) "
                                 "over {} scenes",
                                 ratio, poisoned, inputs.size()));
    }
    if (suite.wants(5)) {
        start = Clock::now();
        std::vector<double> ratios;
        std::size_t bypassed = 0, fitted = 0;
        for (std::size_t s = 0; s < inputs.size(); ++s) {
            const std::size_t n = ec.fit_views > 0 ? std::min<std::size_t>(ec.fit_views, inputs[s].clean.size())
                                                   : inputs[s].clean.size();
            pipeline::SceneInputs mixed{inputs[s].id, {}, {}};
            std::vector<bool> bypass;
            for (std::size_t v = 0; v < n; ++v) {
                mixed.clean.push_back(inputs[s].clean[v]);
                mixed.poisoned.push_back(inputs[s].poisoned[v]);
                bypass.push_back(fitted++ % 10 == 0);
                bypassed += bypass.back();
            }
            auto remedied = pipeline::remedy(mixed.poisoned, m.detector, m.final_model, policy, bypass);
            mixed.poisoned = std::move(remedied.images);
            const pipeline::Scenario only_input[] = {pipeline::Scenario::Poisoned};
            auto eval = ec;
            eval.fit_views = 0;
            const double count = pipeline::evaluate_scene(mixed, eval, {}, only_input).rows.front().values.at("gaussians");
            for (const auto& row : rows[s])
                if (row.scenario == "clean") ratios.push_back(count / row.values.at("gaussians"));
        }
        const double ratio = metrics::median(ratios);
        suite.report.scalars["mixed_gaussian_ratio_median"] = ratio;
        suite.report.timing["mixed_seconds"] = seconds_since(start);
        std::cout << fmt::format("INFO    mixed stress test: {}/{} poisoned images bypass purification, median "
                                 "Gaussian count {:.3f}x clean (target within 1.3x)",
                                 bypassed, fitted, ratio)
                  << std::endl;
    }
    if (suite.wants(12)) {
        const double remedied = agg.find("remedied")->median.at("psnr");
        const double smoothed = agg.find("smoothed")->median.at("psnr");
        const double limited = agg.find("limited")->median.at("psnr");
        suite.record(12, "defense comparison", remedied > smoothed && remedied > limited,
                     fmt::format("median render PSNR remedied {:.2f} dB > smoothed {:.2f} dB and > limited {:.2f} dB",
                                 remedied, smoothed, limited));
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Runs the acceptance criteria and prints one PASS/FAIL line per criterion."};
    std::string config_path;
    std::string report_dir;
    std::vector<int> only;
    int jobs = 1;
    app.add_option("--config", config_path, "Run configuration (INI)")->check(CLI::ExistingFile);
    app.add_option("--report", report_dir, "Directory for the report files");
    app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 12));
    app.add_option("--jobs", jobs, "Worker threads for victim fits")->check(CLI::PositiveNumber);
    CLI11_PARSE(app, argc, argv);

    Suite suite;
    suite.only = {only.begin(), only.end()};
    const auto start = Clock::now();
    try {
        auto cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
        config::apply_environment(cfg);
        cfg.derive_seeds();
        cfg.validate();
        suite.report.run_id = fmt::format("acceptance-{}", cfg.seed);
        suite.report.command = "acceptance";
        suite.report.config = config::to_text(cfg);

        if (suite.wants(9)) check_math_oracles(suite, Rng(cfg.seed).split(9).next_u64());
        if (suite.wants(10)) check_gradients(suite, Rng(cfg.seed).split(10).next_u64());
        if (suite.wants_any({1, 2})) check_attack(suite, cfg, cfg.victim, jobs);
        if (suite.wants_any({3, 4, 5, 6, 7, 8, 11, 12})) run_defense(suite, cfg, jobs);
    } catch (const Error& e) {
        std::cerr << "acceptance: " << e.what() << "\n";
        return e.exit_code();
    }

    std::sort(suite.outcomes.begin(), suite.outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
    const auto passed = std::count_if(suite.outcomes.begin(), suite.outcomes.end(), [](const Outcome& o) { return o.passed; });
    suite.report.timing["total_seconds"] = seconds_since(start);
    suite.report.exit_status = passed == static_cast<long>(suite.outcomes.size()) ? 0 : 1;
    std::cout << fmt::format("\n{}/{} criteria passed in {:.0f}s\n", passed, suite.outcomes.size(),
                             seconds_since(start));
    for (const auto& o : suite.outcomes) std::cout << fmt::format("  {:2d} {:<26} {}\n", o.id, o.name, o.passed ? "PASS" : "FAIL");
    if (!report_dir.empty()) {
        report::write(report_dir, suite.report);
        std::cout << "report written to " << report_dir << "\n";
    }
    return suite.report.exit_status;
}

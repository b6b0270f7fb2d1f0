#include "gshield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace gshield::metrics {

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("psnr: image shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.size());
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * k * k / (sigma * sigma));
        taps[static_cast<std::size_t>(k + radius)] = w;
        total += w;
    }
    for (auto& w : taps) w /= total;
    return taps;
}

namespace {

// Valid-mode separable correlation of one plane: (h, w) -> (h - n + 1, w - n + 1).
template <class T>
std::vector<T> filter_valid(const T* plane, int h, int w, const std::vector<double>& taps) {
    const int n = static_cast<int>(taps.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<T> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            T acc = 0;
            for (int k = 0; k < n; ++k) acc += static_cast<T>(taps[k]) * plane[y * w + x + k];
            rows[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    std::vector<T> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            T acc = 0;
            for (int k = 0; k < n; ++k) acc += static_cast<T>(taps[k]) * rows[static_cast<std::size_t>(y + k) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = acc;
        }
    return out;
}

// Adjoint of filter_valid: (h - n + 1, w - n + 1) -> (h, w).
template <class T>
std::vector<T> filter_valid_adjoint(const std::vector<T>& in, int h, int w, const std::vector<double>& taps) {
    const int n = static_cast<int>(taps.size());
    const int oh = h - n + 1, ow = w - n + 1;
    std::vector<T> rows(static_cast<std::size_t>(h) * ow, T(0));
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int k = 0; k < n; ++k)
                rows[static_cast<std::size_t>(y + k) * ow + x] += static_cast<T>(taps[k]) * in[static_cast<std::size_t>(y) * ow + x];
    std::vector<T> out(static_cast<std::size_t>(h) * w, T(0));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x)
            for (int k = 0; k < n; ++k)
                out[static_cast<std::size_t>(y) * w + x + k] += static_cast<T>(taps[k]) * rows[static_cast<std::size_t>(y) * ow + x];
    return out;
}

struct SsimPlane {
    double mean = 0.0;
    // Derivatives of the plane's summed SSIM map w.r.t. (mu_a, E[a^2], E[ab]).
    std::vector<double> d_mu, d_sq, d_cross;
};

template <class T>
SsimPlane ssim_plane(const T* a, const T* b, int h, int w, const SsimParams& p, bool with_grad) {
    const auto taps = gaussian_kernel(p.sigma, p.window / 2);
    std::vector<double> av(a, a + static_cast<std::size_t>(h) * w), bv(b, b + static_cast<std::size_t>(h) * w);
    std::vector<double> aa(av.size()), bb(av.size()), ab(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) {
        aa[i] = av[i] * av[i];
        bb[i] = bv[i] * bv[i];
        ab[i] = av[i] * bv[i];
    }
    const auto mu_a = filter_valid(av.data(), h, w, taps);
    const auto mu_b = filter_valid(bv.data(), h, w, taps);
    const auto e_aa = filter_valid(aa.data(), h, w, taps);
    const auto e_bb = filter_valid(bb.data(), h, w, taps);
    const auto e_ab = filter_valid(ab.data(), h, w, taps);
    const double c1 = std::pow(p.k1 * p.data_range, 2), c2 = std::pow(p.k2 * p.data_range, 2);

    SsimPlane out;
    if (with_grad) {
        out.d_mu.resize(mu_a.size());
        out.d_sq.resize(mu_a.size());
        out.d_cross.resize(mu_a.size());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
        const double a1 = 2 * ma * mb + c1, a2 = 2 * cov + c2;
        const double b1 = ma * ma + mb * mb + c1, b2 = va + vb + c2;
        const double s = (a1 * a2) / (b1 * b2);
        total += s;
        if (with_grad) {
            out.d_mu[i] = (2 * mb * a2 - 2 * mb * a1) / (b1 * b2) - s * (2 * ma / b1 - 2 * ma / b2);
            out.d_sq[i] = -s / b2;
            out.d_cross[i] = 2 * a1 / (b1 * b2);
        }
    }
    out.mean = total / static_cast<double>(mu_a.size());
    return out;
}

void check_ssim_shape(std::int64_t h, std::int64_t w, const SsimParams& p) {
    if (h < p.window || w < p.window) {
        throw DataError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                        std::to_string(p.window) + "x" + std::to_string(p.window) + " window");
    }
}

} // namespace

double ssim(const Image& a, const Image& b, const SsimParams& params) {
    if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
    check_ssim_shape(a.height, a.width, params);
    const std::size_t plane = static_cast<std::size_t>(a.height) * a.width;
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        total += ssim_plane(a.data.data() + c * plane, b.data.data() + c * plane, a.height, a.width, params, false).mean;
    }
    return total / a.channels;
}

double dssim(const Image& a, const Image& b, const SsimParams& params) {
    return (1.0 - ssim(a, b, params)) / 2.0;
}

template <class T>
BasicVar<T> ssim_var(const BasicVar<T>& a, const BasicVar<T>& b, const SsimParams& params) {
    if (a.shape() != b.shape()) throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.value().rank() != 4) throw ShapeError("ssim: expected [B, C, H, W], got " + shape_str(a.shape()));
    const auto& s = a.shape();
    const int h = static_cast<int>(s[2]), w = static_cast<int>(s[3]);
    check_ssim_shape(h, w, params);
    const std::int64_t planes = s[0] * s[1];
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const bool track = a.requires_grad();

    auto grads = std::make_shared<std::vector<std::vector<double>>>();
    double total = 0.0;
    const auto taps = gaussian_kernel(params.sigma, params.window / 2);
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* ap = a.value().ptr() + p * plane;
        const T* bp = b.value().ptr() + p * plane;
        auto sp = ssim_plane(ap, bp, h, w, params, track);
        total += sp.mean;
        if (track) {
            // d(mean over all planes)/d(a) for this plane.
            const double scale = 1.0 / (static_cast<double>(sp.d_mu.size()) * static_cast<double>(planes));
            for (auto* v : {&sp.d_mu, &sp.d_sq, &sp.d_cross})
                for (auto& x : *v) x *= scale;
            const auto g_mu = filter_valid_adjoint(sp.d_mu, h, w, taps);
            const auto g_sq = filter_valid_adjoint(sp.d_sq, h, w, taps);
            const auto g_cross = filter_valid_adjoint(sp.d_cross, h, w, taps);
            std::vector<double> g(plane);
            for (std::size_t i = 0; i < plane; ++i) {
                g[i] = g_mu[i] + 2.0 * static_cast<double>(ap[i]) * g_sq[i] + static_cast<double>(bp[i]) * g_cross[i];
            }
            grads->push_back(std::move(g));
        }
    }
    const T value = static_cast<T>(total / static_cast<double>(planes));
    return make_op<T>(BasicTensor<T>({1}, {value}), {a}, [grads, plane](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const double upstream = self.grad[0];
        for (std::size_t p = 0; p < grads->size(); ++p)
            for (std::size_t i = 0; i < plane; ++i) g[static_cast<std::int64_t>(p * plane + i)] += static_cast<T>(upstream * (*grads)[p][i]);
    });
}

template BasicVar<float> ssim_var(const BasicVar<float>&, const BasicVar<float>&, const SsimParams&);
template BasicVar<double> ssim_var(const BasicVar<double>&, const BasicVar<double>&, const SsimParams&);

Image gaussian_smooth(const Image& image, double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian_smooth: sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    const auto taps = gaussian_kernel(sigma, radius);
    Image tmp(image.height, image.width, image.channels);
    Image out(image.height, image.width, image.channels);
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<std::size_t>(k + radius)] * image.at(c, y, reflect_index(x + k, image.width));
                tmp.at(c, y, x) = static_cast<float>(acc);
            }
        for (int y = 0; y < image.height; ++y)
            for (int x = 0; x < image.width; ++x) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    acc += taps[static_cast<std::size_t>(k + radius)] * tmp.at(c, reflect_index(y + k, image.height), x);
                out.at(c, y, x) = static_cast<float>(acc);
            }
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) throw DataError("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

const ScenarioSummary* MetricsReport::find(const std::string& scenario) const {
    for (const auto& s : summaries)
        if (s.scenario == scenario) return &s;
    return nullptr;
}

MetricsReport aggregate(std::vector<MetricRow> rows) {
    if (rows.empty()) throw DataError("aggregate: no report rows");
    std::vector<std::string> order;
    std::map<std::string, std::set<std::string>> schema;
    for (const auto& r : rows) {
        std::set<std::string> keys;
        for (const auto& [k, v] : r.values) keys.insert(k);
        const auto [it, inserted] = schema.emplace(r.scenario, keys);
        if (inserted) order.push_back(r.scenario);
        else if (it->second != keys) {
            throw DataError("aggregate: row for scene '" + r.scene + "' has a different column set from other '" +
                            r.scenario + "' rows");
        }
    }

    MetricsReport report;
    for (const auto& scenario : order) {
        ScenarioSummary s;
        s.scenario = scenario;
        for (const auto& key : schema[scenario]) {
            std::vector<double> vals;
            for (const auto& r : rows)
                if (r.scenario == scenario) vals.push_back(r.values.at(key));
            double total = 0.0;
            for (double v : vals) total += v;
            s.count = vals.size();
            s.mean[key] = total / static_cast<double>(vals.size());
            s.median[key] = median(vals);
        }
        report.summaries.push_back(std::move(s));
    }

    if (const ScenarioSummary* clean = report.find("clean")) {
        const ScenarioSummary clean_copy = *clean;
        for (auto& s : report.summaries) {
            for (const auto& key : schema[s.scenario]) {
                if (!clean_copy.mean.contains(key)) continue;
                s.ratio_to_clean[key] = s.mean[key] / clean_copy.mean.at(key);
                std::vector<double> ratios;
                for (const auto& r : rows) {
                    if (r.scenario != s.scenario) continue;
                    for (const auto& c : rows) {
                        if (c.scenario == "clean" && c.scene == r.scene) {
                            ratios.push_back(r.values.at(key) / c.values.at(key));
                            break;
                        }
                    }
                }
                if (!ratios.empty()) s.median_ratio_to_clean[key] = median(ratios);
            }
        }
    }
    report.rows = std::move(rows);
    return report;
}

} // namespace gshield::metrics

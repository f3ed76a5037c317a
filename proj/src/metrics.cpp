#include "nighthaze/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "nighthaze/error.hpp"
#include "nighthaze/image_io.hpp"

namespace nighthaze {

namespace {

std::vector<double> gaussian_taps(int window, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(window));
    const int r = window / 2;
    double s = 0;
    for (int i = 0; i < window; ++i) {
        g[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
        s += g[i];
    }
    for (double& v : g) v /= s;
    return g;
}

// Valid-region separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += g[i] * src[static_cast<std::size_t>(y) * w + x + i];
            rows[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < k; ++i) s += g[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

}  // namespace

double psnr(const ImageRGB& pred, const ImageRGB& gt) {
    if (!pred.same_size(gt)) throw ShapeError("psnr: image sizes differ");
    if (pred.empty()) throw ShapeError("psnr: empty image");
    double sse = 0;
    for (std::size_t i = 0; i < pred.values().size(); ++i) {
        const double d = pred.values()[i] - gt.values()[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(pred.values().size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageRGB& pred, const ImageRGB& gt, const SsimParams& p) {
    if (!pred.same_size(gt)) throw ShapeError("ssim: image sizes differ");
    if (pred.empty()) throw ShapeError("ssim: empty image");
    if (p.window < 1 || p.window % 2 == 0) throw ParameterError("ssim window must be odd");
    const int h = pred.height(), w = pred.width();
    int window = p.window;
    while (window > std::min(h, w)) window -= 2;
    if (window < 1) window = 1;
    const auto g = gaussian_taps(window, p.sigma);
    const double c1 = (p.k1 * 1.0) * (p.k1 * 1.0), c2 = (p.k2 * 1.0) * (p.k2 * 1.0);
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    double total = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
        for (std::size_t i = 0; i < plane; ++i) {
            x[i] = pred.values()[i * 3 + c];
            y[i] = gt.values()[i * 3 + c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
        const auto sxx = filter_valid(xx, h, w, g), syy = filter_valid(yy, h, w, g), sxy = filter_valid(xy, h, w, g);
        double s = 0;
        for (std::size_t i = 0; i < mx.size(); ++i) {
            const double vx = sxx[i] - mx[i] * mx[i];
            const double vy = syy[i] - my[i] * my[i];
            const double cov = sxy[i] - mx[i] * my[i];
            s += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
        }
        total += s / static_cast<double>(mx.size());
    }
    return total / 3.0;
}

std::string format_metric(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

void EvaluationResult::write_table(std::ostream& os) const {
    for (const auto& r : rows) os << r.sample_id << '\t' << format_metric(r.psnr) << '\t' << format_metric(r.ssim) << '\n';
    os << "#mean\t" << format_metric(mean_psnr) << '\t' << format_metric(mean_ssim) << '\n';
}

EvaluationResult evaluate(const DatasetManifest& manifest, const Dehazer& method, std::optional<Split> split) {
    std::vector<ManifestRecord> records;
    for (const auto& r : manifest.samples)
        if (!split || r.split == *split) records.push_back(r);
    if (records.empty()) throw DataError("evaluate: no samples in the selected split");

    EvaluationResult result;
    for (const auto& r : records) {
        if (!r.clean) throw DataError("evaluate: sample " + r.hazy.string() + " has no clean reference");
        ImageRGB hazy, clean;
        try {
            hazy = load_image(r.hazy);
            clean = load_image(*r.clean);
        } catch (const NotFoundError& e) {
            throw DataError(std::string("evaluate: ") + e.what());
        }
        const ImageRGB out = method(hazy);
        result.rows.push_back({r.hazy.stem().string(), psnr(out, clean), ssim(out, clean)});
    }
    std::sort(result.rows.begin(), result.rows.end(),
              [](const MetricRow& a, const MetricRow& b) { return a.sample_id < b.sample_id; });
    for (const auto& row : result.rows) {
        result.mean_psnr += row.psnr;
        result.mean_ssim += row.ssim;
    }
    result.mean_psnr /= static_cast<double>(result.rows.size());
    result.mean_ssim /= static_cast<double>(result.rows.size());
    return result;
}

}  // namespace nighthaze

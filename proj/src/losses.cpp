#include "nighthaze/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "nighthaze/error.hpp"
#include "nighthaze/network.hpp"
#include "nighthaze/ops.hpp"

namespace nighthaze::nn {

namespace {

constexpr double kDenominatorFloor = 1e-3;

void require_batch(const Tensor& t, const char* what) {
    if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError(std::string(what) + ": expected [N,3,H,W], got " + shape_string(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

// Value of t~ at one pixel together with the channel it was taken from and
// d t~ / d J_c for that channel (zero when clamped or floored).
struct PixelTransmission {
    double t;
    int channel;
    double dt_dj;
};

PixelTransmission pixel_transmission(const std::array<double, 3>& hazy, const std::array<double, 3>& pred, const Rgb& a,
                                     double t_min) {
    std::array<double, 3> r{}, dr{};
    for (int c = 0; c < 3; ++c) {
        const double num = hazy[c] - a[c];
        double den = pred[c] - a[c];
        bool floored = false;
        if (std::abs(den) < kDenominatorFloor) {
            den = den < 0 ? -kDenominatorFloor : kDenominatorFloor;
            floored = true;
        }
        r[c] = num / den;
        dr[c] = floored ? 0.0 : -num / (den * den);
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int i, int j) { return r[i] < r[j] || (r[i] == r[j] && i < j); });
    const int c = order[1];
    const double v = r[c];
    if (v <= t_min) return {t_min, c, 0.0};
    if (v >= 1.0) return {1.0, c, 0.0};
    return {v, c, dr[c]};
}

// Channel-mean luminance of each image averaged over k x k cells:
// [N, H/k, W/k] flattened, cropped to whole cells.
struct PooledLuma {
    int n, rows, cols, k;
    std::vector<double> v;
};

PooledLuma pooled_luma(const Tensor& x, int k) {
    const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
    PooledLuma p{n, h / k, w / k, k, {}};
    p.v.assign(static_cast<std::size_t>(n) * p.rows * p.cols, 0.0);
    const double norm = 1.0 / (3.0 * k * k);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < p.rows * k; ++y)
                for (int xx = 0; xx < p.cols * k; ++xx)
                    p.v[(static_cast<std::size_t>(i) * p.rows + y / k) * p.cols + xx / k] +=
                        norm * x.values()[(static_cast<std::size_t>(i) * 3 + c) * plane + static_cast<std::size_t>(y) * w + xx];
    return p;
}

// Spreads a gradient on pooled luminance cells back onto the pixels of x.
std::vector<double> unpool_luma_grad(const PooledLuma& p, const std::vector<double>& g, int h, int w) {
    std::vector<double> out(static_cast<std::size_t>(p.n) * 3 * h * w, 0.0);
    const double norm = 1.0 / (3.0 * p.k * p.k);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int i = 0; i < p.n; ++i)
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < p.rows * p.k; ++y)
                for (int xx = 0; xx < p.cols * p.k; ++xx)
                    out[(static_cast<std::size_t>(i) * 3 + c) * plane + static_cast<std::size_t>(y) * w + xx] =
                        norm * g[(static_cast<std::size_t>(i) * p.rows + y / p.k) * p.cols + xx / p.k];
    return out;
}

}  // namespace

FeatureExtractor FeatureExtractor::identity() {
    FeatureExtractor fx;
    std::vector<double> w(9, 0.0);
    for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
    fx.stages_.push_back({Tensor::from({3, 3, 1, 1}, w), Tensor::zeros({3}), 1, false});
    return fx;
}

FeatureExtractor FeatureExtractor::random(std::uint64_t seed, int width) {
    if (width < 1) throw ParameterError("feature extractor width must be >= 1");
    std::mt19937_64 rng(seed);
    auto make = [&rng](int cin, int cout) {
        // He-style scaling keeps activations from vanishing through ReLU.
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * 9)));
        std::vector<double> w(static_cast<std::size_t>(cout) * cin * 9);
        for (double& v : w) v = dist(rng);
        return Tensor::from({cout, cin, 3, 3}, std::move(w));
    };
    FeatureExtractor fx;
    fx.stages_.push_back({make(3, width), Tensor::zeros({width}), 1, true});
    fx.stages_.push_back({make(width, 2 * width), Tensor::zeros({2 * width}), 2, true});
    return fx;
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& x, const std::vector<int>& layers) const {
    for (int l : layers)
        if (l < 0 || l >= stages()) {
            throw ParameterError("feature layer " + std::to_string(l) + " out of range [0," + std::to_string(stages()) + ")");
        }
    std::vector<Tensor> all;
    Tensor f = x;
    const int last = layers.empty() ? -1 : *std::max_element(layers.begin(), layers.end());
    for (int s = 0; s <= last; ++s) {
        f = conv2d(f, stages_[s].weight, stages_[s].bias, stages_[s].stride, stages_[s].weight.dim(3) / 2);
        if (stages_[s].relu) f = relu(f);
        all.push_back(f);
    }
    std::vector<Tensor> out;
    for (int l : layers) out.push_back(all[l]);
    return out;
}

void SupervisedLossConfig::validate() const {
    if (!(lambda_per >= 0)) throw ParameterError("lambda_per must be >= 0");
    if (!(psnr_eps > 0)) throw ParameterError("psnr_eps must be > 0");
}

FeatureExtractor SupervisedLossConfig::make_extractor() const {
    return identity_extractor ? FeatureExtractor::identity() : FeatureExtractor::random(extractor_seed);
}

void UnsupervisedLossConfig::validate() const {
    for (double w : {lambda_dcp, lambda_bcp, lambda_spa, lambda_exp, lambda_col, dcp_inner_lambda})
        if (!(w >= 0)) throw ParameterError("unsupervised loss weights must be >= 0");
    if (!(exposure_level > 0 && exposure_level < 1)) throw ParameterError("exposure_level must lie in (0,1)");
    if (spa_region < 1 || exp_region < 1) throw ParameterError("loss regions must be >= 1 pixel");
    if (prior_patch < 1 || prior_patch % 2 == 0) throw ParameterError("prior_patch must be odd");
    if (transmission_side < 3) throw ParameterError("transmission_side must be >= 3");
}

double LossReport::term(const std::string& name) const {
    for (const auto& t : terms)
        if (t.name == name) return t.value;
    throw ParameterError("no loss term named '" + name + "'");
}

double LossReport::recomposed() const {
    double s = 0;
    for (const auto& t : terms) s += t.weight * t.value;
    return s;
}

std::string LossReport::log_fields() const {
    std::ostringstream os;
    os.precision(10);
    for (const auto& t : terms) os << t.name << '=' << t.value << '\t';
    os << "total=" << total;
    return os.str();
}

Tensor psnr_loss(const Tensor& pred, const Tensor& gt, double eps) {
    require_same(pred, gt, "psnr_loss");
    if (pred.rank() < 1 || pred.numel() == 0) throw ShapeError("psnr_loss: empty input");
    if (!(eps > 0)) throw ParameterError("psnr_loss: eps must be > 0");
    const int n = pred.dim(0);
    const std::size_t per = pred.numel() / static_cast<std::size_t>(n);
    const double k = 10.0 / std::numbers::ln10;
    double value = 0;
    std::vector<double> grad(pred.numel(), 0.0);
    for (int i = 0; i < n; ++i) {
        double sse = 0;
        for (std::size_t j = 0; j < per; ++j) {
            const double d = pred.values()[i * per + j] - gt.values()[i * per + j];
            sse += d * d;
        }
        const double mse = sse / static_cast<double>(per);
        value += 10.0 * std::log10(std::max(mse, eps)) / n;
        if (mse > eps) {
            const double scale = k / mse * 2.0 / static_cast<double>(per) / n;
            for (std::size_t j = 0; j < per; ++j)
                grad[i * per + j] = scale * (pred.values()[i * per + j] - gt.values()[i * per + j]);
        }
    }
    return custom_scalar(pred, value, std::move(grad));
}

Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FeatureExtractor& extractor,
                       const std::vector<int>& layers) {
    require_same(pred, gt, "perceptual_loss");
    if (layers.empty()) throw ParameterError("perceptual_loss: no feature layers selected");
    const auto fp = extractor.features(pred, layers);
    std::vector<Tensor> fg;
    {
        NoGradGuard guard;
        fg = extractor.features(gt.detach(), layers);
    }
    std::vector<Tensor> terms;
    std::vector<double> weights;
    for (std::size_t j = 0; j < fp.size(); ++j) {
        terms.push_back(l1_distance(fp[j], fg[j]));
        weights.push_back(1.0 / static_cast<double>(fp[j].numel()));
    }
    return weighted_sum(terms, weights);
}

TransmissionContext prepare_transmission_context(const Tensor& hazy, const UnsupervisedLossConfig& cfg,
                                                 bool with_laplacian) {
    require_batch(hazy, "prepare_transmission_context");
    cfg.validate();
    TransmissionContext ctx;
    const int h = hazy.dim(2), w = hazy.dim(3);
    ctx.factor = std::max(1, (std::max(h, w) + cfg.transmission_side - 1) / cfg.transmission_side);
    ctx.height = h / ctx.factor * ctx.factor;
    ctx.width = w / ctx.factor * ctx.factor;
    NoGradGuard guard;
    const Tensor small = avg_pool2d(crop_top_left(hazy.detach(), ctx.height, ctx.width), ctx.factor);
    ctx.hazy = tensor_to_images(small, false);
    for (const auto& img : ctx.hazy) {
        const AtmosphericLight a = estimate_atmospheric_light(img, cfg.prior_patch);
        ctx.airlight.push_back(a);
        ctx.t_dcp.push_back(dcp_transmission(img, a, cfg.prior_patch, cfg.omega, ctx.t_min));
        ctx.t_bcp.push_back(bcp_transmission(img, a, cfg.prior_patch, ctx.t_min));
        if (with_laplacian) ctx.laplacian.push_back(build_matting_laplacian(img));
    }
    return ctx;
}

ImageGray model_transmission(const ImageRGB& hazy, const ImageRGB& pred, const Rgb& a, double t_min) {
    if (!hazy.same_size(pred)) throw DimensionError("model_transmission: size mismatch");
    ImageGray t(hazy.height(), hazy.width());
    for (int y = 0; y < hazy.height(); ++y)
        for (int x = 0; x < hazy.width(); ++x)
            t.at(y, x) = pixel_transmission(pixel(hazy, y, x), pixel(pred, y, x), a, t_min).t;
    return t;
}

namespace {

// Reduces pred to the context resolution (differentiably) and evaluates t~
// with its per-pixel derivative for every image.
struct ReducedPrediction {
    Tensor small;
    std::vector<std::vector<PixelTransmission>> t;
};

ReducedPrediction reduce_prediction(const Tensor& pred, const TransmissionContext& ctx) {
    require_batch(pred, "transmission loss");
    if (static_cast<std::size_t>(pred.dim(0)) != ctx.hazy.size()) throw ShapeError("transmission loss: batch size differs from context");
    ReducedPrediction r;
    r.small = avg_pool2d(crop_top_left(pred, ctx.height, ctx.width), ctx.factor);
    const int h = r.small.dim(2), w = r.small.dim(3);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < ctx.hazy.size(); ++i) {
        const auto& img = ctx.hazy[i];
        if (img.height() != h || img.width() != w) throw ShapeError("transmission loss: prediction size differs from context");
        std::vector<PixelTransmission> row(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            std::array<double, 3> hz{}, pr{};
            for (int c = 0; c < 3; ++c) {
                hz[c] = img.data()[p * 3 + c];
                pr[c] = r.small.values()[(i * 3 + c) * plane + p];
            }
            row[p] = pixel_transmission(hz, pr, ctx.airlight[i].a, ctx.t_min);
        }
        r.t.push_back(std::move(row));
    }
    return r;
}

}  // namespace

Tensor dcp_loss(const Tensor& pred, const TransmissionContext& ctx, double inner_lambda) {
    if (ctx.laplacian.size() != ctx.hazy.size()) throw ParameterError("dcp_loss: context was prepared without Laplacians");
    const ReducedPrediction r = reduce_prediction(pred, ctx);
    const std::size_t n = ctx.hazy.size();
    const std::size_t plane = r.t.empty() ? 0 : r.t[0].size();
    double value = 0;
    std::vector<double> grad(r.small.numel(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd t(static_cast<Eigen::Index>(plane));
        for (std::size_t p = 0; p < plane; ++p) t[static_cast<Eigen::Index>(p)] = r.t[i][p].t;
        const Eigen::VectorXd lt = ctx.laplacian[i].matrix * t;
        double penalty = 0;
        for (std::size_t p = 0; p < plane; ++p) {
            const double d = r.t[i][p].t - ctx.t_dcp[i].data()[p];
            penalty += d * d;
        }
        value += (t.dot(lt) + inner_lambda * penalty) / static_cast<double>(n);
        for (std::size_t p = 0; p < plane; ++p) {
            const auto& px = r.t[i][p];
            const double de_dt = 2.0 * lt[static_cast<Eigen::Index>(p)] + 2.0 * inner_lambda * (px.t - ctx.t_dcp[i].data()[p]);
            grad[(i * 3 + px.channel) * plane + p] += de_dt * px.dt_dj / static_cast<double>(n);
        }
    }
    return custom_scalar(r.small, value, std::move(grad));
}

Tensor bcp_loss(const Tensor& pred, const TransmissionContext& ctx) {
    const ReducedPrediction r = reduce_prediction(pred, ctx);
    const std::size_t n = ctx.hazy.size();
    const std::size_t plane = r.t.empty() ? 0 : r.t[0].size();
    const double norm = 1.0 / static_cast<double>(n * plane);
    double value = 0;
    std::vector<double> grad(r.small.numel(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < plane; ++p) {
            const auto& px = r.t[i][p];
            const double d = px.t - ctx.t_bcp[i].data()[p];
            value += std::abs(d) * norm;
            const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            grad[(i * 3 + px.channel) * plane + p] += sg * px.dt_dj * norm;
        }
    return custom_scalar(r.small, value, std::move(grad));
}

ZeroReferenceLosses spa_exp_col_losses(const Tensor& hazy, const Tensor& pred, const UnsupervisedLossConfig& cfg) {
    require_batch(pred, "spa_exp_col_losses");
    require_same(hazy, pred, "spa_exp_col_losses");
    const int n = pred.dim(0), h = pred.dim(2), w = pred.dim(3);
    if (cfg.spa_region > std::min(h, w) || cfg.exp_region > std::min(h, w)) {
        throw ParameterError("loss region larger than the image");
    }
    ZeroReferenceLosses out;

    {  // spatial consistency on pooled luminance, 4-neighbourhoods inside the grid
        const PooledLuma yp = pooled_luma(pred, cfg.spa_region);
        const PooledLuma yi = pooled_luma(hazy, cfg.spa_region);
        const std::size_t cells = yp.v.size();
        std::vector<double> g(cells, 0.0);
        double value = 0;
        constexpr int dy[4] = {0, 0, -1, 1}, dx[4] = {-1, 1, 0, 0};
        for (int i = 0; i < n; ++i)
            for (int y = 0; y < yp.rows; ++y)
                for (int x = 0; x < yp.cols; ++x) {
                    const std::size_t a = (static_cast<std::size_t>(i) * yp.rows + y) * yp.cols + x;
                    for (int k = 0; k < 4; ++k) {
                        const int ny = y + dy[k], nx = x + dx[k];
                        if (ny < 0 || ny >= yp.rows || nx < 0 || nx >= yp.cols) continue;
                        const std::size_t b = (static_cast<std::size_t>(i) * yp.rows + ny) * yp.cols + nx;
                        const double d = yp.v[a] - yp.v[b];
                        const double diff = std::abs(d) - std::abs(yi.v[a] - yi.v[b]);
                        value += diff * diff / static_cast<double>(cells);
                        const double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                        const double gd = 2.0 * diff * sg / static_cast<double>(cells);
                        g[a] += gd;
                        g[b] -= gd;
                    }
                }
        out.spa = custom_scalar(pred, value, unpool_luma_grad(yp, g, h, w));
    }
    {  // exposure control
        const PooledLuma yp = pooled_luma(pred, cfg.exp_region);
        const std::size_t cells = yp.v.size();
        std::vector<double> g(cells);
        double value = 0;
        for (std::size_t c = 0; c < cells; ++c) {
            const double d = yp.v[c] - cfg.exposure_level;
            value += std::abs(d) / static_cast<double>(cells);
            g[c] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / static_cast<double>(cells);
        }
        out.exp = custom_scalar(pred, value, unpool_luma_grad(yp, g, h, w));
    }
    {  // color constancy on per-image channel means
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        std::vector<double> grad(pred.numel());
        double value = 0;
        for (int i = 0; i < n; ++i) {
            std::array<double, 3> m{};
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (std::size_t p = 0; p < plane; ++p) s += pred.values()[(static_cast<std::size_t>(i) * 3 + c) * plane + p];
                m[c] = s / static_cast<double>(plane);
            }
            std::array<double, 3> dm{};
            constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
            for (const auto& pq : pairs) {
                const double d = m[pq[0]] - m[pq[1]];
                value += d * d / n;
                dm[pq[0]] += 2.0 * d / n;
                dm[pq[1]] -= 2.0 * d / n;
            }
            for (int c = 0; c < 3; ++c)
                for (std::size_t p = 0; p < plane; ++p)
                    grad[(static_cast<std::size_t>(i) * 3 + c) * plane + p] = dm[c] / static_cast<double>(plane);
        }
        out.col = custom_scalar(pred, value, std::move(grad));
    }
    return out;
}

namespace {

LossReport assemble(std::vector<std::pair<std::string, Tensor>> parts, const std::vector<double>& weights) {
    LossReport report;
    std::vector<Tensor> scalars;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        report.terms.push_back({parts[i].first, weights[i], parts[i].second.item()});
        scalars.push_back(parts[i].second);
    }
    report.total_tensor = weighted_sum(scalars, weights);
    report.total = report.total_tensor.item();
    return report;
}

}  // namespace

LossReport supervised_total(const Tensor& pred, const Tensor& gt, const SupervisedLossConfig& cfg,
                            const FeatureExtractor& extractor) {
    cfg.validate();
    std::vector<std::pair<std::string, Tensor>> parts{{"psnr", psnr_loss(pred, gt, cfg.psnr_eps)}};
    std::vector<double> weights{1.0};
    if (cfg.lambda_per > 0) {
        parts.emplace_back("per", perceptual_loss(pred, gt, extractor, cfg.feature_layers));
        weights.push_back(cfg.lambda_per);
    } else {
        parts.emplace_back("per", Tensor::zeros({1}));
        weights.push_back(0.0);
    }
    return assemble(std::move(parts), weights);
}

LossReport unsupervised_total(const Tensor& hazy, const Tensor& pred, const UnsupervisedLossConfig& cfg,
                              const TransmissionContext& ctx) {
    cfg.validate();
    const auto zr = spa_exp_col_losses(hazy, pred, cfg);
    std::vector<std::pair<std::string, Tensor>> parts{
        {"dcp", cfg.lambda_dcp > 0 ? dcp_loss(pred, ctx, cfg.dcp_inner_lambda) : Tensor::zeros({1})},
        {"bcp", cfg.lambda_bcp > 0 ? bcp_loss(pred, ctx) : Tensor::zeros({1})},
        {"spa", zr.spa},
        {"exp", zr.exp},
        {"col", zr.col},
    };
    return assemble(std::move(parts), {cfg.lambda_dcp, cfg.lambda_bcp, cfg.lambda_spa, cfg.lambda_exp, cfg.lambda_col});
}

}  // namespace nighthaze::nn

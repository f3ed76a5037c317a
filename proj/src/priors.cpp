#include "nighthaze/priors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nighthaze/error.hpp"

namespace nighthaze {

namespace {

void require_odd_patch(int patch) {
    if (patch < 1 || patch % 2 == 0) {
        throw ParameterError("window size must be odd and >= 1, got " + std::to_string(patch));
    }
}

// Separable sliding extremum; edge replication never changes a min/max, so
// the window is simply truncated at the borders.
template <typename Pick>
ImageGray extremum_filter(const ImageGray& src, int patch, Pick pick) {
    require_odd_patch(patch);
    const int r = patch / 2;
    const int h = src.height();
    const int w = src.width();
    ImageGray rows(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = src.at(y, x);
            for (int dx = std::max(0, x - r); dx <= std::min(w - 1, x + r); ++dx) v = pick(v, src.at(y, dx));
            rows.at(y, x) = v;
        }
    }
    ImageGray out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = rows.at(y, x);
            for (int dy = std::max(0, y - r); dy <= std::min(h - 1, y + r); ++dy) v = pick(v, rows.at(dy, x));
            out.at(y, x) = v;
        }
    }
    return out;
}

}  // namespace

double AtmosphericLight::max_component() const { return std::max({a[0], a[1], a[2]}); }

ImageGray min_filter(const ImageGray& src, int patch) {
    return extremum_filter(src, patch, [](double a, double b) { return std::min(a, b); });
}

ImageGray max_filter(const ImageGray& src, int patch) {
    return extremum_filter(src, patch, [](double a, double b) { return std::max(a, b); });
}

ImageGray dark_channel(const ImageRGB& img, int patch) { return min_filter(channel_min(img), patch); }

ImageGray bright_channel(const ImageRGB& img, int patch) { return max_filter(channel_max(img), patch); }

PriorMaps compute_priors(const ImageRGB& img, int patch) {
    return PriorMaps{dark_channel(img, patch), bright_channel(img, patch), patch};
}

AtmosphericLight estimate_atmospheric_light(const ImageRGB& img, int patch, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ParameterError("atmospheric light fraction must lie in (0,1]");
    }
    const ImageGray dark = dark_channel(img, patch);
    const std::size_t n = dark.pixel_count();
    const auto count = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9)), 1, n);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto d = dark.data();
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(),
                      [&](std::size_t i, std::size_t j) { return d[i] > d[j] || (d[i] == d[j] && i < j); });

    AtmosphericLight light{{0.0, 0.0, 0.0}};
    auto src = img.data();
    for (std::size_t k = 0; k < count; ++k) {
        for (int c = 0; c < 3; ++c) light.a[c] += src[3 * order[k] + c];
    }
    for (double& v : light.a) v = std::clamp(v / static_cast<double>(count), 0.0, 1.0);
    return light;
}

ImageGray dcp_transmission(const ImageRGB& img, const AtmosphericLight& a, int patch, double omega,
                           double t_min) {
    if (!(omega > 0.0 && omega <= 1.0)) throw ParameterError("omega must lie in (0,1]");
    for (double v : a.a) {
        if (!(v > 1e-6)) throw NumericError("atmospheric light component is zero");
    }
    ImageRGB normalized = img;
    auto px = normalized.data();
    for (std::size_t i = 0; i < px.size(); ++i) px[i] /= a.a[i % 3];
    ImageGray t = dark_channel(normalized, patch);
    for (double& v : t.data()) v = std::clamp(1.0 - omega * v, t_min, 1.0);
    return t;
}

ImageGray bcp_transmission(const ImageRGB& img, const AtmosphericLight& a, int patch, double t_min) {
    ImageGray t = bright_channel(img, patch);
    const double airlight = a.max_component();
    if (airlight >= 1.0 - 1e-6) {
        std::fill(t.data().begin(), t.data().end(), 1.0);
        return t;
    }
    for (double& v : t.data()) v = std::clamp((v - airlight) / (1.0 - airlight), t_min, 1.0);
    return t;
}

double MattingLaplacian::quadratic_form(std::span<const double> t) const {
    if (static_cast<int>(t.size()) != n()) throw DimensionError("quadratic form size mismatch");
    Eigen::Map<const Eigen::VectorXd> v(t.data(), static_cast<Eigen::Index>(t.size()));
    return v.dot(matrix * v);
}

MattingLaplacian build_matting_laplacian(const ImageRGB& img, int window, double epsilon, int max_pixels) {
    require_odd_patch(window);
    if (static_cast<long long>(img.height()) * img.width() > max_pixels) {
        throw ResourceError("matting Laplacian limited to " + std::to_string(max_pixels) + " pixels, image has " +
                            std::to_string(img.height() * img.width()));
    }
    const int h = img.height();
    const int w = img.width();
    const int r = window / 2;
    const int wsize = window * window;
    const int span = 2 * window - 1;  // neighbour offsets reachable through one window
    const int reach = window - 1;

    // acc[i * span^2 + k] accumulates L(i, j) for neighbour offset k, upper
    // triangle only (j >= i); mirrored on assembly so symmetry is exact.
    std::vector<double> acc(static_cast<std::size_t>(h) * w * span * span, 0.0);
    auto offset_slot = [&](int dy, int dx) { return (dy + reach) * span + (dx + reach); };

    std::vector<Eigen::Vector3d> dev(static_cast<std::size_t>(wsize));
    std::vector<int> idx(static_cast<std::size_t>(wsize));
    for (int cy = r; cy < h - r; ++cy) {
        for (int cx = r; cx < w - r; ++cx) {
            Eigen::Vector3d mean = Eigen::Vector3d::Zero();
            int k = 0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx, ++k) {
                    const int y = cy + dy, x = cx + dx;
                    idx[k] = y * w + x;
                    dev[k] = Eigen::Vector3d(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
                    mean += dev[k];
                }
            }
            mean /= wsize;
            Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
            for (auto& d : dev) {
                d -= mean;
                cov += d * d.transpose();
            }
            cov /= wsize;
            cov += (epsilon / wsize) * Eigen::Matrix3d::Identity();
            Eigen::Matrix3d inv = cov.inverse();
            inv = 0.5 * (inv + inv.transpose());

            for (int a = 0; a < wsize; ++a) {
                const Eigen::Vector3d ma = inv * dev[a];
                for (int b = a; b < wsize; ++b) {
                    const double value = (a == b ? 1.0 : 0.0) - (1.0 + ma.dot(dev[b])) / wsize;
                    int i = idx[a], j = idx[b];
                    if (j < i) std::swap(i, j);
                    const int dy = j / w - i / w;
                    const int dx = j % w - i % w;
                    acc[static_cast<std::size_t>(i) * span * span + offset_slot(dy, dx)] += value;
                }
            }
        }
    }

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(acc.size());
    for (int i = 0; i < h * w; ++i) {
        const int iy = i / w, ix = i % w;
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                const double v = acc[static_cast<std::size_t>(i) * span * span + offset_slot(dy, dx)];
                if (v == 0.0) continue;
                const int j = (iy + dy) * w + (ix + dx);
                triplets.emplace_back(i, j, v);
                if (j != i) triplets.emplace_back(j, i, v);
            }
        }
    }

    MattingLaplacian L;
    L.height = h;
    L.width = w;
    L.window = window;
    L.epsilon = epsilon;
    L.matrix.resize(h * w, h * w);
    L.matrix.setFromTriplets(triplets.begin(), triplets.end());
    return L;
}

ImageGray box_mean(const ImageGray& src, int radius) {
    const int h = src.height(), w = src.width();
    std::vector<double> integral(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    auto I = [&](int y, int x) -> double& { return integral[static_cast<std::size_t>(y) * (w + 1) + x]; };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) I(y + 1, x + 1) = src.at(y, x) + I(y, x + 1) + I(y + 1, x) - I(y, x);
    }
    ImageGray out(h, w);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - radius), y1 = std::min(h, y + radius + 1);
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - radius), x1 = std::min(w, x + radius + 1);
            const double sum = I(y1, x1) - I(y0, x1) - I(y1, x0) + I(y0, x0);
            out.at(y, x) = sum / ((y1 - y0) * (x1 - x0));
        }
    }
    return out;
}

ImageGray guided_filter(const ImageRGB& guide, const ImageGray& src, int radius, double eps) {
    if (!guide.same_size(src)) throw DimensionError("guided_filter: guide and source differ in size");
    if (radius < 0) throw ParameterError("guided_filter radius must be >= 0");
    const int h = src.height(), w = src.width();

    auto plane = [&](auto fn) {
        ImageGray p(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) p.at(y, x) = fn(y, x);
        return box_mean(p, radius);
    };
    std::array<ImageGray, 3> mean_i, cov_ip;
    for (int c = 0; c < 3; ++c) {
        mean_i[c] = plane([&](int y, int x) { return guide.at(y, x, c); });
        cov_ip[c] = plane([&](int y, int x) { return guide.at(y, x, c) * src.at(y, x); });
    }
    const ImageGray mean_p = box_mean(src, radius);
    std::array<ImageGray, 6> var;  // rr rg rb gg gb bb
    const int pairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
    for (int k = 0; k < 6; ++k) {
        const int a = pairs[k][0], b = pairs[k][1];
        var[k] = plane([&](int y, int x) { return guide.at(y, x, a) * guide.at(y, x, b); });
    }

    std::array<ImageGray, 3> coef_a{ImageGray(h, w), ImageGray(h, w), ImageGray(h, w)};
    ImageGray coef_b(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            Eigen::Matrix3d sigma;
            for (int k = 0; k < 6; ++k) {
                const int a = pairs[k][0], b = pairs[k][1];
                const double v = var[k].at(y, x) - mean_i[a].at(y, x) * mean_i[b].at(y, x);
                sigma(a, b) = sigma(b, a) = v;
            }
            sigma += eps * Eigen::Matrix3d::Identity();
            Eigen::Vector3d cov;
            for (int c = 0; c < 3; ++c) cov[c] = cov_ip[c].at(y, x) - mean_i[c].at(y, x) * mean_p.at(y, x);
            const Eigen::Vector3d a = sigma.ldlt().solve(cov);
            double b = mean_p.at(y, x);
            for (int c = 0; c < 3; ++c) {
                coef_a[c].at(y, x) = a[c];
                b -= a[c] * mean_i[c].at(y, x);
            }
            coef_b.at(y, x) = b;
        }
    }
    std::array<ImageGray, 3> mean_a;
    for (int c = 0; c < 3; ++c) mean_a[c] = box_mean(coef_a[c], radius);
    const ImageGray mean_b = box_mean(coef_b, radius);
    ImageGray out(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double q = mean_b.at(y, x);
            for (int c = 0; c < 3; ++c) q += mean_a[c].at(y, x) * guide.at(y, x, c);
            out.at(y, x) = std::clamp(q, 0.0, 1.0);
        }
    }
    return out;
}

}  // namespace nighthaze

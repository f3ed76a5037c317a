#include "nighthaze/classical.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "nighthaze/error.hpp"

namespace nighthaze {

namespace {

struct Offset {
    int dy, dx;
};
constexpr Offset kDifferences[4] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};

bool in_bounds(int y, int x, int h, int w) { return y >= 0 && y < h && x >= 0 && x < w; }

// Minimum magnitude used when majorizing |d| by a quadratic.
constexpr double kIrlsFloor = 1e-4;

}  // namespace

void BccrParams::validate() const {
    for (int c = 0; c < 3; ++c) {
        if (!(c0[c] < c1[c])) throw ParameterError("BCCR bounds require c0 < c1 componentwise");
    }
    if (iters < 1) throw ParameterError("BCCR iters must be >= 1");
    if (!(lambda_reg > 0)) throw ParameterError("BCCR lambda_reg must be positive");
    if (!(weight_sigma > 0)) throw ParameterError("BCCR weight_sigma must be positive");
    if (patch < 1 || patch % 2 == 0) throw ParameterError("BCCR patch must be odd");
}

std::string BccrParams::serialize() const {
    std::ostringstream os;
    os.precision(17);
    os << "c0=" << c0[0] << ',' << c0[1] << ',' << c0[2] << ";c1=" << c1[0] << ',' << c1[1] << ',' << c1[2]
       << ";patch=" << patch << ";lambda_reg=" << lambda_reg << ";iters=" << iters
       << ";weight_sigma=" << weight_sigma << ";t_min=" << t_min;
    return os.str();
}

ImageGray boundary_constraint(const ImageRGB& img, const AtmosphericLight& a, const BccrParams& p) {
    p.validate();
    for (int c = 0; c < 3; ++c) {
        if (std::abs(a.a[c] - p.c0[c]) < 1e-6 || std::abs(a.a[c] - p.c1[c]) < 1e-6) {
            throw NumericError("atmospheric light coincides with a radiance bound");
        }
    }
    ImageGray tb(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            double t = 0.0;
            for (int c = 0; c < 3; ++c) {
                const double diff = a.a[c] - img.at(y, x, c);
                t = std::max({t, diff / (a.a[c] - p.c0[c]), diff / (a.a[c] - p.c1[c])});
            }
            tb.at(y, x) = std::min(1.0, t);
        }
    }
    ImageGray closed = min_filter(max_filter(tb, p.patch), p.patch);
    for (double& v : closed.data()) v = std::clamp(v, p.t_min, 1.0);
    return closed;
}

std::vector<std::vector<double>> contextual_weights(const ImageRGB& guide, double weight_sigma) {
    const int h = guide.height(), w = guide.width();
    std::vector<std::vector<double>> weights(4, std::vector<double>(guide.pixel_count(), 0.0));
    for (int j = 0; j < 4; ++j) {
        const auto [dy, dx] = kDifferences[j];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!in_bounds(y + dy, x + dx, h, w)) continue;
                double g2 = 0;
                for (int c = 0; c < 3; ++c) {
                    const double d = guide.at(y + dy, x + dx, c) - guide.at(y, x, c);
                    g2 += d * d;
                }
                weights[j][static_cast<std::size_t>(y) * w + x] = std::exp(-std::sqrt(g2) / weight_sigma);
            }
    }
    return weights;
}

double weighted_tv(const ImageGray& t, const std::vector<std::vector<double>>& weights) {
    const int h = t.height(), w = t.width();
    double tv = 0;
    for (int j = 0; j < 4; ++j) {
        const auto [dy, dx] = kDifferences[j];
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (!in_bounds(y + dy, x + dx, h, w)) continue;
                tv += weights[j][static_cast<std::size_t>(y) * w + x] * std::abs(t.at(y + dy, x + dx) - t.at(y, x));
            }
    }
    return tv;
}

double contextual_objective(const ImageGray& t, const ImageGray& t_b,
                            const std::vector<std::vector<double>>& weights, double lambda_reg) {
    double data = 0;
    auto a = t.data();
    auto b = t_b.data();
    for (std::size_t i = 0; i < a.size(); ++i) data += (a[i] - b[i]) * (a[i] - b[i]);
    return 0.5 * lambda_reg * data + weighted_tv(t, weights);
}

ImageGray contextual_regularize(const ImageGray& t_b, const ImageRGB& guide, const BccrParams& p,
                                RegularizeTrace* trace) {
    p.validate();
    if (!t_b.same_size(guide)) throw DimensionError("contextual_regularize: guide and t_b differ in size");
    const int h = t_b.height(), w = t_b.width();
    const auto n = static_cast<Eigen::Index>(t_b.pixel_count());
    const auto weights = contextual_weights(guide, p.weight_sigma);

    ImageGray t = t_b;
    double current = contextual_objective(t, t_b, weights, p.lambda_reg);
    if (trace) trace->objective = {current};

    Eigen::Map<const Eigen::VectorXd> rhs_src(t_b.data().data(), n);
    const Eigen::VectorXd rhs = p.lambda_reg * rhs_src;
    std::vector<Eigen::Triplet<double>> triplets;

    for (int it = 0; it < p.iters; ++it) {
        // Quadratic majorizer of each |d_e| at the current iterate.
        triplets.clear();
        std::vector<double> diag(static_cast<std::size_t>(n), p.lambda_reg);
        for (int j = 0; j < 4; ++j) {
            const auto [dy, dx] = kDifferences[j];
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!in_bounds(y + dy, x + dx, h, w)) continue;
                    const int i0 = y * w + x, i1 = (y + dy) * w + (x + dx);
                    const double wt = weights[j][static_cast<std::size_t>(i0)];
                    if (wt == 0.0) continue;
                    const double d = std::abs(t.data()[i1] - t.data()[i0]);
                    const double omega = wt / std::max(d, kIrlsFloor);
                    diag[i0] += omega;
                    diag[i1] += omega;
                    triplets.emplace_back(i0, i1, -omega);
                    triplets.emplace_back(i1, i0, -omega);
                }
        }
        for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, diag[static_cast<std::size_t>(i)]);
        Eigen::SparseMatrix<double> A(n, n);
        A.setFromTriplets(triplets.begin(), triplets.end());

        Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
        cg.setTolerance(1e-10);
        cg.setMaxIterations(2000);
        cg.compute(A);
        Eigen::Map<const Eigen::VectorXd> guess(t.data().data(), n);
        const Eigen::VectorXd sol = cg.solveWithGuess(rhs, guess);

        ImageGray next(h, w);
        for (Eigen::Index i = 0; i < n; ++i) next.data()[static_cast<std::size_t>(i)] = std::clamp(sol[i], p.t_min, 1.0);
        const double value = contextual_objective(next, t_b, weights, p.lambda_reg);
        if (value > current) {
            // Only possible through the majorizer floor or solver tolerance;
            // keep the better iterate.
            if (trace) trace->objective.push_back(current);
            continue;
        }
        t = std::move(next);
        current = value;
        if (trace) trace->objective.push_back(current);
    }
    return t;
}

ImageRGB recover_radiance(const ImageRGB& img, const ImageGray& t, const Rgb& a, double t_min) {
    if (!img.same_size(t)) throw DimensionError("recover_radiance: transmission size mismatch");
    ImageRGB out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            const double tt = std::max(t.at(y, x), t_min);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = (img.at(y, x, c) - a[c]) / tt + a[c];
        }
    out.clamp01();
    return out;
}

ImageRGB dehaze_bccr(const ImageRGB& img, const BccrParams& p) {
    p.validate();
    const AtmosphericLight a = estimate_atmospheric_light(img, p.patch);
    const ImageGray tb = boundary_constraint(img, a, p);
    const ImageGray t = contextual_regularize(tb, img, p);
    return recover_radiance(img, t, a.a, p.t_min);
}

ImageRGB dehaze_dcp(const ImageRGB& img, const DcpParams& p) {
    AtmosphericLight a = estimate_atmospheric_light(img, p.patch);
    for (double& v : a.a) v = std::max(v, 1.0 / 255.0);
    ImageGray t = dcp_transmission(img, a, p.patch, p.omega);
    t = guided_filter(img, t, p.guide_radius, p.guide_eps);
    for (double& v : t.data()) v = std::clamp(v, kTransmissionFloor, 1.0);
    return recover_radiance(img, t, a.a);
}

}  // namespace nighthaze

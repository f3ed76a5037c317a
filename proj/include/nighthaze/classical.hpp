#pragma once

#include <string>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/priors.hpp"

namespace nighthaze {

struct BccrParams {
    Rgb c0{20.0 / 255, 20.0 / 255, 20.0 / 255};
    Rgb c1{300.0 / 255, 300.0 / 255, 300.0 / 255};
    int patch = 5;
    double lambda_reg = 4.0;
    int iters = 8;
    double weight_sigma = 0.25;
    double t_min = kTransmissionFloor;

    void validate() const;
    /// Stable text form, used for provenance hashing.
    std::string serialize() const;
};

/// Radiance-cube lower bound on the transmission followed by a morphological
/// closing over `patch`, clamped to [t_min, 1].
ImageGray boundary_constraint(const ImageRGB& img, const AtmosphericLight& a, const BccrParams& p);

/// Guide-dependent weights W_j for the four first-order differences
/// (right, down, down-right, down-left). Layout: [j][y*w+x].
std::vector<std::vector<double>> contextual_weights(const ImageRGB& guide, double weight_sigma);

/// (lambda/2)||t - t_b||^2 + sum_j ||W_j o D_j t||_1.
double contextual_objective(const ImageGray& t, const ImageGray& t_b,
                            const std::vector<std::vector<double>>& weights, double lambda_reg);

/// Weighted total variation sum_j ||W_j o D_j t||_1 alone.
double weighted_tv(const ImageGray& t, const std::vector<std::vector<double>>& weights);

struct RegularizeTrace {
    std::vector<double> objective;  // entry 0 is the starting point t_b
};

/// Minimizes contextual_objective by multiplicative half-quadratic
/// (reweighted least squares) outer iterations; each inner quadratic is
/// solved by conjugate gradients. The objective never increases.
ImageGray contextual_regularize(const ImageGray& t_b, const ImageRGB& guide, const BccrParams& p,
                                RegularizeTrace* trace = nullptr);

/// J = (I - a) / max(t, t_min) + a, clamped to [0,1].
ImageRGB recover_radiance(const ImageRGB& img, const ImageGray& t, const Rgb& a, double t_min = kTransmissionFloor);

ImageRGB dehaze_bccr(const ImageRGB& img, const BccrParams& p = {});

struct DcpParams {
    int patch = kDeskPriorPatch;
    double omega = kDefaultOmega;
    int guide_radius = 8;
    double guide_eps = 1e-3;
};

ImageRGB dehaze_dcp(const ImageRGB& img, const DcpParams& p = {});

}  // namespace nighthaze

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/priors.hpp"
#include "nighthaze/tensor.hpp"

// Training objectives. Image batches are [N,3,H,W] tensors; every loss is a
// differentiable scalar tensor w.r.t. the prediction.
namespace nighthaze::nn {

/// Frozen convolutional feature pyramid standing in for a pretrained
/// classification backbone.
class FeatureExtractor {
public:
    /// One stage whose output is the input itself.
    static FeatureExtractor identity();
    /// Two seeded random stages: 3x3 conv + ReLU, then stride-2 3x3 conv + ReLU.
    static FeatureExtractor random(std::uint64_t seed = 7, int width = 8);

    int stages() const { return static_cast<int>(stages_.size()); }
    /// Outputs of the requested stages (sorted, each in [0, stages())).
    std::vector<Tensor> features(const Tensor& x, const std::vector<int>& layers) const;

private:
    struct Stage {
        Tensor weight, bias;
        int stride = 1;
        bool relu = true;
    };
    std::vector<Stage> stages_;
};

struct SupervisedLossConfig {
    double lambda_per = 0.2;
    std::vector<int> feature_layers{0, 1};
    double psnr_eps = 1e-8;
    bool identity_extractor = false;
    std::uint64_t extractor_seed = 7;

    void validate() const;
    FeatureExtractor make_extractor() const;
};

struct UnsupervisedLossConfig {
    double lambda_dcp = 1e-4;
    double lambda_bcp = 1e-4;
    double lambda_spa = 5.0;
    double lambda_exp = 1e-3;
    double lambda_col = 0.2;
    double dcp_inner_lambda = 1e-4;
    double exposure_level = 0.6;
    int spa_region = 4;
    int exp_region = 16;
    int prior_patch = kDeskPriorPatch;
    double omega = kDefaultOmega;
    /// Longest side at which the transmission terms are evaluated.
    int transmission_side = 64;

    void validate() const;
};

struct LossTerm {
    std::string name;
    double weight = 0;
    double value = 0;
};

struct LossReport {
    std::vector<LossTerm> terms;
    double total = 0;
    Tensor total_tensor;  // differentiable; undefined when built by hand

    double term(const std::string& name) const;
    /// Sum of weight * value over the terms.
    double recomposed() const;
    /// `name=value` pairs separated by tabs, total last.
    std::string log_fields() const;
};

/// Per-image mean of -10 log10(1 / max(MSE_i, eps)).
Tensor psnr_loss(const Tensor& pred, const Tensor& gt, double eps = 1e-8);

/// Sum over the chosen stages of mean |phi(pred) - phi(gt)|.
Tensor perceptual_loss(const Tensor& pred, const Tensor& gt, const FeatureExtractor& extractor,
                       const std::vector<int>& layers);

/// Everything the transmission losses derive from the hazy input alone,
/// computed once per batch at the reduced loss resolution.
struct TransmissionContext {
    int factor = 1;             // average-pool factor
    int height = 0, width = 0;  // region of the full image that is pooled
    std::vector<ImageRGB> hazy;
    std::vector<AtmosphericLight> airlight;
    std::vector<ImageGray> t_dcp, t_bcp;
    std::vector<MattingLaplacian> laplacian;
    double t_min = kTransmissionFloor;
};

TransmissionContext prepare_transmission_context(const Tensor& hazy, const UnsupervisedLossConfig& cfg,
                                                 bool with_laplacian = true);

/// t~(p) = clamp(median_c (I_c - a_c) / (J_c - a_c), [t_min, 1]); denominators
/// closer to zero than 1e-3 keep their sign at magnitude 1e-3.
ImageGray model_transmission(const ImageRGB& hazy, const ImageRGB& pred, const Rgb& a, double t_min = kTransmissionFloor);

/// Mean over images of t~ᵀ L t~ + inner_lambda ||t~ - t_dcp||².
Tensor dcp_loss(const Tensor& pred, const TransmissionContext& ctx, double inner_lambda);
/// Mean |t~ - t_bcp| over images and pixels.
Tensor bcp_loss(const Tensor& pred, const TransmissionContext& ctx);

struct ZeroReferenceLosses {
    Tensor spa, exp, col;
};
ZeroReferenceLosses spa_exp_col_losses(const Tensor& hazy, const Tensor& pred, const UnsupervisedLossConfig& cfg);

LossReport supervised_total(const Tensor& pred, const Tensor& gt, const SupervisedLossConfig& cfg,
                            const FeatureExtractor& extractor);
LossReport unsupervised_total(const Tensor& hazy, const Tensor& pred, const UnsupervisedLossConfig& cfg,
                              const TransmissionContext& ctx);

}  // namespace nighthaze::nn

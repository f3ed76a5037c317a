#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/manifest.hpp"

namespace nighthaze {

/// 10 log10(1 / MSE) over all channels with peak 1; +infinity when MSE is 0.
double psnr(const ImageRGB& pred, const ImageRGB& gt);

struct SsimParams {
    int window = 11;  // odd; shrunk to the largest odd size that fits
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Mean local SSIM over the valid (unpadded) region, averaged across channels.
double ssim(const ImageRGB& pred, const ImageRGB& gt, const SsimParams& p = {});

struct MetricRow {
    std::string sample_id;
    double psnr = 0;
    double ssim = 0;
};

struct EvaluationResult {
    std::vector<MetricRow> rows;  // ordered by sample_id
    double mean_psnr = 0;
    double mean_ssim = 0;

    /// `sample_id<TAB>psnr<TAB>ssim` rows then a `#mean` line; infinite PSNR
    /// is written as `inf`.
    void write_table(std::ostream& os) const;
};

using Dehazer = std::function<ImageRGB(const ImageRGB&)>;

/// Runs `method` on every paired record of `split` (all records when split is
/// empty). Throws DataError when nothing is selected or a file is missing.
EvaluationResult evaluate(const DatasetManifest& manifest, const Dehazer& method,
                          std::optional<Split> split = Split::Test);

/// Formats a metric value the way tables do (`inf` for infinity).
std::string format_metric(double v);

}  // namespace nighthaze

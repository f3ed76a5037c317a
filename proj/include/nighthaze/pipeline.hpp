#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nighthaze/classical.hpp"
#include "nighthaze/image.hpp"
#include "nighthaze/losses.hpp"
#include "nighthaze/manifest.hpp"
#include "nighthaze/network.hpp"
#include "nighthaze/plot.hpp"

namespace nighthaze {

enum class Stage { Pretrain, Unsupervised, Finetune };
std::string to_string(Stage s);

struct TrainConfig {
    Stage stage = Stage::Pretrain;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch = 16;
    int steps = 1000;
    int crop = 256;
    double cyclic_max_ratio = 1.2;
    int cyclic_half_cycle = 1000;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    bool augment = true;
    /// Finetune only: probability that a batch item is drawn from the
    /// synthetic set instead of the pseudo pairs.
    double synthetic_mix = 0.0;
    nn::SupervisedLossConfig supervised;
    nn::UnsupervisedLossConfig unsupervised;
    /// Directory for the log, checkpoints and curve plot; empty keeps
    /// everything in memory.
    std::filesystem::path out_dir;
    std::string run_name;  // file prefix, defaults to the stage name

    /// Full-scale settings for the stage (unsupervised uses lr 5e-5).
    static TrainConfig defaults(Stage stage);
    /// Single-CPU profile: batch 4, crop 64.
    static TrainConfig desk(Stage stage);
    void validate() const;
    std::string prefix() const { return run_name.empty() ? to_string(stage) : run_name; }
};

struct TrainResult {
    std::uint64_t steps = 0;
    std::vector<LogEntry> log;
    std::optional<std::filesystem::path> checkpoint;
    std::optional<std::filesystem::path> log_path;
    std::optional<std::filesystem::path> curve_path;
    std::string parameter_hash;
};

/// Supervised training on the train split of a paired manifest.
TrainResult pretrain(nn::PriorQueryTransformer& model, const DatasetManifest& manifest, const TrainConfig& cfg);

/// Unsupervised adaptation on the hazy images of the train split (clean
/// paths, if any, are ignored).
TrainResult unsupervised_adapt(nn::PriorQueryTransformer& model, const DatasetManifest& manifest,
                               const TrainConfig& cfg);

struct Provenance {
    std::string coarse_checkpoint_id;
    std::string bccr_params_hash;
    bool operator==(const Provenance&) const = default;
};

struct PseudoPair {
    std::string sample_id;
    ImageRGB hazy;
    ImageRGB coarse;
    ImageRGB pseudo_gt;
    Provenance provenance;
};

struct PseudoGtResult {
    std::vector<PseudoPair> pairs;
    DatasetManifest manifest;
    std::filesystem::path manifest_path;
    std::filesystem::path provenance_path;
};

/// FNV-1a 64 of a string as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// coarse = model(hazy), pseudo_gt = BCCR(coarse), for every record of the
/// manifest. Writes out_root/{hazy,gt}/<id>.png, a paired manifest.tsv and
/// provenance.tsv (sample, coarse checkpoint id, BCCR parameter hash).
PseudoGtResult generate_pseudo_gt(const nn::PriorQueryTransformer& model, const DatasetManifest& manifest,
                                  const BccrParams& bccr, const std::filesystem::path& out_root);

std::vector<std::pair<std::string, Provenance>> read_provenance(const std::filesystem::path& path);

/// Supervised training on pseudo pairs, optionally mixed with synthetic pairs.
TrainResult finetune(nn::PriorQueryTransformer& model, const DatasetManifest& pseudo_pairs, const TrainConfig& cfg,
                     const std::optional<DatasetManifest>& synthetic = std::nullopt);

enum class AblationAxis { Priors, Blocks, UnsupervisedLosses };
AblationAxis parse_ablation_axis(const std::string& s);
std::vector<std::string> ablation_variants(AblationAxis axis);

struct AblationConfig {
    nn::ModelConfig model;
    std::uint64_t model_seed = 0;
    TrainConfig train = TrainConfig::desk(Stage::Pretrain);
    TrainConfig adapt = TrainConfig::desk(Stage::Unsupervised);  // loss axis only
    Split eval_split = Split::Val;
};

struct AblationRow {
    std::string variant;
    double psnr = 0;
    double ssim = 0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    /// `variant<TAB>psnr<TAB>ssim` per row.
    void write(std::ostream& os) const;
};

/// Trains every variant of `axis` identically on the train split and scores
/// it on cfg.eval_split.
AblationTable run_ablation(AblationAxis axis, const DatasetManifest& data, const AblationConfig& cfg);

}  // namespace nighthaze

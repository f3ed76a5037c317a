#include "nighthaze/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "nighthaze/augment.hpp"
#include "nighthaze/checkpoint.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/image_io.hpp"
#include "nighthaze/metrics.hpp"
#include "nighthaze/optim.hpp"

namespace nighthaze {

namespace {

struct Sample {
    ImageRGB hazy;
    std::optional<ImageRGB> clean;
};

std::vector<Sample> load_samples(const DatasetManifest& manifest, Split split, bool need_clean) {
    std::vector<Sample> out;
    for (const auto& r : manifest.samples) {
        if (r.split != split) continue;
        Sample s;
        try {
            s.hazy = load_image(r.hazy);
            if (need_clean) {
                if (!r.clean) throw DataError("record " + r.hazy.string() + " has no clean image");
                s.clean = load_image(*r.clean);
                if (!s.clean->same_size(s.hazy)) throw DataError("pair size mismatch for " + r.hazy.string());
            }
        } catch (const NotFoundError& e) {
            throw DataError(e.what());
        }
        out.push_back(std::move(s));
    }
    if (out.empty()) throw DataError("no " + to_string(split) + " samples in manifest");
    return out;
}

int effective_crop(const std::vector<Sample>& samples, int crop) {
    for (const auto& s : samples) crop = std::min({crop, s.hazy.height(), s.hazy.width()});
    return crop;
}

struct Batch {
    nn::Tensor hazy;
    nn::Tensor clean;  // undefined for unpaired batches
};

// Draws `batch` random crops (with paired targets when available) from the
// pools; pool 1 is chosen with probability `mix`.
Batch draw_batch(const std::vector<Sample>& pool0, const std::vector<Sample>* pool1, double mix, int batch, int crop,
                 bool do_augment, bool paired, std::mt19937_64& rng) {
    std::vector<ImageRGB> hazy, clean;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int b = 0; b < batch; ++b) {
        const bool second = pool1 && coin(rng) < mix;
        const auto& pool = second ? *pool1 : pool0;
        const auto& s = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
        const CropOffset at{std::uniform_int_distribution<int>(0, s.hazy.height() - crop)(rng),
                            std::uniform_int_distribution<int>(0, s.hazy.width() - crop)(rng)};
        ImageRGB h = nighthaze::crop(s.hazy, at, crop);
        std::optional<ImageRGB> c;
        if (paired) c = nighthaze::crop(*s.clean, at, crop);
        const std::uint64_t aug_seed = rng();
        if (do_augment) std::tie(h, c) = augment(h, c, aug_seed);
        hazy.push_back(std::move(h));
        if (paired) clean.push_back(std::move(*c));
    }
    Batch out{nn::images_to_tensor(hazy), {}};
    if (paired) out.clean = nn::images_to_tensor(clean);
    return out;
}

std::string format_entry(const LogEntry& e) {
    std::ostringstream os;
    os.precision(10);
    os << e.step << '\t' << e.lr;
    for (const auto& [k, v] : e.values) os << '\t' << k << '=' << v;
    return os.str();
}

template <typename StepFn>
TrainResult train_loop(nn::PriorQueryTransformer& model, const TrainConfig& cfg, StepFn&& compute_loss) {
    std::vector<nn::Tensor> params;
    for (auto& [name, t] : model.parameters()) params.push_back(t);
    nn::Adam adam(params, {cfg.lr, cfg.beta1, cfg.beta2});
    const nn::CyclicLR schedule{cfg.lr, cfg.cyclic_max_ratio, cfg.cyclic_half_cycle};
    std::mt19937_64 rng(cfg.seed);

    TrainResult result;
    std::ofstream log;
    const bool persist = !cfg.out_dir.empty();
    if (persist) {
        std::filesystem::create_directories(cfg.out_dir);
        result.log_path = cfg.out_dir / (cfg.prefix() + ".log");
        log.open(*result.log_path, std::ios::trunc);
        if (!log) throw IoError("cannot write training log " + result.log_path->string());
    }
    for (int s = 0; s < cfg.steps; ++s) {
        model.zero_grad();
        const nn::LossReport report = compute_loss(rng);
        report.total_tensor.backward();
        const double lr = schedule.at(static_cast<std::uint64_t>(s));
        adam.step(lr);

        LogEntry e;
        e.step = static_cast<std::uint64_t>(s) + 1;
        e.lr = lr;
        for (const auto& t : report.terms) e.values[t.name] = t.value;
        e.values["total"] = report.total;
        if (persist) log << format_entry(e) << '\n' << std::flush;
        result.log.push_back(std::move(e));

        if (persist && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
            char name[64];
            std::snprintf(name, sizeof name, "_step%06d.ckpt", s + 1);
            nn::save_checkpoint(model, static_cast<std::uint64_t>(s) + 1, cfg.out_dir / (cfg.prefix() + name));
        }
    }
    result.steps = static_cast<std::uint64_t>(cfg.steps);
    result.parameter_hash = model.parameter_hash();
    if (persist) {
        result.checkpoint = cfg.out_dir / (cfg.prefix() + ".ckpt");
        nn::save_checkpoint(model, result.steps, *result.checkpoint);
        if (!result.log.empty()) {
            result.curve_path = cfg.out_dir / (cfg.prefix() + "_curve.png");
            plot_training_curve(result.log, *result.curve_path);
        }
    }
    return result;
}

TrainResult supervised_training(nn::PriorQueryTransformer& model, const std::vector<Sample>& primary,
                                const std::vector<Sample>* secondary, const TrainConfig& cfg) {
    cfg.validate();
    const nn::FeatureExtractor extractor = cfg.supervised.make_extractor();
    int crop = effective_crop(primary, cfg.crop);
    if (secondary) crop = effective_crop(*secondary, crop);
    return train_loop(model, cfg, [&](std::mt19937_64& rng) {
        const Batch b = draw_batch(primary, secondary, cfg.synthetic_mix, cfg.batch, crop, cfg.augment, true, rng);
        return nn::supervised_total(model.forward(b.hazy), b.clean, cfg.supervised, extractor);
    });
}

}  // namespace

std::string to_string(Stage s) {
    switch (s) {
        case Stage::Pretrain: return "pretrain";
        case Stage::Unsupervised: return "unsupervised";
        case Stage::Finetune: return "finetune";
    }
    return "pretrain";
}

TrainConfig TrainConfig::defaults(Stage stage) {
    TrainConfig c;
    c.stage = stage;
    if (stage == Stage::Unsupervised) c.lr = 5e-5;
    return c;
}

TrainConfig TrainConfig::desk(Stage stage) {
    TrainConfig c = defaults(stage);
    c.batch = 4;
    c.crop = 64;
    return c;
}

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ParameterError("lr must be > 0");
    if (batch < 1) throw ParameterError("batch must be >= 1");
    if (steps < 0) throw ParameterError("steps must be >= 0");
    if (crop < 1) throw ParameterError("crop must be >= 1");
    if (!(cyclic_max_ratio >= 1)) throw ParameterError("cyclic_max_ratio must be >= 1");
    if (cyclic_half_cycle < 1) throw ParameterError("cyclic half cycle must be >= 1");
    if (checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
    if (!(synthetic_mix >= 0 && synthetic_mix <= 1)) throw ParameterError("synthetic_mix must lie in [0,1]");
    nn::AdamConfig{lr, beta1, beta2}.validate();
    supervised.validate();
    unsupervised.validate();
}

TrainResult pretrain(nn::PriorQueryTransformer& model, const DatasetManifest& manifest, const TrainConfig& cfg) {
    if (!manifest.paired) throw DataError("pretraining needs a paired manifest");
    const auto samples = load_samples(manifest, Split::Train, true);
    return supervised_training(model, samples, nullptr, cfg);
}

TrainResult unsupervised_adapt(nn::PriorQueryTransformer& model, const DatasetManifest& manifest,
                               const TrainConfig& cfg) {
    cfg.validate();
    const auto samples = load_samples(manifest, Split::Train, false);
    const int crop = effective_crop(samples, cfg.crop);
    const bool need_laplacian = cfg.unsupervised.lambda_dcp > 0;
    return train_loop(model, cfg, [&](std::mt19937_64& rng) {
        const Batch b = draw_batch(samples, nullptr, 0.0, cfg.batch, crop, cfg.augment, false, rng);
        const auto ctx = nn::prepare_transmission_context(b.hazy, cfg.unsupervised, need_laplacian);
        return nn::unsupervised_total(b.hazy, model.forward(b.hazy), cfg.unsupervised, ctx);
    });
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

PseudoGtResult generate_pseudo_gt(const nn::PriorQueryTransformer& model, const DatasetManifest& manifest,
                                  const BccrParams& bccr, const std::filesystem::path& out_root) {
    bccr.validate();
    if (manifest.samples.empty()) throw DataError("pseudo-GT generation needs at least one image");
    const Provenance prov{model.parameter_hash(), fnv1a_hex(bccr.serialize())};
    std::filesystem::create_directories(out_root / "hazy");
    std::filesystem::create_directories(out_root / "gt");

    PseudoGtResult result;
    result.manifest.paired = true;
    for (const auto& r : manifest.samples) {
        PseudoPair pair;
        pair.sample_id = r.hazy.stem().string();
        try {
            pair.hazy = load_image(r.hazy);
        } catch (const NotFoundError& e) {
            throw DataError(e.what());
        }
        pair.coarse = model.infer(pair.hazy);
        pair.pseudo_gt = dehaze_bccr(pair.coarse, bccr);
        pair.provenance = prov;
        const auto hazy_path = out_root / "hazy" / (pair.sample_id + ".png");
        const auto gt_path = out_root / "gt" / (pair.sample_id + ".png");
        save_image(pair.hazy, hazy_path);
        save_image(pair.pseudo_gt, gt_path);
        result.manifest.samples.push_back({Split::Train, hazy_path, gt_path});
        result.pairs.push_back(std::move(pair));
    }
    result.manifest.validate();
    result.manifest_path = out_root / "manifest.tsv";
    write_manifest(result.manifest, result.manifest_path);

    result.provenance_path = out_root / "provenance.tsv";
    std::ofstream os(result.provenance_path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + result.provenance_path.string());
    os << "#sample\tcoarse_checkpoint\tbccr_params\n";
    for (const auto& p : result.pairs)
        os << p.sample_id << '\t' << p.provenance.coarse_checkpoint_id << '\t' << p.provenance.bccr_params_hash << '\n';
    return result;
}

std::vector<std::pair<std::string, Provenance>> read_provenance(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw NotFoundError("provenance file not found: " + path.string());
    std::vector<std::pair<std::string, Provenance>> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        std::string id;
        Provenance p;
        if (!std::getline(fields, id, '\t') || !std::getline(fields, p.coarse_checkpoint_id, '\t') ||
            !std::getline(fields, p.bccr_params_hash, '\t') || p.coarse_checkpoint_id.empty() || p.bccr_params_hash.empty()) {
            throw FormatError("malformed provenance line: " + line);
        }
        out.emplace_back(id, p);
    }
    return out;
}

TrainResult finetune(nn::PriorQueryTransformer& model, const DatasetManifest& pseudo_pairs, const TrainConfig& cfg,
                     const std::optional<DatasetManifest>& synthetic) {
    if (!pseudo_pairs.paired) throw DataError("fine-tuning needs paired pseudo-GT data");
    const auto pseudo = load_samples(pseudo_pairs, Split::Train, true);
    if (cfg.synthetic_mix > 0) {
        if (!synthetic) throw DataError("synthetic_mix > 0 requires a synthetic manifest");
        if (!synthetic->paired) throw DataError("synthetic manifest must be paired");
        const auto synth = load_samples(*synthetic, Split::Train, true);
        return supervised_training(model, pseudo, &synth, cfg);
    }
    return supervised_training(model, pseudo, nullptr, cfg);
}

AblationAxis parse_ablation_axis(const std::string& s) {
    if (s == "priors") return AblationAxis::Priors;
    if (s == "blocks") return AblationAxis::Blocks;
    if (s == "losses") return AblationAxis::UnsupervisedLosses;
    throw ParameterError("unknown ablation axis '" + s + "' (expected priors, blocks or losses)");
}

std::vector<std::string> ablation_variants(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::Priors: return {"no_priors", "q_dcp_only", "q_bcp_only", "full"};
        case AblationAxis::Blocks: return {"resblock", "vitblock", "no_latent", "nafblock"};
        case AblationAxis::UnsupervisedLosses: return {"drop_dcp", "drop_bcp", "drop_spa", "drop_exp", "drop_col", "all"};
    }
    return {};
}

void AblationTable::write(std::ostream& os) const {
    for (const auto& r : rows) os << r.variant << '\t' << format_metric(r.psnr) << '\t' << format_metric(r.ssim) << '\n';
}

AblationTable run_ablation(AblationAxis axis, const DatasetManifest& data, const AblationConfig& cfg) {
    const auto score = [&](const std::string& variant, const nn::PriorQueryTransformer& model) {
        const EvaluationResult ev = evaluate(data, [&](const ImageRGB& img) { return model.infer(img); }, cfg.eval_split);
        return AblationRow{variant, ev.mean_psnr, ev.mean_ssim};
    };
    auto train_cfg = [&](const TrainConfig& base, const std::string& variant) {
        TrainConfig c = base;
        if (!c.out_dir.empty()) c.out_dir /= variant;
        return c;
    };

    AblationTable table;
    if (axis == AblationAxis::UnsupervisedLosses) {
        nn::PriorQueryTransformer base(cfg.model, cfg.model_seed);
        pretrain(base, data, train_cfg(cfg.train, "base"));
        for (const auto& variant : ablation_variants(axis)) {
            nn::PriorQueryTransformer model = base.clone();
            TrainConfig adapt = train_cfg(cfg.adapt, variant);
            auto& u = adapt.unsupervised;
            if (variant == "drop_dcp") u.lambda_dcp = 0;
            else if (variant == "drop_bcp") u.lambda_bcp = 0;
            else if (variant == "drop_spa") u.lambda_spa = 0;
            else if (variant == "drop_exp") u.lambda_exp = 0;
            else if (variant == "drop_col") u.lambda_col = 0;
            unsupervised_adapt(model, data, adapt);
            table.rows.push_back(score(variant, model));
        }
        return table;
    }
    for (const auto& variant : ablation_variants(axis)) {
        nn::ModelConfig mc = cfg.model;
        if (variant == "no_priors") mc.prior = nn::PriorMode::None;
        else if (variant == "q_dcp_only") mc.prior = nn::PriorMode::DcpOnly;
        else if (variant == "q_bcp_only") mc.prior = nn::PriorMode::BcpOnly;
        else if (variant == "full") mc.prior = nn::PriorMode::Full;
        else if (variant == "resblock") mc.decoder_block = nn::BlockKind::Res;
        else if (variant == "vitblock") mc.decoder_block = nn::BlockKind::Vit;
        else if (variant == "no_latent") mc.bottleneck_blocks = 0;
        else if (variant == "nafblock") mc.decoder_block = nn::BlockKind::Naf;
        nn::PriorQueryTransformer model(mc, cfg.model_seed);
        pretrain(model, data, train_cfg(cfg.train, variant));
        table.rows.push_back(score(variant, model));
    }
    return table;
}

}  // namespace nighthaze

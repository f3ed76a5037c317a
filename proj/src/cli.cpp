#include "nighthaze/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <optional>

#include "nighthaze/checkpoint.hpp"
#include "nighthaze/classical.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/haze_synth.hpp"
#include "nighthaze/image_io.hpp"
#include "nighthaze/metrics.hpp"
#include "nighthaze/pipeline.hpp"

namespace nighthaze {

namespace {

namespace fs = std::filesystem;

struct ModelOptions {
    nn::ModelConfig cfg;
    std::string prior = "full";
    std::string decoder_block = "naf";
    bool no_positional = false;
    std::uint64_t seed = 0;

    nn::ModelConfig resolve() const {
        nn::ModelConfig c = cfg;
        c.prior = nn::parse_prior_mode(prior);
        c.decoder_block = nn::parse_block_kind(decoder_block);
        c.positional = !no_positional;
        const int n = c.num_scales - 1;
        if (static_cast<int>(c.blocks_per_scale.size()) != n) c.blocks_per_scale.assign(static_cast<std::size_t>(std::max(n, 0)), 1);
        if (static_cast<int>(c.decoder_blocks_per_scale.size()) != n) {
            c.decoder_blocks_per_scale.assign(static_cast<std::size_t>(std::max(n, 0)), 1);
        }
        c.validate();
        return c;
    }
};

void add_model_options(CLI::App* app, ModelOptions& m) {
    app->add_option("--base-width", m.cfg.base_width, "Channels at full resolution")->capture_default_str();
    app->add_option("--num-scales", m.cfg.num_scales, "Number of resolution levels")->capture_default_str();
    app->add_option("--bottleneck-blocks", m.cfg.bottleneck_blocks, "NAF blocks at the lowest resolution")->capture_default_str();
    app->add_option("--heads", m.cfg.heads, "Cross-attention heads")->capture_default_str();
    app->add_option("--embed-dim", m.cfg.embed_dim, "Query token width")->capture_default_str();
    app->add_option("--prior-patch", m.cfg.prior_patch, "Patch of the prior maps feeding the queries")->capture_default_str();
    app->add_option("--mlp-hidden", m.cfg.mlp_hidden, "Hidden width of the query MLP")->capture_default_str();
    app->add_option("--prior", m.prior, "Query source: none, dcp, bcp or full")->capture_default_str();
    app->add_option("--decoder-block", m.decoder_block, "Decoder block: naf, res or vit")->capture_default_str();
    app->add_flag("--no-positional", m.no_positional, "Drop the learned positional embedding of the queries");
    app->add_option("--model-seed", m.seed, "Parameter initialization seed")->capture_default_str();
}

struct TrainOptions {
    TrainConfig cfg;
    bool no_augment = false;
    bool identity_features = false;
};

void add_train_options(CLI::App* app, TrainOptions& t) {
    auto& c = t.cfg;
    app->add_option("--lr", c.lr, "Base learning rate")->capture_default_str();
    app->add_option("--beta1", c.beta1, "Adam beta1")->capture_default_str();
    app->add_option("--beta2", c.beta2, "Adam beta2")->capture_default_str();
    app->add_option("--batch", c.batch, "Batch size")->capture_default_str();
    app->add_option("--steps", c.steps, "Optimizer steps")->capture_default_str();
    app->add_option("--crop", c.crop, "Training crop size")->capture_default_str();
    app->add_option("--cyclic-max-ratio", c.cyclic_max_ratio, "Peak learning rate as a multiple of --lr")->capture_default_str();
    app->add_option("--cycle-half", c.cyclic_half_cycle, "Steps from base to peak learning rate")->capture_default_str();
    app->add_option("--seed", c.seed, "Sampling seed")->capture_default_str();
    app->add_option("--checkpoint-every", c.checkpoint_every, "Intermediate checkpoint period (0: final only)")->capture_default_str();
    app->add_flag("--no-augment", t.no_augment, "Disable rotation/flip augmentation");
}

void add_supervised_options(CLI::App* app, TrainOptions& t) {
    app->add_option("--lambda-per", t.cfg.supervised.lambda_per, "Perceptual loss weight")->capture_default_str();
    app->add_option("--psnr-eps", t.cfg.supervised.psnr_eps, "MSE floor of the PSNR loss")->capture_default_str();
    app->add_flag("--identity-features", t.identity_features, "Use the identity feature extractor for the perceptual loss");
}

void add_unsupervised_options(CLI::App* app, TrainOptions& t) {
    auto& u = t.cfg.unsupervised;
    app->add_option("--lambda-dcp", u.lambda_dcp, "Dark-channel loss weight")->capture_default_str();
    app->add_option("--lambda-bcp", u.lambda_bcp, "Bright-channel loss weight")->capture_default_str();
    app->add_option("--lambda-spa", u.lambda_spa, "Spatial consistency weight")->capture_default_str();
    app->add_option("--lambda-exp", u.lambda_exp, "Exposure control weight")->capture_default_str();
    app->add_option("--lambda-col", u.lambda_col, "Color constancy weight")->capture_default_str();
    app->add_option("--dcp-inner-lambda", u.dcp_inner_lambda, "Penalty weight inside the dark-channel loss")->capture_default_str();
    app->add_option("--exposure-level", u.exposure_level, "Target exposure")->capture_default_str();
}

TrainConfig finish(TrainOptions t, Stage stage, const fs::path& out, const std::string& run_name = "") {
    t.cfg.stage = stage;
    t.cfg.augment = !t.no_augment;
    t.cfg.supervised.identity_extractor = t.identity_features;
    t.cfg.out_dir = out;
    t.cfg.run_name = run_name;
    t.cfg.validate();
    return t.cfg;
}

void add_bccr_options(CLI::App* app, BccrParams& b) {
    app->add_option("--bccr-lambda", b.lambda_reg, "Data weight of the contextual regularization")->capture_default_str();
    app->add_option("--bccr-iters", b.iters, "Reweighting iterations")->capture_default_str();
    app->add_option("--bccr-patch", b.patch, "Closing patch of the boundary constraint")->capture_default_str();
    app->add_option("--bccr-sigma", b.weight_sigma, "Edge sensitivity of the contextual weights")->capture_default_str();
}

std::optional<Split> parse_split_option(const std::string& s) {
    if (s == "all") return std::nullopt;
    return parse_split(s);
}

void report(std::ostream& out, const std::string& what, const TrainResult& r) {
    out << what << ": " << r.steps << " steps";
    if (!r.log.empty()) out << ", final total " << r.log.back().values.at("total");
    out << ", parameters " << r.parameter_hash;
    if (r.checkpoint) out << ", checkpoint " << r.checkpoint->string();
    out << '\n';
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Night-time haze synthesis, dehazing and semi-supervised training", "nighthaze"};
    app.set_config("--config", "", "Read options from an INI/TOML file (one section per subcommand)");
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a paired synthetic night-haze dataset");
    SynthRanges ranges;
    int count = 8, crop_size = 0, crops_per_image = 1;
    std::uint64_t synth_seed = 0;
    fs::path synth_out;
    synth->add_option("--count", count, "Number of source scenes")->capture_default_str();
    synth->add_option("--out", synth_out, "Output dataset root")->required();
    synth->add_option("--height", ranges.height, "Scene height")->capture_default_str();
    synth->add_option("--width", ranges.width, "Scene width")->capture_default_str();
    synth->add_option("--crop", crop_size, "Square crop size (0: whole scene, must then be square)")->capture_default_str();
    synth->add_option("--crops-per-image", crops_per_image, "Crops taken from each scene")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
    synth->add_option("--min-lights", ranges.min_lights)->capture_default_str();
    synth->add_option("--max-lights", ranges.max_lights)->capture_default_str();
    synth->add_option("--beta-min", ranges.min_beta, "Smallest haze density")->capture_default_str();
    synth->add_option("--beta-max", ranges.max_beta, "Largest haze density")->capture_default_str();
    synth->add_option("--glow-min", ranges.min_glow)->capture_default_str();
    synth->add_option("--glow-max", ranges.max_glow)->capture_default_str();
    synth->add_option("--degradations", ranges.enabled, "Bit mask: 1 glow, 2 bloom, 4 blur, 8 noise")->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Supervised pre-training on a paired manifest");
    ModelOptions train_model;
    TrainOptions train_opts{TrainConfig::desk(Stage::Pretrain)};
    fs::path train_manifest, train_out, train_init;
    train->add_option("--manifest", train_manifest, "Paired manifest")->required();
    train->add_option("--out", train_out, "Output directory")->required();
    train->add_option("--init", train_init, "Start from this checkpoint instead of a fresh model");
    add_model_options(train, train_model);
    add_train_options(train, train_opts);
    add_supervised_options(train, train_opts);

    // adapt
    auto* adapt = app.add_subcommand("adapt", "Unsupervised adaptation on unpaired hazy images");
    TrainOptions adapt_opts{TrainConfig::desk(Stage::Unsupervised)};
    fs::path adapt_manifest, adapt_out, adapt_ckpt;
    adapt->add_option("--manifest", adapt_manifest, "Manifest of hazy images")->required();
    adapt->add_option("--ckpt", adapt_ckpt, "Pre-trained checkpoint")->required();
    adapt->add_option("--out", adapt_out, "Output directory")->required();
    add_train_options(adapt, adapt_opts);
    add_unsupervised_options(adapt, adapt_opts);

    // pseudo-gt
    auto* pseudo = app.add_subcommand("pseudo-gt", "Build pseudo ground truth with the model and BCCR");
    BccrParams pseudo_bccr;
    fs::path pseudo_manifest, pseudo_out, pseudo_ckpt;
    pseudo->add_option("--manifest", pseudo_manifest, "Manifest of hazy images")->required();
    pseudo->add_option("--ckpt", pseudo_ckpt, "Adapted checkpoint")->required();
    pseudo->add_option("--out", pseudo_out, "Output dataset root")->required();
    add_bccr_options(pseudo, pseudo_bccr);

    // finetune
    auto* fine = app.add_subcommand("finetune", "Supervised fine-tuning on pseudo pairs");
    TrainOptions fine_opts{TrainConfig::desk(Stage::Finetune)};
    TrainOptions fine_adapt_opts{TrainConfig::desk(Stage::Unsupervised)};
    BccrParams fine_bccr;
    fs::path fine_manifest, fine_out, fine_ckpt, fine_synthetic, fine_real;
    int cycles = 0, adapt_steps = 100;
    fine->add_option("--manifest", fine_manifest, "Paired pseudo-GT manifest (omit with --cycles)");
    fine->add_option("--ckpt", fine_ckpt, "Starting checkpoint")->required();
    fine->add_option("--out", fine_out, "Output directory")->required();
    fine->add_option("--synthetic", fine_synthetic, "Paired synthetic manifest for mixing");
    fine->add_option("--mix", fine_opts.cfg.synthetic_mix, "Fraction of batch items drawn from --synthetic")->capture_default_str();
    fine->add_option("--cycles", cycles, "Repeat adapt, pseudo-GT and fine-tune this many times on --real")->capture_default_str();
    fine->add_option("--real", fine_real, "Manifest of real hazy images for --cycles");
    fine->add_option("--adapt-steps", adapt_steps, "Adaptation steps per cycle")->capture_default_str();
    add_train_options(fine, fine_opts);
    add_supervised_options(fine, fine_opts);
    add_bccr_options(fine, fine_bccr);

    // dehaze
    auto* dehaze = app.add_subcommand("dehaze", "Dehaze one PNG image");
    std::string dehaze_method = "bccr";
    fs::path dehaze_in, dehaze_out, dehaze_ckpt;
    BccrParams dehaze_bccr_params;
    dehaze->add_option("--method", dehaze_method, "bccr, dcp or model")->capture_default_str();
    dehaze->add_option("--ckpt", dehaze_ckpt, "Checkpoint for --method model");
    dehaze->add_option("input", dehaze_in, "Input PNG")->required();
    dehaze->add_option("output", dehaze_out, "Output PNG")->required();
    add_bccr_options(dehaze, dehaze_bccr_params);

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "PSNR/SSIM of a model or classical method on a paired manifest");
    fs::path eval_manifest, eval_ckpt, eval_table;
    std::string eval_method = "model", eval_split = "test";
    evaluate_cmd->add_option("--manifest", eval_manifest, "Paired manifest")->required();
    evaluate_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint (implies --method model)");
    evaluate_cmd->add_option("--method", eval_method, "model, bccr, dcp or identity")->capture_default_str();
    evaluate_cmd->add_option("--split", eval_split, "train, val, test or all")->capture_default_str();
    evaluate_cmd->add_option("--table", eval_table, "Also write the table to this file");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Train and score every variant along one ablation axis");
    ModelOptions ablate_model;
    TrainOptions ablate_opts{TrainConfig::desk(Stage::Pretrain)};
    TrainOptions ablate_adapt{TrainConfig::desk(Stage::Unsupervised)};
    fs::path ablate_manifest, ablate_out, ablate_table;
    std::string ablate_axis = "priors", ablate_split = "val";
    int ablate_adapt_steps = 50;
    ablate->add_option("--manifest", ablate_manifest, "Paired manifest with train and evaluation splits")->required();
    ablate->add_option("--axis", ablate_axis, "priors, blocks or losses")->capture_default_str();
    ablate->add_option("--out", ablate_out, "Directory for per-variant logs and checkpoints");
    ablate->add_option("--table", ablate_table, "Also write the table to this file");
    ablate->add_option("--split", ablate_split, "Evaluation split")->capture_default_str();
    ablate->add_option("--adapt-steps", ablate_adapt_steps, "Adaptation steps per variant (losses axis)")->capture_default_str();
    add_model_options(ablate, ablate_model);
    add_train_options(ablate, ablate_opts);
    add_supervised_options(ablate, ablate_opts);

    std::vector<const char*> argv{"nighthaze"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return 2;
    }

    try {
        if (*synth) {
            const int size = crop_size > 0 ? crop_size : std::min(ranges.height, ranges.width);
            if (crop_size == 0 && ranges.height != ranges.width) throw ParameterError("--crop is required for non-square scenes");
            const DatasetManifest m = generate_dataset(count, synth_out, ranges, size, crops_per_image, synth_seed);
            out << "wrote " << m.samples.size() << " pairs and " << (synth_out / "manifest.tsv").string() << '\n';
        } else if (*train) {
            const DatasetManifest m = read_manifest(train_manifest);
            std::optional<nn::PriorQueryTransformer> model;
            if (!train_init.empty()) model.emplace(nn::load_checkpoint(train_init).model);
            else model.emplace(train_model.resolve(), train_model.seed);
            const TrainResult r = pretrain(*model, m, finish(train_opts, Stage::Pretrain, train_out));
            report(out, "pretrain", r);
        } else if (*adapt) {
            const DatasetManifest m = read_manifest(adapt_manifest);
            auto loaded = nn::load_checkpoint(adapt_ckpt);
            const TrainResult r = unsupervised_adapt(loaded.model, m, finish(adapt_opts, Stage::Unsupervised, adapt_out));
            report(out, "adapt", r);
        } else if (*pseudo) {
            const DatasetManifest m = read_manifest(pseudo_manifest);
            const auto loaded = nn::load_checkpoint(pseudo_ckpt);
            const PseudoGtResult r = generate_pseudo_gt(loaded.model, m, pseudo_bccr, pseudo_out);
            out << "wrote " << r.pairs.size() << " pseudo pairs, " << r.manifest_path.string() << " and "
                << r.provenance_path.string() << '\n';
        } else if (*fine) {
            auto loaded = nn::load_checkpoint(fine_ckpt);
            std::optional<DatasetManifest> synthetic;
            if (!fine_synthetic.empty()) synthetic = read_manifest(fine_synthetic);
            if (cycles > 0) {
                if (fine_real.empty()) throw ParameterError("--cycles needs --real");
                const DatasetManifest real = read_manifest(fine_real);
                for (int c = 0; c < cycles; ++c) {
                    const std::string tag = "cycle" + std::to_string(c + 1);
                    TrainOptions a = fine_adapt_opts;
                    a.cfg.steps = adapt_steps;
                    report(out, tag + " adapt", unsupervised_adapt(loaded.model, real, finish(a, Stage::Unsupervised, fine_out, tag + "_adapt")));
                    const PseudoGtResult p = generate_pseudo_gt(loaded.model, real, fine_bccr, fine_out / (tag + "_pseudo"));
                    report(out, tag + " finetune",
                           finetune(loaded.model, p.manifest, finish(fine_opts, Stage::Finetune, fine_out, tag + "_finetune"), synthetic));
                }
            } else {
                if (fine_manifest.empty()) throw ParameterError("--manifest is required unless --cycles is given");
                report(out, "finetune",
                       finetune(loaded.model, read_manifest(fine_manifest), finish(fine_opts, Stage::Finetune, fine_out), synthetic));
            }
        } else if (*dehaze) {
            const ImageRGB img = load_image(dehaze_in);
            ImageRGB result;
            if (dehaze_method == "bccr") result = dehaze_bccr(img, dehaze_bccr_params);
            else if (dehaze_method == "dcp") result = dehaze_dcp(img);
            else if (dehaze_method == "model") {
                if (dehaze_ckpt.empty()) throw ParameterError("--method model needs --ckpt");
                result = nn::load_checkpoint(dehaze_ckpt).model.infer(img);
            } else {
                throw ParameterError("unknown method '" + dehaze_method + "' (expected bccr, dcp or model)");
            }
            save_image(result, dehaze_out);
            out << "wrote " << dehaze_out.string() << '\n';
        } else if (*evaluate_cmd) {
            const DatasetManifest m = read_manifest(eval_manifest);
            std::optional<nn::PriorQueryTransformer> model;
            Dehazer method;
            if (!eval_ckpt.empty()) eval_method = "model";
            if (eval_method == "model") {
                if (eval_ckpt.empty()) throw ParameterError("--method model needs --ckpt");
                model.emplace(nn::load_checkpoint(eval_ckpt).model);
                method = [&model](const ImageRGB& img) { return model->infer(img); };
            } else if (eval_method == "bccr") {
                method = [](const ImageRGB& img) { return dehaze_bccr(img); };
            } else if (eval_method == "dcp") {
                method = [](const ImageRGB& img) { return dehaze_dcp(img); };
            } else if (eval_method == "identity") {
                method = [](const ImageRGB& img) { return img; };
            } else {
                throw ParameterError("unknown method '" + eval_method + "'");
            }
            const EvaluationResult r = evaluate(m, method, parse_split_option(eval_split));
            r.write_table(out);
            if (!eval_table.empty()) {
                std::ofstream os(eval_table);
                if (!os) throw IoError("cannot write " + eval_table.string());
                r.write_table(os);
            }
        } else if (*ablate) {
            AblationConfig cfg;
            cfg.model = ablate_model.resolve();
            cfg.model_seed = ablate_model.seed;
            cfg.train = finish(ablate_opts, Stage::Pretrain, ablate_out);
            ablate_adapt.cfg.steps = ablate_adapt_steps;
            cfg.adapt = finish(ablate_adapt, Stage::Unsupervised, ablate_out);
            const auto split = parse_split_option(ablate_split);
            if (!split) throw ParameterError("ablation needs a single evaluation split");
            cfg.eval_split = *split;
            const AblationTable t = run_ablation(parse_ablation_axis(ablate_axis), read_manifest(ablate_manifest), cfg);
            t.write(out);
            if (!ablate_table.empty()) {
                std::ofstream os(ablate_table);
                if (!os) throw IoError("cannot write " + ablate_table.string());
                t.write(os);
            }
        }
    } catch (const std::exception& e) {
        err << "nighthaze: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace nighthaze

#include <doctest.h>

#include <sstream>

#include "nighthaze/checkpoint.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/haze_synth.hpp"
#include "nighthaze/image_io.hpp"
#include "nighthaze/pipeline.hpp"
#include "nighthaze/priors.hpp"
#include "support.hpp"

using namespace nighthaze;
using nighthaze::testing::TempDir;

namespace {

nn::ModelConfig tiny() {
    nn::ModelConfig c;
    c.base_width = 4;
    c.num_scales = 2;
    c.blocks_per_scale = {1};
    c.decoder_blocks_per_scale = {1};
    c.bottleneck_blocks = 1;
    c.heads = 2;
    c.embed_dim = 8;
    c.mlp_hidden = 4;
    c.pos_grid = 4;
    c.vit_window = 4;
    return c;
}

TrainConfig quick(Stage stage, const std::filesystem::path& out = {}) {
    TrainConfig c = TrainConfig::desk(stage);
    c.batch = 2;
    c.crop = 16;
    c.steps = 3;
    c.out_dir = out;
    return c;
}

DatasetManifest make_data(const std::filesystem::path& root, int count = 10) {
    SynthRanges r;
    r.height = 24;
    r.width = 24;
    return generate_dataset(count, root, r, 24, 1, 5);
}

}  // namespace

TEST_CASE("stage presets") {
    CHECK(TrainConfig::defaults(Stage::Pretrain).lr == 2e-4);
    CHECK(TrainConfig::defaults(Stage::Unsupervised).lr == 5e-5);
    CHECK(TrainConfig::defaults(Stage::Pretrain).batch == 16);
    CHECK(TrainConfig::defaults(Stage::Pretrain).crop == 256);
    CHECK(TrainConfig::desk(Stage::Finetune).batch == 4);
    TrainConfig bad = quick(Stage::Pretrain);
    bad.synthetic_mix = 2;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("pretraining writes log, checkpoint and curve") {
    TempDir dir("pretrain");
    const DatasetManifest data = make_data(dir / "data");
    nn::PriorQueryTransformer model(tiny(), 1);
    const std::string before = model.parameter_hash();
    TrainConfig cfg = quick(Stage::Pretrain, dir / "run");
    cfg.checkpoint_every = 2;
    const TrainResult r = pretrain(model, data, cfg);
    CHECK(r.steps == 3);
    CHECK(r.log.size() == 3);
    CHECK(r.parameter_hash == model.parameter_hash());
    CHECK(r.parameter_hash != before);
    REQUIRE(r.checkpoint.has_value());
    CHECK(nn::load_checkpoint(*r.checkpoint).model.parameter_hash() == r.parameter_hash);
    CHECK(std::filesystem::exists(dir / "run" / "pretrain_step000002.ckpt"));
    REQUIRE(r.log_path.has_value());
    CHECK(read_training_log(*r.log_path).size() == 3);
    REQUIRE(r.curve_path.has_value());
    CHECK(std::filesystem::exists(*r.curve_path));
    for (const auto& e : r.log) CHECK(e.values.count("total") == 1);
}

TEST_CASE("training is reproducible for every stage") {
    TempDir dir("repro");
    const DatasetManifest data = make_data(dir / "data");
    auto run = [&](Stage stage) {
        nn::PriorQueryTransformer m(tiny(), 2);
        const TrainConfig cfg = quick(stage);
        if (stage == Stage::Pretrain) return pretrain(m, data, cfg).parameter_hash;
        if (stage == Stage::Unsupervised) return unsupervised_adapt(m, data, cfg).parameter_hash;
        return finetune(m, data, cfg, data).parameter_hash;
    };
    for (Stage s : {Stage::Pretrain, Stage::Unsupervised, Stage::Finetune}) CHECK(run(s) == run(s));
    nn::PriorQueryTransformer a(tiny(), 2), b(tiny(), 2);
    TrainConfig c1 = quick(Stage::Pretrain), c2 = quick(Stage::Pretrain);
    c2.seed = 1;
    CHECK(pretrain(a, data, c1).parameter_hash != pretrain(b, data, c2).parameter_hash);
}

TEST_CASE("pretraining rejects unpaired or empty data") {
    TempDir dir("reject");
    DatasetManifest data = make_data(dir / "data");
    nn::PriorQueryTransformer m(tiny(), 0);
    DatasetManifest unpaired = data;
    unpaired.paired = false;
    for (auto& s : unpaired.samples) s.clean.reset();
    CHECK_THROWS_AS(pretrain(m, unpaired, quick(Stage::Pretrain)), DataError);
    DatasetManifest empty;
    empty.paired = true;
    CHECK_THROWS_AS(pretrain(m, empty, quick(Stage::Pretrain)), DataError);
}

TEST_CASE("pseudo ground truth records provenance and round-trips") {
    TempDir dir("pseudo");
    const DatasetManifest data = make_data(dir / "data", 4);
    const nn::PriorQueryTransformer m(tiny(), 3);
    const BccrParams bccr;
    const PseudoGtResult r = generate_pseudo_gt(m, data, bccr, dir / "pseudo");
    REQUIRE(r.pairs.size() == 4);
    CHECK(read_manifest(r.manifest_path) == r.manifest);
    CHECK(r.manifest.paired);
    const auto prov = read_provenance(r.provenance_path);
    REQUIRE(prov.size() == 4);
    for (std::size_t i = 0; i < prov.size(); ++i) {
        CHECK(prov[i].first == r.pairs[i].sample_id);
        CHECK(prov[i].second.coarse_checkpoint_id == m.parameter_hash());
        CHECK(prov[i].second.bccr_params_hash == fnv1a_hex(bccr.serialize()));
        CHECK(r.pairs[i].pseudo_gt.same_size(r.pairs[i].hazy));
    }
}

TEST_CASE("ablation axes and variants") {
    CHECK(ablation_variants(AblationAxis::Priors) ==
          std::vector<std::string>{"no_priors", "q_dcp_only", "q_bcp_only", "full"});
    CHECK(ablation_variants(AblationAxis::Blocks).size() == 4);
    CHECK(ablation_variants(AblationAxis::UnsupervisedLosses).size() == 6);
    CHECK(parse_ablation_axis("losses") == AblationAxis::UnsupervisedLosses);
    CHECK_THROWS_AS(parse_ablation_axis("depth"), ParameterError);
}

TEST_CASE("ablation table is complete and deterministic") {
    TempDir dir("ablate");
    const DatasetManifest data = make_data(dir / "data");
    AblationConfig cfg;
    cfg.model = tiny();
    cfg.train = quick(Stage::Pretrain);
    cfg.adapt = quick(Stage::Unsupervised);
    for (AblationAxis axis : {AblationAxis::Priors, AblationAxis::Blocks, AblationAxis::UnsupervisedLosses}) {
        const AblationTable a = run_ablation(axis, data, cfg);
        const AblationTable b = run_ablation(axis, data, cfg);
        REQUIRE(a.rows.size() == ablation_variants(axis).size());
        std::ostringstream sa, sb;
        a.write(sa);
        b.write(sb);
        CHECK(sa.str() == sb.str());
    }
}

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "nighthaze/checkpoint.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/losses.hpp"
#include "nighthaze/network.hpp"
#include "nighthaze/ops.hpp"
#include "support.hpp"

using namespace nighthaze;
using namespace nighthaze::nn;
using nighthaze::testing::check_gradient;
using nighthaze::testing::random_tensor;
using nighthaze::testing::sample_entries;
using nighthaze::testing::TempDir;

namespace {

ModelConfig tiny(BlockKind block = BlockKind::Naf, PriorMode prior = PriorMode::Full) {
    ModelConfig c;
    c.base_width = 4;
    c.num_scales = 2;
    c.blocks_per_scale = {1};
    c.decoder_blocks_per_scale = {1};
    c.bottleneck_blocks = 1;
    c.heads = 2;
    c.embed_dim = 8;
    c.mlp_hidden = 4;
    c.pos_grid = 4;
    c.vit_window = 2;
    c.decoder_block = block;
    c.prior = prior;
    return c;
}

// Moves the zero-initialized residual scales off zero so every branch
// carries gradient.
void perturb_scales(PriorQueryTransformer& m) {
    std::uint64_t s = 1;
    for (auto& [name, t] : m.parameters())
        if (name.ends_with(".beta") || name.ends_with(".gamma"))
            t.values() = random_tensor(t.shape(), s++, -0.5, 0.5).values();
}

}  // namespace

TEST_CASE("config serializes, parses and validates") {
    ModelConfig c = tiny(BlockKind::Vit, PriorMode::BcpOnly);
    c.positional = false;
    CHECK(ModelConfig::parse(c.serialize()) == c);
    ModelConfig bad = c;
    bad.blocks_per_scale = {1, 1};
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    bad = c;
    bad.embed_dim = 7;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
    CHECK_THROWS_AS(parse_block_kind("mlp"), ParameterError);
    CHECK(parse_prior_mode(to_string(PriorMode::DcpOnly)) == PriorMode::DcpOnly);
}

TEST_CASE("forward preserves shape for every block kind, padding included") {
    for (BlockKind k : {BlockKind::Naf, BlockKind::Res, BlockKind::Vit}) {
        const PriorQueryTransformer m(tiny(k), 1);
        for (auto [h, w] : {std::pair{8, 8}, std::pair{7, 5}, std::pair{9, 12}}) {
            NoGradGuard guard;
            const Tensor x = random_tensor({2, 3, h, w}, 3);
            CHECK(m.forward(x).shape() == Shape{2, 3, h, w});
        }
    }
}

TEST_CASE("residual scales start at zero") {
    const PriorQueryTransformer m(tiny(), 0);
    CHECK(m.param("mid.0.beta").values() == std::vector<double>(m.param("mid.0.beta").numel(), 0.0));
    CHECK(m.param("mid.0.gamma").values() == std::vector<double>(m.param("mid.0.gamma").numel(), 0.0));
}

TEST_CASE("initialization is seeded") {
    const PriorQueryTransformer a(tiny(), 5), b(tiny(), 5), c(tiny(), 6);
    CHECK(a.parameter_hash() == b.parameter_hash());
    CHECK(a.parameter_hash() != c.parameter_hash());
    CHECK(a.parameter_count() == c.parameter_count());
}

TEST_CASE("prior modes share the parameter set") {
    const PriorQueryTransformer full(tiny(BlockKind::Naf, PriorMode::Full), 3);
    const PriorQueryTransformer none(tiny(BlockKind::Naf, PriorMode::None), 3);
    CHECK(full.parameter_hash() == none.parameter_hash());
    NoGradGuard guard;
    const Tensor x = random_tensor({1, 3, 8, 8}, 2);
    const Tensor q = none.prior_queries(x);
    for (double v : q.values()) CHECK(v == 0.0);
}

TEST_CASE("prior tokens are pooled dark plus bright channels") {
    ModelConfig c = tiny();
    c.prior_patch = 1;
    const PriorQueryTransformer m(c, 0);
    NoGradGuard guard;
    const Tensor x = Tensor::full({1, 3, 4, 4}, 0.25);
    const Tensor t = m.prior_tokens(x);
    CHECK(t.shape() == Shape{1, 4, 1});
    for (double v : t.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("clone duplicates storage, copies share it") {
    PriorQueryTransformer a(tiny(), 1);
    PriorQueryTransformer shared = a;
    PriorQueryTransformer cloned = a.clone();
    a.param("intro.weight").values()[0] += 1.0;
    CHECK(shared.parameter_hash() == a.parameter_hash());
    CHECK(cloned.parameter_hash() != a.parameter_hash());
}

TEST_CASE("network parameter gradients match finite differences") {
    for (BlockKind k : {BlockKind::Naf, BlockKind::Res, BlockKind::Vit}) {
        PriorQueryTransformer m(tiny(k), 2);
        perturb_scales(m);
        const Tensor x = random_tensor({2, 3, 8, 8}, 4);
        const Tensor gt = random_tensor({2, 3, 8, 8}, 5);
        for (const char* name : {"intro.weight", "mid.0.conv1.weight", "xattn.q.weight", "xattn.k.weight", "xattn.out.weight", "query.fc1.weight",
                                 "query.pos", "dec0.0.conv1.weight", "dec0.0.q.weight", "dec0.0.beta", "ending.bias"}) {
            if (!m.has_param(name)) continue;
            Tensor p = m.param(name);
            const auto r = check_gradient([&] { return psnr_loss(m.forward(x), gt); }, p, sample_entries(p, 6, 1));
            CAPTURE(name);
            CHECK(r.analytic_norm > 0);
            CHECK(r.rel_err <= 1e-5);
        }
    }
}

TEST_CASE("cross-attention weights are row-stochastic") {
    PriorQueryTransformer m(tiny(), 3);
    ForwardTrace trace;
    NoGradGuard guard;
    m.forward(random_tensor({2, 3, 8, 8}, 1), &trace);
    REQUIRE(trace.attention_shape.size() == 4);
    const int tk = trace.attention_shape[3];
    for (std::size_t r = 0; r < trace.attention.size() / static_cast<std::size_t>(tk); ++r) {
        double s = 0;
        for (int j = 0; j < tk; ++j) s += trace.attention[r * static_cast<std::size_t>(tk) + static_cast<std::size_t>(j)];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    const PriorQueryTransformer m(tiny(BlockKind::Vit, PriorMode::DcpOnly), 9);
    save_checkpoint(m, 42, dir / "sub" / "m.ckpt");
    const LoadedCheckpoint back = load_checkpoint(dir / "sub" / "m.ckpt");
    CHECK(back.step == 42);
    CHECK(back.model.config() == m.config());
    CHECK(back.model.parameter_hash() == m.parameter_hash());
    CHECK_THROWS_AS(load_checkpoint(dir / "none.ckpt"), NotFoundError);
    {
        std::ofstream os(dir / "bad.ckpt", std::ios::binary);
        os << "garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST_CASE("infer clamps and keeps image size") {
    const PriorQueryTransformer m(tiny(), 1);
    const ImageRGB img = nighthaze::testing::random_rgb(7, 9, 2);
    const ImageRGB out = m.infer(img);
    CHECK(out.same_size(img));
    for (double v : out.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

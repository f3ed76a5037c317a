#include <doctest.h>

#include "nighthaze/classical.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/haze_synth.hpp"
#include "nighthaze/metrics.hpp"
#include "support.hpp"

using namespace nighthaze;
using nighthaze::testing::random_rgb;

TEST_CASE("boundary constraint lies in [t_min, 1]") {
    const ImageRGB img = random_rgb(16, 16, 1);
    const AtmosphericLight a = estimate_atmospheric_light(img, 5);
    const ImageGray t = boundary_constraint(img, a, BccrParams{});
    for (double v : t.values()) {
        CHECK(v >= kTransmissionFloor);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("contextual regularization never increases the objective") {
    const ImageRGB img = random_rgb(20, 18, 2);
    const AtmosphericLight a = estimate_atmospheric_light(img, 5);
    BccrParams p;
    const ImageGray tb = boundary_constraint(img, a, p);
    RegularizeTrace trace;
    const ImageGray t = contextual_regularize(tb, img, p, &trace);
    REQUIRE(trace.objective.size() >= 2);
    for (std::size_t i = 1; i < trace.objective.size(); ++i) CHECK(trace.objective[i] <= trace.objective[i - 1] + 1e-12);
    const auto w = contextual_weights(img, p.weight_sigma);
    CHECK(contextual_objective(t, tb, w, p.lambda_reg) == doctest::Approx(trace.objective.back()).epsilon(1e-9));
    CHECK(weighted_tv(t, w) <= weighted_tv(tb, w) + 1e-12);
}

TEST_CASE("weighted tv of a constant map is zero") {
    const ImageRGB guide = random_rgb(6, 6, 3);
    const auto w = contextual_weights(guide, 0.25);
    REQUIRE(w.size() == 4);
    CHECK(weighted_tv(ImageGray(6, 6, 0.3), w) == 0.0);
}

TEST_CASE("recover_radiance inverts the scattering model") {
    const ImageRGB clean = random_rgb(8, 8, 4, 0.1, 0.9);
    const Rgb a{0.8, 0.7, 0.75};
    ImageGray t(8, 8);
    int k = 0;
    for (double& v : t.data()) v = 0.3 + 0.6 * ((k++ % 7) / 6.0);
    ImageRGB hazy(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            for (int c = 0; c < 3; ++c) hazy.at(y, x, c) = clean.at(y, x, c) * t.at(y, x) + a[c] * (1 - t.at(y, x));
    const ImageRGB back = recover_radiance(hazy, t, a);
    for (std::size_t i = 0; i < back.values().size(); ++i) CHECK(back.values()[i] == doctest::Approx(clean.values()[i]).epsilon(1e-12));
}

TEST_CASE("dehazers keep the image size and range") {
    const ImageRGB img = random_rgb(24, 20, 5);
    for (const ImageRGB& out : {dehaze_bccr(img), dehaze_dcp(img)}) {
        CHECK(out.same_size(img));
        for (double v : out.values()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("bccr improves a glow-free synthetic hazy image") {
    SceneSpec spec;
    spec.seed = 3;
    spec.height = 48;
    spec.width = 48;
    const CleanScene scene = render_clean_scene(spec);
    const HazeLayers layers = compose_haze(scene.clean, scene.depth, spec, scene.lights, 0.0);
    CHECK(psnr(dehaze_bccr(layers.hazy), scene.clean) > psnr(layers.hazy, scene.clean));
}

TEST_CASE("bccr parameters validate and serialize stably") {
    BccrParams p;
    CHECK(p.serialize() == BccrParams{}.serialize());
    p.iters = 0;
    CHECK_THROWS_AS(p.validate(), ParameterError);
    BccrParams q;
    q.lambda_reg = 5;
    CHECK(q.serialize() != BccrParams{}.serialize());
}

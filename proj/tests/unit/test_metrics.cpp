#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "nighthaze/error.hpp"
#include "nighthaze/image_io.hpp"
#include "nighthaze/metrics.hpp"
#include "nighthaze/plot.hpp"
#include "support.hpp"

using namespace nighthaze;
using nighthaze::testing::random_rgb;
using nighthaze::testing::TempDir;

TEST_CASE("psnr closed forms") {
    const ImageRGB a(8, 8, 0.5);
    CHECK(std::isinf(psnr(a, a)));
    CHECK(std::abs(psnr(a, ImageRGB(8, 8, 0.6)) - 20.0) <= 1e-9);
    CHECK(std::abs(psnr(ImageRGB(8, 8, 0.0), ImageRGB(8, 8, 1.0)) - 0.0) <= 1e-9);
    CHECK_THROWS_AS(psnr(a, ImageRGB(4, 8, 0.5)), ShapeError);
}

TEST_CASE("ssim identity and constant-image closed form") {
    const ImageRGB x = random_rgb(20, 17, 1);
    CHECK(ssim(x, x) == 1.0);
    const double c1 = 0.01 * 0.01;
    CHECK(ssim(ImageRGB(16, 16, 0.5), ImageRGB(16, 16, 0.6)) ==
          doctest::Approx((2 * 0.5 * 0.6 + c1) / (0.25 + 0.36 + c1)).epsilon(1e-12));
    CHECK(ssim(ImageRGB(5, 5, 0.2), ImageRGB(5, 5, 0.2)) == 1.0);
}

TEST_CASE("ssim is symmetric and drops with noise") {
    const ImageRGB x = random_rgb(24, 24, 2);
    ImageRGB y = x;
    int k = 0;
    for (double& v : y.data()) v = std::clamp(v + ((k++ % 5) - 2) * 0.05, 0.0, 1.0);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
    CHECK(ssim(x, y) < 1.0);
}

TEST_CASE("evaluate reports per-sample rows and their means") {
    TempDir dir("eval");
    DatasetManifest m;
    m.paired = true;
    for (int i = 0; i < 3; ++i) {
        const std::string id = "s" + std::to_string(2 - i);
        save_image(random_rgb(12, 12, static_cast<std::uint64_t>(i)), dir / ("h_" + id + ".png"));
        save_image(random_rgb(12, 12, static_cast<std::uint64_t>(10 + i)), dir / ("g_" + id + ".png"));
        m.samples.push_back({Split::Test, dir / ("h_" + id + ".png"), dir / ("g_" + id + ".png")});
    }
    const EvaluationResult r = evaluate(m, [](const ImageRGB& img) { return img; });
    REQUIRE(r.rows.size() == 3);
    CHECK(std::is_sorted(r.rows.begin(), r.rows.end(), [](auto& a, auto& b) { return a.sample_id < b.sample_id; }));
    double mp = 0, ms = 0;
    for (const auto& row : r.rows) {
        mp += row.psnr / 3;
        ms += row.ssim / 3;
    }
    CHECK(r.mean_psnr == doctest::Approx(mp).epsilon(1e-12));
    CHECK(r.mean_ssim == doctest::Approx(ms).epsilon(1e-12));
    std::ostringstream os;
    r.write_table(os);
    CHECK(os.str().find("#mean") != std::string::npos);
    CHECK_THROWS_AS(evaluate(m, [](const ImageRGB& img) { return img; }, Split::Val), DataError);
}

TEST_CASE("metric formatting") {
    CHECK(format_metric(std::numeric_limits<double>::infinity()) == "inf");
    CHECK(format_metric(1.5) == "1.500000");
}

TEST_CASE("training curve plot") {
    TempDir dir("plot");
    std::vector<LogEntry> log;
    for (int i = 1; i <= 20; ++i) log.push_back({static_cast<std::uint64_t>(i), 1e-4, {{"total", 1.0 / i}}});
    plot_training_curve(log, dir / "c.png");
    const ImageRGB img = load_image(dir / "c.png");
    CHECK(img.width() == 480);
    CHECK(img.height() == 320);
    CHECK_THROWS_AS(plot_training_curve(log, dir / "d.png", "missing"), DataError);
    {
        std::ofstream os(dir / "t.log");
        os << "1\t0.0002\tpsnr=-10\ttotal=-10\n2\t0.0002\tpsnr=-11\ttotal=-11\n";
    }
    const auto back = read_training_log(dir / "t.log");
    REQUIRE(back.size() == 2);
    CHECK(back[1].values.at("psnr") == -11);
}

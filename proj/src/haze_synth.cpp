#include "nighthaze/haze_synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "nighthaze/augment.hpp"
#include "nighthaze/error.hpp"
#include "nighthaze/image_io.hpp"

namespace fs = std::filesystem;

namespace nighthaze {

namespace {

constexpr double kMaxTexture = 0.25;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Street-light palette: sodium, warm white, cool white, neon red/cyan/green.
const Rgb kPalette[] = {{1.0, 0.62, 0.2}, {1.0, 0.85, 0.6}, {0.8, 0.9, 1.0},
                        {1.0, 0.25, 0.3}, {0.2, 0.9, 1.0}, {0.4, 1.0, 0.45}};

void normalize_unit(std::vector<double>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double a = *lo, b = *hi;
    for (double& x : v) x = b - a > 1e-12 ? (x - a) / (b - a) : 0.0;
}

std::vector<double> render_depth(const SceneSpec& spec, std::mt19937_64& rng) {
    const int h = spec.height, w = spec.width;
    std::vector<double> ramp(static_cast<std::size_t>(h) * w), blobs(ramp.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) ramp[static_cast<std::size_t>(y) * w + x] = 1.0 - (h > 1 ? double(y) / (h - 1) : 0.0);

    const int nblobs = uniform_int(rng, 3, 6);
    for (int b = 0; b < nblobs; ++b) {
        const double cy = uniform(rng, 0, h), cx = uniform(rng, 0, w);
        const double s = uniform(rng, 0.15, 0.4) * std::min(h, w);
        const double amp = uniform(rng, 0.4, 1.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                blobs[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-d2 / (2 * s * s));
            }
    }
    normalize_unit(blobs);

    std::vector<double> depth(ramp.size());
    for (std::size_t i = 0; i < depth.size(); ++i) {
        switch (spec.depth_style) {
            case DepthStyle::LinearRamp: depth[i] = ramp[i]; break;
            case DepthStyle::Blobs: depth[i] = blobs[i]; break;
            case DepthStyle::Mixed: depth[i] = 0.6 * ramp[i] + 0.4 * blobs[i]; break;
        }
    }
    normalize_unit(depth);
    return depth;
}

std::vector<PointLight> place_lights(const SceneSpec& spec, std::mt19937_64& rng) {
    std::vector<PointLight> lights;
    const int h = spec.height, w = spec.width;
    for (int i = 0; i < spec.num_lights; ++i) {
        PointLight l;
        l.radius = std::max(1.5, uniform(rng, 0.02, 0.035) * std::min(h, w));
        l.intensity = uniform(rng, 0.85, 1.0);
        l.color = kPalette[uniform_int(rng, 0, 5)];
        const double margin = l.radius + 1.0;
        bool placed = false;
        for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
            l.y = uniform(rng, margin, std::max(margin, h - 1 - margin));
            l.x = uniform(rng, margin, std::max(margin, w - 1 - margin));
            placed = std::all_of(lights.begin(), lights.end(), [&](const PointLight& o) {
                return std::hypot(o.y - l.y, o.x - l.x) > o.radius + l.radius + 4.0;
            });
        }
        if (!placed) throw ParameterError("cannot place " + std::to_string(spec.num_lights) + " separated lights");
        lights.push_back(l);
    }
    return lights;
}

// Separable Gaussian blur of one HWC raster, edge replicated.
std::vector<double> gaussian_blur(const std::vector<double>& src, int h, int w, double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2 * sigma * sigma));
    for (double& v : k) v /= sum;
    std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * src[(static_cast<std::size_t>(y) * w + clamp_index(x + i, w)) * 3 + c];
                tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
            }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[(static_cast<std::size_t>(clamp_index(y + i, h)) * w + x) * 3 + c];
                out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
            }
    return out;
}

}  // namespace

void SceneSpec::validate() const {
    if (height < 1 || width < 1) throw ParameterError("scene size must be positive");
    if (num_lights < 0) throw ParameterError("num_lights must be >= 0");
    if (haze_beta < 0) throw ParameterError("haze_beta must be >= 0");
    if (ambient < 0 || ambient > 1) throw ParameterError("ambient must lie in [0,1]");
    if (texture < 0 || texture > kMaxTexture) throw ParameterError("texture must lie in [0,0.25]");
    for (double v : airlight)
        if (v < 0 || v > 1) throw ParameterError("airlight must lie in [0,1]");
    if (!(airlight_sigma > 0)) throw ParameterError("airlight_sigma must be positive");
}

void DegradationConfig::validate() const {
    if (glow_strength < 0 || bloom_threshold < 0 || bloom_sigma < 0 || noise_sigma < 0) {
        throw ParameterError("degradation magnitudes must be >= 0");
    }
    if (blur_len < 1) throw ParameterError("blur_len must be >= 1");
}

CleanScene render_clean_scene(const SceneSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const int h = spec.height, w = spec.width;

    CleanScene scene;
    scene.depth = ImageGray(h, w, render_depth(spec, rng));
    scene.clean = ImageRGB(h, w, spec.ambient);

    if (spec.texture > 0) {
        // Building silhouettes with lit windows; each channel stays within
        // ambient + texture so nothing competes with the light sources.
        const int nbuild = uniform_int(rng, 3, 7);
        for (int b = 0; b < nbuild; ++b) {
            const int bw = uniform_int(rng, std::max(2, w / 10), std::max(3, w / 3));
            const int bh = uniform_int(rng, std::max(2, h / 6), std::max(3, (2 * h) / 3));
            const int x0 = uniform_int(rng, 0, std::max(0, w - bw));
            const int y0 = h - bh;
            const double level = uniform(rng, 0.2, 0.5) * spec.texture;
            const Rgb tint{uniform(rng, 0.7, 1.0), uniform(rng, 0.7, 1.0), uniform(rng, 0.7, 1.0)};
            const int period = uniform_int(rng, 3, 5);
            for (int y = y0; y < h; ++y)
                for (int x = x0; x < std::min(w, x0 + bw); ++x) {
                    const bool window = ((y - y0) % period == 1) && ((x - x0) % period == 1);
                    const double v = window ? spec.texture : level;
                    for (int c = 0; c < 3; ++c) scene.clean.at(y, x, c) = spec.ambient + v * tint[c];
                }
        }
        std::normal_distribution<double> grain(0.0, 0.08 * spec.texture);
        for (double& v : scene.clean.data()) v = std::clamp(v + grain(rng), spec.ambient * 0.5, spec.ambient + spec.texture);
    }

    scene.lights = place_lights(spec, rng);
    for (const auto& l : scene.lights) {
        Rgb core;
        for (int c = 0; c < 3; ++c) core[c] = std::min(1.0, l.intensity * (0.6 + 0.4 * l.color[c]));
        const int r = static_cast<int>(std::ceil(l.radius + 1));
        for (int y = std::max(0, int(l.y) - r); y <= std::min(h - 1, int(l.y) + r + 1); ++y)
            for (int x = std::max(0, int(l.x) - r); x <= std::min(w - 1, int(l.x) + r + 1); ++x) {
                const double d = std::hypot(y - l.y, x - l.x);
                const double cover = std::clamp(l.radius + 0.5 - d, 0.0, 1.0);
                if (cover <= 0) continue;
                for (int c = 0; c < 3; ++c) {
                    double& v = scene.clean.at(y, x, c);
                    v = v + cover * (core[c] - v);
                }
            }
    }
    scene.clean.clamp01();
    return scene;
}

ImageGray HazeLayers::transmission_map() const { return ImageGray(height, width, transmission); }

HazeLayers compose_haze(const ImageRGB& clean, const ImageGray& depth, const SceneSpec& spec,
                        const std::vector<PointLight>& lights, double glow_strength) {
    if (!clean.same_size(depth)) throw DimensionError("compose_haze: clean and depth differ in size");
    if (glow_strength < 0) throw ParameterError("glow_strength must be >= 0");
    const int h = clean.height(), w = clean.width();
    const std::size_t n = clean.pixel_count();

    HazeLayers L;
    L.height = h;
    L.width = w;
    L.transmission.resize(n);
    L.airlight.resize(3 * n);
    L.glow.assign(3 * n, 0.0);
    L.preclamp.resize(3 * n);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            L.transmission[p] = std::exp(-spec.haze_beta * depth.at(y, x));

            Rgb a = spec.airlight;
            const PointLight* nearest = nullptr;
            double best = 0;
            for (const auto& l : lights) {
                const double d = std::hypot(y - l.y, x - l.x);
                if (!nearest || d < best) {
                    nearest = &l;
                    best = d;
                }
            }
            if (nearest) {
                const double wt = std::exp(-best / spec.airlight_sigma);
                for (int c = 0; c < 3; ++c) a[c] = (1 - wt) * a[c] + wt * nearest->color[c];
            }
            for (int c = 0; c < 3; ++c) L.airlight[3 * p + c] = a[c];

            if (glow_strength > 0) {
                for (const auto& l : lights) {
                    const double sigma = 4.0 * l.radius * l.intensity;
                    const double d2 = (y - l.y) * (y - l.y) + (x - l.x) * (x - l.x);
                    const double g = glow_strength * l.intensity * std::exp(-d2 / (2 * sigma * sigma));
                    for (int c = 0; c < 3; ++c) L.glow[3 * p + c] += g * l.color[c];
                }
            }
        }
    }
    auto J = clean.data();
    for (std::size_t i = 0; i < 3 * n; ++i) {
        const double t = L.transmission[i / 3];
        L.preclamp[i] = J[i] * t + L.airlight[i] * (1 - t) + L.glow[i];
    }
    L.hazy = ImageRGB(h, w, L.preclamp);
    L.hazy.clamp01();
    return L;
}

ImageRGB recover_clean(const HazeLayers& L) {
    std::vector<double> out(L.preclamp.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double t = L.transmission[i / 3];
        out[i] = (L.preclamp[i] - L.airlight[i] * (1 - t) - L.glow[i]) / t;
    }
    return ImageRGB(L.height, L.width, std::move(out));
}

ImageGray motion_kernel(int length, double angle) {
    if (length < 1) throw ParameterError("blur length must be >= 1");
    const int size = length % 2 == 1 ? length : length + 1;
    ImageGray k(size, size, 0.0);
    const int c = size / 2;
    if (length == 1) {
        k.at(c, c) = 1.0;
        return k;
    }
    const double half = (length - 1) / 2.0;
    const int samples = 16 * length;
    const double dy = -std::sin(angle), dx = std::cos(angle);
    for (int s = 0; s <= samples; ++s) {
        const double t = -half + 2 * half * s / samples;
        const double py = c + t * dy, px = c + t * dx;
        const int y0 = static_cast<int>(std::floor(py)), x0 = static_cast<int>(std::floor(px));
        const double fy = py - y0, fx = px - x0;
        const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1}, xs[4] = {x0, x0 + 1, x0, x0 + 1};
        for (int i = 0; i < 4; ++i) {
            if (ys[i] >= 0 && ys[i] < size && xs[i] >= 0 && xs[i] < size) k.at(ys[i], xs[i]) += wts[i];
        }
    }
    double sum = 0;
    for (double v : k.data()) sum += v;
    for (double& v : k.data()) v /= sum;
    return k;
}

ImageRGB apply_degradations(const ImageRGB& img, const DegradationConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const int h = img.height(), w = img.width();
    std::vector<double> cur(img.values());

    if (cfg.has(Degradation::Bloom) && cfg.bloom_sigma > 0) {
        std::vector<double> bright(cur.size());
        for (std::size_t i = 0; i < cur.size(); ++i) bright[i] = std::max(0.0, cur[i] - cfg.bloom_threshold);
        const auto halo = gaussian_blur(bright, h, w, cfg.bloom_sigma);
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += halo[i];
    }
    if (cfg.has(Degradation::Blur) && cfg.blur_len > 1) {
        const ImageGray k = motion_kernel(cfg.blur_len, uniform(rng, 0.0, std::numbers::pi));
        const int r = k.height() / 2;
        std::vector<double> out(cur.size(), 0.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ky = -r; ky <= r; ++ky)
                    for (int kx = -r; kx <= r; ++kx) {
                        const double wt = k.at(ky + r, kx + r);
                        if (wt == 0.0) continue;
                        const std::size_t src = (static_cast<std::size_t>(clamp_index(y + ky, h)) * w + clamp_index(x + kx, w)) * 3;
                        const std::size_t dst = (static_cast<std::size_t>(y) * w + x) * 3;
                        for (int c = 0; c < 3; ++c) out[dst + c] += wt * cur[src + c];
                    }
        cur.swap(out);
    }
    if (cfg.has(Degradation::Noise) && cfg.noise_sigma > 0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& v : cur) v += noise(rng);
    }
    ImageRGB out(h, w, std::move(cur));
    out.clamp01();
    return out;
}

GeneratedSource sample_source(const SynthRanges& r, std::uint64_t seed, int index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    std::mt19937_64 rng(seq);
    GeneratedSource g;
    SceneSpec& s = g.scene;
    s.seed = rng();
    s.height = r.height;
    s.width = r.width;
    // small scenes cannot hold many separated lights
    s.num_lights = std::min(uniform_int(rng, r.min_lights, r.max_lights), std::min(r.height, r.width) / 8);
    s.depth_style = static_cast<DepthStyle>(uniform_int(rng, 0, 2));
    s.haze_beta = uniform(rng, r.min_beta, r.max_beta);
    s.ambient = uniform(rng, r.min_ambient, r.max_ambient);
    s.texture = uniform(rng, 0.12, kMaxTexture);
    const double level = uniform(rng, 0.35, 0.6);
    for (double& c : s.airlight) c = std::min(1.0, level * uniform(rng, 0.85, 1.1));
    s.airlight_sigma = uniform(rng, 0.1, 0.25) * std::min(r.height, r.width);

    DegradationConfig& d = g.degradation;
    d.enabled = r.enabled;
    d.glow_strength = d.has(Degradation::Glow) ? uniform(rng, r.min_glow, r.max_glow) : 0.0;
    d.blur_len = uniform_int(rng, 1, std::max(1, r.max_blur_len));
    d.noise_sigma = uniform(rng, 0.0, r.max_noise);
    return g;
}

std::pair<ImageRGB, ImageRGB> render_pair(const GeneratedSource& src) {
    const CleanScene scene = render_clean_scene(src.scene);
    const HazeLayers layers = compose_haze(scene.clean, scene.depth, src.scene, scene.lights,
                                           src.degradation.has(Degradation::Glow) ? src.degradation.glow_strength : 0.0);
    ImageRGB hazy = apply_degradations(layers.hazy, src.degradation, src.scene.seed ^ 0x5DEECE66DULL);
    return {std::move(hazy), scene.clean};
}

DatasetManifest generate_dataset(int count, const fs::path& out_root, const SynthRanges& ranges, int crop_size,
                                 int crops_per_image, std::uint64_t seed) {
    if (count < 1 || crops_per_image < 1) throw ParameterError("count and crops_per_image must be >= 1");
    std::error_code ec;
    fs::create_directories(out_root / "hazy", ec);
    fs::create_directories(out_root / "gt", ec);
    if (ec) throw IoError("cannot create dataset directories under " + out_root.string() + ": " + ec.message());

    const std::size_t total = static_cast<std::size_t>(count) * crops_per_image;
    const SplitCounts counts = split_counts(total);

    DatasetManifest manifest;
    manifest.paired = true;
    std::size_t k = 0;
    for (int i = 0; i < count; ++i) {
        const GeneratedSource src = sample_source(ranges, seed, i);
        const auto [hazy, clean] = render_pair(src);
        const auto offsets = crop_offsets(hazy.height(), hazy.width(), crop_size, crops_per_image, src.scene.seed);
        for (int j = 0; j < crops_per_image; ++j, ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "%06d_%02d.png", i, j);
            ManifestRecord r;
            r.hazy = fs::absolute(out_root / "hazy" / name).lexically_normal();
            r.clean = fs::absolute(out_root / "gt" / name).lexically_normal();
            r.split = k < counts.train ? Split::Train : (k < counts.train + counts.val ? Split::Val : Split::Test);
            save_image(crop(hazy, offsets[j], crop_size), r.hazy);
            save_image(crop(clean, offsets[j], crop_size), *r.clean);
            manifest.samples.push_back(std::move(r));
        }
    }
    write_manifest(manifest, out_root / "manifest.tsv");
    return manifest;
}

}  // namespace nighthaze

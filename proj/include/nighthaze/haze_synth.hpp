#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/manifest.hpp"

namespace nighthaze {

enum class DepthStyle { LinearRamp, Blobs, Mixed };

struct SceneSpec {
    std::uint64_t seed = 0;
    int height = 64;
    int width = 64;
    int num_lights = 3;
    DepthStyle depth_style = DepthStyle::Mixed;
    double haze_beta = 1.0;
    double ambient = 0.08;
    /// Amplitude of the building/texture layer above the ambient level;
    /// 0 renders a flat scene.
    double texture = 0.2;
    /// Global airlight colour far from any light source.
    Rgb airlight{0.42, 0.40, 0.46};
    /// Decay length (pixels) of the light-colour blend in the airlight.
    double airlight_sigma = 12.0;

    void validate() const;
};

enum class Degradation : unsigned { Glow = 1u, Bloom = 2u, Blur = 4u, Noise = 8u };

struct DegradationConfig {
    double glow_strength = 0.35;
    double bloom_threshold = 0.8;
    double bloom_sigma = 2.0;
    int blur_len = 3;
    double noise_sigma = 0.01;
    unsigned enabled = 0xFu;

    bool has(Degradation d) const { return (enabled & static_cast<unsigned>(d)) != 0; }
    void validate() const;
};

struct PointLight {
    double y = 0.0;
    double x = 0.0;
    Rgb color{1.0, 1.0, 1.0};
    double intensity = 1.0;  // in (0,1]
    double radius = 2.0;     // disk radius in pixels
};

struct CleanScene {
    ImageRGB clean;
    ImageGray depth;
    std::vector<PointLight> lights;
};

/// Low-light scene: ambient base, textured structures that stay below
/// ambient + 0.25, and saturated light-source disks. Deterministic in seed.
CleanScene render_clean_scene(const SceneSpec& spec);

/// Every layer of the glow-extended scattering model, kept unclamped so the
/// composition can be inverted exactly.
struct HazeLayers {
    int height = 0;
    int width = 0;
    std::vector<double> transmission;  // HW
    std::vector<double> airlight;      // HWC
    std::vector<double> glow;          // HWC
    std::vector<double> preclamp;      // HWC
    ImageRGB hazy;                     // clamp(preclamp)

    ImageGray transmission_map() const;
};

/// I = J t + A (1 - t) + G with t = exp(-beta depth), spatially variant
/// airlight A and per-light Gaussian glow G scaled by `glow_strength`.
HazeLayers compose_haze(const ImageRGB& clean, const ImageGray& depth, const SceneSpec& spec,
                        const std::vector<PointLight>& lights, double glow_strength);

/// Inverse of compose_haze from the stored layers: J = (I - A(1-t) - G) / t.
ImageRGB recover_clean(const HazeLayers& layers);

/// Post-processing in fixed order: bloom, linear motion blur, Gaussian noise.
ImageRGB apply_degradations(const ImageRGB& img, const DegradationConfig& cfg, std::uint64_t seed);

/// Normalized line kernel of length `length` at `angle` (radians); odd size.
ImageGray motion_kernel(int length, double angle);

/// Parameter ranges sampled per source image.
struct SynthRanges {
    int height = 96;
    int width = 96;
    int min_lights = 1;
    int max_lights = 4;
    double min_beta = 0.6;
    double max_beta = 1.6;
    double min_ambient = 0.04;
    double max_ambient = 0.14;
    double min_glow = 0.15;
    double max_glow = 0.5;
    int max_blur_len = 3;
    double max_noise = 0.015;
    unsigned enabled = 0xFu;
};

struct GeneratedSource {
    SceneSpec scene;
    DegradationConfig degradation;
};

/// Parameters for source image `index` of a dataset generated with `seed`.
GeneratedSource sample_source(const SynthRanges& ranges, std::uint64_t seed, int index);

/// Renders one (hazy, clean) source pair.
std::pair<ImageRGB, ImageRGB> render_pair(const GeneratedSource& src);

/// Writes `count * crops_per_image` paired crops under out_root/{hazy,gt}
/// plus out_root/manifest.tsv, split 80/10/10 in generation order.
DatasetManifest generate_dataset(int count, const std::filesystem::path& out_root, const SynthRanges& ranges,
                                 int crop, int crops_per_image, std::uint64_t seed);

}  // namespace nighthaze

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "nighthaze/image.hpp"
#include "nighthaze/tensor.hpp"

namespace nighthaze::testing {

inline ImageRGB random_rgb(int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    ImageRGB img(h, w);
    for (double& v : img.data()) v = u(rng);
    return img;
}

inline nn::Tensor random_tensor(const nn::Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0,
                                bool requires_grad = false) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(nn::numel(shape));
    for (double& x : v) x = u(rng);
    return nn::Tensor::from(shape, std::move(v), requires_grad);
}

// Naive patch extremum over channels with edge replication.
inline ImageGray naive_channel_extremum(const ImageRGB& img, int patch, bool take_max) {
    const int r = patch / 2;
    ImageGray out(img.height(), img.width());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double best = take_max ? -1e300 : 1e300;
            for (int dy = -r; dy <= r; ++dy)
                for (int dx = -r; dx <= r; ++dx)
                    for (int c = 0; c < 3; ++c) {
                        const double v = img.at(clamp_index(y + dy, img.height()), clamp_index(x + dx, img.width()), c);
                        best = take_max ? std::max(best, v) : std::min(best, v);
                    }
            out.at(y, x) = best;
        }
    return out;
}

struct GradCheck {
    double rel_err = 0;
    double analytic_norm = 0;
};

// Central finite differences of `loss` w.r.t. the listed entries of `param`,
// compared with the autograd gradient as a norm-wise relative error.
inline GradCheck check_gradient(const std::function<nn::Tensor()>& loss, nn::Tensor param,
                                const std::vector<std::size_t>& entries, double h = 1e-6) {
    param.zero_grad();
    nn::Tensor l = loss();
    l.backward();
    std::vector<double> analytic(entries.size(), 0.0);
    const auto g = param.grad();
    for (std::size_t i = 0; i < entries.size(); ++i) analytic[i] = g.empty() ? 0.0 : g[entries[i]];
    std::vector<double> numeric(entries.size());
    {
        nn::NoGradGuard guard;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            double& v = param.values()[entries[i]];
            const double keep = v;
            v = keep + h;
            const double up = loss().item();
            v = keep - h;
            const double down = loss().item();
            v = keep;
            numeric[i] = (up - down) / (2 * h);
        }
    }
    double diff = 0, na = 0, nn_ = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn_ += numeric[i] * numeric[i];
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
    return {std::sqrt(diff) / scale, std::sqrt(na)};
}

inline std::vector<std::size_t> all_entries(const nn::Tensor& t) {
    std::vector<std::size_t> v(t.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
}

inline std::vector<std::size_t> sample_entries(const nn::Tensor& t, std::size_t count, std::uint64_t seed) {
    if (t.numel() <= count) return all_entries(t);
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> v = all_entries(t);
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(count);
    std::sort(v.begin(), v.end());
    return v;
}

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("nighthaze_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace nighthaze::testing

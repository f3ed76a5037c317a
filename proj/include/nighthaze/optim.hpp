#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nighthaze/tensor.hpp"

namespace nighthaze::nn {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

/// Adam with bias correction; parameters are held by shared handle.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    /// Applies one update with the given learning rate using the gradients
    /// currently stored on the parameters (missing gradients count as zero).
    void step(double lr);
    void zero_grad();

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    /// First and second moment buffers in parameter order (for checkpoints).
    std::vector<std::vector<double>>& first_moments() { return m_; }
    std::vector<std::vector<double>>& second_moments() { return v_; }
    void set_steps(std::uint64_t t) { t_ = t; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t t_ = 0;
};

/// Triangular cyclic schedule between base and base*max_ratio; the rate
/// climbs for `half_cycle` steps and then descends for the same number.
struct CyclicLR {
    double base = 2e-4;
    double max_ratio = 1.2;
    int half_cycle = 1000;

    void validate() const;
    double at(std::uint64_t step) const;
};

}  // namespace nighthaze::nn

#include "nighthaze/optim.hpp"

#include <cmath>

#include "nighthaze/error.hpp"

namespace nighthaze::nn {

void AdamConfig::validate() const {
    if (!(lr > 0)) throw ParameterError("learning rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ParameterError("Adam betas must lie in [0,1)");
    if (!(eps > 0)) throw ParameterError("Adam eps must be positive");
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto g = params_[k].grad();
        auto& value = params_[k].values();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double gi = g.empty() ? 0.0 : g[i];
            m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
            value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void CyclicLR::validate() const {
    if (!(base > 0)) throw ParameterError("cyclic lr base must be positive");
    if (!(max_ratio >= 1)) throw ParameterError("cyclic_max_ratio must be >= 1");
    if (half_cycle < 1) throw ParameterError("cyclic half cycle must be >= 1");
}

double CyclicLR::at(std::uint64_t step) const {
    const std::uint64_t period = 2ULL * static_cast<std::uint64_t>(half_cycle);
    const std::uint64_t pos = step % period;
    const double frac = pos <= static_cast<std::uint64_t>(half_cycle)
                            ? static_cast<double>(pos) / half_cycle
                            : static_cast<double>(period - pos) / half_cycle;
    return base * (1.0 + (max_ratio - 1.0) * frac);
}

}  // namespace nighthaze::nn

#pragma once

#include <cmath>
#include <vector>

#include "common.hpp"

namespace genodiff {
namespace ddpm {

// Forward-process schedule. All quantities use 1-based step indices t in
// [1, T]; alpha_bar(0) is defined as 1 so that beta_tilde(1) = 0. alpha_bar
// is accumulated in log space (log1p) so large T cannot underflow the
// product.
class NoiseSchedule {
public:
    static NoiseSchedule linear(int64_t t_steps, double beta_first = 1e-4,
                                double beta_last = 0.02) {
        if (t_steps < 2) throw ConfigError("schedule: T must be >= 2");
        if (!(beta_first > 0.0 && beta_first < beta_last && beta_last < 1.0))
            throw ConfigError("schedule: need 0 < beta(1) < beta(T) < 1");
        NoiseSchedule s;
        s.t_steps_ = t_steps;
        s.beta_.resize(static_cast<size_t>(t_steps));
        s.log_alpha_bar_.resize(static_cast<size_t>(t_steps));
        double acc = 0.0;
        for (int64_t t = 1; t <= t_steps; ++t) {
            double b = beta_first + static_cast<double>(t - 1) / static_cast<double>(t_steps - 1) *
                                        (beta_last - beta_first);
            s.beta_[static_cast<size_t>(t - 1)] = b;
            acc += std::log1p(-b);
            s.log_alpha_bar_[static_cast<size_t>(t - 1)] = acc;
        }
        return s;
    }

    int64_t t_steps() const { return t_steps_; }

    double beta(int64_t t) const {
        check(t);
        return beta_[static_cast<size_t>(t - 1)];
    }
    double alpha(int64_t t) const { return 1.0 - beta(t); }

    double alpha_bar(int64_t t) const {
        if (t == 0) return 1.0;
        check(t);
        return std::exp(log_alpha_bar_[static_cast<size_t>(t - 1)]);
    }

    double sqrt_alpha_bar(int64_t t) const {
        if (t == 0) return 1.0;
        check(t);
        return std::exp(0.5 * log_alpha_bar_[static_cast<size_t>(t - 1)]);
    }

    double sqrt_one_minus_alpha_bar(int64_t t) const {
        return std::sqrt(1.0 - alpha_bar(t));
    }

    double beta_tilde(int64_t t) const {
        check(t);
        if (t == 1) return 0.0;
        return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
    }

    void check(int64_t t) const {
        if (t < 1 || t > t_steps_)
            throw std::out_of_range("schedule: step " + std::to_string(t) + " outside [1, " +
                                    std::to_string(t_steps_) + "]");
    }

private:
    int64_t t_steps_ = 0;
    std::vector<double> beta_;
    std::vector<double> log_alpha_bar_;
};

}  // namespace ddpm
}  // namespace genodiff

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bsel {

// Adam with per-tensor moment state keyed by tensor name. When a basis
// weight vector shrinks during pruning, prune_state drops the matching
// moment entries so state stays aligned with the surviving bases.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void begin_step() { ++t_; }

    double learning_rate() const { return lr_; }

    void update(const std::string& name, double* param, const double* grad, std::size_t len) {
        Moments& mom = state_[name];
        if (mom.m.empty() && len > 0) {
            mom.m.assign(len, 0.0);
            mom.v.assign(len, 0.0);
        }
        if (mom.m.size() != len)
            throw std::logic_error("Adam: state size mismatch for tensor " + name);
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < len; ++i) {
            const double g = grad[i];
            mom.m[i] = beta1_ * mom.m[i] + (1.0 - beta1_) * g;
            mom.v[i] = beta2_ * mom.v[i] + (1.0 - beta2_) * g * g;
            const double mh = mom.m[i] / c1;
            const double vh = mom.v[i] / c2;
            param[i] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }

    void prune_state(const std::string& name, const std::vector<std::size_t>& kept) {
        auto it = state_.find(name);
        if (it == state_.end()) return;
        Moments& mom = it->second;
        if (mom.m.empty()) return;
        std::vector<double> m(kept.size()), v(kept.size());
        for (std::size_t i = 0; i < kept.size(); ++i) {
            m[i] = mom.m[kept[i]];
            v[i] = mom.v[kept[i]];
        }
        mom.m = std::move(m);
        mom.v = std::move(v);
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };

    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

}  // namespace bsel

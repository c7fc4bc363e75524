#pragma once

// Adam with bias correction over named parameter lists.

#include "tsd/tensor.hpp"

namespace tsd {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

class Adam {
public:
    Adam(NamedParams params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].second.data().size(), 0.0);
            v_[i].assign(params_[i].second.data().size(), 0.0);
        }
    }

    int step_count() const { return step_; }
    double lr() const { return lr_; }
    void set_lr(double lr) {
        check(lr > 0.0, "adam: lr must be positive");
        lr_ = lr;
    }

    // One Adam update over all registered parameters; clears gradients.
    void step() {
        ++step_;
        double bc1 = 1.0 - std::pow(beta1_, step_);
        double bc2 = 1.0 - std::pow(beta2_, step_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& p = params_[i].second;
            check(p.grad().size() == p.data().size(),
                  "adam: missing gradient for parameter '" + params_[i].first + "'");
            auto& m = m_[i];
            auto& v = v_[i];
            auto& g = p.grad();
            auto& x = p.data();
            for (size_t k = 0; k < x.size(); ++k) {
                m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
                v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
                double mh = m[k] / bc1;
                double vh = v[k] / bc2;
                x[k] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

private:
    NamedParams params_;
    double lr_, beta1_, beta2_, eps_;
    int step_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace tsd

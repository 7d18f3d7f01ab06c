#include "maod/optim.hpp"

#include <cmath>

namespace maod {

SgdMomentum::SgdMomentum(double learning_rate, double momentum, double clip_norm)
    : lr_(learning_rate), momentum_(momentum), clip_norm_(clip_norm) {
    require(lr_ > 0.0, strfmt("learning rate must be positive, got %g", lr_));
    require(momentum_ >= 0.0 && momentum_ < 1.0,
            strfmt("momentum must be in [0, 1), got %g", momentum_));
    require(clip_norm_ >= 0.0, strfmt("clip norm must be non-negative, got %g", clip_norm_));
}

void SgdMomentum::step(const std::vector<Parameter*>& params, double scale) {
    if (clip_norm_ > 0.0) {
        double sq = 0.0;
        for (const Parameter* p : params) {
            if (p->frozen || p->grad.empty()) continue;
            for (std::size_t i = 0; i < p->grad.numel(); ++i) {
                const double g = scale * p->grad[i];
                sq += g * g;
            }
        }
        const double norm = std::sqrt(sq);
        require(std::isfinite(norm), "gradient norm is not finite");
        if (norm > clip_norm_) scale *= clip_norm_ / norm;
    }
    for (Parameter* p : params) {
        if (p->frozen) {
            require_internal(p->grad.empty(), "frozen parameter '" + p->name + "' has a gradient");
            continue;
        }
        auto [it, fresh] = velocity_.try_emplace(p);
        Tensor& v = it->second;
        if (fresh) v = Tensor(p->value.shape());
        const bool has_grad = !p->grad.empty();
        for (std::size_t i = 0; i < v.numel(); ++i) {
            v[i] = momentum_ * v[i] - (has_grad ? lr_ * scale * p->grad[i] : 0.0);
            p->value[i] += v[i];
        }
        p->zero_grad();
    }
}

}  // namespace maod

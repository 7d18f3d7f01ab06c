#pragma once

#include <map>

#include "maod/params.hpp"

namespace maod {

/// SGD with classical momentum: v = m*v - lr*scale*grad; w += v.
/// Frozen parameters and parameters with no accumulated gradient keep their
/// values (velocity still decays, so a stalled branch coasts to a stop).
/// When clip_norm > 0 the scaled gradient is rescaled whenever its global
/// L2 norm across all stepped parameters exceeds clip_norm.
class SgdMomentum {
public:
    SgdMomentum(double learning_rate, double momentum, double clip_norm = 0.0);

    // scale multiplies the accumulated gradient (1/batch for mean-of-batch);
    // clears every non-frozen gradient afterwards
    void step(const std::vector<Parameter*>& params, double scale = 1.0);

private:
    double lr_;
    double momentum_;
    double clip_norm_;
    std::map<Parameter*, Tensor> velocity_;
};

}  // namespace maod

#pragma once

#include <string>
#include <vector>

#include "maod/optim.hpp"
#include "maod/params.hpp"

namespace maod {

/// One depthwise-separable stage: KxK per-channel conv, 1x1 mixing conv,
/// ReLU. Padding is kernel_size/2 so stride-1 blocks preserve extent.
struct DsBlockSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 3;
    int stride = 1;

    ConvSpec depthwise_spec() const;
    ConvSpec pointwise_spec() const;
};

struct BackboneConfig {
    Shape input_shape{3, 64, 64};
    std::vector<DsBlockSpec> blocks;

    // 3x64x64 -> 32@32x32 -> 64@16x16 -> 64@8x8 -> 64@8x8
    static BackboneConfig defaults();

    void validate() const;       // rejects chains that collapse below 1x1
    Shape output_shape() const;  // CxHxW after all blocks
    std::string describe() const;
};

/// The shared feature extractor. Parameters live in a ModelBundle under the
/// "fe." prefix; the object itself is just configuration.
class Extractor {
public:
    static constexpr const char* kPrefix = "fe.";

    explicit Extractor(BackboneConfig config);

    const BackboneConfig& config() const { return config_; }
    Shape output_shape() const { return config_.output_shape(); }

    void register_params(ModelBundle& bundle, Rng& rng) const;
    autograd::Var forward(ModelBundle& bundle, const autograd::Var& image) const;

    // Validated inference entry point: image must match the configured
    // shape with values in [0,1].
    Tensor extract_features(ModelBundle& bundle, const Tensor& image) const;

private:
    BackboneConfig config_;
};

Extractor build_extractor(const BackboneConfig& config, ModelBundle& bundle, Rng& rng);

// Marks every parameter under the prefix frozen; unknown prefixes are errors.
void freeze(ModelBundle& bundle, const std::string& name_prefix);

struct LabelledImage {
    Tensor image;
    int label = 0;
};

struct ProxyReport {
    double initial_accuracy = 0.0;  // held-out accuracy before training
    double final_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

/// Stand-in for large-scale pretraining: fits extractor + a throwaway
/// classification head on a labelled set (background textures from scenegen),
/// then discards the head. Mutates the extractor parameters in the bundle.
ProxyReport proxy_pretrain(const Extractor& extractor, ModelBundle& bundle,
                           const std::vector<LabelledImage>& dataset, int epochs, Rng& rng);

}  // namespace maod

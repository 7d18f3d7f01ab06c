#include "maod/backbone.hpp"

#include <algorithm>

namespace maod {

ConvSpec DsBlockSpec::depthwise_spec() const {
    return ConvSpec::depthwise(in_channels, kernel_size, stride, kernel_size / 2);
}

ConvSpec DsBlockSpec::pointwise_spec() const {
    return ConvSpec::pointwise(in_channels, out_channels);
}

BackboneConfig BackboneConfig::defaults() {
    BackboneConfig cfg;
    cfg.input_shape = {3, 64, 64};
    cfg.blocks = {
        {3, 32, 3, 2},
        {32, 64, 3, 2},
        {64, 64, 3, 2},
        {64, 64, 3, 1},
    };
    return cfg;
}

void BackboneConfig::validate() const {
    require(input_shape.size() == 3, "backbone input shape must be CxHxW");
    for (int d : input_shape) require(d >= 1, "backbone input dims must be positive");
    require(!blocks.empty(), "backbone needs at least one block");
    int channels = input_shape[0];
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        require(blocks[b].in_channels == channels,
                strfmt("block %zu expects %d input channels, previous stage produces %d",
                       b, blocks[b].in_channels, channels));
        blocks[b].depthwise_spec().validate();
        blocks[b].pointwise_spec().validate();
        channels = blocks[b].out_channels;
    }
    output_shape();
}

Shape BackboneConfig::output_shape() const {
    int h = input_shape[1], w = input_shape[2];
    int channels = input_shape[0];
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const ConvSpec dw = blocks[b].depthwise_spec();
        h = dw.out_extent(h);
        w = dw.out_extent(w);
        require(h >= 1 && w >= 1, strfmt("block %zu output %dx%d collapses below 1x1", b, h, w));
        channels = blocks[b].out_channels;
    }
    return {channels, h, w};
}

std::string BackboneConfig::describe() const {
    std::string s = strfmt("in=%dx%dx%d", input_shape[0], input_shape[1], input_shape[2]);
    for (std::size_t b = 0; b < blocks.size(); ++b)
        s += strfmt("|b%zu=k%ds%d:%d->%d", b, blocks[b].kernel_size, blocks[b].stride,
                    blocks[b].in_channels, blocks[b].out_channels);
    return s;
}

Extractor::Extractor(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
}

void Extractor::register_params(ModelBundle& bundle, Rng& rng) const {
    for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
        const auto& blk = config_.blocks[b];
        bundle.add(strfmt("fe.b%zu.dw", b), init_conv_weights(blk.depthwise_spec(), rng));
        bundle.add(strfmt("fe.b%zu.pw", b), init_conv_weights(blk.pointwise_spec(), rng));
    }
}

autograd::Var Extractor::forward(ModelBundle& bundle, const autograd::Var& image) const {
    using namespace autograd;
    Var x = image;
    for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
        const auto& blk = config_.blocks[b];
        Var dw = param(bundle.at(strfmt("fe.b%zu.dw", b)));
        Var pw = param(bundle.at(strfmt("fe.b%zu.pw", b)));
        x = ops::relu(ops::depthwise_separable(x, dw, pw, blk.stride, blk.kernel_size / 2));
    }
    return x;
}

Tensor Extractor::extract_features(ModelBundle& bundle, const Tensor& image) const {
    require(image.shape() == config_.input_shape,
            "image shape " + shape_str(image.shape()) + " does not match configured input " +
                shape_str(config_.input_shape));
    for (std::size_t i = 0; i < image.numel(); ++i)
        require(image[i] >= 0.0 && image[i] <= 1.0,
                strfmt("image values must lie in [0,1], found %g", image[i]));
    return forward(bundle, autograd::leaf(image)).value();
}

Extractor build_extractor(const BackboneConfig& config, ModelBundle& bundle, Rng& rng) {
    Extractor ex(config);
    ex.register_params(bundle, rng);
    return ex;
}

void freeze(ModelBundle& bundle, const std::string& name_prefix) {
    bundle.freeze_prefix(name_prefix);
}

namespace {

double proxy_accuracy(const Extractor& ex, ModelBundle& bundle, Parameter& w, Parameter& b,
                      const std::vector<LabelledImage>& data,
                      const std::vector<std::size_t>& indices) {
    if (indices.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i : indices) {
        using namespace autograd;
        Var feats = ex.forward(bundle, leaf(data[i].image));
        Var logits = ops::linear(ops::global_avg_pool(feats), param(w), param(b));
        if (kernels::argmax(logits.value()) == data[i].label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(indices.size());
}

}  // namespace

ProxyReport proxy_pretrain(const Extractor& extractor, ModelBundle& bundle,
                           const std::vector<LabelledImage>& dataset, int epochs, Rng& rng) {
    require(!dataset.empty(), "proxy_pretrain needs a non-empty dataset");
    require(epochs >= 0, "epochs must be non-negative");

    int n_classes = 0;
    for (const auto& s : dataset) {
        require(s.label >= 0, "proxy labels must be non-negative");
        n_classes = std::max(n_classes, s.label + 1);
    }
    require(n_classes >= 2, "proxy_pretrain needs at least two classes");

    auto fe_params = bundle.match_prefix(Extractor::kPrefix);
    require(!fe_params.empty(), "bundle holds no extractor parameters");
    bool any_trainable = false;
    for (const Parameter* p : fe_params) any_trainable |= !p->frozen;
    require(any_trainable, "proxy_pretrain requires an unfrozen extractor");

    // stratified 80/20 split, stable in dataset order
    std::vector<std::size_t> train_idx, test_idx;
    std::vector<std::size_t> seen_per_class(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto& seen = seen_per_class[static_cast<std::size_t>(dataset[i].label)];
        (split_is_test(seen, 0.2) ? test_idx : train_idx).push_back(i);
        ++seen;
    }
    require(!train_idx.empty(), "proxy split left no training samples");

    const int feat_channels = extractor.output_shape()[0];
    Parameter head_w{"proxy.fc.w", init_linear_weights(n_classes, feat_channels, rng), {}, false};
    Parameter head_b{"proxy.fc.b", Tensor(Shape{n_classes}), {}, false};
    const Tensor alpha(Shape{n_classes}, 1.0);

    ProxyReport report;
    report.initial_accuracy = proxy_accuracy(extractor, bundle, head_w, head_b, dataset, test_idx);

    std::vector<Parameter*> trainable = fe_params;
    trainable.push_back(&head_w);
    trainable.push_back(&head_b);
    SgdMomentum opt(0.05, 0.9, 5.0);
    const std::size_t batch = 16;

    std::vector<std::size_t> order = train_idx;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = rng.uniform_int(i + 1);
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t stop = std::min(order.size(), start + batch);
            for (std::size_t k = start; k < stop; ++k) {
                const auto& sample = dataset[order[k]];
                using namespace autograd;
                Var feats = extractor.forward(bundle, leaf(sample.image));
                Var logits = ops::linear(ops::global_avg_pool(feats), param(head_w), param(head_b));
                Tensor target(Shape{n_classes});
                target[static_cast<std::size_t>(sample.label)] = 1.0;
                Var loss = ops::weighted_cross_entropy(logits, target, alpha);
                epoch_loss += loss.scalar();
                backward(loss);
            }
            opt.step(trainable, 1.0 / static_cast<double>(stop - start));
        }
        report.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
    }

    report.final_accuracy = proxy_accuracy(extractor, bundle, head_w, head_b, dataset, test_idx);
    return report;
}

}  // namespace maod

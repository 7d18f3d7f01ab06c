#include "maod/heads.hpp"

#include <algorithm>
#include <cmath>

namespace maod {

const char* situation_name(Situation s) {
    switch (s) {
        case Situation::NoObject: return "no_object";
        case Situation::FarObjects: return "far_objects";
        case Situation::CloseObject: return "close_object";
    }
    throw InternalError("unhandled situation");
}

Situation situation_from_index(int i) {
    require(i >= 0 && i < kSituationCount, strfmt("situation index %d out of range", i));
    return static_cast<Situation>(i);
}

ClassWeights::ClassWeights(Tensor a) : alpha(std::move(a)) {
    require(alpha.rank() == 1 && alpha.numel() >= 1, "class weights must be a non-empty vector");
    for (std::size_t i = 0; i < alpha.numel(); ++i)
        require(alpha[i] > 0.0, strfmt("class weight %zu must be positive, got %g", i, alpha[i]));
}

ClassWeights ClassWeights::ones(int n) { return ClassWeights(Tensor(Shape{n}, 1.0)); }

ClassWeights class_weights_from_counts(const std::vector<std::size_t>& counts) {
    require(!counts.empty(), "class counts must not be empty");
    std::size_t total = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        require(counts[i] >= 1,
                strfmt("class %zu has zero samples; merge classes or supply weights manually", i));
        total += counts[i];
    }
    Tensor alpha(Shape{static_cast<int>(counts.size())});
    for (std::size_t i = 0; i < counts.size(); ++i)
        alpha[i] = static_cast<double>(total) /
                   (static_cast<double>(counts.size()) * static_cast<double>(counts[i]));
    return ClassWeights(std::move(alpha));
}

void GridSpec::validate() const {
    require(rows >= 1 && cols >= 1, strfmt("grid %dx%d must have positive dims", rows, cols));
}

std::pair<double, double> GridSpec::cell_center(int index) const {
    validate();
    require(index >= 0 && index < n(), strfmt("cell index %d outside 0..%d", index, n() - 1));
    const int row = index / cols;
    const int col = index % cols;
    return {(col + 0.5) / cols, (row + 0.5) / rows};
}

std::string GridSpec::describe() const { return strfmt("%dx%d", rows, cols); }

int cell_index(double x, double y, const GridSpec& grid) {
    grid.validate();
    require(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0,
            strfmt("center (%g, %g) outside the unit image", x, y));
    const int row = std::min(static_cast<int>(std::floor(y * grid.rows)), grid.rows - 1);
    const int col = std::min(static_cast<int>(std::floor(x * grid.cols)), grid.cols - 1);
    return row * grid.cols + col;
}

Tensor rough_targets(const std::vector<std::pair<double, double>>& centers, const GridSpec& grid) {
    require(!centers.empty(), "rough targets need at least one object center");
    std::vector<char> occupied(static_cast<std::size_t>(grid.n()), 0);
    int distinct = 0;
    for (const auto& [x, y] : centers) {
        char& cell = occupied[static_cast<std::size_t>(cell_index(x, y, grid))];
        if (!cell) ++distinct;
        cell = 1;
    }
    Tensor t(Shape{grid.n()});
    for (int i = 0; i < grid.n(); ++i)
        if (occupied[static_cast<std::size_t>(i)]) t[i] = 1.0 / distinct;
    return t;
}

void BoxTarget::validate() const {
    require(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0 && w > 0.0 && w < 1.0 && h > 0.0 && h < 1.0,
            strfmt("box (%g, %g, %g, %g) has components outside (0,1)", x, y, w, h));
}

double BoxTarget::x0() const { return std::max(0.0, x - w / 2.0); }
double BoxTarget::x1() const { return std::min(1.0, x + w / 2.0); }
double BoxTarget::y0() const { return std::max(0.0, y - h / 2.0); }
double BoxTarget::y1() const { return std::min(1.0, y + h / 2.0); }
double BoxTarget::clamped_area() const { return (x1() - x0()) * (y1() - y0()); }

double iou(const BoxTarget& a, const BoxTarget& b) {
    a.validate();
    b.validate();
    const double ix = std::max(0.0, std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0()));
    const double iy = std::max(0.0, std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0()));
    const double inter = ix * iy;
    const double uni = a.clamped_area() + b.clamped_area() - inter;
    return inter / uni;
}

Situation MetaOutput::verdict() const { return situation_from_index(kernels::argmax(logits)); }

double weighted_ce_loss(const Tensor& logits, int target, const ClassWeights& weights) {
    require(target >= 0 && static_cast<std::size_t>(target) < logits.numel(),
            strfmt("target class %d outside 0..%zu", target, logits.numel() - 1));
    Tensor one_hot(logits.shape());
    one_hot[static_cast<std::size_t>(target)] = 1.0;
    using namespace autograd;
    return ops::weighted_cross_entropy(leaf(logits), one_hot, weights.alpha).scalar();
}

double rough_loss(const Tensor& scores, const Tensor& target, const ClassWeights& weights) {
    using namespace autograd;
    return ops::weighted_cross_entropy(leaf(scores), target, weights.alpha).scalar();
}

double fine_loss(const BoxTarget& pred, const BoxTarget& target) {
    pred.validate();
    target.validate();
    const double dx = pred.x - target.x, dy = pred.y - target.y;
    const double dw = pred.w - target.w, dh = pred.h - target.h;
    return dx * dx + dy * dy + dw * dw + dh * dh;
}

void HeadsConfig::validate() const {
    require(meta_channels >= 1 && rough_channels >= 1 && fine_channels >= 1,
            "head channel counts must be positive");
    require(rough_dropout >= 0.0 && rough_dropout < 1.0,
            strfmt("dropout must be in [0,1), got %g", rough_dropout));
}

std::string HeadsConfig::describe() const {
    return strfmt("meta=%d|rough=%d,drop=%g|fine=%d", meta_channels, rough_channels,
                  rough_dropout, fine_channels);
}

namespace {

autograd::Var ds_block(ModelBundle& bundle, const autograd::Var& x, const std::string& name,
                       int stride) {
    using namespace autograd;
    Var dw = param(bundle.at(name + ".dw"));
    Var pw = param(bundle.at(name + ".pw"));
    return ops::relu(ops::depthwise_separable(x, dw, pw, stride, dw.value().dim(2) / 2));
}

void add_ds_block(ModelBundle& bundle, const std::string& name, int in_c, int out_c, int stride,
                  Rng& rng) {
    bundle.add(name + ".dw", init_conv_weights(ConvSpec::depthwise(in_c, 3, stride, 1), rng));
    bundle.add(name + ".pw", init_conv_weights(ConvSpec::pointwise(in_c, out_c), rng));
}

void add_linear(ModelBundle& bundle, const std::string& name, int out_dim, int in_dim, Rng& rng) {
    bundle.add(name + ".w", init_linear_weights(out_dim, in_dim, rng));
    bundle.add(name + ".b", Tensor(Shape{out_dim}));
}

autograd::Var apply_linear(ModelBundle& bundle, const autograd::Var& x, const std::string& name) {
    using namespace autograd;
    return ops::linear(x, param(bundle.at(name + ".w")), param(bundle.at(name + ".b")));
}

}  // namespace

MetaHead::MetaHead(const HeadsConfig& cfg, const Shape& feature_shape) {
    cfg.validate();
    require(feature_shape.size() == 3, "meta head expects CxHxW features");
    in_channels_ = feature_shape[0];
    channels_ = cfg.meta_channels;
}

void MetaHead::register_params(ModelBundle& bundle, Rng& rng) const {
    add_ds_block(bundle, "meta.b0", in_channels_, channels_, 1, rng);
    add_ds_block(bundle, "meta.b1", channels_, channels_, 1, rng);
    add_linear(bundle, "meta.fc", kSituationCount, channels_, rng);
}

autograd::Var MetaHead::forward(ModelBundle& bundle, const autograd::Var& features) const {
    using namespace autograd;
    Var x = ds_block(bundle, features, "meta.b0", 1);
    x = ds_block(bundle, x, "meta.b1", 1);
    return apply_linear(bundle, ops::global_avg_pool(x), "meta.fc");
}

MetaOutput MetaHead::infer(ModelBundle& bundle, const Tensor& features) const {
    Tensor logits = forward(bundle, autograd::leaf(features)).value();
    return MetaOutput{logits, kernels::softmax(logits)};
}

RoughHead::RoughHead(const HeadsConfig& cfg, const Shape& feature_shape, const GridSpec& grid) {
    cfg.validate();
    grid.validate();
    require(feature_shape.size() == 3, "rough head expects CxHxW features");
    in_channels_ = feature_shape[0];
    channels_ = cfg.rough_channels;
    grid_ = grid;
    dropout_ = cfg.rough_dropout;
    const ConvSpec down = ConvSpec::depthwise(channels_, 3, 2, 1);
    const int out_h = down.out_extent(feature_shape[1]);
    const int out_w = down.out_extent(feature_shape[2]);
    require(out_h == grid.rows && out_w == grid.cols,
            strfmt("feature map %dx%d does not reduce to the %dx%d grid with one stride-2 stage",
                   feature_shape[1], feature_shape[2], grid.rows, grid.cols));
}

void RoughHead::register_params(ModelBundle& bundle, Rng& rng) const {
    add_ds_block(bundle, "rough.trunk", in_channels_, channels_, 1, rng);
    add_linear(bundle, "rough.a", grid_.n(), channels_, rng);
    add_ds_block(bundle, "rough.b", channels_, channels_, 2, rng);
    bundle.add("rough.b.proj", init_conv_weights(ConvSpec::pointwise(channels_, 1), rng));
    add_linear(bundle, "rough.fc", grid_.n(), grid_.n(), rng);
}

autograd::Var RoughHead::forward(ModelBundle& bundle, const autograd::Var& features, bool training,
                                 Rng* rng) const {
    using namespace autograd;
    require(!training || rng != nullptr, "training-mode rough forward needs a generator");
    Rng unused(0);  // inference-mode dropout is the identity and never draws
    Var x = ops::dropout(features, dropout_, training, training ? *rng : unused);
    Var trunk = ds_block(bundle, x, "rough.trunk", 1);

    Var a = apply_linear(bundle, ops::global_avg_pool(trunk), "rough.a");

    Var b = ds_block(bundle, trunk, "rough.b", 2);
    Var proj = param(bundle.at("rough.b.proj"));
    b = ops::conv2d(b, proj, ConvSpec::pointwise(channels_, 1));
    b = ops::flatten(b);

    return apply_linear(bundle, ops::add(a, b), "rough.fc");
}

Tensor RoughHead::infer(ModelBundle& bundle, const Tensor& features) const {
    return forward(bundle, autograd::leaf(features), false).value();
}

FineHead::FineHead(const HeadsConfig& cfg, const Shape& feature_shape) {
    cfg.validate();
    require(feature_shape.size() == 3, "fine head expects CxHxW features");
    in_channels_ = feature_shape[0];
    channels_ = cfg.fine_channels;
    int h = feature_shape[1], w = feature_shape[2];
    for (int b = 0; b < 3; ++b) {
        const ConvSpec down = ConvSpec::depthwise(b == 0 ? in_channels_ : channels_, 3, 2, 1);
        h = down.out_extent(h);
        w = down.out_extent(w);
        require(h >= 1 && w >= 1, "fine head strides collapse the feature map below 1x1");
    }
    require(h == 1 && w == 1,
            strfmt("fine head strides leave a %dx%d map, expected 1x1", h, w));
}

void FineHead::register_params(ModelBundle& bundle, Rng& rng) const {
    add_ds_block(bundle, "fine.b0", in_channels_, channels_, 2, rng);
    add_ds_block(bundle, "fine.b1", channels_, channels_, 2, rng);
    add_ds_block(bundle, "fine.b2", channels_, channels_, 2, rng);
    add_linear(bundle, "fine.fc", 4, channels_, rng);
}

autograd::Var FineHead::forward(ModelBundle& bundle, const autograd::Var& features) const {
    using namespace autograd;
    Var x = ds_block(bundle, features, "fine.b0", 2);
    x = ds_block(bundle, x, "fine.b1", 2);
    x = ds_block(bundle, x, "fine.b2", 2);
    return ops::sigmoid(apply_linear(bundle, ops::global_avg_pool(x), "fine.fc"));
}

BoxTarget FineHead::infer(ModelBundle& bundle, const Tensor& features) const {
    Tensor v = forward(bundle, autograd::leaf(features)).value();
    return BoxTarget{v[0], v[1], v[2], v[3]};
}

}  // namespace maod

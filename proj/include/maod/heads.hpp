#pragma once

#include <string>
#include <utility>
#include <vector>

#include "maod/backbone.hpp"

namespace maod {

enum class Situation : int { NoObject = 0, FarObjects = 1, CloseObject = 2 };

constexpr int kSituationCount = 3;

const char* situation_name(Situation s);
Situation situation_from_index(int i);

/// Per-class loss weights countering label imbalance. All entries positive.
struct ClassWeights {
    Tensor alpha;

    explicit ClassWeights(Tensor a);
    static ClassWeights ones(int n);
    std::size_t size() const { return alpha.numel(); }
};

// alpha_i = sum(counts) / (k * counts_i); balanced counts give all ones
ClassWeights class_weights_from_counts(const std::vector<std::size_t>& counts);

struct GridSpec {
    int rows = 4;
    int cols = 4;

    int n() const { return rows * cols; }
    void validate() const;
    // geometric center of cell (row-major index)
    std::pair<double, double> cell_center(int index) const;
    std::string describe() const;
};

// row-major cell of a normalized center; the upper boundary clamps inward
int cell_index(double x, double y, const GridSpec& grid);

// equal mass over the distinct occupied cells; one object gives a one-hot
Tensor rough_targets(const std::vector<std::pair<double, double>>& centers, const GridSpec& grid);

/// Normalized box: center (x, y), size (w, h), each in (0,1). Corners are
/// clamped to the unit image when the box is rasterized or compared.
struct BoxTarget {
    double x = 0.5, y = 0.5, w = 0.5, h = 0.5;

    void validate() const;
    double x0() const;  // clamped left edge
    double x1() const;
    double y0() const;
    double y1() const;
    double clamped_area() const;
};

double iou(const BoxTarget& a, const BoxTarget& b);

struct MetaOutput {
    Tensor logits;  // length 3
    Tensor probs;   // softmax(logits)

    Situation verdict() const;
};

// -alpha_t * log(softmax(logits)_t)
double weighted_ce_loss(const Tensor& logits, int target, const ClassWeights& weights);
// soft-target form over n cells; target must sum to 1
double rough_loss(const Tensor& scores, const Tensor& target, const ClassWeights& weights);
// (x-x')^2 + (y-y')^2 + (w-w')^2 + (h-h')^2
double fine_loss(const BoxTarget& pred, const BoxTarget& target);

struct HeadsConfig {
    int meta_channels = 24;
    int rough_channels = 24;
    int fine_channels = 24;
    double rough_dropout = 0.35;

    static HeadsConfig defaults() { return {}; }
    void validate() const;
    std::string describe() const;
};

/// Situation classifier: two separable blocks, pooled, linear to 3 logits.
class MetaHead {
public:
    static constexpr const char* kPrefix = "meta.";

    MetaHead(const HeadsConfig& cfg, const Shape& feature_shape);

    void register_params(ModelBundle& bundle, Rng& rng) const;
    autograd::Var forward(ModelBundle& bundle, const autograd::Var& features) const;
    MetaOutput infer(ModelBundle& bundle, const Tensor& features) const;

private:
    int in_channels_;
    int channels_;
};

/// Grid scorer with two branches over a shared trunk: a pooled linear branch
/// and a spatial branch that keeps an RxC map; their sum feeds a final
/// linear layer producing one logit per cell.
class RoughHead {
public:
    static constexpr const char* kPrefix = "rough.";

    RoughHead(const HeadsConfig& cfg, const Shape& feature_shape, const GridSpec& grid);

    void register_params(ModelBundle& bundle, Rng& rng) const;
    autograd::Var forward(ModelBundle& bundle, const autograd::Var& features, bool training,
                          Rng* rng = nullptr) const;
    Tensor infer(ModelBundle& bundle, const Tensor& features) const;  // logits, length n

private:
    int in_channels_;
    int channels_;
    GridSpec grid_;
    double dropout_;
};

/// Box regressor: three stride-2 separable blocks collapse the map to 1x1
/// (keeping position information in the tap weights), then linear + sigmoid.
class FineHead {
public:
    static constexpr const char* kPrefix = "fine.";

    FineHead(const HeadsConfig& cfg, const Shape& feature_shape);

    void register_params(ModelBundle& bundle, Rng& rng) const;
    autograd::Var forward(ModelBundle& bundle, const autograd::Var& features) const;
    BoxTarget infer(ModelBundle& bundle, const Tensor& features) const;

private:
    int in_channels_;
    int channels_;
};

}  // namespace maod

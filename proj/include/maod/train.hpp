#pragma once

#include <array>
#include <functional>

#include "maod/pipeline.hpp"
#include "maod/scenegen.hpp"

namespace maod {

enum class HeadKind { Meta, Rough, Fine };

HeadKind head_kind_from_name(const std::string& name);
const char* head_kind_name(HeadKind kind);

struct TrainConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double clip_norm = 5.0;  // 0 disables gradient clipping
    int epochs = 30;
    int batch_size = 16;
    std::uint64_t seed = 1;
    bool auto_class_weights = true;
    bool augment_flips = false;  // also train on the 3 mirrored copies of each sample
    std::vector<double> explicit_alpha;  // consulted when auto weights are off

    void validate() const;
};

/// Shipped per-head training recipe: the detectors lean on mirrored copies
/// and a longer schedule, the situation classifier converges without either.
TrainConfig default_train_config(HeadKind kind);

// mirrored copy of a CHW image (x mirrors columns, y mirrors rows)
Tensor flip_chw(const Tensor& image, bool flip_x, bool flip_y);
BoxTarget flip_box(const BoxTarget& box, bool flip_x, bool flip_y);

struct TrainResult {
    std::vector<double> loss_curve;  // mean sample loss per epoch
};

/// Mini-batch SGD over the named head's parameters; the extractor must be
/// frozen and its features are computed once per sample and cached.
TrainResult train_head(HeadKind kind, System& system, ModelBundle& bundle,
                       const Dataset& dataset, const TrainConfig& config);

struct Metrics {
    std::size_t T = 0;   // true predictions
    std::size_t NP = 0;  // all predictions
    std::size_t NT = 0;  // all targets
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool degenerate = false;  // NP == 0, NT == 0, or precision + recall == 0
    double tt_s = 0.0;
    std::size_t nf = 0;
    double cpu_time = 0.0;  // tt_s / nf

    static Metrics from_counts(std::size_t T, std::size_t NP, std::size_t NT);
    std::string csv() const;
};

double f1_score(std::size_t T, std::size_t NP, std::size_t NT);

// maximum one-to-one matching (augmenting paths) between predictions and
// targets under a compatibility predicate
std::size_t max_matches(std::size_t n_predictions, std::size_t n_targets,
                        const std::function<bool(std::size_t, std::size_t)>& compatible);

struct ConfusionMatrix {
    std::array<std::array<std::size_t, 3>, 3> counts{};  // [actual][predicted]

    std::size_t total() const;
    double accuracy() const;
    std::array<std::size_t, 3> row_sums() const;
    std::string csv() const;
};

struct MetaEvalResult {
    double accuracy = 0.0;
    ConfusionMatrix confusion;
};

// all evaluations run on the test split only
MetaEvalResult evaluate_meta(System& system, ModelBundle& bundle, const Dataset& dataset);
MetaEvalResult evaluate_meta_with(const Dataset& dataset,
                                  const std::function<Situation(const DatasetSample&)>& classify);

Metrics evaluate_rough(System& system, ModelBundle& bundle, const Dataset& dataset,
                       const GridSpec& grid, double score_threshold);

struct FineEvalResult {
    Metrics metrics;
    double mean_iou = 0.0;
};

FineEvalResult evaluate_fine(System& system, ModelBundle& bundle, const Dataset& dataset,
                             double iou_threshold = 0.5);

std::string loss_curve_csv(const std::vector<double>& curve);

}  // namespace maod

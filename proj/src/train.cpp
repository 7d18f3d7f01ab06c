#include "maod/train.hpp"

#include <algorithm>
#include <chrono>

namespace maod {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "meta") return HeadKind::Meta;
    if (name == "rough") return HeadKind::Rough;
    if (name == "fine") return HeadKind::Fine;
    throw ValidationError("unknown head '" + name + "' (expected meta, rough or fine)");
}

const char* head_kind_name(HeadKind kind) {
    switch (kind) {
        case HeadKind::Meta: return "meta";
        case HeadKind::Rough: return "rough";
        case HeadKind::Fine: return "fine";
    }
    throw InternalError("unhandled head kind");
}

void TrainConfig::validate() const {
    require(learning_rate > 0.0, strfmt("learning rate must be positive, got %g", learning_rate));
    require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
    require(clip_norm >= 0.0, "clip norm must be non-negative");
    require(epochs >= 0, "epochs must be non-negative");
    require(batch_size >= 1, "batch size must be positive");
    if (!auto_class_weights)
        for (double a : explicit_alpha) require(a > 0.0, "explicit class weights must be positive");
}

namespace {

const char* head_prefix(HeadKind kind) {
    switch (kind) {
        case HeadKind::Meta: return MetaHead::kPrefix;
        case HeadKind::Rough: return RoughHead::kPrefix;
        case HeadKind::Fine: return FineHead::kPrefix;
    }
    throw InternalError("unhandled head kind");
}

bool sample_feeds_head(HeadKind kind, const DatasetSample& s) {
    switch (kind) {
        case HeadKind::Meta: return true;
        case HeadKind::Rough: return s.situation == Situation::FarObjects;
        case HeadKind::Fine: return s.situation == Situation::CloseObject;
    }
    throw InternalError("unhandled head kind");
}

struct TrainItem {
    std::size_t index;  // into dataset.samples
    int flip;           // bit 0 mirrors x, bit 1 mirrors y
};

std::vector<BoxTarget> item_boxes(const DatasetSample& s, int flip) {
    std::vector<BoxTarget> boxes = s.boxes;
    if (flip)
        for (BoxTarget& b : boxes) b = flip_box(b, flip & 1, flip & 2);
    return boxes;
}

ClassWeights training_alpha(HeadKind kind, const Dataset& dataset, const GridSpec& grid,
                            const TrainConfig& config, const std::vector<TrainItem>& items) {
    if (!config.auto_class_weights) {
        Tensor a(Shape{static_cast<int>(config.explicit_alpha.size())}, config.explicit_alpha);
        return ClassWeights(std::move(a));
    }
    if (kind == HeadKind::Meta) return class_weights_from_counts(dataset.train_class_counts());
    // rough: per-cell occupancy counts; cells never seen fall back to flat
    // weights since a zero count has no finite balancing weight
    std::vector<std::size_t> cell_counts(static_cast<std::size_t>(grid.n()), 0);
    bool any_zero = false;
    for (const TrainItem& it : items) {
        const Tensor t = grid_target(item_boxes(dataset.samples[it.index], it.flip), grid);
        for (int c = 0; c < grid.n(); ++c)
            if (t[c] > 0.0) ++cell_counts[static_cast<std::size_t>(c)];
    }
    for (std::size_t c : cell_counts) any_zero |= c == 0;
    if (any_zero) return ClassWeights::ones(grid.n());
    return class_weights_from_counts(cell_counts);
}

Tensor box_as_tensor(const BoxTarget& b) {
    return Tensor({4}, {b.x, b.y, b.w, b.h});
}

}  // namespace

TrainResult train_head(HeadKind kind, System& system, ModelBundle& bundle,
                       const Dataset& dataset, const TrainConfig& config) {
    config.validate();
    auto fe_params = bundle.match_prefix(Extractor::kPrefix);
    require(!fe_params.empty(), "bundle holds no extractor parameters");
    for (const Parameter* p : fe_params)
        require(p->frozen, "train_head requires a frozen extractor ('" + p->name + "' is not)");

    std::vector<TrainItem> items;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        if (dataset.samples[i].is_test || !sample_feeds_head(kind, dataset.samples[i])) continue;
        for (int flip = 0; flip < (config.augment_flips ? 4 : 1); ++flip)
            items.push_back({i, flip});
    }
    require(!items.empty(),
            strfmt("dataset has no training samples for the %s head", head_kind_name(kind)));

    const GridSpec grid = system.config.grid;
    ClassWeights alpha = kind == HeadKind::Fine
                             ? ClassWeights::ones(1)
                             : training_alpha(kind, dataset, grid, config, items);
    if (kind == HeadKind::Meta)
        require(alpha.size() == static_cast<std::size_t>(kSituationCount),
                "meta class weights must have length 3");
    if (kind == HeadKind::Rough)
        require(alpha.size() == static_cast<std::size_t>(grid.n()),
                strfmt("rough class weights must have length %d", grid.n()));

    // frozen extractor: features are constants, so compute them once
    std::vector<Tensor> features;
    features.reserve(items.size());
    for (const TrainItem& it : items) {
        const Tensor& image = dataset.samples[it.index].image;
        features.push_back(system.extractor.extract_features(
            bundle, it.flip ? flip_chw(image, it.flip & 1, it.flip & 2) : image));
    }

    std::vector<Parameter*> head_params = bundle.match_prefix(head_prefix(kind));
    require(!head_params.empty(),
            strfmt("bundle holds no %s head parameters", head_kind_name(kind)));

    SgdMomentum opt(config.learning_rate, config.momentum, config.clip_norm);
    Rng rng(config.seed);
    TrainResult result;

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const std::size_t j = rng.uniform_int(i + 1);
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            for (std::size_t k = start; k < stop; ++k) {
                const TrainItem& item = items[order[k]];
                const DatasetSample& sample = dataset.samples[item.index];
                using namespace autograd;
                Var feats = leaf(features[order[k]]);
                Var loss;
                switch (kind) {
                    case HeadKind::Meta: {
                        Var logits = system.meta.forward(bundle, feats);
                        Tensor target(Shape{kSituationCount});
                        target[static_cast<std::size_t>(sample.situation)] = 1.0;
                        loss = ops::weighted_cross_entropy(logits, target, alpha.alpha);
                        break;
                    }
                    case HeadKind::Rough: {
                        Var scores = system.rough.forward(bundle, feats, true, &rng);
                        loss = ops::weighted_cross_entropy(
                            scores, grid_target(item_boxes(sample, item.flip), grid),
                            alpha.alpha);
                        break;
                    }
                    case HeadKind::Fine: {
                        Var pred = system.fine.forward(bundle, feats);
                        loss = ops::squared_error(
                            pred, box_as_tensor(flip_box(sample.boxes.at(0), item.flip & 1,
                                                         item.flip & 2)));
                        break;
                    }
                }
                epoch_loss += loss.scalar();
                backward(loss);
            }
            opt.step(head_params, 1.0 / static_cast<double>(stop - start));
        }
        result.loss_curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return result;
}

TrainConfig default_train_config(HeadKind kind) {
    TrainConfig cfg;
    if (kind != HeadKind::Meta) {
        cfg.epochs = 60;
        cfg.augment_flips = true;
    }
    return cfg;
}

Tensor flip_chw(const Tensor& image, bool flip_x, bool flip_y) {
    require(image.rank() == 3, "flip_chw expects a CHW tensor");
    if (!flip_x && !flip_y) return image;
    const int C = image.dim(0), H = image.dim(1), W = image.dim(2);
    Tensor out(image.shape());
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                out.at3(c, y, x) = image.at3(c, flip_y ? H - 1 - y : y, flip_x ? W - 1 - x : x);
    return out;
}

BoxTarget flip_box(const BoxTarget& box, bool flip_x, bool flip_y) {
    BoxTarget b = box;
    if (flip_x) b.x = 1.0 - b.x;
    if (flip_y) b.y = 1.0 - b.y;
    return b;
}

double f1_score(std::size_t T, std::size_t NP, std::size_t NT) {
    require(T <= NP && T <= NT,
            strfmt("inconsistent counts: T=%zu exceeds NP=%zu or NT=%zu", T, NP, NT));
    if (NP == 0 || NT == 0) return 0.0;
    const double precision = static_cast<double>(T) / static_cast<double>(NP);
    const double recall = static_cast<double>(T) / static_cast<double>(NT);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * recall * precision / (recall + precision);
}

Metrics Metrics::from_counts(std::size_t T, std::size_t NP, std::size_t NT) {
    Metrics m;
    m.T = T;
    m.NP = NP;
    m.NT = NT;
    m.precision = NP > 0 ? static_cast<double>(T) / static_cast<double>(NP) : 0.0;
    m.recall = NT > 0 ? static_cast<double>(T) / static_cast<double>(NT) : 0.0;
    m.f1 = f1_score(T, NP, NT);
    m.degenerate = NP == 0 || NT == 0 || m.precision + m.recall == 0.0;
    return m;
}

std::string Metrics::csv() const {
    std::string out = "T,NP,NT,precision,recall,f1,degenerate,cpu_time\n";
    out += strfmt("%zu,%zu,%zu,%.6f,%.6f,%.6f,%d,%.9f\n", T, NP, NT, precision, recall, f1,
                  degenerate ? 1 : 0, cpu_time);
    return out;
}

std::size_t max_matches(std::size_t n_predictions, std::size_t n_targets,
                        const std::function<bool(std::size_t, std::size_t)>& compatible) {
    std::vector<int> target_match(n_targets, -1);
    std::vector<char> visited;

    std::function<bool(std::size_t)> augment = [&](std::size_t p) -> bool {
        for (std::size_t t = 0; t < n_targets; ++t) {
            if (visited[t] || !compatible(p, t)) continue;
            visited[t] = 1;
            if (target_match[t] < 0 || augment(static_cast<std::size_t>(target_match[t]))) {
                target_match[t] = static_cast<int>(p);
                return true;
            }
        }
        return false;
    };

    std::size_t matched = 0;
    for (std::size_t p = 0; p < n_predictions; ++p) {
        visited.assign(n_targets, 0);
        if (augment(p)) ++matched;
    }
    return matched;
}

std::size_t ConfusionMatrix::total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
        for (std::size_t v : row) n += v;
    return n;
}

double ConfusionMatrix::accuracy() const {
    const std::size_t n = total();
    require(n > 0, "confusion matrix is empty");
    std::size_t trace = 0;
    for (std::size_t i = 0; i < 3; ++i) trace += counts[i][i];
    return static_cast<double>(trace) / static_cast<double>(n);
}

std::array<std::size_t, 3> ConfusionMatrix::row_sums() const {
    std::array<std::size_t, 3> sums{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) sums[i] += counts[i][j];
    return sums;
}

std::string ConfusionMatrix::csv() const {
    std::string out = "actual\\predicted";
    for (int j = 0; j < kSituationCount; ++j)
        out += std::string(",") + situation_name(situation_from_index(j));
    out += "\n";
    for (int i = 0; i < kSituationCount; ++i) {
        out += situation_name(situation_from_index(i));
        for (int j = 0; j < kSituationCount; ++j)
            out += strfmt(",%zu", counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        out += "\n";
    }
    return out;
}

namespace {

std::vector<std::size_t> test_indices(const Dataset& dataset, HeadKind kind) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < dataset.samples.size(); ++i)
        if (dataset.samples[i].is_test && sample_feeds_head(kind, dataset.samples[i]))
            idx.push_back(i);
    return idx;
}

}  // namespace

MetaEvalResult evaluate_meta_with(const Dataset& dataset,
                                  const std::function<Situation(const DatasetSample&)>& classify) {
    const auto idx = test_indices(dataset, HeadKind::Meta);
    require(!idx.empty(), "dataset has no test samples");
    MetaEvalResult result;
    for (std::size_t i : idx) {
        const DatasetSample& s = dataset.samples[i];
        const Situation predicted = classify(s);
        ++result.confusion.counts[static_cast<std::size_t>(s.situation)]
                                 [static_cast<std::size_t>(predicted)];
    }
    result.accuracy = result.confusion.accuracy();
    return result;
}

MetaEvalResult evaluate_meta(System& system, ModelBundle& bundle, const Dataset& dataset) {
    return evaluate_meta_with(dataset, [&](const DatasetSample& s) {
        const Tensor features = system.extractor.extract_features(bundle, s.image);
        return system.meta.infer(bundle, features).verdict();
    });
}

Metrics evaluate_rough(System& system, ModelBundle& bundle, const Dataset& dataset,
                       const GridSpec& grid, double score_threshold) {
    require(score_threshold > 0.0 && score_threshold < 1.0,
            strfmt("score threshold must be in (0,1), got %g", score_threshold));
    const auto idx = test_indices(dataset, HeadKind::Rough);
    require(!idx.empty(), "dataset has no far-objects test samples");

    std::size_t T = 0, NP = 0, NT = 0;
    const auto start = Clock::now();
    for (std::size_t i : idx) {
        const DatasetSample& s = dataset.samples[i];
        const Tensor features = system.extractor.extract_features(bundle, s.image);
        const Tensor scores = kernels::softmax(system.rough.infer(bundle, features));

        std::vector<std::size_t> predicted_cells;
        for (std::size_t c = 0; c < scores.numel(); ++c)
            if (scores[c] >= score_threshold) predicted_cells.push_back(c);

        std::vector<std::size_t> target_cells;
        for (const auto& b : s.boxes)
            target_cells.push_back(static_cast<std::size_t>(cell_index(b.x, b.y, grid)));

        T += max_matches(predicted_cells.size(), target_cells.size(),
                         [&](std::size_t p, std::size_t t) {
                             return predicted_cells[p] == target_cells[t];
                         });
        NP += predicted_cells.size();
        NT += target_cells.size();
    }
    Metrics m = Metrics::from_counts(T, NP, NT);
    m.tt_s = seconds_since(start);
    m.nf = idx.size();
    m.cpu_time = m.tt_s / static_cast<double>(m.nf);
    return m;
}

FineEvalResult evaluate_fine(System& system, ModelBundle& bundle, const Dataset& dataset,
                             double iou_threshold) {
    require(iou_threshold > 0.0 && iou_threshold <= 1.0,
            strfmt("iou threshold must be in (0,1], got %g", iou_threshold));
    const auto idx = test_indices(dataset, HeadKind::Fine);
    require(!idx.empty(), "dataset has no close-object test samples");

    std::size_t T = 0;
    double iou_sum = 0.0;
    const auto start = Clock::now();
    for (std::size_t i : idx) {
        const DatasetSample& s = dataset.samples[i];
        const Tensor features = system.extractor.extract_features(bundle, s.image);
        const BoxTarget pred = system.fine.infer(bundle, features);
        const double overlap = iou(pred, s.boxes.at(0));
        iou_sum += overlap;
        if (overlap >= iou_threshold) ++T;
    }
    FineEvalResult result;
    result.metrics = Metrics::from_counts(T, idx.size(), idx.size());
    result.metrics.tt_s = seconds_since(start);
    result.metrics.nf = idx.size();
    result.metrics.cpu_time = result.metrics.tt_s / static_cast<double>(idx.size());
    result.mean_iou = iou_sum / static_cast<double>(idx.size());
    return result;
}

std::string loss_curve_csv(const std::vector<double>& curve) {
    std::string out = "epoch,loss\n";
    for (std::size_t e = 0; e < curve.size(); ++e) out += strfmt("%zu,%.9f\n", e, curve[e]);
    return out;
}

}  // namespace maod

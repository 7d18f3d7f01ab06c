#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "maod/backbone.hpp"
#include "maod/heads.hpp"

namespace maod {

enum class BackgroundKind : int { Plain = 0, Checker = 1, Stripes = 2, Dots = 3, Gradient = 4 };

constexpr int kBackgroundKinds = 5;
constexpr int kTextureClasses = 4;  // proxy task: every kind except Plain

const char* background_name(BackgroundKind k);

struct GenConfig {
    int image_size = 64;
    double far_area_min = 0.004;
    double far_area_max = 0.06;
    double close_area_min = 0.20;
    double close_area_max = 0.45;
    // ambiguous sizes between the two regimes ("border" frames); a fraction
    // of object samples draws from this band to exercise the hard boundary
    double border_lo = 0.10;
    double border_mid = 0.13;
    double border_hi = 0.16;
    double border_fraction = 0.30;
    double noise_sigma = 0.02;
    int search_blur_radius = 2;  // motion blur of object-free searching frames
    std::vector<double> far_count_weights{0.80, 0.12, 0.05, 0.03};

    void validate() const;
    std::string describe() const;
    std::string hash() const;  // sha256 hex of describe()
};

struct SceneObject {
    double cx = 0.5, cy = 0.5;
    double w = 0.1, h = 0.1;
    int color = 0;  // 0 white, 1 red, 2 blue

    BoxTarget box() const { return BoxTarget{cx, cy, w, h}; }
};

struct SceneSpec {
    Situation situation = Situation::NoObject;
    BackgroundKind background = BackgroundKind::Plain;
    double base_level = 0.3;
    double alt_level = 0.5;
    int texture_period = 8;
    int orientation = 0;  // 0 horizontal, 1 vertical, 2 diagonal
    std::vector<SceneObject> objects;
    int blur_radius = 0;
    double noise_sigma = 0.0;

    // geometric soundness plus the per-situation object-count/area rules
    void validate(const GenConfig& cfg) const;
};

// Composite background + rectangles, box-blur, additive noise, clamp to [0,1].
Tensor render(const SceneSpec& spec, Rng& rng, int image_size = 64);

struct SceneSample {
    SceneSpec spec;
    Tensor image;
    Situation situation = Situation::NoObject;
    std::vector<BoxTarget> boxes;
};

SceneSample gen_sample(Situation situation, Rng& rng, const GenConfig& config);

std::vector<std::pair<double, double>> box_centers(const std::vector<BoxTarget>& boxes);
// derived grid target (equal mass over occupied cells)
Tensor grid_target(const std::vector<BoxTarget>& boxes, const GridSpec& grid);

struct DatasetSample {
    Tensor image;
    Situation situation = Situation::NoObject;
    std::vector<BoxTarget> boxes;
    bool is_test = false;
};

struct Dataset {
    std::vector<DatasetSample> samples;
    std::uint64_t seed = 0;
    std::string config_hash;

    std::vector<std::size_t> class_counts() const;        // all samples
    std::vector<std::size_t> train_class_counts() const;  // train split only
};

/// Samples are laid out class-major (all NoObject, then FarObjects, then
/// CloseObject); sample i draws only from derive_seed(seed, i), and the
/// 80/20 split is stratified by within-class position.
Dataset gen_dataset(const std::vector<std::size_t>& counts, std::uint64_t seed,
                    const GenConfig& config);

// 4-way texture classification set for proxy pretraining (labels 0..3)
std::vector<LabelledImage> gen_proxy_dataset(int per_class, std::uint64_t seed,
                                             const GenConfig& config);

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// images/ subtree plus manifest.jsonl (one dataset header line, then one
// record per sample)
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace maod

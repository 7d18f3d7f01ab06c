#pragma once

#include <functional>
#include <variant>

#include "maod/heads.hpp"

namespace maod {

struct SystemConfig {
    BackboneConfig backbone;
    HeadsConfig heads;
    GridSpec grid;

    static SystemConfig defaults() { return {BackboneConfig::defaults(), HeadsConfig::defaults(), GridSpec{}}; }
    void validate() const;
    std::string describe() const;
    std::vector<std::uint8_t> fingerprint() const;  // sha256 of describe()
};

/// Configured networks over one shared bundle. Construction validates that
/// the pieces fit together (grid vs feature map, channel chains).
struct System {
    SystemConfig config;
    Extractor extractor;
    MetaHead meta;
    RoughHead rough;
    FineHead fine;

    explicit System(const SystemConfig& cfg);
};

// Registers every parameter and stamps the bundle with the config fingerprint.
System build_system(const SystemConfig& config, ModelBundle& bundle, Rng& rng);

struct Nothing {};
struct RoughCell {
    int index = 0;
    double cx = 0.0, cy = 0.0;  // geometric cell center
};
struct FineBox {
    BoxTarget box;
};

// variant index doubles as the situation index
using DetectionResult = std::variant<Nothing, RoughCell, FineBox>;

Situation result_situation(const DetectionResult& r);

struct TimingReport {
    double extract_s = 0.0;
    double meta_s = 0.0;
    double head_s = 0.0;
    double total_s = 0.0;   // accumulated TT
    std::size_t frames = 0; // NF

    double cpu_time() const;  // TT / NF
    void accumulate(const TimingReport& one);
};

/// One-frame-at-a-time dispatch: extract once, classify the situation,
/// run at most one detection head.
class Pipeline {
public:
    Pipeline(const SystemConfig& config, ModelBundle bundle);
    static Pipeline from_checkpoints(const SystemConfig& config,
                                     const std::vector<std::string>& paths);

    std::pair<DetectionResult, TimingReport> process_frame(const Tensor& image);

    System& system() { return system_; }
    ModelBundle& bundle() { return bundle_; }

    // replaces the meta verdict (the real meta head is skipped); tests only
    void set_meta_stub(std::function<Situation(const Tensor& features)> stub);

    std::size_t extract_calls() const { return extract_calls_; }
    std::size_t meta_calls() const { return meta_calls_; }
    std::size_t rough_calls() const { return rough_calls_; }
    std::size_t fine_calls() const { return fine_calls_; }

private:
    System system_;
    ModelBundle bundle_;
    std::function<Situation(const Tensor&)> meta_stub_;
    std::size_t extract_calls_ = 0;
    std::size_t meta_calls_ = 0;
    std::size_t rough_calls_ = 0;
    std::size_t fine_calls_ = 0;
};

struct SequenceResult {
    std::vector<DetectionResult> results;
    TimingReport timing;
};

SequenceResult run_sequence(Pipeline& pipeline, const std::vector<Tensor>& frames);

struct StageTiming {
    std::string stage;
    double median_s = 0.0;
    double p90_s = 0.0;
};

struct AmortizationReport {
    // medians over trials
    double shared_s = 0.0;    // extract once, meta + head reuse the map
    double unshared_s = 0.0;  // meta and head each pay a private extractor pass
    double extract_s = 0.0;
    double meta_s = 0.0;
    double head_s = 0.0;
    int trials = 0;
    std::vector<StageTiming> stages;

    double ratio() const { return unshared_s / shared_s; }
    double meta_fraction() const { return meta_s / shared_s; }
    double meta_overhead() const { return shared_s - extract_s - head_s; }
};

// trials >= 30; the image should route to a detection head for the
// shared-vs-unshared comparison to exercise both consumers
AmortizationReport amortization_probe(Pipeline& pipeline, const Tensor& image, int trials);

std::string timing_csv(const std::vector<StageTiming>& stages);

}  // namespace maod

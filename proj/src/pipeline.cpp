#include "maod/pipeline.hpp"

#include <algorithm>
#include <chrono>

namespace maod {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
    require_internal(!v.empty(), "median of an empty sample set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double percentile90(std::vector<double> v) {
    require_internal(!v.empty(), "percentile of an empty sample set");
    std::sort(v.begin(), v.end());
    const std::size_t idx = (v.size() * 9 + 9) / 10 - 1;  // ceil(0.9 n) - 1
    return v[std::min(idx, v.size() - 1)];
}

}  // namespace

void SystemConfig::validate() const {
    backbone.validate();
    heads.validate();
    grid.validate();
}

std::string SystemConfig::describe() const {
    return "backbone{" + backbone.describe() + "};heads{" + heads.describe() + "};grid{" +
           grid.describe() + "}";
}

std::vector<std::uint8_t> SystemConfig::fingerprint() const { return sha256(describe()); }

System::System(const SystemConfig& cfg)
    : config(cfg),
      extractor(cfg.backbone),
      meta(cfg.heads, extractor.output_shape()),
      rough(cfg.heads, extractor.output_shape(), cfg.grid),
      fine(cfg.heads, extractor.output_shape()) {
    cfg.validate();
}

System build_system(const SystemConfig& config, ModelBundle& bundle, Rng& rng) {
    System sys(config);
    sys.extractor.register_params(bundle, rng);
    sys.meta.register_params(bundle, rng);
    sys.rough.register_params(bundle, rng);
    sys.fine.register_params(bundle, rng);
    bundle.set_fingerprint(config.fingerprint());
    return sys;
}

Situation result_situation(const DetectionResult& r) {
    return situation_from_index(static_cast<int>(r.index()));
}

double TimingReport::cpu_time() const {
    require(frames >= 1, "timing report covers no frames");
    return total_s / static_cast<double>(frames);
}

void TimingReport::accumulate(const TimingReport& one) {
    extract_s += one.extract_s;
    meta_s += one.meta_s;
    head_s += one.head_s;
    total_s += one.total_s;
    frames += one.frames;
}

Pipeline::Pipeline(const SystemConfig& config, ModelBundle bundle)
    : system_(config), bundle_(std::move(bundle)) {
    require(!bundle_.fingerprint().empty(), "bundle carries no architecture fingerprint");
    require(bundle_.fingerprint() == config.fingerprint(),
            "checkpoint fingerprint does not match the configured architecture");
    for (const char* prefix : {"fe.", "meta.", "rough.", "fine."})
        require(!bundle_.match_prefix(prefix).empty(),
                strfmt("bundle is missing '%s' parameters", prefix));
}

Pipeline Pipeline::from_checkpoints(const SystemConfig& config,
                                    const std::vector<std::string>& paths) {
    require(!paths.empty(), "no checkpoint paths given");
    ModelBundle merged;
    for (const auto& path : paths) merged.merge(load_checkpoint(path));
    return Pipeline(config, std::move(merged));
}

void Pipeline::set_meta_stub(std::function<Situation(const Tensor&)> stub) {
    meta_stub_ = std::move(stub);
}

std::pair<DetectionResult, TimingReport> Pipeline::process_frame(const Tensor& image) {
    const auto frame_start = Clock::now();

    Tensor features = system_.extractor.extract_features(bundle_, image);
    ++extract_calls_;
    TimingReport timing;
    timing.extract_s = seconds_since(frame_start);

    const auto meta_start = Clock::now();
    Situation verdict;
    if (meta_stub_) {
        verdict = meta_stub_(features);
    } else {
        verdict = system_.meta.infer(bundle_, features).verdict();
    }
    ++meta_calls_;
    timing.meta_s = seconds_since(meta_start);

    const auto head_start = Clock::now();
    DetectionResult result = Nothing{};
    switch (verdict) {
        case Situation::NoObject:
            break;
        case Situation::FarObjects: {
            const Tensor scores = system_.rough.infer(bundle_, features);
            ++rough_calls_;
            const int idx = kernels::argmax(scores);
            const auto [cx, cy] = system_.config.grid.cell_center(idx);
            result = RoughCell{idx, cx, cy};
            break;
        }
        case Situation::CloseObject:
            result = FineBox{system_.fine.infer(bundle_, features)};
            ++fine_calls_;
            break;
    }
    timing.head_s = seconds_since(head_start);

    timing.total_s = seconds_since(frame_start);
    timing.frames = 1;
    return {result, timing};
}

SequenceResult run_sequence(Pipeline& pipeline, const std::vector<Tensor>& frames) {
    require(!frames.empty(), "run_sequence needs at least one frame");
    SequenceResult out;
    out.results.reserve(frames.size());
    for (const Tensor& frame : frames) {
        auto [result, timing] = pipeline.process_frame(frame);
        out.results.push_back(result);
        out.timing.accumulate(timing);
    }
    return out;
}

AmortizationReport amortization_probe(Pipeline& pipeline, const Tensor& image, int trials) {
    require(trials >= 30, strfmt("amortization probe needs >= 30 trials, got %d", trials));

    System& sys = pipeline.system();
    ModelBundle& bundle = pipeline.bundle();

    std::vector<double> shared, unshared, extract, meta, head;
    for (int t = 0; t < trials; ++t) {
        // (a) shared: one extractor pass feeds meta and the routed head
        auto t0 = Clock::now();
        Tensor features = sys.extractor.extract_features(bundle, image);
        const double d_extract = seconds_since(t0);

        auto t1 = Clock::now();
        const Situation verdict = sys.meta.infer(bundle, features).verdict();
        const double d_meta = seconds_since(t1);

        auto t2 = Clock::now();
        if (verdict == Situation::FarObjects) sys.rough.infer(bundle, features);
        if (verdict == Situation::CloseObject) sys.fine.infer(bundle, features);
        const double d_head = seconds_since(t2);

        // (b) unshared: meta and the head each pay a private extractor pass
        auto t3 = Clock::now();
        Tensor f_meta = sys.extractor.extract_features(bundle, image);
        sys.meta.infer(bundle, f_meta);
        double d_unshared = seconds_since(t3);
        if (verdict != Situation::NoObject) {
            auto t4 = Clock::now();
            Tensor f_head = sys.extractor.extract_features(bundle, image);
            if (verdict == Situation::FarObjects) sys.rough.infer(bundle, f_head);
            if (verdict == Situation::CloseObject) sys.fine.infer(bundle, f_head);
            d_unshared += seconds_since(t4);
        }

        extract.push_back(d_extract);
        meta.push_back(d_meta);
        head.push_back(d_head);
        shared.push_back(d_extract + d_meta + d_head);
        unshared.push_back(d_unshared);
    }

    AmortizationReport report;
    report.trials = trials;
    report.extract_s = median(extract);
    report.meta_s = median(meta);
    report.head_s = median(head);
    report.shared_s = median(shared);
    report.unshared_s = median(unshared);
    report.stages = {
        {"extract", report.extract_s, percentile90(extract)},
        {"meta", report.meta_s, percentile90(meta)},
        {"head", report.head_s, percentile90(head)},
        {"shared", report.shared_s, percentile90(shared)},
        {"unshared", report.unshared_s, percentile90(unshared)},
    };
    return report;
}

std::string timing_csv(const std::vector<StageTiming>& stages) {
    std::string out = "stage,median_s,p90_s\n";
    for (const auto& s : stages) out += strfmt("%s,%.9f,%.9f\n", s.stage.c_str(), s.median_s, s.p90_s);
    return out;
}

}  // namespace maod

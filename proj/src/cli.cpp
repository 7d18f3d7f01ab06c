#include "maod/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "maod/acquisition.hpp"
#include "maod/train.hpp"

namespace maod {

using nlohmann::json;
namespace fs = std::filesystem;

KvConfig KvConfig::parse_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            require(line.back() == ']' && line.size() > 2,
                    strfmt("config line %d: malformed section header", lineno));
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, strfmt("config line %d: expected key = value", lineno));
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        require(!key.empty(), strfmt("config line %d: empty key", lineno));
        if (!section.empty()) key = section + "." + key;
        require(cfg.kv_.emplace(key, value).second,
                strfmt("config line %d: duplicate key '%s'", lineno, key.c_str()));
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_text(buf.str());
}

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        require(pos == it->second.size(), "");
        return v;
    } catch (const std::exception&) {
        throw ValidationError(strfmt("config key '%s': '%s' is not a number", key.c_str(),
                                     it->second.c_str()));
    }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(it->second, &pos);
        require(pos == it->second.size(), "");
        return v;
    } catch (const std::exception&) {
        throw ValidationError(strfmt("config key '%s': '%s' is not an integer", key.c_str(),
                                     it->second.c_str()));
    }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ValidationError(strfmt("config key '%s': expected a boolean", key.c_str()));
}

namespace {

KvConfig load_config(const std::string& path) {
    return path.empty() ? KvConfig{} : KvConfig::parse_file(path);
}

GenConfig gen_config_from(const KvConfig& kv) {
    GenConfig c;
    c.image_size = static_cast<int>(kv.get_int("gen.image_size", c.image_size));
    c.far_area_min = kv.get_double("gen.far_area_min", c.far_area_min);
    c.far_area_max = kv.get_double("gen.far_area_max", c.far_area_max);
    c.close_area_min = kv.get_double("gen.close_area_min", c.close_area_min);
    c.close_area_max = kv.get_double("gen.close_area_max", c.close_area_max);
    c.border_lo = kv.get_double("gen.border_lo", c.border_lo);
    c.border_mid = kv.get_double("gen.border_mid", c.border_mid);
    c.border_hi = kv.get_double("gen.border_hi", c.border_hi);
    c.border_fraction = kv.get_double("gen.border_fraction", c.border_fraction);
    c.noise_sigma = kv.get_double("gen.noise_sigma", c.noise_sigma);
    c.search_blur_radius = static_cast<int>(kv.get_int("gen.blur_radius", c.search_blur_radius));
    c.validate();
    return c;
}

TrainConfig train_config_from(const KvConfig& kv, std::uint64_t seed) {
    TrainConfig c;
    c.learning_rate = kv.get_double("train.lr", c.learning_rate);
    c.momentum = kv.get_double("train.momentum", c.momentum);
    c.clip_norm = kv.get_double("train.clip", c.clip_norm);
    c.epochs = static_cast<int>(kv.get_int("train.epochs", c.epochs));
    c.batch_size = static_cast<int>(kv.get_int("train.batch", c.batch_size));
    c.seed = seed;
    c.validate();
    return c;
}

Calibration calib_from(const KvConfig& kv) {
    Calibration c = Calibration::defaults();
    c.height = kv.get_double("calib.height", c.height);
    c.tilt = kv.get_double("calib.tilt", c.tilt);
    c.fov_h = kv.get_double("calib.fov_h", c.fov_h);
    c.fov_v = kv.get_double("calib.fov_v", c.fov_v);
    c.validate();
    return c;
}

SimWorld world_from(const KvConfig& kv, std::uint64_t seed) {
    SimWorld w;
    w.robot.x = kv.get_double("world.robot_x", w.robot.x);
    w.robot.y = kv.get_double("world.robot_y", w.robot.y);
    w.robot.heading = kv.get_double("world.heading", w.robot.heading);
    w.has_object = kv.get_bool("world.has_object", w.has_object);
    w.object_x = kv.get_double("world.object_x", w.object_x);
    w.object_y = kv.get_double("world.object_y", w.object_y);
    w.object_radius = kv.get_double("world.radius", w.object_radius);
    w.noise_sigma = kv.get_double("world.noise", w.noise_sigma);
    w.seed = seed;
    w.validate();
    return w;
}

std::string prepare_out(std::string out, const std::string& command, const std::string& hash) {
    if (out.empty()) {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        localtime_r(&t, &tm);
        char stamp[32];
        std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
        out = strfmt("runs/%s-%s-%s", command.c_str(), stamp, hash.substr(0, 8).c_str());
    }
    fs::create_directories(out);
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write " + path);
    f << text;
}

void write_manifest(const std::string& out, const std::string& command, const json& options) {
    json m;
    m["command"] = command;
    m["config_hash"] = sha256_hex(options.dump());
    m["options"] = options;
    m["version"] = kVersion;
    write_text(out + "/run_manifest.json", m.dump(2) + "\n");
}

// overwrite bundle values (same names, same shapes) with checkpoint contents
void adopt_values(ModelBundle& bundle, ModelBundle& loaded, const std::string& prefix) {
    const auto params = loaded.match_prefix(prefix);
    require(!params.empty(), "checkpoint has no parameters under '" + prefix + "'");
    for (const Parameter* src : params) {
        auto& dst = bundle.at(src->name);
        require(src->value.shape() == dst.value.shape(),
                "checkpoint shape mismatch for parameter " + src->name);
        dst.value = src->value;
    }
}

json metrics_json(const Metrics& m) {
    return json{{"T", m.T},       {"NP", m.NP},
                {"NT", m.NT},     {"precision", m.precision},
                {"recall", m.recall}, {"f1", m.f1},
                {"degenerate", m.degenerate}};
}

std::vector<std::string> expand_checkpoints(const std::vector<std::string>& ckpts,
                                            const std::string& models_dir) {
    if (models_dir.empty()) return ckpts;
    std::vector<std::string> out = ckpts;
    for (const char* name : {"extractor", "meta", "rough", "fine"})
        out.push_back(models_dir + "/" + name + ".ckpt");
    return out;
}

}  // namespace

void cmd_gen(const GenOptions& opts) {
    require(opts.counts.size() == 3, "--counts expects three values: no-object,far,close");
    const KvConfig kv = load_config(opts.config_path);
    const GenConfig config = gen_config_from(kv);
    const Dataset dataset = gen_dataset(opts.counts, opts.seed, config);
    const std::string out = prepare_out(opts.out, "gen", config.hash());
    write_dataset(dataset, out + "/dataset");
    json options{{"counts", opts.counts},
                 {"seed", opts.seed},
                 {"gen_config", config.describe()},
                 {"gen_config_hash", config.hash()}};
    write_manifest(out, "gen", options);
    std::cout << strfmt("gen: wrote %zu samples to %s/dataset\n", dataset.samples.size(),
                        out.c_str());
}

void cmd_train(const TrainOptions& opts) {
    require(!opts.data.empty(), "--data is required");
    const KvConfig kv = load_config(opts.config_path);
    const Dataset dataset = load_dataset(opts.data);
    const TrainConfig base = train_config_from(kv, opts.seed);

    const SystemConfig config = SystemConfig::defaults();
    ModelBundle bundle;
    Rng rng(opts.seed);
    System system = build_system(config, bundle, rng);

    json proxy_info;
    if (!opts.extractor.empty()) {
        ModelBundle loaded = load_checkpoint(opts.extractor);
        require(loaded.fingerprint() == config.fingerprint(),
                "extractor checkpoint was built for a different architecture");
        adopt_values(bundle, loaded, Extractor::kPrefix);
        proxy_info["reused"] = opts.extractor;
    } else {
        const int per_class = static_cast<int>(kv.get_int("train.proxy_per_class", 40));
        const int proxy_epochs = static_cast<int>(kv.get_int("train.proxy_epochs", 6));
        const GenConfig gen_cfg = gen_config_from(kv);
        const auto proxy_set =
            gen_proxy_dataset(per_class, derive_seed(opts.seed, 0xF00Du), gen_cfg);
        Rng proxy_rng(derive_seed(opts.seed, 0xF00Eu));
        const ProxyReport report =
            proxy_pretrain(system.extractor, bundle, proxy_set, proxy_epochs, proxy_rng);
        proxy_info = {{"initial_accuracy", report.initial_accuracy},
                      {"final_accuracy", report.final_accuracy},
                      {"epochs", proxy_epochs},
                      {"per_class", per_class}};
        std::cout << strfmt("train: proxy accuracy %.3f -> %.3f\n", report.initial_accuracy,
                            report.final_accuracy);
    }

    freeze(bundle, Extractor::kPrefix);
    const std::string frozen_sum = bundle.checksum(Extractor::kPrefix);

    const std::string out = prepare_out(opts.out, "train", frozen_sum);
    save_checkpoint(bundle.subset(Extractor::kPrefix), out + "/extractor.ckpt");

    std::vector<HeadKind> heads;
    if (opts.head == "all") {
        heads = {HeadKind::Meta, HeadKind::Rough, HeadKind::Fine};
    } else {
        heads = {head_kind_from_name(opts.head)};
    }
    json losses;
    for (const HeadKind kind : heads) {
        const char* name = kind == HeadKind::Meta ? "meta" : kind == HeadKind::Rough ? "rough"
                                                                                     : "fine";
        TrainConfig cfg = base;
        cfg.epochs = static_cast<int>(kv.get_int(strfmt("train.%s_epochs", name), cfg.epochs));
        cfg.learning_rate = kv.get_double(strfmt("train.%s_lr", name), cfg.learning_rate);
        const TrainResult result = train_head(kind, system, bundle, dataset, cfg);
        save_checkpoint(bundle.subset(std::string(name) + "."), out + "/" + name + ".ckpt");
        write_text(out + strfmt("/loss_%s.csv", name), loss_curve_csv(result.loss_curve));
        losses[name] = result.loss_curve.empty() ? 0.0 : result.loss_curve.back();
        std::cout << strfmt("train: %s final epoch loss %.6f\n", name,
                            result.loss_curve.empty() ? 0.0 : result.loss_curve.back());
    }
    require_internal(bundle.checksum(Extractor::kPrefix) == frozen_sum,
                     "frozen extractor changed during head training");

    json options{{"data", opts.data},         {"head", opts.head},
                 {"seed", opts.seed},         {"dataset_config_hash", dataset.config_hash},
                 {"lr", base.learning_rate},  {"momentum", base.momentum},
                 {"epochs", base.epochs},     {"batch", base.batch_size},
                 {"proxy", proxy_info},       {"final_losses", losses}};
    write_manifest(out, "train", options);
    std::cout << strfmt("train: checkpoints in %s\n", out.c_str());
}

void cmd_eval(const EvalOptions& opts) {
    require(!opts.data.empty(), "--data is required");
    require(!opts.checkpoints.empty(), "eval needs checkpoints (--ckpt or --models)");
    const Dataset dataset = load_dataset(opts.data);
    Pipeline pipeline = Pipeline::from_checkpoints(SystemConfig::defaults(), opts.checkpoints);
    System& system = pipeline.system();
    ModelBundle& bundle = pipeline.bundle();

    const MetaEvalResult meta = evaluate_meta(system, bundle, dataset);
    const Metrics rough =
        evaluate_rough(system, bundle, dataset, system.config.grid, opts.rough_threshold);
    const FineEvalResult fine = evaluate_fine(system, bundle, dataset, opts.iou_threshold);

    const std::string out = prepare_out(opts.out, "eval", dataset.config_hash);
    write_text(out + "/confusion.csv", meta.confusion.csv());
    write_text(out + "/rough_metrics.csv", rough.csv());
    write_text(out + "/fine_metrics.csv", fine.metrics.csv());
    json summary{{"meta_accuracy", meta.accuracy},
                 {"rough", metrics_json(rough)},
                 {"fine", metrics_json(fine.metrics)},
                 {"fine_mean_iou", fine.mean_iou}};
    write_text(out + "/summary.json", summary.dump(2) + "\n");

    json options{{"data", opts.data},
                 {"checkpoints", opts.checkpoints},
                 {"rough_threshold", opts.rough_threshold},
                 {"iou_threshold", opts.iou_threshold},
                 {"dataset_config_hash", dataset.config_hash}};
    write_manifest(out, "eval", options);
    std::cout << strfmt("eval: meta accuracy %.4f, rough F1 %.4f, fine F1 %.4f, mIoU %.4f\n",
                        meta.accuracy, rough.f1, fine.metrics.f1, fine.mean_iou);
}

void cmd_bench(const BenchOptions& opts) {
    require(!opts.data.empty(), "--data is required");
    require(!opts.checkpoints.empty(), "bench needs checkpoints (--ckpt or --models)");
    require(opts.frames >= 1, "--frames must be at least 1");
    const Dataset dataset = load_dataset(opts.data);
    Pipeline pipeline = Pipeline::from_checkpoints(SystemConfig::defaults(), opts.checkpoints);

    std::vector<Tensor> frames;
    for (const auto& s : dataset.samples) {
        if (static_cast<int>(frames.size()) >= opts.frames) break;
        frames.push_back(s.image);
    }
    require(!frames.empty(), "dataset has no frames");

    const Tensor* probe_image = &frames.front();
    for (const auto& s : dataset.samples) {
        if (s.situation == Situation::CloseObject) {
            probe_image = &s.image;
            break;
        }
    }

    const SequenceResult seq = run_sequence(pipeline, frames);
    const AmortizationReport probe = amortization_probe(pipeline, *probe_image, opts.trials);

    const std::string out = prepare_out(opts.out, "bench", dataset.config_hash);
    write_text(out + "/stage_timing.csv", timing_csv(probe.stages));
    write_text(out + "/sequence_timing.csv",
               strfmt("TT_s,NF,cpu_time_s\n%.9f,%zu,%.9f\n", seq.timing.total_s,
                      seq.timing.frames, seq.timing.cpu_time()));
    write_text(out + "/amortization.csv",
               strfmt("shared_s,unshared_s,trials\n%.9f,%.9f,%d\n", probe.shared_s,
                      probe.unshared_s, probe.trials));

    json options{{"data", opts.data},
                 {"checkpoints", opts.checkpoints},
                 {"frames", frames.size()},
                 {"trials", opts.trials}};
    write_manifest(out, "bench", options);
    std::cout << strfmt("bench: NF=%zu cpu_time=%.6fs shared=%.6fs unshared=%.6fs\n",
                        seq.timing.frames, seq.timing.cpu_time(), probe.shared_s,
                        probe.unshared_s);
}

void cmd_sim(const SimOptions& opts) {
    const KvConfig kv = load_config(opts.config_path);
    const Calibration calib = calib_from(kv);
    const SimWorld world = world_from(kv, opts.seed);

    std::optional<Pipeline> pipeline;
    if (!opts.oracle) {
        require(!opts.checkpoints.empty(), "sim needs checkpoints (--ckpt/--models) or --oracle");
        pipeline.emplace(Pipeline::from_checkpoints(SystemConfig::defaults(), opts.checkpoints));
    }

    json options{{"oracle", opts.oracle},
                 {"seed", opts.seed},
                 {"max_steps", opts.max_steps},
                 {"checkpoints", opts.checkpoints},
                 {"world",
                  {{"robot", {world.robot.x, world.robot.y, world.robot.heading}},
                   {"has_object", world.has_object},
                   {"object", {world.object_x, world.object_y}},
                   {"radius", world.object_radius}}}};

    if (opts.port >= 0) {
        const std::string out = prepare_out(opts.out, "sim", sha256_hex(options.dump()));
        const GridSpec grid =
            pipeline ? pipeline->system().config.grid : SystemConfig::defaults().grid;
        const DetectorFn detector = [&](const Tensor& image) -> DetectionResult {
            if (pipeline) return pipeline->process_frame(image).first;
            return oracle_detection(world, world.robot, calib, grid);
        };
        const CameraSource camera = [&]() -> std::optional<Tensor> {
            return render_view(world, world.robot, calib);
        };
        const int served = serve_acquisition(
            opts.port, camera, detector, calib, opts.requests,
            [](int port) { std::cout << "listening on port " << port << std::endl; });
        options["served"] = served;
        write_manifest(out, "sim", options);
        std::cout << strfmt("sim: served %d request(s)\n", served);
        return;
    }

    const DetectorRef detector =
        pipeline ? DetectorRef{&*pipeline} : DetectorRef{OracleDetector{}};
    const SimResult result = simulate_approach(world, detector, calib, opts.max_steps);

    const std::string out = prepare_out(opts.out, "sim", sha256_hex(options.dump()));
    write_text(out + "/trajectory.csv", trajectory_csv(result));
    json summary{{"steps", result.steps},
                 {"final_phase", phase_name(result.final_phase)},
                 {"final_distance", result.final_distance},
                 {"grasped", result.final_phase == Phase::Grasped}};
    write_text(out + "/sim_summary.json", summary.dump(2) + "\n");
    write_manifest(out, "sim", options);
    std::cout << strfmt("sim: %s after %d step(s), final distance %.3f m\n",
                        phase_name(result.final_phase), result.steps, result.final_distance);
}

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"model-adaptive object detection at desk scale"};
    app.require_subcommand(1);

    GenOptions gen;
    TrainOptions train;
    EvalOptions eval;
    BenchOptions bench;
    SimOptions sim;
    std::string eval_models, bench_models, sim_models;

    auto* g = app.add_subcommand("gen", "generate a synthetic dataset");
    g->add_option("--counts", gen.counts, "no-object,far,close sample counts")->delimiter(',');
    g->add_option("--seed", gen.seed, "RNG seed");
    g->add_option("--out", gen.out, "output directory");
    g->add_option("--config", gen.config_path, "key = value config file");
    g->callback([&] { cmd_gen(gen); });

    auto* t = app.add_subcommand("train", "train detection heads on a dataset");
    t->add_option("--data", train.data, "dataset directory (from gen)")->required();
    t->add_option("--head", train.head, "meta|rough|fine|all");
    t->add_option("--seed", train.seed, "RNG seed");
    t->add_option("--out", train.out, "output directory");
    t->add_option("--extractor", train.extractor, "reuse this extractor checkpoint");
    t->add_option("--config", train.config_path, "key = value config file");
    t->callback([&] { cmd_train(train); });

    auto* e = app.add_subcommand("eval", "evaluate checkpoints on a dataset");
    e->add_option("--data", eval.data, "dataset directory")->required();
    e->add_option("--ckpt", eval.checkpoints, "checkpoint file (repeatable)");
    e->add_option("--models", eval_models, "directory holding the four checkpoints");
    e->add_option("--rough-threshold", eval.rough_threshold, "cell score threshold");
    e->add_option("--iou-threshold", eval.iou_threshold, "fine IoU threshold");
    e->add_option("--out", eval.out, "output directory");
    e->add_option("--config", eval.config_path, "key = value config file");
    e->callback([&] {
        eval.checkpoints = expand_checkpoints(eval.checkpoints, eval_models);
        cmd_eval(eval);
    });

    auto* b = app.add_subcommand("bench", "timing benchmarks over a frame sequence");
    b->add_option("--data", bench.data, "dataset directory")->required();
    b->add_option("--ckpt", bench.checkpoints, "checkpoint file (repeatable)");
    b->add_option("--models", bench_models, "directory holding the four checkpoints");
    b->add_option("--frames", bench.frames, "frames to push through the pipeline");
    b->add_option("--trials", bench.trials, "amortization probe trials (>= 30)");
    b->add_option("--out", bench.out, "output directory");
    b->add_option("--config", bench.config_path, "key = value config file");
    b->callback([&] {
        bench.checkpoints = expand_checkpoints(bench.checkpoints, bench_models);
        cmd_bench(bench);
    });

    auto* s = app.add_subcommand("sim", "closed-loop approach-and-grasp simulation");
    s->add_option("--ckpt", sim.checkpoints, "checkpoint file (repeatable)");
    s->add_option("--models", sim_models, "directory holding the four checkpoints");
    s->add_flag("--oracle", sim.oracle, "drive from ground-truth geometry");
    s->add_option("--seed", sim.seed, "world seed");
    s->add_option("--steps", sim.max_steps, "step budget");
    s->add_option("--port", sim.port, "serve the acquisition byte protocol on this port");
    s->add_option("--requests", sim.requests, "requests to serve before exiting");
    s->add_option("--out", sim.out, "output directory");
    s->add_option("--config", sim.config_path, "key = value config file");
    s->callback([&] {
        sim.checkpoints = expand_checkpoints(sim.checkpoints, sim_models);
        cmd_sim(sim);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

}  // namespace maod

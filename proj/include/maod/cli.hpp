#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace maod {

constexpr const char* kVersion = "0.1.0";

/// Line-oriented `key = value` configuration with `[section]` headers;
/// section names prefix the keys ("train.epochs").
class KvConfig {
public:
    static KvConfig parse_text(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

struct GenOptions {
    std::vector<std::size_t> counts{607, 452, 328};
    std::uint64_t seed = 1;
    std::string out;
    std::string config_path;
};

struct TrainOptions {
    std::string data;
    std::string head = "all";
    std::uint64_t seed = 1;
    std::string out;
    std::string extractor;  // reuse this checkpoint instead of proxy pretraining
    std::string config_path;
};

struct EvalOptions {
    std::string data;
    std::vector<std::string> checkpoints;
    std::string out;
    std::string config_path;
    double rough_threshold = 0.5;
    double iou_threshold = 0.5;
};

struct BenchOptions {
    std::vector<std::string> checkpoints;
    std::string data;
    int frames = 32;
    int trials = 50;
    std::string out;
    std::string config_path;
};

struct SimOptions {
    std::vector<std::string> checkpoints;
    bool oracle = false;
    std::uint64_t seed = 1;
    int max_steps = 400;
    std::string out;
    std::string config_path;
    int port = -1;  // when >= 0, serve the acquisition byte protocol instead
    int requests = 1;
};

// Subcommand bodies; each creates the output directory, writes its artifacts
// and a run_manifest.json describing the run.
void cmd_gen(const GenOptions& opts);
void cmd_train(const TrainOptions& opts);
void cmd_eval(const EvalOptions& opts);
void cmd_bench(const BenchOptions& opts);
void cmd_sim(const SimOptions& opts);

// exit codes: 0 success, 1 usage, 2 validation, 3 internal
int run_cli(int argc, const char* const* argv);

}  // namespace maod

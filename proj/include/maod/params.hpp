#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "maod/autograd.hpp"
#include "maod/tensor.hpp"

namespace maod {

/// Every parameter of a model (extractor plus heads) lives in one bundle,
/// keyed by a dotted name ("fe.b0.dw", "meta.fc.w", ...). Parameters stay at
/// stable addresses once added, so autograd nodes may hold pointers to them.
class ModelBundle {
public:
    ModelBundle() = default;

    Parameter& add(const std::string& name, Tensor value, bool frozen = false);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }
    std::size_t size() const { return params_.size(); }

    std::map<std::string, Parameter>& entries() { return params_; }
    const std::map<std::string, Parameter>& entries() const { return params_; }

    std::vector<Parameter*> match_prefix(const std::string& prefix);
    void freeze_prefix(const std::string& prefix);  // no match is an error (catches typos)

    std::size_t total_params() const;
    std::size_t trainable_params() const;

    // SHA-256 over (name, raw value bytes) of every parameter whose name
    // starts with prefix; the freeze contract compares these before/after.
    std::string checksum(const std::string& prefix = "") const;

    // 32-byte hash of the architecture config; empty until assigned
    const std::vector<std::uint8_t>& fingerprint() const { return fingerprint_; }
    void set_fingerprint(std::vector<std::uint8_t> fp);

    ModelBundle subset(const std::string& prefix) const;
    // Adds every parameter of other; duplicate names or disagreeing
    // fingerprints are errors. An empty fingerprint adopts the other side's.
    void merge(const ModelBundle& other);

private:
    std::map<std::string, Parameter> params_;
    std::vector<std::uint8_t> fingerprint_;
};

// Uniform init in +-sqrt(6 / fan_in); biases start at zero.
Tensor init_conv_weights(const ConvSpec& spec, Rng& rng);
Tensor init_linear_weights(int out_dim, int in_dim, Rng& rng);

// Little-endian binary checkpoint: magic "MAOD", version u16, 32-byte
// fingerprint, then per parameter (name_len u32, name, frozen u8, rank u32,
// dims u64 each, values f64 each) in name order.
void save_checkpoint(const ModelBundle& bundle, const std::string& path);
ModelBundle load_checkpoint(const std::string& path);

std::vector<std::uint8_t> encode_checkpoint(const ModelBundle& bundle);
ModelBundle decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace maod

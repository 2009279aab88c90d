#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "tomodet/diff/tensor.hpp"

namespace tomodet::diff {

enum class Partition { recon, detector };

const char* partition_name(Partition p);

/// Named, ordered collection of trainable leaves belonging to one sub-network.
class ParamSet {
public:
    explicit ParamSet(Partition partition) : partition_(partition) {}

    Partition partition() const { return partition_; }

    /// Registers a parameter; names must be unique.
    Tensor& add(const std::string& name, Shape shape, std::vector<double> values);

    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    std::size_t element_total() const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grad();
    /// Copy whose entries are untracked constants, for tape-free inference.
    ParamSet frozen() const;
    /// Sets every value to zero (the "zero weights" network).
    void fill_zero();
    /// Largest |grad| over all entries; 0 when no gradient has been produced.
    double max_abs_grad() const;

private:
    Partition partition_;
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// He-uniform fan-in initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
std::vector<double> he_uniform(std::size_t count, std::size_t fan_in, std::mt19937_64& rng);

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Gradients are read, never cleared.
class Adam {
public:
    Adam(const ParamSet& params, AdamConfig config);

    void step(ParamSet& params);
    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

/// TDCKPT1 checkpoint: a "TDCKPT1" line, then per parameter
/// u32 name length, name bytes, u32 rank, u32 extents, float32 values (LE).
void save_checkpoint(const std::filesystem::path& path, const std::vector<const ParamSet*>& sets);

struct CheckpointEntry {
    Shape shape;
    std::vector<float> values;
};
std::map<std::string, CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Copies every parameter of `params` from the checkpoint; a missing name or
/// a shape mismatch is a DataError.
void load_into(const std::map<std::string, CheckpointEntry>& ckpt, ParamSet& params);

} // namespace tomodet::diff

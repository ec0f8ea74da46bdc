#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "netsift/labels.hpp"
#include "netsift/preprocess.hpp"

namespace netsift {

struct LabeledGraph {
    TrafficGraph graph;
    ClassLabel label;
};

struct ManifestEntry {
    ClassLabel label;
    uint64_t count = 0;
    double percentage = 0.0;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;  // canonical label order
    uint64_t unlabeled = 0;
    uint64_t total = 0;
    uint64_t seed = 0;
    std::vector<std::string> sources;

    std::string to_json() const;
    // Count and percentage invariants; throws VerifyError when violated.
    void validate() const;
};

// Per-class pools as loaded from disk (one pool per class file).
using Pools = std::map<ClassLabel, std::vector<TrafficGraph>>;

// Named pools in a fixed order; the unit balance() samples from.
using NamedPools = std::vector<std::pair<std::string, std::vector<LabeledGraph>>>;

// Dataset directory layout: <root>/<top>/<name>.npy where <name> is the
// encrypted subclass or the top class itself, plus manifest.json.
std::filesystem::path class_file_path(const std::filesystem::path& root,
                                      const ClassLabel& label);

// Writes one NPY file per class present in `graphs` plus manifest.json.
// Deterministic byte-for-byte for a fixed input.
DatasetManifest write_npy(const std::vector<LabeledGraph>& graphs,
                          const std::filesystem::path& dir, uint64_t seed = 0,
                          std::vector<std::string> sources = {});

// Unlabeled variant: writes <dir>/unlabeled.npy plus manifest.json.
DatasetManifest write_unlabeled_npy(const std::vector<TrafficGraph>& graphs,
                                    const std::filesystem::path& dir, uint64_t seed = 0,
                                    std::vector<std::string> sources = {});

// Loads a single class file: shape (N, 784) or (N, 28, 28), unsigned 8-bit.
std::vector<TrafficGraph> read_npy(const std::filesystem::path& path);

// Scans a dataset directory for the known class files.
Pools load_dataset_dir(const std::filesystem::path& root);

// Groups per-class pools into the pools a task trains over (3-class merges
// the encrypted subclasses into one pool; 6-class keeps them apart).
NamedPools task_pools(const Pools& pools, Task task);

// Samples exactly n_per_class from every pool without replacement and
// shuffles the result. Throws ConfigError naming the class and shortfall
// when a pool is undersized.
std::vector<LabeledGraph> balance(const NamedPools& pools, size_t n_per_class,
                                  uint64_t seed);

// Stratified split; |test| per class = round(fraction * class size).
// Degenerate splits (an empty side for any class) are rejected.
std::pair<std::vector<LabeledGraph>, std::vector<LabeledGraph>> split(
    const std::vector<LabeledGraph>& dataset, double test_fraction, uint64_t seed);

struct SynthClassSpec {
    ClassLabel label;
    double mean_byte = 32.0;
    double stddev = 8.0;
    // marker bytes planted after the noise fill: (offset, value)
    std::vector<std::pair<size_t, uint8_t>> markers;
};

struct SynthSpec {
    std::vector<SynthClassSpec> classes;
    size_t samples_per_class = 0;
    uint64_t seed = 0;

    void validate() const;  // classes must stay pairwise distinguishable
};

// Desk-scale labeled traffic stand-in: per class, byte noise from the class
// distribution with the class markers planted. Deterministic per seed.
std::vector<LabeledGraph> synth_generate(const SynthSpec& spec);

// A ready-made synthetic spec for an n-way task: distinct high-contrast
// marker blocks per class over a low-noise background.
SynthSpec default_synth_spec(size_t num_classes, size_t samples_per_class,
                             uint64_t seed);

}  // namespace netsift

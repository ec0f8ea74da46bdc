#include "netsift/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "netsift/errors.hpp"
#include "netsift/npy.hpp"
#include "netsift/rng.hpp"

namespace netsift {

namespace {

std::string file_stem(const ClassLabel& label) {
    return label.sub ? enc_sub_names()[static_cast<size_t>(*label.sub)]
                     : top_class_names()[static_cast<size_t>(label.top)];
}

}  // namespace

std::filesystem::path class_file_path(const std::filesystem::path& root,
                                      const ClassLabel& label) {
    return root / top_class_names()[static_cast<size_t>(label.top)] /
           (file_stem(label) + ".npy");
}

std::string DatasetManifest::to_json() const {
    nlohmann::ordered_json j;
    j["total"] = total;
    j["seed"] = seed;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        nlohmann::ordered_json c;
        c["label"] = to_string(e.label);
        c["count"] = e.count;
        c["percentage"] = e.percentage;
        j["classes"].push_back(c);
    }
    if (unlabeled) j["unlabeled"] = unlabeled;
    j["sources"] = sources;
    return j.dump(2) + "\n";
}

void DatasetManifest::validate() const {
    uint64_t sum = 0;
    double pct = 0.0;
    for (const auto& e : entries) {
        sum += e.count;
        pct += e.percentage;
    }
    if (sum + unlabeled != total) throw VerifyError("manifest counts do not sum to total");
    if (!entries.empty() && std::abs(pct - 100.0) > 0.01)
        throw VerifyError("manifest percentages do not sum to 100");
}

DatasetManifest write_npy(const std::vector<LabeledGraph>& graphs,
                          const std::filesystem::path& dir, uint64_t seed,
                          std::vector<std::string> sources) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory: " + dir.string());

    // Group by label in canonical order; every label present in the input
    // gets a file, even when empty pools were passed explicitly.
    std::map<ClassLabel, std::vector<const TrafficGraph*>> by_label;
    for (const auto& lg : graphs) {
        if (!lg.label.valid()) throw ConfigError("labeled graph with malformed label");
        by_label[lg.label].push_back(&lg.graph);
    }

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.sources = std::move(sources);
    manifest.total = graphs.size();

    for (const auto& [label, items] : by_label) {
        auto path = class_file_path(dir, label);
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create class directory: " + path.parent_path().string());

        NpyArray arr;
        arr.shape = {items.size(), TrafficGraph::kPixels};
        arr.data.reserve(items.size() * TrafficGraph::kPixels);
        for (const TrafficGraph* g : items)
            arr.data.insert(arr.data.end(), g->pixels.begin(), g->pixels.end());
        npy_save_u8(path, arr);

        ManifestEntry e;
        e.label = label;
        e.count = items.size();
        e.percentage = manifest.total ? 100.0 * static_cast<double>(items.size()) /
                                            static_cast<double>(manifest.total)
                                      : 0.0;
        manifest.entries.push_back(e);
    }

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest.json in " + dir.string());
    mf << manifest.to_json();
    return manifest;
}

DatasetManifest write_unlabeled_npy(const std::vector<TrafficGraph>& graphs,
                                    const std::filesystem::path& dir, uint64_t seed,
                                    std::vector<std::string> sources) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory: " + dir.string());

    NpyArray arr;
    arr.shape = {graphs.size(), TrafficGraph::kPixels};
    arr.data.reserve(graphs.size() * TrafficGraph::kPixels);
    for (const auto& g : graphs)
        arr.data.insert(arr.data.end(), g.pixels.begin(), g.pixels.end());
    npy_save_u8(dir / "unlabeled.npy", arr);

    DatasetManifest manifest;
    manifest.unlabeled = graphs.size();
    manifest.total = graphs.size();
    manifest.seed = seed;
    manifest.sources = std::move(sources);

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest.json in " + dir.string());
    mf << manifest.to_json();
    return manifest;
}

std::vector<TrafficGraph> read_npy(const std::filesystem::path& path) {
    NpyArray arr = npy_load_u8(path);
    size_t rows = 0;
    if (arr.shape.size() == 2 && arr.shape[1] == TrafficGraph::kPixels) {
        rows = arr.shape[0];
    } else if (arr.shape.size() == 3 && arr.shape[1] == TrafficGraph::kSide &&
               arr.shape[2] == TrafficGraph::kSide) {
        rows = arr.shape[0];
    } else {
        std::string got = "(";
        for (size_t i = 0; i < arr.shape.size(); ++i)
            got += (i ? ", " : "") + std::to_string(arr.shape[i]);
        got += ")";
        throw FormatError("npy shape mismatch: expected (N, 784) or (N, 28, 28), got " + got +
                          " in " + path.string());
    }

    std::vector<TrafficGraph> graphs;
    graphs.reserve(rows);
    for (size_t r = 0; r < rows; ++r) {
        TrafficGraph g;
        g.pixels.assign(arr.data.begin() + static_cast<ptrdiff_t>(r * TrafficGraph::kPixels),
                        arr.data.begin() +
                            static_cast<ptrdiff_t>((r + 1) * TrafficGraph::kPixels));
        g.origin.file = path.string();
        g.origin.packet_ordinal = r;
        graphs.push_back(std::move(g));
    }
    return graphs;
}

Pools load_dataset_dir(const std::filesystem::path& root) {
    if (!std::filesystem::is_directory(root))
        throw IoError("dataset directory not found: " + root.string());
    Pools pools;
    for (const ClassLabel& label : all_labels()) {
        auto path = class_file_path(root, label);
        if (std::filesystem::exists(path)) pools[label] = read_npy(path);
    }
    if (pools.empty())
        throw FormatError("no class files found under " + root.string());
    return pools;
}

NamedPools task_pools(const Pools& pools, Task task) {
    NamedPools out;
    if (task == Task::ThreeClass) {
        std::vector<LabeledGraph> encrypted;
        for (int i = 0; i < 6; ++i) {
            ClassLabel l = ClassLabel::encrypted(static_cast<EncSub>(i));
            auto it = pools.find(l);
            if (it == pools.end()) continue;
            for (const auto& g : it->second) encrypted.push_back({g, l});
        }
        out.emplace_back("Encrypted", std::move(encrypted));
        for (TopClass top : {TopClass::Benign, TopClass::Malware}) {
            ClassLabel l{top, std::nullopt};
            std::vector<LabeledGraph> pool;
            auto it = pools.find(l);
            if (it != pools.end())
                for (const auto& g : it->second) pool.push_back({g, l});
            out.emplace_back(top_class_names()[static_cast<size_t>(top)], std::move(pool));
        }
    } else {
        for (int i = 0; i < 6; ++i) {
            ClassLabel l = ClassLabel::encrypted(static_cast<EncSub>(i));
            std::vector<LabeledGraph> pool;
            auto it = pools.find(l);
            if (it != pools.end())
                for (const auto& g : it->second) pool.push_back({g, l});
            out.emplace_back(enc_sub_names()[static_cast<size_t>(i)], std::move(pool));
        }
    }
    return out;
}

std::vector<LabeledGraph> balance(const NamedPools& pools, size_t n_per_class,
                                  uint64_t seed) {
    for (const auto& [name, pool] : pools)
        if (pool.size() < n_per_class)
            throw ConfigError("class " + name + " has " + std::to_string(pool.size()) +
                              " samples, " + std::to_string(n_per_class - pool.size()) +
                              " short of the requested " + std::to_string(n_per_class));

    Rng rng(seed);
    std::vector<LabeledGraph> out;
    out.reserve(n_per_class * pools.size());
    for (const auto& [name, pool] : pools) {
        // partial Fisher-Yates: the first n_per_class slots become the sample
        std::vector<size_t> idx(pool.size());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        for (size_t i = 0; i < n_per_class; ++i) {
            size_t j = i + static_cast<size_t>(rng.below(idx.size() - i));
            std::swap(idx[i], idx[j]);
            out.push_back(pool[idx[i]]);
        }
    }
    rng.shuffle(out);
    return out;
}

std::pair<std::vector<LabeledGraph>, std::vector<LabeledGraph>> split(
    const std::vector<LabeledGraph>& dataset, double test_fraction, uint64_t seed) {
    if (dataset.empty()) throw ConfigError("cannot split an empty dataset");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test fraction must lie in (0, 1)");

    std::map<ClassLabel, std::vector<size_t>> by_label;
    for (size_t i = 0; i < dataset.size(); ++i) by_label[dataset[i].label].push_back(i);

    Rng rng(seed);
    std::vector<LabeledGraph> train, test;
    for (auto& [label, idx] : by_label) {
        rng.shuffle(idx);
        auto n_test = static_cast<size_t>(
            std::llround(test_fraction * static_cast<double>(idx.size())));
        if (n_test == 0 || n_test == idx.size())
            throw ConfigError("degenerate split for class " + to_string(label) + ": " +
                              std::to_string(idx.size() - n_test) + " train / " +
                              std::to_string(n_test) + " test");
        for (size_t i = 0; i < idx.size(); ++i)
            (i < n_test ? test : train).push_back(dataset[idx[i]]);
    }
    rng.shuffle(train);
    rng.shuffle(test);
    return {std::move(train), std::move(test)};
}

void SynthSpec::validate() const {
    if (classes.empty()) throw ConfigError("synthetic spec has no classes");
    for (size_t a = 0; a < classes.size(); ++a) {
        if (!classes[a].label.valid()) throw ConfigError("synthetic spec label malformed");
        for (size_t b = a + 1; b < classes.size(); ++b) {
            if (classes[a].label == classes[b].label)
                throw ConfigError("synthetic spec repeats label " +
                                  to_string(classes[a].label));
            if (classes[a].markers == classes[b].markers)
                throw ConfigError("synthetic classes " + to_string(classes[a].label) +
                                  " and " + to_string(classes[b].label) +
                                  " share identical markers");
        }
    }
}

std::vector<LabeledGraph> synth_generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<LabeledGraph> out;
    out.reserve(spec.classes.size() * spec.samples_per_class);
    for (const auto& cls : spec.classes) {
        for (size_t s = 0; s < spec.samples_per_class; ++s) {
            FixedRecord rec;
            rec.payload.resize(TrafficGraph::kPixels);
            for (auto& b : rec.payload) {
                double v = std::round(rng.normal(cls.mean_byte, cls.stddev));
                b = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
            }
            for (const auto& [off, val] : cls.markers)
                rec.payload.at(off % TrafficGraph::kPixels) = val;
            GraphOrigin origin;
            origin.file = "synthetic";
            origin.packet_ordinal = out.size();
            out.push_back({to_graph(rec, std::move(origin)), cls.label});
        }
    }
    return out;
}

SynthSpec default_synth_spec(size_t num_classes, size_t samples_per_class,
                             uint64_t seed) {
    if (num_classes != 3 && num_classes != 6)
        throw ConfigError("default synthetic spec supports 3 or 6 classes");
    SynthSpec spec;
    spec.samples_per_class = samples_per_class;
    spec.seed = seed;
    for (size_t c = 0; c < num_classes; ++c) {
        SynthClassSpec cls;
        if (num_classes == 3) {
            cls.label = c == 0 ? ClassLabel::encrypted(EncSub::Chat)
                       : c == 1 ? ClassLabel::benign()
                                : ClassLabel::malware();
        } else {
            cls.label = ClassLabel::encrypted(static_cast<EncSub>(c));
        }
        cls.mean_byte = 32.0;
        cls.stddev = 8.0;
        // a 16-byte block of 0xFF at a class-specific stripe
        for (size_t k = 0; k < 16; ++k)
            cls.markers.emplace_back(40 + c * 96 + k, 0xFF);
        spec.classes.push_back(std::move(cls));
    }
    return spec;
}

}  // namespace netsift

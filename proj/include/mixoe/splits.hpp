#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mixoe/dataset.hpp"
#include "mixoe/errors.hpp"
#include "mixoe/rng.hpp"

namespace mixoe {

// One reproducible OOD environment: which classes stay in-distribution, which
// are held out as fine-grained OOD, and which sibling datasets provide
// coarse-grained OOD.
struct EnvironmentSpec {
    std::string dataset_name;
    int split_index = 1; // 1-based
    std::vector<std::string> id_classes;
    std::vector<std::string> fine_ood_classes;
    std::vector<std::string> coarse_ood_sources;
    std::uint64_t seed = 0;

    bool operator==(const EnvironmentSpec&) const = default;
};

struct DataPartition {
    std::vector<Example> train;
    std::vector<Example> validation;
    std::vector<Example> test;
};

struct OutlierPool {
    std::vector<Example> examples;
    std::optional<std::vector<std::string>> source_labels;
    std::vector<std::string> excluded_concepts;
};

inline void validate_environment_spec(const EnvironmentSpec& spec) {
    if (spec.dataset_name.empty())
        throw std::invalid_argument("environment spec: empty dataset_name");
    if (spec.split_index < 1)
        throw std::invalid_argument("environment spec: split_index must be >= 1");
    std::unordered_set<std::string> id(spec.id_classes.begin(), spec.id_classes.end());
    if (id.size() != spec.id_classes.size())
        throw std::invalid_argument("environment spec: duplicate id class");
    for (const auto& c : spec.fine_ood_classes)
        if (id.count(c))
            throw std::invalid_argument("environment spec: class '" + c +
                                        "' is both ID and fine-OOD");
    std::unordered_set<std::string> fine(spec.fine_ood_classes.begin(),
                                         spec.fine_ood_classes.end());
    if (fine.size() != spec.fine_ood_classes.size())
        throw std::invalid_argument("environment spec: duplicate fine-OOD class");
    for (const auto& s : spec.coarse_ood_sources)
        if (s == spec.dataset_name)
            throw std::invalid_argument(
                "environment spec: dataset cannot be its own coarse-OOD source");
}

// For each split, an independent deterministic draw of n_ood holdout classes.
// Splits may overlap; each split's generator is derived from (seed, index).
inline std::vector<EnvironmentSpec> make_holdout_splits(
    const std::vector<std::string>& class_set, std::size_t n_ood, std::size_t n_splits,
    std::uint64_t seed, const std::string& dataset_name = "dataset",
    const std::vector<std::string>& coarse_ood_sources = {}) {
    if (class_set.empty()) throw std::invalid_argument("make_holdout_splits: empty class set");
    if (n_ood >= class_set.size())
        throw std::invalid_argument("make_holdout_splits: n_ood must be < |class_set|");
    if (n_splits < 1) throw std::invalid_argument("make_holdout_splits: n_splits must be >= 1");
    {
        std::unordered_set<std::string> uniq(class_set.begin(), class_set.end());
        if (uniq.size() != class_set.size())
            throw std::invalid_argument("make_holdout_splits: duplicate class id");
    }

    std::vector<EnvironmentSpec> specs;
    for (std::size_t s = 1; s <= n_splits; ++s) {
        Rng rng(mix_seed(seed, s));
        std::vector<std::size_t> picked = rng.sample_without_replacement(class_set.size(), n_ood);
        std::vector<bool> is_ood(class_set.size(), false);
        for (std::size_t i : picked) is_ood[i] = true;
        EnvironmentSpec spec;
        spec.dataset_name = dataset_name;
        spec.split_index = static_cast<int>(s);
        spec.seed = seed;
        spec.coarse_ood_sources = coarse_ood_sources;
        for (std::size_t i = 0; i < class_set.size(); ++i)
            (is_ood[i] ? spec.fine_ood_classes : spec.id_classes).push_back(class_set[i]);
        validate_environment_spec(spec);
        specs.push_back(std::move(spec));
    }
    return specs;
}

// Per-class stratified train/validation carve of the ID portion; holdout
// classes are dropped entirely, ID test comes from the canonical test split.
inline DataPartition partition_id_data(const Dataset& dataset, const EnvironmentSpec& spec,
                                       double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw std::invalid_argument("partition_id_data: val_fraction must be in (0,1)");
    std::unordered_map<std::string, int> id_rank;
    for (std::size_t i = 0; i < spec.id_classes.size(); ++i)
        id_rank[spec.id_classes[i]] = static_cast<int>(i);

    std::unordered_map<std::string, std::vector<Example>> by_class;
    for (const auto& ex : dataset.train)
        if (id_rank.count(ex.class_id)) by_class[ex.class_id].push_back(ex);

    DataPartition part;
    for (std::size_t ci = 0; ci < spec.id_classes.size(); ++ci) {
        const std::string& cls = spec.id_classes[ci];
        auto it = by_class.find(cls);
        if (it == by_class.end() || it->second.empty())
            throw DataError("partition_id_data: class '" + cls + "' has no training examples");
        std::vector<Example>& pool = it->second;
        Rng rng(mix_seed(seed, 0x9d1f0000u + ci));
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::size_t n_val = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(pool.size())));
        if (n_val == 0 && pool.size() >= 2) n_val = 1;
        for (std::size_t i = 0; i < order.size(); ++i)
            (i < n_val ? part.validation : part.train).push_back(pool[order[i]]);
    }
    for (const auto& ex : dataset.test)
        if (id_rank.count(ex.class_id)) part.test.push_back(ex);
    return part;
}

// Test-portion images of the holdout classes: the fine-grained OOD set.
inline std::vector<Example> collect_fine_ood(const Dataset& dataset,
                                             const EnvironmentSpec& spec) {
    std::unordered_set<std::string> fine(spec.fine_ood_classes.begin(),
                                         spec.fine_ood_classes.end());
    std::vector<Example> out;
    for (const auto& ex : dataset.test)
        if (fine.count(ex.class_id)) out.push_back(ex);
    return out;
}

// Concatenated test portions of the coarse-OOD source datasets, each example
// tagged with its source.
inline std::vector<Example> assemble_coarse_ood(
    const EnvironmentSpec& spec, const std::map<std::string, Dataset>& datasets) {
    std::vector<Example> out;
    for (const auto& name : spec.coarse_ood_sources) {
        auto it = datasets.find(name);
        if (it == datasets.end())
            throw std::invalid_argument("assemble_coarse_ood: missing source dataset '" +
                                        name + "'");
        for (Example ex : it->second.test) {
            ex.source = name;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

// Order-preserving removal of every pool example whose source label names a
// forbidden concept.
inline OutlierPool filter_outlier_pool(const OutlierPool& pool,
                                       const std::vector<std::string>& forbidden) {
    if (!pool.source_labels) {
        if (forbidden.empty()) return pool;
        throw UnsupportedOperation(
            "filter_outlier_pool: pool has no source labels to filter by");
    }
    if (pool.source_labels->size() != pool.examples.size())
        throw std::invalid_argument("filter_outlier_pool: label count mismatch");
    std::unordered_set<std::string> bad(forbidden.begin(), forbidden.end());
    OutlierPool out;
    out.source_labels.emplace();
    out.excluded_concepts = forbidden;
    for (std::size_t i = 0; i < pool.examples.size(); ++i) {
        if (bad.count((*pool.source_labels)[i])) continue;
        out.examples.push_back(pool.examples[i]);
        out.source_labels->push_back((*pool.source_labels)[i]);
    }
    if (out.examples.empty() && !pool.examples.empty())
        std::cerr << "warning: outlier pool is empty after filtering\n";
    return out;
}

// Deterministic disjoint carve of the pool; the validation side is reserved
// for tuning and never trains.
inline std::pair<OutlierPool, OutlierPool> split_outlier_validation(const OutlierPool& pool,
                                                                    double fraction,
                                                                    std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("split_outlier_validation: fraction must be in (0,1)");
    const std::size_t n = pool.examples.size();
    const std::size_t n_val =
        static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    Rng rng(mix_seed(seed, 0x0071e5u));
    std::vector<std::size_t> picked = rng.sample_without_replacement(n, n_val);
    std::vector<bool> in_val(n, false);
    for (std::size_t i : picked) in_val[i] = true;

    OutlierPool train_pool, val_pool;
    train_pool.excluded_concepts = pool.excluded_concepts;
    val_pool.excluded_concepts = pool.excluded_concepts;
    if (pool.source_labels) {
        train_pool.source_labels.emplace();
        val_pool.source_labels.emplace();
    }
    for (std::size_t i = 0; i < n; ++i) {
        OutlierPool& dst = in_val[i] ? val_pool : train_pool;
        dst.examples.push_back(pool.examples[i]);
        if (pool.source_labels) dst.source_labels->push_back((*pool.source_labels)[i]);
    }
    return {std::move(train_pool), std::move(val_pool)};
}

// --- manifest round-trip -----------------------------------------------------

inline nlohmann::ordered_json environment_spec_to_json(const EnvironmentSpec& spec) {
    nlohmann::ordered_json j;
    j["dataset_name"] = spec.dataset_name;
    j["split_index"] = spec.split_index;
    j["seed"] = spec.seed;
    j["id_classes"] = spec.id_classes;
    j["fine_ood_classes"] = spec.fine_ood_classes;
    j["coarse_ood_sources"] = spec.coarse_ood_sources;
    return j;
}

inline EnvironmentSpec environment_spec_from_json(const nlohmann::json& j) {
    EnvironmentSpec spec;
    try {
        spec.dataset_name = j.at("dataset_name").get<std::string>();
        spec.split_index = j.at("split_index").get<int>();
        spec.seed = j.at("seed").get<std::uint64_t>();
        spec.id_classes = j.at("id_classes").get<std::vector<std::string>>();
        spec.fine_ood_classes = j.at("fine_ood_classes").get<std::vector<std::string>>();
        spec.coarse_ood_sources = j.at("coarse_ood_sources").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("environment manifest: ") + e.what());
    }
    validate_environment_spec(spec);
    return spec;
}

inline void save_environment_spec(const EnvironmentSpec& spec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path);
    out << environment_spec_to_json(spec).dump(2) << "\n";
    if (!out) throw IoError("failed writing manifest: " + path);
}

inline EnvironmentSpec load_environment_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("environment manifest parse error: ") + e.what());
    }
    return environment_spec_from_json(j);
}

} // namespace mixoe

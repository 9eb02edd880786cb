#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixoe/tensor.hpp"

namespace mixoe {

struct Example {
    std::string id;       // unique identity, e.g. "gratings/c07/test/0012"
    std::string class_id; // original label; empty for unlabeled outliers
    std::string source;   // dataset of origin (tag for coarse-OOD pools)
    Tensor input;
};

// Example collection with a read counter. Evaluation-only collections (ID
// test, fine/coarse OOD) are wrapped in this so training-phase code can be
// audited to have performed zero reads.
class AuditedExamples {
public:
    AuditedExamples() = default;
    explicit AuditedExamples(std::vector<Example> items) : items_(std::move(items)) {}

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    const Example& at(std::size_t i) const {
        ++reads_;
        return items_.at(i);
    }

    std::uint64_t reads() const { return reads_; }
    void reset_reads() const { reads_ = 0; }

private:
    std::vector<Example> items_;
    mutable std::uint64_t reads_ = 0;
};

// A named source dataset with canonical train/test portions.
struct Dataset {
    std::string name;
    std::vector<std::string> classes; // canonical order
    std::vector<Example> train;
    std::vector<Example> test;
};

// Batch fed to a model. labels[i] indexes the environment's id_classes order;
// -1 marks unlabeled (outlier) examples.
struct Batch {
    std::vector<Tensor> inputs;
    std::vector<int> labels;

    std::size_t size() const { return inputs.size(); }

    void push(const Example& ex, int label) {
        inputs.push_back(ex.input);
        labels.push_back(label);
    }
};

using LabelMap = std::unordered_map<std::string, int>;

inline LabelMap make_label_map(const std::vector<std::string>& id_classes) {
    LabelMap m;
    for (std::size_t i = 0; i < id_classes.size(); ++i)
        m[id_classes[i]] = static_cast<int>(i);
    return m;
}

} // namespace mixoe

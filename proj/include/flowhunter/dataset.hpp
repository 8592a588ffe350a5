#pragma once

// Label codec and the in-memory dataset that flows between the pipeline,
// the classifier and the augmenter.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tensor.hpp"

namespace flowhunter {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bijective mapping between class names and indices. Index order is fixed at
// construction; for the flow task the canonical order puts Normal at 0.
class LabelCodec {
public:
    LabelCodec() = default;

    explicit LabelCodec(std::vector<std::string> names) : names_(std::move(names)) {
        if (names_.empty()) throw DataError("label codec: empty class list");
        for (std::size_t i = 0; i < names_.size(); ++i) {
            if (names_[i].empty()) throw DataError("label codec: empty class name");
            if (!index_.emplace(names_[i], static_cast<int>(i)).second) {
                throw DataError("label codec: duplicate class name " + names_[i]);
            }
        }
    }

    static LabelCodec edge_iiot() {
        return LabelCodec({
            "Normal",
            "Backdoor",
            "Vulnerability_scanner",
            "DDoS_ICMP",
            "Password",
            "Port_Scanning",
            "DDoS_UDP",
            "Uploading",
            "DDoS_HTTP",
            "SQL_injection",
            "Ransomware",
            "DDoS_TCP",
            "XSS",
            "MITM",
            "Fingerprinting",
        });
    }

    int num_classes() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& names() const { return names_; }

    int encode(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw DataError("label codec: unknown class " + name);
        return it->second;
    }

    const std::string& decode(int idx) const {
        if (idx < 0 || idx >= num_classes()) {
            throw DataError("label codec: index " + std::to_string(idx) + " outside [0," +
                            std::to_string(num_classes()) + ")");
        }
        return names_[static_cast<std::size_t>(idx)];
    }

    bool operator==(const LabelCodec& o) const { return names_ == o.names_; }
    bool operator!=(const LabelCodec& o) const { return !(*this == o); }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int> index_;
};

// Row-major feature matrix with integer labels and a per-row synthetic flag.
struct LabeledDataset {
    std::int64_t n_rows = 0;
    std::int64_t n_features = 0;
    std::vector<double> X;               // n_rows * n_features
    std::vector<int> y;                  // n_rows
    std::vector<std::uint8_t> synthetic; // n_rows; 0 = real, 1 = generated
    LabelCodec codec;
    std::vector<std::string> feature_names;

    void validate() const {
        if (n_rows < 0 || n_features <= 0) throw DataError("dataset: bad dimensions");
        if (static_cast<std::int64_t>(X.size()) != n_rows * n_features) {
            throw DataError("dataset: feature buffer size mismatch");
        }
        if (static_cast<std::int64_t>(y.size()) != n_rows) {
            throw DataError("dataset: label count mismatch");
        }
        if (static_cast<std::int64_t>(synthetic.size()) != n_rows) {
            throw DataError("dataset: synthetic flag count mismatch");
        }
        if (!feature_names.empty() &&
            static_cast<std::int64_t>(feature_names.size()) != n_features) {
            throw DataError("dataset: feature name count mismatch");
        }
        const int k = codec.num_classes();
        for (auto label : y) {
            if (label < 0 || label >= k) {
                throw DataError("dataset: label " + std::to_string(label) + " outside [0," +
                                std::to_string(k) + ")");
            }
        }
        for (double v : X) {
            if (!std::isfinite(v)) throw DataError("dataset: non-finite feature value");
        }
    }

    std::vector<std::int64_t> class_counts() const {
        std::vector<std::int64_t> counts(static_cast<std::size_t>(codec.num_classes()), 0);
        for (auto label : y) counts[static_cast<std::size_t>(label)]++;
        return counts;
    }

    // Features for a subset of rows as a [count, n_features] tensor.
    Tensor rows_tensor(const std::vector<std::int64_t>& idx) const {
        std::vector<double> buf(idx.size() * static_cast<std::size_t>(n_features));
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto src = static_cast<std::size_t>(idx[r]) * static_cast<std::size_t>(n_features);
            std::copy(X.begin() + static_cast<std::ptrdiff_t>(src),
                      X.begin() + static_cast<std::ptrdiff_t>(src + static_cast<std::size_t>(n_features)),
                      buf.begin() + static_cast<std::ptrdiff_t>(r * static_cast<std::size_t>(n_features)));
        }
        return Tensor::from({static_cast<std::int64_t>(idx.size()), n_features}, std::move(buf));
    }

    std::vector<int> labels_for(const std::vector<std::int64_t>& idx) const {
        std::vector<int> out(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) out[r] = y[static_cast<std::size_t>(idx[r])];
        return out;
    }
};

} // namespace flowhunter

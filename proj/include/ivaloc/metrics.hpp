#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ivaloc {

/// Labels (0 LVOT, 1 RVOT) and predicted RVOT probabilities.
struct PredictionBatch {
    std::vector<std::string> record_ids;
    std::vector<int> labels;
    std::vector<double> scores;

    std::size_t size() const { return labels.size(); }
    void push(std::string id, int label, double score);
    /// Throws ContractError on mismatched lengths, labels outside {0,1} or scores outside [0,1].
    void validate() const;
    bool has_both_classes() const;
};

/// Mean binary cross-entropy with predictions clamped to [eps, 1-eps].
double bce_loss(const PredictionBatch& batch, double clamp_eps = 1e-7);

struct ConfusionMatrix {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const { return tp + fp + tn + fn; }
};

/// RVOT is the positive class; score >= threshold predicts RVOT.
ConfusionMatrix confusion(const PredictionBatch& batch, double threshold = 0.5);

/// Area under the ROC curve, ties counted as half. Throws DataError if a class is absent.
double roc_auc(const PredictionBatch& batch);

/// Undefined entries (zero denominators) are nullopt.
struct MetricsReport {
    std::string name;
    std::optional<double> auc, acc, se, sp, ppv, npv, f1;
};

inline constexpr std::size_t kMetricCount = 7;
inline constexpr const char* kMetricNames[kMetricCount] = {"AUC", "ACC", "SE", "SP", "PPV", "NPV", "F1"};

std::array<std::optional<double>, kMetricCount> metric_values(const MetricsReport& r);

MetricsReport metrics(const ConfusionMatrix& cm, std::optional<double> auc, std::string name = {});
/// Confusion at `threshold` plus AUC when both classes are present.
MetricsReport evaluate(const PredictionBatch& batch, double threshold = 0.5, std::string name = {});

/// Unweighted mean over reports, skipping undefined entries; each skip is noted in `warnings`.
MetricsReport aggregate(std::span<const MetricsReport> reports, std::vector<std::string>* warnings = nullptr,
                        std::string name = "Total");

}  // namespace ivaloc

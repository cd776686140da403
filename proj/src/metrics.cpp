#include "ivaloc/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "ivaloc/error.hpp"

namespace ivaloc {

void PredictionBatch::push(std::string id, int label, double score) {
    record_ids.push_back(std::move(id));
    labels.push_back(label);
    scores.push_back(score);
}

void PredictionBatch::validate() const {
    if (labels.size() != scores.size() || (!record_ids.empty() && record_ids.size() != labels.size()))
        throw ContractError("predictions: ids, labels and scores differ in length");
    for (int y : labels)
        if (y != 0 && y != 1) throw ContractError("predictions: labels must be 0 or 1");
    for (double s : scores)
        if (!(s >= 0.0 && s <= 1.0)) throw ContractError("predictions: scores must lie in [0, 1]");
}

bool PredictionBatch::has_both_classes() const {
    const auto pos = std::count(labels.begin(), labels.end(), 1);
    return pos > 0 && static_cast<std::size_t>(pos) < labels.size();
}

double bce_loss(const PredictionBatch& batch, double clamp_eps) {
    batch.validate();
    if (batch.size() == 0) throw ContractError("bce_loss: empty batch");
    double sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const double p = std::clamp(batch.scores[i], clamp_eps, 1.0 - clamp_eps);
        sum -= batch.labels[i] ? std::log(p) : std::log1p(-p);
    }
    return sum / static_cast<double>(batch.size());
}

ConfusionMatrix confusion(const PredictionBatch& batch, double threshold) {
    batch.validate();
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const bool pred = batch.scores[i] >= threshold;
        if (batch.labels[i]) (pred ? cm.tp : cm.fn)++;
        else (pred ? cm.fp : cm.tn)++;
    }
    return cm;
}

double roc_auc(const PredictionBatch& batch) {
    batch.validate();
    if (!batch.has_both_classes()) throw DataError("roc_auc: undefined, batch contains a single class");
    std::vector<std::size_t> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return batch.scores[a] > batch.scores[b]; });
    double pos = 0, neg = 0;
    for (int y : batch.labels) (y ? pos : neg) += 1;
    double area = 0.0, tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        double dtp = 0, dfp = 0;
        std::size_t j = i;
        while (j < order.size() && batch.scores[order[j]] == batch.scores[order[i]]) {
            (batch.labels[order[j]] ? dtp : dfp) += 1;
            ++j;
        }
        area += dfp * (tp + 0.5 * dtp);
        tp += dtp;
        fp += dfp;
        i = j;
    }
    return area / (pos * neg);
}

std::array<std::optional<double>, kMetricCount> metric_values(const MetricsReport& r) {
    return {r.auc, r.acc, r.se, r.sp, r.ppv, r.npv, r.f1};
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport metrics(const ConfusionMatrix& cm, std::optional<double> auc, std::string name) {
    MetricsReport r;
    r.name = std::move(name);
    r.auc = auc;
    r.acc = ratio(cm.tp + cm.tn, cm.total());
    r.se = ratio(cm.tp, cm.tp + cm.fn);
    r.sp = ratio(cm.tn, cm.tn + cm.fp);
    r.ppv = ratio(cm.tp, cm.tp + cm.fp);
    r.npv = ratio(cm.tn, cm.tn + cm.fn);
    if (r.se && r.ppv && *r.se + *r.ppv > 0.0) r.f1 = 2.0 * *r.se * *r.ppv / (*r.se + *r.ppv);
    return r;
}

MetricsReport evaluate(const PredictionBatch& batch, double threshold, std::string name) {
    std::optional<double> auc;
    if (batch.has_both_classes()) auc = roc_auc(batch);
    return metrics(confusion(batch, threshold), auc, std::move(name));
}

MetricsReport aggregate(std::span<const MetricsReport> reports, std::vector<std::string>* warnings, std::string name) {
    std::array<double, kMetricCount> sum{};
    std::array<std::size_t, kMetricCount> count{};
    for (const auto& r : reports) {
        const auto values = metric_values(r);
        for (std::size_t m = 0; m < kMetricCount; ++m) {
            if (values[m]) {
                sum[m] += *values[m];
                ++count[m];
            } else if (warnings) {
                warnings->push_back(std::string(kMetricNames[m]) + " undefined for " +
                                    (r.name.empty() ? std::string("a report") : r.name) + ", excluded from the mean");
            }
        }
    }
    std::array<std::optional<double>, kMetricCount> mean;
    for (std::size_t m = 0; m < kMetricCount; ++m)
        if (count[m]) mean[m] = sum[m] / static_cast<double>(count[m]);
    MetricsReport out;
    out.name = std::move(name);
    out.auc = mean[0];
    out.acc = mean[1];
    out.se = mean[2];
    out.sp = mean[3];
    out.ppv = mean[4];
    out.npv = mean[5];
    out.f1 = mean[6];
    return out;
}

}  // namespace ivaloc

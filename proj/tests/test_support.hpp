#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ivaloc/metrics.hpp"
#include "ivaloc/model.hpp"

namespace ivaloc::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(shape));
    for (double& v : t.data) v = u(rng);
    return t;
}

inline double model_loss(const Model& model, const Tensor& input, double label) {
    Tape tape;
    const ForwardPass fp = forward(model, tape, input, Mode::Infer);
    return bce_with_logits(fp.logit, label).item();
}

struct FdReport {
    std::size_t coords = 0;
    /// Largest relative error against the central difference at smooth coordinates.
    double worst = 0.0;
    /// Coordinates whose one-sided differences disagree: a LeakyReLU or max-pool
    /// kink lies within one step. These are compared with the nearer one-sided difference.
    std::size_t kinks = 0;
    double worst_kink = 0.0;
};

inline Gradients model_gradients(Model& model, const Tensor& input, double label) {
    Tape tape;
    const ForwardPass fp = forward(model, tape, input, Mode::Infer);
    tape.backward(bce_with_logits(fp.logit, label));
    Gradients g = model.parameters().zero_gradients();
    model.parameters().accumulate(tape, fp.params, g, 1.0);
    return g;
}

/// Finite differences on model parameters against the tape gradient of the BCE
/// loss. Probes up to `coords` random coordinates of every parameter.
inline FdReport model_fd_report(Model& model, const Tensor& input, double label, std::size_t coords,
                                std::uint64_t seed, double step = 1e-5) {
    const Gradients analytic = model_gradients(model, input, label);
    const double base = model_loss(model, input, label);
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    Rng rng(seed);
    FdReport r;
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
        auto& data = model.parameters()[p].tensor.data;
        std::vector<std::size_t> idx(data.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(coords, idx.size()));
        for (auto i : idx) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = model_loss(model, input, label);
            data[i] = saved - step;
            const double down = model_loss(model, input, label);
            data[i] = saved;
            const double central = (up - down) / (2.0 * step);
            const double left = (base - down) / step, right = (up - base) / step;
            ++r.coords;
            if (std::abs(left - right) > 1e-5 + 1e-3 * std::max(std::abs(left), std::abs(right))) {
                ++r.kinks;
                r.worst_kink = std::max(r.worst_kink, std::min(rel(analytic[p][i], left), rel(analytic[p][i], right)));
            } else {
                r.worst = std::max(r.worst, rel(analytic[p][i], central));
            }
        }
    }
    return r;
}

inline double model_fd_error(Model& model, const Tensor& input, double label, std::size_t coords,
                             std::uint64_t seed, double step = 1e-5) {
    const FdReport r = model_fd_report(model, input, label, coords, seed, step);
    return std::max(r.worst, r.worst_kink);
}

/// P(score_pos > score_neg) + 0.5 P(tie) over all positive/negative pairs.
inline double brute_force_auc(const PredictionBatch& b) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b.labels[i] != 1) continue;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (b.labels[j] != 0) continue;
            pairs += 1.0;
            if (b.scores[i] > b.scores[j]) wins += 1.0;
            else if (b.scores[i] == b.scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

/// Reference ten-fold results: AUC, ACC, SE, SP, PPV, NPV, F1 per fold.
inline constexpr double kReferenceFolds[10][7] = {
    {0.972, 0.969, 1, 0.857, 0.962, 1, 0.981},          {0.982, 0.969, 0.965, 1, 1, 0.8, 0.982},
    {1, 1, 1, 1, 1, 1, 1},                              {0.965, 0.909, 0.956, 0.8, 0.916, 0.888, 0.9361},
    {1, 1, 1, 1, 1, 1, 1},                              {0.944, 0.939, 1, 0.666, 0.931, 1, 0.964},
    {0.815, 0.848, 0.84, 0.875, 0.954, 0.636, 0.893},   {0.827, 0.939, 1, 0.666, 0.931, 1, 0.964},
    {0.951, 0.945, 1, 0.818, 0.928, 1, 0.962},          {0.847, 0.909, 0.954, 0.818, 0.913, 0.9, 0.933},
};
inline constexpr double kReferenceTotal[7] = {0.933, 0.943, 0.972, 0.844, 0.954, 0.902, 0.963};

inline std::vector<MetricsReport> reference_reports() {
    std::vector<MetricsReport> out;
    for (std::size_t f = 0; f < 10; ++f) {
        const auto* r = kReferenceFolds[f];
        out.push_back({std::to_string(f + 1), r[0], r[1], r[2], r[3], r[4], r[5], r[6]});
    }
    return out;
}

}  // namespace ivaloc::testing

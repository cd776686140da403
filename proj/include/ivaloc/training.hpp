#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ivaloc/metrics.hpp"
#include "ivaloc/model.hpp"

namespace ivaloc {

/// splitmix64 of (base, stream); used to give each consumer its own RNG stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct TrainConfig {
    double learning_rate = 5e-5;
    std::size_t batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::size_t max_epochs = 200;
    std::size_t patience = 20;
    double loss_clamp_epsilon = 1e-7;
    std::uint64_t seed = 0;

    void validate() const;
    void write(KeyValues& kv) const;
    static TrainConfig read(const KeyValues& kv);
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::uint64_t t = 0;

    static AdamState for_parameters(const ParameterSet& params);
};

/// One bias-corrected Adam update. Throws NumericError on a non-finite gradient.
void adam_step(ParameterSet& params, const Gradients& grads, AdamState& state, const TrainConfig& config);

/// Mean loss of one mini-batch after a single forward/backward pass; fills `grads`.
double batch_gradients(const Model& model, std::span<const PreparedSample* const> batch, Gradients& grads,
                       Mode mode, Rng& rng);

/// One shuffled pass over `samples`. Returns the mean per-batch loss.
double train_epoch(Model& model, std::span<const PreparedSample> samples, const TrainConfig& config,
                   AdamState& state, Rng& rng);

PredictionBatch predict_batch(const Model& model, std::span<const PreparedSample> samples);

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_auc = 0.0;
    bool is_best = false;
    double val_loss = 0.0;
};

struct FitResult {
    Model model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_auc = 0.0;
};

/// Trains with early stopping on validation AUC (ties go to the lower validation
/// loss) and returns the best checkpoint.
FitResult fit(AblationVariant variant, const ModelConfig& model_config, std::span<const PreparedSample> train,
              std::span<const PreparedSample> val, const TrainConfig& config);

std::string training_log_csv(const std::vector<EpochLog>& log);

struct IntRange {
    std::size_t lo = 0, hi = 0;
};

struct HyperparamSpace {
    IntRange conv_layers{3, 15};
    IntRange bilstm_layers{1, 3};
    IntRange lstm_units{32, 512};
    IntRange attention_nodes{16, 128};
    IntRange fc_layers{1, 3};
    IntRange fc_nodes{128, 1024};
    double lr_lo = 1e-5, lr_hi = 1e-2;
    std::vector<std::size_t> batch_sizes{32, 64};
    /// Divides conv channel widths (64..512); 1 keeps the full encoder.
    std::size_t channel_divisor = 1;
    std::size_t input_length = 1250;

    void validate() const;
    struct Sample {
        ModelConfig model;
        double learning_rate = 0.0;
        std::size_t batch_size = 0;
        std::size_t rejected = 0;  // invalid draws resampled before this one
    };
    Sample sample(Rng& rng) const;
    bool contains(const ModelConfig& model, double learning_rate, std::size_t batch_size) const;

    void write(KeyValues& kv) const;
    static HyperparamSpace read(const KeyValues& kv);
};

struct TrialRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    ModelConfig model;
    TrainConfig train;
    std::optional<double> val_auc;
    std::size_t best_epoch = 0;
    std::optional<std::size_t> reused_from;  // identical earlier trial whose fit was reused
    std::string error;
};

struct SearchResult {
    std::size_t best_trial = 0;
    ModelConfig best_model;
    TrainConfig best_train;
    double best_val_auc = 0.0;
    std::vector<TrialRecord> trials;
};

/// Samples `n_trials` configs, fits each and keeps the best validation AUC.
/// Trial i trains with seed `base.seed ^ i`. Throws Error when every trial fails.
SearchResult random_search(const HyperparamSpace& space, std::size_t n_trials, AblationVariant variant,
                           std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                           const TrainConfig& base, std::size_t jobs = 1);

std::string search_log_csv(const SearchResult& result);

}  // namespace ivaloc

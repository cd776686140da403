#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ivaloc/metrics.hpp"
#include "ivaloc/training.hpp"

namespace ivaloc {

struct FoldRoles {
    std::vector<std::size_t> train, val, test;  // record indices
};

/// Throws ContractError unless train/val/test are pairwise disjoint and cover [0, n_records).
void validate_roles(const FoldRoles& roles, std::size_t n_records);

struct FoldPlan {
    std::size_t n_folds = 10;
    bool stratified = true;
    std::uint64_t seed = 0;
    std::vector<std::string> record_ids;
    std::vector<std::size_t> fold_of;  // aligned with record_ids

    /// test = fold i, val = fold (i+1) mod n, train = the rest.
    FoldRoles roles(std::size_t fold) const;
    std::vector<std::size_t> members(std::size_t fold) const;
    void validate() const;
    /// Digest of ids and assignments.
    std::string hash() const;
};

/// Stratified plans deal each class round-robin after a seeded shuffle, continuing
/// the fold cursor across classes so totals differ by at most one.
FoldPlan make_folds(std::span<const std::string> record_ids, std::span<const int> labels, std::size_t n_folds,
                    std::uint64_t seed, bool stratified = true);
FoldPlan make_folds(std::span<const PreparedSample> samples, std::size_t n_folds, std::uint64_t seed,
                    bool stratified = true);

struct CvOptions {
    double threshold = 0.5;
    std::size_t jobs = 1;
    /// Restrict to these folds; empty runs all.
    std::vector<std::size_t> only_folds;
};

struct FoldResult {
    std::size_t fold = 0;
    std::uint64_t seed = 0;
    MetricsReport report;
    PredictionBatch test_predictions;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_auc = 0.0;
};

struct CvResult {
    AblationVariant variant = AblationVariant::Full;
    std::string plan_hash;
    std::vector<FoldResult> folds;
    MetricsReport total;
    std::vector<std::string> warnings;
};

/// Fits every fold on its train split with validation selection and scores the
/// best checkpoint on the test split. Fold i trains with seed `train.seed ^ i`.
CvResult run_cv(std::span<const PreparedSample> samples, AblationVariant variant, const ModelConfig& model_config,
                const TrainConfig& train, const FoldPlan& plan, const CvOptions& options = {});

/// run_cv for each variant over the same plan and seeds.
std::vector<CvResult> run_ablation(std::span<const PreparedSample> samples, const ModelConfig& model_config,
                                   const TrainConfig& train, const FoldPlan& plan, const CvOptions& options = {},
                                   std::span<const AblationVariant> variants = kAllVariants);

/// Provenance written into every result file.
struct RunInfo {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string config_text;  // canonical k=v dump
    double threshold = 0.5;
};

std::string format_metric(const std::optional<double>& v);
/// `fold,AUC,ACC,SE,SP,PPV,NPV,F1` with one row per fold and a Total row.
std::string cv_results_csv(const CvResult& cv, const RunInfo& info);
std::string cv_results_json(const CvResult& cv, const FoldPlan& plan, const RunInfo& info);
/// `variant,AUC,ACC,SE,SP,PPV,NPV,F1`, one row per variant.
std::string ablation_csv(const std::vector<CvResult>& results, const RunInfo& info);
std::string ablation_json(const std::vector<CvResult>& results, const FoldPlan& plan, const RunInfo& info);

}  // namespace ivaloc

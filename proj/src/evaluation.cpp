#include "ivaloc/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"

namespace ivaloc {

void validate_roles(const FoldRoles& roles, std::size_t n_records) {
    std::vector<int> seen(n_records, 0);
    auto mark = [&](const std::vector<std::size_t>& idx, const char* role) {
        for (auto i : idx) {
            if (i >= n_records) throw ContractError(std::string("fold plan: ") + role + " index out of range");
            if (seen[i]++) throw ContractError(std::string("fold plan: record ") + std::to_string(i) +
                                               " appears in more than one role (" + role + ")");
        }
    };
    mark(roles.train, "train");
    mark(roles.val, "val");
    mark(roles.test, "test");
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw ContractError("fold plan: roles do not cover every record");
}

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
        if (fold_of[i] == fold) out.push_back(i);
    return out;
}

FoldRoles FoldPlan::roles(std::size_t fold) const {
    if (fold >= n_folds) throw ContractError("fold plan: fold index out of range");
    const std::size_t val_fold = (fold + 1) % n_folds;
    FoldRoles r;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
        if (fold_of[i] == fold) r.test.push_back(i);
        else if (fold_of[i] == val_fold) r.val.push_back(i);
        else r.train.push_back(i);
    }
    return r;
}

void FoldPlan::validate() const {
    if (n_folds < 3) throw ContractError("fold plan: need at least 3 folds");
    if (fold_of.size() != record_ids.size()) throw ContractError("fold plan: assignment length mismatch");
    for (auto f : fold_of)
        if (f >= n_folds) throw ContractError("fold plan: fold index out of range");
    for (std::size_t f = 0; f < n_folds; ++f) {
        if (members(f).empty()) throw ContractError("fold plan: fold " + std::to_string(f) + " is empty");
        validate_roles(roles(f), record_ids.size());
    }
}

std::string FoldPlan::hash() const {
    std::string text = std::to_string(n_folds) + "\n";
    for (std::size_t i = 0; i < record_ids.size(); ++i) text += record_ids[i] + "=" + std::to_string(fold_of[i]) + "\n";
    return hash_hex(text);
}

FoldPlan make_folds(std::span<const std::string> record_ids, std::span<const int> labels, std::size_t n_folds,
                    std::uint64_t seed, bool stratified) {
    if (record_ids.size() != labels.size()) throw ContractError("make_folds: ids and labels differ in length");
    if (n_folds < 3) throw ContractError("make_folds: need at least 3 folds");
    FoldPlan plan;
    plan.n_folds = n_folds;
    plan.stratified = stratified;
    plan.seed = seed;
    plan.record_ids.assign(record_ids.begin(), record_ids.end());
    plan.fold_of.assign(record_ids.size(), 0);

    std::vector<std::vector<std::size_t>> groups;
    if (stratified) {
        groups.resize(2);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != 0 && labels[i] != 1) throw DataError("make_folds: record " + record_ids[i] + " is unlabeled");
            groups[1 - labels[i]].push_back(i);  // RVOT first
        }
        for (std::size_t g = 0; g < 2; ++g)
            if (groups[g].size() < n_folds)
                throw DataError(std::string("make_folds: ") + (g == 0 ? "RVOT" : "LVOT") + " has " +
                                std::to_string(groups[g].size()) + " records, need at least " + std::to_string(n_folds));
    } else {
        if (record_ids.size() < n_folds) throw DataError("make_folds: fewer records than folds");
        groups.emplace_back(record_ids.size());
        std::iota(groups[0].begin(), groups[0].end(), 0);
    }
    Rng rng(seed);
    std::size_t cursor = 0;
    for (auto& g : groups) {
        std::shuffle(g.begin(), g.end(), rng);
        for (auto i : g) plan.fold_of[i] = cursor++ % n_folds;
    }
    return plan;
}

FoldPlan make_folds(std::span<const PreparedSample> samples, std::size_t n_folds, std::uint64_t seed, bool stratified) {
    std::vector<std::string> ids;
    std::vector<int> labels;
    for (const auto& s : samples) {
        ids.push_back(s.record_id);
        labels.push_back(s.label);
    }
    return make_folds(ids, labels, n_folds, seed, stratified);
}

namespace {

std::vector<PreparedSample> gather(std::span<const PreparedSample> samples, const std::vector<std::size_t>& idx) {
    std::vector<PreparedSample> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(samples[i]);
    return out;
}

std::string error_prefix(std::size_t fold) { return "fold " + std::to_string(fold) + ": "; }

[[noreturn]] void rethrow_with_fold(std::size_t fold, const std::exception_ptr& ep) {
    try {
        std::rethrow_exception(ep);
    } catch (const Error& e) {
        throw Error(e.kind(), error_prefix(fold) + e.what());
    } catch (const std::exception& e) {
        throw Error(ErrorKind::Numeric, error_prefix(fold) + e.what());
    }
}

}  // namespace

CvResult run_cv(std::span<const PreparedSample> samples, AblationVariant variant, const ModelConfig& model_config,
                const TrainConfig& train, const FoldPlan& plan, const CvOptions& options) {
    plan.validate();
    if (plan.record_ids.size() != samples.size()) throw ContractError("run_cv: plan does not match the sample set");
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].record_id != plan.record_ids[i]) throw ContractError("run_cv: plan record order differs from samples");
    model_config.validate();
    train.validate();

    std::vector<std::size_t> folds = options.only_folds;
    if (folds.empty()) {
        folds.resize(plan.n_folds);
        std::iota(folds.begin(), folds.end(), 0);
    }
    for (auto f : folds)
        if (f >= plan.n_folds) throw ContractError("run_cv: fold " + std::to_string(f) + " out of range");

    CvResult res;
    res.variant = variant;
    res.plan_hash = plan.hash();
    res.folds.resize(folds.size());
    std::vector<std::exception_ptr> errors(folds.size());

    auto job = [&](std::size_t k) {
        const std::size_t fold = folds[k];
        try {
            const FoldRoles roles = plan.roles(fold);
            validate_roles(roles, samples.size());
            const auto tr = gather(samples, roles.train);
            const auto va = gather(samples, roles.val);
            const auto te = gather(samples, roles.test);
            TrainConfig cfg = train;
            cfg.seed = train.seed ^ static_cast<std::uint64_t>(fold);
            FitResult f = fit(variant, model_config, tr, va, cfg);
            FoldResult& out = res.folds[k];
            out.fold = fold;
            out.seed = cfg.seed;
            out.test_predictions = predict_batch(f.model, te);
            out.report = evaluate(out.test_predictions, options.threshold, std::to_string(fold + 1));
            out.log = std::move(f.log);
            out.best_epoch = f.best_epoch;
            out.best_val_auc = f.best_val_auc;
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, folds.size()));
    if (jobs == 1) {
        for (std::size_t k = 0; k < folds.size(); ++k) {
            job(k);
            if (errors[k]) rethrow_with_fold(folds[k], errors[k]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < jobs; ++w)
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < folds.size(); k = next++) job(k);
            });
        for (auto& t : pool) t.join();
        for (std::size_t k = 0; k < folds.size(); ++k)
            if (errors[k]) rethrow_with_fold(folds[k], errors[k]);
    }

    std::vector<MetricsReport> reports;
    for (const auto& f : res.folds) reports.push_back(f.report);
    res.total = aggregate(reports, &res.warnings, "Total");
    return res;
}

std::vector<CvResult> run_ablation(std::span<const PreparedSample> samples, const ModelConfig& model_config,
                                   const TrainConfig& train, const FoldPlan& plan, const CvOptions& options,
                                   std::span<const AblationVariant> variants) {
    std::vector<CvResult> out;
    for (auto v : variants) {
        try {
            out.push_back(run_cv(samples, v, model_config, train, plan, options));
        } catch (const Error& e) {
            throw Error(e.kind(), "variant " + std::string(variant_name(v)) + ": " + e.what());
        }
    }
    return out;
}

std::string format_metric(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

namespace {

using ojson = nlohmann::ordered_json;

std::string csv_header_comment(const RunInfo& info, const std::string& plan_hash) {
    return "# config_hash=" + info.config_hash + " seed=" + std::to_string(info.seed) + " plan_hash=" + plan_hash +
           " threshold=" + format_double(info.threshold) + " folds=stratified total=unweighted-mean-over-folds\n";
}

std::string metrics_row(const MetricsReport& r) {
    std::string row;
    for (const auto& v : metric_values(r)) row += "," + format_metric(v);
    return row;
}

ojson report_json(const MetricsReport& r) {
    ojson j = ojson::object();
    const auto values = metric_values(r);
    for (std::size_t m = 0; m < kMetricCount; ++m) j[kMetricNames[m]] = values[m] ? ojson(*values[m]) : ojson(nullptr);
    return j;
}

ojson protocol_json(const FoldPlan& plan, const RunInfo& info) {
    ojson j;
    j["config_hash"] = info.config_hash;
    j["seed"] = info.seed;
    j["protocol"] = {{"threshold", info.threshold},
                     {"positive_class", "RVOT"},
                     {"stratified_folds", plan.stratified},
                     {"validation_fold", "(test_fold + 1) mod n_folds"},
                     {"total", "unweighted mean over folds, undefined values excluded"},
                     {"fold_seed", "seed xor fold_index"}};
    ojson folds = ojson::object();
    for (std::size_t i = 0; i < plan.record_ids.size(); ++i) folds[plan.record_ids[i]] = plan.fold_of[i];
    j["fold_plan"] = {{"n_folds", plan.n_folds}, {"seed", plan.seed}, {"hash", plan.hash()}, {"assignments", folds}};
    if (!info.config_text.empty()) j["config"] = info.config_text;
    return j;
}

ojson cv_json(const CvResult& cv) {
    ojson j;
    j["variant"] = std::string(variant_name(cv.variant));
    ojson folds = ojson::array();
    for (const auto& f : cv.folds) {
        ojson fj;
        fj["fold"] = f.fold + 1;
        fj["seed"] = f.seed;
        fj["best_epoch"] = f.best_epoch;
        fj["best_val_auc"] = f.best_val_auc;
        fj["metrics"] = report_json(f.report);
        ojson preds = ojson::array();
        for (std::size_t i = 0; i < f.test_predictions.size(); ++i)
            preds.push_back({{"record_id", f.test_predictions.record_ids[i]},
                             {"label", f.test_predictions.labels[i]},
                             {"score", f.test_predictions.scores[i]}});
        fj["test_predictions"] = preds;
        folds.push_back(fj);
    }
    j["folds"] = folds;
    j["total"] = report_json(cv.total);
    j["warnings"] = cv.warnings;
    return j;
}

}  // namespace

std::string cv_results_csv(const CvResult& cv, const RunInfo& info) {
    std::string out = csv_header_comment(info, cv.plan_hash) + "fold,AUC,ACC,SE,SP,PPV,NPV,F1\n";
    for (const auto& f : cv.folds) out += std::to_string(f.fold + 1) + metrics_row(f.report) + "\n";
    out += "Total" + metrics_row(cv.total) + "\n";
    return out;
}

std::string cv_results_json(const CvResult& cv, const FoldPlan& plan, const RunInfo& info) {
    ojson j = protocol_json(plan, info);
    j["result"] = cv_json(cv);
    return j.dump(2) + "\n";
}

std::string ablation_csv(const std::vector<CvResult>& results, const RunInfo& info) {
    std::string out = csv_header_comment(info, results.empty() ? "" : results.front().plan_hash) +
                      "variant,AUC,ACC,SE,SP,PPV,NPV,F1\n";
    for (const auto& r : results) out += std::string(variant_name(r.variant)) + metrics_row(r.total) + "\n";
    return out;
}

std::string ablation_json(const std::vector<CvResult>& results, const FoldPlan& plan, const RunInfo& info) {
    ojson j = protocol_json(plan, info);
    ojson arr = ojson::array();
    for (const auto& r : results) arr.push_back(cv_json(r));
    j["variants"] = arr;
    return j.dump(2) + "\n";
}

}  // namespace ivaloc

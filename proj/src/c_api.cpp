#include "ivaloc/ivaloc.h"

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ivaloc/dataset_io.hpp"
#include "ivaloc/evaluation.hpp"
#include "ivaloc/run_config.hpp"

struct iva_config {
    ivaloc::RunConfig config;
};

struct iva_corpus {
    std::vector<ivaloc::PreparedSample> samples;
    std::vector<std::string> issues;
    ivaloc::DatasetSummary summary;
    ivaloc::PreprocessConfig preprocess;
};

struct iva_model {
    ivaloc::Model model;
    ivaloc::KeyValues extra;  // provenance keys stored beside the model header
};

namespace {

using namespace ivaloc;
namespace fs = std::filesystem;

thread_local std::string g_last_error;

iva_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Shape: return IVA_ERR_SHAPE;
        case ErrorKind::Contract: return IVA_ERR_CONTRACT;
        case ErrorKind::Config: return IVA_ERR_CONFIG;
        case ErrorKind::Data: return IVA_ERR_DATA;
        case ErrorKind::Numeric: return IVA_ERR_NUMERIC;
        case ErrorKind::Version: return IVA_ERR_VERSION;
    }
    return IVA_ERR_INTERNAL;
}

template <class F>
iva_status guard(F&& body) {
    g_last_error.clear();
    try {
        return body();
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const fs::filesystem_error& e) {
        g_last_error = e.what();
        return IVA_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return IVA_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return IVA_ERR_INTERNAL;
    }
}

iva_status fail(iva_status s, const std::string& msg) {
    g_last_error = msg;
    return s;
}

iva_status copy_out(const std::string& text, char* buf, std::size_t cap, std::size_t* needed) {
    if (needed) *needed = text.size() + 1;
    if (!buf || cap < text.size() + 1) return fail(IVA_ERR_ARGUMENT, "output buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
    return IVA_OK;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
}

std::string config_comment(const RunConfig& c) {
    return "# config_hash=" + c.hash() + " seed=" + std::to_string(c.seed()) + "\n";
}

// Result files carry the hashed config, which leaves out run.jobs.
RunInfo run_info(const RunConfig& c) {
    KeyValues kv = c.resolved();
    kv.erase("run.jobs");
    return {c.hash(), c.seed(), to_ini(kv, [](const std::string& k) { return k == "train.seed" || k == "synth.seed"; }),
            c.threshold()};
}

void check_corpus(const RunConfig& c, const iva_corpus& corpus) {
    if (corpus.samples.empty()) throw DataError("corpus is empty");
    const std::size_t length = c.model().input_length;
    for (const auto& s : corpus.samples)
        if (s.values.shape.size() != 2 || s.values.shape[1] != length)
            throw ConfigError("corpus sample " + s.record_id + " has length " + std::to_string(s.values.shape.back()) +
                              ", model expects " + std::to_string(length));
}

FoldPlan plan_for(const RunConfig& c, const iva_corpus& corpus) {
    return make_folds(corpus.samples, c.n_folds(), c.fold_seed(), c.stratified());
}

std::vector<PreparedSample> gather(const iva_corpus& corpus, const std::vector<std::size_t>& idx) {
    std::vector<PreparedSample> out;
    for (auto i : idx) out.push_back(corpus.samples[i]);
    return out;
}

std::string model_header(const iva_model& m) {
    KeyValues kv = parse_text(m.model.header());
    for (const auto& [k, v] : m.extra) kv[k] = v;
    return to_text(kv);
}

KeyValues provenance(const RunConfig& c) {
    KeyValues kv;
    write_preprocess(c.preprocess(), kv);
    kv["config_hash"] = c.hash();
    kv["run.seed"] = std::to_string(c.seed());
    return kv;
}

void append_double(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

extern "C" {

const char* iva_version(void) { return "1.0.0"; }

const char* iva_status_name(iva_status status) {
    switch (status) {
        case IVA_OK: return "ok";
        case IVA_ERR_ARGUMENT: return "argument";
        case IVA_ERR_CONFIG: return "config";
        case IVA_ERR_DATA: return "data";
        case IVA_ERR_VERSION: return "version";
        case IVA_ERR_SHAPE: return "shape";
        case IVA_ERR_CONTRACT: return "contract";
        case IVA_ERR_NUMERIC: return "numeric";
        case IVA_ERR_IO: return "io";
        case IVA_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

const char* iva_last_error(void) { return g_last_error.c_str(); }

iva_status iva_config_create(iva_config** out) {
    return guard([&] {
        if (!out) return fail(IVA_ERR_ARGUMENT, "null output pointer");
        *out = new iva_config{};
        return IVA_OK;
    });
}

void iva_config_destroy(iva_config* config) { delete config; }

iva_status iva_config_load_file(iva_config* config, const char* path) {
    return guard([&] {
        if (!config || !path) return fail(IVA_ERR_ARGUMENT, "null argument");
        config->config.load_file(path);
        return IVA_OK;
    });
}

iva_status iva_config_set(iva_config* config, const char* key, const char* value) {
    return guard([&] {
        if (!config || !key || !value) return fail(IVA_ERR_ARGUMENT, "null argument");
        config->config.set(key, value);
        return IVA_OK;
    });
}

iva_status iva_config_get(const iva_config* config, const char* key, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        if (!config || !key) return fail(IVA_ERR_ARGUMENT, "null argument");
        const KeyValues kv = config->config.resolved();
        auto it = kv.find(key);
        if (it == kv.end()) return fail(IVA_ERR_CONFIG, std::string("config: unknown key '") + key + "'");
        return copy_out(it->second, buf, cap, needed);
    });
}

iva_status iva_config_validate(const iva_config* config) {
    return guard([&] {
        if (!config) return fail(IVA_ERR_ARGUMENT, "null argument");
        config->config.validate();
        return IVA_OK;
    });
}

iva_status iva_config_hash(const iva_config* config, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        if (!config) return fail(IVA_ERR_ARGUMENT, "null argument");
        return copy_out(config->config.hash(), buf, cap, needed);
    });
}

iva_status iva_config_text(const iva_config* config, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        if (!config) return fail(IVA_ERR_ARGUMENT, "null argument");
        return copy_out(config->config.text(), buf, cap, needed);
    });
}

iva_status iva_corpus_load(const iva_config* config, const char* manifest, iva_corpus** out) {
    return guard([&] {
        if (!config || !manifest || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
        if (!fs::is_regular_file(manifest)) return fail(IVA_ERR_IO, std::string("cannot open manifest ") + manifest);
        auto corpus = std::make_unique<iva_corpus>();
        corpus->preprocess = config->config.preprocess();
        std::vector<LoadIssue> issues;
        corpus->summary = for_each_record(manifest, issues, [&](EcgRecord&& r) {
            try {
                corpus->samples.push_back(preprocess(r, corpus->preprocess));
            } catch (const Error& e) {
                corpus->issues.push_back(r.record_id + ": [preprocess] " + e.what());
            }
        });
        for (const auto& i : issues) corpus->issues.push_back(describe(i));
        *out = corpus.release();
        return IVA_OK;
    });
}

iva_status iva_corpus_generate(const iva_config* config, iva_corpus** out) {
    return guard([&] {
        if (!config || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
        auto corpus = std::make_unique<iva_corpus>();
        const SynthConfig sc = config->config.synth();
        corpus->preprocess = config->config.preprocess();
        sc.validate();
        for (std::size_t i = 0; i < sc.n_records; ++i) {
            const EcgRecord r = generate_synthetic_record(sc, i);
            corpus->summary.add(r);
            corpus->samples.push_back(preprocess(r, corpus->preprocess));
        }
        corpus->summary.finish();
        *out = corpus.release();
        return IVA_OK;
    });
}

void iva_corpus_destroy(iva_corpus* corpus) { delete corpus; }

iva_status iva_corpus_size(const iva_corpus* corpus, size_t* out) {
    if (!corpus || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
    *out = corpus->samples.size();
    return IVA_OK;
}

iva_status iva_corpus_issue_count(const iva_corpus* corpus, size_t* out) {
    if (!corpus || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
    *out = corpus->issues.size();
    return IVA_OK;
}

iva_status iva_corpus_issue(const iva_corpus* corpus, size_t index, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        if (!corpus) return fail(IVA_ERR_ARGUMENT, "null argument");
        if (index >= corpus->issues.size()) return fail(IVA_ERR_ARGUMENT, "issue index out of range");
        return copy_out(corpus->issues[index], buf, cap, needed);
    });
}

iva_status iva_corpus_summary(const iva_corpus* corpus, char* buf, size_t cap, size_t* needed) {
    return guard([&] {
        if (!corpus) return fail(IVA_ERR_ARGUMENT, "null argument");
        return copy_out(corpus->summary.table(), buf, cap, needed);
    });
}

iva_status iva_corpus_write_prepared(const iva_corpus* corpus, const iva_config* config, const char* dir) {
    return guard([&] {
        if (!corpus || !config || !dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        const fs::path root(dir);
        fs::create_directories(root / "records");
        for (const auto& s : corpus->samples) {
            std::string text;
            for (std::size_t lead = 0; lead < kLeadCount; ++lead) text += (lead ? "," : "") + std::string(kLeadNames[lead]);
            text += '\n';
            const std::size_t n = s.values.shape[1];
            for (std::size_t t = 0; t < n; ++t) {
                for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
                    if (lead) text += ',';
                    append_double(text, s.values.data[lead * n + t]);
                }
                text += '\n';
            }
            write_file(root / "records" / (s.record_id + ".csv"), text);
        }
        std::string summary = config_comment(config->config) + corpus->summary.table();
        summary += "Prepared\t" + std::to_string(corpus->samples.size()) + "\n";
        summary += "Failed\t" + std::to_string(corpus->issues.size()) + "\n";
        for (const auto& i : corpus->issues) summary += "  " + i + "\n";
        write_file(root / "summary.txt", summary);
        write_file(root / "run_config.ini", config->config.text());
        return IVA_OK;
    });
}

iva_status iva_write_synthetic(const iva_config* config, const char* dir) {
    return guard([&] {
        if (!config || !dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        write_synthetic_dataset(dir, config->config.synth());
        write_file(fs::path(dir) / "run_config.ini", config->config.text());
        return IVA_OK;
    });
}

iva_status iva_train(const iva_config* config, const iva_corpus* corpus, const char* out_dir, iva_model** out_model) {
    return guard([&] {
        if (!config || !corpus || !out_dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        const RunConfig& c = config->config;
        c.validate();
        check_corpus(c, *corpus);
        const FoldPlan plan = plan_for(c, *corpus);
        const FoldRoles roles = plan.roles(c.fold());
        validate_roles(roles, corpus->samples.size());
        FitResult f = fit(c.variant(), c.model(), gather(*corpus, roles.train), gather(*corpus, roles.val), c.train());
        const PredictionBatch test = predict_batch(f.model, gather(*corpus, roles.test));
        const MetricsReport report = evaluate(test, c.threshold(), "fold " + std::to_string(c.fold() + 1));

        const fs::path root(out_dir);
        fs::create_directories(root);
        auto handle = std::make_unique<iva_model>(iva_model{std::move(f.model), provenance(c)});
        save_checkpoint(root / "model.ckpt", model_header(*handle), handle->model.parameters());
        write_file(root / "training_log.csv", config_comment(c) + training_log_csv(f.log));
        CvResult single;
        single.variant = c.variant();
        single.plan_hash = plan.hash();
        single.folds.push_back({c.fold(), c.train().seed, report, test, f.log, f.best_epoch, f.best_val_auc});
        single.total = report;
        write_file(root / "test_metrics.json", cv_results_json(single, plan, run_info(c)));
        write_file(root / "run_config.ini", c.text());
        if (out_model) *out_model = handle.release();
        return IVA_OK;
    });
}

iva_status iva_cv(const iva_config* config, const iva_corpus* corpus, const char* out_dir) {
    return guard([&] {
        if (!config || !corpus || !out_dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        const RunConfig& c = config->config;
        c.validate();
        check_corpus(c, *corpus);
        const FoldPlan plan = plan_for(c, *corpus);
        CvOptions opts;
        opts.threshold = c.threshold();
        opts.jobs = c.jobs();
        const CvResult cv = run_cv(corpus->samples, c.variant(), c.model(), c.train(), plan, opts);
        const fs::path root(out_dir);
        fs::create_directories(root);
        const RunInfo info = run_info(c);
        write_file(root / "cv_results.json", cv_results_json(cv, plan, info));
        write_file(root / "cv_results.csv", cv_results_csv(cv, info));
        for (const auto& f : cv.folds)
            write_file(root / ("training_log_fold" + std::to_string(f.fold + 1) + ".csv"),
                       config_comment(c) + training_log_csv(f.log));
        write_file(root / "run_config.ini", c.text());
        return IVA_OK;
    });
}

iva_status iva_ablate(const iva_config* config, const iva_corpus* corpus, const char* out_dir) {
    return guard([&] {
        if (!config || !corpus || !out_dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        const RunConfig& c = config->config;
        c.validate();
        check_corpus(c, *corpus);
        const FoldPlan plan = plan_for(c, *corpus);
        CvOptions opts;
        opts.threshold = c.threshold();
        opts.jobs = c.jobs();
        const auto results = run_ablation(corpus->samples, c.model(), c.train(), plan, opts);
        const fs::path root(out_dir);
        fs::create_directories(root);
        const RunInfo info = run_info(c);
        write_file(root / "ablation_results.json", ablation_json(results, plan, info));
        write_file(root / "ablation.csv", ablation_csv(results, info));
        write_file(root / "run_config.ini", c.text());
        return IVA_OK;
    });
}

iva_status iva_search(const iva_config* config, const iva_corpus* corpus, const char* out_dir) {
    return guard([&] {
        if (!config || !corpus || !out_dir) return fail(IVA_ERR_ARGUMENT, "null argument");
        const RunConfig& c = config->config;
        c.validate();
        check_corpus(c, *corpus);
        const FoldPlan plan = plan_for(c, *corpus);
        const FoldRoles roles = plan.roles(c.fold());
        const SearchResult res = random_search(c.search_space(), c.n_trials(), c.variant(),
                                               gather(*corpus, roles.train), gather(*corpus, roles.val), c.train(),
                                               c.jobs());
        const fs::path root(out_dir);
        fs::create_directories(root);
        write_file(root / "search_log.csv", config_comment(c) + search_log_csv(res));
        KeyValues best;
        res.best_model.write(best);
        best["train.learning_rate"] = format_double(res.best_train.learning_rate);
        best["train.batch_size"] = std::to_string(res.best_train.batch_size);
        write_file(root / "best_config.ini", config_comment(c) + "# best trial " + std::to_string(res.best_trial) +
                                                 " val_auc=" + format_double(res.best_val_auc) + "\n" + to_ini(best));
        write_file(root / "run_config.ini", c.text());
        return IVA_OK;
    });
}

iva_status iva_model_load(const char* path, iva_model** out) {
    return guard([&] {
        if (!path || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
        if (!fs::is_regular_file(path)) return fail(IVA_ERR_IO, std::string("cannot open checkpoint ") + path);
        const Checkpoint ckpt = load_checkpoint(path);
        KeyValues kv = parse_text(ckpt.header);
        KeyValues extra;
        for (const auto& [k, v] : kv)
            if (k.rfind("preprocess.", 0) == 0 || k == "config_hash" || k == "run.seed") extra[k] = v;
        *out = new iva_model{model_from_checkpoint(ckpt), std::move(extra)};
        return IVA_OK;
    });
}

iva_status iva_model_save(const iva_model* model, const char* path) {
    return guard([&] {
        if (!model || !path) return fail(IVA_ERR_ARGUMENT, "null argument");
        save_checkpoint(path, model_header(*model), model->model.parameters());
        return IVA_OK;
    });
}

void iva_model_destroy(iva_model* model) { delete model; }

iva_status iva_model_predict(const iva_model* model, const iva_corpus* corpus, double* out, size_t n) {
    return guard([&] {
        if (!model || !corpus || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
        if (n < corpus->samples.size()) return fail(IVA_ERR_ARGUMENT, "output array shorter than the corpus");
        for (std::size_t i = 0; i < corpus->samples.size(); ++i) out[i] = predict(model->model, corpus->samples[i]);
        return IVA_OK;
    });
}

iva_status iva_model_attention_steps(const iva_model* model, size_t* out) {
    return guard([&] {
        if (!model || !out) return fail(IVA_ERR_ARGUMENT, "null argument");
        if (!model->model.has_attention()) return fail(IVA_ERR_CONTRACT, "model variant has no attention layer");
        *out = model->model.config().encoded_shape().length;
        return IVA_OK;
    });
}

iva_status iva_export_attention(const iva_model* model, const iva_corpus* corpus, const char* out_csv) {
    return guard([&] {
        if (!model || !corpus || !out_csv) return fail(IVA_ERR_ARGUMENT, "null argument");
        const Model& m = model->model;
        if (!m.has_attention()) return fail(IVA_ERR_CONTRACT, "model variant has no attention layer");
        const std::size_t length = m.config().input_length;
        const std::size_t steps = m.config().encoded_shape().length;
        if (auto it = model->extra.find("preprocess.target_fs_hz"); it != model->extra.end()) {
            if (parse_double(it->second, it->first) != corpus->preprocess.target_fs_hz)
                throw VersionError("checkpoint was trained at a different preprocessing rate than the corpus");
        }
        const double fs = corpus->preprocess.target_fs_hz;
        const double stride = static_cast<double>(length / steps);
        std::string text = "record_id,step_index,time_s,weight\n";
        for (const auto& s : corpus->samples) {
            if (s.values.shape.size() != 2 || s.values.shape[1] != length)
                throw VersionError("record " + s.record_id + " has length " + std::to_string(s.values.shape.back()) +
                                   " but the checkpoint expects " + std::to_string(length));
            const auto w = attention_weights(m, s);
            for (std::size_t t = 0; t < w.size(); ++t) {
                text += s.record_id + ',' + std::to_string(t) + ',';
                append_double(text, static_cast<double>(t) * stride / fs);
                text += ',';
                append_double(text, w[t]);
                text += '\n';
            }
        }
        const fs::path path(out_csv);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_file(path, text);
        return IVA_OK;
    });
}

}  // extern "C"

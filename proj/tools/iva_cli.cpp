// ivaloc command-line front end. Talks to the library only through ivaloc.h.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivaloc/ivaloc.h"

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kRuntime = 4 };

int exit_code(iva_status s) {
    switch (s) {
        case IVA_OK: return kOk;
        case IVA_ERR_ARGUMENT:
        case IVA_ERR_CONFIG: return kConfig;
        case IVA_ERR_DATA:
        case IVA_ERR_VERSION:
        case IVA_ERR_IO: return kData;
        default: return kRuntime;
    }
}

struct Failure {
    iva_status status;
};

void check(iva_status s, const char* what) {
    if (s == IVA_OK) return;
    std::fprintf(stderr, "ivaloc: %s failed (%s): %s\n", what, iva_status_name(s), iva_last_error());
    throw Failure{s};
}

std::string read_string(iva_status (*fn)(const iva_config*, char*, size_t, size_t*), const iva_config* c) {
    size_t needed = 0;
    fn(c, nullptr, 0, &needed);
    std::string out(needed, '\0');
    check(fn(c, out.data(), out.size(), &needed), "config query");
    out.resize(needed - 1);
    return out;
}

std::string corpus_summary(const iva_corpus* corpus) {
    size_t needed = 0;
    iva_corpus_summary(corpus, nullptr, 0, &needed);
    std::string out(needed, '\0');
    check(iva_corpus_summary(corpus, out.data(), out.size(), &needed), "summary");
    out.resize(needed - 1);
    return out;
}

using ConfigPtr = std::unique_ptr<iva_config, decltype(&iva_config_destroy)>;
using CorpusPtr = std::unique_ptr<iva_corpus, decltype(&iva_corpus_destroy)>;
using ModelPtr = std::unique_ptr<iva_model, decltype(&iva_model_destroy)>;

struct Options {
    std::vector<std::string> config_paths;
    std::vector<std::string> sets;
    std::string seed, jobs, variant;
    std::string out = "out";
    std::string manifest;
    bool synthetic = false;
    std::string checkpoint;
};

ConfigPtr build_config(const Options& o) {
    iva_config* raw = nullptr;
    check(iva_config_create(&raw), "config");
    ConfigPtr c(raw, iva_config_destroy);
    for (const auto& path : o.config_paths) check(iva_config_load_file(c.get(), path.c_str()), "loading --config");
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            std::fprintf(stderr, "ivaloc: --set expects key=value, got '%s'\n", s.c_str());
            throw Failure{IVA_ERR_CONFIG};
        }
        check(iva_config_set(c.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), "--set");
    }
    if (!o.seed.empty()) check(iva_config_set(c.get(), "run.seed", o.seed.c_str()), "--seed");
    if (!o.jobs.empty()) check(iva_config_set(c.get(), "run.jobs", o.jobs.c_str()), "--jobs");
    if (!o.variant.empty()) check(iva_config_set(c.get(), "run.variant", o.variant.c_str()), "--variant");
    check(iva_config_validate(c.get()), "config validation");
    return c;
}

CorpusPtr load_corpus(const Options& o, const iva_config* c) {
    iva_corpus* raw = nullptr;
    if (o.synthetic) {
        check(iva_corpus_generate(c, &raw), "synthetic corpus");
    } else {
        if (o.manifest.empty()) {
            std::fprintf(stderr, "ivaloc: pass --manifest PATH or --synthetic\n");
            throw Failure{IVA_ERR_CONFIG};
        }
        check(iva_corpus_load(c, o.manifest.c_str(), &raw), "loading manifest");
    }
    CorpusPtr corpus(raw, iva_corpus_destroy);
    size_t issues = 0;
    iva_corpus_issue_count(corpus.get(), &issues);
    for (size_t i = 0; i < issues; ++i) {
        size_t needed = 0;
        iva_corpus_issue(corpus.get(), i, nullptr, 0, &needed);
        std::string msg(needed, '\0');
        iva_corpus_issue(corpus.get(), i, msg.data(), msg.size(), &needed);
        std::fprintf(stderr, "ivaloc: %s\n", msg.c_str());
    }
    return corpus;
}

size_t issue_count(const iva_corpus* corpus) {
    size_t n = 0;
    iva_corpus_issue_count(corpus, &n);
    return n;
}

void add_common(CLI::App* cmd, Options& o, bool with_variant) {
    cmd->add_option("--config", o.config_paths, "INI config file; repeatable, later files win")->check(CLI::ExistingFile);
    cmd->add_option("--set", o.sets, "Override a config key (key=value); repeatable");
    cmd->add_option("--seed", o.seed, "Master seed");
    cmd->add_option("--jobs", o.jobs, "Parallel folds/trials");
    cmd->add_option("--out", o.out, "Output directory");
    if (with_variant)
        cmd->add_option("--variant", o.variant, "Model variant")
            ->check(CLI::IsMember({"vgg", "vgg-lstm1", "vgg-bilstm1", "vgg-bilstm2", "full"}));
}

void add_corpus(CLI::App* cmd, Options& o) {
    auto* m = cmd->add_option("--manifest", o.manifest, "Dataset manifest CSV");
    auto* s = cmd->add_flag("--synthetic", o.synthetic, "Use the synthetic corpus described by synth.*");
    m->excludes(s);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"IVA origin localization from 12-lead ECG (RVOT vs LVOT)"};
    app.require_subcommand(1);
    app.set_version_flag("--version", iva_version());
    Options o;

    auto* gen = app.add_subcommand("gen-synth", "Write a synthetic raw corpus (manifest + record CSVs)");
    add_common(gen, o, false);
    auto* prep = app.add_subcommand("preprocess", "Preprocess a corpus and write N x 12 CSVs plus a summary");
    add_common(prep, o, false);
    add_corpus(prep, o);
    auto* train = app.add_subcommand("train", "Fit one model on run.fold's split");
    add_common(train, o, true);
    add_corpus(train, o);
    auto* cv = app.add_subcommand("cv", "Cross-validate one variant");
    add_common(cv, o, true);
    add_corpus(cv, o);
    auto* ablate = app.add_subcommand("ablate", "Cross-validate all five variants on the same folds");
    add_common(ablate, o, false);
    add_corpus(ablate, o);
    auto* search = app.add_subcommand("search", "Random hyperparameter search on run.fold's split");
    add_common(search, o, true);
    add_corpus(search, o);
    auto* attn = app.add_subcommand("export-attention", "Write per-step attention weights for a corpus");
    add_common(attn, o, false);
    add_corpus(attn, o);
    attn->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kConfig;
    }

    try {
        ConfigPtr config = build_config(o);
        const std::string hash = read_string(iva_config_hash, config.get());
        const char* out = o.out.c_str();

        if (gen->parsed()) {
            check(iva_write_synthetic(config.get(), out), "gen-synth");
            std::printf("wrote synthetic corpus to %s (config %s)\n", out, hash.c_str());
            return kOk;
        }
        if (attn->parsed()) {
            iva_model* raw = nullptr;
            check(iva_model_load(o.checkpoint.c_str(), &raw), "loading checkpoint");
            ModelPtr model(raw, iva_model_destroy);
            CorpusPtr corpus = load_corpus(o, config.get());
            const std::string path = o.out + "/attention.csv";
            check(iva_export_attention(model.get(), corpus.get(), path.c_str()), "export-attention");
            std::printf("wrote %s\n", path.c_str());
            return issue_count(corpus.get()) ? kData : kOk;
        }

        CorpusPtr corpus = load_corpus(o, config.get());
        if (prep->parsed()) {
            check(iva_corpus_write_prepared(corpus.get(), config.get(), out), "preprocess");
            std::printf("%s", corpus_summary(corpus.get()).c_str());
            const size_t issues = issue_count(corpus.get());
            if (issues) std::fprintf(stderr, "ivaloc: %zu record(s) failed\n", issues);
            return issues ? kData : kOk;
        }
        if (issue_count(corpus.get())) {
            std::fprintf(stderr, "ivaloc: refusing to continue with failed records\n");
            return kData;
        }
        if (train->parsed()) check(iva_train(config.get(), corpus.get(), out, nullptr), "train");
        else if (cv->parsed()) check(iva_cv(config.get(), corpus.get(), out), "cv");
        else if (ablate->parsed()) check(iva_ablate(config.get(), corpus.get(), out), "ablate");
        else if (search->parsed()) check(iva_search(config.get(), corpus.get(), out), "search");
        std::printf("results in %s (config %s)\n", out, hash.c_str());
        return kOk;
    } catch (const Failure& f) {
        return exit_code(f.status);
    }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ivaloc/dataset_io.hpp"
#include "ivaloc/evaluation.hpp"
#include "ivaloc/key_values.hpp"
#include "ivaloc/training.hpp"

namespace ivaloc {

void write_preprocess(const PreprocessConfig& c, KeyValues& kv);
PreprocessConfig read_preprocess(const KeyValues& kv);
void write_synth(const SynthConfig& c, KeyValues& kv);
SynthConfig read_synth(const KeyValues& kv);

/// Settings for one CLI run: a file of `[section]` / `key = value` lines plus
/// overrides, resolved into the typed configs. Later `set` calls win.
///
/// Seeds: `run.seed` drives everything. Training uses it directly, the fold
/// plan uses derive_seed(seed, 1) and the synthetic corpus derive_seed(seed, 2).
class RunConfig {
public:
    RunConfig() = default;

    /// Throws ConfigError for unknown keys or malformed lines.
    void load_file(const std::filesystem::path& path);
    void load_text(std::string_view text, const std::string& origin = "<text>");
    void set(const std::string& key, const std::string& value);
    const KeyValues& overrides() const { return overrides_; }

    std::uint64_t seed() const;
    std::size_t jobs() const;
    AblationVariant variant() const;
    std::size_t n_folds() const;
    bool stratified() const;
    std::size_t fold() const;
    double threshold() const;
    std::size_t n_trials() const;

    PreprocessConfig preprocess() const;
    ModelConfig model() const;
    TrainConfig train() const;
    SynthConfig synth() const;
    HyperparamSpace search_space() const;
    std::uint64_t fold_seed() const;

    /// Every key with its resolved value.
    KeyValues resolved() const;
    /// Resolves and validates every section; throws ConfigError.
    void validate() const;
    /// Canonical `[section]` text of resolved().
    std::string text() const;
    /// Digest of the resolved config excluding run.jobs.
    std::string hash() const;

    static const std::vector<std::string>& known_keys();

private:
    std::string get(const std::string& key) const;
    KeyValues overrides_;
};

/// `[section]` grouped rendering of dotted keys. Keys matching `commented` are written as comments.
std::string to_ini(const KeyValues& kv, const std::function<bool(const std::string&)>& commented = {});

}  // namespace ivaloc

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ivaloc/signal_prep.hpp"

namespace ivaloc {

inline constexpr std::string_view kManifestHeader = "record_id,file,fs_hz,label,age,sex";

struct ManifestRow {
    std::string record_id;
    std::string file;  // relative to the manifest's directory unless absolute
    double fs_hz = 0.0;
    std::optional<Origin> label;
    std::optional<double> age;
    std::optional<char> sex;
    std::size_t line = 0;  // 1-based line in the manifest file
};

enum class IssueKind {
    ManifestRow,
    DuplicateId,
    MissingFile,
    MissingLead,
    NonNumeric,
    RaggedRow,
    InvalidRecord,
};

std::string_view issue_kind_name(IssueKind kind);

struct LoadIssue {
    IssueKind kind;
    std::size_t manifest_line = 0;
    std::string record_id;
    std::string message;
};

std::string describe(const LoadIssue& issue);

/// Parses the manifest. Malformed rows are reported in `issues` and skipped.
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path, std::vector<LoadIssue>& issues);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows);

/// Reads a per-record CSV (header of the 12 lead names, any column order).
/// Throws DataError tagged with the matching IssueKind on failure.
EcgRecord read_record_csv(const std::filesystem::path& path, const std::string& record_id, double fs_hz);
void write_record_csv(const std::filesystem::path& path, const EcgRecord& record);

class RecordError : public DataError {
public:
    RecordError(IssueKind kind, const std::string& what) : DataError(what), kind_(kind) {}
    IssueKind issue_kind() const { return kind_; }

private:
    IssueKind kind_;
};

struct DatasetSummary {
    std::size_t records = 0;
    std::size_t rvot = 0;
    std::size_t lvot = 0;
    std::size_t unlabeled = 0;
    double mean_duration_s = 0.0;
    double sd_duration_s = 0.0;

    void add(const EcgRecord& r);
    void finish();
    std::string table() const;

private:
    double sum_ = 0.0, sum_sq_ = 0.0;
};

/// Streams every valid record through `sink`; invalid ones land in `issues`.
DatasetSummary for_each_record(const std::filesystem::path& manifest, std::vector<LoadIssue>& issues,
                               const std::function<void(EcgRecord&&)>& sink,
                               double max_duration_s = kMaxRecordDurationS);

struct LoadResult {
    std::vector<EcgRecord> records;
    std::vector<LoadIssue> issues;
    DatasetSummary summary;
};

LoadResult load_dataset_lenient(const std::filesystem::path& manifest);
/// Loads every record; throws DataError listing all diagnostics if any record fails.
std::vector<EcgRecord> load_dataset(const std::filesystem::path& manifest);

/// Writes `<dir>/manifest.csv` plus `<dir>/records/<id>.csv`.
void save_dataset(const std::filesystem::path& dir, const std::vector<EcgRecord>& records);

// ---------------------------------------------------------------------------

struct SynthConfig {
    std::size_t n_records = 100;
    double class_ratio = 0.77;  // fraction RVOT
    double fs_hz = 2000.0;
    double duration_min_s = 5.0;
    double duration_max_s = 25.0;
    double noise_std = 0.05;
    /// 0: classes identical; 1: QRS polarity fully inverted in V1-V3 and III for LVOT.
    double separation = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t rvot_count() const;
};

/// Record `index` of the corpus described by `config`; depends only on (config, index).
EcgRecord generate_synthetic_record(const SynthConfig& config, std::size_t index);
std::vector<EcgRecord> generate_synthetic(const SynthConfig& config);
/// Streams the synthetic corpus to disk in the save_dataset layout.
void write_synthetic_dataset(const std::filesystem::path& dir, const SynthConfig& config);

/// Generates and preprocesses without keeping raw records around.
std::vector<PreparedSample> prepare_synthetic(const SynthConfig& config, const PreprocessConfig& prep = {});

}  // namespace ivaloc

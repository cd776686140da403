#include "ivaloc/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "ivaloc/key_values.hpp"

namespace ivaloc {

std::string_view issue_kind_name(IssueKind kind) {
    switch (kind) {
        case IssueKind::ManifestRow: return "manifest-row";
        case IssueKind::DuplicateId: return "duplicate-id";
        case IssueKind::MissingFile: return "missing-file";
        case IssueKind::MissingLead: return "missing-lead";
        case IssueKind::NonNumeric: return "non-numeric";
        case IssueKind::RaggedRow: return "ragged-row";
        case IssueKind::InvalidRecord: return "invalid-record";
    }
    return "unknown";
}

std::string describe(const LoadIssue& issue) {
    std::ostringstream os;
    os << "manifest line " << issue.manifest_line;
    if (!issue.record_id.empty()) os << " (" << issue.record_id << ")";
    os << ": [" << issue_kind_name(issue.kind) << "] " << issue.message;
    return os.str();
}

namespace {

bool parse_cell(std::string_view cell, double& out) {
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
    if (cell.empty()) return false;
    if (cell.front() == '+') cell.remove_prefix(1);
    auto res = std::from_chars(cell.data(), cell.data() + cell.size(), out);
    return res.ec == std::errc() && res.ptr == cell.data() + cell.size() && std::isfinite(out);
}

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

}  // namespace

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path, std::vector<LoadIssue>& issues) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || trim(strip_cr(line)) != kManifestHeader)
        throw DataError("manifest: " + path.string() + " must start with header '" + std::string(kManifestHeader) + "'");
    std::vector<ManifestRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (trim(line).empty()) continue;
        const auto cells = split(line, ',');
        auto bad = [&](const std::string& msg) {
            issues.push_back({IssueKind::ManifestRow, lineno, cells.empty() ? "" : trim(cells[0]), msg});
        };
        if (cells.size() != 6) {
            bad("expected 6 columns, found " + std::to_string(cells.size()));
            continue;
        }
        ManifestRow r;
        r.line = lineno;
        r.record_id = trim(cells[0]);
        r.file = trim(cells[1]);
        if (r.record_id.empty() || r.file.empty()) {
            bad("record_id and file are required");
            continue;
        }
        if (!parse_cell(cells[2], r.fs_hz) || r.fs_hz <= 0) {
            bad("fs_hz must be a positive number, got '" + cells[2] + "'");
            continue;
        }
        const std::string label = trim(cells[3]);
        if (!label.empty()) {
            r.label = parse_origin(label);
            if (!r.label) {
                bad("label must be RVOT or LVOT, got '" + label + "'");
                continue;
            }
        }
        if (const std::string age = trim(cells[4]); !age.empty()) {
            double a = 0;
            if (!parse_cell(age, a)) {
                bad("age must be numeric, got '" + age + "'");
                continue;
            }
            r.age = a;
        }
        if (const std::string sex = trim(cells[5]); !sex.empty()) {
            if (sex != "M" && sex != "F") {
                bad("sex must be M or F, got '" + sex + "'");
                continue;
            }
            r.sex = sex[0];
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("manifest: cannot write " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : rows) {
        out << r.record_id << ',' << r.file << ',' << format_double(r.fs_hz) << ','
            << (r.label ? origin_name(*r.label) : "") << ',' << (r.age ? format_double(*r.age) : "") << ','
            << (r.sex ? std::string(1, *r.sex) : "") << '\n';
    }
    if (!out) throw DataError("manifest: write failed for " + path.string());
}

EcgRecord read_record_csv(const std::filesystem::path& path, const std::string& record_id, double fs_hz) {
    std::ifstream in(path);
    if (!in) throw RecordError(IssueKind::MissingFile, "cannot open record file " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw RecordError(IssueKind::MissingLead, "record file is empty");
    const auto header = split(strip_cr(line), ',');
    std::array<std::size_t, kLeadCount> column{};
    for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
        auto it = std::find_if(header.begin(), header.end(),
                               [&](const std::string& h) { return trim(h) == kLeadNames[lead]; });
        if (it == header.end())
            throw RecordError(IssueKind::MissingLead, "missing lead column '" + std::string(kLeadNames[lead]) + "'");
        column[lead] = static_cast<std::size_t>(it - header.begin());
    }
    if (header.size() != kLeadCount)
        throw RecordError(IssueKind::MissingLead, "expected 12 lead columns, found " + std::to_string(header.size()));

    EcgRecord r;
    r.record_id = record_id;
    r.sampling_rate_hz = fs_hz;
    std::size_t row = 1;
    std::vector<std::string_view> cells;
    while (std::getline(in, line)) {
        ++row;
        line = strip_cr(line);
        if (line.empty()) continue;
        cells.clear();
        std::string_view rest(line);
        for (;;) {
            const auto pos = rest.find(',');
            cells.push_back(rest.substr(0, pos));
            if (pos == std::string_view::npos) break;
            rest.remove_prefix(pos + 1);
        }
        if (cells.size() != kLeadCount)
            throw RecordError(IssueKind::RaggedRow, "row " + std::to_string(row) + " has " +
                                                        std::to_string(cells.size()) + " cells, expected 12");
        for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
            double v = 0;
            if (!parse_cell(cells[column[lead]], v))
                throw RecordError(IssueKind::NonNumeric, "row " + std::to_string(row) + " column " +
                                                             std::string(kLeadNames[lead]) + ": non-numeric cell '" +
                                                             std::string(cells[column[lead]]) + "'");
            r.leads[lead].push_back(v);
        }
    }
    return r;
}

void write_record_csv(const std::filesystem::path& path, const EcgRecord& record) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw DataError("cannot write record file " + path.string());
    for (std::size_t lead = 0; lead < kLeadCount; ++lead) out << (lead ? "," : "") << kLeadNames[lead];
    out << '\n';
    std::string buf;
    char num[32];
    for (std::size_t i = 0; i < record.length(); ++i) {
        buf.clear();
        for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
            if (lead) buf += ',';
            auto res = std::to_chars(num, num + sizeof(num), record.leads[lead][i]);
            buf.append(num, res.ptr);
        }
        buf += '\n';
        out << buf;
    }
    if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------

void DatasetSummary::add(const EcgRecord& r) {
    ++records;
    if (!r.label) ++unlabeled;
    else if (*r.label == Origin::RVOT) ++rvot;
    else ++lvot;
    sum_ += r.duration_s();
    sum_sq_ += r.duration_s() * r.duration_s();
}

void DatasetSummary::finish() {
    if (records == 0) return;
    const double n = static_cast<double>(records);
    mean_duration_s = sum_ / n;
    sd_duration_s = records > 1 ? std::sqrt(std::max(0.0, (sum_sq_ - n * mean_duration_s * mean_duration_s) / (n - 1))) : 0.0;
}

std::string DatasetSummary::table() const {
    auto pct = [this](std::size_t k) {
        const std::size_t labeled = rvot + lvot;
        return labeled ? std::to_string(static_cast<int>(std::lround(100.0 * static_cast<double>(k) / static_cast<double>(labeled))))
                       : std::string("0");
    };
    std::ostringstream os;
    os << "Characteristics\tAll\tRVOT\tLVOT\n";
    os << "Patients, n (%)\t" << records << '\t' << rvot << " (" << pct(rvot) << ")\t" << lvot << " (" << pct(lvot)
       << ")\n";
    if (unlabeled) os << "Unlabeled\t" << unlabeled << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", mean_duration_s, sd_duration_s);
    os << "Duration (s)\t" << buf << '\n';
    return os.str();
}

DatasetSummary for_each_record(const std::filesystem::path& manifest, std::vector<LoadIssue>& issues,
                               const std::function<void(EcgRecord&&)>& sink, double max_duration_s) {
    const auto rows = read_manifest(manifest, issues);
    const auto base = manifest.parent_path();
    std::set<std::string> seen;
    DatasetSummary summary;
    for (const auto& row : rows) {
        if (!seen.insert(row.record_id).second) {
            issues.push_back({IssueKind::DuplicateId, row.line, row.record_id, "duplicate record_id"});
            continue;
        }
        const std::filesystem::path file = std::filesystem::path(row.file).is_absolute() ? std::filesystem::path(row.file) : base / row.file;
        try {
            EcgRecord r = read_record_csv(file, row.record_id, row.fs_hz);
            r.label = row.label;
            r.age = row.age;
            r.sex = row.sex;
            validate_record(r, max_duration_s);
            summary.add(r);
            sink(std::move(r));
        } catch (const RecordError& e) {
            issues.push_back({e.issue_kind(), row.line, row.record_id, e.what()});
        } catch (const DataError& e) {
            issues.push_back({IssueKind::InvalidRecord, row.line, row.record_id, e.what()});
        }
    }
    summary.finish();
    return summary;
}

LoadResult load_dataset_lenient(const std::filesystem::path& manifest) {
    LoadResult res;
    res.summary = for_each_record(manifest, res.issues, [&](EcgRecord&& r) { res.records.push_back(std::move(r)); });
    return res;
}

std::vector<EcgRecord> load_dataset(const std::filesystem::path& manifest) {
    LoadResult res = load_dataset_lenient(manifest);
    if (!res.issues.empty()) {
        std::string msg = "dataset: " + std::to_string(res.issues.size()) + " record(s) failed to load";
        for (const auto& i : res.issues) msg += "\n  " + describe(i);
        throw DataError(msg);
    }
    return std::move(res.records);
}

void save_dataset(const std::filesystem::path& dir, const std::vector<EcgRecord>& records) {
    std::filesystem::create_directories(dir / "records");
    std::vector<ManifestRow> rows;
    for (const auto& r : records) {
        const std::string file = "records/" + r.record_id + ".csv";
        write_record_csv(dir / file, r);
        rows.push_back({r.record_id, file, r.sampling_rate_hz, r.label, r.age, r.sex, 0});
    }
    write_manifest(dir / "manifest.csv", rows);
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
    if (n_records == 0) throw ConfigError("synth: n_records must be positive");
    if (!(class_ratio > 0.0 && class_ratio < 1.0)) throw ConfigError("synth: class_ratio must lie in (0, 1)");
    if (!(fs_hz > 0.0)) throw ConfigError("synth: fs_hz must be positive");
    if (!(duration_min_s > 0.0 && duration_min_s <= duration_max_s && duration_max_s <= kMaxRecordDurationS))
        throw ConfigError("synth: durations must satisfy 0 < min <= max <= 25 s");
    if (!(noise_std >= 0.0)) throw ConfigError("synth: noise_std must be non-negative");
    if (!(separation >= 0.0 && separation <= 1.0)) throw ConfigError("synth: separation must lie in [0, 1]");
}

std::size_t SynthConfig::rvot_count() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(n_records) * class_ratio));
}

namespace {

// Per-lead QRS amplitude (mV) of the synthetic template, canonical lead order.
constexpr std::array<double, kLeadCount> kQrsAmplitude = {0.8, 1.2, 0.5, -0.9, 0.4, 0.8, -0.6, -0.3, 0.4, 1.1, 1.3, 1.0};
constexpr std::array<double, kLeadCount> kTAmplitude = {0.20, 0.30, 0.10, -0.25, 0.10, 0.20, 0.05, 0.30, 0.35, 0.30, 0.25, 0.20};
// Leads whose QRS polarity carries the class: III, V1, V2, V3.
constexpr std::array<bool, kLeadCount> kClassLeads = {false, false, true, false, false, false,
                                                      true,  true,  true, false, false, false};

std::vector<int> synthetic_labels(const SynthConfig& config) {
    std::vector<int> labels(config.n_records, 0);
    std::fill(labels.begin(), labels.begin() + static_cast<long>(config.rvot_count()), 1);
    Rng rng(config.seed);
    std::shuffle(labels.begin(), labels.end(), rng);
    return labels;
}

EcgRecord synth_record(const SynthConfig& config, std::size_t index, int label) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    Rng rng(seq);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    EcgRecord r;
    char id[32];
    std::snprintf(id, sizeof(id), "syn%05zu", index);
    r.record_id = id;
    r.sampling_rate_hz = config.fs_hz;
    r.label = label ? Origin::RVOT : Origin::LVOT;
    r.age = std::round(30.0 + 35.0 * uni(rng));
    r.sex = uni(rng) < 0.68 ? 'F' : 'M';

    const double duration = config.duration_min_s + (config.duration_max_s - config.duration_min_s) * uni(rng);
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(duration * config.fs_hz)));
    const double rr = 60.0 / (60.0 + 40.0 * uni(rng));
    std::array<double, kLeadCount> gain{};
    for (auto& g : gain) g = 0.8 + 0.4 * uni(rng);
    const double polarity = label ? 1.0 : 1.0 - 2.0 * config.separation;

    std::vector<double> beats;
    for (double t = rr * uni(rng); t < duration; t += rr * (0.97 + 0.06 * uni(rng))) beats.push_back(t);

    constexpr double qrs_sigma = 0.02, t_sigma = 0.06, t_delay = 0.3;
    for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
        auto& x = r.leads[lead];
        x.assign(n, 0.0);
        const double qrs = kQrsAmplitude[lead] * gain[lead] * (kClassLeads[lead] ? polarity : 1.0);
        const double tw = kTAmplitude[lead] * gain[lead];
        for (double b : beats) {
            const auto lo = static_cast<long>(std::max(0.0, (b - 0.15) * config.fs_hz));
            const auto hi = std::min(static_cast<long>(n), static_cast<long>((b + t_delay + 0.3) * config.fs_hz));
            for (long i = lo; i < hi; ++i) {
                const double t = static_cast<double>(i) / config.fs_hz - b;
                const double u = t / qrs_sigma;
                // Gaussian derivative normalized to unit peak, then a Gaussian T wave.
                x[static_cast<std::size_t>(i)] += qrs * -u * std::exp(0.5 - 0.5 * u * u);
                const double v = (t - t_delay) / t_sigma;
                x[static_cast<std::size_t>(i)] += tw * std::exp(-0.5 * v * v);
            }
        }
        for (double& v : x) v = std::round((v + config.noise_std * noise(rng)) * 1000.0) / 1000.0;
    }
    return r;
}

}  // namespace

EcgRecord generate_synthetic_record(const SynthConfig& config, std::size_t index) {
    config.validate();
    if (index >= config.n_records) throw ContractError("synth: record index out of range");
    return synth_record(config, index, synthetic_labels(config)[index]);
}

std::vector<EcgRecord> generate_synthetic(const SynthConfig& config) {
    config.validate();
    const auto labels = synthetic_labels(config);
    std::vector<EcgRecord> out;
    out.reserve(config.n_records);
    for (std::size_t i = 0; i < config.n_records; ++i) out.push_back(synth_record(config, i, labels[i]));
    return out;
}

void write_synthetic_dataset(const std::filesystem::path& dir, const SynthConfig& config) {
    config.validate();
    const auto labels = synthetic_labels(config);
    std::filesystem::create_directories(dir / "records");
    std::vector<ManifestRow> rows;
    for (std::size_t i = 0; i < config.n_records; ++i) {
        const EcgRecord r = synth_record(config, i, labels[i]);
        const std::string file = "records/" + r.record_id + ".csv";
        write_record_csv(dir / file, r);
        rows.push_back({r.record_id, file, r.sampling_rate_hz, r.label, r.age, r.sex, 0});
    }
    write_manifest(dir / "manifest.csv", rows);
}

std::vector<PreparedSample> prepare_synthetic(const SynthConfig& config, const PreprocessConfig& prep) {
    config.validate();
    const auto labels = synthetic_labels(config);
    std::vector<PreparedSample> out;
    out.reserve(config.n_records);
    for (std::size_t i = 0; i < config.n_records; ++i) out.push_back(preprocess(synth_record(config, i, labels[i]), prep));
    return out;
}

}  // namespace ivaloc

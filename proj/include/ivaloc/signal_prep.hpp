#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivaloc/tensor.hpp"

namespace ivaloc {

inline constexpr std::size_t kLeadCount = 12;
inline constexpr std::array<std::string_view, kLeadCount> kLeadNames = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

enum class Origin { LVOT = 0, RVOT = 1 };

std::string_view origin_name(Origin o);
std::optional<Origin> parse_origin(std::string_view s);
/// RVOT -> 1, LVOT -> 0.
inline int origin_label(Origin o) { return o == Origin::RVOT ? 1 : 0; }

/// Raw 12-lead record at its native rate. Leads are stored in canonical order.
struct EcgRecord {
    std::string record_id;
    double sampling_rate_hz = 2000.0;
    std::array<std::vector<double>, kLeadCount> leads;
    std::optional<Origin> label;
    std::optional<double> age;
    std::optional<char> sex;  // 'M' or 'F'

    std::size_t length() const { return leads[0].size(); }
    double duration_s() const { return static_cast<double>(length()) / sampling_rate_hz; }
};

inline constexpr double kMaxRecordDurationS = 25.0;

/// Throws DataError when the record breaks an invariant (lead count/length,
/// positive rate, duration bound).
void validate_record(const EcgRecord& record, double max_duration_s = kMaxRecordDurationS);

struct PreprocessConfig {
    double target_duration_s = 25.0;
    double cutoff_hz = 25.0;
    int filter_order = 4;
    double target_fs_hz = 50.0;
    double zscore_epsilon = 1e-8;

    /// Checks the config against a source sampling rate.
    void validate(double sampling_rate_hz) const;
    std::size_t output_length() const;
};

/// 12 x N normalized matrix (N = 1250 with defaults) plus label.
struct PreparedSample {
    Tensor values;
    int label = 0;
    std::string record_id;
    std::size_t original_length_samples = 0;
};

struct FilterCoefficients {
    std::vector<double> numerator;
    std::vector<double> denominator;  // denominator[0] == 1

    std::size_t order() const { return denominator.size() - 1; }
};

std::vector<double> pad_to_length(std::span<const double> signal, std::size_t target_len);

/// Digital lowpass Butterworth via the bilinear transform with prewarping, so
/// the half-power point falls exactly at `cutoff_hz`.
FilterCoefficients design_lowpass_butterworth(int order, double cutoff_hz, double fs_hz);

/// |H(e^{jw})| at frequency `f_hz`.
double magnitude_response(const FilterCoefficients& coeffs, double f_hz, double fs_hz);

/// Single causal pass (transposed direct form II) with optional initial state.
std::vector<double> lfilter(const FilterCoefficients& coeffs, std::span<const double> signal,
                            std::span<const double> initial_state = {});

/// Filter state that makes a constant input of 1 produce a constant output.
std::vector<double> lfilter_steady_state(const FilterCoefficients& coeffs);

/// Zero-phase forward-backward filtering with odd reflection of 3*order samples at each end.
std::vector<double> filtfilt(const FilterCoefficients& coeffs, std::span<const double> signal);

std::vector<double> decimate(std::span<const double> signal, int factor);

/// Population z-score; inputs with std below `epsilon` map to all zeros.
std::vector<double> zscore(std::span<const double> signal, double epsilon = 1e-8);

/// pad -> filtfilt -> decimate -> zscore per lead, stacked in canonical lead order.
PreparedSample preprocess(const EcgRecord& record, const PreprocessConfig& config = {});

}  // namespace ivaloc

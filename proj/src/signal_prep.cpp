#include "ivaloc/signal_prep.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

namespace ivaloc {

std::string_view origin_name(Origin o) { return o == Origin::RVOT ? "RVOT" : "LVOT"; }

std::optional<Origin> parse_origin(std::string_view s) {
    if (s == "RVOT") return Origin::RVOT;
    if (s == "LVOT") return Origin::LVOT;
    return std::nullopt;
}

void validate_record(const EcgRecord& record, double max_duration_s) {
    const std::string who = "record '" + record.record_id + "': ";
    if (!(record.sampling_rate_hz > 0.0)) throw DataError(who + "sampling rate must be positive");
    const std::size_t n = record.leads[0].size();
    if (n == 0) throw DataError(who + "leads are empty");
    for (std::size_t i = 0; i < kLeadCount; ++i)
        if (record.leads[i].size() != n)
            throw DataError(who + "lead " + std::string(kLeadNames[i]) + " has " +
                            std::to_string(record.leads[i].size()) + " samples, expected " + std::to_string(n));
    // Small slack so a record of exactly max_duration_s survives rounding of the rate.
    if (record.duration_s() > max_duration_s + 0.5 / record.sampling_rate_hz)
        throw DataError(who + "duration " + std::to_string(record.duration_s()) + " s exceeds " +
                        std::to_string(max_duration_s) + " s");
}

void PreprocessConfig::validate(double sampling_rate_hz) const {
    if (!(target_duration_s > 0.0)) throw ConfigError("preprocess: target duration must be positive");
    if (filter_order < 2 || filter_order % 2 != 0)
        throw ConfigError("preprocess: filter order must be even and >= 2, got " + std::to_string(filter_order));
    if (!(cutoff_hz > 0.0) || cutoff_hz > target_fs_hz / 2.0)
        throw ConfigError("preprocess: cutoff must lie in (0, target_fs/2]");
    if (!(target_fs_hz < sampling_rate_hz))
        throw ConfigError("preprocess: target rate " + std::to_string(target_fs_hz) +
                          " Hz must be below the source rate " + std::to_string(sampling_rate_hz) + " Hz");
    const double ratio = sampling_rate_hz / target_fs_hz;
    if (std::abs(ratio - std::round(ratio)) > 1e-9)
        throw ConfigError("preprocess: source rate " + std::to_string(sampling_rate_hz) +
                          " Hz is not an integer multiple of " + std::to_string(target_fs_hz) + " Hz");
    if (!(zscore_epsilon > 0.0)) throw ConfigError("preprocess: zscore epsilon must be positive");
}

std::size_t PreprocessConfig::output_length() const {
    return static_cast<std::size_t>(std::llround(target_duration_s * target_fs_hz));
}

std::vector<double> pad_to_length(std::span<const double> signal, std::size_t target_len) {
    if (signal.size() > target_len)
        throw DataError("pad_to_length: signal of " + std::to_string(signal.size()) + " samples exceeds target " +
                        std::to_string(target_len));
    std::vector<double> out(target_len, 0.0);
    std::copy(signal.begin(), signal.end(), out.begin());
    return out;
}

namespace {

std::vector<double> real_poly_from_roots(const std::vector<std::complex<double>>& roots) {
    std::vector<std::complex<double>> c{1.0};
    for (const auto& r : roots) {
        std::vector<std::complex<double>> next(c.size() + 1, 0.0);
        for (std::size_t i = 0; i < c.size(); ++i) {
            next[i] += c[i];
            next[i + 1] -= r * c[i];
        }
        c = std::move(next);
    }
    std::vector<double> out(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real();
    return out;
}

}  // namespace

FilterCoefficients design_lowpass_butterworth(int order, double cutoff_hz, double fs_hz) {
    if (order < 1) throw ConfigError("butterworth: order must be >= 1");
    if (!(fs_hz > 0.0)) throw ConfigError("butterworth: sampling rate must be positive");
    if (!(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0))
        throw ConfigError("butterworth: invalid cutoff " + std::to_string(cutoff_hz) + " Hz for fs " +
                          std::to_string(fs_hz) + " Hz (must be in (0, Nyquist))");
    const double pi = std::numbers::pi;
    const double warped = 2.0 * fs_hz * std::tan(pi * cutoff_hz / fs_hz);
    const double two_fs = 2.0 * fs_hz;

    std::vector<std::complex<double>> zpoles;
    for (int k = 0; k < order; ++k) {
        const double theta = pi * (2.0 * k + order + 1) / (2.0 * order);
        const std::complex<double> s = warped * std::polar(1.0, theta);
        zpoles.push_back((two_fs + s) / (two_fs - s));
    }
    FilterCoefficients fc;
    fc.denominator = real_poly_from_roots(zpoles);
    fc.numerator = real_poly_from_roots(std::vector<std::complex<double>>(static_cast<std::size_t>(order), -1.0));
    const double gain = std::accumulate(fc.denominator.begin(), fc.denominator.end(), 0.0) /
                        std::accumulate(fc.numerator.begin(), fc.numerator.end(), 0.0);
    for (double& b : fc.numerator) b *= gain;
    return fc;
}

double magnitude_response(const FilterCoefficients& coeffs, double f_hz, double fs_hz) {
    const double w = 2.0 * std::numbers::pi * f_hz / fs_hz;
    auto eval = [w](const std::vector<double>& p) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) acc += p[k] * std::polar(1.0, -w * static_cast<double>(k));
        return acc;
    };
    return std::abs(eval(coeffs.numerator) / eval(coeffs.denominator));
}

std::vector<double> lfilter_steady_state(const FilterCoefficients& coeffs) {
    const auto& b = coeffs.numerator;
    const auto& a = coeffs.denominator;
    const std::size_t n = coeffs.order();
    const double dc = std::accumulate(b.begin(), b.end(), 0.0) / std::accumulate(a.begin(), a.end(), 0.0);
    std::vector<double> z(n, 0.0);
    double acc = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        acc += b[i + 1] - a[i + 1] * dc;
        z[i] = acc;
    }
    return z;
}

std::vector<double> lfilter(const FilterCoefficients& coeffs, std::span<const double> signal,
                            std::span<const double> initial_state) {
    const auto& b = coeffs.numerator;
    const auto& a = coeffs.denominator;
    const std::size_t n = coeffs.order();
    if (b.size() != a.size() || a.empty() || a[0] != 1.0)
        throw ConfigError("lfilter: coefficients must be normalized with equal lengths");
    std::vector<double> z(n, 0.0);
    if (!initial_state.empty()) {
        if (initial_state.size() != n) throw ContractError("lfilter: initial state length mismatch");
        std::copy(initial_state.begin(), initial_state.end(), z.begin());
    }
    std::vector<double> y(signal.size());
    for (std::size_t t = 0; t < signal.size(); ++t) {
        const double x = signal[t];
        const double out = b[0] * x + (n ? z[0] : 0.0);
        for (std::size_t i = 0; i + 1 < n; ++i) z[i] = b[i + 1] * x + z[i + 1] - a[i + 1] * out;
        if (n) z[n - 1] = b[n] * x - a[n] * out;
        y[t] = out;
    }
    return y;
}

std::vector<double> filtfilt(const FilterCoefficients& coeffs, std::span<const double> signal) {
    const std::size_t pad = 3 * coeffs.order();
    if (signal.size() <= pad)
        throw DataError("filtfilt: signal of " + std::to_string(signal.size()) + " samples is too short (need > " +
                        std::to_string(pad) + ")");
    const std::size_t n = signal.size();
    std::vector<double> ext;
    ext.reserve(n + 2 * pad);
    for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * signal[0] - signal[i]);
    ext.insert(ext.end(), signal.begin(), signal.end());
    for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * signal[n - 1] - signal[n - 1 - i]);

    const std::vector<double> zi = lfilter_steady_state(coeffs);
    auto scaled = [&zi](double v) {
        std::vector<double> s(zi);
        for (double& x : s) x *= v;
        return s;
    };
    std::vector<double> fwd = lfilter(coeffs, ext, scaled(ext.front()));
    std::reverse(fwd.begin(), fwd.end());
    std::vector<double> bwd = lfilter(coeffs, fwd, scaled(fwd.front()));
    std::reverse(bwd.begin(), bwd.end());
    return std::vector<double>(bwd.begin() + static_cast<long>(pad), bwd.begin() + static_cast<long>(pad + n));
}

std::vector<double> decimate(std::span<const double> signal, int factor) {
    if (factor <= 0) throw ConfigError("decimate: factor must be positive, got " + std::to_string(factor));
    const auto step = static_cast<std::size_t>(factor);
    std::vector<double> out;
    out.reserve((signal.size() + step - 1) / step);
    for (std::size_t i = 0; i < signal.size(); i += step) out.push_back(signal[i]);
    return out;
}

std::vector<double> zscore(std::span<const double> signal, double epsilon) {
    if (signal.size() < 2) throw DataError("zscore: need at least 2 samples");
    const double n = static_cast<double>(signal.size());
    const double mean = std::accumulate(signal.begin(), signal.end(), 0.0) / n;
    double var = 0.0;
    for (double v : signal) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> out(signal.size(), 0.0);
    if (sd < epsilon) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (signal[i] - mean) / sd;
    return out;
}

PreparedSample preprocess(const EcgRecord& record, const PreprocessConfig& config) {
    validate_record(record, config.target_duration_s);
    config.validate(record.sampling_rate_hz);
    const auto target_len = static_cast<std::size_t>(std::llround(config.target_duration_s * record.sampling_rate_hz));
    const int factor = static_cast<int>(std::llround(record.sampling_rate_hz / config.target_fs_hz));
    const FilterCoefficients filter =
        design_lowpass_butterworth(config.filter_order, config.cutoff_hz, record.sampling_rate_hz);

    const std::size_t out_len = config.output_length();
    PreparedSample sample;
    sample.values = Tensor({kLeadCount, out_len});
    sample.record_id = record.record_id;
    sample.label = record.label ? origin_label(*record.label) : -1;
    sample.original_length_samples = (record.length() + static_cast<std::size_t>(factor) - 1) / static_cast<std::size_t>(factor);
    for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
        const auto padded = pad_to_length(record.leads[lead], target_len);
        const auto filtered = filtfilt(filter, padded);
        const auto reduced = decimate(filtered, factor);
        if (reduced.size() != out_len)
            throw ConfigError("preprocess: decimated length " + std::to_string(reduced.size()) + " != expected " +
                              std::to_string(out_len));
        const auto normalized = zscore(reduced, config.zscore_epsilon);
        std::copy(normalized.begin(), normalized.end(), sample.values.row(lead).begin());
    }
    return sample;
}

}  // namespace ivaloc

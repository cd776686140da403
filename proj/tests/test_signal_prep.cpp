#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ivaloc/signal_prep.hpp"

using namespace ivaloc;

namespace {

// Independent evaluation of |B(z)/A(z)| on the unit circle (Horner in z^-1).
double response_oracle(const FilterCoefficients& f, double hz, double fs) {
    const std::complex<double> zinv = std::exp(std::complex<double>(0.0, -2.0 * std::numbers::pi * hz / fs));
    auto horner = [&](const std::vector<double>& c) {
        std::complex<double> acc = 0.0;
        for (std::size_t k = c.size(); k-- > 0;) acc = acc * zinv + c[k];
        return acc;
    };
    return std::abs(horner(f.numerator) / horner(f.denominator));
}

std::vector<double> sinusoid(double hz, double fs, std::size_t n, double phase = 0.0) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) s[i] = std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs + phase);
    return s;
}

struct SineFit {
    double amplitude, phase;
};

// Least-squares fit y ~ a sin(wt) + b cos(wt) over [lo, hi).
SineFit fit_sine(const std::vector<double>& y, double hz, double fs, std::size_t lo, std::size_t hi) {
    double ss = 0, cc = 0, sc = 0, ys = 0, yc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
        const double w = 2.0 * std::numbers::pi * hz * static_cast<double>(i) / fs;
        const double s = std::sin(w), c = std::cos(w);
        ss += s * s, cc += c * c, sc += s * c, ys += y[i] * s, yc += y[i] * c;
    }
    const double det = ss * cc - sc * sc;
    const double a = (ys * cc - yc * sc) / det, b = (yc * ss - ys * sc) / det;
    return {std::hypot(a, b), std::atan2(b, a)};
}

long xcorr_peak_lag(const std::vector<double>& a, const std::vector<double>& b, long max_lag) {
    long best = 0;
    double best_v = -1e300;
    for (long lag = -max_lag; lag <= max_lag; ++lag) {
        double s = 0;
        for (long i = max_lag; i < static_cast<long>(a.size()) - max_lag; ++i) s += a[i] * b[i + lag];
        if (s > best_v) best_v = s, best = lag;
    }
    return best;
}

EcgRecord make_record(double seconds, double fs, std::uint64_t seed) {
    EcgRecord r;
    r.record_id = "r" + std::to_string(seed);
    r.sampling_rate_hz = fs;
    r.label = Origin::RVOT;
    const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (std::size_t l = 0; l < kLeadCount; ++l) {
        r.leads[l].resize(n);
        for (std::size_t i = 0; i < n; ++i)
            r.leads[l][i] = std::sin(2.0 * std::numbers::pi * (1.0 + 0.3 * static_cast<double>(l)) * static_cast<double>(i) / fs) + noise(rng);
    }
    return r;
}

}  // namespace

TEST_CASE("pad_to_length appends trailing zeros") {
    const std::vector<double> x = {1, 2, 3};
    CHECK(pad_to_length(x, 5) == std::vector<double>{1, 2, 3, 0, 0});
    const std::vector<double> y = {1, 2, 3, 4, 5};
    CHECK(pad_to_length(y, 5) == y);
    CHECK_THROWS_AS(pad_to_length(y, 4), DataError);

    // 5 s at 2000 Hz padded to 25 s.
    const std::vector<double> five_s(10000, 1.0);
    const auto padded = pad_to_length(five_s, 50000);
    REQUIRE(padded.size() == 50000);
    CHECK(std::all_of(padded.begin() + 10000, padded.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("butterworth design matches the analog prototype") {
    const auto f = design_lowpass_butterworth(4, 25.0, 2000.0);
    REQUIRE(f.numerator.size() == 5);
    REQUIRE(f.denominator.size() == 5);
    CHECK(f.denominator[0] == 1.0);
    const double dc = std::accumulate(f.numerator.begin(), f.numerator.end(), 0.0) /
                      std::accumulate(f.denominator.begin(), f.denominator.end(), 0.0);
    CHECK(dc == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(response_oracle(f, 0.0, 2000.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(std::abs(response_oracle(f, 25.0, 2000.0) - std::sqrt(0.5)) < 1e-3);
    CHECK(response_oracle(f, 50.0, 2000.0) <= 0.07);
    // Library evaluation agrees with the oracle.
    for (double hz : {0.0, 5.0, 25.0, 50.0, 400.0})
        CHECK(magnitude_response(f, hz, 2000.0) == doctest::Approx(response_oracle(f, hz, 2000.0)).epsilon(1e-12));

    // Prewarping puts the half-power point at the cutoff even near Nyquist.
    const auto g = design_lowpass_butterworth(2, 400.0, 1000.0);
    CHECK(response_oracle(g, 400.0, 1000.0) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));

    // Stable: impulse response decays.
    std::vector<double> impulse(40000, 0.0);
    impulse[0] = 1.0;
    const auto h = lfilter(f, impulse);
    CHECK(std::abs(h.back()) < 1e-12);

    CHECK_THROWS_AS(design_lowpass_butterworth(4, 1000.0, 2000.0), ConfigError);
    CHECK_THROWS_AS(design_lowpass_butterworth(4, 0.0, 2000.0), ConfigError);
    CHECK_THROWS_AS(design_lowpass_butterworth(0, 10.0, 2000.0), ConfigError);
}

TEST_CASE("filtfilt edge cases") {
    const auto f = design_lowpass_butterworth(4, 25.0, 2000.0);
    const std::vector<double> constant(3000, 2.5);
    for (double v : filtfilt(f, constant)) REQUIRE(std::abs(v - 2.5) < 1e-6);
    const std::vector<double> zeros(500, 0.0);
    for (double v : filtfilt(f, zeros)) REQUIRE(v == 0.0);
    CHECK_THROWS_AS(filtfilt(f, std::vector<double>(12, 1.0)), DataError);
    CHECK(filtfilt(f, std::vector<double>(13, 1.0)).size() == 13);
}

TEST_CASE("filtfilt passes a 25 Hz tone at half amplitude with zero lag") {
    const double fs = 2000.0;
    const auto f = design_lowpass_butterworth(4, 25.0, fs);
    const auto x = sinusoid(25.0, fs, 20000);
    const auto y = filtfilt(f, x);
    REQUIRE(y.size() == x.size());
    const auto fit = fit_sine(y, 25.0, fs, 2000, 18000);
    CHECK(std::abs(fit.amplitude - 0.5) < 2e-2);
    CHECK(std::abs(fit.phase) < 1e-3);
    CHECK(xcorr_peak_lag(x, y, 40) == 0);
}

TEST_CASE("filtfilt attenuates above twice the cutoff") {
    const double fs = 2000.0;
    const auto f = design_lowpass_butterworth(4, 25.0, fs);
    for (double hz : {50.0, 60.0, 75.0, 100.0, 250.0}) {
        const auto y = filtfilt(f, sinusoid(hz, fs, 20000));
        const auto fit = fit_sine(y, hz, fs, 2000, 18000);
        CHECK_MESSAGE(fit.amplitude <= 0.005, hz);
    }
}

TEST_CASE("filtfilt is zero-phase on band-limited signals") {
    const double fs = 2000.0;
    const auto f = design_lowpass_butterworth(4, 25.0, fs);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> freq(0.5, 20.0), ph(0.0, 6.28), pos(500.0, 7500.0);
    for (int trial = 0; trial < 5; ++trial) {
        // Smooth pulse train: sharp correlation peak, negligible energy above the cutoff.
        std::vector<double> x(8000, 0.0);
        for (int k = 0; k < 6; ++k) {
            const double c = pos(rng);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = (static_cast<double>(i) - c) / 60.0;
                x[i] += std::exp(-0.5 * d * d);
            }
        }
        CHECK(xcorr_peak_lag(x, filtfilt(f, x), 60) == 0);

        // Per-tone phase of a multi-tone signal.
        const double f1 = freq(rng), f2 = freq(rng);
        const auto s1 = sinusoid(f1, fs, 20000, ph(rng)), s2 = sinusoid(f2, fs, 20000, ph(rng));
        std::vector<double> mix(20000);
        for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = s1[i] + s2[i];
        const auto y = filtfilt(f, mix);
        std::vector<double> residual(20000);
        for (std::size_t i = 0; i < mix.size(); ++i) residual[i] = y[i] - s2[i] * std::pow(magnitude_response(f, f2, fs), 2);
        const auto in_fit = fit_sine(s1, f1, fs, 2000, 18000);
        const auto out_fit = fit_sine(residual, f1, fs, 2000, 18000);
        CHECK(std::abs(out_fit.phase - in_fit.phase) < 2e-3);
    }
}

TEST_CASE("decimate keeps every factor-th sample") {
    const std::vector<double> x = {10, 11, 12, 13, 14, 15, 16, 17};
    CHECK(decimate(x, 1) == x);
    CHECK(decimate(x, 4) == std::vector<double>{10, 14});
    CHECK(decimate(x, 3) == std::vector<double>{10, 13, 16});
    CHECK(decimate(std::vector<double>(50000, 0.0), 40).size() == 1250);
    CHECK_THROWS_AS(decimate(x, 0), ConfigError);
    CHECK_THROWS_AS(decimate(x, -2), ConfigError);
}

TEST_CASE("decimate and pad commute when lengths are multiples of the factor") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> len(1, 12), extra(0, 6), fac(1, 5);
    std::normal_distribution<double> val;
    for (int trial = 0; trial < 200; ++trial) {
        const int factor = fac(rng);
        const auto n = static_cast<std::size_t>(len(rng) * factor);
        const auto target = n + static_cast<std::size_t>(extra(rng) * factor);
        std::vector<double> x(n);
        for (auto& v : x) v = val(rng);
        REQUIRE(decimate(pad_to_length(x, target), factor) ==
                pad_to_length(decimate(x, factor), target / static_cast<std::size_t>(factor)));
    }
}

TEST_CASE("zscore") {
    const auto z = zscore(std::vector<double>{1, 2, 3});
    CHECK(z[0] == doctest::Approx(-1.22474).epsilon(1e-4));
    CHECK(z[1] == doctest::Approx(0.0));
    CHECK(z[2] == doctest::Approx(1.22474).epsilon(1e-4));
    for (double v : zscore(std::vector<double>(10, 4.2))) CHECK(v == 0.0);
    CHECK_THROWS_AS(zscore(std::vector<double>{1.0}), DataError);

    std::mt19937_64 rng(11);
    std::normal_distribution<double> d(3.0, 7.0);
    std::vector<double> x(1000);
    for (auto& v : x) v = d(rng);
    const auto out = zscore(x);
    const double mean = std::accumulate(out.begin(), out.end(), 0.0) / 1000.0;
    double var = 0;
    for (double v : out) var += (v - mean) * (v - mean);
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(std::sqrt(var / 1000.0) - 1.0) < 1e-9);
}

TEST_CASE("preprocess produces normalized 12x1250 matrices") {
    SUBCASE("full-length record has no zero tail") {
        const auto s = preprocess(make_record(25.0, 2000.0, 1));
        REQUIRE(s.values.shape == Shape{12, 1250});
        CHECK(s.original_length_samples == 1250);
        CHECK(s.label == 1);
        // Last samples are not a constant pad.
        CHECK(s.values.at(0, 1249) != s.values.at(0, 1248));
    }
    SUBCASE("short record is padded yet each row is standardized") {
        const auto s = preprocess(make_record(5.0, 2000.0, 2));
        REQUIRE(s.values.shape == Shape{12, 1250});
        CHECK(s.original_length_samples == 250);
        for (std::size_t r = 0; r < 12; ++r) {
            const auto row = s.values.row(r);
            const double mean = std::accumulate(row.begin(), row.end(), 0.0) / 1250.0;
            double var = 0;
            for (double v : row) var += (v - mean) * (v - mean);
            CHECK(std::abs(mean) < 1e-6);
            CHECK(std::abs(std::sqrt(var / 1250.0) - 1.0) < 1e-6);
        }
    }
    SUBCASE("shape is fixed for any duration and rate") {
        std::uint64_t seed = 10;
        for (double fs : {100.0, 250.0, 500.0, 1000.0, 2000.0})
            for (double dur : {0.5, 3.3, 12.0, 25.0}) {
                const auto s = preprocess(make_record(dur, fs, ++seed));
                CHECK(s.values.shape == Shape{12, 1250});
            }
    }
    SUBCASE("constant lead maps to zeros") {
        auto r = make_record(10.0, 2000.0, 3);
        std::fill(r.leads[4].begin(), r.leads[4].end(), 0.0);
        const auto s = preprocess(r);
        for (double v : s.values.row(4)) CHECK(v == 0.0);
    }
    SUBCASE("pipeline order is pad, filter, decimate, normalize") {
        const auto r = make_record(7.0, 2000.0, 4);
        const auto s = preprocess(r);
        const auto f = design_lowpass_butterworth(4, 25.0, 2000.0);
        const auto expect = zscore(decimate(filtfilt(f, pad_to_length(r.leads[7], 50000)), 40));
        for (std::size_t i = 0; i < 1250; ++i) REQUIRE(s.values.at(7, i) == expect[i]);
        // Normalizing before padding gives a different matrix.
        auto pre = pad_to_length(zscore(decimate(filtfilt(f, r.leads[7]), 40)), 1250);
        double diff = 0;
        for (std::size_t i = 0; i < 1250; ++i) diff += std::abs(pre[i] - expect[i]);
        CHECK(diff > 1.0);
    }
}

TEST_CASE("preprocess rejects invalid input") {
    auto r = make_record(5.0, 2000.0, 5);
    r.leads[3].pop_back();
    CHECK_THROWS_AS(preprocess(r), DataError);

    auto too_long = make_record(26.0, 2000.0, 6);
    CHECK_THROWS_AS(preprocess(too_long), DataError);

    auto odd_rate = make_record(5.0, 1234.0, 7);
    CHECK_THROWS_AS(preprocess(odd_rate), ConfigError);

    PreprocessConfig bad;
    bad.filter_order = 3;
    CHECK_THROWS_AS(preprocess(make_record(5.0, 2000.0, 8), bad), ConfigError);
}

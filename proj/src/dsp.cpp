#include "p2mark/dsp.hpp"

#include "p2mark/errors.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <numeric>

namespace p2mark::dsp {

namespace {

using cplx = std::complex<double>;

struct Zpk {
    std::vector<cplx> zeros;
    std::vector<cplx> poles;
    double gain = 1.0;
};

Zpk analog_prototype(int order) {
    Zpk proto;
    for (int k = 0; k < order; ++k) {
        const double theta = std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order);
        proto.poles.push_back(std::polar(1.0, theta));
    }
    return proto;
}

double prewarp(double hz, double fs) { return 2.0 * fs * std::tan(std::numbers::pi * hz / fs); }

cplx product(const std::vector<cplx>& v, const std::function<cplx(cplx)>& f) {
    cplx p{1.0, 0.0};
    for (auto x : v) p *= f(x);
    return p;
}

Zpk bilinear(const Zpk& analog, double fs) {
    const double fs2 = 2.0 * fs;
    Zpk out;
    for (auto z : analog.zeros) out.zeros.push_back((fs2 + z) / (fs2 - z));
    for (auto p : analog.poles) out.poles.push_back((fs2 + p) / (fs2 - p));
    // Zeros at infinity map to Nyquist.
    while (out.zeros.size() < out.poles.size()) out.zeros.emplace_back(-1.0, 0.0);
    const cplx num = product(analog.zeros, [&](cplx z) { return fs2 - z; });
    const cplx den = product(analog.poles, [&](cplx p) { return fs2 - p; });
    out.gain = analog.gain * (num / den).real();
    return out;
}

// Splits roots into conjugate-pair representatives and real roots.
void split_roots(const std::vector<cplx>& roots, std::vector<cplx>& pairs, std::vector<double>& reals) {
    for (auto r : roots) {
        if (std::abs(r.imag()) < 1e-10)
            reals.push_back(r.real());
        else if (r.imag() > 0.0)
            pairs.push_back(r);
    }
}

std::vector<Biquad> zpk_to_sos(const Zpk& d) {
    std::vector<cplx> pole_pairs, zero_pairs;
    std::vector<double> pole_reals, zero_reals;
    split_roots(d.poles, pole_pairs, pole_reals);
    split_roots(d.zeros, zero_pairs, zero_reals);

    std::vector<Biquad> sos;
    const auto take_zeros = [&](Biquad& s, size_t count) {
        if (count == 2 && !zero_pairs.empty()) {
            const cplx z = zero_pairs.back();
            zero_pairs.pop_back();
            s.b = {1.0, -2.0 * z.real(), std::norm(z)};
            return;
        }
        std::array<double, 2> r{0.0, 0.0};
        for (size_t i = 0; i < count; ++i) {
            if (zero_reals.empty()) throw ConfigurationError("butterworth: unmatched zeros");
            r[i] = zero_reals.back();
            zero_reals.pop_back();
        }
        if (count == 2)
            s.b = {1.0, -(r[0] + r[1]), r[0] * r[1]};
        else
            s.b = {1.0, -r[0], 0.0};
    };

    for (auto p : pole_pairs) {
        Biquad s;
        s.a = {-2.0 * p.real(), std::norm(p)};
        take_zeros(s, 2);
        sos.push_back(s);
    }
    while (!pole_reals.empty()) {
        Biquad s;
        const double p0 = pole_reals.back();
        pole_reals.pop_back();
        if (!pole_reals.empty()) {
            const double p1 = pole_reals.back();
            pole_reals.pop_back();
            s.a = {-(p0 + p1), p0 * p1};
            take_zeros(s, 2);
        } else {
            s.a = {-p0, 0.0};
            take_zeros(s, 1);
        }
        sos.push_back(s);
    }
    for (auto& c : sos.front().b) c *= d.gain;
    return sos;
}

}  // namespace

std::vector<Biquad> butterworth(int order, BandType type, double sample_rate, double low_hz, double high_hz) {
    if (order < 1) throw DomainError("butterworth: order must be >= 1");
    const double nyquist = sample_rate / 2.0;
    const auto check = [&](double hz) {
        if (!(hz > 0.0 && hz < nyquist)) throw DomainError("butterworth: cutoff must lie in (0, sample_rate / 2)");
    };
    check(low_hz);
    if (type == BandType::kBandpass) {
        check(high_hz);
        if (high_hz <= low_hz) throw DomainError("butterworth: bandpass needs low < high");
    }

    const Zpk proto = analog_prototype(order);
    Zpk analog;
    switch (type) {
        case BandType::kLowpass: {
            const double wc = prewarp(low_hz, sample_rate);
            for (auto p : proto.poles) analog.poles.push_back(p * wc);
            analog.gain = std::pow(wc, order);
            break;
        }
        case BandType::kHighpass: {
            const double wc = prewarp(low_hz, sample_rate);
            for (auto p : proto.poles) analog.poles.push_back(wc / p);
            analog.zeros.assign(static_cast<size_t>(order), cplx{0.0, 0.0});
            analog.gain = (1.0 / product(proto.poles, [](cplx p) { return -p; })).real();
            break;
        }
        case BandType::kBandpass: {
            const double w1 = prewarp(low_hz, sample_rate);
            const double w2 = prewarp(high_hz, sample_rate);
            const double w0 = std::sqrt(w1 * w2);
            const double bw = w2 - w1;
            for (auto p : proto.poles) {
                const cplx scaled = p * (bw / 2.0);
                const cplx root = std::sqrt(scaled * scaled - w0 * w0);
                analog.poles.push_back(scaled + root);
                analog.poles.push_back(scaled - root);
            }
            analog.zeros.assign(static_cast<size_t>(order), cplx{0.0, 0.0});
            analog.gain = std::pow(bw, order);
            break;
        }
    }
    return zpk_to_sos(bilinear(analog, sample_rate));
}

std::vector<float> sosfilt(const std::vector<Biquad>& sections, std::span<const float> x) {
    std::vector<double> y(x.begin(), x.end());
    for (const auto& s : sections) {
        double z1 = 0.0, z2 = 0.0;  // transposed direct form II state
        for (auto& v : y) {
            const double in = v;
            const double out = s.b[0] * in + z1;
            z1 = s.b[1] * in - s.a[0] * out + z2;
            z2 = s.b[2] * in - s.a[1] * out;
            v = out;
        }
    }
    return {y.begin(), y.end()};
}

double magnitude_response(const std::vector<Biquad>& sections, double sample_rate, double hz) {
    const cplx zi = std::polar(1.0, -2.0 * std::numbers::pi * hz / sample_rate);
    cplx h{1.0, 0.0};
    for (const auto& s : sections) {
        const cplx num = s.b[0] + s.b[1] * zi + s.b[2] * zi * zi;
        const cplx den = 1.0 + s.a[0] * zi + s.a[1] * zi * zi;
        h *= num / den;
    }
    return std::abs(h);
}

namespace {

double bessel_i0(double x) {
    double sum = 1.0, term = 1.0;
    for (int k = 1; k < 64; ++k) {
        term *= (x / (2.0 * k)) * (x / (2.0 * k));
        sum += term;
        if (term < 1e-17 * sum) break;
    }
    return sum;
}

}  // namespace

std::vector<float> resample(std::span<const float> x, int64_t from_rate, int64_t to_rate) {
    if (from_rate <= 0 || to_rate <= 0) throw DomainError("resample: rates must be positive");
    if (from_rate == to_rate) return {x.begin(), x.end()};
    const int64_t n = static_cast<int64_t>(x.size());
    const int64_t n_out = static_cast<int64_t>(std::llround(static_cast<double>(n) * to_rate / from_rate));

    constexpr double kZeroCrossings = 32.0;
    constexpr double kBeta = 8.6;
    // Cutoff relative to the input Nyquist, slightly inside the narrower band.
    const double cutoff = 0.97 * std::min(1.0, static_cast<double>(to_rate) / static_cast<double>(from_rate));
    const double half_width = kZeroCrossings / cutoff;
    const double i0_beta = bessel_i0(kBeta);

    // Kernel values depend only on the output phase, which repeats every `period` outputs.
    const int64_t g = std::gcd(from_rate, to_rate);
    const int64_t period = to_rate / g;
    const int64_t step_in = from_rate / g;
    const int64_t taps = static_cast<int64_t>(std::ceil(half_width));

    std::vector<std::vector<double>> phase_kernels(static_cast<size_t>(period));
    for (int64_t ph = 0; ph < period; ++ph) {
        const double frac = static_cast<double>(ph * step_in % period) / static_cast<double>(period);
        auto& k = phase_kernels[static_cast<size_t>(ph)];
        k.resize(static_cast<size_t>(2 * taps + 1));
        for (int64_t j = -taps; j <= taps; ++j) {
            const double d = static_cast<double>(j) - frac;  // input index offset minus position
            const double t = d / half_width;
            double w = 0.0;
            if (std::abs(t) <= 1.0) w = bessel_i0(kBeta * std::sqrt(1.0 - t * t)) / i0_beta;
            const double arg = std::numbers::pi * cutoff * d;
            const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
            k[static_cast<size_t>(j + taps)] = cutoff * sinc * w;
        }
    }

    std::vector<float> y(static_cast<size_t>(n_out));
    for (int64_t m = 0; m < n_out; ++m) {
        const int64_t base = m * step_in / period;  // floor of the input position
        const auto& k = phase_kernels[static_cast<size_t>(m % period)];
        double acc = 0.0;
        for (int64_t j = -taps; j <= taps; ++j) {
            const int64_t idx = base + j;
            if (idx < 0 || idx >= n) continue;
            acc += static_cast<double>(x[static_cast<size_t>(idx)]) * k[static_cast<size_t>(j + taps)];
        }
        y[static_cast<size_t>(m)] = static_cast<float>(acc);
    }
    return y;
}

}  // namespace p2mark::dsp

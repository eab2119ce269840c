#pragma once
// ============================================================================
// channel.hpp -- the air between server and sensors
//
// Time is int64 nanoseconds.  Slot boundaries are exact in ns at both rates
// (7,812,500 and 781,250 ns); single BITS are not (1/4096 s = 244140.625 ns),
// so per-bit interval arithmetic (fade overlap) runs in 1/16-ns ticks where
// both bit durations are integers.  Conversions stay exact throughout.
//
//   rate        bit time          32-bit packet      16-bit half packet
//   slow 4096   244140.625 ns     7,812,500 ns       3,906,250 ns
//   fast 40960   24414.0625 ns      781,250 ns         390,625 ns
// ============================================================================

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hfnet/bits.hpp"
#include "hfnet/rng.hpp"

namespace hfnet::chan {

enum class RateMode { slow, fast };

constexpr int64_t kFrameNs = 1'000'000'000;
constexpr int64_t kSlowSlotNs = 7'812'500;    // 32 bits at 4096 b/s
constexpr int64_t kFastSlotNs = 781'250;      // 32 bits at 40960 b/s
constexpr int64_t kHalfSlotSlowNs = 3'906'250;
constexpr int kTicksPerNs = 16;
constexpr int64_t kSlowBitTicks = 3'906'250;  // 244140.625 ns
constexpr int64_t kFastBitTicks = 390'625;    //  24414.0625 ns

inline int64_t slot_ns(RateMode m) { return m == RateMode::slow ? kSlowSlotNs : kFastSlotNs; }
inline int64_t bit_ticks(RateMode m) { return m == RateMode::slow ? kSlowBitTicks : kFastBitTicks; }
inline double rate_bps(RateMode m) { return m == RateMode::slow ? 4096.0 : 40960.0; }

// Air time of an n-bit burst, exact in ns when n is even (16 ticks/ns).
inline int64_t burst_ns(RateMode m, int nbits) { return nbits * bit_ticks(m) / kTicksPerNs; }

// How corrupted receptions are judged.
//  ideal_hd4: every check (packet, half, block, report) detects corruption
//             of weight 1-3 and any odd weight, and misses even weights
//             >= 4 -- the distance-4 guarantee applied verbatim.  Collision
//             garble and fades still go through the real parser.
//  coded:     every judgement consults the real check tables.
enum class DetectionModel { ideal_hd4, coded };

// Accept/reject under ideal_hd4 given the Bernoulli flip weight.
inline bool check_passes_weight(int flip_weight) {
    return flip_weight == 0 || ((flip_weight & 1) == 0 && flip_weight >= 4);
}

struct ChannelParams {
    double ber = 0.01;
    double ber_fast_unsupported = 0.2;  // fast bits into a slow-only channel
    double fade_event_rate_hz = 0.0;    // per-link fade arrivals
    double fade_doppler_hz = 10.0;      // sets fade duration = 1/(2 fD)
    DetectionModel detection = DetectionModel::ideal_hd4;

    int64_t fade_duration_ns() const {
        return int64_t(1e9 / (2.0 * fade_doppler_hz));
    }
};

// ---------------------------------------------------------------------------
// bit corruption
// ---------------------------------------------------------------------------

// Flip each bit independently; returns the number of flips.
inline int corrupt_bits(BitVec& v, double ber, Rng& rng) {
    int flips = 0;
    for (size_t i = 0; i < v.size(); ++i)
        if (rng.bernoulli(ber)) {
            v.flip(i);
            ++flips;
        }
    return flips;
}

// A flip mask of exactly `weight` distinct positions in an n-bit word.
inline uint64_t flip_mask(int nbits, int weight, Rng& rng) {
    uint64_t mask = 0;
    int have = 0;
    while (have < weight) {
        uint64_t bit = uint64_t(1) << rng.below(uint32_t(nbits));
        if (!(mask & bit)) {
            mask |= bit;
            ++have;
        }
    }
    return mask;
}

inline uint64_t uniform_word(int nbits, Rng& rng) {
    return nbits >= 64 ? rng.next() : rng.next() & ((uint64_t(1) << nbits) - 1);
}

// Cached Binomial(n, p) sampler for the per-packet flip-weight draw; the
// hot loops pull millions of these, so the CDF is precomputed once.
class WeightSampler {
public:
    WeightSampler(int n, double p) : n_(n) {
        cdf_.reserve(size_t(n) + 1);
        double q = 1.0 - p;
        double pk = std::pow(q, n);
        double cum = pk;
        cdf_.push_back(cum);
        for (int k = 0; k < n; ++k) {
            pk *= double(n - k) / double(k + 1) * (p / q);
            cum += pk;
            cdf_.push_back(cum);
        }
    }
    int draw(Rng& rng) const {
        double u = rng.uniform();
        int k = 0;
        while (k < n_ && u > cdf_[size_t(k)]) ++k;
        return k;
    }

private:
    int n_;
    std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// fades: per-link event process.  Starts arrive Poisson at the configured
// rate; each event blankets fade_duration_ns during which every overlapped
// bit flips with probability 1/2.  Queries must move forward in time.
// ---------------------------------------------------------------------------

class FadeProcess {
public:
    FadeProcess(double rate_hz, int64_t duration_ns, Rng rng)
        : rate_(rate_hz), dur_(duration_ns), rng_(std::move(rng)) {
        next_ = rate_ > 0.0 ? int64_t(rng_.exponential(rate_) * 1e9) : kNever;
    }

    // Fade sub-intervals overlapping [t0, t1), as offsets into that window.
    std::vector<std::pair<int64_t, int64_t>> overlaps(int64_t t0, int64_t t1) {
        if (t0 < watermark_) throw std::logic_error("fade queries must advance");
        watermark_ = t0;
        std::vector<std::pair<int64_t, int64_t>> out;
        if (rate_ <= 0.0) return out;
        while (next_ < t1) {  // materialize events up to the window's end
            live_.emplace_back(next_, next_ + dur_);
            int64_t gap = int64_t(rng_.exponential(rate_) * 1e9);
            next_ += std::max<int64_t>(gap, 1);
        }
        while (!live_.empty() && live_.front().second <= t0) live_.pop_front();
        for (auto [s, e] : live_)
            if (s < t1 && e > t0)
                out.emplace_back(std::max(s, t0) - t0, std::min(e, t1) - t0);
        return out;
    }

private:
    static constexpr int64_t kNever = INT64_MAX / 2;
    double rate_;
    int64_t dur_;
    Rng rng_;
    int64_t next_ = kNever;
    std::deque<std::pair<int64_t, int64_t>> live_;
    int64_t watermark_ = INT64_MIN / 2;
};

// Apply fade flips to a burst; `fades` are offsets relative to burst start.
inline int apply_fades(BitVec& v, RateMode m,
                       const std::vector<std::pair<int64_t, int64_t>>& fades,
                       Rng& rng) {
    if (fades.empty()) return 0;
    int flips = 0;
    int64_t bt = bit_ticks(m);
    for (auto [f0, f1] : fades) {
        // bit i occupies [i*bt, (i+1)*bt) ticks relative to burst start
        int64_t lo = f0 * kTicksPerNs / bt;
        int64_t hi = (f1 * kTicksPerNs + bt - 1) / bt;
        lo = std::max<int64_t>(lo, 0);
        hi = std::min<int64_t>(hi, int64_t(v.size()));
        for (int64_t i = lo; i < hi; ++i)
            if (rng.bernoulli(0.5)) {
                v.flip(size_t(i));
                ++flips;
            }
    }
    return flips;
}

// ---------------------------------------------------------------------------
// channel rate capability over time
// ---------------------------------------------------------------------------

// Step schedule; entries sorted by time, first at t=0.
class RatePlan {
public:
    RatePlan() : steps_{{0, RateMode::slow}} {}
    explicit RatePlan(std::vector<std::pair<int64_t, RateMode>> steps)
        : steps_(std::move(steps)) {
        if (steps_.empty() || steps_.front().first != 0)
            throw std::invalid_argument("rate plan must start at t=0");
        for (size_t i = 1; i < steps_.size(); ++i)
            if (steps_[i].first <= steps_[i - 1].first)
                throw std::invalid_argument("rate plan times must increase");
    }

    // Alternating exponential dwells, sampled up front so lookups stay pure.
    static RatePlan sampled(double mean_dwell_s, int64_t horizon_ns, RateMode first,
                            Rng rng) {
        std::vector<std::pair<int64_t, RateMode>> steps;
        RateMode m = first;
        int64_t t = 0;
        steps.emplace_back(0, m);
        while (true) {
            t += int64_t(rng.exponential(1.0 / mean_dwell_s) * 1e9);
            if (t >= horizon_ns) break;
            m = m == RateMode::slow ? RateMode::fast : RateMode::slow;
            steps.emplace_back(t, m);
        }
        return RatePlan(std::move(steps));
    }

    RateMode at(int64_t t_ns) const {
        auto it = std::upper_bound(
            steps_.begin(), steps_.end(), t_ns,
            [](int64_t t, const auto& s) { return t < s.first; });
        return std::prev(it)->second;
    }

    int transitions() const { return int(steps_.size()) - 1; }
    const std::vector<std::pair<int64_t, RateMode>>& steps() const { return steps_; }

private:
    std::vector<std::pair<int64_t, RateMode>> steps_;
};

// ---------------------------------------------------------------------------
// propagation state of one server<->sensor link
// ---------------------------------------------------------------------------
//
// Sensors sync their frame origin off the indicator each frame, so a static
// clock offset cancels out of everything.  What is left in the arrival
// offset at the server is twice the distance misestimate plus the clock
// drift accumulated since the sync:
//
//     offset = 2*(tof_true - tof_hat) + drift * (time since indicator)

struct LinkState {
    int64_t tof_ns = 0;            // true one-way flight time
    int64_t tof_hat_ns = 0;        // sensor's current estimate
    double tof_drift_per_s = 0.0;  // true tof change, ns per second
    double clock_drift_per_s = 0.0;  // local oscillator error, s/s

    int64_t tof_true_at(int64_t t_ns) const {
        return tof_ns + int64_t(tof_drift_per_s * (double(t_ns) / 1e9));
    }
    int64_t arrival_offset_ns(int64_t slot_in_frame_ns, int64_t frame_t_ns) const {
        int64_t two_way = 2 * (tof_true_at(frame_t_ns) - tof_hat_ns);
        int64_t drift = int64_t(clock_drift_per_s * double(slot_in_frame_ns));
        return two_way + drift;
    }
};

// An arrival is "off-grid" when it misses its slot by more than a quarter
// slot; the server then measures it and schedules a timing correction.
inline bool impinges(int64_t offset_ns, RateMode m) {
    int64_t mag = offset_ns < 0 ? -offset_ns : offset_ns;
    return 4 * mag > slot_ns(m);
}

// Timing corrections ride a 13-bit control argument: two's-complement
// ticks of 2.5 us, range +-10.24 ms.  Bigger errors converge over rounds.
constexpr int64_t kCalibTickNs = 2500;
constexpr int kCalibArgBits = 13;

inline uint32_t encode_calibration(int64_t correction_ns) {
    int64_t ticks = (correction_ns + (correction_ns >= 0 ? kCalibTickNs / 2
                                                         : -kCalibTickNs / 2)) /
                    kCalibTickNs;
    ticks = std::clamp<int64_t>(ticks, -4096, 4095);
    return uint32_t(ticks) & 0x1fff;
}

inline int64_t decode_calibration(uint32_t arg) {
    int64_t ticks = int64_t(arg & 0x1fff);
    if (ticks >= 4096) ticks -= 8192;  // sign-extend
    return ticks * kCalibTickNs;
}

}  // namespace hfnet::chan

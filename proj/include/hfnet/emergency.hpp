#pragma once
// ============================================================================
// emergency.hpp -- episode lifecycle and scoring
//
// One emergency episode runs
//
//     normal --trigger--> discovery (2 frames) --> collection
//                                                     |  all found reports
//                                                     v  verified
//     normal <--empty poll-- final_poll <-------------+
//                  ^              |
//                  +--new find----+--> collection again
//
// The tracker is the referee: it watches ground truth (which sensors really
// detected) next to what the server observed (which addresses it decoded),
// so it can tell a phantom address from a real reporter and can score the
// deadline from the true first detection, which the server never sees.
//
// The deadline clock runs from first detection to the last report verified,
// including anything a final poll turns up -- a straggler found during the
// poll extends the episode's deadline measurement, not just its close time.
// ============================================================================

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfnet/channel.hpp"

namespace hfnet::sim {

enum class Mode { normal, discovery, collection, final_poll };

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::normal:     return "normal";
        case Mode::discovery:  return "discovery";
        case Mode::collection: return "collection";
        case Mode::final_poll: return "final_poll";
    }
    return "?";
}

constexpr int kDiscoveryFrames = 2;

struct EpisodeRecord {
    int id = 0;
    int64_t first_detection_ns = -1;
    int64_t trigger_ns = -1;       // server first decoded a contention address
    int64_t all_verified_ns = -1;  // last real report verified
    int64_t closed_ns = -1;        // mode returned to normal
    int contenders = 0;            // sensors that truly detected
    int reports_verified = 0;
    int ghosts = 0;                // phantom addresses the server chased
    int64_t attempts = 0;          // urgent packet transmissions, all reporters
    int unit_check_failures = 0;   // urgent units that failed their report check

    bool complete() const { return contenders > 0 && reports_verified == contenders; }

    double recognition_s() const {
        if (trigger_ns < 0) return std::numeric_limits<double>::infinity();
        return double(trigger_ns - first_detection_ns) / 1e9;
    }
    // Detection-to-everything-verified; infinite while incomplete.
    double deadline_s() const {
        if (!complete() || all_verified_ns < 0)
            return std::numeric_limits<double>::infinity();
        return double(all_verified_ns - first_detection_ns) / 1e9;
    }
    bool deadline_met(double limit_s) const { return deadline_s() <= limit_s; }
    double mean_attempts_per_report() const {
        return reports_verified ? double(attempts) / reports_verified : 0.0;
    }
};

// ---------------------------------------------------------------------------
// tracker
// ---------------------------------------------------------------------------

class EpisodeTracker {
public:
    Mode mode() const { return mode_; }
    bool open() const { return open_; }
    int frames_in_mode() const { return frames_in_mode_; }
    const std::vector<EpisodeRecord>& records() const { return records_; }
    std::vector<EpisodeRecord>& records() { return records_; }

    // Ground truth: a sensor's detector fired.  Detections while an episode
    // is open join it (one epicenter at a time; concurrent quakes merge).
    void detection(uint32_t addr, int64_t t_ns) {
        if (!open_) {
            open_ = true;
            cur_ = EpisodeRecord{};
            cur_.id = int(records_.size());
            cur_.first_detection_ns = t_ns;
            detected_.clear();
            found_.clear();
            verified_.clear();
        }
        if (detected_.insert(addr).second) ++cur_.contenders;
    }

    bool truly_detected(uint32_t addr) const { return detected_.count(addr) != 0; }

    // Server observation: a contention half-packet decoded to this address.
    // Returns true when the address is new and real (worth scheduling is the
    // server's call either way; scoring cares whether it was a phantom).
    bool found(uint32_t addr, int64_t t_ns) {
        if (!open_) throw std::logic_error("found() with no open episode");
        if (!found_.insert(addr).second) return false;
        if (mode_ == Mode::normal && cur_.trigger_ns < 0) cur_.trigger_ns = t_ns;
        if (!detected_.count(addr)) {
            ++cur_.ghosts;
            return false;
        }
        return true;
    }

    bool already_found(uint32_t addr) const { return found_.count(addr) != 0; }

    void attempt(int n = 1) {
        if (open_) cur_.attempts += n;
    }

    void unit_check_failure() {
        if (open_) ++cur_.unit_check_failures;
    }

    void verified(uint32_t addr, int64_t t_ns) {
        if (!open_) throw std::logic_error("verified() with no open episode");
        if (!found_.count(addr)) throw std::logic_error("verified an address never found");
        if (!detected_.count(addr)) throw std::logic_error("verified a phantom address");
        if (!verified_.insert(addr).second) return;
        ++cur_.reports_verified;
        cur_.all_verified_ns = std::max(cur_.all_verified_ns, t_ns);
    }

    // Frame-boundary mode step, driven by what the server can observe:
    // did the trigger fire, did this frame's contention find anyone new,
    // and does the server still have unserved urgent work queued.
    Mode advance(int64_t frame_end_ns, bool found_new, bool work_outstanding) {
        Mode next = mode_;
        switch (mode_) {
            case Mode::normal:
                if (cur_.trigger_ns >= 0 && open_) next = Mode::discovery;
                break;
            case Mode::discovery:
                if (frames_in_mode_ + 1 >= kDiscoveryFrames) next = Mode::collection;
                break;
            case Mode::collection:
                if (!work_outstanding && !found_new) next = Mode::final_poll;
                break;
            case Mode::final_poll:
                if (found_new)
                    next = Mode::collection;
                else {
                    next = Mode::normal;
                    close(frame_end_ns);
                }
                break;
        }
        frames_in_mode_ = next == mode_ ? frames_in_mode_ + 1 : 0;
        mode_ = next;
        return mode_;
    }

    // Horizon cleanup: an episode still open when the run ends is recorded
    // as-is; it scores as incomplete unless every reporter was verified.
    void finalize(int64_t t_ns) {
        if (open_) close(t_ns);
    }

private:
    void close(int64_t t_ns) {
        if (!open_) throw std::logic_error("closing with no open episode");
        cur_.closed_ns = t_ns;
        records_.push_back(cur_);
        open_ = false;
    }

    Mode mode_ = Mode::normal;
    int frames_in_mode_ = 0;
    bool open_ = false;
    EpisodeRecord cur_;
    std::set<uint32_t> detected_, found_, verified_;
    std::vector<EpisodeRecord> records_;
};

// ---------------------------------------------------------------------------
// scoring across many episodes
// ---------------------------------------------------------------------------

// Nearest-rank percentile; infinities (incomplete episodes) sort to the end
// and poison the high percentiles, which is exactly what they should do.
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    size_t rank = size_t(std::ceil(p * double(v.size())));
    if (rank == 0) rank = 1;
    if (rank > v.size()) rank = v.size();
    return v[rank - 1];
}

// Wilson 95% interval for a binomial proportion; behaves at p near 1, where
// the normal approximation would poke above 100%.
inline std::pair<double, double> wilson_interval(int64_t successes, int64_t n) {
    if (n == 0) return {0.0, 1.0};
    const double z = 1.959963984540054;
    double phat = double(successes) / double(n);
    double z2 = z * z;
    double denom = 1.0 + z2 / double(n);
    double center = (phat + z2 / (2.0 * double(n))) / denom;
    double half = z * std::sqrt(phat * (1.0 - phat) / double(n) +
                                z2 / (4.0 * double(n) * double(n))) /
                  denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct EpisodeSummary {
    int64_t count = 0;
    int64_t complete = 0;
    int64_t deadline_met = 0;
    double compliance = 0.0;
    double compliance_lo = 0.0, compliance_hi = 1.0;  // Wilson 95%
    double mean_recognition_s = 0.0;
    double mean_attempts_per_report = 0.0;
    double p50_s = 0.0, p99_s = 0.0, p999_s = 0.0;

    static EpisodeSummary from(const std::vector<EpisodeRecord>& recs, double deadline_s) {
        EpisodeSummary s;
        s.count = int64_t(recs.size());
        if (recs.empty()) return s;
        std::vector<double> deadlines;
        deadlines.reserve(recs.size());
        double recog_sum = 0.0;
        int64_t attempts = 0, reports = 0;
        for (const auto& r : recs) {
            if (r.complete()) ++s.complete;
            if (r.deadline_met(deadline_s)) ++s.deadline_met;
            deadlines.push_back(r.deadline_s());
            recog_sum += r.recognition_s();
            attempts += r.attempts;
            reports += r.reports_verified;
        }
        s.compliance = double(s.deadline_met) / double(s.count);
        auto [lo, hi] = wilson_interval(s.deadline_met, s.count);
        s.compliance_lo = lo;
        s.compliance_hi = hi;
        s.mean_recognition_s = recog_sum / double(s.count);
        s.mean_attempts_per_report = reports ? double(attempts) / double(reports) : 0.0;
        s.p50_s = percentile(deadlines, 0.50);
        s.p99_s = percentile(deadlines, 0.99);
        s.p999_s = percentile(deadlines, 0.999);
        return s;
    }
};

}  // namespace hfnet::sim

#pragma once
// Frame-synchronous simulator for the reporting protocol.  Each frame the
// server plans its downlink (rate indicator, schedule halves, ack verdicts,
// control words), every attentive sensor decodes what it can hear and
// transmits its share, and the server adjudicates the bursts that came back.
// There is no event queue: every emission's absolute time is computable at
// plan time, so causality holds by construction and is checked by assertion.
//
// Determinism contract: an identical Scenario yields byte-identical metrics
// JSON.  All iteration is over std::map or sorted vectors, and every random
// decision draws from a counter-keyed stream named by (purpose, frame,
// actor), so no draw depends on container layout, wall time, or threading.
//
// The ARQ discipline is lockstep: the server always re-emits the verdict for
// the last committed window until it observes channel occupancy for the next
// one, and a sensor transmits only in frames where it harvested a verdict
// addressed to it.  Both sides therefore advance their window state on the
// same evidence, and the recovery paths (stalls, resets, releases) are the
// only places the two views are allowed to diverge.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hfnet/bits.hpp"
#include "hfnet/channel.hpp"
#include "hfnet/codec.hpp"
#include "hfnet/emergency.hpp"
#include "hfnet/mac.hpp"
#include "hfnet/rng.hpp"
#include "hfnet/scenario.hpp"

namespace hfnet::sim {

// ---------------------------------------------------------------------------
// random-stream tags
// ---------------------------------------------------------------------------
// Frozen: renumbering any of these silently reshuffles every run.
namespace lane {
constexpr uint64_t kTof = 1;        // sensor flight-time draw
constexpr uint64_t kClock = 2;      // sensor oscillator error
constexpr uint64_t kCapability = 3; // sampled propagation dwell plan
constexpr uint64_t kReport = 4;     // report content (routine and urgent)
constexpr uint64_t kToken = 5;      // control echo tokens
constexpr uint64_t kProbe = 6;      // rate-probe test payloads
constexpr uint64_t kFade = 7;       // per-sensor fade arrival process
constexpr uint64_t kEpisode = 8;    // contender selection / detection spread
constexpr uint64_t kContend = 9;    // contention half-slot picks
constexpr uint64_t kDownlink = 10;  // one stream per (frame, sensor)
constexpr uint64_t kUplink = 11;    // one stream per received burst
constexpr uint64_t kGarble = 12;    // content of destroyed bursts
}  // namespace lane

struct SimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

struct Metrics {
    int64_t frames = 0;
    double horizon_s = 0.0;

    // rate machine
    int64_t fast_frames = 0;
    int64_t rate_transitions = 0, upgrades = 0, downgrades = 0;
    int64_t probes_started = 0, probe_digests_accepted = 0;

    // uplink bursts, by adjudication outcome (sent == sum of the five)
    int64_t sent = 0;
    int64_t accepted_clean = 0, accepted_corrupt = 0;
    int64_t rejected_check = 0, rejected_addr = 0, garbled = 0;
    int64_t ghost_accepts = 0;   // destroyed bursts that still parsed
    int64_t collision_slots = 0, impinged_bursts = 0, stray_bursts = 0;

    // data lane
    int64_t attempts = 0;        // data sends plus repair replies
    double channel_s = 0.0;      // attempts scaled by slot share of a frame
    int64_t holds = 0;           // granted sensor stayed silent for a frame
    int64_t verdict_suppressed = 0;
    int64_t desyncs = 0;         // sensor applied a mask the server never sent
    int64_t grant_timeouts = 0, stalls = 0, evictions_ghost = 0;

    // downlink
    int64_t controls_sent = 0, junk_controls = 0;
    int64_t heartbeats_sent = 0, heartbeat_replies = 0;
    int64_t repairs_requested = 0, repair_words_accepted = 0;
    int64_t duplicate_repair_words = 0;
    int64_t resets_sent = 0, notices_sent = 0;
    int64_t calibrations_sent = 0, timing_polls_sent = 0;

    // contention
    int64_t contention_bursts = 0, contention_found = 0, contention_ghosts = 0;

    // routine reports
    int64_t reports_completed = 0, reports_completed_corrupt = 0;
    int64_t reports_expired = 0, reports_abandoned = 0;
    int64_t blocks_failed = 0, report_checks_failed = 0, refetch_words = 0;
    int64_t routine_attempt_sum = 0;  // over completed reports
    double routine_channel_sum_s = 0.0;
    std::array<int64_t, 11> staleness{};  // delivery latency, 60 s buckets
    double first_completion_s = -1.0, last_completion_s = -1.0;
    int64_t in_flight_end = 0;

    // urgent units
    int64_t urgent_verified = 0, urgent_corrupt = 0, unit_checks_failed = 0;
    int64_t urgent_attempt_sum = 0;  // over verified units

    double goodput_bps = 0.0;
    double deadline_s = 15.0;  // scoring limit the episodes ran under
    std::vector<EpisodeRecord> episode_records;

    void add(const Metrics& o) {
        frames += o.frames;
        fast_frames += o.fast_frames;
        horizon_s += o.horizon_s;
        rate_transitions += o.rate_transitions;
        upgrades += o.upgrades;
        downgrades += o.downgrades;
        probes_started += o.probes_started;
        probe_digests_accepted += o.probe_digests_accepted;
        sent += o.sent;
        accepted_clean += o.accepted_clean;
        accepted_corrupt += o.accepted_corrupt;
        rejected_check += o.rejected_check;
        rejected_addr += o.rejected_addr;
        garbled += o.garbled;
        ghost_accepts += o.ghost_accepts;
        collision_slots += o.collision_slots;
        impinged_bursts += o.impinged_bursts;
        stray_bursts += o.stray_bursts;
        attempts += o.attempts;
        channel_s += o.channel_s;
        holds += o.holds;
        verdict_suppressed += o.verdict_suppressed;
        desyncs += o.desyncs;
        grant_timeouts += o.grant_timeouts;
        stalls += o.stalls;
        evictions_ghost += o.evictions_ghost;
        controls_sent += o.controls_sent;
        junk_controls += o.junk_controls;
        heartbeats_sent += o.heartbeats_sent;
        heartbeat_replies += o.heartbeat_replies;
        repairs_requested += o.repairs_requested;
        repair_words_accepted += o.repair_words_accepted;
        duplicate_repair_words += o.duplicate_repair_words;
        resets_sent += o.resets_sent;
        notices_sent += o.notices_sent;
        calibrations_sent += o.calibrations_sent;
        timing_polls_sent += o.timing_polls_sent;
        contention_bursts += o.contention_bursts;
        contention_found += o.contention_found;
        contention_ghosts += o.contention_ghosts;
        reports_completed += o.reports_completed;
        reports_completed_corrupt += o.reports_completed_corrupt;
        reports_expired += o.reports_expired;
        reports_abandoned += o.reports_abandoned;
        blocks_failed += o.blocks_failed;
        report_checks_failed += o.report_checks_failed;
        refetch_words += o.refetch_words;
        routine_attempt_sum += o.routine_attempt_sum;
        routine_channel_sum_s += o.routine_channel_sum_s;
        for (size_t i = 0; i < staleness.size(); ++i) staleness[i] += o.staleness[i];
        if (o.first_completion_s >= 0 &&
            (first_completion_s < 0 || o.first_completion_s < first_completion_s))
            first_completion_s = o.first_completion_s;
        last_completion_s = std::max(last_completion_s, o.last_completion_s);
        in_flight_end += o.in_flight_end;
        urgent_verified += o.urgent_verified;
        urgent_corrupt += o.urgent_corrupt;
        unit_checks_failed += o.unit_checks_failed;
        urgent_attempt_sum += o.urgent_attempt_sum;
        episode_records.insert(episode_records.end(), o.episode_records.begin(),
                               o.episode_records.end());
        // goodput is recomputed against the merged horizon by the caller
    }

    ordered_json to_json() const {
        ordered_json j;
        j["frames"] = frames;
        j["horizon_s"] = horizon_s;
        j["rate"]["fast_frames"] = fast_frames;
        j["rate"]["transitions"] = rate_transitions;
        j["rate"]["upgrades"] = upgrades;
        j["rate"]["downgrades"] = downgrades;
        j["rate"]["probes_started"] = probes_started;
        j["rate"]["probe_digests_accepted"] = probe_digests_accepted;
        j["bursts"]["sent"] = sent;
        j["bursts"]["accepted_clean"] = accepted_clean;
        j["bursts"]["accepted_corrupt"] = accepted_corrupt;
        j["bursts"]["rejected_check"] = rejected_check;
        j["bursts"]["rejected_addr"] = rejected_addr;
        j["bursts"]["garbled"] = garbled;
        j["bursts"]["ghost_accepts"] = ghost_accepts;
        j["bursts"]["collision_slots"] = collision_slots;
        j["bursts"]["impinged"] = impinged_bursts;
        j["bursts"]["stray"] = stray_bursts;
        j["lane"]["attempts"] = attempts;
        j["lane"]["channel_s"] = channel_s;
        j["lane"]["holds"] = holds;
        j["lane"]["verdict_suppressed"] = verdict_suppressed;
        j["lane"]["desyncs"] = desyncs;
        j["lane"]["grant_timeouts"] = grant_timeouts;
        j["lane"]["stalls"] = stalls;
        j["lane"]["evictions_ghost"] = evictions_ghost;
        j["downlink"]["controls_sent"] = controls_sent;
        j["downlink"]["junk_controls"] = junk_controls;
        j["downlink"]["heartbeats_sent"] = heartbeats_sent;
        j["downlink"]["heartbeat_replies"] = heartbeat_replies;
        j["downlink"]["repairs_requested"] = repairs_requested;
        j["downlink"]["repair_words_accepted"] = repair_words_accepted;
        j["downlink"]["duplicate_repair_words"] = duplicate_repair_words;
        j["downlink"]["resets_sent"] = resets_sent;
        j["downlink"]["notices_sent"] = notices_sent;
        j["downlink"]["calibrations_sent"] = calibrations_sent;
        j["downlink"]["timing_polls_sent"] = timing_polls_sent;
        j["contention"]["bursts"] = contention_bursts;
        j["contention"]["found"] = contention_found;
        j["contention"]["ghosts"] = contention_ghosts;
        j["reports"]["completed"] = reports_completed;
        j["reports"]["completed_corrupt"] = reports_completed_corrupt;
        j["reports"]["expired"] = reports_expired;
        j["reports"]["abandoned"] = reports_abandoned;
        j["reports"]["blocks_failed"] = blocks_failed;
        j["reports"]["report_checks_failed"] = report_checks_failed;
        j["reports"]["refetch_words"] = refetch_words;
        j["reports"]["mean_attempts"] =
            reports_completed ? double(routine_attempt_sum) / double(reports_completed) : 0.0;
        j["reports"]["mean_channel_s"] =
            reports_completed ? routine_channel_sum_s / double(reports_completed) : 0.0;
        j["reports"]["first_completion_s"] = first_completion_s;
        j["reports"]["last_completion_s"] = last_completion_s;
        j["reports"]["in_flight_end"] = in_flight_end;
        j["reports"]["staleness_60s"] = staleness;
        j["urgent"]["verified"] = urgent_verified;
        j["urgent"]["corrupt"] = urgent_corrupt;
        j["urgent"]["unit_check_failures"] = unit_checks_failed;
        j["urgent"]["mean_attempts"] =
            urgent_verified ? double(urgent_attempt_sum) / double(urgent_verified) : 0.0;
        auto es = EpisodeSummary::from(episode_records, deadline_s);
        j["episodes"]["count"] = es.count;
        j["episodes"]["complete"] = es.complete;
        j["episodes"]["deadline_met"] = es.deadline_met;
        j["episodes"]["deadline_s"] = deadline_s;
        j["episodes"]["compliance"] = es.compliance;
        j["episodes"]["compliance_lo"] = es.compliance_lo;
        j["episodes"]["compliance_hi"] = es.compliance_hi;
        j["episodes"]["mean_recognition_s"] = es.mean_recognition_s;
        j["episodes"]["mean_attempts_per_report"] = es.mean_attempts_per_report;
        j["episodes"]["p50_s"] = es.p50_s;
        j["episodes"]["p99_s"] = es.p99_s;
        j["episodes"]["p999_s"] = es.p999_s;
        ordered_json recs = ordered_json::array();
        for (const auto& r : episode_records) {
            ordered_json e;
            e["contenders"] = r.contenders;
            e["verified"] = r.reports_verified;
            e["ghosts"] = r.ghosts;
            e["recognition_s"] = r.recognition_s();
            e["deadline_s"] = r.complete() ? r.deadline_s() : -1.0;
            e["deadline_met"] = r.deadline_met(deadline_s);
            e["attempts_per_report"] = r.mean_attempts_per_report();
            e["unit_check_failures"] = r.unit_check_failures;
            recs.push_back(std::move(e));
        }
        j["episodes"]["records"] = std::move(recs);
        j["goodput_bps"] = goodput_bps;
        return j;
    }
};

namespace detail {

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Knuth's product method; fine for the small means used here.
inline int poisson_draw(double mean, Rng& r) {
    double limit = std::exp(-mean), prod = r.uniform();
    int n = 0;
    while (prod > limit) {
        prod *= r.uniform();
        ++n;
    }
    return n;
}

inline bool bits_equal(const BitVec& a, const BitVec& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a.get(i) != b.get(i)) return false;
    return true;
}

// A secondary drain lane takes sub-slots from the top of a position while
// the primary fills from the bottom.  The split is static so that both ends
// can size their windows without negotiating: the server only names a
// secondary when the primary's window fits under the cap.
constexpr int kPrimaryCap = 16;
constexpr int kSecondaryCap = 8;

// How many consecutive verdict-less frames a granted sensor coasts before
// writing its window off.  Matches the server's stall threshold so both
// sides abandon a dead exchange on the same frame.
constexpr int kHoldLimit = 3;

// ---------------------------------------------------------------------------
// state
// ---------------------------------------------------------------------------

// One outstanding transfer, server side.  Channel state (the in-flight
// window) lives here rather than on the lane so a service can move between
// positions or roles without losing its ARQ progress.
struct SChan {
    std::vector<uint16_t> win;  // word indices awaiting this verdict
    uint16_t mask = 0;          // last adjudication (re-emitted until commit)
    bool live = false;
};

struct Service {
    uint32_t addr = 0;
    bool urgent = false, ghost = false;
    int epoch = 0;
    int64_t born_ns = 0;
    int total = 0;
    std::vector<uint64_t> truth;   // payload words the sensor transmits
    std::vector<uint64_t> stored;  // what the server wrote down
    std::vector<uint64_t> rec;     // stored ^ truth[attributed]: damage record
    std::vector<uint8_t> have, acked;
    int have_n = 0;
    BitVec content;                // report bits / urgent data bits
    std::array<SChan, 10> ch;      // slow uses [0]; fast shards by word class

    bool granted = false, secondary = false;
    int pos = 0;
    bool transmitted = false;      // any occupancy since grant
    int quiet = 0;                 // consecutive expected-but-silent frames
    bool released = false, complete = false, reset_pending = false;
    int flush_left = 0;            // completion verdict re-broadcasts left

    std::vector<uint8_t> block_ok; // 0 unknown, 1 passed, 2 failed (queued)
    int blocks_ok_n = 0;
    std::deque<int> fx_queue;      // blocks awaiting word-by-word refetch
    int fx_block = -1, fx_cursor = 0, fx_round = 0, report_retry = 0;
    bool fx_report = false;        // sweeping all blocks for a report miss
    bool fx_hit = false;           // the requested refetch word arrived
    int scan = 0;                  // first-unstored scan cursor

    int attempts = 0;
    double channel_s = 0.0;
    int64_t completed_ns = -1;
};

// Sensor-side belief about one transfer.  Deliberately separate from the
// Service so the two views can drift and the recovery machinery is honest.
struct BChan {
    std::vector<uint16_t> pending;  // window sent, verdict not yet harvested
    bool live = false;
};

struct Belief {
    bool active = false;
    int total = 0, out = 0;
    std::vector<uint8_t> acked;
    std::array<BChan, 10> ch;

    void start(int n) {
        active = true;
        total = n;
        out = n;
        acked.assign(size_t(n), 0);
        for (auto& c : ch) {
            c.pending.clear();
            c.live = false;
        }
    }
};

struct Sensor {
    uint32_t addr = 0;
    chan::LinkState link;
    bool calibrated = false;
    std::optional<chan::FadeProcess> fade;
    chan::RatePlan cap;

    Belief rb, ub;
    int epoch = -1;

    // lane continuity
    bool held = false, held_sec = false;
    int held_pos = 0;
    int hold_streak = 0;

    // emergency
    bool quake = false, resolved = false;
    int64_t detect_ns = -1;
    bool seen_named = false;
    int unnamed = 0;
    std::vector<uint64_t> uwords;
    BitVec udata;
    int64_t notice_f = -1000;  // last frame an emergency notice was heard

    // probe participation
    int probe_slot = -1;
    int64_t probe_f = -1000;
    std::array<uint16_t, 2> probe_pay{};
    std::array<uint8_t, 2> probe_got{};
};

// ---------------------------------------------------------------------------
// per-frame plan
// ---------------------------------------------------------------------------

struct PChan {
    Service* sv = nullptr;
    uint32_t addr = 0;
    int pos = 1, grp = 0;
    bool secondary = false;
    std::vector<uint16_t> acks;   // committed into `acked` on occupancy
    uint16_t mask = 0;            // verdict emitted this frame
    std::vector<uint16_t> chunk;  // window expected back
    uint16_t newmask = 0;         // adjudication bits gathered during collect
    bool hit = false;
};

struct AckWord {
    bool on = false;
    uint32_t addr = 0;
    uint16_t mask = 0;
    uint64_t wire = 0;
};

struct CtlPlan {
    int slot = 0;               // absolute slot index (slow 1..4, fast 86..105)
    bool carrier = false;       // slow-line carrier inside a fast frame
    int carrier_k = 0;
    uint32_t addr = 0;          // 0 = broadcast
    mac::ControlWord cw{};
    uint64_t wire = 0;
    int64_t start_ns = 0;       // frame-relative
    chan::RateMode line = chan::RateMode::slow;
    int expect = 0;             // 0 none, 1 repair word, 2 hb echo, 3 timing half
    int reply_key = 0;
    int64_t reply_ns = 0;       // frame-relative reply window start
    int req_idx = -1;
    uint16_t token = 0;
};

struct ProbeTest {
    int slot = 0;
    uint32_t addr = 0;
    std::array<uint16_t, 2> pay{};
    std::array<uint64_t, 2> wire{};
};

struct Plan {
    int64_t f = 0, t0 = 0;
    chan::RateMode rate = chan::RateMode::slow;
    Mode mode = Mode::normal;
    uint64_t indicator = 0;
    std::array<uint32_t, 10> half{};
    std::array<uint64_t, 10> half_wire{};
    std::vector<AckWord> ack;
    std::vector<CtlPlan> ctl;
    std::vector<ProbeTest> tests;
    bool window_busy = false;                 // digest returns or timing polls
    std::array<uint32_t, 4> digest_addr{};
    std::array<uint16_t, 4> digest_expect{};
    std::array<uint32_t, 4> timing_addr{};
    std::vector<PChan> chans;
    std::vector<uint32_t> attentive;          // sorted by (tof, addr)
};

enum BurstKind { kBData = 0, kBRepair, kBHb, kBTiming, kBDigest, kBContend };

struct Burst {
    int key = 0;                // 4 * slot index (+2 for the second half-slot)
    int64_t start = 0, dur = 0;
    uint32_t sender = 0;
    chan::RateMode line = chan::RateMode::slow;
    uint64_t wire = 0;
    int nbits = 32;
    int kind = kBData;
    int pc = -1, j = -1;        // data: plan channel row and window index
    int ctl = -1;               // replies: plan control row
    int64_t offset = 0;         // arrival error (for impingement + measurement)
    bool garbled = false;
};

// ---------------------------------------------------------------------------
// engine
// ---------------------------------------------------------------------------

class Engine {
public:
    explicit Engine(const Scenario& sc) : sc_(sc) {
        if (sc_.network_size < 1) throw SimError("network_size must be positive");
        g_ = sc_.packet_geometry();
        bg_ = sc_.block_geometry();
        seed_ = sc_.seed;
        N_ = sc_.network_size;
        frames_ = sc_.frames();
        rate_ = sc_.protocol.initial_rate;
        pending_rate_ = rate_;
        m_.deadline_s = sc_.emergency.deadline_s;

        // Sizing dry run: one report's worth of carrier words.
        {
            BitVec zeros;
            for (size_t i = 0; i < kReportBits / 64; ++i) zeros.append_word(0, 64);
            auto seg = codec::segment_report(zeros, bg_);
            rt_total_ = int(seg.payloads.size());
        }
        urg_total_ = bg_.packets_per_block;

        init_sensors();
        init_episodes();
        bel_cal_.assign(size_t(N_) + 1, sc_.timing.start_calibrated ? 1 : 0);
        fast_ok_.assign(size_t(N_) + 1, 0);
        last_heard_.assign(size_t(N_) + 1, 0);
        last_calib_f_.assign(size_t(N_) + 1, -1000);
        if (sc_.protocol.probe_interval_s > 0)
            probe_next_f_ = int64_t(sc_.protocol.probe_interval_s);
    }

    Metrics run(std::vector<std::string>* trace = nullptr) {
        trace_ = trace;
        for (int64_t f = 0; f < frames_; ++f) {
            plan_frame(f);
            if (P_.rate == chan::RateMode::fast) ++m_.fast_frames;
            for (uint32_t a : P_.attentive) sensor_frame(sensors_[a]);
            collect_frame();
        }
        finalize();
        return m_;
    }

private:
    static constexpr size_t kReportBits = 10240;
    static constexpr size_t kUrgentBits = 500;
    static constexpr uint64_t kMasterKey = 0x6b6e6f636b32ull;  // shared secret

    // ---- configuration ----
    Scenario sc_;
    codec::PacketGeometry g_{};
    codec::BlockGeometry bg_{};
    uint64_t seed_ = 1;
    int N_ = 0;
    int64_t frames_ = 0;
    int rt_total_ = 0, urg_total_ = 0;

    // ---- live state ----
    Metrics m_;
    EpisodeTracker trk_;
    chan::RateMode rate_, pending_rate_;
    int down_streak_ = 0;
    int probe_phase_ = 0;
    int64_t probe_next_f_ = -1;
    std::array<uint32_t, 4> probe_addr_{};
    std::array<std::array<uint16_t, 2>, 4> probe_pay_{};
    size_t probe_rr_ = 1, hb_rr_ = 1, timing_rr_ = 1;

    std::vector<Sensor> sensors_;  // 1-based; [0] unused
    std::map<uint32_t, Service> rsvc_, usvc_;
    std::deque<uint32_t> rq_, uq_;
    std::deque<uint32_t> roster_;  // released services fed by repair requests
    size_t roster_rr_ = 0;

    struct LaneA {
        uint32_t pri = 0;
        bool pri_urgent = false;
        uint32_t sec = 0;
    };
    std::array<LaneA, 5> lanes_{};

    std::vector<uint8_t> bel_cal_, fast_ok_;
    std::vector<int64_t> last_heard_, last_calib_f_;
    std::map<uint32_t, int64_t> calib_q_;  // addr -> correction, ns

    // flattened detection schedule: (t_ns, addr, episode index)
    struct Det {
        int64_t t = 0;
        uint32_t addr = 0;
        int ep = 0;
    };
    std::vector<Det> dets_;
    size_t det_next_ = 0;

    Plan P_;
    std::vector<Burst> bursts_;
    std::map<int, std::pair<int, int>> slot_map_;   // key -> (chan row, j)
    std::map<int, int> reply_map_;                  // key -> ctl row
    std::map<std::pair<int, uint64_t>, chan::WeightSampler> samplers_;
    std::vector<std::string>* trace_ = nullptr;

    // ------------------------------------------------------------------
    // setup
    // ------------------------------------------------------------------

    void init_sensors() {
        sensors_.resize(size_t(N_) + 1);
        for (int a = 1; a <= N_; ++a) {
            Sensor& s = sensors_[size_t(a)];
            s.addr = uint32_t(a);
            Rng tr = Rng::stream(seed_, lane::kTof, uint64_t(a));
            s.link.tof_ns = int64_t(tr.uniform() * sc_.timing.tof_max_ms * 1e6);
            s.link.tof_hat_ns =
                sc_.timing.start_calibrated ? s.link.tof_ns : int64_t(10e6);
            s.calibrated = sc_.timing.start_calibrated;
            if (sc_.timing.tof_drift_ms_per_s != 0.0)
                s.link.tof_drift_per_s =
                    (tr.uniform() * 2 - 1) * sc_.timing.tof_drift_ms_per_s * 1e6;
            if (sc_.timing.clock_drift_ppm != 0.0) {
                Rng cr = Rng::stream(seed_, lane::kClock, uint64_t(a));
                s.link.clock_drift_per_s =
                    (cr.uniform() * 2 - 1) * sc_.timing.clock_drift_ppm * 1e-6;
            }
            switch (sc_.channel.capability) {
                case ChannelCapability::slow:
                    s.cap = chan::RatePlan();
                    break;
                case ChannelCapability::fast:
                    s.cap = chan::RatePlan({{0, chan::RateMode::fast}});
                    break;
                case ChannelCapability::sampled:
                    s.cap = chan::RatePlan::sampled(
                        sc_.channel.sampled_dwell_s, sc_.horizon_ns(),
                        sc_.channel.sampled_first,
                        Rng::stream(seed_, lane::kCapability, uint64_t(a)));
                    break;
            }
            if (sc_.channel.fade_rate_hz > 0) {
                chan::ChannelParams cp;
                cp.fade_doppler_hz = sc_.channel.fade_doppler_hz;
                s.fade.emplace(sc_.channel.fade_rate_hz, cp.fade_duration_ns(),
                               Rng::stream(seed_, lane::kFade, uint64_t(a)));
            }
        }
    }

    void init_episodes() {
        for (size_t e = 0; e < sc_.emergency.episodes.size(); ++e) {
            const EpisodeSpec& ep = sc_.emergency.episodes[e];
            Rng er = Rng::stream(seed_, lane::kEpisode, uint64_t(e));
            int n = ep.contenders ? *ep.contenders : sc_.emergency.contenders;
            if (sc_.emergency.poisson_mean > 0 && !ep.contenders)
                n = std::max(1, poisson_draw(sc_.emergency.poisson_mean, er));
            n = std::min(n, N_);
            std::set<uint32_t> picked;
            while (int(picked.size()) < n)
                picked.insert(er.below(uint32_t(N_)) + 1);
            int64_t base = int64_t(ep.t_s * 1e9);
            int i = 0;
            for (uint32_t a : picked) {
                int64_t t = base;
                if (sc_.emergency.detection_spread_ms > 0)
                    t += int64_t(er.uniform() * sc_.emergency.detection_spread_ms * 1e6);
                if (i == 0 && ep.straggler_delay_s >= 0)
                    t = base + int64_t(ep.straggler_delay_s * 1e9);
                dets_.push_back({t, a, int(e)});
                ++i;
            }
        }
        std::sort(dets_.begin(), dets_.end(), [](const Det& x, const Det& y) {
            return x.t != y.t ? x.t < y.t : x.addr < y.addr;
        });
    }

    // ------------------------------------------------------------------
    // small helpers
    // ------------------------------------------------------------------

    const chan::WeightSampler& sampler(int nbits, double p) {
        auto key = std::make_pair(nbits, std::bit_cast<uint64_t>(p));
        auto it = samplers_.find(key);
        if (it == samplers_.end())
            it = samplers_.try_emplace(key, nbits, p).first;
        return it->second;
    }

    double ber_for(const Sensor& s, chan::RateMode line, int64_t t) const {
        if (line == chan::RateMode::fast && s.cap.at(t) != chan::RateMode::fast)
            return sc_.channel.ber_fast_unsupported;
        return sc_.channel.ber;
    }

    bool fade_hit(Sensor& s, int64_t start, int64_t dur) {
        if (!s.fade) return false;
        return !s.fade->overlaps(start, start + dur).empty();
    }

    int full_bits() const { return g_.address_bits + g_.payload_bits + g_.check_bits; }
    int half_bits() const { return g_.address_bits + g_.check_bits; }

    struct Rx {
        bool ok = false, corrupt = false;
        uint32_t addr = 0;
        uint64_t payload = 0;
    };

    // One word through the channel.  Destroyed content (fades, collisions,
    // impingement) is a fresh uniform word put through the real parser in
    // both detection models: a checksum can be idealized against independent
    // bit flips, but noise that happens to parse is just noise that parses.
    Rx decode_word(uint64_t wire, bool half, double p, Rng& r, bool faded) {
        const int nbits = half ? half_bits() : full_bits();
        Rx out;
        if (faded) {
            uint64_t w = chan::uniform_word(nbits, r);
            if (half) {
                auto a = codec::parse_half_packet(g_, w);
                if (a) {
                    out.ok = true;
                    out.corrupt = true;
                    out.addr = *a;
                }
            } else if (auto pp = codec::parse_packet(g_, w)) {
                out.ok = true;
                out.corrupt = true;
                out.addr = pp->address;
                out.payload = pp->payload;
            }
            return out;
        }
        int w = sampler(nbits, p).draw(r);
        uint64_t mask = w ? chan::flip_mask(nbits, w, r) : 0;
        if (sc_.channel.detection == chan::DetectionModel::ideal_hd4) {
            if (!chan::check_passes_weight(w)) return out;
            uint64_t x = wire ^ mask;
            out.ok = true;
            out.corrupt = w > 0;
            out.addr = uint32_t(x >> (nbits - g_.address_bits));
            if (!half)
                out.payload = (x >> g_.check_bits) &
                              ((uint64_t(1) << g_.payload_bits) - 1);
            return out;
        }
        uint64_t x = wire ^ mask;
        if (half) {
            auto a = codec::parse_half_packet(g_, x);
            if (a) {
                out.ok = true;
                out.corrupt = w > 0;
                out.addr = *a;
            }
        } else if (auto pp = codec::parse_packet(g_, x)) {
            out.ok = true;
            out.corrupt = w > 0;
            out.addr = pp->address;
            out.payload = pp->payload;
        }
        return out;
    }

    Service* find_svc(bool urgent, uint32_t addr) {
        auto& map = urgent ? usvc_ : rsvc_;
        auto it = map.find(addr);
        return it == map.end() ? nullptr : &it->second;
    }

    static int word_class(int idx, chan::RateMode m) {
        return m == chan::RateMode::slow ? 0 : idx % 10;
    }

    // First `cap` unacknowledged indices of a class, skipping a tentative
    // ack overlay.  Shared shape between server plan and sensor harvest.
    static void first_window(const std::vector<uint8_t>& acked, int total, int grp,
                             chan::RateMode m, int cap,
                             const std::vector<uint16_t>* skip,
                             std::vector<uint16_t>& out) {
        out.clear();
        for (int i = 0; i < total && int(out.size()) < cap; ++i) {
            if (acked[size_t(i)]) continue;
            if (m == chan::RateMode::fast && i % 10 != grp) continue;
            if (skip && std::find(skip->begin(), skip->end(), uint16_t(i)) != skip->end())
                continue;
            out.push_back(uint16_t(i));
        }
    }

    // Window index -> data sub-slot.  Primaries pack from the bottom of the
    // position, secondaries from the top; fast frames stripe a position's
    // 160 sub-slots across the ten word classes.
    static int subslot_for(chan::RateMode m, int grp, bool secondary, int j) {
        if (m == chan::RateMode::slow) return secondary ? 15 - j : j;
        return grp + 10 * j;
    }

    // On a requisitioned frame the tail data slots carry digest echoes or
    // timing replies, so a window is trimmed to the words landing in front
    // of them.  Server and sensor apply the same rule, and because the
    // dropped words are always a suffix the survivors keep their window
    // numbering even when one side misreads the requisition flag.
    static void clip_reserved(chan::RateMode m, int pos, int grp, bool secondary,
                              std::vector<uint16_t>& chunk) {
        size_t keep = 0;
        while (keep < chunk.size()) {
            int slot = mac::data_slot(m, pos, subslot_for(m, grp, secondary, int(keep)));
            if (mac::slot_reserved_for_digests(slot)) break;
            ++keep;
        }
        chunk.resize(keep);
    }

    int64_t frame_rate_slot_ns() const { return chan::slot_ns(P_.rate); }

    // ------------------------------------------------------------------
    // routine report lifecycle
    // ------------------------------------------------------------------

    int64_t report_phase_ns(uint32_t addr) const {
        if (!sc_.protocol.report_phase_staggered) return 0;
        return int64_t(3600.0 * 1e9 * double(addr) / double(N_ + 1));
    }

    void make_routine(uint32_t addr, int epoch, int64_t born) {
        Service sv;
        sv.addr = addr;
        sv.epoch = epoch;
        sv.born_ns = born;
        Rng rr = Rng::stream(seed_, lane::kReport, mix64(addr, uint64_t(epoch)));
        BitVec rep;
        for (size_t i = 0; i < kReportBits / 64; ++i) rep.append_word(rr.next(), 64);
        auto seg = codec::segment_report(rep, bg_);
        sv.truth = std::move(seg.payloads);
        sv.total = int(sv.truth.size());
        sv.content = std::move(rep);
        sv.stored.assign(size_t(sv.total), 0);
        sv.rec.assign(size_t(sv.total), 0);
        sv.have.assign(size_t(sv.total), 0);
        sv.acked.assign(size_t(sv.total), 0);
        sv.block_ok.assign(size_t(sv.total / bg_.packets_per_block), 0);
        rsvc_[addr] = std::move(sv);
        rq_.push_back(addr);
        Sensor& s = sensors_[addr];
        s.rb.start(rt_total_);
        s.epoch = epoch;
    }

    void roll_epochs(int64_t t0) {
        for (int a = 1; a <= N_; ++a) {
            int64_t phase = report_phase_ns(uint32_t(a));
            // epoch k starts at phase + k * hour; find any boundary in frame
            int64_t hour = 3600ll * 1000000000ll;
            int64_t k = (t0 - phase + hour - 1) / hour;  // first epoch >= t0
            if (k < 0) k = 0;
            int64_t start = phase + k * hour;
            if (start < t0 || start >= t0 + chan::kFrameNs) continue;
            auto it = rsvc_.find(uint32_t(a));
            if (it != rsvc_.end()) {
                Service& old = it->second;
                if (!old.complete) {
                    ++m_.reports_expired;
                    if (old.granted) ungrant(old);
                    roster_remove(old.addr);
                }
                rsvc_.erase(it);
            }
            purge_queue(rq_, uint32_t(a));
            make_routine(uint32_t(a), int(k), start);
        }
    }

    static void purge_queue(std::deque<uint32_t>& q, uint32_t addr) {
        q.erase(std::remove(q.begin(), q.end(), addr), q.end());
    }

    void roster_remove(uint32_t addr) {
        roster_.erase(std::remove(roster_.begin(), roster_.end(), addr), roster_.end());
    }

    // ------------------------------------------------------------------
    // urgent lifecycle
    // ------------------------------------------------------------------

    void make_urgent_truth(Sensor& s, int ep_idx) {
        Rng ur = Rng::stream(seed_, lane::kReport, mix64(s.addr, uint64_t(ep_idx), 1));
        BitVec data;
        size_t whole = kUrgentBits / 64, restb = kUrgentBits % 64;
        for (size_t i = 0; i < whole; ++i) data.append_word(ur.next(), 64);
        if (restb) data.append_word(ur.next(), int(restb));
        BitVec unit = codec::build_urgent_unit(data, bg_);
        s.uwords = codec::block_payloads(bg_, unit);
        s.udata = std::move(data);
    }

    void inject_detections(int64_t t0) {
        while (det_next_ < dets_.size() && dets_[det_next_].t < t0 + chan::kFrameNs) {
            const Det& d = dets_[det_next_++];
            if (!trk_.open()) {
                // fresh episode: drop leftovers from the previous one, and
                // stand stale contenders down so old units can't pollute it
                for (auto& [a, sv] : usvc_)
                    if (sv.granted) ungrant(sv);
                usvc_.clear();
                uq_.clear();
                for (int a = 1; a <= N_; ++a) {
                    Sensor& z = sensors_[size_t(a)];
                    if (z.quake && !z.resolved) z.resolved = true;
                }
            }
            trk_.detection(d.addr, d.t);
            Sensor& s = sensors_[d.addr];
            s.quake = true;
            s.resolved = false;
            s.detect_ns = d.t;
            s.seen_named = false;
            s.unnamed = 0;
            make_urgent_truth(s, d.ep);
            s.ub.start(urg_total_);
        }
    }

    void make_urgent_service(uint32_t addr, int64_t now, bool ghost) {
        Service sv;
        sv.addr = addr;
        sv.urgent = true;
        sv.ghost = ghost;
        sv.born_ns = now;
        sv.total = urg_total_;
        if (!ghost) {
            Sensor& s = sensors_[addr];
            sv.truth = s.uwords;
            sv.content = s.udata;
        } else {
            sv.truth.assign(size_t(urg_total_), 0);
        }
        sv.stored.assign(size_t(sv.total), 0);
        sv.rec.assign(size_t(sv.total), 0);
        sv.have.assign(size_t(sv.total), 0);
        sv.acked.assign(size_t(sv.total), 0);
        sv.block_ok.assign(1, 0);
        usvc_[addr] = std::move(sv);
        uq_.push_back(addr);
    }

    // ------------------------------------------------------------------
    // grants
    // ------------------------------------------------------------------

    void ungrant(Service& sv) {
        if (!sv.granted) return;
        if (sv.secondary) {
            if (lanes_[size_t(sv.pos - 1)].sec == sv.addr)
                lanes_[size_t(sv.pos - 1)].sec = 0;
        } else if (lanes_[size_t(sv.pos - 1)].pri == sv.addr) {
            lanes_[size_t(sv.pos - 1)].pri = 0;
        }
        sv.granted = false;
        sv.secondary = false;
        sv.quiet = 0;
        // Uncommitted windows evaporate symmetrically: the sensor writes its
        // pending window off after the same number of silent frames, so both
        // sides still agree on the outstanding set.
        for (auto& c : sv.ch) {
            c.win.clear();
            c.live = false;
        }
    }

    void release_service(Service& sv) {
        ungrant(sv);
        if (!sv.released) {
            sv.released = true;
        }
        if (std::find(roster_.begin(), roster_.end(), sv.addr) == roster_.end())
            roster_.push_back(sv.addr);
    }

    void fill_lanes(int64_t t0) {
        const bool emergency = P_.mode != Mode::normal;
        // preempt routine holders when an episode opens
        if (emergency) {
            for (int p = 5; p >= 1; --p) {
                LaneA& L = lanes_[size_t(p - 1)];
                if (L.pri && !L.pri_urgent) {
                    Service* sv = find_svc(false, L.pri);
                    if (sv) {
                        ungrant(*sv);
                        rq_.push_front(sv->addr);
                    }
                    L.pri = 0;
                }
            }
        } else {
            for (auto& L : lanes_) {
                if (L.pri && L.pri_urgent) {  // episode closed with a grant up
                    Service* sv = find_svc(true, L.pri);
                    if (sv) ungrant(*sv);
                    L.pri = 0;
                }
                if (L.sec) {
                    Service* sv = find_svc(true, L.sec);
                    if (sv) ungrant(*sv);
                    L.sec = 0;
                }
            }
        }

        // orphaned secondaries inherit the position
        for (auto& L : lanes_) {
            if (!L.pri && L.sec) {
                Service* sv = find_svc(true, L.sec);
                L.sec = 0;
                if (sv) {
                    sv->secondary = false;
                    L.pri = sv->addr;
                    L.pri_urgent = true;
                }
            }
        }

        // release routine lanes whose residual fits the repair channel
        if (!emergency) {
            for (auto& L : lanes_) {
                if (!L.pri || L.pri_urgent) continue;
                Service* sv = find_svc(false, L.pri);
                if (!sv) {
                    L.pri = 0;
                    continue;
                }
                int resid = sv->total - sv->have_n;
                if (resid <= sc_.protocol.hourly_release_threshold && !rq_.empty()) {
                    release_service(*sv);
                    L.pri = 0;
                }
            }
        }

        // fill empty positions
        for (int p = 1; p <= int(lanes_.size()); ++p) {
            LaneA& L = lanes_[size_t(p - 1)];
            if (L.pri) continue;
            if (emergency) {
                while (!uq_.empty()) {
                    uint32_t a = uq_.front();
                    Service* sv = find_svc(true, a);
                    if (!sv || sv->complete || sv->granted) {
                        uq_.pop_front();
                        continue;
                    }
                    uq_.pop_front();
                    sv->granted = true;
                    sv->secondary = false;
                    sv->pos = p;
                    sv->quiet = 0;
                    sv->transmitted = false;
                    L.pri = a;
                    L.pri_urgent = true;
                    break;
                }
            } else {
                uint32_t got = 0;
                size_t guard = rq_.size();
                while (guard-- && !rq_.empty()) {
                    uint32_t a = rq_.front();
                    Service* sv = find_svc(false, a);
                    if (!sv || sv->complete || sv->granted) {
                        rq_.pop_front();
                        continue;
                    }
                    if (!bel_cal_[a]) {  // not yet calibrated: rotate past
                        rq_.pop_front();
                        rq_.push_back(a);
                        continue;
                    }
                    rq_.pop_front();
                    got = a;
                    break;
                }
                if (!got) {
                    // queue drained: re-grant the oldest released leftover so
                    // the hour's tail finishes on lanes, not just repairs
                    for (uint32_t a : roster_) {
                        Service* sv = find_svc(false, a);
                        if (!sv || sv->complete || sv->granted || !bel_cal_[a]) continue;
                        got = a;
                        break;
                    }
                }
                if (got) {
                    Service* sv = find_svc(false, got);
                    sv->granted = true;
                    sv->secondary = false;
                    sv->pos = p;
                    sv->quiet = 0;
                    sv->transmitted = false;
                    L.pri = got;
                    L.pri_urgent = false;
                }
            }
        }
        (void)t0;
    }

    // ------------------------------------------------------------------
    // planning
    // ------------------------------------------------------------------

    void plan_frame(int64_t f) {
        P_ = Plan{};
        P_.f = f;
        P_.t0 = f * chan::kFrameNs;
        bursts_.clear();
        slot_map_.clear();
        reply_map_.clear();

        // rate transition decided by the previous collect
        if (pending_rate_ != rate_) {
            rate_ = pending_rate_;
            ++m_.rate_transitions;
            if (rate_ == chan::RateMode::fast) ++m_.upgrades;
            else ++m_.downgrades;
            down_streak_ = 0;
            probe_phase_ = 0;
        }
        P_.rate = rate_;

        inject_detections(P_.t0);
        roll_epochs(P_.t0);
        P_.mode = trk_.mode();

        // probe state machine (upgrade probing rides slow, normal frames)
        if (probe_phase_ > 0 &&
            (P_.mode != Mode::normal || rate_ != chan::RateMode::slow))
            probe_phase_ = 0;
        bool tests_frame = false, digest_frame = false;
        if (probe_phase_ == 1) {
            tests_frame = true;
            probe_phase_ = 2;
        } else if (probe_phase_ == 2) {
            digest_frame = true;
            probe_phase_ = 3;
            P_.window_busy = true;
            for (int s = 0; s < 4; ++s) {
                P_.digest_addr[size_t(s)] = probe_addr_[size_t(s)];
                uint64_t d = (uint64_t(probe_pay_[size_t(s)][0]) << 16) |
                             probe_pay_[size_t(s)][1];
                P_.digest_expect[size_t(s)] = codec::crc16_bits(d, 32);
            }
        }

        // Timing polls borrow the digest window on frames with no probe,
        // batched up to four per frame.  Pending calibrations outrank polls
        // for control slots, so don't requisition the window for polls that
        // cannot fly this frame.
        std::array<uint32_t, 4> timing_targets{};
        int n_polls = 0;
        // released reports drain through the repair channel, which competes
        // for the same control slots; leave it one whenever any are waiting
        int ctl_budget = roster_.empty() ? 4 : 3;
        int poll_budget = std::min<int>(
            mac::kTimingPollsPerFrame,
            ctl_budget - std::min<int>(ctl_budget, int(calib_q_.size())));
        if (rate_ == chan::RateMode::slow && P_.mode == Mode::normal &&
            !digest_frame && !tests_frame) {
            for (int step = 0; step < N_ && n_polls < poll_budget; ++step) {
                uint32_t a = uint32_t((timing_rr_ + size_t(step) - 1) % size_t(N_)) + 1;
                if (bel_cal_[a] || last_calib_f_[a] + 2 > f) continue;
                timing_targets[size_t(n_polls++)] = a;
            }
            if (n_polls) {
                timing_rr_ =
                    size_t(timing_targets[size_t(n_polls - 1)] % uint32_t(N_)) + 1;
                P_.window_busy = true;
            }
        }
        P_.timing_addr = timing_targets;
        P_.indicator = mac::indicator_word(rate_, P_.window_busy);

        fill_lanes(P_.t0);
        plan_windows();
        plan_secondaries();
        plan_sched();
        plan_controls(tests_frame, digest_frame, timing_targets);
        if (tests_frame) plan_probe_tests();
        build_attentive();
        index_plan();
    }

    void plan_windows() {
        const chan::RateMode fr = P_.rate;
        const int nack = fr == chan::RateMode::slow ? 15 : 50;
        P_.ack.assign(size_t(nack), AckWord{});

        for (int p = 1; p <= int(lanes_.size()); ++p) {
            LaneA& L = lanes_[size_t(p - 1)];
            if (!L.pri) continue;
            Service* sv = find_svc(L.pri_urgent, L.pri);
            if (!sv) {
                L.pri = 0;
                continue;
            }
            bool drained = plan_service_windows(*sv, p, false);
            if (drained && !sv->complete) {
                // fully acknowledged yet not verified: a checksum failed
                // somewhere and holding the lane open would deadlock it
                if (sv->urgent) {
                    sv->reset_pending = true;
                } else {
                    release_service(*sv);
                    L.pri = 0;
                }
            }
        }
    }

    // Returns true when every shard is fully acknowledged: the grant has
    // nothing left to carry and the caller must not leave it parked.
    bool plan_service_windows(Service& sv, int p, bool secondary) {
        const chan::RateMode fr = P_.rate;
        const int ngrp = fr == chan::RateMode::slow ? 1 : 10;
        const int cap = secondary ? kSecondaryCap : kPrimaryCap;
        bool drained = true;
        for (int gpos = 0; gpos < ngrp; ++gpos) {
            SChan& c = sv.ch[size_t(gpos)];
            std::vector<uint16_t> acks;
            if (c.live)
                for (size_t k = 0; k < c.win.size(); ++k)
                    if (c.mask & (uint16_t(1) << k)) acks.push_back(c.win[k]);
            std::vector<uint16_t> chunk;
            first_window(sv.acked, sv.total, gpos, fr, cap, &acks, chunk);

            if (chunk.empty()) {
                // Nothing further to ask for on this shard.  Commit the
                // outstanding verdict unconditionally (there is no window
                // left whose occupancy could confirm it) and keep re-sending
                // the final mask while granted; the sensor applies it
                // idempotently whenever it finally hears one.
                if (c.live) {
                    for (uint16_t i : acks)
                        if (!sv.acked[i]) sv.acked[i] = 1;
                    c.win.clear();
                    c.live = false;
                }
                if (c.mask) emit_verdict(sv, p, gpos, secondary, c.mask, nullptr);
                continue;
            }
            drained = false;

            // digest/timing frames requisition data slots 97..104; trim the
            // window short of them (a window with nothing left in front is
            // skipped whole: no verdict, no transmission)
            if (P_.window_busy && fr == chan::RateMode::slow) {
                clip_reserved(fr, p, gpos, secondary, chunk);
                if (chunk.empty()) {
                    ++m_.verdict_suppressed;
                    continue;
                }
            }

            PChan row;
            row.sv = &sv;
            row.addr = sv.addr;
            row.pos = p;
            row.grp = gpos;
            row.secondary = secondary;
            row.acks = std::move(acks);
            row.mask = c.live ? c.mask : 0;
            row.chunk = std::move(chunk);
            emit_verdict(sv, p, gpos, secondary, row.mask, &row);
            P_.chans.push_back(std::move(row));
        }
        return drained;
    }

    // Verdict words live in the ack region: slow frames carry three copies
    // per position (copy 3 doubles as the secondary's verdict or a flush
    // word), fast frames one copy per (position, class) column.
    void emit_verdict(Service& sv, int p, int grp, bool secondary, uint16_t mask,
                      PChan* row) {
        (void)row;
        if (P_.rate == chan::RateMode::slow) {
            if (secondary) {
                // the drain lane borrows the third copy word; the primary
                // falls back to two copies while it is occupied
                set_ack_word(10 + (p - 1), sv.addr, mask);
            } else {
                set_ack_word(0 + (p - 1), sv.addr, mask);
                set_ack_word(5 + (p - 1), sv.addr, mask);
                set_ack_word(10 + (p - 1), sv.addr, mask);
            }
        } else {
            set_ack_word((p - 1) * 10 + grp, sv.addr, mask);
        }
    }

    void set_ack_word(int idx, uint32_t addr, uint16_t mask) {
        AckWord& w = P_.ack[size_t(idx)];
        w.on = true;
        w.addr = addr;
        w.mask = mask;
        w.wire = codec::build_packet(g_, addr, mask);
    }

    void plan_secondaries() {
        if (P_.rate != chan::RateMode::slow) return;
        if (P_.mode != Mode::collection && P_.mode != Mode::final_poll) return;
        if (P_.window_busy) return;
        for (int p = 1; p <= int(lanes_.size()); ++p) {
            LaneA& L = lanes_[size_t(p - 1)];
            if (!L.pri || !L.pri_urgent) continue;
            // primary window size on this lane this frame
            int c1 = 0;
            for (const auto& row : P_.chans)
                if (row.pos == p && !row.secondary) c1 = int(row.chunk.size());
            if (L.sec) {
                Service* s2 = find_svc(true, L.sec);
                if (!s2 || s2->complete) {
                    L.sec = 0;
                    continue;
                }
                if (c1 > kSecondaryCap) {  // primary regrew (reset); evict
                    uint32_t a2 = s2->addr;
                    ungrant(*s2);
                    uq_.push_back(a2);
                    continue;
                }
                if (plan_service_windows(*s2, p, true) && !s2->complete)
                    s2->reset_pending = true;
                continue;
            }
            if (c1 > kSecondaryCap) continue;
            for (uint32_t a : uq_) {
                Service* s2 = find_svc(true, a);
                if (!s2 || s2->complete || s2->granted) continue;
                s2->granted = true;
                s2->secondary = true;
                s2->pos = p;
                s2->quiet = 0;
                s2->transmitted = false;
                L.sec = a;
                purge_queue(uq_, a);
                plan_service_windows(*s2, p, true);
                break;
            }
        }
    }

    void plan_sched() {
        for (int p = 1; p <= 5; ++p) {
            const LaneA& L = lanes_[size_t(p - 1)];
            P_.half[size_t(p - 1)] = L.pri;
            // halves 5..9: secondary holder during an episode, otherwise the
            // primary's second copy (urgent primaries are named once only,
            // so a sensor that hears its name there can trust the role)
            uint32_t h2 = 0;
            if (L.sec) h2 = L.sec;
            else if (L.pri && !L.pri_urgent) h2 = L.pri;
            P_.half[size_t(5 + p - 1)] = h2;
        }
        for (int h = 0; h < 10; ++h)
            P_.half_wire[size_t(h)] = codec::build_half_packet(g_, P_.half[size_t(h)]);
    }

    // ------------------------------------------------------------------
    // control planning
    // ------------------------------------------------------------------

    void push_ctl(std::vector<CtlPlan>& out, uint32_t addr, mac::ControlWord cw,
                  int expect, int req_idx, uint16_t token) {
        CtlPlan c;
        c.addr = addr;
        c.cw = cw;
        c.expect = expect;
        c.req_idx = req_idx;
        c.token = token;
        out.push_back(c);
    }

    void plan_controls(bool tests_frame, bool digest_frame,
                       const std::array<uint32_t, 4>& timing_targets) {
        (void)digest_frame;
        if (tests_frame) return;  // the whole control region carries probe tests

        std::vector<CtlPlan> want;

        if (P_.mode != Mode::normal) {
            mac::ControlWord cw{mac::Opcode::emergency_notice, 0};
            push_ctl(want, 0, cw, 0, -1, 0);
        }

        // timing corrections measured last frame; corrections that miss the
        // frame's control budget stay queued rather than vanishing, and one
        // slow slot is kept clear for the repair channel when it has work
        const int cal_budget =
            P_.rate != chan::RateMode::slow              ? 22
            : !roster_.empty() && P_.mode == Mode::normal ? 3
                                                          : 4;
        for (auto it = calib_q_.begin(); it != calib_q_.end();) {
            if (int(want.size()) >= cal_budget) break;
            mac::ControlWord cw{mac::Opcode::tof_calibrate,
                                chan::encode_calibration(it->second)};
            push_ctl(want, it->first, cw, 0, -1, 0);
            it = calib_q_.erase(it);
        }

        // urgent resets: wipe-and-refill beats guessing where a desynced
        // exchange went wrong, and the unit is small
        for (auto& [a, sv] : usvc_) {
            if (!sv.reset_pending || !sv.granted) continue;
            mac::ControlWord cw{mac::Opcode::retransmit_request, 0x1fff};
            push_ctl(want, a, cw, 0, -1, 0);
        }

        // stand-downs: a sensor whose unit is already verified but who
        // missed the final verdicts keeps contending; a directed notice
        // tells it the exchange is closed
        for (auto& [a, sv] : usvc_) {
            if (!sv.complete || sv.flush_left <= 0) continue;
            mac::ControlWord cw{mac::Opcode::emergency_notice, 0};
            push_ctl(want, a, cw, 0, -1, 0);
            --sv.flush_left;
        }

        // the poll argument names the reply slot, so a batch answers spread
        // across the requisitioned window instead of piling onto one slot
        for (int i = 0; i < mac::kTimingPollsPerFrame; ++i) {
            uint32_t a = timing_targets[size_t(i)];
            if (!a) continue;
            mac::ControlWord cw{mac::Opcode::timing_poll, uint32_t(i)};
            push_ctl(want, a, cw, 3, -1, uint16_t(i));
        }

        // repair requests, round-robin over released services; keep cycling
        // while slots remain so a lone straggler can use the whole region
        if (P_.mode == Mode::normal && !roster_.empty()) {
            const int slots_for_ctl = P_.rate == chan::RateMode::slow ? 4 : 22;
            std::map<uint32_t, std::set<int>> asked;
            size_t idle_passes = 0;
            size_t i = roster_rr_ % roster_.size();
            size_t visits = 0;
            while (int(want.size()) < slots_for_ctl &&
                   idle_passes < roster_.size() && visits < 4096) {
                ++visits;
                uint32_t a = roster_[i];
                i = (i + 1) % roster_.size();
                Service* sv = find_svc(false, a);
                int idx = -1;
                if (sv && !sv->complete && !sv->granted) {
                    auto& used = asked[a];
                    if (sv->fx_block >= 0) {
                        int c = sv->fx_block * bg_.packets_per_block + sv->fx_cursor;
                        if (!used.count(c)) idx = c;
                    }
                    if (idx < 0) {
                        while (sv->scan < sv->total && sv->have[size_t(sv->scan)])
                            ++sv->scan;
                        for (int w = sv->scan; w < sv->total; ++w) {
                            if (!sv->have[size_t(w)] && !used.count(w)) {
                                idx = w;
                                break;
                            }
                        }
                    }
                }
                if (idx < 0) {
                    ++idle_passes;
                    continue;
                }
                idle_passes = 0;
                asked[a].insert(idx);
                mac::ControlWord cw{mac::Opcode::retransmit_request, uint32_t(idx)};
                push_ctl(want, a, cw, 1, idx, 0);
            }
            roster_rr_ = roster_.empty() ? 0 : (roster_rr_ + 1) % roster_.size();
        }

        // probe invites
        if (probe_phase_ == 0 && probe_next_f_ >= 0 && P_.f >= probe_next_f_ &&
            P_.mode == Mode::normal && rate_ == chan::RateMode::slow &&
            !P_.window_busy && want.empty()) {
            int got = 0;
            std::array<uint32_t, 4> targets{};
            for (int step = 0; step < N_ && got < 4; ++step) {
                uint32_t a = uint32_t((probe_rr_ + size_t(step) - 1) % size_t(N_)) + 1;
                if (!bel_cal_[a] || is_granted(a)) continue;
                bool dup = false;
                for (int q = 0; q < got; ++q) dup |= targets[size_t(q)] == a;
                if (dup) continue;
                targets[size_t(got++)] = a;
            }
            if (got > 0 && int(want.size()) + got <= 4) {
                probe_rr_ = size_t(targets[size_t(got - 1)] % uint32_t(N_)) + 1;
                for (int s = 0; s < got; ++s) {
                    mac::ControlWord cw{mac::Opcode::rate_probe, uint32_t(s)};
                    push_ctl(want, targets[size_t(s)], cw, 0, -1, 0);
                }
                probe_addr_ = {};
                for (int s = 0; s < got; ++s) probe_addr_[size_t(s)] = targets[size_t(s)];
                Rng pr = Rng::stream(seed_, lane::kProbe, uint64_t(P_.f));
                for (int s = 0; s < 4; ++s)
                    for (int c2 = 0; c2 < 2; ++c2)
                        probe_pay_[size_t(s)][size_t(c2)] = uint16_t(pr.next() & 0xffff);
                probe_phase_ = 1;
                ++m_.probes_started;
                probe_next_f_ = P_.f + std::max<int64_t>(
                                           3, int64_t(sc_.protocol.probe_interval_s));
            }
        }

        // heartbeats: whoever has been silent longest, with whatever is left
        {
            int64_t stale_ns = int64_t(sc_.protocol.staleness_window_s) * 500000000ll;
            const int slots_for_ctl = P_.rate == chan::RateMode::slow ? 4 : 22;
            for (int step = 0; step < N_ && int(want.size()) < slots_for_ctl; ++step) {
                uint32_t a = uint32_t((hb_rr_ + size_t(step) - 1) % size_t(N_)) + 1;
                if (is_granted(a) || !bel_cal_[a]) continue;
                if (P_.t0 - last_heard_[a] <= stale_ns) continue;
                bool dup = false;
                for (const auto& c : want) dup |= c.addr == a;
                if (dup) continue;
                Rng tr = Rng::stream(seed_, lane::kToken, mix64(uint64_t(P_.f), a));
                mac::ControlWord cw{mac::Opcode::health_check, uint32_t(tr.below(8192))};
                push_ctl(want, a, cw, 2, -1, uint16_t(cw.arg));
                hb_rr_ = size_t(a % uint32_t(N_)) + 1;
            }
        }

        // map the wish list onto real slots
        if (P_.rate == chan::RateMode::slow) {
            int idx = 0;
            for (auto& c : want) {
                if (idx >= 4) break;
                c.slot = mac::control_slot(chan::RateMode::slow, idx);
                c.start_ns = c.slot * chan::kSlowSlotNs;
                c.line = chan::RateMode::slow;
                c.reply_ns = mac::reply_start_ns(chan::RateMode::slow, idx);
                c.reply_key = 4 * (108 + idx);
                if (c.cw.op == mac::Opcode::timing_poll) {
                    // timing replies land in the requisitioned window, not
                    // the ordinary reply slot for this control position
                    int rs = mac::timing_poll_reply_slot(int(c.cw.arg & 3));
                    c.reply_ns = rs * chan::kSlowSlotNs;
                    c.reply_key = 4 * rs;
                }
                finish_ctl(c);
                ++idx;
            }
        } else {
            int carrier = 0, fidx = 0;
            for (auto& c : want) {
                bool needs_carrier = c.addr == 0 || !fast_ok_[c.addr];
                if (needs_carrier && carrier < 2) {
                    c.carrier = true;
                    c.carrier_k = carrier;
                    c.slot = -1;
                    c.start_ns = mac::heartbeat_start_ns(chan::RateMode::fast, carrier);
                    c.line = chan::RateMode::slow;
                    c.reply_ns =
                        mac::heartbeat_reply_start_ns(chan::RateMode::fast, carrier);
                    c.reply_key = 4 * (932 + 10 * carrier);
                    finish_ctl(c);
                    ++carrier;
                } else if (!needs_carrier && fidx < 20) {
                    c.slot = mac::control_slot(chan::RateMode::fast, fidx);
                    c.start_ns = c.slot * chan::kFastSlotNs;
                    c.line = chan::RateMode::fast;
                    c.reply_ns = mac::reply_start_ns(chan::RateMode::fast, fidx);
                    c.reply_key = 4 * (982 + fidx);
                    finish_ctl(c);
                    ++fidx;
                }
                // targets that fit neither bucket wait for the next frame
            }
        }
    }

    // A control only counts (and only takes effect server-side) once it has
    // an actual slot; wish-list entries that miss the frame retry later.
    void finish_ctl(CtlPlan& c) {
        uint16_t payload = mac::encode_control(c.cw);
        if (c.addr != 0)
            payload = mac::seal16(mac::sensor_key(kMasterKey, c.addr), payload);
        uint32_t wire_addr = c.addr ? c.addr : g_.broadcast_address();
        c.wire = codec::build_packet(g_, wire_addr, payload);
        P_.ctl.push_back(c);
        ++m_.controls_sent;
        if (c.expect != 0) reply_map_[c.reply_key] = int(P_.ctl.size()) - 1;
        switch (c.cw.op) {
            case mac::Opcode::retransmit_request:
                if (c.cw.arg == 0x1fff) {
                    ++m_.resets_sent;
                    if (Service* sv = find_svc(true, c.addr)) wipe_service(*sv);
                } else {
                    ++m_.repairs_requested;
                }
                break;
            case mac::Opcode::tof_calibrate:
                ++m_.calibrations_sent;
                bel_cal_[c.addr] = 1;
                last_calib_f_[c.addr] = P_.f;
                break;
            case mac::Opcode::health_check:
                ++m_.heartbeats_sent;
                break;
            case mac::Opcode::timing_poll:
                ++m_.timing_polls_sent;
                break;
            case mac::Opcode::emergency_notice:
                if (c.addr == 0) ++m_.notices_sent;
                break;
            default:
                break;
        }
    }

    // Server half of an urgent reset: forget everything and re-collect.
    // Safe to repeat while the reset is still being delivered.
    void wipe_service(Service& sv) {
        std::fill(sv.have.begin(), sv.have.end(), 0);
        std::fill(sv.acked.begin(), sv.acked.end(), 0);
        std::fill(sv.stored.begin(), sv.stored.end(), 0);
        std::fill(sv.rec.begin(), sv.rec.end(), 0);
        std::fill(sv.block_ok.begin(), sv.block_ok.end(), 0);
        sv.blocks_ok_n = 0;
        sv.have_n = 0;
        sv.scan = 0;
        sv.fx_queue.clear();
        sv.fx_block = -1;
        sv.fx_report = false;
        for (auto& c : sv.ch) {
            c.win.clear();
            c.mask = 0;
            c.live = false;
        }
    }

    bool is_granted(uint32_t a) const {
        for (const auto& L : lanes_)
            if (L.pri == a || L.sec == a) return true;
        return false;
    }

    void plan_probe_tests() {
        for (int s = 0; s < 4; ++s) {
            uint32_t a = probe_addr_[size_t(s)];
            if (!a) continue;
            ProbeTest t;
            t.slot = mac::control_slot(chan::RateMode::slow, s);
            t.addr = a;
            t.pay = probe_pay_[size_t(s)];
            for (int c = 0; c < 2; ++c)
                t.wire[size_t(c)] = codec::build_packet(g_, a, t.pay[size_t(c)]);
            P_.tests.push_back(t);
        }
    }

    void build_attentive() {
        std::set<uint32_t> set;
        for (const auto& [a, sv] : rsvc_)
            if (!sv.complete) set.insert(a);
        for (const auto& [a, sv] : usvc_)
            if (!sv.complete || sv.flush_left > 0) set.insert(a);
        for (const auto& c : P_.ctl)
            if (c.addr) set.insert(c.addr);
        for (const auto& t : P_.tests) set.insert(t.addr);
        for (uint32_t a : P_.digest_addr)
            if (a) set.insert(a);
        for (uint32_t a : P_.timing_addr)
            if (a) set.insert(a);
        for (int a = 1; a <= N_; ++a) {
            const Sensor& s = sensors_[size_t(a)];
            if (s.held || (s.quake && !s.resolved) || s.probe_slot >= 0)
                set.insert(uint32_t(a));
        }
        P_.attentive.assign(set.begin(), set.end());
        std::sort(P_.attentive.begin(), P_.attentive.end(),
                  [this](uint32_t x, uint32_t y) {
                      const auto& sx = sensors_[x];
                      const auto& sy = sensors_[y];
                      if (sx.link.tof_ns != sy.link.tof_ns)
                          return sx.link.tof_ns < sy.link.tof_ns;
                      return x < y;
                  });
    }

    void index_plan() {
        for (size_t r = 0; r < P_.chans.size(); ++r) {
            const PChan& row = P_.chans[r];
            for (size_t j = 0; j < row.chunk.size(); ++j) {
                int slot = mac::data_slot(P_.rate, row.pos,
                                          subslot_for(P_.rate, row.grp,
                                                      row.secondary, int(j)));
                slot_map_[4 * slot] = {int(r), int(j)};
            }
        }
    }

    // ------------------------------------------------------------------
    // sensor pass
    // ------------------------------------------------------------------

    static int contention_key(chan::RateMode m, int i) {
        if (m == chan::RateMode::slow) return 4 * (112 + i / 2) + 2 * (i % 2);
        return 4 * (1003 + 5 * i);
    }

    void push_burst(Sensor& s, int key, int64_t start_rel, chan::RateMode line,
                    int nbits, uint64_t wire, int kind, int pc, int j, int ctl) {
        Burst b;
        b.key = key;
        b.offset = s.link.arrival_offset_ns(start_rel, P_.t0);
        b.start = P_.t0 + start_rel + b.offset;
        b.dur = chan::burst_ns(line, nbits);
        b.sender = s.addr;
        b.line = line;
        b.wire = wire;
        b.nbits = nbits;
        b.kind = kind;
        b.pc = pc;
        b.j = j;
        b.ctl = ctl;
        if (b.start < P_.t0 || b.start + b.dur > P_.t0 + chan::kFrameNs)
            throw SimError("burst escapes its frame");
        bursts_.push_back(b);
    }

    void sensor_frame(Sensor& s) {
        const int64_t t0 = P_.t0;
        const chan::RateMode fr = P_.rate;
        Rng dl = Rng::stream(seed_, lane::kDownlink, mix64(uint64_t(P_.f), s.addr));
        const uint64_t key = mac::sensor_key(kMasterKey, s.addr);
        const bool has_urgent = s.quake && !s.resolved;

        // ---- rate indicator: repetition-coded, nearest-pattern decoded ----
        mac::IndicatorRead heard;
        {
            int64_t dur = chan::burst_ns(chan::RateMode::slow, 32);
            bool faded = fade_hit(s, t0, dur);
            uint64_t w = P_.indicator;
            if (faded) {
                w = chan::uniform_word(32, dl);
            } else {
                int fl = sampler(32, ber_for(s, chan::RateMode::slow, t0)).draw(dl);
                if (fl) w ^= chan::flip_mask(32, fl, dl);
            }
            heard = mac::decode_indicator(w);
        }
        if (heard.rate != fr) return;  // wrong line discipline: deaf all frame

        // ---- control region (time-ordered with everything below) ----
        struct Act {
            mac::ControlWord cw;
            int row;
        };
        std::vector<Act> acts;
        if (!P_.tests.empty()) {
            for (const auto& t : P_.tests) {
                if (t.addr != s.addr) continue;
                for (int c = 0; c < 2; ++c) {
                    int64_t st = t.slot * chan::kSlowSlotNs +
                                 c * chan::burst_ns(chan::RateMode::fast, full_bits());
                    bool faded = fade_hit(s, t0 + st,
                                          chan::burst_ns(chan::RateMode::fast, full_bits()));
                    Rx r = decode_word(t.wire[size_t(c)], false,
                                       ber_for(s, chan::RateMode::fast, t0 + st), dl, faded);
                    if (r.ok && r.addr == s.addr) {
                        s.probe_pay[size_t(c)] = uint16_t(r.payload);
                        s.probe_got[size_t(c)] = 1;
                    }
                }
            }
        }
        for (size_t ci = 0; ci < P_.ctl.size(); ++ci) {
            const CtlPlan& c = P_.ctl[ci];
            bool faded = fade_hit(s, t0 + c.start_ns, chan::burst_ns(c.line, full_bits()));
            Rx r = decode_word(c.wire, false, ber_for(s, c.line, t0 + c.start_ns), dl, faded);
            if (!r.ok) continue;
            if (r.addr == s.addr) {
                uint16_t w = mac::unseal16(key, uint16_t(r.payload));
                acts.push_back({mac::decode_control(w), int(ci)});
            } else if (r.addr == g_.broadcast_address()) {
                mac::ControlWord cw = mac::decode_control(uint16_t(r.payload));
                if (cw.op == mac::Opcode::emergency_notice) s.notice_f = P_.f;
            }
        }

        // ---- schedule halves ----
        int named_pos = 0;        // halves 0..4 (primary role)
        int named_pos2 = 0;       // halves 5..9 (secondary / primary copy 2)
        bool other_named = false;
        for (int h = 0; h < 10; ++h) {
            int64_t st = mac::sched_half_start_ns(fr, h);
            bool faded = fade_hit(s, t0 + st, chan::burst_ns(fr, half_bits()));
            Rx r = decode_word(P_.half_wire[size_t(h)], true, ber_for(s, fr, t0 + st),
                               dl, faded);
            if (!r.ok) continue;
            int p = mac::sched_position_of(h);
            if (r.addr == s.addr) {
                if (h < 5) named_pos = p;
                else named_pos2 = p;
            } else if (s.held && p == s.held_pos) {
                if (!s.held_sec && h < 5) other_named = true;
                if (s.held_sec && h >= 5) other_named = true;
            }
        }

        // role resolution: a sensor with an urgent unit pending reads halves
        // 5..9 as a drain-lane assignment; everyone else reads them as the
        // primary schedule's second copy
        bool named = false, role_sec = false;
        int pos = 0;
        if (named_pos) {
            named = true;
            pos = named_pos;
        } else if (named_pos2) {
            named = true;
            pos = named_pos2;
            role_sec = has_urgent;
        }
        // an emergency freezes routine lanes; ignore stale routine naming
        bool emergency_sticky = P_.f - s.notice_f <= 3 || P_.mode != Mode::normal;
        if (named && !has_urgent && emergency_sticky) named = false;

        // ---- ack region ----
        Belief& bel = has_urgent ? s.ub : s.rb;
        const int nack = fr == chan::RateMode::slow ? 15 : 50;
        bool listen_acks = named || s.held || has_urgent ||
                           (bel.active && bel.out > 0 &&
                            std::any_of(bel.ch.begin(), bel.ch.end(),
                                        [](const BChan& c) { return c.live; }));
        std::array<int, 10> got_mask;
        got_mask.fill(-1);  // -1 none, -2 conflict, else mask
        bool own_ack = false;
        if (listen_acks) {
            const int base = fr == chan::RateMode::slow ? 10 : 36;
            for (int i = 0; i < nack; ++i) {
                const AckWord& w = P_.ack[size_t(i)];
                if (!w.on) continue;
                int64_t st = (base + i) * frame_rate_slot_ns();
                bool faded = fade_hit(s, t0 + st, chan::burst_ns(fr, full_bits()));
                Rx r = decode_word(w.wire, false, ber_for(s, fr, t0 + st), dl, faded);
                if (!r.ok || r.addr != s.addr) continue;
                int grp = fr == chan::RateMode::slow ? 0 : i % 10;
                int wpos = fr == chan::RateMode::slow ? i % 5 + 1 : i / 10 + 1;
                // verdicts for this sensor only ever ride its own position's
                // words; an apparent verdict anywhere else is a decode
                // artifact and trusting it would corrupt the window state
                if (wpos != (named ? pos : s.held_pos)) continue;
                int mask = int(uint16_t(r.payload));
                if (got_mask[size_t(grp)] == -1) got_mask[size_t(grp)] = mask;
                else if (got_mask[size_t(grp)] != mask) got_mask[size_t(grp)] = -2;
                own_ack = true;
            }
        }

        // ---- claim ----
        mac::ClaimInputs in;
        in.sched_names_me = named;
        in.sched_names_other = other_named;
        in.held_last_frame = s.held;
        in.pending_nonempty = bel.active && bel.out > 0;
        in.own_ack_decoded = own_ack;
        bool claimed = mac::claim_position(in) && !(emergency_sticky && !has_urgent);
        if (claimed) {
            if (named) {
                s.held_pos = pos;
                s.held_sec = role_sec;
            }
            s.held = true;
            s.hold_streak = 0;
        } else {
            if (s.held) {
                ++s.hold_streak;
                if (other_named || s.hold_streak >= kHoldLimit) {
                    for (auto& c : bel.ch) {
                        c.pending.clear();
                        c.live = false;
                    }
                    s.held = false;
                    s.hold_streak = 0;
                } else {
                    ++m_.holds;
                }
            }
        }

        // ---- execute controls (their airtime precedes every uplink slot) ----
        struct Reply {
            int64_t start_rel;
            int key;
            chan::RateMode line;
            uint64_t wire;
            int nbits;
            int kind;
            int ctl;
        };
        std::vector<Reply> replies;
        for (const Act& a : acts) {
            const CtlPlan& row = P_.ctl[size_t(a.row)];
            if (row.addr != s.addr) ++m_.junk_controls;
            switch (a.cw.op) {
                case mac::Opcode::retransmit_request: {
                    if (a.cw.arg == 0x1fff) {
                        if (s.quake) {
                            s.ub.start(urg_total_);
                            s.resolved = false;
                        }
                        break;
                    }
                    int idx = int(a.cw.arg);
                    Service* sv = find_svc(false, s.addr);
                    if (!sv || idx >= sv->total) break;
                    replies.push_back({row.reply_ns, row.reply_key, row.line,
                                       codec::build_packet(g_, s.addr,
                                                           sv->truth[size_t(idx)]),
                                       full_bits(), kBRepair, a.row});
                    break;
                }
                case mac::Opcode::tof_calibrate:
                    s.link.tof_hat_ns += chan::decode_calibration(a.cw.arg);
                    s.calibrated = true;
                    break;
                case mac::Opcode::health_check:
                    replies.push_back({row.reply_ns, row.reply_key, row.line,
                                       codec::build_packet(
                                           g_, s.addr,
                                           mac::seal16(key, uint16_t(a.cw.arg))),
                                       full_bits(), kBHb, a.row});
                    break;
                case mac::Opcode::rate_probe:
                    s.probe_slot = int(a.cw.arg & 3);
                    s.probe_f = P_.f;
                    s.probe_got = {0, 0};
                    break;
                case mac::Opcode::timing_poll: {
                    int rs = mac::timing_poll_reply_slot(int(a.cw.arg & 3));
                    replies.push_back({rs * chan::kSlowSlotNs, 4 * rs,
                                       chan::RateMode::slow,
                                       codec::build_half_packet(g_, s.addr),
                                       half_bits(), kBTiming, a.row});
                    break;
                }
                case mac::Opcode::emergency_notice:
                    // directed form: this unit is verified, stop contending
                    if (s.quake) s.resolved = true;
                    break;
                case mac::Opcode::software_update:
                    break;
            }
        }

        // ---- harvest verdicts, advance windows, transmit ----
        if (claimed) {
            const int ngrp = fr == chan::RateMode::slow ? 1 : 10;
            const int cap = s.held_sec ? kSecondaryCap : kPrimaryCap;
            for (int gpos = 0; gpos < ngrp; ++gpos) {
                BChan& c = bel.ch[size_t(gpos)];
                int mg = got_mask[size_t(gpos)];
                if (mg == -2) {  // copies disagreed: safest is silence
                    ++m_.holds;
                    continue;
                }
                if (mg < 0) {
                    if (c.live) ++m_.holds;
                    continue;
                }
                // a verdict can only cover words we actually offered; bits
                // past the window length mark a fabricated mask
                if (c.live && c.pending.size() < 16 &&
                    (uint32_t(mg) >> c.pending.size()) != 0) {
                    ++m_.holds;
                    continue;
                }
                // referee: did we harvest what the plan actually said?
                {
                    bool matched = false, present = false;
                    for (const auto& row : P_.chans) {
                        if (row.addr != s.addr || row.grp != gpos) continue;
                        present = true;
                        matched = row.mask == uint16_t(mg);
                    }
                    // flush words carry masks with no plan row; only a live
                    // mismatch against an emitted verdict is a desync
                    if (present && !matched) ++m_.desyncs;
                }
                uint16_t mask = uint16_t(mg);
                for (size_t k2 = 0; k2 < c.pending.size(); ++k2) {
                    if (!(mask & (uint16_t(1) << k2))) continue;
                    uint16_t idx = c.pending[k2];
                    if (!bel.acked[idx]) {
                        bel.acked[idx] = 1;
                        --bel.out;
                    }
                }
                std::vector<uint16_t> chunk;
                first_window(bel.acked, bel.total, gpos, fr, cap, nullptr, chunk);
                if (heard.reserved && fr == chan::RateMode::slow)
                    clip_reserved(fr, s.held_pos, gpos, s.held_sec, chunk);
                c.pending = chunk;
                c.live = !chunk.empty();
                // transmit the new window
                const std::vector<uint64_t>* words = nullptr;
                if (has_urgent) {
                    words = &s.uwords;
                } else {
                    Service* sv = find_svc(false, s.addr);
                    if (sv) words = &sv->truth;
                }
                if (!words) continue;
                for (size_t j = 0; j < chunk.size(); ++j) {
                    int slot = mac::data_slot(
                        fr, s.held_pos, subslot_for(fr, gpos, s.held_sec, int(j)));
                    push_burst(s, 4 * slot, slot * frame_rate_slot_ns(), fr,
                               full_bits(),
                               codec::build_packet(g_, s.addr,
                                                   (*words)[chunk[j]]),
                               kBData, -1, int(j), -1);
                }
            }
        }

        // ---- contention ----
        if (has_urgent) {
            if (named) {
                s.seen_named = true;
                s.unnamed = 0;
            } else if (s.seen_named) {
                if (++s.unnamed >= 3) {
                    s.seen_named = false;
                    s.unnamed = 0;
                }
            }
            if (!s.seen_named) {
                Rng cr = Rng::stream(seed_, lane::kContend,
                                     mix64(uint64_t(P_.f), s.addr));
                int half = int(cr.below(uint32_t(mac::kContentionHalfSlots)));
                int64_t st = mac::contention_half_start_ns(fr, half);
                int64_t phys = t0 + st + s.link.arrival_offset_ns(st, t0);
                if (s.detect_ns <= phys) {
                    push_burst(s, contention_key(fr, half), st, chan::RateMode::slow,
                               half_bits(), codec::build_half_packet(g_, s.addr),
                               kBContend, -1, -1, -1);
                    ++m_.contention_bursts;
                }
            }
        }

        // ---- queued replies ----
        for (const Reply& r : replies)
            push_burst(s, r.key, r.start_rel, r.line, r.nbits, r.wire, r.kind, -1, -1,
                       r.ctl);

        // ---- probe digest returns ----
        if (s.probe_slot >= 0) {
            if (P_.f == s.probe_f + 2) {
                uint64_t d = 0;
                int nb = 0;
                for (int c = 0; c < 2; ++c) {
                    if (!s.probe_got[size_t(c)]) continue;
                    d = (d << 16) | s.probe_pay[size_t(c)];
                    nb += 16;
                }
                uint16_t digest = codec::crc16_bits(d, nb);
                auto slots = mac::digest_return_slots(s.probe_slot);
                for (int c = 0; c < 2; ++c) {
                    int64_t st = slots[size_t(c)] * chan::kSlowSlotNs;
                    push_burst(s, 4 * slots[size_t(c)], st, chan::RateMode::fast,
                               full_bits(), codec::build_packet(g_, s.addr, digest),
                               kBDigest, -1, -1, -1);
                }
                s.probe_slot = -1;
            } else if (P_.f > s.probe_f + 2) {
                s.probe_slot = -1;
            }
        }

        if (has_urgent && s.ub.out == 0) s.resolved = true;
    }

    // ------------------------------------------------------------------
    // collect
    // ------------------------------------------------------------------

    void collect_frame() {
        const int64_t t0 = P_.t0;

        // canonical processing order: airtime, then sender
        std::sort(bursts_.begin(), bursts_.end(), [](const Burst& a, const Burst& b) {
            if (a.key != b.key) return a.key < b.key;
            return a.sender < b.sender;
        });

        // fades (queried in time order per sensor: global key order suffices)
        for (Burst& b : bursts_) {
            Sensor& s = sensors_[b.sender];
            if (fade_hit(s, b.start, b.dur)) b.garbled = true;
        }

        // collisions
        for (size_t i = 0; i < bursts_.size();) {
            size_t j = i;
            while (j < bursts_.size() && bursts_[j].key == bursts_[i].key) ++j;
            if (j - i > 1) {
                ++m_.collision_slots;
                for (size_t k = i; k < j; ++k) bursts_[k].garbled = true;
            }
            i = j;
        }

        // impingement: an off-grid arrival destroys itself and smears its
        // neighbors; the calibration window is exempt (it is padded wide
        // precisely so that uncalibrated replies fit)
        for (size_t i = 0; i < bursts_.size(); ++i) {
            Burst& b = bursts_[i];
            if (b.kind == kBTiming) continue;
            if (!chan::impinges(b.offset, b.line)) continue;
            ++m_.impinged_bursts;
            b.garbled = true;
            for (size_t k = 0; k < bursts_.size(); ++k) {
                if (k == i || bursts_[k].kind == kBTiming) continue;
                if (std::abs(bursts_[k].key - b.key) <= 4) bursts_[k].garbled = true;
            }
        }

        std::set<Service*> touched;
        std::map<Service*, std::set<int>> touched_blocks;
        bool found_new = false;
        bool accepted_fast_data = false;
        int fastdata_seen = 0, fastdata_bad = 0;
        std::map<uint32_t, int64_t> worst_offset;

        for (Burst& b : bursts_) {
            ++m_.sent;
            Sensor& snd = sensors_[b.sender];
            double p = ber_for(snd, b.line, b.start);
            Rng ar = Rng::stream(seed_, lane::kUplink,
                                 mix64(uint64_t(P_.f), uint64_t(b.key), b.sender));
            Rx r;
            if (b.garbled) {
                Rng gr = Rng::stream(seed_, lane::kGarble,
                                     mix64(uint64_t(P_.f), uint64_t(b.key), b.sender));
                r = decode_word(0, b.nbits == half_bits(), p, gr, /*faded=*/true);
                ++m_.garbled;
                if (r.ok) ++m_.ghost_accepts;
            }

            const bool is_data = b.kind == kBData;
            if (is_data || b.kind == kBRepair) {
                ++m_.attempts;
                double share =
                    1.0 / (b.line == chan::RateMode::slow ? mac::kDataSlotsSlow
                                                          : mac::kDataSlotsFast);
                m_.channel_s += share;
                // attribution is by slot, never by sender
                Service* sv = nullptr;
                int widx = -1;
                PChan* row = nullptr;
                if (is_data) {
                    auto it = slot_map_.find(b.key);
                    if (it != slot_map_.end()) {
                        row = &P_.chans[size_t(it->second.first)];
                        row->hit = true;  // occupancy: garbled bursts count
                        sv = row->sv;
                        widx = row->chunk[size_t(it->second.second)];
                    }
                } else {
                    auto it = reply_map_.find(b.key);
                    if (it != reply_map_.end()) {
                        const CtlPlan& c = P_.ctl[size_t(it->second)];
                        sv = find_svc(false, c.addr);
                        widx = c.req_idx;
                    }
                }
                if (!sv || widx < 0) {
                    if (!b.garbled) {
                        r = decode_word(b.wire, false, p, ar, false);
                        classify_plain(r);
                    }
                    ++m_.stray_bursts;
                    continue;
                }
                // An off-grid arrival is measurable even when nothing in it
                // decodes: the plan names the slot's owner, so the timing
                // error still reaches the calibration loop.  Without this a
                // sensor granted a lane on a stale calibration belief would
                // smear its neighbours forever.
                {
                    int64_t mag = b.offset < 0 ? -b.offset : b.offset;
                    worst_offset[sv->addr] = std::max(worst_offset[sv->addr], mag);
                }
                sv->attempts += 1;
                sv->channel_s += share;
                if (sv->urgent) trk_.attempt(1);
                if (is_data && b.line == chan::RateMode::fast) ++fastdata_seen;
                if (!b.garbled) r = decode_word(b.wire, false, p, ar, false);
                if (!r.ok) {
                    if (!b.garbled) ++m_.rejected_check;
                    if (is_data && b.line == chan::RateMode::fast) ++fastdata_bad;
                    continue;
                }
                if (r.addr != sv->addr) {
                    if (!b.garbled) ++m_.rejected_addr;
                    if (is_data && b.line == chan::RateMode::fast) ++fastdata_bad;
                    continue;
                }
                // accepted and attributed
                if (b.line == chan::RateMode::fast) {
                    fast_ok_[r.addr] = 1;
                    if (is_data) accepted_fast_data = true;
                }
                last_heard_[r.addr] = b.start;
                bool dup = sv->have[size_t(widx)] != 0;
                if (dup && b.kind == kBRepair &&
                    !(sv->fx_block >= 0 &&
                      widx == sv->fx_block * bg_.packets_per_block + sv->fx_cursor))
                    ++m_.duplicate_repair_words;
                if (b.kind == kBRepair) {
                    ++m_.repair_words_accepted;
                    if (sv->fx_block >= 0 &&
                        widx == sv->fx_block * bg_.packets_per_block + sv->fx_cursor)
                        sv->fx_hit = true;
                }
                store_word(*sv, widx, r.payload, touched, touched_blocks);
                if (!b.garbled) {
                    if (sv->rec[size_t(widx)] == 0) ++m_.accepted_clean;
                    else ++m_.accepted_corrupt;
                }
                if (is_data && row) {
                    auto it = slot_map_.find(b.key);
                    row->newmask |= uint16_t(1) << it->second.second;
                }
                continue;
            }

            if (b.kind == kBContend) {
                if (!b.garbled) {
                    r = decode_word(b.wire, true, p, ar, false);
                    classify_plain(r);
                }
                if (!r.ok) continue;
                uint32_t a = r.addr;
                if (a == 0 || a > uint32_t(N_)) continue;
                int64_t now = t0 + chan::kFrameNs;
                if (trk_.open()) {
                    bool isnew = !trk_.already_found(a);
                    bool real = trk_.found(a, now);
                    last_heard_[a] = b.start;  // heard a claim for this address either way
                    if (real) {
                        ++m_.contention_found;
                        found_new = true;
                        make_urgent_service(a, now, false);
                    } else if (isnew) {
                        ++m_.contention_ghosts;
                        found_new = true;
                        make_urgent_service(a, now, true);
                    } else {
                        Service* sv = find_svc(true, a);
                        if (sv && sv->complete)
                            sv->flush_left = std::max(sv->flush_left, 1);
                    }
                } else {
                    Service* sv = find_svc(true, a);
                    if (sv && sv->complete)
                        sv->flush_left = std::max(sv->flush_left, 1);
                }
                continue;
            }

            if (b.kind == kBHb || b.kind == kBTiming) {
                const CtlPlan& c = P_.ctl[size_t(b.ctl)];
                bool half = b.kind == kBTiming;
                if (!b.garbled) r = decode_word(b.wire, half, p, ar, false);
                if (!r.ok) {
                    if (!b.garbled) ++m_.rejected_check;
                    continue;
                }
                if (r.addr != c.addr) {
                    if (!b.garbled) ++m_.rejected_addr;
                    continue;
                }
                if (!b.garbled) {
                    if (r.corrupt) ++m_.accepted_corrupt;
                    else ++m_.accepted_clean;
                }
                last_heard_[c.addr] = b.start;
                if (b.kind == kBHb) {
                    uint16_t expect =
                        mac::seal16(mac::sensor_key(kMasterKey, c.addr), c.token);
                    if (uint16_t(r.payload) == expect) ++m_.heartbeat_replies;
                } else {
                    // measured arrival error drives the correction; half of
                    // the two-way error moves the estimate onto the grid
                    calib_q_[c.addr] = b.offset / 2;
                }
                continue;
            }

            if (b.kind == kBDigest) {
                if (!b.garbled) {
                    r = decode_word(b.wire, false, p, ar, false);
                    classify_plain(r);
                }
                if (!r.ok) continue;
                int slot = b.key / 4;
                int sdx = (slot - 97) / 2;
                if (sdx < 0 || sdx > 3) continue;
                if (r.addr != P_.digest_addr[size_t(sdx)]) continue;
                ++m_.probe_digests_accepted;
                digest_valid_[size_t(sdx)] = true;
                if (uint16_t(r.payload) == P_.digest_expect[size_t(sdx)])
                    digest_match_[size_t(sdx)] = true;
                last_heard_[r.addr] = b.start;
                continue;
            }
        }

        // ---- occupancy: commit or roll back each planned window ----
        std::map<Service*, bool> svc_hit, svc_expected;
        for (PChan& row : P_.chans) {
            svc_expected[row.sv] = true;
            if (row.hit) svc_hit[row.sv] = true;
            if (!row.hit) continue;  // silence: re-emit the same verdict next frame
            Service& sv = *row.sv;
            sv.transmitted = true;
            sv.reset_pending = false;
            for (uint16_t i : row.acks)
                if (!sv.acked[i]) sv.acked[i] = 1;
            SChan& c = sv.ch[size_t(row.grp)];
            c.win = row.chunk;
            c.mask = row.newmask;
            c.live = true;
        }

        // ---- lane timers ----
        for (auto& L : lanes_) {
            for (int which = 0; which < 2; ++which) {
                uint32_t a = which == 0 ? L.pri : L.sec;
                if (!a) continue;
                Service* sv = find_svc(which == 0 ? L.pri_urgent : true, a);
                if (!sv) continue;
                if (!svc_expected.count(sv)) continue;  // suppressed frame
                if (svc_hit.count(sv)) {
                    sv->quiet = 0;
                    continue;
                }
                ++sv->quiet;
                if (!sv->transmitted) {
                    int limit = sv->urgent ? 3 : 2;
                    if (sv->quiet >= limit) {
                        ++m_.grant_timeouts;
                        bool ghost = sv->ghost;
                        uint32_t addr = sv->addr;
                        bool urg = sv->urgent;
                        ungrant(*sv);
                        if (ghost) {
                            ++m_.evictions_ghost;
                            usvc_.erase(addr);
                        } else if (urg) {
                            uq_.push_back(addr);
                        } else {
                            rq_.push_back(addr);
                        }
                    }
                } else {
                    int limit = sv->secondary ? 4 : 3;
                    if (sv->quiet >= limit) {
                        ++m_.stalls;
                        if (sv->secondary) {
                            uint32_t addr = sv->addr;
                            ungrant(*sv);
                            uq_.push_back(addr);
                        } else if (sv->urgent) {
                            sv->reset_pending = true;
                            sv->quiet = 0;
                        } else {
                            release_service(*sv);
                        }
                    }
                }
            }
        }

        // ---- service checks and completions ----
        for (Service* sv : touched)
            service_checks(*sv, touched_blocks[sv], t0 + chan::kFrameNs);

        // ---- probe verdict ----
        if (probe_phase_ == 3) {
            int valid = 0, match = 0;
            for (int sdx = 0; sdx < 4; ++sdx) {
                if (!P_.digest_addr[size_t(sdx)]) continue;
                if (digest_valid_[size_t(sdx)]) ++valid;
                if (digest_match_[size_t(sdx)]) ++match;
            }
            if (valid > 0 && match >= (valid + 1) / 2)
                pending_rate_ = chan::RateMode::fast;
            probe_phase_ = 0;
            digest_valid_ = {};
            digest_match_ = {};
        }

        // ---- downgrade detector ----
        // A dying channel doesn't fall silent, it turns to static: garbage
        // words still clear the 6-bit check about half the time, so "did
        // anything decode" stays true long after the line is useless.  Judge
        // health by the word-check failure rate, which sits near the coding
        // margin on a live line and jumps past it on a dead one; fall back to
        // the any-accept pulse when the frame is too thin to vote.
        if (P_.rate == chan::RateMode::fast) {
            bool expected = false;
            for (const PChan& row : P_.chans) expected |= !row.chunk.empty();
            if (expected) {
                bool healthy = fastdata_seen >= 16
                                   ? fastdata_bad * 5 < fastdata_seen * 2
                                   : accepted_fast_data;
                if (healthy) down_streak_ = 0;
                else if (++down_streak_ >= 3 && pending_rate_ == chan::RateMode::fast)
                    pending_rate_ = chan::RateMode::slow;
            }
        }

        // ---- calibration follow-ups from measured arrivals ----
        for (auto& [a, mag] : worst_offset) {
            if (calib_q_.count(a)) continue;  // timing poll already queued one
            if (4 * mag <= chan::slot_ns(P_.rate) / 2) continue;  // within an
            // eighth of a slot: leave it alone
            if (last_calib_f_[a] + 2 > P_.f) continue;
            // recover the signed error from any accepted burst this frame
            // (worst_offset only kept magnitude; look it up again)
            int64_t corr = 0;
            for (const Burst& b : bursts_) {
                if (b.sender != a) continue;
                int64_t m2 = b.offset < 0 ? -b.offset : b.offset;
                if (m2 == mag) corr = b.offset / 2;
            }
            if (corr != 0) calib_q_[a] = corr;
        }

        // ---- episode bookkeeping ----
        bool work = false;
        for (const auto& [a, sv] : usvc_)
            if (!sv.complete) work = true;
        trk_.advance(t0 + chan::kFrameNs, found_new, work);

        ++m_.frames;
        if (trace_) {
            ordered_json row;
            row["f"] = P_.f;
            row["rate"] = P_.rate == chan::RateMode::slow ? "slow" : "fast";
            row["mode"] = mode_name(P_.mode);
            row["bursts"] = bursts_.size();
            row["grants"] = ordered_json::array();
            for (const auto& L : lanes_) row["grants"].push_back(L.pri);
            trace_->push_back(row.dump());
        }
    }

    void classify_plain(const Rx& r) {
        if (!r.ok) ++m_.rejected_check;
        else if (r.corrupt) ++m_.accepted_corrupt;
        else ++m_.accepted_clean;
    }

    void store_word(Service& sv, int idx, uint64_t payload,
                    std::set<Service*>& touched,
                    std::map<Service*, std::set<int>>& touched_blocks) {
        if (!sv.have[size_t(idx)]) {
            sv.have[size_t(idx)] = 1;
            ++sv.have_n;
        }
        sv.stored[size_t(idx)] = payload;
        sv.rec[size_t(idx)] = payload ^ sv.truth[size_t(idx)];
        int blk = idx / bg_.packets_per_block;
        if (sv.block_ok[size_t(blk)] == 1) {
            sv.block_ok[size_t(blk)] = 0;  // overwrite invalidates the pass
            --sv.blocks_ok_n;
        }
        touched.insert(&sv);
        touched_blocks[&sv].insert(blk);
    }

    // ------------------------------------------------------------------
    // block / report / unit verification
    // ------------------------------------------------------------------

    bool block_full(const Service& sv, int blk) const {
        int base = blk * bg_.packets_per_block;
        for (int k = 0; k < bg_.packets_per_block; ++k)
            if (!sv.have[size_t(base + k)]) return false;
        return true;
    }

    // The idealized detector applies the parity-weight rule to the transit
    // damage; a word stored from the wrong source would slip past a weight
    // rule that only models independent bit flips, so misattribution is
    // checked structurally first (the real block checksum catches it all
    // but 2^-10 of the time, which the coded model reproduces naturally).
    bool block_check(const Service& sv, int blk) const {
        int base = blk * bg_.packets_per_block;
        if (sc_.channel.detection == chan::DetectionModel::ideal_hd4) {
            int w = 0;
            for (int k = 0; k < bg_.packets_per_block; ++k) {
                size_t i = size_t(base + k);
                if ((sv.stored[i] ^ sv.truth[i]) != sv.rec[i]) return false;
                w += std::popcount(sv.rec[i]);
            }
            return chan::check_passes_weight(w);
        }
        std::vector<uint64_t> pay(sv.stored.begin() + base,
                                  sv.stored.begin() + base + bg_.packets_per_block);
        return codec::verify_block(bg_, codec::block_from_payloads(bg_, pay));
    }

    // Weight of surviving damage inside the checked span and inside the data
    // span (the latter decides whether a delivered report is actually wrong).
    std::pair<int, int> scope_weights(const Service& sv) const {
        const int ppb = bg_.packets_per_block;
        const int info = bg_.info_bits;
        int w_rule = 0, w_data = 0;
        size_t data_bits = sv.urgent ? kUrgentBits : kReportBits;
        size_t rule_bits = sv.urgent
                               ? kUrgentBits + size_t(ceil_log2(kUrgentBits) + 1)
                               : kReportBits + size_t(ceil_log2(kReportBits) + 1);
        for (int i = 0; i < sv.total; ++i) {
            uint64_t d = sv.rec[size_t(i)];
            if (!d) continue;
            int blk = i / ppb, wi = i % ppb;
            for (int bit = 0; bit < g_.payload_bits; ++bit) {
                if (!((d >> bit) & 1)) continue;
                int blockbit = g_.payload_bits * wi + (g_.payload_bits - 1 - bit);
                if (sv.urgent) {
                    if (size_t(blockbit) < rule_bits) ++w_rule;
                    if (size_t(blockbit) < data_bits) ++w_data;
                } else {
                    if (blockbit >= info) continue;  // block check bits
                    size_t pos = size_t(blk) * size_t(info) + size_t(blockbit);
                    if (pos < rule_bits) ++w_rule;
                    if (pos < data_bits) ++w_data;
                }
            }
        }
        return {w_rule, w_data};
    }

    // Final verification over the assembled whole, by detection model.
    // Returns (passes, content_corrupt).
    std::pair<bool, bool> whole_check(const Service& sv) const {
        if (sc_.channel.detection == chan::DetectionModel::ideal_hd4) {
            // a word stored from the wrong transmission is structural damage
            // the flip-weight idealization can't see; the real checksum
            // would flag it, so flag it here too
            for (int i = 0; i < sv.total; ++i)
                if ((sv.stored[size_t(i)] ^ sv.truth[size_t(i)]) != sv.rec[size_t(i)])
                    return {false, false};
            auto [w_rule, w_data] = scope_weights(sv);
            return {chan::check_passes_weight(w_rule), w_data > 0};
        }
        if (sv.urgent) {
            std::vector<uint64_t> pay(sv.stored.begin(), sv.stored.end());
            BitVec unit = codec::block_from_payloads(bg_, pay);
            auto data = codec::parse_urgent_unit(unit, kUrgentBits);
            if (!data) return {false, false};
            return {true, !bits_equal(*data, sv.content)};
        }
        std::vector<BitVec> blocks;
        for (int blk = 0; blk * bg_.packets_per_block < sv.total; ++blk) {
            std::vector<uint64_t> pay(
                sv.stored.begin() + blk * bg_.packets_per_block,
                sv.stored.begin() + (blk + 1) * bg_.packets_per_block);
            blocks.push_back(codec::block_from_payloads(bg_, pay));
        }
        auto res = codec::reassemble_report(blocks, bg_, kReportBits);
        if (res.status != codec::ReassembleStatus::ok) return {false, false};
        return {true, !bits_equal(res.report, sv.content)};
    }

    void service_checks(Service& sv, const std::set<int>& blocks, int64_t now) {
        if (sv.complete) return;

        // refetch progress first: the word we asked for may just have landed
        if (sv.fx_block >= 0) {
            if (sv.fx_hit) {
                sv.fx_hit = false;
                ++m_.refetch_words;
                if (!sv.fx_report) {
                    if (block_full(sv, sv.fx_block) && block_check(sv, sv.fx_block)) {
                        sv.block_ok[size_t(sv.fx_block)] = 1;
                        ++sv.blocks_ok_n;
                        if (!sv.fx_queue.empty()) sv.fx_queue.pop_front();
                        sv.fx_block = -1;
                        sv.fx_round = 0;
                    } else if (++sv.fx_cursor >= bg_.packets_per_block) {
                        sv.fx_cursor = 0;
                        if (++sv.fx_round > 3) {
                            abandon_report(sv);
                            return;
                        }
                    }
                } else {
                    if (++sv.fx_cursor >= bg_.packets_per_block) {
                        // whole block refreshed: recheck it, then the report
                        if (!block_check(sv, sv.fx_block)) {
                            sv.fx_cursor = 0;
                            if (++sv.fx_round > 3) {
                                abandon_report(sv);
                                return;
                            }
                        } else {
                            auto [pass, corrupt] = whole_check(sv);
                            if (pass) {
                                finish_whole(sv, corrupt, now);
                                return;
                            }
                            if (!sv.fx_queue.empty()) sv.fx_queue.pop_front();
                            sv.fx_block = -1;
                            sv.fx_cursor = 0;
                            sv.fx_round = 0;
                            if (sv.fx_queue.empty()) {
                                if (++sv.report_retry >= 3) {
                                    abandon_report(sv);
                                    return;
                                }
                                for (int blk = 0;
                                     blk * bg_.packets_per_block < sv.total; ++blk)
                                    sv.fx_queue.push_back(blk);
                            }
                        }
                    }
                }
            }
        }

        // lazy block checks over freshly completed blocks (urgent units are
        // a single uncoded block; their only integrity gate is the unit
        // check applied to the assembled whole below)
        if (!sv.urgent) {
            for (int blk : blocks) {
                if (sv.block_ok[size_t(blk)] != 0) continue;
                if (!block_full(sv, blk)) continue;
                if (block_check(sv, blk)) {
                    sv.block_ok[size_t(blk)] = 1;
                    ++sv.blocks_ok_n;
                } else {
                    sv.block_ok[size_t(blk)] = 2;
                    ++m_.blocks_failed;
                    sv.fx_queue.push_back(blk);
                }
            }
            if (sv.fx_block < 0 && !sv.fx_queue.empty()) {
                sv.fx_block = sv.fx_queue.front();
                sv.fx_cursor = 0;
                sv.fx_round = 0;
            }
        }

        // completion
        int nblocks = sv.total / bg_.packets_per_block;
        if (sv.have_n != sv.total) return;
        if (!sv.urgent && sv.blocks_ok_n != nblocks) return;
        auto [pass, corrupt] = whole_check(sv);
        if (pass) {
            finish_whole(sv, corrupt, now);
            return;
        }
        // every block passed its own check but the assembled whole did not:
        // refetch block by block until the whole goes green
        if (sv.urgent) {
            ++m_.unit_checks_failed;
            trk_.unit_check_failure();
            sv.reset_pending = true;
            return;
        }
        if (!sv.fx_report) {
            ++m_.report_checks_failed;
            sv.fx_report = true;
            sv.report_retry = 0;
            sv.fx_queue.clear();
            for (int blk = 0; blk < nblocks; ++blk) sv.fx_queue.push_back(blk);
            sv.fx_block = sv.fx_queue.front();
            sv.fx_cursor = 0;
            sv.fx_round = 0;
            // pull it off its lane; explicit requests do the rest
            if (sv.granted) release_service(sv);
            else if (!sv.released) release_service(sv);
        }
    }

    void finish_whole(Service& sv, bool corrupt, int64_t now) {
        sv.complete = true;
        sv.completed_ns = now;
        if (sv.urgent) {
            if (!sv.ghost) {
                trk_.verified(sv.addr, now);
                ++m_.urgent_verified;
                if (corrupt) ++m_.urgent_corrupt;
                m_.urgent_attempt_sum += sv.attempts;
            }
            sv.flush_left = 2;  // proactive stand-downs for the sensor
            if (sv.granted) ungrant(sv);
            return;
        }
        ++m_.reports_completed;
        if (corrupt) ++m_.reports_completed_corrupt;
        m_.routine_attempt_sum += sv.attempts;
        m_.routine_channel_sum_s += sv.channel_s;
        int64_t lat = now - sv.born_ns;
        size_t bucket = std::min<size_t>(10, size_t(lat / 60000000000ll));
        ++m_.staleness[bucket];
        double tsec = double(now) / 1e9;
        if (m_.first_completion_s < 0) m_.first_completion_s = tsec;
        m_.last_completion_s = std::max(m_.last_completion_s, tsec);
        if (sv.granted) ungrant(sv);
        roster_remove(sv.addr);
        // large buffers are dead weight from here on
        sv.truth.clear();
        sv.truth.shrink_to_fit();
        sv.stored.clear();
        sv.stored.shrink_to_fit();
        sv.rec.clear();
        sv.rec.shrink_to_fit();
        sv.content = BitVec{};
    }

    void abandon_report(Service& sv) {
        ++m_.reports_abandoned;
        uint32_t addr = sv.addr;
        if (sv.granted) ungrant(sv);
        roster_remove(addr);
        purge_queue(rq_, addr);
        rsvc_.erase(addr);
    }

    // ------------------------------------------------------------------
    // finalize
    // ------------------------------------------------------------------

    void finalize() {
        trk_.finalize(sc_.horizon_ns());
        m_.horizon_s = double(sc_.horizon_s);
        for (const auto& [a, sv] : rsvc_)
            if (!sv.complete) ++m_.in_flight_end;
        for (const auto& [a, sv] : usvc_)
            if (!sv.complete) ++m_.in_flight_end;
        m_.episode_records = trk_.records();
        double delivered = double(m_.reports_completed) * double(kReportBits) +
                           double(m_.urgent_verified) * double(kUrgentBits);
        m_.goodput_bps = m_.horizon_s > 0 ? delivered / m_.horizon_s : 0.0;
        int64_t categorized = m_.accepted_clean + m_.accepted_corrupt +
                              m_.rejected_check + m_.rejected_addr + m_.garbled;
        // every burst lands in exactly one outcome bucket; anything else is
        // a bookkeeping bug worth crashing over
        if (categorized != m_.sent)
            throw SimError("burst conservation violated");
    }

    std::array<bool, 4> digest_valid_{};
    std::array<bool, 4> digest_match_{};
};

}  // namespace detail

// ---------------------------------------------------------------------------
// entry points
// ---------------------------------------------------------------------------

inline Metrics run(const Scenario& sc, std::vector<std::string>* trace = nullptr) {
    detail::Engine e(sc);
    return e.run(trace);
}

struct BatchResult {
    Metrics merged;
    std::vector<uint64_t> digests;  // per-repetition metrics fingerprints
    int reps = 0;
};

// Repetitions are independent runs with derived seeds; threading changes
// only wall time, never results, because each repetition is merged in index
// order after all workers finish.
inline BatchResult run_batch(const Scenario& base, int reps, int threads = 1) {
    BatchResult out;
    out.reps = reps;
    if (reps <= 0) return out;
    std::vector<Metrics> results(static_cast<size_t>(reps));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= reps) return;
            Scenario sc = base;
            sc.seed = mix64(base.seed, uint64_t(i));
            detail::Engine e(sc);
            results[size_t(i)] = e.run(nullptr);
        }
    };
    int nt = std::max(1, threads);
    if (nt == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(size_t(nt));
        for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    out.digests.reserve(size_t(reps));
    for (int i = 0; i < reps; ++i) {
        out.digests.push_back(detail::fnv1a(results[size_t(i)].to_json().dump()));
        out.merged.add(results[size_t(i)]);
    }
    double delivered = double(out.merged.reports_completed) * 10240.0 +
                       double(out.merged.urgent_verified) * 500.0;
    out.merged.goodput_bps =
        out.merged.horizon_s > 0 ? delivered / out.merged.horizon_s : 0.0;
    return out;
}

}  // namespace hfnet::sim

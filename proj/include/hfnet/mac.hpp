#pragma once
// ============================================================================
// mac.hpp -- frame structure and wire operations
//
// One frame per second, both rates.  The server talks in the front of the
// frame, sensors answer in the back.  All layout below is in slot units of
// the frame's own rate; regions whose content rides at the slow rate inside
// a fast frame (indicator, heartbeats, their replies, contention) say so
// explicitly.
//
// Slow frame, 128 slots of 7.8125 ms:
//
//   ┌─────┬───────────┬─────────────┬──────┬──────────────┬───────┬──────────┬──────┬──────┐
//   │ 0   │ 1..4      │ 5..24       │25..27│ 28..107      │108..  │ 112..119 │120.. │123.. │
//   │ ind │ heartbeat │ sched + ack │settle│ data (80)    │ reply │contention│settle│ idle │
//   │     │ /control  │ 5..9 sched  │      │ 5 pos x 16   │ (4)   │ 16 half  │      │ (5)  │
//   │     │ (4)       │ 10..24 ack  │      │              │       │ slots    │      │      │
//   └─────┴───────────┴─────────────┴──────┴──────────────┴───────┴──────────┴──────┴──────┘
//
// Fast frame, 1280 slots of 781.25 us:
//
//   ┌───────┬─────────┬───┬───────┬─────────┬────────┬──────────┬─────────┬───┬───────────┬──────┬───────┐
//   │ 0..9  │ 10..29  │30 │ 31..35│ 36..105 │106..131│ 132..931 │932..1001│1002│ 1003..1082│1083..│1113.. │
//   │ ind   │ 2 heart │gap│ sched │ control │ settle │ data     │ reply   │gap│ contention│settle│ idle  │
//   │ slow  │ slow    │   │ 10 hp │ 50 ack  │        │ 800      │         │   │ 16 half   │      │ (167) │
//   │ rate  │ rate    │   │ fast  │ 20 ctl  │        │ 5 x 160  │         │   │ slow rate │      │       │
//   └───────┴─────────┴───┴───────┴─────────┴────────┴──────────┴─────────┴───┴───────────┴──────┴───────┘
//
// Schedule copies: both sched copies (5 half-packets each) pack the 10
// half-slots of the sched region back to back.  Ack copies are what need
// separation (loss independence), and the three slow-frame copies sit in
// disjoint slot ranges 10-14 / 15-19 / 20-24.
//
// Data slots interleave positions round-robin: slot k of the data region
// belongs to position (k mod 5) + 1, packet index k / 5.  A burst fade
// therefore never eats consecutive packets of one sensor.
// ============================================================================

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hfnet/channel.hpp"
#include "hfnet/codec.hpp"
#include "hfnet/rng.hpp"

namespace hfnet::mac {

using chan::RateMode;

constexpr int kPositions = 5;
constexpr int kDataSlotsSlow = 80;    // per frame, 16 per position
constexpr int kDataSlotsFast = 800;   // per frame, 160 per position
constexpr int kAckCopiesSlow = 3;
constexpr int kSchedCopies = 2;
constexpr int kContentionHalfSlots = 16;

inline int packets_per_position(RateMode m) { return m == RateMode::slow ? 16 : 160; }
inline int slot_count(RateMode m) { return m == RateMode::slow ? 128 : 1280; }

// ---------------------------------------------------------------------------
// region map
// ---------------------------------------------------------------------------

enum class Region {
    indicator, heartbeat, sched, ack, control, settle, data, reply,
    switch_gap, contention, idle
};

inline const char* region_name(Region r) {
    switch (r) {
        case Region::indicator:  return "indicator";
        case Region::heartbeat:  return "heartbeat";
        case Region::sched:      return "sched";
        case Region::ack:        return "ack";
        case Region::control:    return "control";
        case Region::settle:     return "settle";
        case Region::data:       return "data";
        case Region::reply:      return "reply";
        case Region::switch_gap: return "switch_gap";
        case Region::contention: return "contention";
        case Region::idle:       return "idle";
    }
    return "?";
}

struct RegionSpan {
    Region kind;
    int first_slot;
    int last_slot;      // inclusive
    RateMode content_rate;
};

inline const std::vector<RegionSpan>& regions(RateMode m) {
    static const std::vector<RegionSpan> slow = {
        {Region::indicator, 0, 0, RateMode::slow},
        {Region::heartbeat, 1, 4, RateMode::slow},
        {Region::sched, 5, 9, RateMode::slow},
        {Region::ack, 10, 24, RateMode::slow},
        {Region::settle, 25, 27, RateMode::slow},
        {Region::data, 28, 107, RateMode::slow},
        {Region::reply, 108, 111, RateMode::slow},
        {Region::contention, 112, 119, RateMode::slow},
        {Region::settle, 120, 122, RateMode::slow},
        {Region::idle, 123, 127, RateMode::slow},
    };
    static const std::vector<RegionSpan> fast = {
        {Region::indicator, 0, 9, RateMode::slow},     // one word, slow rate
        {Region::heartbeat, 10, 29, RateMode::slow},   // two packets, slow rate
        {Region::switch_gap, 30, 30, RateMode::fast},
        {Region::sched, 31, 35, RateMode::fast},
        {Region::control, 36, 105, RateMode::fast},    // 50 ack words + 20 controls
        {Region::settle, 106, 131, RateMode::fast},
        {Region::data, 132, 931, RateMode::fast},
        {Region::reply, 932, 1001, RateMode::fast},    // heartbeat replies slow inside
        {Region::switch_gap, 1002, 1002, RateMode::fast},
        {Region::contention, 1003, 1082, RateMode::slow},  // 16 slow half-slots
        {Region::settle, 1083, 1112, RateMode::fast},
        {Region::idle, 1113, 1279, RateMode::fast},
    };
    return m == RateMode::slow ? slow : fast;
}

inline std::string layout_csv(RateMode m) {
    std::string out = "region,first_slot,last_slot,slots,content_rate,start_ns,duration_ns\n";
    int64_t sn = chan::slot_ns(m);
    for (const auto& r : regions(m)) {
        int slots = r.last_slot - r.first_slot + 1;
        out += std::string(region_name(r.kind)) + "," + std::to_string(r.first_slot) +
               "," + std::to_string(r.last_slot) + "," + std::to_string(slots) + "," +
               (r.content_rate == RateMode::slow ? "slow" : "fast") + "," +
               std::to_string(r.first_slot * sn) + "," + std::to_string(slots * sn) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// slot timing
// ---------------------------------------------------------------------------

inline int first_data_slot(RateMode m) { return m == RateMode::slow ? 28 : 132; }

// position 1..5, packet index k within the position
inline int data_slot(RateMode m, int position, int k) {
    return first_data_slot(m) + 5 * k + (position - 1);
}
inline int64_t data_slot_start_ns(RateMode m, int position, int k) {
    return data_slot(m, position, k) * chan::slot_ns(m);
}

// inverse: which (position, k) owns a data slot
inline std::optional<std::pair<int, int>> data_slot_owner(RateMode m, int slot) {
    int j = slot - first_data_slot(m);
    int n = m == RateMode::slow ? kDataSlotsSlow : kDataSlotsFast;
    if (j < 0 || j >= n) return std::nullopt;
    return std::pair{(j % 5) + 1, j / 5};
}

// sched half-packet h (0..9): copy 1 carries positions 1..5 in h 0..4,
// copy 2 repeats them in h 5..9
inline int sched_copy_of(int h) { return h < 5 ? 1 : 2; }
inline int sched_position_of(int h) { return (h % 5) + 1; }
inline int64_t sched_half_start_ns(RateMode m, int h) {
    if (m == RateMode::slow)
        return (5 + h / 2) * chan::kSlowSlotNs + (h % 2) * chan::kHalfSlotSlowNs;
    return (31 + h / 2) * chan::kFastSlotNs + (h % 2) * (chan::kFastSlotNs / 2);
}

// slow-frame ack word, copy 1..3, position 1..5
inline int ack_slot_slow(int copy, int position) {
    return 9 + 5 * (copy - 1) + position;
}
// fast-frame ack word g (0..9) for a position: packets 16g .. 16g+15
inline int ack_slot_fast(int position, int g) {
    return 36 + 10 * (position - 1) + g;
}

// control slots: slow frame shares the heartbeat slots 1..4; fast frame has
// 2 slow-rate heartbeat carriers plus 20 fast addressed-control slots
inline int control_slot(RateMode m, int index) {
    if (m == RateMode::slow) {
        if (index < 0 || index > 3) throw std::out_of_range("slow control index");
        return 1 + index;
    }
    if (index < 0 || index > 19) throw std::out_of_range("fast control index");
    return 86 + index;  // region slots 86..105
}
inline int64_t heartbeat_start_ns(RateMode m, int k) {
    if (m == RateMode::slow) return control_slot(RateMode::slow, k) * chan::kSlowSlotNs;
    if (k < 0 || k > 1) throw std::out_of_range("fast heartbeat index");
    return (10 + 10 * k) * chan::kFastSlotNs;  // slow-rate content
}

// replies: every control deserves an answer slot later in the same frame
inline int64_t reply_start_ns(RateMode m, int control_index) {
    if (m == RateMode::slow) return (108 + control_index) * chan::kSlowSlotNs;
    return (932 + 50 + control_index) * chan::kFastSlotNs;  // controls are j=50..69
}
inline int64_t heartbeat_reply_start_ns(RateMode m, int k) {
    if (m == RateMode::slow) return (108 + k) * chan::kSlowSlotNs;
    return (932 + 10 * k) * chan::kFastSlotNs;  // slow-rate content, 10 slots
}
inline int64_t contention_half_start_ns(RateMode m, int i) {
    if (m == RateMode::slow)
        return (112 + i / 2) * chan::kSlowSlotNs + (i % 2) * chan::kHalfSlotSlowNs;
    return 1003 * chan::kFastSlotNs + i * chan::kHalfSlotSlowNs;
}

// During the digest-return frame of a rate probe, eight slow-frame data
// slots are requisitioned for the echoes: two per probed sensor s (0..3).
// Timing polls borrow the same window on frames with no probe in flight:
// 62.5 ms is wide enough to swallow a reply that is mis-timed by the full
// +/-20 ms flight-time uncertainty of an uncalibrated sensor.
inline std::array<int, 2> digest_return_slots(int s) {
    return {97 + 2 * s, 98 + 2 * s};
}
inline bool slot_reserved_for_digests(int slot) {
    return slot >= 97 && slot <= 104;
}
// Timing polls batch up to four targets per frame; poll i directs its
// sensor into slot 98 + 2i.  The empty slot between neighbours keeps the
// replies apart even when both arrive with the full +/-10 ms error of the
// prior an uncalibrated sensor holds.
inline constexpr int kTimingPollsPerFrame = 4;
inline int timing_poll_reply_slot(int i) { return 98 + 2 * i; }

// ---------------------------------------------------------------------------
// indicator
// ---------------------------------------------------------------------------
//
// One 32-bit word at the slow rate announcing the frame's line discipline:
// all zeros for a slow frame, all ones for a fast frame, and alternating
// bits for a slow frame whose tail data slots are requisitioned (probe
// digests or timing polls in flight).  The three patterns are pairwise 16
// bits apart, so nearest-pattern decoding corrects up to seven flips; it is
// the one thing every sensor can always read.
//
// Misreading the requisition flag is benign by construction: both sides
// trim a data window to the slots in front of the requisitioned region,
// and a trimmed window is a prefix of the untrimmed one, so a sensor that
// disagrees with the server about the flag still numbers the surviving
// words identically.

struct IndicatorRead {
    RateMode rate;
    bool reserved;  // tail data slots are requisitioned this frame

    bool operator==(RateMode m) const { return rate == m; }
};

inline uint64_t indicator_word(RateMode m, bool reserved = false) {
    if (m == RateMode::fast) return 0xffffffffull;
    return reserved ? 0xaaaaaaaaull : 0ull;
}
inline IndicatorRead decode_indicator(uint64_t word32) {
    uint64_t w = word32 & 0xffffffffull;
    int d_idle = std::popcount(w);
    int d_busy = std::popcount(w ^ 0xaaaaaaaaull);
    int d_fast = 32 - d_idle;
    if (d_idle <= d_busy && d_idle <= d_fast) return {RateMode::slow, false};
    if (d_busy <= d_fast) return {RateMode::slow, true};
    return {RateMode::fast, false};
}

// ---------------------------------------------------------------------------
// control words: 3-bit opcode + 13-bit argument in a 16-bit payload
// ---------------------------------------------------------------------------

enum class Opcode : uint8_t {
    retransmit_request = 0,  // arg: packet index to resend
    tof_calibrate = 1,       // arg: signed timing correction, 2.5 us ticks
    health_check = 2,        // arg: random echo token
    rate_probe = 3,          // arg: probe slot assignment / reserved marker
    software_update = 4,     // arg: version tag
    emergency_notice = 5,    // arg: 0 broadcast invite, 1..5 direct position
    timing_poll = 6,         // arg: echo token; reply lands in the probe window
};

struct ControlWord {
    Opcode op = Opcode::health_check;
    uint32_t arg = 0;  // 13 bits
};

inline uint16_t encode_control(const ControlWord& c) {
    return uint16_t((uint16_t(c.op) << 13) | (c.arg & 0x1fff));
}
inline ControlWord decode_control(uint16_t payload) {
    ControlWord c;
    c.op = Opcode((payload >> 13) & 0x7);
    c.arg = payload & 0x1fff;
    return c;
}

// ---------------------------------------------------------------------------
// payload sealing: a toy 4-round Feistel on the 16-bit payload.  Addressed
// controls and their replies are sealed so a sensor acts only on traffic
// keyed to it; broadcast words and ack masks ride unsealed.
// ---------------------------------------------------------------------------

inline uint64_t sensor_key(uint64_t master, uint32_t addr) {
    return mix64(master, 0x5ea1, addr);
}

namespace detail {
inline uint8_t feistel_f(uint64_t key, int round, uint8_t r) {
    return uint8_t(mix64(key, (uint64_t(round) << 8) | r));
}
}  // namespace detail

inline uint16_t seal16(uint64_t key, uint16_t w) {
    uint8_t l = uint8_t(w >> 8), r = uint8_t(w);
    for (int i = 0; i < 4; ++i) {
        uint8_t nl = r;
        r = uint8_t(l ^ detail::feistel_f(key, i, r));
        l = nl;
    }
    return uint16_t((uint16_t(l) << 8) | r);
}

inline uint16_t unseal16(uint64_t key, uint16_t w) {
    uint8_t l = uint8_t(w >> 8), r = uint8_t(w);
    for (int i = 3; i >= 0; --i) {
        uint8_t nr = l;
        l = uint8_t(r ^ detail::feistel_f(key, i, l));
        r = nr;
    }
    return uint16_t((uint16_t(l) << 8) | r);
}

// ---------------------------------------------------------------------------
// emissions: every server transmission in a frame, bit-exact
// ---------------------------------------------------------------------------

struct Emission {
    enum class Kind { indicator, heartbeat, sched, ack, control, probe_test };
    Kind kind;
    int64_t start_ns;   // offset within the frame
    RateMode rate;      // line rate of this burst
    uint64_t bits;      // wire word, MSB-first in the low `len` bits
    int len;            // bit count
    uint32_t meta = 0;  // slot / half-slot index, for traces

    int64_t end_ns() const { return start_ns + chan::burst_ns(rate, len); }
};

inline Emission emit_indicator(RateMode m, bool reserved = false) {
    return {Emission::Kind::indicator, 0, RateMode::slow, indicator_word(m, reserved), 32,
            0};
}

inline Emission emit_sched(RateMode m, const codec::PacketGeometry& g, int h,
                           uint32_t addr) {
    RateMode line = m;  // sched rides the frame's own rate
    return {Emission::Kind::sched, sched_half_start_ns(m, h), line,
            codec::build_half_packet(g, addr), g.half_len(), uint32_t(h)};
}

inline Emission emit_ack_slow(const codec::PacketGeometry& g, int copy, int position,
                              uint32_t addr, uint16_t mask) {
    int slot = ack_slot_slow(copy, position);
    return {Emission::Kind::ack, slot * chan::kSlowSlotNs, RateMode::slow,
            codec::build_packet(g, addr, mask), g.packet_len, uint32_t(slot)};
}

inline Emission emit_ack_fast(const codec::PacketGeometry& g, int position, int word_g,
                              uint32_t addr, uint16_t mask) {
    int slot = ack_slot_fast(position, word_g);
    return {Emission::Kind::ack, slot * chan::kFastSlotNs, RateMode::fast,
            codec::build_packet(g, addr, mask), g.packet_len, uint32_t(slot)};
}

// Addressed control (sealed unless broadcast) or heartbeat carrier.
inline Emission emit_control(RateMode m, const codec::PacketGeometry& g, int index,
                             uint32_t addr, const ControlWord& cw, uint64_t master_key,
                             bool is_heartbeat_carrier = false) {
    uint16_t payload = encode_control(cw);
    if (addr != g.broadcast_address())
        payload = seal16(sensor_key(master_key, addr), payload);
    int64_t start;
    RateMode line;
    if (m == RateMode::slow) {
        start = control_slot(RateMode::slow, index) * chan::kSlowSlotNs;
        line = RateMode::slow;
    } else if (is_heartbeat_carrier) {
        start = heartbeat_start_ns(RateMode::fast, index);
        line = RateMode::slow;
    } else {
        start = control_slot(RateMode::fast, index) * chan::kFastSlotNs;
        line = RateMode::fast;
    }
    return {is_heartbeat_carrier ? Emission::Kind::heartbeat : Emission::Kind::control,
            start, line, codec::build_packet(g, addr, payload), g.packet_len,
            uint32_t(index)};
}

// Rate-probe test packet: a fast-rate packet squeezed into a slow control
// slot (i = 0 or 1), or a plain fast control slot during fast frames.
inline Emission emit_probe_test(RateMode m, const codec::PacketGeometry& g, int slot_index,
                                int i, uint32_t addr, uint16_t test_payload) {
    int64_t start;
    if (m == RateMode::slow)
        start = control_slot(RateMode::slow, slot_index) * chan::kSlowSlotNs +
                i * chan::kFastSlotNs;
    else
        start = control_slot(RateMode::fast, slot_index) * chan::kFastSlotNs;
    return {Emission::Kind::probe_test, start, RateMode::fast,
            codec::build_packet(g, addr, test_payload), g.packet_len,
            uint32_t(slot_index * 2 + i)};
}

// Serialize emissions (sorted by start) into one bit string -- the golden
// frame fixture and a sanity check that nothing overlaps.
inline BitVec serialize_emissions(std::vector<Emission> ems) {
    std::sort(ems.begin(), ems.end(),
              [](const Emission& a, const Emission& b) { return a.start_ns < b.start_ns; });
    BitVec out;
    int64_t cursor = -1;
    for (const auto& e : ems) {
        if (e.start_ns < cursor)
            throw std::logic_error("overlapping emissions in frame plan");
        cursor = e.end_ns();
        out.append_word(e.bits, e.len);
    }
    return out;
}

// ---------------------------------------------------------------------------
// sensor-side decode rules (pure; the simulator feeds them)
// ---------------------------------------------------------------------------

// Position claim.  A sensor transmits in position p when the schedule says
// so.  With both sched copies lost it may coast one frame on continuity:
// it held p last frame, still has data pending, saw its own ack word, and
// no decoded sched copy hands p to someone else.
struct ClaimInputs {
    bool sched_names_me = false;       // >= 1 decoded copy gives me p
    bool sched_names_other = false;    // >= 1 decoded copy gives p away
    bool held_last_frame = false;
    bool pending_nonempty = false;
    bool own_ack_decoded = false;      // >= 1 ack copy for p addressed to me
};

inline bool claim_position(const ClaimInputs& in) {
    if (in.sched_names_me) return true;
    return in.held_last_frame && in.pending_nonempty && in.own_ack_decoded &&
           !in.sched_names_other;
}

// Ack mask recovery from redundant copies.  First decoded copy wins; when
// every copy is lost the policy decides.  assume_ack treats silence as
// acceptance and leans on the server's retransmit requests to repair the
// (rare) real losses; assume_nak resends everything.
enum class AckLossPolicy { assume_nak, assume_ack };

inline uint32_t decode_ack_mask(const std::vector<std::optional<uint16_t>>& copies,
                                int mask_bits, AckLossPolicy policy) {
    for (const auto& c : copies)
        if (c.has_value()) return *c;
    if (policy == AckLossPolicy::assume_ack)
        return mask_bits >= 32 ? 0xffffffffu : ((1u << mask_bits) - 1);
    return 0;
}

// Usability cutoff: a broadcast burst can steer a transmission only if its
// last bit has reached the sensor before the transmission must depart.
// Server-clock form: burst end + two flight times <= slot start.
inline bool broadcast_usable(int64_t burst_end_ns, int64_t tx_slot_start_ns,
                             int64_t tof_ns) {
    return burst_end_ns + 2 * tof_ns <= tx_slot_start_ns;
}

}  // namespace hfnet::mac

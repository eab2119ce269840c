// Frame layout and wire-operation tests.  Slot indices and byte-exact frame
// content are pinned: a layout regression silently breaks interoperability
// between the server and every deployed sensor, so everything here is
// spelled out rather than derived.

#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <fstream>
#include <random>
#include <set>

#include "hfnet/mac.hpp"

using namespace hfnet;
using namespace hfnet::mac;
using chan::RateMode;

namespace {

std::string golden_path(const std::string& name) {
    return std::string(HFNET_GOLDEN_DIR) + "/" + name;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Snapshot compare; bootstraps the file on first run and asks for a rerun.
void check_golden(const std::string& name, const std::string& got) {
    std::string path = golden_path(name);
    std::ifstream probe(path);
    if (!probe.good()) {
        std::ofstream out(path, std::ios::binary);
        out << got;
        FAIL("golden file " << name << " created; inspect and rerun");
    }
    CHECK(read_file(path) == got);
}

}  // namespace

TEST_CASE("region maps tile the frame exactly") {
    for (RateMode m : {RateMode::slow, RateMode::fast}) {
        const auto& rs = regions(m);
        int expect_next = 0;
        int64_t total_ns = 0;
        int active_slots = 0;
        for (const auto& r : rs) {
            CHECK(r.first_slot == expect_next);   // no gap, no overlap
            CHECK(r.last_slot >= r.first_slot);
            int slots = r.last_slot - r.first_slot + 1;
            total_ns += slots * chan::slot_ns(m);
            if (r.kind != Region::idle) active_slots += slots;
            expect_next = r.last_slot + 1;
        }
        CHECK(expect_next == slot_count(m));
        CHECK(total_ns == chan::kFrameNs);        // exactly one second
        CHECK(active_slots == (m == RateMode::slow ? 123 : 1113));
    }

    // contention content is slow-rate in BOTH frame types, so a sensor that
    // lost the rate race can always raise its hand
    for (RateMode m : {RateMode::slow, RateMode::fast})
        for (const auto& r : regions(m))
            if (r.kind == Region::contention) CHECK(r.content_rate == RateMode::slow);

    // so are the indicator and the heartbeat region of the fast frame
    CHECK(regions(RateMode::fast)[0].content_rate == RateMode::slow);
    CHECK(regions(RateMode::fast)[1].content_rate == RateMode::slow);
}

TEST_CASE("layout CSV snapshots") {
    check_golden("layout_slow.csv", layout_csv(RateMode::slow));
    check_golden("layout_fast.csv", layout_csv(RateMode::fast));
}

TEST_CASE("data slot arithmetic") {
    CHECK(data_slot(RateMode::slow, 1, 0) == 28);
    CHECK(data_slot(RateMode::slow, 5, 0) == 32);
    CHECK(data_slot(RateMode::slow, 1, 1) == 33);
    CHECK(data_slot(RateMode::slow, 5, 15) == 107);
    CHECK(data_slot(RateMode::fast, 1, 0) == 132);
    CHECK(data_slot(RateMode::fast, 5, 159) == 931);

    // inverse is total on the data region and empty off it
    for (RateMode m : {RateMode::slow, RateMode::fast}) {
        int n = m == RateMode::slow ? kDataSlotsSlow : kDataSlotsFast;
        std::set<int> seen;
        for (int p = 1; p <= 5; ++p)
            for (int k = 0; k < n / 5; ++k) {
                int s = data_slot(m, p, k);
                auto owner = data_slot_owner(m, s);
                REQUIRE(owner.has_value());
                CHECK(owner->first == p);
                CHECK(owner->second == k);
                seen.insert(s);
            }
        CHECK(int(seen.size()) == n);
        CHECK_FALSE(data_slot_owner(m, first_data_slot(m) - 1).has_value());
        CHECK_FALSE(data_slot_owner(m, first_data_slot(m) + n).has_value());
    }

    // round-robin interleave: consecutive slots cycle through positions
    CHECK(*data_slot_owner(RateMode::slow, 28) == std::pair{1, 0});
    CHECK(*data_slot_owner(RateMode::slow, 29) == std::pair{2, 0});
    CHECK(*data_slot_owner(RateMode::slow, 33) == std::pair{1, 1});
}

TEST_CASE("sched half-slot mapping") {
    for (int h = 0; h < 10; ++h) {
        CHECK(sched_copy_of(h) == (h < 5 ? 1 : 2));
        CHECK(sched_position_of(h) == (h % 5) + 1);
    }
    CHECK(sched_half_start_ns(RateMode::slow, 0) == 5 * chan::kSlowSlotNs);
    CHECK(sched_half_start_ns(RateMode::slow, 1) ==
          5 * chan::kSlowSlotNs + chan::kHalfSlotSlowNs);
    CHECK(sched_half_start_ns(RateMode::slow, 9) ==
          9 * chan::kSlowSlotNs + chan::kHalfSlotSlowNs);
    CHECK(sched_half_start_ns(RateMode::fast, 0) == 31 * chan::kFastSlotNs);
    CHECK(sched_half_start_ns(RateMode::fast, 9) ==
          35 * chan::kFastSlotNs + chan::kFastSlotNs / 2);
}

TEST_CASE("ack, control, reply, and contention timing") {
    // three slow ack copies in disjoint slot ranges, maximally separated
    CHECK(ack_slot_slow(1, 1) == 10);
    CHECK(ack_slot_slow(1, 5) == 14);
    CHECK(ack_slot_slow(2, 1) == 15);
    CHECK(ack_slot_slow(3, 5) == 24);

    CHECK(ack_slot_fast(1, 0) == 36);
    CHECK(ack_slot_fast(1, 9) == 45);
    CHECK(ack_slot_fast(5, 9) == 85);

    CHECK(control_slot(RateMode::slow, 0) == 1);
    CHECK(control_slot(RateMode::slow, 3) == 4);
    CHECK(control_slot(RateMode::fast, 0) == 86);
    CHECK(control_slot(RateMode::fast, 19) == 105);
    CHECK_THROWS(control_slot(RateMode::slow, 4));
    CHECK_THROWS(control_slot(RateMode::fast, 20));

    // replies: slow controls 0..3 answer in slots 108..111; fast controls
    // answer in 982..1001; heartbeat replies keep the slow rate and sit in
    // 932..951, clear of the control replies
    CHECK(reply_start_ns(RateMode::slow, 0) == 108 * chan::kSlowSlotNs);
    CHECK(reply_start_ns(RateMode::slow, 3) == 111 * chan::kSlowSlotNs);
    CHECK(reply_start_ns(RateMode::fast, 0) == 982 * chan::kFastSlotNs);
    CHECK(reply_start_ns(RateMode::fast, 19) == 1001 * chan::kFastSlotNs);
    CHECK(heartbeat_reply_start_ns(RateMode::fast, 0) == 932 * chan::kFastSlotNs);
    CHECK(heartbeat_reply_start_ns(RateMode::fast, 1) == 942 * chan::kFastSlotNs);
    // slow-rate heartbeat reply spans 10 fast slots: 942 + 10 = 952 <= 982
    CHECK(heartbeat_reply_start_ns(RateMode::fast, 1) +
              chan::burst_ns(RateMode::slow, 32) <=
          reply_start_ns(RateMode::fast, 0));

    // contention half-slots are slow-rate sized in both frames and end
    // exactly where the trailing settle region begins
    CHECK(contention_half_start_ns(RateMode::slow, 0) == 112 * chan::kSlowSlotNs);
    CHECK(contention_half_start_ns(RateMode::slow, 15) ==
          119 * chan::kSlowSlotNs + chan::kHalfSlotSlowNs);
    CHECK(contention_half_start_ns(RateMode::fast, 0) == 1003 * chan::kFastSlotNs);
    CHECK(contention_half_start_ns(RateMode::fast, 15) + chan::kHalfSlotSlowNs ==
          1083 * chan::kFastSlotNs);

    // probe digest echo slots
    CHECK(digest_return_slots(0) == std::array<int, 2>{97, 98});
    CHECK(digest_return_slots(3) == std::array<int, 2>{103, 104});
    CHECK(slot_reserved_for_digests(97));
    CHECK(slot_reserved_for_digests(104));
    CHECK_FALSE(slot_reserved_for_digests(96));
    CHECK_FALSE(slot_reserved_for_digests(105));
}

TEST_CASE("indicator words decode to the nearest pattern") {
    CHECK(indicator_word(RateMode::slow) == 0);
    CHECK(indicator_word(RateMode::slow, true) == 0xaaaaaaaaull);
    CHECK(indicator_word(RateMode::fast) == 0xffffffffull);
    CHECK(indicator_word(RateMode::fast, true) == 0xffffffffull);
    CHECK(decode_indicator(0) == RateMode::slow);
    CHECK(decode_indicator(0xffffffffull) == RateMode::fast);
    CHECK(decode_indicator(0x0000ffffull) == RateMode::slow);      // 3-way tie -> idle
    CHECK(decode_indicator(0x0001ffffull) == RateMode::fast);      // 17 ones
    CHECK(decode_indicator(0x80808080ull) == RateMode::slow);

    CHECK_FALSE(decode_indicator(0).reserved);
    CHECK_FALSE(decode_indicator(0xffffffffull).reserved);
    CHECK(decode_indicator(0xaaaaaaaaull).reserved);
    CHECK(decode_indicator(0xaaaaaaaaull) == RateMode::slow);

    // the patterns are pairwise >= 16 bits apart, so any 7 flips correct
    std::mt19937_64 g(7);
    for (int trial = 0; trial < 200; ++trial) {
        uint64_t flips = 0;
        while (std::popcount(flips) < 7) flips |= 1ull << (g() % 32);
        CHECK(decode_indicator(0ull ^ flips) == RateMode::slow);
        CHECK_FALSE(decode_indicator(0ull ^ flips).reserved);
        CHECK(decode_indicator(0xaaaaaaaaull ^ flips).reserved);
        CHECK(decode_indicator(0xffffffffull ^ flips) == RateMode::fast);
    }
}

TEST_CASE("control words round-trip") {
    for (auto op : {Opcode::retransmit_request, Opcode::tof_calibrate,
                    Opcode::health_check, Opcode::rate_probe,
                    Opcode::software_update, Opcode::emergency_notice}) {
        for (uint32_t arg : {0u, 1u, 0x1555u, 0x1fffu}) {
            ControlWord c{op, arg};
            ControlWord back = decode_control(encode_control(c));
            CHECK(back.op == op);
            CHECK(back.arg == arg);
        }
    }
}

TEST_CASE("payload sealing") {
    uint64_t master = 0xfeedface;
    uint64_t k7 = sensor_key(master, 7);
    uint64_t k8 = sensor_key(master, 8);
    CHECK(k7 != k8);

    Rng rng(0xaa);
    int moved = 0;
    for (int i = 0; i < 4096; ++i) {
        uint16_t w = uint16_t(rng.next());
        uint16_t sealed = seal16(k7, w);
        CHECK(unseal16(k7, sealed) == w);             // exact inverse
        if (sealed != w) ++moved;
        if (i < 64) CHECK(unseal16(k8, sealed) != w); // wrong key garbles (whp)
    }
    CHECK(moved > 4000);  // the permutation is not the identity
}

TEST_CASE("emissions: a fully loaded slow frame, bit-exact") {
    auto g = codec::packet_geometry(1000, 32);
    uint64_t master = 0x5eedu;

    std::vector<Emission> ems;
    ems.push_back(emit_indicator(RateMode::slow));
    for (int i = 0; i < 4; ++i)
        ems.push_back(emit_control(RateMode::slow, g, i, uint32_t(100 + i),
                                   {Opcode::health_check, uint32_t(0x0abc + i)}, master));
    for (int h = 0; h < 10; ++h)
        ems.push_back(emit_sched(RateMode::slow, g, h, uint32_t(10 + sched_position_of(h))));
    for (int c = 1; c <= 3; ++c)
        for (int p = 1; p <= 5; ++p)
            ems.push_back(emit_ack_slow(g, c, p, uint32_t(10 + p), uint16_t(0x8000 >> p)));

    // 1 indicator + 4 heartbeats + 10 sched halves + 15 ack words
    BitVec wire = serialize_emissions(ems);
    CHECK(wire.size() == 32 + 4 * 32 + 10 * 16 + 15 * 32);

    // indicator first: 32 zero bits
    CHECK(wire.word_at(0, 32) == 0);

    // every burst parses back to what was put in
    auto hb = codec::parse_packet(g, wire.word_at(32, 32));
    REQUIRE(hb.has_value());
    CHECK(hb->address == 100);
    CHECK(decode_control(unseal16(sensor_key(master, 100), uint16_t(hb->payload))).arg ==
          0x0abc);
    auto sched0 = codec::parse_half_packet(g, wire.word_at(160, 16));
    REQUIRE(sched0.has_value());
    CHECK(*sched0 == 11);
    auto ack11 = codec::parse_packet(g, wire.word_at(320, 32));
    REQUIRE(ack11.has_value());
    CHECK(ack11->address == 11);
    CHECK(ack11->payload == 0x4000);

    check_golden("frame_slow_full.hex", wire.to_hex() + "\n");

    // overlapping plans are rejected
    std::vector<Emission> clash = {emit_sched(RateMode::slow, g, 0, 1),
                                   emit_sched(RateMode::slow, g, 0, 2)};
    CHECK_THROWS_AS(serialize_emissions(clash), std::logic_error);
}

TEST_CASE("fast-frame emission timing") {
    auto g = codec::packet_geometry(1000, 32);
    uint64_t master = 1;

    // heartbeats ride the slow rate inside the fast frame
    auto hb = emit_control(RateMode::fast, g, 1, 5, {Opcode::health_check, 1}, master,
                           /*is_heartbeat_carrier=*/true);
    CHECK(hb.rate == RateMode::slow);
    CHECK(hb.start_ns == 20 * chan::kFastSlotNs);
    CHECK(hb.end_ns() == 30 * chan::kFastSlotNs);  // 10 fast slots long

    auto ctl = emit_control(RateMode::fast, g, 0, 5, {Opcode::health_check, 1}, master);
    CHECK(ctl.rate == RateMode::fast);
    CHECK(ctl.start_ns == 86 * chan::kFastSlotNs);

    auto ack = emit_ack_fast(g, 2, 3, 42, 0xffff);
    CHECK(ack.start_ns == (36 + 13) * chan::kFastSlotNs);

    // probe tests in a slow frame: two fast packets inside one slow slot
    // (control index 0 is slot 1)
    auto p0 = emit_probe_test(RateMode::slow, g, 0, 0, 9, 0x1234);
    auto p1 = emit_probe_test(RateMode::slow, g, 0, 1, 9, 0x5678);
    CHECK(p0.rate == RateMode::fast);
    CHECK(p0.start_ns == chan::kSlowSlotNs);
    CHECK(p1.start_ns == chan::kSlowSlotNs + chan::kFastSlotNs);
    CHECK(p1.end_ns() <= 2 * chan::kSlowSlotNs);
}

TEST_CASE("broadcast sealing rules") {
    auto g = codec::packet_geometry(1000, 32);
    uint64_t master = 0xabcd;

    // broadcast control goes out unsealed
    auto bc = emit_control(RateMode::slow, g, 0, g.broadcast_address(),
                           {Opcode::emergency_notice, 0}, master);
    auto parsed = codec::parse_packet(g, bc.bits);
    REQUIRE(parsed.has_value());
    CHECK(decode_control(uint16_t(parsed->payload)).op == Opcode::emergency_notice);

    // addressed control is sealed: raw payload does not decode to the word
    auto ad = emit_control(RateMode::slow, g, 1, 77, {Opcode::tof_calibrate, 123}, master);
    auto parsed2 = codec::parse_packet(g, ad.bits);
    REQUIRE(parsed2.has_value());
    uint16_t raw = uint16_t(parsed2->payload);
    CHECK(raw != encode_control({Opcode::tof_calibrate, 123}));
    ControlWord cw = decode_control(unseal16(sensor_key(master, 77), raw));
    CHECK(cw.op == Opcode::tof_calibrate);
    CHECK(cw.arg == 123);
}

TEST_CASE("position claim rule") {
    ClaimInputs in;
    CHECK_FALSE(claim_position(in));

    in.sched_names_me = true;
    CHECK(claim_position(in));

    // continuity fallback: held + pending + own ack + nobody else named
    in = {};
    in.held_last_frame = true;
    in.pending_nonempty = true;
    in.own_ack_decoded = true;
    CHECK(claim_position(in));
    in.sched_names_other = true;
    CHECK_FALSE(claim_position(in));
    in.sched_names_other = false;
    in.own_ack_decoded = false;
    CHECK_FALSE(claim_position(in));
    in.own_ack_decoded = true;
    in.pending_nonempty = false;
    CHECK_FALSE(claim_position(in));

    // an explicit schedule overrides everything
    in.sched_names_me = true;
    in.sched_names_other = true;
    CHECK(claim_position(in));
}

TEST_CASE("ack mask recovery and loss policy") {
    using OptW = std::optional<uint16_t>;
    std::vector<OptW> copies = {std::nullopt, OptW(0x00f0), OptW(0xffff)};
    CHECK(decode_ack_mask(copies, 16, AckLossPolicy::assume_nak) == 0x00f0);

    std::vector<OptW> lost = {std::nullopt, std::nullopt, std::nullopt};
    CHECK(decode_ack_mask(lost, 16, AckLossPolicy::assume_nak) == 0);
    CHECK(decode_ack_mask(lost, 16, AckLossPolicy::assume_ack) == 0xffff);
}

TEST_CASE("broadcast usability cutoff") {
    // burst ending at t can steer a slot starting at t + 2*tof, not earlier
    int64_t tof = 14'000'000;
    CHECK(broadcast_usable(1000, 1000 + 2 * tof, tof));
    CHECK_FALSE(broadcast_usable(1000, 1000 + 2 * tof - 1, tof));
    CHECK(broadcast_usable(0, 0, 0));

    // a far sensor (18 ms) cannot use the last ack copy (ends slot 25) for
    // its first data slot (28) but a near one (5 ms) can
    int64_t ack_end = 25 * chan::kSlowSlotNs;
    int64_t first_data = 28 * chan::kSlowSlotNs;
    CHECK_FALSE(broadcast_usable(ack_end, first_data, 18'000'000));
    CHECK(broadcast_usable(ack_end, first_data, 5'000'000));
}

// Framing and checksum tests.  Expected values here were frozen from
// independent enumeration (column tables, pattern counts) and hand
// arithmetic (segmentation sizes); the code must reproduce them, not the
// other way around.

#include <catch2/catch_amalgamated.hpp>

#include "hfnet/codec.hpp"
#include "hfnet/rng.hpp"

using namespace hfnet;
using namespace hfnet::codec;

namespace {

uint64_t flip_wire(uint64_t pkt, int wire_bit, int len) {
    return pkt ^ (uint64_t(1) << (len - 1 - wire_bit));
}

BitVec random_bits(size_t n, Rng& rng) {
    BitVec v(n);
    for (size_t i = 0; i < n; ++i) v.set(i, rng.bernoulli(0.5));
    return v;
}

}  // namespace

TEST_CASE("geometry derivation") {
    auto g = packet_geometry(1000, 32);
    CHECK(g.address_bits == 10);
    CHECK(g.check_bits == 6);
    CHECK(g.payload_bits == 16);
    CHECK(g.half_len() == 16);
    CHECK(g.broadcast_address() == 1023);

    auto g64 = packet_geometry(1000, 64);
    CHECK(g64.address_bits == 10);
    CHECK(g64.check_bits == 7);
    CHECK(g64.payload_bits == 47);

    // Minimal corner: 2 nodes, 4-bit packets, no payload left over.
    auto tiny = packet_geometry(2, 4);
    CHECK(tiny.address_bits == 1);
    CHECK(tiny.check_bits == 3);
    CHECK(tiny.payload_bits == 0);

    CHECK_THROWS(packet_geometry(1000, 8));   // address + check don't fit
    CHECK_THROWS(packet_geometry(1, 32));

    auto bg = block_geometry(512, g);
    CHECK(bg.check_bits == 10);
    CHECK(bg.info_bits == 502);
    CHECK(bg.packets_per_block == 32);
    CHECK_THROWS(block_geometry(500, g));     // not a payload multiple
}

TEST_CASE("check table columns are the ascending odd-weight values") {
    // Enumerated by hand: the 6-bit values of odd weight >= 3, ascending.
    static const uint16_t kCols6[26] = {
        7, 11, 13, 14, 19, 21, 22, 25, 26, 28, 31, 35, 37,
        38, 41, 42, 44, 47, 49, 50, 52, 55, 56, 59, 61, 62};
    const auto& t = check_table(6, 26);
    for (int j = 0; j < 26; ++j) CHECK(t.column(j) == kCols6[j]);

    // Capacity: exactly 2^(C-1) - C usable columns.
    CHECK_NOTHROW(CheckTable(6, 26));
    CHECK_THROWS(CheckTable(6, 27));
    CHECK_NOTHROW(CheckTable(10, 502));
    CHECK_THROWS(CheckTable(10, 503));
    CHECK_NOTHROW(CheckTable(15, 10240));

    // Structural properties: odd weight >= 3, distinct, ascending.
    const auto& tb = check_table(10, 502);
    uint16_t prev = 0;
    for (int j = 0; j < 502; ++j) {
        uint16_t c = tb.column(j);
        int w = std::popcount(c);
        CHECK((w & 1) == 1);
        CHECK(w >= 3);
        CHECK(c > prev);
        prev = c;
    }
}

TEST_CASE("all-zero data has a zero checksum") {
    auto g = packet_geometry(1000, 32);
    CHECK(build_packet(g, 0, 0) == 0);
    auto p = parse_packet(g, 0);
    REQUIRE(p.has_value());
    CHECK(p->address == 0);
    CHECK(p->payload == 0);
}

TEST_CASE("packet round trip and field extraction") {
    auto g = packet_geometry(1000, 32);
    Rng rng(0x11);
    for (int i = 0; i < 2000; ++i) {
        uint32_t addr = rng.below(1000);
        uint64_t pl = rng.next() & 0xffff;
        uint64_t pkt = build_packet(g, addr, pl);
        CHECK((pkt >> 32) == 0);  // fits the wire length
        auto p = parse_packet(g, pkt);
        REQUIRE(p.has_value());
        CHECK(p->address == addr);
        CHECK(p->payload == pl);
    }
    CHECK_THROWS(build_packet(g, 1024, 0));
    CHECK_THROWS(build_packet(g, 0, 0x10000));
}

TEST_CASE("every corruption of weight 1-3 is detected (exhaustive)") {
    auto g = packet_geometry(1000, 32);
    Rng rng(0x22);
    for (int base = 0; base < 100; ++base) {
        uint64_t pkt = build_packet(g, rng.below(1000), rng.next() & 0xffff);
        for (int a = 0; a < 32; ++a) {
            CHECK_FALSE(parse_packet(g, flip_wire(pkt, a, 32)).has_value());
            for (int b = a + 1; b < 32; ++b) {
                uint64_t p2 = flip_wire(flip_wire(pkt, a, 32), b, 32);
                CHECK_FALSE(parse_packet(g, p2).has_value());
                for (int c = b + 1; c < 32; ++c)
                    CHECK_FALSE(parse_packet(g, flip_wire(p2, c, 32)).has_value());
            }
        }
    }
}

TEST_CASE("odd corruption weights are always detected") {
    auto g = packet_geometry(1000, 32);
    Rng rng(0x33);
    for (int trial = 0; trial < 20000; ++trial) {
        uint64_t pkt = build_packet(g, rng.below(1000), rng.next() & 0xffff);
        int w = 5 + 2 * int(rng.below(6));  // 5, 7, ..., 15
        uint64_t mask = 0;
        while (std::popcount(mask) < w) mask |= uint64_t(1) << rng.below(32);
        if (std::popcount(mask) != w) continue;  // collision; skip trial
        CHECK_FALSE(parse_packet(g, pkt ^ mask).has_value());
    }
}

TEST_CASE("a weight-4 miss exists, entirely inside the address field") {
    auto g = packet_geometry(1000, 32);

    // Wire positions {0,1,5,7} carry columns 7, 11, 21, 25, which XOR to
    // zero.  All four sit in the 10-bit address field, so two distinct
    // addresses share a codeword -- the worst case for collision pile-ups.
    uint64_t mask = 0;
    for (int pos : {0, 1, 5, 7}) mask |= uint64_t(1) << (31 - pos);

    const auto& t = check_table(6, 26);
    CHECK((t.column(0) ^ t.column(1) ^ t.column(5) ^ t.column(7)) == 0);

    uint64_t pkt = build_packet(g, 0, 0xbeef);
    auto twin = parse_packet(g, pkt ^ mask);
    REQUIRE(twin.has_value());
    CHECK(twin->payload == 0xbeef);
    CHECK(twin->address == ((0u ^ 0b1100010100u) & 0x3ff));

    // Independent existence proof: enumerate weight-4 wire patterns until
    // one lands on a codeword (syndrome contribution XORs to zero).
    auto wire_col = [&](int pos) -> uint16_t {
        return pos < 26 ? t.column(pos) : uint16_t(1u << (pos - 26));
    };
    int found = 0;
    for (int a = 0; a < 32 && !found; ++a)
        for (int b = a + 1; b < 32 && !found; ++b)
            for (int c = b + 1; c < 32 && !found; ++c)
                for (int d = c + 1; d < 32; ++d)
                    if ((wire_col(a) ^ wire_col(b) ^ wire_col(c) ^ wire_col(d)) == 0) {
                        found = 1;
                        break;
                    }
    CHECK(found == 1);
}

TEST_CASE("half packets") {
    auto g = packet_geometry(1000, 32);
    for (uint32_t addr : {0u, 1u, 511u, 999u, 1023u}) {
        uint64_t h = build_half_packet(g, addr);
        CHECK((h >> 16) == 0);
        auto got = parse_half_packet(g, h);
        REQUIRE(got.has_value());
        CHECK(*got == addr);
    }
    // Weight 1-3 corruptions all caught, same engine as full packets.
    uint64_t h = build_half_packet(g, 777);
    for (int a = 0; a < 16; ++a) {
        CHECK_FALSE(parse_half_packet(g, flip_wire(h, a, 16)).has_value());
        for (int b = a + 1; b < 16; ++b)
            for (int c = b + 1; c < 16; ++c) {
                uint64_t bad = flip_wire(flip_wire(flip_wire(h, a, 16), b, 16), c, 16);
                CHECK_FALSE(parse_half_packet(g, bad).has_value());
            }
    }
}

TEST_CASE("uniform garble passes a half-packet check at rate 2^-6") {
    // A collision turns the slot into noise; what survives the check is
    // 2^10 codewords out of 2^16 patterns.
    auto g = packet_geometry(1000, 32);
    Rng rng(0x44);
    const int trials = 1000000;
    int accept = 0;
    for (int i = 0; i < trials; ++i)
        if (parse_half_packet(g, rng.next() & 0xffff)) ++accept;
    double p = double(accept) / trials;
    CHECK(p == Catch::Approx(1.0 / 64).margin(4e-4));  // 3-sigma band
}

TEST_CASE("block build, verify, and weight-3 detection") {
    auto g = packet_geometry(1000, 32);
    auto bg = block_geometry(512, g);
    Rng rng(0x55);
    BitVec info = random_bits(502, rng);
    BitVec blk = build_block(bg, info);
    REQUIRE(int(blk.size()) == 512);
    CHECK(verify_block(bg, blk));
    CHECK(block_info(bg, blk) == info);

    // payload split round-trips
    auto pls = block_payloads(bg, blk);
    REQUIRE(int(pls.size()) == 32);
    CHECK(block_from_payloads(bg, pls) == blk);

    // exhaustive weight 1 and 2
    for (int a = 0; a < 512; ++a) {
        blk.flip(size_t(a));
        CHECK_FALSE(verify_block(bg, blk));
        blk.flip(size_t(a));
    }
    for (int a = 0; a < 512; ++a)
        for (int b = a + 1; b < 512; ++b) {
            blk.flip(size_t(a));
            blk.flip(size_t(b));
            CHECK_FALSE(verify_block(bg, blk));
            blk.flip(size_t(a));
            blk.flip(size_t(b));
        }

    // randomized weight 3 (the full sweep lives in the acceptance gate)
    for (int trial = 0; trial < 200000; ++trial) {
        int a = int(rng.below(512)), b = int(rng.below(512)), c = int(rng.below(512));
        if (a == b || b == c || a == c) continue;
        blk.flip(size_t(a));
        blk.flip(size_t(b));
        blk.flip(size_t(c));
        CHECK_FALSE(verify_block(bg, blk));
        blk.flip(size_t(a));
        blk.flip(size_t(b));
        blk.flip(size_t(c));
    }

    // weight-4 miss: info columns 7^11^13 = 1 = check column e0, so
    // flipping info bits 0,1,2 plus the first check bit goes unseen.
    blk.flip(0);
    blk.flip(1);
    blk.flip(2);
    blk.flip(502);
    CHECK(verify_block(bg, blk));
}

TEST_CASE("routine report segmentation arithmetic") {
    auto g = packet_geometry(1000, 32);
    auto bg = block_geometry(512, g);
    Rng rng(0x66);
    BitVec report = random_bits(10240, rng);

    auto seg = segment_report(report, bg);
    CHECK(seg.report_check_bits == 15);          // ceil(log2 10240) + 1
    CHECK(int(seg.blocks.size()) == 21);         // ceil(10255 / 502)
    CHECK(int(seg.payloads.size()) == 672);      // 21 blocks * 32 packets
    CHECK(seg.pad_bits == 287);                  // 21*502 - 10255

    // Final block occupancy: 215 meaningful info bits of 502 (42.8%), of
    // which 200 are report data (39.8%).
    int used = 502 - seg.pad_bits;
    CHECK(used == 215);
    CHECK(double(used) / 502 == Catch::Approx(0.4283).margin(5e-4));
    CHECK(double(10240 - 20 * 502) / 502 == Catch::Approx(0.3984).margin(5e-4));

    auto back = reassemble_report(seg.blocks, bg, 10240);
    REQUIRE(back.status == ReassembleStatus::ok);
    CHECK(back.report == report);

    // A corrupted block is named by index.
    auto blocks = seg.blocks;
    blocks[13].flip(100);
    auto bad = reassemble_report(blocks, bg, 10240);
    CHECK(bad.status == ReassembleStatus::block_check_failed);
    CHECK(bad.failed_block == 13);

    // A block whose own check passes but whose content changed trips the
    // whole-report check instead.
    blocks = seg.blocks;
    BitVec info3 = block_info(bg, blocks[3]);
    info3.flip(42);
    blocks[3] = build_block(bg, info3);
    auto bad2 = reassemble_report(blocks, bg, 10240);
    CHECK(bad2.status == ReassembleStatus::report_check_failed);
}

TEST_CASE("urgent report unit") {
    auto g = packet_geometry(1000, 32);
    auto bg = block_geometry(512, g);
    Rng rng(0x77);
    BitVec data = random_bits(500, rng);

    BitVec unit = build_urgent_unit(data, bg);
    REQUIRE(int(unit.size()) == 512);            // 500 + 10 check + 2 pad
    CHECK_FALSE(unit.get(510));
    CHECK_FALSE(unit.get(511));
    CHECK(int(block_payloads(bg, unit).size()) == 32);

    auto got = parse_urgent_unit(unit, 500);
    REQUIRE(got.has_value());
    CHECK(*got == data);

    for (int trial = 0; trial < 5000; ++trial) {
        BitVec bad = unit;
        int w = 1 + int(rng.below(3));
        for (int i = 0; i < w; ++i) bad.flip(rng.below(510));  // stay off the pad
        if (bad == unit) continue;
        CHECK_FALSE(parse_urgent_unit(bad, 500).has_value());
    }
}

TEST_CASE("digest crc matches a bytewise reference") {
    auto reference = [](const uint8_t* bytes, size_t n) {
        uint16_t crc = 0xffff;
        for (size_t i = 0; i < n; ++i) {
            crc ^= uint16_t(bytes[i]) << 8;
            for (int b = 0; b < 8; ++b)
                crc = (crc & 0x8000) ? uint16_t((crc << 1) ^ 0x1021) : uint16_t(crc << 1);
        }
        return crc;
    };
    Rng rng(0x88);
    for (int i = 0; i < 1000; ++i) {
        uint64_t v = rng.next();
        uint8_t bytes[8];
        for (int b = 0; b < 8; ++b) bytes[b] = uint8_t(v >> (56 - 8 * b));
        CHECK(crc16_bits(v, 64) == reference(bytes, 8));
    }
    CHECK(crc16_bits(0, 0) == 0xffff);
}

TEST_CASE("bit vector utilities") {
    BitVec v;
    v.append_word(0xabcd, 16);
    CHECK(v.size() == 16);
    CHECK(v.word_at(0, 16) == 0xabcd);
    CHECK(v.word_at(4, 8) == 0xbc);
    CHECK(v.to_hex() == "abcd");
    CHECK(BitVec::from_hex("abcd", 16) == v);

    // Non-byte lengths round-trip through hex too.
    BitVec w;
    w.append_word(0x5, 3);
    CHECK(BitVec::from_hex(w.to_hex(), 3) == w);

    BitVec s = v.slice(4, 8);
    CHECK(s.size() == 8);
    CHECK(s.word_at(0, 8) == 0xbc);

    CHECK(ceil_log2(1000) == 10);
    CHECK(ceil_log2(1024) == 10);
    CHECK(ceil_log2(1025) == 11);
    CHECK(ceil_log2(1) == 0);
}

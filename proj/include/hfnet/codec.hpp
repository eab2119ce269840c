#pragma once
// ============================================================================
// codec.hpp -- packet/block framing and error-detection checksums
//
// Checksums are shortened extended-Hamming codes in systematic form.  The
// parity matrix assigns check bit i the unit column (1 << i) and data
// position j the j-th smallest C-bit value of odd weight >= 3.  Every column
// is distinct and of odd weight, which gives minimum distance 4: all 1-, 2-
// and 3-bit corruptions are detected, as is every corruption of odd weight.
// A plain polynomial CRC of the same width cannot make that guarantee at
// these lengths, which is why the tables are built this way.
//
// Wire layouts (first bit on the left):
//
//   full packet   |  address A  |  payload I_p  |  check C_p  |
//   half packet   |  address A  |  check C_p    |                (no payload)
//   block         |  info I_b                   |  check C_b  |
//
// A half packet is a full packet with the payload removed: it keeps the full
// packet's check width, so for the defaults it is 10 + 6 = 16 bits.
// ============================================================================

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>
#include <bit>

#include "hfnet/bits.hpp"

namespace hfnet::codec {

// ---------------------------------------------------------------------------
// geometry
// ---------------------------------------------------------------------------

struct PacketGeometry {
    int network_size = 0;
    int packet_len = 0;    // bits on the wire
    int address_bits = 0;  // A = ceil(log2(network_size))
    int check_bits = 0;    // C = ceil(log2(packet_len)) + 1
    int payload_bits = 0;  // I = packet_len - A - C

    int half_len() const { return address_bits + check_bits; }
    // Reserved all-ones address; receivers treat it as "everyone".
    uint32_t broadcast_address() const { return (1u << address_bits) - 1; }
};

// A payload of zero is legal (that is exactly the half-packet shape); a
// negative one is not.
inline PacketGeometry packet_geometry(int network_size, int packet_len) {
    if (network_size < 2) throw std::invalid_argument("network_size must be >= 2");
    if (packet_len < 2 || packet_len > 64)
        throw std::invalid_argument("packet_len must be in [2, 64]");
    PacketGeometry g;
    g.network_size = network_size;
    g.packet_len = packet_len;
    g.address_bits = ceil_log2(uint64_t(network_size));
    g.check_bits = ceil_log2(uint64_t(packet_len)) + 1;
    g.payload_bits = packet_len - g.address_bits - g.check_bits;
    if (g.payload_bits < 0)
        throw std::invalid_argument("packet_len too small for address + check");
    return g;
}

struct BlockGeometry {
    int block_len = 0;    // bits on the wire
    int check_bits = 0;   // C_b = ceil(log2(block_len)) + 1
    int info_bits = 0;    // I_b = block_len - C_b
    int payload_bits = 0; // carrying packet payload width
    int packets_per_block = 0;
};

inline BlockGeometry block_geometry(int block_len, const PacketGeometry& pg) {
    if (pg.payload_bits <= 0)
        throw std::invalid_argument("carrier packet has no payload");
    if (block_len % pg.payload_bits != 0)
        throw std::invalid_argument("block_len must be a multiple of the packet payload");
    BlockGeometry b;
    b.block_len = block_len;
    b.check_bits = ceil_log2(uint64_t(block_len)) + 1;
    b.info_bits = block_len - b.check_bits;
    b.payload_bits = pg.payload_bits;
    b.packets_per_block = block_len / pg.payload_bits;
    return b;
}

// ---------------------------------------------------------------------------
// check tables
// ---------------------------------------------------------------------------

// Parity columns for `data_len` data positions under a C-bit check.
// Capacity: there are 2^(C-1) - C values of odd weight >= 3 below 2^C.
class CheckTable {
public:
    CheckTable(int check_bits, int data_len)
        : check_bits_(check_bits) {
        if (check_bits < 3 || check_bits > 16)
            throw std::invalid_argument("check width out of range");
        uint32_t capacity = (1u << (check_bits - 1)) - uint32_t(check_bits);
        if (data_len < 0 || uint32_t(data_len) > capacity)
            throw std::invalid_argument("data_len exceeds check capacity");
        cols_.reserve(size_t(data_len));
        for (uint32_t v = 0; int(cols_.size()) < data_len; ++v) {
            int w = std::popcount(v);
            if ((w & 1) && w >= 3) cols_.push_back(uint16_t(v));
        }
    }

    int check_bits() const { return check_bits_; }
    int data_len() const { return int(cols_.size()); }
    uint16_t column(int j) const { return cols_[size_t(j)]; }

    // Checksum of `data_len` data bits starting at `pos` in `v`.
    uint16_t checksum(const BitVec& v, size_t pos = 0) const {
        uint16_t acc = 0;
        for (size_t j = 0; j < cols_.size(); ++j)
            if (v.get(pos + j)) acc ^= cols_[j];
        return acc;
    }

    // Same, for data packed big-endian into an integer (data_len <= 64).
    uint16_t checksum_word(uint64_t data) const {
        uint16_t acc = 0;
        int n = int(cols_.size());
        while (data) {
            int b = std::countr_zero(data);   // bit b of the integer
            data &= data - 1;
            acc ^= cols_[size_t(n - 1 - b)];  // big-endian: low bit is last
        }
        return acc;
    }

    // Syndrome of a full codeword (data followed by check bits).
    uint16_t syndrome(const BitVec& v, size_t pos = 0) const {
        uint16_t s = checksum(v, pos);
        for (int i = 0; i < check_bits_; ++i)
            if (v.get(pos + cols_.size() + size_t(i))) s ^= uint16_t(1u << i);
        return s;
    }

private:
    int check_bits_;
    std::vector<uint16_t> cols_;
};

// The handful of tables in play are small and immutable; cache by shape.
inline const CheckTable& check_table(int check_bits, int data_len) {
    static std::vector<std::unique_ptr<CheckTable>>* cache =
        new std::vector<std::unique_ptr<CheckTable>>();
    for (const auto& t : *cache)
        if (t->check_bits() == check_bits && t->data_len() == data_len) return *t;
    cache->push_back(std::make_unique<CheckTable>(check_bits, data_len));
    return *cache->back();
}

// ---------------------------------------------------------------------------
// packets (held in a uint64, value = big-endian reading of the wire bits)
// ---------------------------------------------------------------------------

struct ParsedPacket {
    uint32_t address = 0;
    uint64_t payload = 0;
};

inline uint64_t build_packet(const PacketGeometry& g, uint32_t address, uint64_t payload) {
    if (address >= (1u << g.address_bits) && address != g.broadcast_address())
        throw std::invalid_argument("address out of range");
    if (g.payload_bits < 64 && (payload >> g.payload_bits) != 0)
        throw std::invalid_argument("payload out of range");
    const auto& t = check_table(g.check_bits, g.address_bits + g.payload_bits);
    uint64_t data = (uint64_t(address) << g.payload_bits) | payload;
    uint16_t chk = t.checksum_word(data);
    // Check bits go out c0 first, i.e. c0 lands in the most significant
    // position of the check field.
    uint64_t chk_wire = 0;
    for (int i = 0; i < g.check_bits; ++i)
        chk_wire = (chk_wire << 1) | ((chk >> i) & 1u);
    return (data << g.check_bits) | chk_wire;
}

inline std::optional<ParsedPacket> parse_packet(const PacketGeometry& g, uint64_t wire) {
    uint64_t data = wire >> g.check_bits;
    uint64_t chk_wire = wire & ((uint64_t(1) << g.check_bits) - 1);
    uint16_t chk = 0;
    for (int i = 0; i < g.check_bits; ++i)
        chk |= uint16_t(((chk_wire >> (g.check_bits - 1 - i)) & 1u) << i);
    const auto& t = check_table(g.check_bits, g.address_bits + g.payload_bits);
    if (t.checksum_word(data) != chk) return std::nullopt;
    ParsedPacket p;
    p.address = uint32_t(data >> g.payload_bits);
    p.payload = data & ((uint64_t(1) << g.payload_bits) - 1);
    return p;
}

inline uint64_t build_half_packet(const PacketGeometry& g, uint32_t address) {
    if (address >= (1u << g.address_bits) && address != g.broadcast_address())
        throw std::invalid_argument("address out of range");
    const auto& t = check_table(g.check_bits, g.address_bits);
    uint16_t chk = t.checksum_word(address);
    uint64_t chk_wire = 0;
    for (int i = 0; i < g.check_bits; ++i)
        chk_wire = (chk_wire << 1) | ((chk >> i) & 1u);
    return (uint64_t(address) << g.check_bits) | chk_wire;
}

inline std::optional<uint32_t> parse_half_packet(const PacketGeometry& g, uint64_t wire) {
    uint64_t addr = wire >> g.check_bits;
    uint64_t chk_wire = wire & ((uint64_t(1) << g.check_bits) - 1);
    uint16_t chk = 0;
    for (int i = 0; i < g.check_bits; ++i)
        chk |= uint16_t(((chk_wire >> (g.check_bits - 1 - i)) & 1u) << i);
    const auto& t = check_table(g.check_bits, g.address_bits);
    if (t.checksum_word(addr) != chk) return std::nullopt;
    return uint32_t(addr);
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

inline BitVec build_block(const BlockGeometry& bg, const BitVec& info) {
    if (int(info.size()) != bg.info_bits)
        throw std::invalid_argument("info length mismatch");
    const auto& t = check_table(bg.check_bits, bg.info_bits);
    uint16_t chk = t.checksum(info);
    BitVec out = info;
    for (int i = 0; i < bg.check_bits; ++i) out.push_back((chk >> i) & 1u);
    return out;
}

inline bool verify_block(const BlockGeometry& bg, const BitVec& block) {
    if (int(block.size()) != bg.block_len) return false;
    const auto& t = check_table(bg.check_bits, bg.info_bits);
    return t.syndrome(block) == 0;
}

inline BitVec block_info(const BlockGeometry& bg, const BitVec& block) {
    return block.slice(0, size_t(bg.info_bits));
}

// Split a block into carrier-packet payload words, first payload first.
inline std::vector<uint64_t> block_payloads(const BlockGeometry& bg, const BitVec& block) {
    std::vector<uint64_t> out;
    out.reserve(size_t(bg.packets_per_block));
    for (int k = 0; k < bg.packets_per_block; ++k)
        out.push_back(block.word_at(size_t(k) * size_t(bg.payload_bits), bg.payload_bits));
    return out;
}

inline BitVec block_from_payloads(const BlockGeometry& bg, const std::vector<uint64_t>& payloads) {
    if (int(payloads.size()) != bg.packets_per_block)
        throw std::invalid_argument("payload count mismatch");
    BitVec block;
    for (uint64_t p : payloads) block.append_word(p, bg.payload_bits);
    return block;
}

// ---------------------------------------------------------------------------
// report segmentation
// ---------------------------------------------------------------------------
//
// Routine (hourly) report, R bits:
//     stream = R data bits ++ whole-report check (C_r = ceil(log2 R) + 1)
//     stream is zero-padded up to a whole number of block info fields,
//     then cut into blocks, each of which gets its own block check.
//
// Urgent report, 500 data bits:
//     one block-sized unit: 500 data ++ 10-bit check ++ 2 zero pad = 512.
//     No second check layer; it rides the block slot directly.

struct SegmentedReport {
    std::vector<BitVec> blocks;          // finished wire blocks
    std::vector<uint64_t> payloads;      // flattened carrier payload words
    int report_check_bits = 0;
    int pad_bits = 0;                    // zeros appended to fill the last block
};

inline SegmentedReport segment_report(const BitVec& report, const BlockGeometry& bg) {
    SegmentedReport out;
    out.report_check_bits = ceil_log2(report.size()) + 1;
    const auto& rt = check_table(out.report_check_bits, int(report.size()));
    uint16_t rchk = rt.checksum(report);

    BitVec stream = report;
    for (int i = 0; i < out.report_check_bits; ++i) stream.push_back((rchk >> i) & 1u);

    size_t info = size_t(bg.info_bits);
    size_t nblocks = (stream.size() + info - 1) / info;
    out.pad_bits = int(nblocks * info - stream.size());
    for (int i = 0; i < out.pad_bits; ++i) stream.push_back(false);

    for (size_t b = 0; b < nblocks; ++b) {
        BitVec blk = build_block(bg, stream.slice(b * info, info));
        auto pl = block_payloads(bg, blk);
        out.payloads.insert(out.payloads.end(), pl.begin(), pl.end());
        out.blocks.push_back(std::move(blk));
    }
    return out;
}

enum class ReassembleStatus { ok, block_check_failed, report_check_failed };

struct ReassembledReport {
    ReassembleStatus status = ReassembleStatus::ok;
    int failed_block = -1;   // when status == block_check_failed
    BitVec report;           // when status == ok
};

inline ReassembledReport reassemble_report(const std::vector<BitVec>& blocks,
                                           const BlockGeometry& bg,
                                           size_t report_bits) {
    ReassembledReport out;
    BitVec stream;
    for (size_t b = 0; b < blocks.size(); ++b) {
        if (!verify_block(bg, blocks[b])) {
            out.status = ReassembleStatus::block_check_failed;
            out.failed_block = int(b);
            return out;
        }
        stream.append(block_info(bg, blocks[b]));
    }
    int rcb = ceil_log2(report_bits) + 1;
    if (stream.size() < report_bits + size_t(rcb))
        throw std::invalid_argument("not enough blocks for report length");
    BitVec report = stream.slice(0, report_bits);
    uint16_t got = uint16_t(0);
    for (int i = 0; i < rcb; ++i)
        got |= uint16_t(uint16_t(stream.get(report_bits + size_t(i))) << i);
    const auto& rt = check_table(rcb, int(report_bits));
    if (rt.checksum(report) != got) {
        out.status = ReassembleStatus::report_check_failed;
        return out;
    }
    out.report = std::move(report);
    return out;
}

// Urgent report: data ++ check ++ zero pad, sized exactly to one block.
inline BitVec build_urgent_unit(const BitVec& data, const BlockGeometry& bg) {
    int cb = ceil_log2(data.size()) + 1;
    int pad = bg.block_len - int(data.size()) - cb;
    if (pad < 0) throw std::invalid_argument("urgent data too long for block");
    const auto& t = check_table(cb, int(data.size()));
    uint16_t chk = t.checksum(data);
    BitVec out = data;
    for (int i = 0; i < cb; ++i) out.push_back((chk >> i) & 1u);
    for (int i = 0; i < pad; ++i) out.push_back(false);
    return out;
}

inline std::optional<BitVec> parse_urgent_unit(const BitVec& unit, size_t data_bits) {
    int cb = ceil_log2(data_bits) + 1;
    if (unit.size() < data_bits + size_t(cb)) return std::nullopt;
    BitVec data = unit.slice(0, data_bits);
    uint16_t got = 0;
    for (int i = 0; i < cb; ++i)
        got |= uint16_t(uint16_t(unit.get(data_bits + size_t(i))) << i);
    const auto& t = check_table(cb, int(data_bits));
    if (t.checksum(data) != got) return std::nullopt;
    return data;
}

// ---------------------------------------------------------------------------
// CRC-16/CCITT (poly 0x1021, init 0xffff) over a bit string.  Used for the
// link-test digests the rate probe asks sensors to echo back; a cheap,
// well-known summary is all that is needed there.
// ---------------------------------------------------------------------------
inline uint16_t crc16_bits(uint64_t data, int nbits) {
    uint16_t crc = 0xffff;
    for (int i = nbits - 1; i >= 0; --i) {
        uint16_t bit = uint16_t((data >> i) & 1u);
        uint16_t msb = uint16_t((crc >> 15) & 1u);
        crc = uint16_t(crc << 1);
        if (msb ^ bit) crc ^= 0x1021;
    }
    return crc;
}

}  // namespace hfnet::codec

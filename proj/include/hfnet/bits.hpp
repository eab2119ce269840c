#pragma once
// ============================================================================
// bits.hpp -- wire-order bit vector
//
// Everything on the air is a bit string, MSB-first.  BitVec stores bits in
// transmission order: bit 0 is the first bit on the wire, packed into bytes
// high bit first.  Field packing helpers read/write big-endian integers so a
// dump of the byte buffer reads left-to-right like the frame diagrams.
// ============================================================================

#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>
#include <bit>
#include <stdexcept>

namespace hfnet {

class BitVec {
public:
    BitVec() = default;
    explicit BitVec(size_t nbits) : nbits_(nbits), bytes_((nbits + 7) / 8, 0) {}

    size_t size() const { return nbits_; }
    bool empty() const { return nbits_ == 0; }

    bool get(size_t i) const {
        return (bytes_[i >> 3] >> (7 - (i & 7))) & 1u;
    }
    void set(size_t i, bool v) {
        uint8_t mask = uint8_t(1u << (7 - (i & 7)));
        if (v) bytes_[i >> 3] |= mask;
        else   bytes_[i >> 3] &= uint8_t(~mask);
    }
    void flip(size_t i) { bytes_[i >> 3] ^= uint8_t(1u << (7 - (i & 7))); }

    void push_back(bool v) {
        if ((nbits_ & 7) == 0) bytes_.push_back(0);
        ++nbits_;
        set(nbits_ - 1, v);
    }

    // Append the low `n` bits of `word`, most significant of those first.
    void append_word(uint64_t word, int n) {
        for (int b = n - 1; b >= 0; --b) push_back((word >> b) & 1u);
    }

    // Read `n` bits starting at `pos` as a big-endian integer.
    uint64_t word_at(size_t pos, int n) const {
        uint64_t w = 0;
        for (int b = 0; b < n; ++b) w = (w << 1) | uint64_t(get(pos + b));
        return w;
    }

    void append(const BitVec& other) {
        for (size_t i = 0; i < other.size(); ++i) push_back(other.get(i));
    }

    BitVec slice(size_t pos, size_t n) const {
        BitVec out;
        out.bytes_.reserve((n + 7) / 8);
        for (size_t i = 0; i < n; ++i) out.push_back(get(pos + i));
        return out;
    }

    size_t popcount() const {
        size_t n = 0;
        for (uint8_t b : bytes_) n += size_t(std::popcount(b));
        return n;  // trailing pad bits are always zero
    }

    bool operator==(const BitVec& o) const {
        return nbits_ == o.nbits_ && bytes_ == o.bytes_;
    }
    bool operator!=(const BitVec& o) const { return !(*this == o); }

    const std::vector<uint8_t>& bytes() const { return bytes_; }

    std::string to_hex() const {
        static const char* digits = "0123456789abcdef";
        std::string s;
        s.reserve(bytes_.size() * 2);
        for (uint8_t b : bytes_) {
            s.push_back(digits[b >> 4]);
            s.push_back(digits[b & 0xf]);
        }
        return s;
    }

    // nbits lets callers round-trip lengths that are not byte multiples.
    static BitVec from_hex(const std::string& hex, size_t nbits) {
        if (hex.size() * 4 < nbits) throw std::invalid_argument("hex too short");
        BitVec v(nbits);
        for (size_t i = 0; i < nbits; ++i) {
            char c = hex[i / 4];
            int nib = (c >= '0' && c <= '9') ? c - '0'
                    : (c >= 'a' && c <= 'f') ? c - 'a' + 10
                    : (c >= 'A' && c <= 'F') ? c - 'A' + 10
                    : throw std::invalid_argument("bad hex digit");
            v.set(i, (nib >> (3 - (i & 3))) & 1);
        }
        return v;
    }

private:
    size_t nbits_ = 0;
    std::vector<uint8_t> bytes_;
};

inline int ceil_log2(uint64_t n) {
    if (n <= 1) return 0;
    return 64 - std::countl_zero(n - 1);
}

}  // namespace hfnet

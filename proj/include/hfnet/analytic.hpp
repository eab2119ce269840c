#pragma once
// ============================================================================
// analytic.hpp -- closed-form link math and small exact models
//
// Companions to the simulator: the same quantities computed from formulas
// (or exact dynamic programs, or focused Monte Carlo) so simulation output
// has something independent to be checked against.
// ============================================================================

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hfnet/codec.hpp"
#include "hfnet/rng.hpp"

namespace hfnet::analytic {

constexpr double kSlowRateBps = 4096.0;
constexpr double kFastRateBps = 40960.0;

// ---------------------------------------------------------------------------
// per-packet probabilities
// ---------------------------------------------------------------------------

// P[no bit of an L-bit packet flips] under i.i.d. bit errors.
inline double packet_success_prob(int packet_len, double ber) {
    return std::pow(1.0 - ber, packet_len);
}

inline double lchoose(int n, int k) {
    return std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) -
           std::lgamma(double(n - k) + 1);
}

// P[corruption slips past the check]: the check catches weights 1-3 and all
// odd weights, so the miss mass is the even-weight tail from 4 up.
inline double undetected_error_prob(int packet_len, double ber) {
    if (ber <= 0.0) return 0.0;
    double acc = 0.0;
    for (int w = 4; w <= packet_len; w += 2) {
        double t = std::exp(lchoose(packet_len, w) + w * std::log(ber) +
                            (packet_len - w) * std::log1p(-ber));
        acc += t;
        if (t < acc * 1e-18) break;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// throughput models (useful bits per second on one link)
// ---------------------------------------------------------------------------

// Packet-level model: payload fraction times the clean-packet rate.
// Lengths too short to carry any payload score zero.
inline double packet_throughput(int packet_len, double ber, double rate_bps,
                                int network_size) {
    int a = ceil_log2(uint64_t(network_size));
    int c = ceil_log2(uint64_t(packet_len)) + 1;
    int payload = packet_len - a - c;
    if (payload <= 0) return 0.0;
    return rate_bps / packet_len * payload * packet_success_prob(packet_len, ber);
}

// Block-level model: adds the block check overhead and the cost of block
// retransmissions caused by undetected packet corruption.  block_len need
// not be a payload multiple here; the exponent is the real packet count.
inline double block_throughput(int packet_len, int block_len, double ber,
                               double rate_bps, int network_size) {
    int a = ceil_log2(uint64_t(network_size));
    int cp = ceil_log2(uint64_t(packet_len)) + 1;
    int payload = packet_len - a - cp;
    if (payload <= 0) return 0.0;
    int cb = ceil_log2(uint64_t(block_len)) + 1;
    int info = block_len - cb;
    if (info <= 0) return 0.0;
    double ps = packet_success_prob(packet_len, ber);
    double pu = undetected_error_prob(packet_len, ber);
    double packets_per_block = double(block_len) / payload;
    return double(info) * (rate_bps / packet_len) * (payload * ps / block_len) *
           std::pow(1.0 - pu, packets_per_block);
}

// P[a finished block fails its own check] -- one or more carrier packets
// was accepted with corruption.
inline double block_retx_prob(int packets_per_block, int packet_len, double ber) {
    return 1.0 - std::pow(1.0 - undetected_error_prob(packet_len, ber),
                          packets_per_block);
}

// ---------------------------------------------------------------------------
// report cost
// ---------------------------------------------------------------------------

// Carrier packets in one segmented routine report.
inline int routine_report_packets(size_t report_bits, const codec::BlockGeometry& bg) {
    size_t stream = report_bits + size_t(ceil_log2(report_bits) + 1);
    size_t nblocks = (stream + size_t(bg.info_bits) - 1) / size_t(bg.info_bits);
    return int(nblocks) * bg.packets_per_block;
}

// Mean send attempts to get `packets` packets accepted (detected failures
// are retried; geometric per packet).
inline double expected_packet_attempts(int packets, int packet_len, double ber) {
    return double(packets) / packet_success_prob(packet_len, ber);
}

// ---------------------------------------------------------------------------
// contention slots: m contenders choose uniformly among n half-slots; a
// half-slot with exactly one contender is recovered.
// ---------------------------------------------------------------------------

inline double contention_expected_successes(int m, int n) {
    if (m == 0) return 0.0;
    return double(m) * std::pow(1.0 - 1.0 / n, m - 1);
}

namespace detail {
// C(b, k) as long double, b small.
inline long double lchoose_ll(int b, int k) {
    static long double lg[130];
    static bool init = false;
    if (!init) {
        lg[0] = 0.0L;
        for (int i = 1; i < 130; ++i) lg[i] = lg[i - 1] + std::log((long double)i);
        init = true;
    }
    return lg[b] - lg[k] - lg[b - k];
}
}  // namespace detail

// Exact distribution of the number of recovered contenders, by dynamic
// programming over slots: conditioned on b contenders left among r slots,
// the count in the next slot is Binomial(b, 1/r).  Exact (up to long double
// rounding), no approximation.  Returns pmf[0..m]; empty when m or n is
// outside the tractable window -- callers should fall back to Monte Carlo.
inline std::vector<double> contention_success_pmf(int m, int n) {
    if (m < 0 || n < 1 || m > 64 || n > 64) return {};
    // state: [balls left][singles so far] -> probability
    std::vector<std::vector<long double>> f(size_t(m + 1),
                                            std::vector<long double>(size_t(m + 1), 0.0L));
    f[size_t(m)][0] = 1.0L;
    for (int j = 0; j < n; ++j) {
        int r = n - j;  // slots remaining, this one included
        std::vector<std::vector<long double>> g(size_t(m + 1),
                                                std::vector<long double>(size_t(m + 1), 0.0L));
        for (int b = 0; b <= m; ++b)
            for (int s = 0; s <= m; ++s) {
                long double w = f[size_t(b)][size_t(s)];
                if (w == 0.0L) continue;
                if (r == 1) {  // everything left lands here
                    g[0][size_t(s + (b == 1 ? 1 : 0))] += w;
                    continue;
                }
                long double lp = std::log((long double)1.0 / r);
                long double lq = std::log((long double)(r - 1) / r);
                for (int k = 0; k <= b; ++k) {
                    long double pk =
                        std::exp(detail::lchoose_ll(b, k) + k * lp + (b - k) * lq);
                    g[size_t(b - k)][size_t(s + (k == 1 ? 1 : 0))] += w * pk;
                }
            }
        f.swap(g);
    }
    std::vector<double> pmf(size_t(m + 1), 0.0);
    for (int s = 0; s <= m; ++s) pmf[size_t(s)] = double(f[0][size_t(s)]);
    return pmf;
}

// P[not a single contender is recovered].  Exact for m, n <= 64; nullopt
// beyond that (use contention_failure_mc).
inline std::optional<double> contention_failure_prob(int m, int n) {
    auto pmf = contention_success_pmf(m, n);
    if (pmf.empty()) return std::nullopt;
    return pmf[0];
}

inline double contention_failure_mc(int m, int n, long trials, uint64_t seed) {
    Rng rng = Rng::stream(seed, 0xc047e57ull);
    std::vector<uint8_t> count(static_cast<size_t>(n), 0);
    std::vector<int> touched;
    touched.reserve(size_t(m));
    long failures = 0;
    for (long t = 0; t < trials; ++t) {
        touched.clear();
        for (int i = 0; i < m; ++i) {
            int slot = int(rng.below(uint32_t(n)));
            if (count[size_t(slot)]++ == 0) touched.push_back(slot);
        }
        bool any_single = false;
        for (int slot : touched) {
            if (count[size_t(slot)] == 1) any_single = true;
            count[size_t(slot)] = 0;
        }
        if (!any_single) ++failures;
    }
    return double(failures) / double(trials);
}

// ---------------------------------------------------------------------------
// network capacity (how many reporting sensors one server can carry)
// ---------------------------------------------------------------------------

struct CapacityRow {
    std::string mode;                  // "slow", "fast", "mixed"
    double packets_per_report = 0.0;   // expected send attempts
    double seconds_per_user = 0.0;     // channel time per hourly report
    long users = 0;                    // sustainable hourly reporters
};

// Frame layout carries 80 data packets per second at the slow rate and 800
// at the fast rate (5 positions x 16 or 160 slots, one frame per second).
constexpr int kSlowDataPerFrame = 80;
constexpr int kFastDataPerFrame = 800;

inline std::vector<CapacityRow> capacity_table(double ber, int packet_len = 32,
                                               int block_len = 512,
                                               int network_size = 1000,
                                               size_t report_bits = 10240) {
    auto pg = codec::packet_geometry(network_size, packet_len);
    auto bg = codec::block_geometry(block_len, pg);
    double attempts = expected_packet_attempts(routine_report_packets(report_bits, bg),
                                               packet_len, ber);
    double slow_spu = attempts / kSlowDataPerFrame;
    double fast_spu = attempts / kFastDataPerFrame;
    double slow_users = 3600.0 / slow_spu;
    double fast_users = 3600.0 / fast_spu;
    return {
        {"slow", attempts, slow_spu, long(slow_users)},
        {"fast", attempts, fast_spu, long(fast_users)},
        {"mixed", attempts, (slow_spu + fast_spu) / 2, long((slow_users + fast_users) / 2)},
    };
}

// ---------------------------------------------------------------------------
// sweeps (rows for the CSV exports)
// ---------------------------------------------------------------------------

struct SweepRow {
    int x = 0;                      // packet or block length
    std::vector<double> y;          // one throughput per BER in the set
};

inline const std::vector<double>& sweep_bers() {
    static const std::vector<double> b = {0.001, 0.005, 0.01, 0.02, 0.05};
    return b;
}

inline std::vector<SweepRow> packet_length_sweep(int network_size = 1000,
                                                 double rate_bps = kSlowRateBps) {
    std::vector<SweepRow> rows;
    for (int len = 8; len <= 1024; len *= 2) {
        SweepRow r;
        r.x = len;
        for (double ber : sweep_bers())
            r.y.push_back(packet_throughput(len, ber, rate_bps, network_size));
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<SweepRow> block_length_sweep(int packet_len = 32,
                                                int network_size = 1000,
                                                double rate_bps = kSlowRateBps) {
    std::vector<SweepRow> rows;
    for (int len = 32; len <= 8192; len += 16) {
        SweepRow r;
        r.x = len;
        for (double ber : sweep_bers())
            r.y.push_back(block_throughput(packet_len, len, ber, rate_bps, network_size));
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// focused link Monte Carlo: one sensor streaming routine reports through a
// selective-repeat loop, no MAC around it.  Serves as an independent oracle
// for both the simulator's per-report cost and the block throughput model.
// ---------------------------------------------------------------------------

struct LinkMcResult {
    double mean_attempts_per_report = 0.0;
    double goodput_bps = 0.0;           // report bits / air time
    double corrupt_accept_rate = 0.0;   // accepted packets that were corrupt
    long reports = 0;
};

// detection semantics: weight 0 accepted clean; weight 1-3 and odd weights
// detected; even weights >= 4 accepted with corruption.  When `real_parse`
// is set, the accept decision for even weights >= 4 instead consults the
// actual check table with the actual flip pattern (strictly fewer accepts).
inline LinkMcResult link_mc_routine(long reports, double ber, uint64_t seed,
                                    bool real_parse = false,
                                    int packet_len = 32, int block_len = 512,
                                    int network_size = 1000,
                                    size_t report_bits = 10240,
                                    double rate_bps = kSlowRateBps) {
    auto pg = codec::packet_geometry(network_size, packet_len);
    auto bg = codec::block_geometry(block_len, pg);
    int need = routine_report_packets(report_bits, bg);
    Rng rng = Rng::stream(seed, 0x11c3a11ull);
    LinkMcResult out;
    out.reports = reports;
    long attempts_total = 0;
    long corrupt_total = 0;
    long accepted_total = 0;
    for (long r = 0; r < reports; ++r) {
        int accepted = 0;
        while (accepted < need) {
            ++attempts_total;
            int w = rng.binomial(packet_len, ber);
            if (w == 0) {
                ++accepted;
                ++accepted_total;
            } else if ((w & 1) == 0 && w >= 4) {
                bool pass = true;
                if (real_parse) {
                    // draw the actual flip positions and test the syndrome
                    const auto& t = codec::check_table(pg.check_bits,
                                                       pg.address_bits + pg.payload_bits);
                    uint64_t mask = 0;
                    while (std::popcount(mask) < w)
                        mask |= uint64_t(1) << rng.below(uint32_t(packet_len));
                    uint16_t syn = 0;
                    uint64_t mm = mask;
                    while (mm) {
                        int bit = std::countr_zero(mm);
                        mm &= mm - 1;
                        int pos = packet_len - 1 - bit;  // wire position
                        syn ^= pos < t.data_len()
                                   ? t.column(pos)
                                   : uint16_t(1u << (pos - t.data_len()));
                    }
                    pass = (syn == 0);
                }
                if (pass) {
                    ++accepted;
                    ++accepted_total;
                    ++corrupt_total;
                }
            }
            // otherwise detected; the sender retries
        }
    }
    out.mean_attempts_per_report = double(attempts_total) / double(reports);
    double air_s = double(attempts_total) * packet_len / rate_bps;
    out.goodput_bps = double(reports) * double(report_bits) / air_s;
    out.corrupt_accept_rate = double(corrupt_total) / double(accepted_total);
    return out;
}

// ---------------------------------------------------------------------------
// model discrepancy table: block-throughput formula vs link Monte Carlo,
// including the sensitivity to a 10% BER bump.  nominal_reference carries
// the design-document values the table is compared against; the contract
// asserted in tests is ordering and rough magnitude, not digit equality.
// ---------------------------------------------------------------------------

struct DiscrepancyRow {
    std::string quantity;
    double model = 0.0;          // block_throughput formula
    double link_mc = 0.0;        // NaN where the MC does not apply
    double nominal_reference = 0.0;  // NaN where no reference exists
};

inline std::vector<DiscrepancyRow> model_discrepancy_table(uint64_t seed,
                                                           long mc_reports = 4000) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto t32a = block_throughput(32, 512, 0.010, kSlowRateBps, 1000);
    auto t32b = block_throughput(32, 512, 0.011, kSlowRateBps, 1000);
    auto t64a = block_throughput(64, 512, 0.010, kSlowRateBps, 1000);
    auto t64b = block_throughput(64, 512, 0.011, kSlowRateBps, 1000);
    auto mc_a = link_mc_routine(mc_reports, 0.010, seed);
    auto mc_b = link_mc_routine(mc_reports, 0.011, seed + 1);
    double drop32 = (t32a - t32b) / t32a * 100.0;
    double drop64 = (t64a - t64b) / t64a * 100.0;
    double mc_drop = (mc_a.goodput_bps - mc_b.goodput_bps) / mc_a.goodput_bps * 100.0;
    return {
        {"goodput_32bit_ber_1.0e-2 [b/s]", t32a, mc_a.goodput_bps, nan},
        {"goodput_32bit_ber_1.1e-2 [b/s]", t32b, mc_b.goodput_bps, nan},
        {"goodput_64bit_ber_1.0e-2 [b/s]", t64a, nan, nan},
        {"goodput_64bit_ber_1.1e-2 [b/s]", t64b, nan, nan},
        {"drop_32bit [%]", drop32, mc_drop, 1.8},
        {"drop_64bit [%]", drop64, nan, 4.1},
    };
}

}  // namespace hfnet::analytic

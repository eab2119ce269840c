// Air-interface arithmetic: exact slot/bit timing, corruption statistics,
// fade bookkeeping, rate plans, and timing-correction round trips.

#include <catch2/catch_amalgamated.hpp>

#include "hfnet/channel.hpp"

using namespace hfnet;
using namespace hfnet::chan;

TEST_CASE("slot and bit timing is exact") {
    CHECK(slot_ns(RateMode::slow) == 7'812'500);
    CHECK(slot_ns(RateMode::fast) == 781'250);
    CHECK(kFrameNs / slot_ns(RateMode::slow) == 128);
    CHECK(kFrameNs / slot_ns(RateMode::fast) == 1280);

    // 32 bits fill a slot exactly; 16 bits exactly half of a slow slot
    CHECK(burst_ns(RateMode::slow, 32) == slot_ns(RateMode::slow));
    CHECK(burst_ns(RateMode::fast, 32) == slot_ns(RateMode::fast));
    CHECK(burst_ns(RateMode::slow, 16) == kHalfSlotSlowNs);

    // tick arithmetic: bit durations are integral in 1/16 ns
    CHECK(kSlowBitTicks * 4096 == kFrameNs * int64_t(kTicksPerNs));
    CHECK(kFastBitTicks * 40960 == kFrameNs * int64_t(kTicksPerNs));
}

TEST_CASE("ideal distance-4 accept rule") {
    CHECK(check_passes_weight(0));
    CHECK_FALSE(check_passes_weight(1));
    CHECK_FALSE(check_passes_weight(2));
    CHECK_FALSE(check_passes_weight(3));
    CHECK(check_passes_weight(4));
    CHECK_FALSE(check_passes_weight(5));
    CHECK(check_passes_weight(6));
    CHECK_FALSE(check_passes_weight(31));
    CHECK(check_passes_weight(32));
}

TEST_CASE("bit corruption statistics") {
    Rng rng(0xc0);
    long flips = 0;
    const int trials = 3000;
    for (int i = 0; i < trials; ++i) {
        BitVec v(512);
        flips += corrupt_bits(v, 0.01, rng);
    }
    double rate = double(flips) / (512.0 * trials);
    CHECK(rate == Catch::Approx(0.01).margin(3 * std::sqrt(0.01 * 0.99 / (512.0 * trials))));

    // flip_mask honors the exact weight
    for (int w : {0, 1, 5, 16, 32}) {
        uint64_t m = flip_mask(32, w, rng);
        CHECK(std::popcount(m) == w);
        CHECK((m >> 32) == 0);
    }
    CHECK(uniform_word(16, rng) <= 0xffff);
}

TEST_CASE("weight sampler reproduces the binomial pmf") {
    WeightSampler ws(32, 0.01);
    Rng rng(0xc1);
    const int trials = 400000;
    std::array<long, 33> hist{};
    for (int i = 0; i < trials; ++i) ++hist[size_t(ws.draw(rng))];
    auto pmf = [](int k) {
        double lp = std::lgamma(33.0) - std::lgamma(double(k) + 1) -
                    std::lgamma(double(32 - k) + 1) + k * std::log(0.01) +
                    (32 - k) * std::log(0.99);
        return std::exp(lp);
    };
    for (int k = 0; k <= 2; ++k) {
        double expect = pmf(k);
        double sigma = std::sqrt(expect * (1 - expect) / trials);
        CHECK(double(hist[size_t(k)]) / trials ==
              Catch::Approx(expect).margin(3.5 * sigma));
    }
}

TEST_CASE("fade process bookkeeping") {
    // rate zero: silent forever
    FadeProcess quiet(0.0, 50'000'000, Rng(1));
    CHECK(quiet.overlaps(0, kFrameNs).empty());

    // busy link: events show up, stay inside the query window, move forward
    FadeProcess fp(2.0, 50'000'000, Rng(2));
    int events = 0;
    for (int s = 0; s < 10; ++s) {
        auto ov = fp.overlaps(s * kFrameNs, (s + 1) * kFrameNs);
        for (auto [a, b] : ov) {
            CHECK(a >= 0);
            CHECK(b <= kFrameNs);
            CHECK(a < b);
        }
        events += int(ov.size());
    }
    CHECK(events >= 8);   // Poisson(20), 3+ sigma band
    CHECK(events <= 40);

    // queries may not go backwards
    CHECK_THROWS_AS(fp.overlaps(0, 1), std::logic_error);

    // an event spanning a window boundary appears in both windows
    FadeProcess fp2(100.0, 50'000'000, Rng(3));
    auto w1 = fp2.overlaps(0, 10'000'000);
    auto w2 = fp2.overlaps(10'000'000, 20'000'000);
    CHECK((w1.size() + w2.size()) >= 1);

    // fade flips: a fade across the whole burst flips about half the bits
    Rng rng(0xc2);
    long flips = 0;
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) {
        BitVec v(32);
        flips += apply_fades(v, RateMode::slow, {{0, kSlowSlotNs}}, rng);
    }
    CHECK(double(flips) / (32.0 * trials) == Catch::Approx(0.5).margin(0.01));

    // a fade clipped to the tail touches only the covered bits
    BitVec v(32);
    apply_fades(v, RateMode::slow, {{kSlowSlotNs / 2, kSlowSlotNs}}, rng);
    for (size_t i = 0; i < 16; ++i) CHECK_FALSE(v.get(i));
}

TEST_CASE("rate plans") {
    RatePlan def;
    CHECK(def.at(0) == RateMode::slow);
    CHECK(def.at(INT64_MAX / 4) == RateMode::slow);

    RatePlan plan({{0, RateMode::slow},
                   {100 * kFrameNs, RateMode::fast},
                   {200 * kFrameNs, RateMode::slow}});
    CHECK(plan.at(0) == RateMode::slow);
    CHECK(plan.at(99 * kFrameNs) == RateMode::slow);
    CHECK(plan.at(100 * kFrameNs) == RateMode::fast);
    CHECK(plan.at(199 * kFrameNs + 1) == RateMode::fast);
    CHECK(plan.at(200 * kFrameNs) == RateMode::slow);
    CHECK(plan.transitions() == 2);

    CHECK_THROWS(RatePlan({{5, RateMode::slow}}));                      // must start at 0
    CHECK_THROWS(RatePlan({{0, RateMode::slow}, {0, RateMode::fast}})); // strictly increasing

    // sampled dwells: 6 h mean dwell over 24 h gives 4 expected transitions
    double total = 0;
    const int samples = 400;
    for (int i = 0; i < samples; ++i) {
        auto p = RatePlan::sampled(6 * 3600.0, int64_t(24) * 3600 * kFrameNs,
                                   RateMode::slow, Rng::stream(77, 1, uint64_t(i)));
        total += p.transitions();
    }
    CHECK(total / samples == Catch::Approx(4.0).margin(0.5));
}

TEST_CASE("arrival offset arithmetic") {
    LinkState link;
    link.tof_ns = 14'000'000;      // 14 ms away
    link.tof_hat_ns = 14'000'000;  // perfectly calibrated
    CHECK(link.arrival_offset_ns(0, 0) == 0);

    // a 100 us distance misestimate shows up doubled
    link.tof_hat_ns = 13'900'000;
    CHECK(link.arrival_offset_ns(0, 0) == 200'000);
    link.tof_hat_ns = 14'100'000;
    CHECK(link.arrival_offset_ns(0, 0) == -200'000);

    // drift accumulates with time since the frame-start sync
    link.tof_hat_ns = 14'000'000;
    link.clock_drift_per_s = 1.157e-9;  // 1e-4 s/day
    CHECK(link.arrival_offset_ns(kFrameNs, kFrameNs) == 1);  // ~1.16 ns, rounds to 1

    // tof drift moves the true distance between frames
    link.clock_drift_per_s = 0;
    link.tof_drift_per_s = 1000.0;  // 1 us/s
    CHECK(link.tof_true_at(10 * kFrameNs) == 14'010'000);
    CHECK(link.arrival_offset_ns(0, 10 * kFrameNs) == 20'000);
}

TEST_CASE("impingement threshold is a quarter slot") {
    CHECK_FALSE(impinges(kSlowSlotNs / 4, RateMode::slow));      // exactly at bound
    CHECK(impinges(kSlowSlotNs / 4 + 1, RateMode::slow));
    CHECK(impinges(-(kSlowSlotNs / 4 + 1), RateMode::slow));
    CHECK_FALSE(impinges(0, RateMode::slow));
    CHECK(impinges(kFastSlotNs, RateMode::fast));
    CHECK_FALSE(impinges(kFastSlotNs / 8, RateMode::fast));
}

TEST_CASE("timing corrections round-trip and converge") {
    // encode/decode identity across the representable range
    for (int64_t ns : {0ll, 2500ll, -2500ll, 1'000'000ll, -9'999'000ll, 10'237'500ll})
        CHECK(decode_calibration(encode_calibration(ns)) ==
              (ns / 2500) * 2500 + ((ns % 2500) * 2 >= 2500 ? 2500 : ((ns % 2500) * 2 <= -2500 ? -2500 : 0)));

    // quantization error is at most half a tick
    Rng rng(0xc3);
    for (int i = 0; i < 2000; ++i) {
        int64_t ns = int64_t(rng.below(20'000'000)) - 10'000'000;
        int64_t back = decode_calibration(encode_calibration(ns));
        if (ns > 10'237'500 || ns < -10'240'000) continue;  // clamped region
        CHECK(std::abs(back - ns) <= kCalibTickNs / 2);
    }

    // worst-case startup: true tof 20 ms, assumed 0.  One round saturates
    // the argument, the second lands within half a tick.
    LinkState link;
    link.tof_ns = 20'000'000;
    link.tof_hat_ns = 0;
    for (int round = 0; round < 2; ++round) {
        int64_t offset = link.arrival_offset_ns(0, 0);
        int64_t correction = offset / 2;
        link.tof_hat_ns += decode_calibration(encode_calibration(correction));
    }
    CHECK(std::abs(link.arrival_offset_ns(0, 0)) <= kCalibTickNs);  // 2 * half tick
    CHECK_FALSE(impinges(link.arrival_offset_ns(0, 0), RateMode::fast));
}

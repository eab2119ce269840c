#pragma once
// ============================================================================
// scenario.hpp -- run configuration
//
// A scenario JSON fully determines a simulation run: two runs with the same
// scenario and seed are byte-identical.  Every field has a default, and the
// all-defaults file {} is the baseline system: 1000 sensors, BER 1e-2, slow
// rate, hourly reports, 16 expected emergency contenders, 15 s deadline.
//
// Parsing is strict: an unknown key anywhere is an error naming the key by
// its dotted path ("channel.bre"), because a silently ignored typo in an
// experiment config is worse than a refusal to run.
// ============================================================================

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfnet/channel.hpp"
#include "hfnet/codec.hpp"

namespace hfnet::sim {

using chan::RateMode;
using nlohmann::ordered_json;

struct ScenarioError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// What the propagation medium supports, as opposed to what the protocol is
// currently using.  "sampled" draws alternating exponential dwells so rate
// adaptation has something to chase.
enum class ChannelCapability { slow, fast, sampled };

struct ChannelSpec {
    double ber = 0.01;
    double ber_fast_unsupported = 0.2;  // fast bursts when only slow propagates
    double fade_rate_hz = 0.0;
    double fade_doppler_hz = 10.0;
    chan::DetectionModel detection = chan::DetectionModel::ideal_hd4;
    ChannelCapability capability = ChannelCapability::fast;
    double sampled_dwell_s = 300.0;     // for capability == sampled
    RateMode sampled_first = RateMode::fast;
};

struct TimingSpec {
    double tof_max_ms = 20.0;        // sensors drawn uniform in [0, max]
    double tof_drift_ms_per_s = 0.0; // true flight time wanders
    double clock_drift_ppm = 0.0;    // sensor oscillator error
    bool start_calibrated = true;    // false = cold start, 10 ms prior estimate
};

struct ProtocolSpec {
    RateMode initial_rate = RateMode::slow;
    double probe_interval_s = 0.0;   // 0 disables upgrade probing
    bool report_phase_staggered = false;  // default: everyone reports on the hour
    int staleness_window_s = 600;
    // A report's data lane is released once its outstanding count drops to
    // this threshold; the remainder flows through explicit retransmit
    // requests.  24 balances lane capacity against the repair channel.
    int hourly_release_threshold = 24;
};

struct EpisodeSpec {
    double t_s = 0.0;
    std::optional<int> contenders;   // override the global contender spec
    double straggler_delay_s = -1.0; // >= 0 adds one late detector
};

struct EmergencySpec {
    double deadline_s = 15.0;
    int contenders = 16;             // fixed count ...
    double poisson_mean = -1.0;      // ... unless > 0, then Poisson-drawn
    double detection_spread_ms = 0.0;
    std::vector<EpisodeSpec> episodes;
};

struct Scenario {
    int network_size = 1000;
    double horizon_s = 3600.0;
    uint64_t seed = 1;
    int packet_bits = 32;
    int block_bits = 512;
    ChannelSpec channel;
    TimingSpec timing;
    ProtocolSpec protocol;
    EmergencySpec emergency;
    bool trace = false;

    int frames() const { return int(horizon_s); }
    int64_t horizon_ns() const { return int64_t(frames()) * chan::kFrameNs; }

    // The address field is a deployment constant, not a function of how many
    // stations happen to be enrolled: every sensor speaks the same wire format
    // whether it has 9 neighbours or 900.  1024 slots = up to 1023 stations
    // plus the all-ones broadcast address.
    static constexpr int kAddressSlots = 1024;

    codec::PacketGeometry packet_geometry() const {
        return codec::packet_geometry(kAddressSlots, packet_bits);
    }
    codec::BlockGeometry block_geometry() const {
        return codec::block_geometry(block_bits, packet_geometry());
    }

    ordered_json to_json() const;
};

// ---------------------------------------------------------------------------
// strict parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string dotted(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

inline void reject_unknown(const ordered_json& j, const std::string& path,
                           std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw ScenarioError("expected an object at '" + (path.empty() ? "<root>" : path) + "'");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) { known = true; break; }
        if (!known)
            throw ScenarioError("unknown key: " + dotted(path, item.key()));
    }
}

template <typename T>
T field(const ordered_json& j, const std::string& path, const char* key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ScenarioError("bad value for key: " + dotted(path, key));
    }
}

inline void check(bool ok, const std::string& what) {
    if (!ok) throw ScenarioError(what);
}

}  // namespace detail

inline Scenario scenario_from_json(const ordered_json& j) {
    using namespace detail;
    Scenario s;
    reject_unknown(j, "", {"network_size", "horizon_s", "seed", "geometry", "channel",
                           "timing", "protocol", "emergency", "trace"});
    s.network_size = field(j, "", "network_size", s.network_size);
    s.horizon_s = field(j, "", "horizon_s", s.horizon_s);
    s.seed = field(j, "", "seed", s.seed);
    s.trace = field(j, "", "trace", s.trace);

    if (j.contains("geometry")) {
        const auto& g = j.at("geometry");
        reject_unknown(g, "geometry", {"packet_bits", "block_bits"});
        s.packet_bits = field(g, "geometry", "packet_bits", s.packet_bits);
        s.block_bits = field(g, "geometry", "block_bits", s.block_bits);
    }

    if (j.contains("channel")) {
        const auto& c = j.at("channel");
        reject_unknown(c, "channel",
                       {"ber", "ber_fast_unsupported", "fade_rate_hz", "fade_doppler_hz",
                        "detection_model", "capability"});
        s.channel.ber = field(c, "channel", "ber", s.channel.ber);
        s.channel.ber_fast_unsupported =
            field(c, "channel", "ber_fast_unsupported", s.channel.ber_fast_unsupported);
        s.channel.fade_rate_hz = field(c, "channel", "fade_rate_hz", s.channel.fade_rate_hz);
        s.channel.fade_doppler_hz =
            field(c, "channel", "fade_doppler_hz", s.channel.fade_doppler_hz);
        std::string dm = field<std::string>(c, "channel", "detection_model", "ideal_hd4");
        if (dm == "ideal_hd4") s.channel.detection = chan::DetectionModel::ideal_hd4;
        else if (dm == "coded") s.channel.detection = chan::DetectionModel::coded;
        else throw ScenarioError("bad value for key: channel.detection_model");
        if (c.contains("capability")) {
            const auto& cap = c.at("capability");
            if (cap.is_string()) {
                std::string v = cap.get<std::string>();
                if (v == "slow") s.channel.capability = ChannelCapability::slow;
                else if (v == "fast") s.channel.capability = ChannelCapability::fast;
                else throw ScenarioError("bad value for key: channel.capability");
            } else {
                reject_unknown(cap, "channel.capability", {"mean_dwell_s", "first"});
                s.channel.capability = ChannelCapability::sampled;
                s.channel.sampled_dwell_s =
                    field(cap, "channel.capability", "mean_dwell_s", s.channel.sampled_dwell_s);
                std::string f = field<std::string>(cap, "channel.capability", "first", "fast");
                if (f == "slow") s.channel.sampled_first = RateMode::slow;
                else if (f == "fast") s.channel.sampled_first = RateMode::fast;
                else throw ScenarioError("bad value for key: channel.capability.first");
            }
        }
    }

    if (j.contains("timing")) {
        const auto& t = j.at("timing");
        reject_unknown(t, "timing", {"tof_max_ms", "tof_drift_ms_per_s", "clock_drift_ppm",
                                     "initial_calibration"});
        s.timing.tof_max_ms = field(t, "timing", "tof_max_ms", s.timing.tof_max_ms);
        s.timing.tof_drift_ms_per_s =
            field(t, "timing", "tof_drift_ms_per_s", s.timing.tof_drift_ms_per_s);
        s.timing.clock_drift_ppm = field(t, "timing", "clock_drift_ppm", s.timing.clock_drift_ppm);
        std::string ic = field<std::string>(t, "timing", "initial_calibration", "calibrated");
        if (ic == "calibrated") s.timing.start_calibrated = true;
        else if (ic == "cold") s.timing.start_calibrated = false;
        else throw ScenarioError("bad value for key: timing.initial_calibration");
    }

    if (j.contains("protocol")) {
        const auto& p = j.at("protocol");
        reject_unknown(p, "protocol",
                       {"initial_rate", "probe_interval_s", "report_phase",
                        "staleness_window_s", "hourly_release_threshold"});
        std::string ir = field<std::string>(p, "protocol", "initial_rate", "slow");
        if (ir == "slow") s.protocol.initial_rate = RateMode::slow;
        else if (ir == "fast") s.protocol.initial_rate = RateMode::fast;
        else throw ScenarioError("bad value for key: protocol.initial_rate");
        s.protocol.probe_interval_s =
            field(p, "protocol", "probe_interval_s", s.protocol.probe_interval_s);
        std::string rp = field<std::string>(p, "protocol", "report_phase", "aligned");
        if (rp == "aligned") s.protocol.report_phase_staggered = false;
        else if (rp == "staggered") s.protocol.report_phase_staggered = true;
        else throw ScenarioError("bad value for key: protocol.report_phase");
        s.protocol.staleness_window_s =
            field(p, "protocol", "staleness_window_s", s.protocol.staleness_window_s);
        s.protocol.hourly_release_threshold =
            field(p, "protocol", "hourly_release_threshold", s.protocol.hourly_release_threshold);
    }

    if (j.contains("emergency")) {
        const auto& e = j.at("emergency");
        reject_unknown(e, "emergency", {"deadline_s", "contenders", "detection_spread_ms",
                                        "episodes"});
        s.emergency.deadline_s = field(e, "emergency", "deadline_s", s.emergency.deadline_s);
        if (e.contains("contenders")) {
            const auto& c = e.at("contenders");
            if (c.is_number_integer()) {
                s.emergency.contenders = c.get<int>();
            } else {
                reject_unknown(c, "emergency.contenders", {"poisson_mean"});
                s.emergency.poisson_mean =
                    field(c, "emergency.contenders", "poisson_mean", 16.0);
            }
        }
        s.emergency.detection_spread_ms =
            field(e, "emergency", "detection_spread_ms", s.emergency.detection_spread_ms);
        if (e.contains("episodes")) {
            const auto& eps = e.at("episodes");
            if (!eps.is_array()) throw ScenarioError("bad value for key: emergency.episodes");
            for (size_t i = 0; i < eps.size(); ++i) {
                const auto& it = eps[i];
                EpisodeSpec ep;
                std::string path = "emergency.episodes[" + std::to_string(i) + "]";
                if (it.is_number()) {
                    ep.t_s = it.get<double>();
                } else {
                    reject_unknown(it, path, {"t_s", "contenders", "straggler_delay_s"});
                    ep.t_s = field(it, path, "t_s", 0.0);
                    if (it.contains("contenders"))
                        ep.contenders = field(it, path, "contenders", 0);
                    ep.straggler_delay_s = field(it, path, "straggler_delay_s", -1.0);
                }
                s.emergency.episodes.push_back(ep);
            }
        }
    }

    // Cross-field validation.  The geometry constructors do their own.
    detail::check(s.network_size >= 2, "network_size must be >= 2");
    detail::check(s.network_size <= Scenario::kAddressSlots - 2,
                  "network_size too large for the address space");
    detail::check(s.horizon_s >= 1.0, "horizon_s must cover at least one frame");
    detail::check(s.channel.ber >= 0.0 && s.channel.ber < 1.0, "channel.ber must be in [0,1)");
    detail::check(s.channel.ber_fast_unsupported >= 0.0 && s.channel.ber_fast_unsupported < 1.0,
                  "channel.ber_fast_unsupported must be in [0,1)");
    detail::check(s.channel.fade_rate_hz >= 0.0, "channel.fade_rate_hz must be >= 0");
    detail::check(s.channel.fade_doppler_hz > 0.0, "channel.fade_doppler_hz must be > 0");
    detail::check(s.channel.sampled_dwell_s > 0.0, "channel.capability.mean_dwell_s must be > 0");
    detail::check(s.timing.tof_max_ms >= 0.0 && s.timing.tof_max_ms <= 20.0,
                  "timing.tof_max_ms must be in [0, 20]");
    detail::check(s.protocol.probe_interval_s >= 0.0, "protocol.probe_interval_s must be >= 0");
    detail::check(s.protocol.staleness_window_s > 0, "protocol.staleness_window_s must be > 0");
    detail::check(s.protocol.hourly_release_threshold >= 0,
                  "protocol.hourly_release_threshold must be >= 0");
    detail::check(s.emergency.deadline_s > 0.0, "emergency.deadline_s must be > 0");
    detail::check(s.emergency.contenders >= 1, "emergency.contenders must be >= 1");
    detail::check(s.emergency.contenders <= s.network_size,
                  "emergency.contenders exceeds network_size");
    double prev = -1.0;
    for (const auto& ep : s.emergency.episodes) {
        detail::check(ep.t_s >= 0.0 && ep.t_s < s.horizon_s,
                      "emergency episode outside the horizon");
        detail::check(ep.t_s > prev, "emergency episodes must be strictly increasing");
        if (ep.contenders)
            detail::check(*ep.contenders >= 1 && *ep.contenders <= s.network_size,
                          "per-episode contenders out of range");
        prev = ep.t_s;
    }
    s.packet_geometry();  // throws on a bad geometry
    s.block_geometry();
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError("scenario is not valid JSON: " + std::string(e.what()));
    }
    return scenario_from_json(j);
}

// Echo of the effective configuration, defaults filled in.  Feeding this
// back through scenario_from_json reproduces the same Scenario.
inline ordered_json Scenario::to_json() const {
    ordered_json j;
    j["network_size"] = network_size;
    j["horizon_s"] = horizon_s;
    j["seed"] = seed;
    j["geometry"] = {{"packet_bits", packet_bits}, {"block_bits", block_bits}};
    ordered_json c;
    c["ber"] = channel.ber;
    c["ber_fast_unsupported"] = channel.ber_fast_unsupported;
    c["fade_rate_hz"] = channel.fade_rate_hz;
    c["fade_doppler_hz"] = channel.fade_doppler_hz;
    c["detection_model"] =
        channel.detection == chan::DetectionModel::ideal_hd4 ? "ideal_hd4" : "coded";
    switch (channel.capability) {
        case ChannelCapability::slow: c["capability"] = "slow"; break;
        case ChannelCapability::fast: c["capability"] = "fast"; break;
        case ChannelCapability::sampled:
            c["capability"] = {{"mean_dwell_s", channel.sampled_dwell_s},
                               {"first", channel.sampled_first == RateMode::slow ? "slow" : "fast"}};
            break;
    }
    j["channel"] = c;
    j["timing"] = {{"tof_max_ms", timing.tof_max_ms},
                   {"tof_drift_ms_per_s", timing.tof_drift_ms_per_s},
                   {"clock_drift_ppm", timing.clock_drift_ppm},
                   {"initial_calibration", timing.start_calibrated ? "calibrated" : "cold"}};
    ordered_json p;
    p["initial_rate"] = protocol.initial_rate == RateMode::slow ? "slow" : "fast";
    p["probe_interval_s"] = protocol.probe_interval_s;
    p["report_phase"] = protocol.report_phase_staggered ? "staggered" : "aligned";
    p["staleness_window_s"] = protocol.staleness_window_s;
    p["hourly_release_threshold"] = protocol.hourly_release_threshold;
    j["protocol"] = p;
    ordered_json e;
    e["deadline_s"] = emergency.deadline_s;
    if (emergency.poisson_mean > 0.0)
        e["contenders"] = {{"poisson_mean", emergency.poisson_mean}};
    else
        e["contenders"] = emergency.contenders;
    e["detection_spread_ms"] = emergency.detection_spread_ms;
    ordered_json eps = ordered_json::array();
    for (const auto& ep : emergency.episodes) {
        if (!ep.contenders && ep.straggler_delay_s < 0.0) {
            eps.push_back(ep.t_s);
        } else {
            ordered_json o;
            o["t_s"] = ep.t_s;
            if (ep.contenders) o["contenders"] = *ep.contenders;
            if (ep.straggler_delay_s >= 0.0) o["straggler_delay_s"] = ep.straggler_delay_s;
            eps.push_back(o);
        }
    }
    e["episodes"] = eps;
    j["emergency"] = e;
    j["trace"] = trace;
    return j;
}

}  // namespace hfnet::sim

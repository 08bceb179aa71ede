#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "realm/models.hpp"

namespace realm {

/// A scenario file failed to parse or describes an invalid configuration.
/// Distinct from numerical check failures, which are results, not errors.
class ScenarioError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr const char* kScenarioSchema = "scenario-v1";

namespace detail {

using Json = nlohmann::json;

inline void expect_keys(const Json& obj, std::initializer_list<const char*> allowed,
                        const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) known = true;
        if (!known)
            throw ScenarioError("unknown field '" + it.key() + "' in " + where);
    }
}

inline const Json& member(const Json& obj, const char* key) {
    static const Json missing;
    auto it = obj.find(key);
    return it == obj.end() ? missing : *it;
}

inline bool field_bool(const Json& obj, const char* key, bool fallback) {
    const Json& v = member(obj, key);
    if (v.is_null()) return fallback;
    if (!v.is_boolean())
        throw ScenarioError(std::string("field '") + key + "' must be a boolean");
    return v.get<bool>();
}

inline int field_int(const Json& obj, const char* key, int fallback) {
    const Json& v = member(obj, key);
    if (v.is_null()) return fallback;
    if (!v.is_number_integer())
        throw ScenarioError(std::string("field '") + key + "' must be an integer");
    return v.get<int>();
}

inline double field_double(const Json& obj, const char* key, double fallback) {
    const Json& v = member(obj, key);
    if (v.is_null()) return fallback;
    if (!v.is_number())
        throw ScenarioError(std::string("field '") + key + "' must be a number");
    return v.get<double>();
}

inline std::vector<double> field_double_list(const Json& obj, const char* key,
                                             std::vector<double> fallback) {
    const Json& v = member(obj, key);
    if (v.is_null()) return fallback;
    if (!v.is_array())
        throw ScenarioError(std::string("field '") + key + "' must be an array of numbers");
    std::vector<double> out;
    for (const Json& e : v) {
        if (!e.is_number())
            throw ScenarioError(std::string("field '") + key +
                                "' must be an array of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

inline VolumePartition field_volumes(const Json& obj, const char* key,
                                     VolumePartition fallback) {
    const Json& v = member(obj, key);
    if (v.is_null()) return fallback;
    if (!v.is_array())
        throw ScenarioError(std::string("field '") + key +
                            "' must be an array of site-index arrays");
    VolumePartition p;
    for (const Json& vol : v) {
        if (!vol.is_array())
            throw ScenarioError(std::string("field '") + key +
                                "' must be an array of site-index arrays");
        std::vector<int> sites;
        for (const Json& site : vol) {
            if (!site.is_number_integer())
                throw ScenarioError(std::string("field '") + key +
                                    "' entries must be integer site indices");
            sites.push_back(site.get<int>());
        }
        p.volumes.push_back(std::move(sites));
    }
    return p;
}

}  // namespace detail

/// Parses a scenario description. The format is strict: unknown fields are
/// errors, so a typo cannot silently fall back to a default.
///
/// {
///   "schema": "scenario-v1",
///   "type": "spin_measurement" | "two_slit" | "chain" | "wave_packet",
///   "name": optional string override,
///   "params": { type-specific, see below },
///   "tolerances": { "tol_proj": f, "tol_decoh": f, "tol_rank": f }
/// }
///
/// params by type:
///   spin_measurement: first_person (bool, default false)
///   two_slit:         (none)
///   chain:            n_sites (int, 4), volumes ([[int]], [[0,1],[2,3]]),
///                     range_boundaries ([double], [-0.25,0.25,0.75,1.25]),
///                     steps (int, 3)
///   wave_packet:      n_sites (int, 12), hop (double, 1.0),
///                     packet_width (double, 1.5)
inline Scenario parse_scenario(const std::string& text) {
    detail::Json root;
    try {
        root = detail::Json::parse(text);
    } catch (const detail::Json::parse_error& e) {
        throw ScenarioError(std::string("invalid JSON: ") + e.what());
    }
    if (!root.is_object()) throw ScenarioError("scenario must be a JSON object");
    detail::expect_keys(root, {"schema", "type", "name", "params", "tolerances"},
                        "the scenario");

    const detail::Json& schema = detail::member(root, "schema");
    if (!schema.is_string() || schema.get<std::string>() != kScenarioSchema)
        throw ScenarioError(std::string("field 'schema' must be \"") + kScenarioSchema +
                            "\"");
    const detail::Json& type = detail::member(root, "type");
    if (!type.is_string()) throw ScenarioError("field 'type' must be a string");

    detail::Json params = detail::member(root, "params");
    if (params.is_null()) params = detail::Json::object();
    if (!params.is_object()) throw ScenarioError("field 'params' must be an object");

    const std::string kind = type.get<std::string>();
    auto build = [&]() -> Scenario {
        if (kind == "spin_measurement") {
            detail::expect_keys(params, {"first_person"}, "params");
            return build_spin_measurement_scenario(
                detail::field_bool(params, "first_person", false));
        }
        if (kind == "two_slit") {
            detail::expect_keys(params, {}, "params");
            return build_two_slit_scenario();
        }
        if (kind == "chain") {
            detail::expect_keys(params, {"n_sites", "volumes", "range_boundaries", "steps"},
                                "params");
            int n = detail::field_int(params, "n_sites", 4);
            VolumePartition vols =
                detail::field_volumes(params, "volumes", VolumePartition{{{0, 1}, {2, 3}}});
            RangeSpec ranges(detail::field_double_list(
                params, "range_boundaries", {-0.25, 0.25, 0.75, 1.25}));
            return build_chain_scenario(n, vols, ranges,
                                        detail::field_int(params, "steps", 3));
        }
        if (kind == "wave_packet") {
            detail::expect_keys(params, {"n_sites", "hop", "packet_width"}, "params");
            return build_wave_packet_scenario(
                detail::field_int(params, "n_sites", 12),
                detail::field_double(params, "hop", 1.0),
                detail::field_double(params, "packet_width", 1.5));
        }
        throw ScenarioError("unknown scenario type '" + kind + "'");
    };

    Scenario s = [&]() {
        try {
            return build();
        } catch (const ScenarioError&) {
            throw;
        } catch (const std::exception& e) {
            throw ScenarioError("invalid scenario parameters: " + std::string(e.what()));
        }
    }();

    const detail::Json& name = detail::member(root, "name");
    if (!name.is_null()) {
        if (!name.is_string()) throw ScenarioError("field 'name' must be a string");
        s.name = name.get<std::string>();
    }

    const detail::Json& tols = detail::member(root, "tolerances");
    if (!tols.is_null()) {
        if (!tols.is_object()) throw ScenarioError("field 'tolerances' must be an object");
        detail::expect_keys(tols, {"tol_proj", "tol_decoh", "tol_rank"}, "tolerances");
        s.tol.tol_proj = detail::field_double(tols, "tol_proj", s.tol.tol_proj);
        s.tol.tol_decoh = detail::field_double(tols, "tol_decoh", s.tol.tol_decoh);
        s.tol.tol_rank = detail::field_double(tols, "tol_rank", s.tol.tol_rank);
        for (double t : {s.tol.tol_proj, s.tol.tol_decoh, s.tol.tol_rank})
            if (!(t > 0.0)) throw ScenarioError("tolerances must be positive");
    }
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_scenario(buf.str());
    } catch (const ScenarioError& e) {
        throw ScenarioError(path + ": " + e.what());
    }
}

}  // namespace realm

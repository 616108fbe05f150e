#pragma once
#include <cstdint>
#include <ctime>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vsdr/errors.hpp"

namespace vsdr {

inline constexpr const char* kToolkitVersion = "1.0.0";

// Provenance record written alongside every output set. Reruns with the same
// manifest produce bit-identical outputs; only generated_at differs between
// manifests of identical runs.
struct RunManifest {
    std::string command;
    std::string config_path;   // empty when built-in defaults were used
    std::string scenario_path; // empty when the command takes no scenario
    std::string output_dir;
    std::uint64_t seed = 0; // fit restarts; unused elsewhere
    std::string version = kToolkitVersion;
    // command-specific settings and results, insertion-ordered for stable output
    std::vector<std::pair<std::string, nlohmann::json>> extra;

    void set(const std::string& key, nlohmann::json value) {
        for (auto& [k, v] : extra) {
            if (k == key) {
                v = std::move(value);
                return;
            }
        }
        extra.emplace_back(key, std::move(value));
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config"] = config_path;
        j["scenario"] = scenario_path;
        j["output_dir"] = output_dir;
        j["seed"] = seed;
        j["version"] = version;
        std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        j["generated_at"] = buf;
        for (const auto& [k, v] : extra) j[k] = v;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw ValidationError("manifest: cannot open " + path + " for writing");
        out << to_json().dump(2) << "\n";
    }
};

} // namespace vsdr

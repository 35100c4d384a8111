#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sara/diagnostics.hpp"
#include "sara/sampler.hpp"
#include "sara/trainer.hpp"

// Flat-section key/value config files:
//
//   # comment           ; comment
//   [section]
//   key = value         values may be "quoted"; lists are comma separated
//
// Every key is addressed as section.key. Unknown sections or keys, malformed
// values and duplicate keys are errors reported with file and line.
namespace sara {

struct Config {
    TrainConfig train;
    sampler::SamplerConfig sampler;
    diagnostics::ReportConfig report;
    std::string output_root;
    // section.key names that were set explicitly (file or override).
    std::set<std::string> present;
};

struct ConfigEntry {
    std::string key;  // section.key
    std::string value;
    std::size_t line = 0;
};

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& source = "<config>");

// Sets one section.key; throws ConfigError naming the key on failure.
void apply_setting(Config& cfg, const std::string& key, const std::string& value);

Config config_from_text(const std::string& text, const std::string& source = "<config>");
Config load_config(const std::filesystem::path& path);

// Applies "section.key=value" overrides in order.
void apply_overrides(Config& cfg, const std::vector<std::string>& overrides);

// Effective values of every key; train_only restricts to the keys that
// define a TrainState (what checkpoints store).
std::map<std::string, std::string> to_key_values(const Config& cfg, bool train_only = false);
std::string to_config_text(const Config& cfg);

std::vector<std::string> known_keys();

// Rebuilds a TrainConfig from stored key/values (e.g. a checkpoint manifest).
TrainConfig train_config_from(const std::map<std::string, std::string>& kv);

}  // namespace sara

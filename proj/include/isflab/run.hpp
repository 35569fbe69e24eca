#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "isflab/corpus.hpp"
#include "isflab/model.hpp"
#include "isflab/probe.hpp"
#include "json.hpp"

namespace isflab {

struct ProbeSpec {
  std::string position = "last-graph";
  std::vector<int> layers;  // empty = all
  std::string split = "test";
  std::size_t limit = 1000;  // 0 = whole split
  int restarts = 10;
};

// Synthetic molecule source used when task.molecules is empty.
struct MoleculeSource {
  std::size_t count = 0;
  IntRange atoms{2, 9};
};

struct RunConfig {
  TaskSpec task;
  ModelConfig model;
  TrainConfig train;
  ProbeSpec probe;
  MoleculeSource molecules;
  std::uint64_t seed = 0;  // copied into task, train and probe seeds
  int workers = 1;
  std::string out;
};

nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

std::vector<std::string> preset_names();
// Partial config document merged over the defaults.
nlohmann::json preset_json(std::string_view name);

// Layered config: defaults, preset, config file, then dotted-path overrides
// ("model.layers=3"). Values parse as JSON and fall back to plain strings.
struct ConfigLayers {
  std::optional<std::string> preset;
  std::optional<std::filesystem::path> file;
  std::vector<std::string> overrides;
};
nlohmann::json layered_config(const ConfigLayers& layers);
void apply_override(nlohmann::json& doc, std::string_view assignment);

// Builds the task's dataset (and the Tins control), reading or filling the
// cache directory when one is given.
BuildResult obtain_dataset(const RunConfig& c, const std::optional<std::filesystem::path>& cache);

// Stable key for a task spec plus molecule source.
std::string dataset_key(const RunConfig& c);

}  // namespace isflab

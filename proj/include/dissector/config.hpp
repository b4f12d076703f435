#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dissector/retrieval.hpp"
#include "dissector/synthetic.hpp"
#include "dissector/train.hpp"

namespace dissector {

/// Everything the CLI and the acceptance run read from the config file.
/// Defaults are the desk-scale settings used on the synthetic task.
struct AppConfig {
    RetrievalConfig retrieval{.k1 = 4, .k2 = 0, .block_budget = 40, .negative_lo = 4, .negative_hi = 40};
    Bm25Params bm25;
    bool title_ranker = true;
    int vocab_min_count = 4;
    ModelSpec model;
    TrainConfig train;
    MaskerTrainConfig masker;
    SyntheticSpec synthetic;

    AppConfig();
    nlohmann::json to_json() const;
    static AppConfig from_json(const nlohmann::json& j);
};

/// YAML document -> JSON tree (scalars typed as bool, integer, float or string).
nlohmann::json parse_yaml(const std::string& text);

/// `CD_<SECTION>_<KEY>=value` sets tree[section][key]; the section is the text up to the first
/// underscore after the prefix, lowercased. Values are parsed as YAML scalars.
void apply_env_overrides(nlohmann::json& tree, const std::vector<std::pair<std::string, std::string>>& env);
std::vector<std::pair<std::string, std::string>> process_environment();

/// Reads the optional YAML file, applies the process environment, and builds the config.
AppConfig load_config(const std::optional<std::filesystem::path>& file);

/// Tokens plus one position for the sentence marker.
int desk_measure(const TokenSeq& tokens);

Retriever make_retriever(const Corpus& corpus, const AppConfig& cfg);

}  // namespace dissector

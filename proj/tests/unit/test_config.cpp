#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "dissector/config.hpp"

using namespace dissector;
using nlohmann::json;

TEST_CASE("YAML scalars are typed") {
    const json j = parse_yaml("train:\n  lr: 0.001\n  max_steps: 40\n  restore_best: false\nhead:\n  name: b3\n"
                              "list: [1, two]\nquoted: \"12\"\nempty: ~\n");
    CHECK(j["train"]["lr"].is_number_float());
    CHECK(j["train"]["lr"] == 0.001);
    CHECK(j["train"]["max_steps"].is_number_integer());
    CHECK(j["train"]["restore_best"] == false);
    CHECK(j["head"]["name"] == "b3");
    CHECK(j["list"] == json::array({1, "two"}));
    CHECK(j["quoted"] == "12");
    CHECK(j["empty"].is_null());
    CHECK_THROWS_AS(parse_yaml("a: [1, 2\n"), ParseError);
}

TEST_CASE("CD_ environment overrides set section keys") {
    json tree = parse_yaml("train:\n  lr: 0.5\n");
    apply_env_overrides(tree, {{"CD_TRAIN_LR", "0.25"},
                               {"CD_TRAIN_MAX_STEPS", "12"},
                               {"CD_HEAD_NAME", "b4"},
                               {"HOME", "/root"},
                               {"CD_RETRIEVAL_TITLE_RANKER", "off"}});
    CHECK(tree["train"]["lr"] == 0.25);
    CHECK(tree["train"]["max_steps"] == 12);
    CHECK(tree["head"]["name"] == "b4");
    CHECK(tree["retrieval"]["title_ranker"] == false);
    CHECK_FALSE(tree.contains("home"));
    CHECK_THROWS_AS(apply_env_overrides(tree, {{"CD_TRAIN", "1"}}), ValidationError);
    CHECK_THROWS_AS(apply_env_overrides(tree, {{"CD__X", "1"}}), ValidationError);

    const AppConfig cfg = AppConfig::from_json(tree);
    CHECK(cfg.train.lr == 0.25);
    CHECK(cfg.train.max_steps == 12);
    CHECK(cfg.model.head_name == "b4");
    CHECK_FALSE(cfg.title_ranker);
}

TEST_CASE("defaults and partial files") {
    const AppConfig d;
    CHECK(d.retrieval.k1 == 4);
    CHECK(d.train.lr == 2e-3);
    CHECK(d.train.max_steps == 2000);
    CHECK(d.model.head.dim == d.model.encoder.dim);

    const AppConfig c = AppConfig::from_json(parse_yaml("encoder:\n  dim: 64\ntrain:\n  supervision: block+sse\n"));
    CHECK(c.model.encoder.dim == 64);
    CHECK(c.model.head.dim == 64);
    CHECK(c.model.head.heads == 8);
    CHECK(c.train.supervision == Supervision::BlockSse);
    // untouched train keys keep the desk values
    CHECK(c.train.lr == 2e-3);
    CHECK(c.train.sse.ramp_end == 200);
    CHECK(c.train.negatives.hi == c.retrieval.negative_hi);

    const AppConfig back = AppConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());

    CHECK_THROWS_AS(AppConfig::from_json(parse_yaml("train: 3\n")), ValidationError);
    CHECK_THROWS_AS(AppConfig::from_json(parse_yaml("vocab:\n  min_count: 0\n")), ValidationError);
    CHECK_THROWS_AS(AppConfig::from_json(parse_yaml("train:\n  batch_size: 0\n")), ValidationError);
    CHECK_THROWS_AS(AppConfig::from_json(json::array()), ValidationError);
}

TEST_CASE("load_config reads a file") {
    const auto path = std::filesystem::temp_directory_path() / "dissector_config_test.yaml";
    std::ofstream(path) << "retrieval:\n  k1: 3\nmasker:\n  lambda_s: 0.5\n";
    const AppConfig c = load_config(path);
    CHECK(c.retrieval.k1 == 3);
    CHECK(c.masker.masker.lambda_s == 0.5);
    CHECK_THROWS_AS(load_config(std::filesystem::path("/nonexistent/config.yaml")), ValidationError);
    CHECK(desk_measure({"a", "b"}) == 3);
}

TEST_CASE("the shipped desk config spells out the defaults") {
    const std::filesystem::path desk = std::filesystem::path(DISSECTOR_FIXTURES) / ".." / ".." / "configs" / "desk.yaml";
    CHECK(load_config(desk).to_json() == AppConfig().to_json());
}

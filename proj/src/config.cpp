#include "dissector/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

extern char** environ;

namespace dissector {

using json = nlohmann::json;

namespace {

json scalar_to_json(const std::string& text, bool quoted) {
    if (quoted) return text;
    std::string lower = text;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "true" || lower == "yes" || lower == "on") return true;
    if (lower == "false" || lower == "no" || lower == "off") return false;
    if (lower == "null" || lower == "~" || lower.empty()) return nullptr;
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    return text;
}

json node_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined:
            return nullptr;
        case YAML::NodeType::Scalar:
            return scalar_to_json(node.Scalar(), node.Tag() == "!");
        case YAML::NodeType::Sequence: {
            json out = json::array();
            for (const auto& item : node) out.push_back(node_to_json(item));
            return out;
        }
        case YAML::NodeType::Map: {
            json out = json::object();
            for (const auto& kv : node) out[kv.first.as<std::string>()] = node_to_json(kv.second);
            return out;
        }
    }
    return nullptr;
}

json section(const json& tree, const char* name) {
    if (!tree.contains(name)) return json::object();
    const auto& s = tree.at(name);
    if (!s.is_object()) throw ValidationError(std::string("config section '") + name + "' is not a mapping");
    return s;
}

}  // namespace

AppConfig::AppConfig() {
    model.head = HeadConfig::for_dim(model.encoder.dim);
    train.lr = 2e-3;
    train.max_steps = 2000;
    train.eval_every = 250;
    train.sse.warmup_steps = 0;
    train.sse.ramp_end = 200;
}

json AppConfig::to_json() const {
    json head = model.head.to_json();
    head["name"] = model.head_name;
    return {{"retrieval",
             {{"k1", retrieval.k1},
              {"k2", retrieval.k2},
              {"block_budget", retrieval.block_budget},
              {"negative_lo", retrieval.negative_lo},
              {"negative_hi", retrieval.negative_hi},
              {"negatives_per_claim", retrieval.negatives_per_claim},
              {"first_stage_depth", retrieval.first_stage_depth},
              {"title_ranker", title_ranker}}},
            {"bm25", {{"k1", bm25.k1}, {"b", bm25.b}}},
            {"vocab", {{"min_count", vocab_min_count}}},
            {"encoder", model.encoder.to_json()},
            {"head", head},
            {"train", train.to_json()},
            {"masker", masker.to_json()},
            {"synthetic",
             {{"n_train", synthetic.n_train},
              {"n_dev", synthetic.n_dev},
              {"n_conflict", synthetic.n_conflict},
              {"topics", synthetic.topics},
              {"claims_per_doc", synthetic.claims_per_doc},
              {"min_sentences", synthetic.min_sentences},
              {"max_sentences", synthetic.max_sentences},
              {"filler_words", synthetic.filler_words},
              {"seed", synthetic.seed}}}};
}

AppConfig AppConfig::from_json(const json& tree) {
    AppConfig c;
    if (!tree.is_null() && !tree.is_object()) throw ValidationError("config root must be a mapping");
    const json r = section(tree, "retrieval");
    c.retrieval.k1 = r.value("k1", c.retrieval.k1);
    c.retrieval.k2 = r.value("k2", c.retrieval.k2);
    c.retrieval.block_budget = r.value("block_budget", c.retrieval.block_budget);
    c.retrieval.negative_lo = r.value("negative_lo", c.retrieval.negative_lo);
    c.retrieval.negative_hi = r.value("negative_hi", c.retrieval.negative_hi);
    c.retrieval.negatives_per_claim = r.value("negatives_per_claim", c.retrieval.negatives_per_claim);
    c.retrieval.first_stage_depth = r.value("first_stage_depth", c.retrieval.first_stage_depth);
    c.title_ranker = r.value("title_ranker", c.title_ranker);
    c.retrieval.validate();

    const json b = section(tree, "bm25");
    c.bm25.k1 = b.value("k1", c.bm25.k1);
    c.bm25.b = b.value("b", c.bm25.b);
    c.vocab_min_count = section(tree, "vocab").value("min_count", c.vocab_min_count);
    if (c.vocab_min_count < 1) throw ValidationError("vocab.min_count must be at least 1");

    c.model.encoder = TransformerConfig::from_json(section(tree, "encoder"));
    const json h = section(tree, "head");
    c.model.head = HeadConfig::for_dim(c.model.encoder.dim);
    c.model.head.heads = h.value("heads", c.model.head.heads);
    c.model.head.slp_width = h.value("slp_width", c.model.head.slp_width);
    c.model.head.dropout = h.value("dropout", c.model.head.dropout);
    c.model.head_name = h.value("name", c.model.head_name);

    // Train keys not given in the file keep the desk defaults above.
    json t = c.train.to_json();
    t.update(section(tree, "train"));
    c.train = TrainConfig::from_json(t);
    c.train.negatives.lo = c.retrieval.negative_lo;
    c.train.negatives.hi = c.retrieval.negative_hi;
    c.train.negatives.count = c.retrieval.negatives_per_claim;
    c.train.validate();
    c.masker = MaskerTrainConfig::from_json(section(tree, "masker"));

    const json s = section(tree, "synthetic");
    c.synthetic.n_train = s.value("n_train", c.synthetic.n_train);
    c.synthetic.n_dev = s.value("n_dev", c.synthetic.n_dev);
    c.synthetic.n_conflict = s.value("n_conflict", c.synthetic.n_conflict);
    c.synthetic.topics = s.value("topics", c.synthetic.topics);
    c.synthetic.claims_per_doc = s.value("claims_per_doc", c.synthetic.claims_per_doc);
    c.synthetic.min_sentences = s.value("min_sentences", c.synthetic.min_sentences);
    c.synthetic.max_sentences = s.value("max_sentences", c.synthetic.max_sentences);
    c.synthetic.filler_words = s.value("filler_words", c.synthetic.filler_words);
    c.synthetic.seed = s.value("seed", c.synthetic.seed);
    return c;
}

json parse_yaml(const std::string& text) {
    try {
        return node_to_json(YAML::Load(text));
    } catch (const YAML::Exception& e) {
        throw ParseError(std::string("invalid YAML: ") + e.msg, static_cast<std::size_t>(e.mark.line + 1));
    }
}

void apply_env_overrides(json& tree, const std::vector<std::pair<std::string, std::string>>& env) {
    if (tree.is_null()) tree = json::object();
    for (const auto& [name, value] : env) {
        if (name.rfind("CD_", 0) != 0) continue;
        std::string rest = name.substr(3);
        std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char c) { return std::tolower(c); });
        const auto cut = rest.find('_');
        if (cut == std::string::npos || cut == 0 || cut + 1 == rest.size()) {
            throw ValidationError("environment override " + name + " is not CD_<SECTION>_<KEY>");
        }
        const std::string sec = rest.substr(0, cut);
        const std::string key = rest.substr(cut + 1);
        if (tree.contains(sec) && !tree[sec].is_object()) throw ValidationError("config section " + sec + " is not a mapping");
        tree[sec][key] = scalar_to_json(value, false);
    }
}

std::vector<std::pair<std::string, std::string>> process_environment() {
    std::vector<std::pair<std::string, std::string>> out;
    for (char** e = environ; e && *e; ++e) {
        const std::string entry = *e;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        out.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
    }
    std::sort(out.begin(), out.end());
    return out;
}

AppConfig load_config(const std::optional<std::filesystem::path>& file) {
    json tree = json::object();
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ValidationError("cannot open config " + file->string());
        std::stringstream ss;
        ss << in.rdbuf();
        tree = parse_yaml(ss.str());
        if (tree.is_null()) tree = json::object();
    }
    apply_env_overrides(tree, process_environment());
    return AppConfig::from_json(tree);
}

int desk_measure(const TokenSeq& tokens) { return static_cast<int>(tokens.size()) + 1; }

Retriever make_retriever(const Corpus& corpus, const AppConfig& cfg) {
    std::unique_ptr<DocumentRanker> second;
    if (cfg.title_ranker) second = std::make_unique<TitleMatchRanker>(corpus);
    return Retriever(corpus, cfg.retrieval, desk_measure, std::move(second), cfg.bm25);
}

}  // namespace dissector

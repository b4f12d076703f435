#include "dissector/encoding.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace dissector {

namespace {

std::string normalize(const std::string& token) {
    std::string out = token;
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials{"[PAD]",   "[UNK]",   "[CLS]",     "[SEP]",
                                                   "<claim>", "<title>", "<passage>", "<sentence>"};
    return specials;
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const auto& s : special_tokens()) add(s);
}

int Vocabulary::id(const std::string& token) const {
    const auto it = ids_.find(normalize(token));
    return it == ids_.end() ? kUnk : it->second;
}

int Vocabulary::add(const std::string& token) {
    const std::string key = normalize(token);
    const auto [it, inserted] = ids_.emplace(key, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(key);
    return it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(normalize(token)) > 0; }

Vocabulary Vocabulary::build(const Corpus& corpus, const std::vector<ClaimInstance>& claims, int min_count) {
    std::vector<std::string> order;
    std::unordered_map<std::string, int> counts;
    auto see = [&](const std::string& t) {
        if (counts[normalize(t)]++ == 0) order.push_back(normalize(t));
    };
    for (const auto& doc : corpus.documents()) {
        for (const auto& t : doc.title) see(t);
        for (const auto& s : doc.sentences) {
            for (const auto& t : s) see(t);
        }
    }
    for (const auto& c : claims) {
        for (const auto& t : c.claim) see(t);
    }
    Vocabulary v;
    for (const auto& t : order) {
        if (counts[t] >= min_count) v.add(t);
    }
    return v;
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    Vocabulary v;
    const auto tokens = j.get<std::vector<std::string>>();
    const auto& specials = special_tokens();
    const auto same = [](const std::string& s, const std::string& t) { return normalize(s) == t; };
    if (tokens.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens.begin(), same)) {
        throw ValidationError("vocabulary does not start with the special tokens");
    }
    for (const auto& t : tokens) v.add(t);
    if (v.size() != static_cast<int>(tokens.size())) throw ValidationError("vocabulary has duplicate tokens");
    return v;
}

InputSequence build_input_sequence(const TokenSeq& claim, const Block& block, const Document& doc, int budget,
                                   const Vocabulary& vocab, int block_position) {
    if (block.doc_id != doc.doc_id) throw ContractError("block " + block.doc_id + " does not belong to " + doc.doc_id);
    const int claim_len = static_cast<int>(claim.size());
    // [CLS] <claim> c [SEP] <title> <passage> ... [SEP], plus room for one token and its marker.
    const int fixed = claim_len + 6;
    if (fixed + 2 > budget) {
        throw ValidationError("claim of " + std::to_string(claim_len) + " tokens does not fit input budget " +
                              std::to_string(budget));
    }
    InputSequence seq;
    std::set<std::string> claim_forms;
    for (const auto& t : claim) claim_forms.insert(normalize(t));
    seq.block_position = block_position;
    auto push = [&](int id, int segment = 0) {
        seq.token_ids.push_back(id);
        seq.claim_overlap.push_back(0);
        seq.segment.push_back(segment);
    };
    push(Vocabulary::kCls);
    push(Vocabulary::kClaim);
    for (const auto& t : claim) push(vocab.id(t));
    push(Vocabulary::kSep);
    push(Vocabulary::kTitle);
    const int title_len = std::min(static_cast<int>(doc.title.size()), budget - fixed - 2);
    for (int t = 0; t < title_len; ++t) push(vocab.id(doc.title[static_cast<std::size_t>(t)]));
    push(Vocabulary::kPassage);

    int room = budget - static_cast<int>(seq.token_ids.size()) - 1;  // keep the closing [SEP]
    int ordinal = 0;
    for (int s : block.sentence_indices) {
        if (s < 0 || s >= static_cast<int>(doc.sentences.size())) throw ContractError("block sentence out of range");
        const auto& sentence = doc.sentences[static_cast<std::size_t>(s)];
        int len = static_cast<int>(sentence.size());
        if (block.truncated) len = std::min(len, block.token_count);
        if (len + 1 > room) {
            if (ordinal > 0) break;
            len = room - 1;
        }
        for (int t = 0; t < len; ++t) {
            seq.evidence_token_positions.push_back(static_cast<int>(seq.token_ids.size()));
            seq.evidence_provenance.push_back(TokenProvenance{block_position, ordinal, s, t});
            seq.evidence_tokens.push_back(sentence[static_cast<std::size_t>(t)]);
            const int id = vocab.id(sentence[static_cast<std::size_t>(t)]);
            push(id, ordinal + 1);
            seq.claim_overlap.back() = claim_forms.count(normalize(sentence[static_cast<std::size_t>(t)])) ? 1 : 0;
        }
        seq.sentence_marker_positions.push_back(static_cast<int>(seq.token_ids.size()));
        seq.sentences.push_back(SentenceProvenance{block_position, ordinal, doc.doc_id, s});
        push(Vocabulary::kSentence, ordinal + 1);
        room -= len + 1;
        ++ordinal;
    }
    push(Vocabulary::kSep);
    return seq;
}

Matrix Encoder::encode(const InputSequence& seq) const {
    Graph graph(false);
    return encode(graph, seq).value();
}

nlohmann::json TransformerConfig::to_json() const {
    return {{"dim", dim}, {"layers", layers}, {"heads", heads}, {"ffn", ffn}, {"max_length", max_length}, {"dropout", dropout},
            {"freeze_token_embeddings", freeze_token_embeddings}, {"overlap_feature", overlap_feature},
            {"segment_features", segment_features}, {"max_blocks", max_blocks}, {"max_sentences", max_sentences}};
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
    TransformerConfig c;
    c.dim = j.value("dim", c.dim);
    c.layers = j.value("layers", c.layers);
    c.heads = j.value("heads", c.heads);
    c.ffn = j.value("ffn", c.ffn);
    c.max_length = j.value("max_length", c.max_length);
    c.dropout = j.value("dropout", c.dropout);
    c.freeze_token_embeddings = j.value("freeze_token_embeddings", c.freeze_token_embeddings);
    c.overlap_feature = j.value("overlap_feature", c.overlap_feature);
    c.segment_features = j.value("segment_features", c.segment_features);
    c.max_blocks = j.value("max_blocks", c.max_blocks);
    c.max_sentences = j.value("max_sentences", c.max_sentences);
    return c;
}

namespace {

void grow_rows(Parameter& p, Eigen::Index rows, const Matrix& fresh) {
    const Eigen::Index old = p.value.rows();
    p.value.conservativeResize(rows, Eigen::NoChange);
    p.value.bottomRows(rows - old) = fresh;
    p.grad.setZero(rows, p.value.cols());
    p.adam_m.conservativeResize(rows, Eigen::NoChange);
    p.adam_m.bottomRows(rows - old).setZero();
    p.adam_v.conservativeResize(rows, Eigen::NoChange);
    p.adam_v.bottomRows(rows - old).setZero();
}

constexpr double kTokenInitStd = 1.0;
constexpr double kPositionInitStd = 0.1;
constexpr double kSegmentInitStd = 0.1;

}  // namespace

TinyTransformerEncoder::TinyTransformerEncoder(TransformerConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)), init_rng_(seed) {
    if (config_.dim <= 0 || config_.heads <= 0 || config_.dim % config_.heads != 0) {
        throw ValidationError("encoder width must be a positive multiple of the head count");
    }
    const Eigen::Index d = config_.dim;
    auto& rng = init_rng_;
    params_.add("encoder.token_embedding", normal_init(vocab_.size(), d, kTokenInitStd, rng), false);
    params_.add("encoder.position_embedding", normal_init(config_.max_length, d, kPositionInitStd, rng), false);
    if (config_.overlap_feature) {
        Matrix overlap = Matrix::Zero(2, d);
        overlap.row(1) = normal_init(1, d, kTokenInitStd, rng);
        params_.add("encoder.overlap_embedding", overlap, false);
    }
    if (config_.segment_features) {
        params_.add("encoder.block_embedding", normal_init(config_.max_blocks, d, kSegmentInitStd, rng), false);
        params_.add("encoder.sentence_embedding", normal_init(config_.max_sentences + 1, d, kSegmentInitStd, rng),
                    false);
    }
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        params_.add(p + "ln1.gamma", Matrix::Ones(1, d), false);
        params_.add(p + "ln1.beta", Matrix::Zero(1, d), false);
        for (const char* name : {"wq", "wk", "wv", "wo"}) {
            params_.add(p + name, xavier_uniform(d, d, rng));
            params_.add(p + name + "_bias", Matrix::Zero(1, d), false);
        }
        params_.add(p + "ln2.gamma", Matrix::Ones(1, d), false);
        params_.add(p + "ln2.beta", Matrix::Zero(1, d), false);
        params_.add(p + "w1", xavier_uniform(d, config_.ffn, rng));
        params_.add(p + "w1_bias", Matrix::Zero(1, config_.ffn), false);
        params_.add(p + "w2", xavier_uniform(config_.ffn, d, rng));
        params_.add(p + "w2_bias", Matrix::Zero(1, d), false);
    }
    params_.add("encoder.final_ln.gamma", Matrix::Ones(1, d), false);
    params_.add("encoder.final_ln.beta", Matrix::Zero(1, d), false);
}

void TinyTransformerEncoder::extend_vocabulary(const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) vocab_.add(t);
    Parameter& table = params_.at("encoder.token_embedding");
    const Eigen::Index extra = vocab_.size() - table.value.rows();
    if (extra > 0) grow_rows(table, vocab_.size(), normal_init(extra, config_.dim, kTokenInitStd, init_rng_));
}

Var TinyTransformerEncoder::encode(Graph& graph, const InputSequence& seq, const EmbeddingHook& hook) const {
    const int length = static_cast<int>(seq.length());
    if (length > config_.max_length) {
        throw ContractError("input of " + std::to_string(length) + " tokens exceeds encoder limit " +
                            std::to_string(config_.max_length));
    }
    auto P = [&](const std::string& name) { return graph.param(params_.at(name)); };
    Var table = graph.param(params_.at("encoder.token_embedding"), !config_.freeze_token_embeddings);
    Var x = ag::gather_rows(table, seq.token_ids);
    if (config_.overlap_feature) {
        if (seq.claim_overlap.size() != seq.token_ids.size()) throw ContractError("sequence lacks overlap flags");
        x = ag::add(x, ag::gather_rows(P("encoder.overlap_embedding"), seq.claim_overlap));
    }
    if (hook) x = hook(x);
    std::vector<int> positions(static_cast<std::size_t>(length));
    std::iota(positions.begin(), positions.end(), 0);
    x = ag::add(x, ag::gather_rows(P("encoder.position_embedding"), positions));
    if (config_.segment_features) {
        if (seq.segment.size() != seq.token_ids.size()) throw ContractError("sequence lacks segment ids");
        std::vector<int> segments(seq.segment.size());
        std::transform(seq.segment.begin(), seq.segment.end(), segments.begin(),
                       [&](int s) { return std::min(s, config_.max_sentences); });
        const int block = std::min(seq.block_position, config_.max_blocks - 1);
        x = ag::add(x, ag::gather_rows(P("encoder.sentence_embedding"), segments));
        x = ag::add_row(x, ag::gather_rows(P("encoder.block_embedding"), std::vector<int>{block}));
    }
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "encoder.layer" + std::to_string(l) + ".";
        Var h = ag::layer_norm(x, P(p + "ln1.gamma"), P(p + "ln1.beta"));
        Var q = ag::linear(h, P(p + "wq"), P(p + "wq_bias"));
        Var k = ag::linear(h, P(p + "wk"), P(p + "wk_bias"));
        Var v = ag::linear(h, P(p + "wv"), P(p + "wv_bias"));
        Var a = ag::linear(ag::attention(q, k, v, config_.heads), P(p + "wo"), P(p + "wo_bias"));
        x = ag::add(x, ag::dropout(a, config_.dropout));
        Var h2 = ag::layer_norm(x, P(p + "ln2.gamma"), P(p + "ln2.beta"));
        Var f = ag::linear(ag::gelu(ag::linear(h2, P(p + "w1"), P(p + "w1_bias"))), P(p + "w2"), P(p + "w2_bias"));
        x = ag::add(x, ag::dropout(f, config_.dropout));
    }
    return ag::layer_norm(x, P("encoder.final_ln.gamma"), P("encoder.final_ln.beta"));
}

IdentityEncoder::IdentityEncoder(Vocabulary vocab, Eigen::Index dim, std::uint64_t seed)
    : vocab_(std::move(vocab)), dim_(dim), init_rng_(seed) {
    params_.add("encoder.token_embedding", normal_init(vocab_.size(), dim_, 1.0, init_rng_), false);
}

void IdentityEncoder::extend_vocabulary(const std::vector<std::string>& tokens) {
    for (const auto& t : tokens) vocab_.add(t);
    Parameter& table = params_.at("encoder.token_embedding");
    const Eigen::Index extra = vocab_.size() - table.value.rows();
    if (extra > 0) grow_rows(table, vocab_.size(), normal_init(extra, dim_, 1.0, init_rng_));
}

Var IdentityEncoder::encode(Graph& graph, const InputSequence& seq, const EmbeddingHook& hook) const {
    Var x = ag::gather_rows(graph.param(params_.at("encoder.token_embedding")), seq.token_ids);
    return hook ? hook(x) : x;
}

GatheredReps encode_blocks(Graph& graph, const std::vector<InputSequence>& sequences, const Encoder& encoder,
                           const std::vector<EmbeddingHook>& hooks) {
    if (!hooks.empty() && hooks.size() != sequences.size()) throw ContractError("one embedding hook per block expected");
    std::vector<Var> evidence_parts;
    std::vector<Var> marker_parts;
    GatheredReps reps;
    for (std::size_t b = 0; b < sequences.size(); ++b) {
        const InputSequence& seq = sequences[b];
        Var encoded = encoder.encode(graph, seq, hooks.empty() ? EmbeddingHook{} : hooks[b]);
        if (encoded.rows() != static_cast<Eigen::Index>(seq.length()) || encoded.cols() != encoder.dim()) {
            throw ContractError("encoder returned " + std::to_string(encoded.rows()) + "x" +
                                std::to_string(encoded.cols()) + " for an input of length " +
                                std::to_string(seq.length()));
        }
        if (seq.sentence_marker_positions.empty()) continue;
        evidence_parts.push_back(ag::gather_rows(encoded, seq.evidence_token_positions));
        marker_parts.push_back(ag::gather_rows(encoded, seq.sentence_marker_positions));
        reps.evidence_provenance.insert(reps.evidence_provenance.end(), seq.evidence_provenance.begin(),
                                        seq.evidence_provenance.end());
        reps.marker_provenance.insert(reps.marker_provenance.end(), seq.sentences.begin(), seq.sentences.end());
        reps.evidence_tokens.insert(reps.evidence_tokens.end(), seq.evidence_tokens.begin(), seq.evidence_tokens.end());
    }
    if (evidence_parts.empty()) throw ContractError("no evidence sentences in the verifier input");
    reps.evidence = ag::concat_rows(evidence_parts);
    reps.markers = ag::concat_rows(marker_parts);
    return reps;
}

}  // namespace dissector

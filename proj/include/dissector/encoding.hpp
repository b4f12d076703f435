#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dissector/autograd.hpp"
#include "dissector/corpus.hpp"

namespace dissector {

/// Token vocabulary. Lookup is case-insensitive; the first eight ids are the special tokens.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kCls = 2;
    static constexpr int kSep = 3;
    static constexpr int kClaim = 4;
    static constexpr int kTitle = 5;
    static constexpr int kPassage = 6;
    static constexpr int kSentence = 7;

    Vocabulary();

    int id(const std::string& token) const;
    /// Adds the token if unseen; returns its id.
    int add(const std::string& token);
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int size() const { return static_cast<int>(tokens_.size()); }
    bool contains(const std::string& token) const;

    /// Tokens seen fewer than `min_count` times map to [UNK].
    static Vocabulary build(const Corpus& corpus, const std::vector<ClaimInstance>& claims, int min_count = 1);

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

struct TokenProvenance {
    int block = 0;         // j: position of the block in the verifier input
    int sentence = 0;      // i: ordinal of the sentence inside its block
    int doc_sentence = 0;  // sentence index inside the source document
    int token_offset = 0;  // token position inside the sentence
};

struct SentenceProvenance {
    int block = 0;
    int sentence = 0;
    std::string doc_id;
    int doc_sentence = 0;
};

/// `[CLS] <claim> c [SEP] <title> t <passage> s1 <sentence> s2 <sentence> ... [SEP]`
struct InputSequence {
    std::vector<int> token_ids;
    std::vector<int> sentence_marker_positions;
    std::vector<int> evidence_token_positions;
    std::vector<TokenProvenance> evidence_provenance;  // parallel to evidence_token_positions
    std::vector<SentenceProvenance> sentences;         // parallel to sentence_marker_positions
    std::vector<std::string> evidence_tokens;          // surface form of each evidence token
    std::vector<int> claim_overlap;                    // per position: 1 for evidence tokens whose surface form is in the claim
    std::vector<int> segment;                          // per position: 0 outside sentences, else 1 + ordinal
    int block_position = 0;

    std::size_t length() const { return token_ids.size(); }
};

InputSequence build_input_sequence(const TokenSeq& claim, const Block& block, const Document& doc, int budget,
                                   const Vocabulary& vocab, int block_position = 0);

/// Optional rewrite of the token-embedding matrix before positions are added (used by the masker).
using EmbeddingHook = std::function<Var(Var token_embeddings)>;

/// Adapter point for any encoder producing one d-dimensional row per input position.
class Encoder {
public:
    virtual ~Encoder() = default;

    /// Number of encoder positions a sentence occupies.
    virtual int measure(const TokenSeq& tokens) const { return static_cast<int>(tokens.size()); }
    virtual Var encode(Graph& graph, const InputSequence& seq, const EmbeddingHook& hook = {}) const = 0;
    virtual Eigen::Index dim() const = 0;
    virtual int max_length() const = 0;
    virtual const Vocabulary& vocabulary() const = 0;
    /// Adds tokens to the vocabulary with freshly initialised embeddings.
    virtual void extend_vocabulary(const std::vector<std::string>& tokens) = 0;
    virtual ParameterSet& parameters() = 0;
    virtual const ParameterSet& parameters() const = 0;

    /// Evaluation-mode forward without gradient tracking.
    Matrix encode(const InputSequence& seq) const;
};

struct TransformerConfig {
    int dim = 32;
    int layers = 2;
    int heads = 4;
    int ffn = 64;
    int max_length = 64;
    double dropout = 0.0;
    bool freeze_token_embeddings = false;
    /// Adds a learned embedding to evidence tokens that also occur in the claim.
    bool overlap_feature = true;
    /// Adds learned embeddings of the block position and of the sentence ordinal inside the block.
    bool segment_features = true;
    int max_blocks = 64;
    int max_sentences = 32;

    nlohmann::json to_json() const;
    static TransformerConfig from_json(const nlohmann::json& j);
};

/// Small pre-norm transformer used for desk-scale training.
class TinyTransformerEncoder final : public Encoder {
public:
    TinyTransformerEncoder(TransformerConfig config, Vocabulary vocab, std::uint64_t seed);

    Var encode(Graph& graph, const InputSequence& seq, const EmbeddingHook& hook = {}) const override;
    using Encoder::encode;
    Eigen::Index dim() const override { return config_.dim; }
    int max_length() const override { return config_.max_length; }
    const Vocabulary& vocabulary() const override { return vocab_; }
    void extend_vocabulary(const std::vector<std::string>& tokens) override;
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }
    const TransformerConfig& config() const { return config_; }

private:
    TransformerConfig config_;
    Vocabulary vocab_;
    mutable ParameterSet params_;
    std::mt19937_64 init_rng_;
};

/// Embedding lookup only; rows of the output are the embedding rows of the input ids.
class IdentityEncoder final : public Encoder {
public:
    IdentityEncoder(Vocabulary vocab, Eigen::Index dim, std::uint64_t seed);

    Var encode(Graph& graph, const InputSequence& seq, const EmbeddingHook& hook = {}) const override;
    using Encoder::encode;
    Eigen::Index dim() const override { return dim_; }
    int max_length() const override { return 1 << 20; }
    const Vocabulary& vocabulary() const override { return vocab_; }
    void extend_vocabulary(const std::vector<std::string>& tokens) override;
    ParameterSet& parameters() override { return params_; }
    const ParameterSet& parameters() const override { return params_; }

private:
    Vocabulary vocab_;
    Eigen::Index dim_;
    mutable ParameterSet params_;
    std::mt19937_64 init_rng_;
};

struct GatheredReps {
    Var evidence;  // E_s: L_e x d
    Var markers;   // S:   L_S x d
    std::vector<TokenProvenance> evidence_provenance;
    std::vector<SentenceProvenance> marker_provenance;
    std::vector<std::string> evidence_tokens;
};

/// Encodes each block independently and gathers evidence-token and sentence-marker rows
/// in block order, then position order. `hooks`, when non-empty, holds one hook per block.
GatheredReps encode_blocks(Graph& graph, const std::vector<InputSequence>& sequences, const Encoder& encoder,
                           const std::vector<EmbeddingHook>& hooks = {});

}  // namespace dissector

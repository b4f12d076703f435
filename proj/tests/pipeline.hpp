#pragma once

#include <memory>

#include "dissector/config.hpp"
#include "dissector/synthetic.hpp"
#include "dissector/train.hpp"

namespace dissector::testing {

// A small synthetic task wired the same way the CLI wires it.
struct TinyPipeline {
    AppConfig cfg;
    SyntheticDataset data;
    Vocabulary vocab;
    std::unique_ptr<Retriever> retriever;
    PreparedSplit train;
    PreparedSplit dev;

    explicit TinyPipeline(int n_train = 24, int n_dev = 12) {
        cfg.synthetic.n_train = n_train;
        cfg.synthetic.n_dev = n_dev;
        cfg.synthetic.n_conflict = 4;
        cfg.synthetic.topics = 6;
        cfg.model.encoder.dim = 16;
        cfg.model.encoder.ffn = 32;
        cfg.model.encoder.layers = 1;
        cfg.model.encoder.heads = 2;
        cfg.model.head = HeadConfig::for_dim(16);
        data = generate_synthetic_dataset(cfg.synthetic);
        vocab = Vocabulary::build(data.corpus, data.all_claims(), cfg.vocab_min_count);
        retriever = std::make_unique<Retriever>(make_retriever(data.corpus, cfg));
        const int len = cfg.model.encoder.max_length;
        train = prepare_split(data.train, *retriever, vocab, len, true, 3);
        dev = prepare_split(data.dev, *retriever, vocab, len, false, 3);
    }

    VerifierModel model(const std::string& head = "dissector", std::uint64_t seed = 5) const {
        ModelSpec spec = cfg.model;
        spec.head_name = head;
        return VerifierModel(spec, vocab, seed);
    }
};

}  // namespace dissector::testing

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dissector/config.hpp"
#include "dissector/report.hpp"

using namespace dissector;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string log_level = "info";

    AppConfig load() const {
        spdlog::set_level(spdlog::level::from_str(log_level));
        return load_config(config.empty() ? std::nullopt : std::optional<fs::path>(config));
    }
};

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
}

std::vector<ClaimInstance> load_claim_files(const std::vector<std::string>& files) {
    std::vector<ClaimInstance> out;
    for (const auto& f : files) {
        auto claims = load_fever_claims(f);
        out.insert(out.end(), claims.begin(), claims.end());
    }
    return out;
}

PreparedSplit prepare(const std::vector<ClaimInstance>& claims, const std::string& blocks, const Corpus& corpus,
                      const Retriever& retriever, const Vocabulary& vocab, int max_length, bool inject_gold,
                      std::uint64_t seed) {
    if (!blocks.empty()) return prepare_split(claims, read_assembled_inputs(blocks), corpus, vocab, max_length);
    return prepare_split(claims, retriever, vocab, max_length, inject_gold, seed);
}

int cmd_ingest(const Common& common, bool synthetic, const std::string& corpus_in,
               const std::vector<std::string>& claim_files, const std::string& out_dir) {
    const AppConfig cfg = common.load();
    if (synthetic) {
        const auto data = generate_synthetic_dataset(cfg.synthetic);
        write_synthetic_dataset(out_dir, data);
        spdlog::info("synthetic dataset: {} documents, {} train / {} dev / {} conflict claims in {}", data.corpus.size(),
                     data.train.size(), data.dev.size(), data.conflict.size(), out_dir);
        return 0;
    }
    if (corpus_in.empty()) throw ValidationError("ingest needs --corpus or --synthetic");
    const Corpus corpus = load_corpus(corpus_in);
    fs::create_directories(out_dir);
    write_corpus(fs::path(out_dir) / "corpus.jsonl", corpus);
    for (const auto& f : claim_files) {
        const auto claims = load_fever_claims(f);
        corpus.check_claims(claims);
        write_fever_claims(fs::path(out_dir) / fs::path(f).filename(), claims);
        spdlog::info("{}: {} claims", f, claims.size());
    }
    spdlog::info("corpus: {} documents", corpus.size());
    return 0;
}

int cmd_retrieve(const Common& common, const std::string& claims_file, const std::string& corpus_file,
                 std::optional<int> k1, std::optional<int> k2, bool inject_gold, const std::string& out) {
    AppConfig cfg = common.load();
    if (k1) cfg.retrieval.k1 = *k1;
    if (k2) cfg.retrieval.k2 = *k2;
    cfg.retrieval.validate();
    const Corpus corpus = load_corpus(corpus_file);
    const auto claims = load_fever_claims(claims_file);
    const Retriever retriever = make_retriever(corpus, cfg);
    std::vector<AssembledInput> inputs;
    for (const auto& c : claims) {
        std::mt19937_64 rng(mix_seed(cfg.train.seed, c.claim_id, 0));
        inputs.push_back(retriever.assemble(c, inject_gold ? &rng : nullptr));
    }
    write_assembled_inputs(out, inputs);
    spdlog::info("{} claims, RaI {:.4f}", claims.size(), recall_at_input(claims, inputs));
    return 0;
}

int cmd_train(const Common& common, const std::string& corpus_file, const std::vector<std::string>& train_files,
              const std::vector<std::string>& dev_files, const std::string& train_blocks,
              const std::string& dev_blocks, std::optional<std::string> head, std::optional<std::string> supervision,
              std::optional<long long> steps, const std::string& out, const std::string& log_out) {
    AppConfig cfg = common.load();
    if (head) cfg.model.head_name = *head;
    if (supervision) cfg.train.supervision = parse_supervision(*supervision);
    if (steps) cfg.train.max_steps = *steps;
    if (cfg.model.is_baseline()) parse_baseline_variant(cfg.model.head_name);
    cfg.train.validate();
    const Corpus corpus = load_corpus(corpus_file);
    const auto train_claims = load_claim_files(train_files);
    const auto dev_claims = load_claim_files(dev_files);
    corpus.check_claims(train_claims);
    corpus.check_claims(dev_claims);
    std::vector<ClaimInstance> all = train_claims;
    all.insert(all.end(), dev_claims.begin(), dev_claims.end());
    const Vocabulary vocab = Vocabulary::build(corpus, all, cfg.vocab_min_count);
    const Retriever retriever = make_retriever(corpus, cfg);
    const int max_len = cfg.model.encoder.max_length;
    const auto train = prepare(train_claims, train_blocks, corpus, retriever, vocab, max_len, true, cfg.train.seed);
    const auto dev = prepare(dev_claims, dev_blocks, corpus, retriever, vocab, max_len, false, cfg.train.seed);
    spdlog::info("train {} claims (RaI {:.3f}), dev {} claims (RaI {:.3f}), vocabulary {}", train.claims.size(),
                 train.rai, dev.claims.size(), dev.rai, vocab.size());
    VerifierModel model(cfg.model, vocab, cfg.train.seed);
    std::vector<json> log;
    const TrainResult result = train_verifier(model, train, dev, cfg.train, [&](const EvalPoint& e) {
        json r = e.report.to_json();
        r["schema"] = "dissector.train_log/1";
        r["step"] = e.step;
        log.push_back(std::move(r));
    });
    save_checkpoint(out, model,
                    {{"config", cfg.to_json()}, {"best_step", result.best_step},
                     {"best_fever_score", result.best_fever_score}});
    if (!log_out.empty()) write_jsonl(log_out, log);
    spdlog::info("best dev FEVER score {:.4f} at step {}; checkpoint {}", result.best_fever_score, result.best_step, out);
    return 0;
}

int cmd_train_masker(const Common& common, const std::string& dissector_ckpt, const std::string& corpus_file,
                     const std::vector<std::string>& train_files, const std::string& train_blocks,
                     const std::vector<std::string>& eval_files, const std::string& eval_blocks,
                     std::optional<long long> steps, const std::string& out, const std::string& predictions_out) {
    AppConfig cfg = common.load();
    if (steps) cfg.masker.steps = *steps;
    const auto dissector = load_checkpoint(dissector_ckpt);
    const Corpus corpus = load_corpus(corpus_file);
    const Retriever retriever = make_retriever(corpus, cfg);
    const auto& vocab = dissector->encoder().vocabulary();
    const int max_len = dissector->spec().encoder.max_length;
    const auto train = prepare(load_claim_files(train_files), train_blocks, corpus, retriever, vocab, max_len, true,
                               cfg.train.seed);
    MaskerModel masker(*dissector, cfg.masker.seed);
    const auto result = train_masker(masker, *dissector, train, cfg.masker);
    save_masker(out, masker, cfg.masker.masker);
    spdlog::info("masker trained for {} steps; saved {}", result.losses.size(), out);
    if (!predictions_out.empty()) {
        if (eval_files.empty()) throw ValidationError("--predictions-out needs --claims");
        const auto eval = prepare(load_claim_files(eval_files), eval_blocks, corpus, retriever, vocab, max_len, false,
                                  cfg.train.seed);
        write_predictions(predictions_out, masker_predictions(masker, *dissector, eval.prepared));
    }
    return 0;
}

int cmd_evaluate(const Common& common, const std::string& ckpt, const std::string& masker_file,
                 const std::string& predictions_in, const std::string& corpus_file,
                 const std::vector<std::string>& claim_files, const std::string& blocks,
                 const std::vector<std::string>& metrics, bool tune, std::optional<double> threshold,
                 const std::string& out, const std::string& predictions_out) {
    const AppConfig cfg = common.load();
    const Corpus corpus = load_corpus(corpus_file);
    const auto claims = load_claim_files(claim_files);
    std::vector<Prediction> predictions;
    std::optional<double> rai;
    if (!predictions_in.empty()) {
        predictions = read_predictions(predictions_in);
    } else {
        if (ckpt.empty()) throw ValidationError("evaluate needs --checkpoint or --predictions");
        const auto model = load_checkpoint(ckpt);
        const Retriever retriever = make_retriever(corpus, cfg);
        const auto split = prepare(claims, blocks, corpus, retriever, model->encoder().vocabulary(),
                                   model->spec().encoder.max_length, false, cfg.train.seed);
        rai = split.rai;
        if (!masker_file.empty()) {
            const auto masker = load_masker(masker_file);
            predictions = masker_predictions(*masker, *model, split.prepared);
        } else {
            predictions = predict_all(*model, split.prepared, cfg.train.conflict_threshold);
        }
    }
    EvalOptions opts;
    opts.corpus = &corpus;
    opts.tune_threshold = tune;
    opts.threshold = threshold;
    opts.rai = rai;
    const EvalReport report = evaluate(predictions, claims, opts);
    const json full = report.to_json(true);
    json shown = json::object();
    if (metrics.empty()) {
        for (const char* k : {"accuracy", "recall_at_5", "fever_score", "rai", "token_f1", "threshold"}) {
            if (full.contains(k)) shown[k] = full[k];
        }
    }
    for (const auto& k : metrics) {
        if (!full.contains(k) || k == "records" || k == "schema") throw ValidationError("unavailable metric " + k);
        shown[k] = full[k];
    }
    std::cout << shown.dump(2) << '\n';
    if (!out.empty()) write_jsonl(out, {full});
    if (!predictions_out.empty()) write_predictions(predictions_out, predictions);
    return 0;
}

int cmd_verify(const Common& common, const std::string& ckpt, const std::string& corpus_file, const std::string& text,
               const std::string& json_out, const std::string& html_dir) {
    const AppConfig cfg = common.load();
    const Corpus corpus = load_corpus(corpus_file);
    const auto model = load_checkpoint(ckpt);
    ClaimInstance claim;
    claim.claim_id = "query";
    claim.claim_text = text;
    claim.claim = tokenize(text);
    if (claim.claim.empty()) throw ValidationError("empty claim");
    const Retriever retriever = make_retriever(corpus, cfg);
    const AssembledInput input = retriever.assemble(claim);
    const PreparedClaim prepared =
        prepare_claim(claim, input, corpus, model->encoder().vocabulary(), model->spec().encoder.max_length);
    const Prediction p = predict(*model, prepared, cfg.train.conflict_threshold);
    const json record = prediction_to_json(p);
    std::cout << record.dump(2) << '\n';
    if (!json_out.empty()) write_jsonl(json_out, {record});
    if (!html_dir.empty()) emit_html_report({p}, corpus, html_dir, {claim});
    return 0;
}

int cmd_report(const Common& common, const std::string& predictions_in, const std::string& corpus_file,
               const std::vector<std::string>& claim_files, const std::string& out_dir) {
    common.load();
    const Corpus corpus = load_corpus(corpus_file);
    const auto predictions = read_predictions(predictions_in);
    const auto files = emit_html_report(predictions, corpus, out_dir, load_claim_files(claim_files));
    spdlog::info("wrote {} pages to {}", files.size(), out_dir);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Claim verification with token-level evidence attribution"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config, "YAML config file")->check(CLI::ExistingFile);
    app.add_option("--log-level", common.log_level, "trace|debug|info|warn|error");

    auto* ingest = app.add_subcommand("ingest", "Normalize a corpus and claim files, or generate the synthetic set");
    bool synthetic = false;
    std::string ingest_corpus, ingest_out;
    std::vector<std::string> ingest_claims;
    ingest->add_flag("--synthetic", synthetic, "Generate the synthetic separable dataset");
    ingest->add_option("--corpus", ingest_corpus, "Corpus JSONL file or directory");
    ingest->add_option("--claims", ingest_claims, "FEVER claim JSONL files");
    ingest->add_option("--out", ingest_out, "Output directory")->required();

    auto* retrieve = app.add_subcommand("retrieve", "Assemble the K1 + K2 input blocks per claim");
    std::string r_claims, r_corpus, r_out;
    std::optional<int> r_k1, r_k2;
    bool r_inject = false;
    retrieve->add_option("--claims", r_claims)->required();
    retrieve->add_option("--corpus", r_corpus)->required();
    retrieve->add_option("--k1", r_k1);
    retrieve->add_option("--k2", r_k2);
    retrieve->add_flag("--inject-gold", r_inject, "Insert missing gold blocks at random positions");
    retrieve->add_option("--out", r_out)->required();

    auto* train = app.add_subcommand("train", "Train the verifier");
    std::string t_corpus, t_train_blocks, t_dev_blocks, t_out, t_log;
    std::vector<std::string> t_train, t_dev;
    std::optional<std::string> t_head, t_sup;
    std::optional<long long> t_steps;
    train->add_option("--corpus", t_corpus)->required();
    train->add_option("--train", t_train)->required();
    train->add_option("--dev", t_dev)->required();
    train->add_option("--train-blocks", t_train_blocks, "Precomputed blocks for the training claims");
    train->add_option("--dev-blocks", t_dev_blocks, "Precomputed blocks for the dev claims");
    train->add_option("--head", t_head)->check(CLI::IsMember({"dissector", "baseline", "b2", "b3", "b4"}));
    train->add_option("--supervision", t_sup)->check(CLI::IsMember({"sentence", "block", "block+sse"}));
    train->add_option("--steps", t_steps);
    train->add_option("--out", t_out, "Checkpoint path")->required();
    train->add_option("--log", t_log, "Eval log JSONL");

    auto* masker = app.add_subcommand("train-masker", "Train the masker against a frozen dissector");
    std::string m_ckpt, m_corpus, m_train_blocks, m_eval_blocks, m_out, m_pred;
    std::vector<std::string> m_train, m_eval;
    std::optional<long long> m_steps;
    masker->add_option("--dissector", m_ckpt)->required();
    masker->add_option("--corpus", m_corpus)->required();
    masker->add_option("--train", m_train)->required();
    masker->add_option("--train-blocks", m_train_blocks);
    masker->add_option("--claims", m_eval, "Claims to score after training");
    masker->add_option("--blocks", m_eval_blocks);
    masker->add_option("--steps", m_steps);
    masker->add_option("--out", m_out, "Masker checkpoint path")->required();
    masker->add_option("--predictions-out", m_pred, "Rationale predictions JSONL for --claims");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute metrics");
    std::string e_ckpt, e_masker, e_pred_in, e_corpus, e_blocks, e_out, e_pred_out;
    std::vector<std::string> e_claims, e_metrics;
    bool e_tune = false;
    std::optional<double> e_tau;
    evaluate_cmd->add_option("--checkpoint", e_ckpt);
    evaluate_cmd->add_option("--masker", e_masker, "Use masker rationales as token scores");
    evaluate_cmd->add_option("--predictions", e_pred_in, "Evaluate existing prediction JSONL");
    evaluate_cmd->add_option("--corpus", e_corpus)->required();
    evaluate_cmd->add_option("--claims", e_claims)->required();
    evaluate_cmd->add_option("--blocks", e_blocks);
    evaluate_cmd->add_option("--metrics", e_metrics, "accuracy recall_at_5 fever_score rai token_f1 threshold")
        ->delimiter(',');
    evaluate_cmd->add_flag("--tune-threshold", e_tune);
    evaluate_cmd->add_option("--threshold", e_tau);
    evaluate_cmd->add_option("--out", e_out, "Eval report JSONL");
    evaluate_cmd->add_option("--predictions-out", e_pred_out);

    auto* verify = app.add_subcommand("verify", "Verify one claim");
    std::string v_ckpt, v_corpus, v_claim, v_json, v_html;
    verify->add_option("--checkpoint", v_ckpt)->required();
    verify->add_option("--corpus", v_corpus)->required();
    verify->add_option("--claim", v_claim)->required();
    verify->add_option("--json", v_json, "Prediction JSONL output");
    verify->add_option("--html", v_html, "HTML output directory");

    auto* report = app.add_subcommand("report", "Render predictions as HTML");
    std::string p_pred, p_corpus, p_out;
    std::vector<std::string> p_claims;
    report->add_option("--predictions", p_pred)->required();
    report->add_option("--corpus", p_corpus)->required();
    report->add_option("--claims", p_claims);
    report->add_option("--out", p_out)->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (*ingest) return cmd_ingest(common, synthetic, ingest_corpus, ingest_claims, ingest_out);
        if (*retrieve) return cmd_retrieve(common, r_claims, r_corpus, r_k1, r_k2, r_inject, r_out);
        if (*train) {
            return cmd_train(common, t_corpus, t_train, t_dev, t_train_blocks, t_dev_blocks, t_head, t_sup, t_steps,
                             t_out, t_log);
        }
        if (*masker) {
            return cmd_train_masker(common, m_ckpt, m_corpus, m_train, m_train_blocks, m_eval, m_eval_blocks, m_steps,
                                    m_out, m_pred);
        }
        if (*evaluate_cmd) {
            return cmd_evaluate(common, e_ckpt, e_masker, e_pred_in, e_corpus, e_claims, e_blocks, e_metrics, e_tune,
                                e_tau, e_out, e_pred_out);
        }
        if (*verify) return cmd_verify(common, v_ckpt, v_corpus, v_claim, v_json, v_html);
        if (*report) return cmd_report(common, p_pred, p_corpus, p_claims, p_out);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}

#include "dissector/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace dissector {

using nlohmann::json;

void TrainConfig::validate() const {
    if (batch_size <= 0 || lr <= 0.0 || warmup_steps < 0 || grad_clip_norm <= 0.0 || max_steps < 0 || eval_every < 1) {
        throw ValidationError("training configuration values must be positive");
    }
    sse.validate();
}

json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"lr", lr},
            {"warmup_steps", warmup_steps},
            {"grad_clip_norm", grad_clip_norm},
            {"max_steps", max_steps},
            {"eval_every", eval_every},
            {"weight_decay", weight_decay},
            {"seed", seed},
            {"lambda_r", lambda_r},
            {"lambda_2", lambda_2},
            {"block_lambda_r", block_lambda_r},
            {"baseline_weight_b1", baseline_weight_b1},
            {"supervision", supervision_name(supervision)},
            {"sse_warmup", sse.warmup_steps},
            {"sse_ramp_end", sse.ramp_end},
            {"sse_p_max", sse.p_max},
            {"negative_lo", negatives.lo},
            {"negative_hi", negatives.hi},
            {"negatives", negatives.count},
            {"conflict_threshold", conflict_threshold},
            {"restore_best", restore_best}};
}

TrainConfig TrainConfig::from_json(const json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    c.lambda_r = j.value("lambda_r", c.lambda_r);
    c.lambda_2 = j.value("lambda_2", c.lambda_2);
    c.block_lambda_r = j.value("block_lambda_r", c.block_lambda_r);
    c.baseline_weight_b1 = j.value("baseline_weight_b1", c.baseline_weight_b1);
    c.supervision = parse_supervision(j.value("supervision", supervision_name(c.supervision)));
    c.sse.warmup_steps = j.value("sse_warmup", c.sse.warmup_steps);
    c.sse.ramp_end = j.value("sse_ramp_end", c.sse.ramp_end);
    c.sse.p_max = j.value("sse_p_max", c.sse.p_max);
    c.negatives.lo = j.value("negative_lo", c.negatives.lo);
    c.negatives.hi = j.value("negative_hi", c.negatives.hi);
    c.negatives.count = j.value("negatives", c.negatives.count);
    c.conflict_threshold = j.value("conflict_threshold", c.conflict_threshold);
    c.restore_best = j.value("restore_best", c.restore_best);
    return c;
}

PreparedSplit prepare_split(const std::vector<ClaimInstance>& claims, const Retriever& retriever,
                            const Vocabulary& vocab, int max_length, bool inject_gold, std::uint64_t seed) {
    PreparedSplit out;
    out.claims = claims;
    for (const auto& c : claims) {
        std::mt19937_64 rng(mix_seed(seed, c.claim_id, 0));
        out.inputs.push_back(retriever.assemble(c, inject_gold ? &rng : nullptr));
        out.prepared.push_back(prepare_claim(c, out.inputs.back(), retriever.corpus(), vocab, max_length));
    }
    out.rai = recall_at_input(out.claims, out.inputs);
    return out;
}

PreparedSplit prepare_split(const std::vector<ClaimInstance>& claims, const std::vector<AssembledInput>& inputs,
                            const Corpus& corpus, const Vocabulary& vocab, int max_length) {
    std::map<std::string, const AssembledInput*> by_id;
    for (const auto& in : inputs) by_id[in.claim_id] = &in;
    PreparedSplit out;
    out.claims = claims;
    for (const auto& c : claims) {
        const auto it = by_id.find(c.claim_id);
        if (it == by_id.end()) throw ValidationError("no retrieved blocks for claim " + c.claim_id);
        out.inputs.push_back(*it->second);
        out.prepared.push_back(prepare_claim(c, *it->second, corpus, vocab, max_length));
    }
    out.rai = recall_at_input(out.claims, out.inputs);
    return out;
}

json TrainResult::to_json() const {
    json evals_json = json::array();
    for (const auto& e : evals) {
        json r = e.report.to_json();
        r["step"] = e.step;
        evals_json.push_back(std::move(r));
    }
    return {{"losses", losses}, {"evals", evals_json}, {"best_step", best_step}, {"best_fever_score", best_fever_score}};
}

std::vector<Prediction> predict_all(const VerifierModel& model, const std::vector<PreparedClaim>& claims,
                                    double conflict_threshold) {
    std::vector<Prediction> out;
    out.reserve(claims.size());
    for (const auto& c : claims) out.push_back(predict(model, c, conflict_threshold));
    return out;
}

LossValue claim_objective(const VerifierModel& model, const ScoreMatrix& m, const ClaimInstance& claim,
                          const PreparedClaim& prepared, const TrainConfig& cfg, long long step) {
    const std::uint64_t sample_seed = mix_seed(cfg.seed, claim.claim_id, static_cast<std::uint64_t>(step));
    const TrainingTargets targets = build_targets(claim, prepared, cfg.negatives, sample_seed);
    if (model.spec().is_baseline()) {
        BaselineLossConfig bc;
        bc.variant = parse_baseline_variant(model.spec().head_name);
        bc.weight_b1 = cfg.baseline_weight_b1;
        return baseline_objective(m, targets.baseline, claim.label, bc, targets.irrelevant);
    }
    switch (cfg.supervision) {
        case Supervision::Sentence:
            return total_loss(m, targets.sentence, claim.label, LossConfig{cfg.lambda_r, cfg.lambda_2});
        case Supervision::Block:
            return block_supervised_loss(m, targets.block, claim.label, 0.0, sample_seed ^ 0x5bd1e995ULL,
                                         BlockLossConfig{cfg.block_lambda_r, cfg.lambda_2});
        case Supervision::BlockSse:
            return block_supervised_loss(m, targets.block, claim.label, step, cfg.sse, sample_seed ^ 0x5bd1e995ULL,
                                         BlockLossConfig{cfg.block_lambda_r, cfg.lambda_2});
    }
    throw ContractError("unknown supervision");
}

namespace {

std::vector<Matrix> snapshot(std::span<ParameterSet* const> sets) {
    std::vector<Matrix> out;
    for (const ParameterSet* s : sets) {
        for (const auto& p : s->items()) out.push_back(p->value);
    }
    return out;
}

void restore(std::span<ParameterSet* const> sets, const std::vector<Matrix>& values) {
    std::size_t i = 0;
    for (ParameterSet* s : sets) {
        for (auto& p : s->items()) p->value = values.at(i++);
    }
}

void zero_grads(std::span<ParameterSet* const> sets) {
    for (ParameterSet* s : sets) s->zero_grad();
}

double warmup_lr(double lr, long long step, long long warmup) {
    if (warmup <= 0 || step >= warmup) return lr;
    return lr * static_cast<double>(step) / static_cast<double>(warmup);
}

/// Deterministic epoch-wise shuffled order.
class BatchSampler {
public:
    BatchSampler(std::vector<std::size_t> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {}

    std::vector<std::size_t> next(int batch) {
        std::vector<std::size_t> out;
        if (pool_.empty()) return out;
        while (static_cast<int>(out.size()) < batch) {
            if (cursor_ == 0) std::shuffle(pool_.begin(), pool_.end(), rng_);
            out.push_back(pool_[cursor_]);
            cursor_ = (cursor_ + 1) % pool_.size();
        }
        return out;
    }

private:
    std::vector<std::size_t> pool_;
    std::mt19937_64 rng_;
    std::size_t cursor_ = 0;
};

}  // namespace

TrainResult train_verifier(VerifierModel& model, const PreparedSplit& train, const PreparedSplit& dev,
                           const TrainConfig& cfg, const std::function<void(const EvalPoint&)>& on_eval) {
    cfg.validate();
    if (train.claims.size() != train.prepared.size()) throw ContractError("train split is not prepared");
    const auto sets = model.parameter_sets();
    AdamW optimizer(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    TrainResult result;
    std::vector<Matrix> best;

    auto run_eval = [&](long long step) {
        EvalPoint point;
        point.step = step;
        point.report = evaluate(predict_all(model, dev.prepared, cfg.conflict_threshold), dev.claims,
                                EvalOptions{nullptr, std::nullopt, false, dev.rai});
        spdlog::info("step {}: dev FS {:.4f} A {:.4f} R@5 {:.4f}", step, point.report.fever_score,
                     point.report.accuracy, point.report.recall_at_5);
        if (point.report.fever_score > result.best_fever_score) {
            result.best_fever_score = point.report.fever_score;
            result.best_step = step;
            best = snapshot(sets);
        }
        if (on_eval) on_eval(point);
        result.evals.push_back(std::move(point));
    };

    std::vector<std::size_t> pool(train.claims.size());
    std::iota(pool.begin(), pool.end(), 0);
    BatchSampler sampler(pool, mix_seed(cfg.seed, "batches", 0));
    const auto start = std::chrono::steady_clock::now();
    if (cfg.max_steps == 0) run_eval(0);
    for (long long step = 1; step <= cfg.max_steps; ++step) {
        zero_grads(sets);
        const auto batch = sampler.next(cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(batch.size());
        double objective = 0.0;
        for (std::size_t idx : batch) {
            const ClaimInstance& claim = train.claims[idx];
            const PreparedClaim& prepared = train.prepared[idx];
            Graph graph(true, mix_seed(cfg.seed, claim.claim_id, static_cast<std::uint64_t>(step)));
            const ForwardResult fwd = model.forward(graph, prepared);
            const LossValue loss = claim_objective(model, fwd.matrix(), claim, prepared, cfg, step);
            if (!std::isfinite(loss.value) || !loss.grad.allFinite()) {
                json dump = {{"step", step}, {"claim_id", claim.claim_id}, {"objective", loss.value}};
                dump["batch"] = json::array();
                for (std::size_t b : batch) dump["batch"].push_back(train.claims[b].claim_id);
                spdlog::error("training diverged: {}", dump.dump());
                throw TrainingDiverged("non-finite objective at step " + std::to_string(step) + ": " + dump.dump());
            }
            objective += loss.value * inv;
            graph.backward(fwd.scores, -inv * loss.grad);
        }
        clip_grad_norm(sets, cfg.grad_clip_norm);
        optimizer.step(sets, warmup_lr(cfg.lr, step, cfg.warmup_steps));
        result.losses.push_back(objective);
        if (step % 50 == 0) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            spdlog::debug("step {} objective {:.4f} ({:.1f}s)", step, objective, secs);
        }
        if (step % cfg.eval_every == 0 || step == cfg.max_steps) run_eval(step);
    }
    if (cfg.restore_best && !best.empty()) restore(sets, best);
    return result;
}

json MaskerTrainConfig::to_json() const {
    json j = masker.to_json();
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["steps"] = steps;
    j["grad_clip_norm"] = grad_clip_norm;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    return j;
}

MaskerTrainConfig MaskerTrainConfig::from_json(const json& j) {
    MaskerTrainConfig c;
    c.masker = MaskerConfig::from_json(j);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.steps = j.value("steps", c.steps);
    c.grad_clip_norm = j.value("grad_clip_norm", c.grad_clip_norm);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.seed = j.value("seed", c.seed);
    return c;
}

MaskerTrainResult train_masker(MaskerModel& masker, const VerifierModel& dissector, const PreparedSplit& train,
                               const MaskerTrainConfig& cfg) {
    if (cfg.batch_size <= 0 || cfg.lr <= 0.0 || cfg.steps < 0) throw ValidationError("invalid masker configuration");
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < train.claims.size(); ++i) {
        if (train.claims[i].label != Label::Nei) pool.push_back(i);
    }
    if (pool.empty() && cfg.steps > 0) throw ValidationError("masker training needs SUPPORTS or REFUTES claims");
    const auto sets = masker.parameter_sets();
    AdamW optimizer(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
    BatchSampler sampler(pool, mix_seed(cfg.seed, "masker.batches", 0));
    MaskerTrainResult result;
    for (long long step = 1; step <= cfg.steps; ++step) {
        zero_grads(sets);
        const Temperature temp = temperature(step, cfg.masker.schedule);
        const auto batch = sampler.next(cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(batch.size());
        double objective = 0.0;
        for (std::size_t idx : batch) {
            const PreparedClaim& prepared = train.prepared[idx];
            const std::uint64_t sample_seed = mix_seed(cfg.seed, prepared.claim_id, static_cast<std::uint64_t>(step));
            Graph graph(true, sample_seed);
            std::mt19937_64 rng(sample_seed);
            Eigen::Index rows = 0;
            for (const auto& s : prepared.sequences) rows += static_cast<Eigen::Index>(s.evidence_token_positions.size());
            const Matrix noise = gumbel_noise(rows, 2, rng);
            const MaskedForward mf = masked_forward(graph, masker, dissector, prepared, noise, temp);
            const MaskerLoss loss = masker_loss(mf.dissector.matrix(), mf.mask.value(), cfg.masker.lambda_s);
            if (!std::isfinite(loss.value)) {
                throw TrainingDiverged("non-finite masker objective at step " + std::to_string(step) + " on claim " +
                                       prepared.claim_id);
            }
            objective += loss.value * inv;
            const std::pair<Var, Matrix> seeds[] = {{mf.dissector.scores, -inv * loss.grad_scores},
                                                    {mf.mask, -inv * loss.grad_mask}};
            graph.backward(seeds);
        }
        clip_grad_norm(sets, cfg.grad_clip_norm);
        optimizer.step(sets, cfg.lr);
        result.losses.push_back(objective);
        if (step % 100 == 0) spdlog::info("masker step {} (tau {:.3f}{}): objective {:.4f}", step, temp.tau,
                                          temp.hard ? ", hard" : "", objective);
    }
    return result;
}

std::vector<Prediction> masker_predictions(const MaskerModel& masker, const VerifierModel& dissector,
                                           const std::vector<PreparedClaim>& claims) {
    std::vector<Prediction> out;
    for (const auto& c : claims) {
        Prediction p = predict(dissector, c);
        p.head = "masker";
        const RationaleScores r = extract_masker_rationales(masker, c);
        if (r.scores.size() != p.tokens.size()) throw ContractError("masker and dissector token counts differ");
        for (std::size_t t = 0; t < r.scores.size(); ++t) p.tokens[t].score = r.scores[t];
        out.push_back(std::move(p));
    }
    return out;
}

namespace {

json params_to_json(const ParameterSet& set) {
    json out = json::object();
    for (const auto& p : set.items()) {
        out[p->name] = {{"rows", p->value.rows()},
                        {"cols", p->value.cols()},
                        {"data", std::vector<double>(p->value.data(), p->value.data() + p->value.size())}};
    }
    return out;
}

void params_from_json(ParameterSet& set, const json& j) {
    for (auto& p : set.items()) {
        if (!j.contains(p->name)) throw ValidationError("checkpoint lacks parameter " + p->name);
        const auto& e = j.at(p->name);
        const auto rows = e.at("rows").get<Eigen::Index>();
        const auto cols = e.at("cols").get<Eigen::Index>();
        const auto data = e.at("data").get<std::vector<double>>();
        if (rows != p->value.rows() || cols != p->value.cols() || static_cast<Eigen::Index>(data.size()) != rows * cols) {
            throw ValidationError("checkpoint parameter " + p->name + " has the wrong shape");
        }
        p->value = Eigen::Map<const Matrix>(data.data(), rows, cols);
    }
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(std::string(e.what()) + " in " + path.string(), 0);
    }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VerifierModel& model, const json& extra) {
    json j = {{"schema", "dissector.checkpoint/1"},
              {"spec", model.spec().to_json()},
              {"vocabulary", model.encoder().vocabulary().to_json()},
              {"encoder", params_to_json(model.encoder().parameters())},
              {"head", params_to_json(model.head().parameters())},
              {"extra", extra}};
    write_json_file(path, j);
}

std::unique_ptr<VerifierModel> load_checkpoint(const std::filesystem::path& path, json* extra) {
    const json j = read_json_file(path);
    if (j.value("schema", "") != "dissector.checkpoint/1") throw ValidationError(path.string() + " is not a checkpoint");
    auto model = std::make_unique<VerifierModel>(ModelSpec::from_json(j.at("spec")),
                                                 Vocabulary::from_json(j.at("vocabulary")), 0);
    params_from_json(model->encoder().parameters(), j.at("encoder"));
    params_from_json(model->head().parameters(), j.at("head"));
    if (extra) *extra = j.value("extra", json::object());
    return model;
}

void save_masker(const std::filesystem::path& path, const MaskerModel& masker, const MaskerConfig& cfg) {
    json j = {{"schema", "dissector.masker/1"},
              {"encoder_config", masker.encoder().config().to_json()},
              {"head_config", masker.head().config().to_json()},
              {"vocabulary", masker.encoder().vocabulary().to_json()},
              {"masker", cfg.to_json()},
              {"encoder", params_to_json(masker.encoder().parameters())},
              {"head", params_to_json(masker.head().parameters())},
              {"extra", params_to_json(masker.extra())}};
    write_json_file(path, j);
}

std::unique_ptr<MaskerModel> load_masker(const std::filesystem::path& path, MaskerConfig* cfg) {
    const json j = read_json_file(path);
    if (j.value("schema", "") != "dissector.masker/1") throw ValidationError(path.string() + " is not a masker");
    auto masker = std::make_unique<MaskerModel>(TransformerConfig::from_json(j.at("encoder_config")),
                                                HeadConfig::from_json(j.at("head_config")),
                                                Vocabulary::from_json(j.at("vocabulary")), 0);
    params_from_json(masker->encoder().parameters(), j.at("encoder"));
    params_from_json(masker->head().parameters(), j.at("head"));
    auto sets = masker->parameter_sets();
    params_from_json(*sets[2], j.at("extra"));
    if (cfg) *cfg = MaskerConfig::from_json(j.at("masker"));
    return masker;
}

}  // namespace dissector

#include "dissector/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace dissector {

namespace {

constexpr const char* kStyle = R"(<style>
body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.5}
.bar{display:flex;align-items:center;gap:.5em;margin:.2em 0}
.bar span.fill{display:inline-block;height:1em}
.s{background:#2e8b57}.r{background:#c0392b}.n{background:#7f8c8d}
.sent{padding:.3em .5em;margin:.3em 0;border-left:4px solid #ccc}
.gold{border-left-color:#000}
.banner{background:#f1c40f;padding:.5em;font-weight:bold}
.meta{color:#555;font-size:.85em}
table{border-collapse:collapse}td,th{padding:.2em .6em;border-bottom:1px solid #ddd;text-align:left}
</style>)";

std::string fmt(double v, int digits = 3) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(digits) << v;
    return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
}

std::string veracity_bars(const VeracityDistribution& v) {
    static const char* const kNames[] = {"SUPPORTS", "REFUTES", "NOT ENOUGH INFO"};
    static const char* const kClasses[] = {"s", "r", "n"};
    std::string out;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double w = std::clamp(v[c], 0.0, 1.0) * 20.0;
        out += "<div class=\"bar\"><span style=\"width:11em\">" + std::string(kNames[c]) + "</span><span class=\"fill " +
               kClasses[c] + "\" style=\"width:" + fmt(w, 2) + "em\"></span><span>" + fmt(v[c]) + "</span></div>\n";
    }
    return out;
}

}  // namespace

std::string html_escape(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

double token_opacity(double score) {
    if (std::isnan(score)) return 0.0;
    return std::clamp(score, 0.0, 1.0);
}

std::string claim_page_name(const std::string& claim_id) {
    std::string out = "claim_";
    for (unsigned char c : claim_id) {
        if (std::isalnum(c) || c == '-' || c == '_') {
            out += static_cast<char>(c);
        } else {
            static const char* const kHex = "0123456789ABCDEF";
            out += '~';
            out += kHex[c >> 4];
            out += kHex[c & 15];
        }
    }
    return out + ".html";
}

std::string render_claim_page(const Prediction& prediction, const Corpus& corpus, const ClaimInstance* claim) {
    std::map<std::pair<std::string, int>, std::map<int, double>> token_scores;
    for (const auto& t : prediction.tokens) token_scores[{t.doc_id, t.sentence_index}][t.token_offset] = t.score;
    std::set<SentenceRef> gold;
    if (claim) {
        for (const auto& g : claim->gold_sentences()) gold.insert(g);
    }

    std::string page = "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>" + html_escape(prediction.claim_id) +
                       "</title>" + kStyle + "</head><body>\n";
    page += "<p><a href=\"index.html\">index</a></p>\n";
    page += "<h1>" + html_escape(claim ? claim->claim_text : prediction.claim_id) + "</h1>\n";
    page += "<p class=\"meta\">claim " + html_escape(prediction.claim_id) + " &middot; head " +
            html_escape(prediction.head) + " &middot; predicted " + std::string(label_name(prediction.label()));
    if (claim) page += " &middot; gold " + std::string(label_name(claim->label));
    page += "</p>\n";
    if (prediction.conflicting) {
        page += "<div class=\"banner\">Conflicting evidence: some sentences support and others refute this claim.</div>\n";
    }
    page += "<h2>Veracity</h2>\n" + veracity_bars(prediction.veracity);
    page += "<h2>Evidence</h2>\n";
    for (const auto& s : prediction.sentences) {
        const double ps = std::clamp(s.p(kSupport), 0.0, 1.0);
        const double pr = std::clamp(s.p(kRefute), 0.0, 1.0);
        const bool is_gold = gold.count(SentenceRef{s.doc_id, s.sentence_index}) > 0;
        page += "<div class=\"sent" + std::string(is_gold ? " gold" : "") + "\" style=\"background:rgba(46,139,87," +
                fmt(ps) + ");box-shadow:inset 0 0 0 999px rgba(192,57,43," + fmt(pr * (1.0 - ps)) + ")\">";
        page += "<div class=\"meta\">" + html_escape(s.doc_id) + " #" + std::to_string(s.sentence_index) + " &middot; S " +
                fmt(s.p(kSupport)) + " R " + fmt(s.p(kRefute)) + " IRR " + fmt(s.p(kIrrelevant)) +
                (is_gold ? " &middot; gold" : "") + "</div>";
        const Document* doc = corpus.find(s.doc_id);
        const auto scores = token_scores.find({s.doc_id, s.sentence_index});
        if (doc && s.sentence_index >= 0 && s.sentence_index < static_cast<int>(doc->sentences.size())) {
            const auto& tokens = doc->sentences[static_cast<std::size_t>(s.sentence_index)];
            for (std::size_t t = 0; t < tokens.size(); ++t) {
                double opacity = 1.0;
                if (scores != token_scores.end()) {
                    const auto it = scores->second.find(static_cast<int>(t));
                    opacity = it == scores->second.end() ? 0.0 : token_opacity(it->second);
                }
                page += "<span style=\"opacity:" + fmt(std::max(opacity, 0.15)) + "\" data-score=\"" + fmt(opacity) +
                        "\">" + html_escape(tokens[t]) + "</span> ";
            }
        } else {
            page += "<em>sentence not in corpus</em>";
        }
        page += "</div>\n";
    }
    std::set<SentenceRef> shown;
    for (const auto& s : prediction.sentences) shown.insert(SentenceRef{s.doc_id, s.sentence_index});
    std::string missing;
    for (const auto& g : gold) {
        if (shown.count(g)) continue;
        const Document* doc = corpus.find(g.doc_id);
        const bool ok = doc && g.sentence_index >= 0 && g.sentence_index < static_cast<int>(doc->sentences.size());
        missing += "<div class=\"sent gold\"><div class=\"meta\">" + html_escape(g.doc_id) + " #" +
                   std::to_string(g.sentence_index) + "</div>" +
                   (ok ? html_escape(join_tokens(doc->sentences[static_cast<std::size_t>(g.sentence_index)]))
                       : std::string("<em>sentence not in corpus</em>")) +
                   "</div>\n";
    }
    if (!missing.empty()) page += "<h2>Gold evidence outside the input</h2>\n" + missing;
    page += "</body></html>\n";
    return page;
}

std::vector<std::filesystem::path> emit_html_report(const std::vector<Prediction>& predictions, const Corpus& corpus,
                                                    const std::filesystem::path& out_dir,
                                                    const std::vector<ClaimInstance>& claims) {
    std::filesystem::create_directories(out_dir);
    std::map<std::string, const ClaimInstance*> by_id;
    for (const auto& c : claims) by_id[c.claim_id] = &c;

    std::vector<std::filesystem::path> written;
    std::string index = std::string("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Predictions</title>") +
                        kStyle + "</head><body>\n<h1>Predictions</h1>\n";
    if (predictions.empty()) {
        index += "<p>No predictions.</p>\n";
    } else {
        index += "<table><tr><th>claim</th><th>predicted</th><th>gold</th><th>conflict</th></tr>\n";
    }
    for (const auto& p : predictions) {
        const auto it = by_id.find(p.claim_id);
        const ClaimInstance* claim = it == by_id.end() ? nullptr : it->second;
        const std::string name = claim_page_name(p.claim_id);
        write_file(out_dir / name, render_claim_page(p, corpus, claim));
        written.push_back(out_dir / name);
        index += "<tr><td><a href=\"" + name + "\">" + html_escape(p.claim_id) + "</a></td><td>" +
                 std::string(label_name(p.label())) + "</td><td>" +
                 (claim ? std::string(label_name(claim->label)) : std::string("-")) + "</td><td>" +
                 (p.conflicting ? "yes" : "") + "</td></tr>\n";
    }
    if (!predictions.empty()) index += "</table>\n";
    index += "</body></html>\n";
    write_file(out_dir / "index.html", index);
    written.insert(written.begin(), out_dir / "index.html");
    return written;
}

}  // namespace dissector

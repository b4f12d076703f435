#include "dissector/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace dissector {

using nlohmann::json;

std::string Document::text() const {
    std::string out;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        if (i > 0) out += ' ';
        out += join_tokens(sentences[i]);
    }
    return out;
}

std::vector<SentenceRef> ClaimInstance::gold_sentences() const {
    std::set<SentenceRef> all;
    for (const auto& group : evidence_groups) all.insert(group.begin(), group.end());
    return {all.begin(), all.end()};
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
    index_.reserve(docs_.size());
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (!index_.emplace(docs_[i].doc_id, i).second) {
            throw ValidationError("duplicate doc_id '" + docs_[i].doc_id + "'");
        }
    }
}

const Document* Corpus::find(const std::string& doc_id) const {
    auto it = index_.find(doc_id);
    return it == index_.end() ? nullptr : &docs_[it->second];
}

const Document& Corpus::at(const std::string& doc_id) const {
    const Document* doc = find(doc_id);
    if (doc == nullptr) throw ValidationError("unknown doc_id '" + doc_id + "'");
    return *doc;
}

void Corpus::check_claims(const std::vector<ClaimInstance>& claims) const {
    for (const auto& claim : claims) {
        for (const auto& group : claim.evidence_groups) {
            for (const auto& ref : group) {
                const Document* doc = find(ref.doc_id);
                if (doc == nullptr || ref.sentence_index < 0 ||
                    ref.sentence_index >= static_cast<int>(doc->sentences.size())) {
                    throw ValidationError("claim " + claim.claim_id + ": evidence (" + ref.doc_id + ", " +
                                          std::to_string(ref.sentence_index) + ") does not resolve");
                }
            }
        }
    }
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || (c & 0x80) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

TokenSeq tokenize(std::string_view text) {
    TokenSeq out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (is_space(c)) {
            flush();
        } else if (is_punct(c)) {
            // Intra-word joiners stay inside the word: "don't", "well-known", "snake_case".
            const bool joiner = (c == '\'' || c == '-' || c == '_') && !current.empty() && i + 1 < text.size() &&
                                is_alnum(text[i + 1]);
            if (joiner) {
                current += c;
            } else {
                flush();
                out.emplace_back(1, c);
            }
        } else {
            current += c;
        }
    }
    flush();
    return out;
}

std::string join_tokens(const TokenSeq& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) out += ' ';
        out += tokens[i];
    }
    return out;
}

std::vector<TokenSeq> RuleBasedSplitter::split(std::string_view text) const {
    std::vector<TokenSeq> out;
    std::size_t start = 0;
    auto emit = [&](std::size_t end) {
        TokenSeq tokens = tokenize(text.substr(start, end - start));
        if (!tokens.empty()) out.push_back(std::move(tokens));
        start = end;
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '?' && c != '!') continue;
        std::size_t end = i + 1;
        while (end < text.size() && (text[end] == '"' || text[end] == '\'' || text[end] == ')')) ++end;
        if (end == text.size() || is_space(text[end])) {
            emit(end);
            i = end - 1;
        }
    }
    emit(text.size());
    return out;
}

std::vector<TokenSeq> segment_sentences(std::string_view text) { return RuleBasedSplitter{}.split(text); }

std::vector<Block> split_into_blocks(const Document& doc, int budget, const LengthMeasure& measure) {
    if (budget <= 0) throw ContractError("block budget must be positive");
    std::vector<Block> blocks;
    Block current;
    current.doc_id = doc.doc_id;
    auto close = [&] {
        if (current.sentence_indices.empty()) return;
        current.block_index = static_cast<int>(blocks.size());
        blocks.push_back(current);
        current.sentence_indices.clear();
        current.token_count = 0;
        current.truncated = false;
    };
    for (int i = 0; i < static_cast<int>(doc.sentences.size()); ++i) {
        const int length = measure(doc.sentences[static_cast<std::size_t>(i)]);
        if (length <= 0) throw ContractError("length measure must be positive");
        if (length > budget) {
            close();
            spdlog::info("{}: sentence {} has {} tokens, truncated to block budget {}", doc.doc_id, i, length,
                         budget);
            current.sentence_indices.push_back(i);
            current.token_count = budget;
            current.truncated = true;
            close();
            continue;
        }
        if (current.token_count + length > budget) close();
        current.sentence_indices.push_back(i);
        current.token_count += length;
    }
    close();
    return blocks;
}

// ---------------------------------------------------------------------------
// FEVER claims

ClaimInstance parse_fever_claim(std::string_view line, std::size_t line_number) {
    json record;
    try {
        record = json::parse(line);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), line_number);
    }
    try {
        ClaimInstance claim;
        const auto& id = record.at("id");
        claim.claim_id = id.is_string() ? id.get<std::string>() : std::to_string(id.get<long long>());
        claim.claim_text = record.at("claim").get<std::string>();
        claim.claim = tokenize(claim.claim_text);
        const auto label_text = record.at("label").get<std::string>();
        const auto label = parse_label(label_text);
        if (!label) throw ValidationError("unknown label '" + label_text + "' on line " + std::to_string(line_number));
        claim.label = *label;

        std::vector<EvidenceGroup> groups;
        for (const auto& annotation : record.value("evidence", json::array())) {
            std::set<SentenceRef> members;
            for (const auto& entry : annotation) {
                if (!entry.is_array() || entry.size() < 4 || entry[2].is_null() || entry[3].is_null()) continue;
                members.insert(SentenceRef{entry[2].get<std::string>(), entry[3].get<int>()});
            }
            if (members.empty()) continue;
            EvidenceGroup group(members.begin(), members.end());
            if (std::find(groups.begin(), groups.end(), group) == groups.end()) groups.push_back(std::move(group));
        }
        claim.evidence_groups = std::move(groups);

        for (const auto& reference : record.value("rationales", json::array())) {
            TokenReference tokens;
            for (const auto& t : reference) {
                tokens.push_back(TokenPointer{t.at(0).get<std::string>(), t.at(1).get<int>(), t.at(2).get<int>()});
            }
            claim.rationales.push_back(std::move(tokens));
        }
        return claim;
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad claim record: ") + e.what(), line_number);
    }
}

std::vector<ClaimInstance> load_fever_claims(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open claims file " + path.string());
    std::vector<ClaimInstance> claims;
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        claims.push_back(parse_fever_claim(line, line_number));
    }
    return claims;
}

void write_fever_claims(const std::filesystem::path& path, const std::vector<ClaimInstance>& claims) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& claim : claims) {
        json record{{"schema", "dissector.claims/1"}};
        const bool numeric = !claim.claim_id.empty() && claim.claim_id.size() < 18 &&
                             std::all_of(claim.claim_id.begin(), claim.claim_id.end(),
                                         [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) &&
                             (claim.claim_id == "0" || claim.claim_id[0] != '0');
        if (numeric) {
            record["id"] = std::stoll(claim.claim_id);
        } else {
            record["id"] = claim.claim_id;
        }
        record["claim"] = claim.claim_text;
        record["label"] = std::string(label_name(claim.label));
        json evidence = json::array();
        for (std::size_t g = 0; g < claim.evidence_groups.size(); ++g) {
            json annotation = json::array();
            for (const auto& ref : claim.evidence_groups[g]) {
                annotation.push_back(json::array({g, nullptr, ref.doc_id, ref.sentence_index}));
            }
            evidence.push_back(std::move(annotation));
        }
        record["evidence"] = std::move(evidence);
        if (!claim.rationales.empty()) {
            json rationales = json::array();
            for (const auto& reference : claim.rationales) {
                json tokens = json::array();
                for (const auto& t : reference) tokens.push_back(json::array({t.doc_id, t.sentence_index, t.token_offset}));
                rationales.push_back(std::move(tokens));
            }
            record["rationales"] = std::move(rationales);
        }
        out << record.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Corpus

namespace {

// FEVER wiki-pages store "lines" as "idx\tsentence\tanchor\ttarget...\n" rows.
void parse_fever_lines(const std::string& lines, Document& doc, std::vector<std::pair<std::string, std::string>>& anchors) {
    std::istringstream rows(lines);
    std::string row;
    while (std::getline(rows, row)) {
        std::vector<std::string> fields;
        std::size_t pos = 0;
        while (true) {
            const std::size_t tab = row.find('\t', pos);
            fields.push_back(row.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        if (fields.size() < 2) continue;
        TokenSeq tokens = tokenize(fields[1]);
        if (tokens.empty()) continue;
        doc.sentences.push_back(std::move(tokens));
        for (std::size_t f = 2; f + 1 < fields.size(); f += 2) anchors.emplace_back(fields[f], fields[f + 1]);
    }
}

Document parse_document(const json& record, const SentenceSplitter& splitter) {
    Document doc;
    doc.doc_id = record.at("id").get<std::string>();
    if (record.contains("title_tokens")) {
        doc.title = record["title_tokens"].get<TokenSeq>();
    } else if (record.contains("title")) {
        doc.title = tokenize(record["title"].get<std::string>());
    } else {
        std::string title = doc.doc_id;
        std::replace(title.begin(), title.end(), '_', ' ');
        doc.title = tokenize(title);
    }

    std::vector<std::pair<std::string, std::string>> anchors;
    if (record.contains("sentences")) {
        doc.sentences = record["sentences"].get<std::vector<TokenSeq>>();
    } else if (record.contains("lines") && record["lines"].is_array()) {
        for (const auto& line : record["lines"]) {
            TokenSeq tokens = tokenize(line.get<std::string>());
            if (!tokens.empty()) doc.sentences.push_back(std::move(tokens));
        }
    } else if (record.contains("lines") && record["lines"].is_string()) {
        parse_fever_lines(record["lines"].get<std::string>(), doc, anchors);
    } else if (record.contains("text")) {
        doc.sentences = splitter.split(record["text"].get<std::string>());
    }

    if (record.contains("links")) {
        for (const auto& link : record["links"]) {
            if (link.is_array()) {
                doc.hyperlinks.push_back(Hyperlink{link.at(0).get<std::string>(), link.at(1).get<std::size_t>()});
            } else {
                doc.hyperlinks.push_back(
                    Hyperlink{link.at("target").get<std::string>(), link.at("offset").get<std::size_t>()});
            }
        }
    }
    if (!anchors.empty()) {
        const std::string text = doc.text();
        std::size_t cursor = 0;
        for (const auto& [anchor, target] : anchors) {
            const std::size_t at = text.find(anchor, cursor);
            const std::size_t offset = at == std::string::npos ? cursor : at;
            doc.hyperlinks.push_back(Hyperlink{target, offset});
            if (at != std::string::npos) cursor = at;
        }
    }

    const std::size_t length = doc.text().size();
    for (const auto& link : doc.hyperlinks) {
        if (link.offset > length) {
            throw ValidationError(doc.doc_id + ": hyperlink offset " + std::to_string(link.offset) +
                                  " outside document text");
        }
    }
    if (doc.sentences.empty()) spdlog::debug("{}: document has no sentences", doc.doc_id);
    return doc;
}

void read_corpus_file(const std::filesystem::path& path, const SentenceSplitter& splitter,
                      std::vector<Document>& docs) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            docs.push_back(parse_document(json::parse(line), splitter));
        } catch (const json::exception& e) {
            throw ParseError(path.string() + ": bad corpus record: " + e.what(), line_number);
        }
    }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, const SentenceSplitter& splitter) {
    std::vector<Document> docs;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            const auto ext = entry.path().extension();
            if (entry.is_regular_file() && (ext == ".jsonl" || ext == ".json")) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& file : files) read_corpus_file(file, splitter, docs);
    } else {
        read_corpus_file(path, splitter, docs);
    }
    if (docs.empty()) spdlog::warn("corpus at {} is empty", path.string());
    return Corpus(std::move(docs));
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& doc : corpus.documents()) {
        json links = json::array();
        for (const auto& link : doc.hyperlinks) links.push_back({{"target", link.target}, {"offset", link.offset}});
        json record{{"schema", "dissector.corpus/1"}, {"id", doc.doc_id}, {"title_tokens", doc.title}, {"sentences", doc.sentences}, {"links", links}};
        out << record.dump() << '\n';
    }
}

}  // namespace dissector

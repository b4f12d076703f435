#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dissector/corpus.hpp"
#include "dissector/model.hpp"

namespace dissector {

std::string html_escape(const std::string& text);

/// Rationale score -> CSS opacity, clipped to [0, 1]; NaN maps to 0.
double token_opacity(double score);

/// Page file name of a claim, safe for any claim id.
std::string claim_page_name(const std::string& claim_id);

/// Self-contained page for one prediction. `claim` supplies the claim text and gold label when known.
std::string render_claim_page(const Prediction& prediction, const Corpus& corpus, const ClaimInstance* claim);

/// Writes index.html plus one page per prediction into `out_dir`; returns the written paths.
std::vector<std::filesystem::path> emit_html_report(const std::vector<Prediction>& predictions, const Corpus& corpus,
                                                    const std::filesystem::path& out_dir,
                                                    const std::vector<ClaimInstance>& claims = {});

}  // namespace dissector

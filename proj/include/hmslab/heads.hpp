#pragma once

// Attention-share analysis: per-sample and dataset-mean shares of the query
// row over the instruction/image/text groups, head ranking and selection,
// overlap statistics, masking sweeps, and CSV exports.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hmslab/data.hpp"
#include "hmslab/model.hpp"

namespace hmslab {

using GroupShares = std::array<double, 3>;  // indexed by Group

// Shares per head (index layer * n_query_heads + head). Throws kInvariant
// when a row's length differs from the tag count.
std::vector<GroupShares> per_sample_shares(const ForwardTrace& trace, const TokenSequence& seq);

struct ShareTable {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<GroupShares> mean;
  std::size_t samples = 0;

  double at(HeadId h, Group g) const {
    return mean[h.layer * n_heads + h.head][static_cast<std::size_t>(g)];
  }
  std::map<HeadId, double> scores(Group g) const;
};

ShareTable aggregate_shares(const Model& model, const std::vector<SyntheticSample>& data,
                            Setting setting);

struct ScoredHead {
  HeadId id;
  double score = 0.0;
  friend bool operator==(const ScoredHead&, const ScoredHead&) = default;
};

struct HeadAssignments {
  std::vector<ScoredHead> img_heads;
  std::vector<ScoredHead> txt_heads;
  std::size_t k = 0;
  std::string source;

  HeadMask img_set() const;
  HeadMask txt_set() const;
  const std::vector<ScoredHead>& for_group(Group g) const {
    return g == Group::kImg ? img_heads : txt_heads;
  }
  friend bool operator==(const HeadAssignments&, const HeadAssignments&) = default;
};

// Full ranking of all heads by the group's mean share: descending score,
// ties by (layer, head) ascending.
std::vector<ScoredHead> rank_heads(const ShareTable& table, Group g);
HeadAssignments select_top_k(const ShareTable& table, std::size_t k);
// Lowest-share heads, ascending score, ties by (layer, head) ascending.
HeadAssignments select_bottom_k(const ShareTable& table, std::size_t k);

struct OverlapStats {
  std::size_t k = 0;
  std::size_t intersection = 0;
  std::size_t union_size = 0;
  double overlap = 0.0;  // |A n B| / K
  double jaccard = 0.0;  // |A n B| / |A u B|
  // score_b - score_a over A n B, in (layer, head) order.
  std::vector<double> deltas;
  std::optional<double> mean_delta;
  std::optional<double> median_delta;
};

OverlapStats overlap_stats(const std::vector<ScoredHead>& a, const std::vector<ScoredHead>& b,
                           const std::map<HeadId, double>& scores_a,
                           const std::map<HeadId, double>& scores_b);
// Uses the scores carried by the lists themselves.
OverlapStats overlap_stats(const std::vector<ScoredHead>& a, const std::vector<ScoredHead>& b);

struct SweepRow {
  std::size_t k = 0;
  double ranked_f1 = 0.0;
  double random_f1_mean = 0.0;
  double random_f1_std = 0.0;  // sample standard deviation over draws
};

struct SweepOptions {
  std::vector<std::size_t> ks;
  std::size_t n_random = 5;
  std::uint64_t seed = 7;
};

// For each k, masks the top-k heads of the matching modality's ranking and
// k uniformly drawn heads (n_random draws). Setting must be unimodal.
std::vector<SweepRow> mask_sweep(const Model& model, const std::vector<SyntheticSample>& test,
                                 const HeadAssignments& ranking, Setting setting,
                                 const SweepOptions& opts);

// ---- CSV I/O; every file starts with "# fingerprint=<hex>" ----

std::string format_assignments_csv(const HeadAssignments& a, const std::string& fingerprint);
HeadAssignments parse_assignments_csv(const std::string& text, const std::string& source);
std::string format_share_table_csv(const ShareTable& t, const std::string& fingerprint);
ShareTable parse_share_table_csv(const std::string& text, const std::string& source);
// n_layers rows x n_query_heads columns.
std::string format_heatmap_csv(const ShareTable& t, Group g, const std::string& fingerprint);
// (setting, rank, share) rows, shares descending, first top_n ranks per table.
std::string format_ranked_curve_csv(const std::vector<std::pair<std::string, ShareTable>>& tables,
                                    Group g, std::size_t top_n, const std::string& fingerprint);
std::string format_sweep_csv(const std::vector<SweepRow>& rows, const std::string& fingerprint);
std::string format_overlap_csv(const std::vector<std::pair<std::string, OverlapStats>>& rows,
                               const std::string& fingerprint);

void export_heatmap(const ShareTable& t, Group g, const std::filesystem::path& path,
                    const std::string& fingerprint);
void export_ranked_curve(const std::vector<std::pair<std::string, ShareTable>>& tables, Group g,
                         std::size_t top_n, const std::filesystem::path& path,
                         const std::string& fingerprint);

// Strips the fingerprint comment; returns (fingerprint, remaining lines).
std::pair<std::string, std::vector<std::string>> split_csv(const std::string& text,
                                                           const std::string& source);

}  // namespace hmslab

#include "hmslab/heads.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "hmslab/error.hpp"
#include "hmslab/eval.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

double to_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail_data(where + ": bad number '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s, const std::string& where) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) fail_data(where + ": bad integer '" + s + "'");
  return v;
}

std::string header_line(const std::string& fingerprint) {
  return "# fingerprint=" + fingerprint + "\n";
}

HeadMask to_mask(const std::vector<ScoredHead>& v) {
  HeadMask m;
  for (const auto& s : v) m.insert(s.id);
  return m;
}

}  // namespace

std::vector<GroupShares> per_sample_shares(const ForwardTrace& trace, const TokenSequence& seq) {
  std::vector<GroupShares> out;
  out.reserve(trace.attention_rows.size());
  for (const auto& row : trace.attention_rows) {
    if (row.size() != seq.group_tags.size()) {
      fail_invariant("attention row of length " + std::to_string(row.size()) + " vs " +
                     std::to_string(seq.group_tags.size()) + " group tags");
    }
    GroupShares s{};
    for (std::size_t j = 0; j < row.size(); ++j) {
      s[static_cast<std::size_t>(seq.group_tags[j])] += row[j];
    }
    out.push_back(s);
  }
  return out;
}

std::map<HeadId, double> ShareTable::scores(Group g) const {
  std::map<HeadId, double> m;
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (std::size_t h = 0; h < n_heads; ++h) m[{l, h}] = at({l, h}, g);
  }
  return m;
}

ShareTable aggregate_shares(const Model& model, const std::vector<SyntheticSample>& data,
                            Setting setting) {
  if (data.empty()) fail_usage("aggregate_shares: no samples");
  const ModelConfig& c = model.config();
  ShareTable t;
  t.n_layers = c.n_layers;
  t.n_heads = c.n_query_heads;
  t.mean.assign(c.total_heads(), GroupShares{});
  for (const SyntheticSample& s : data) {
    const TokenSequence seq = build_sequence(s, setting);
    const auto shares = per_sample_shares(model.trace(seq), seq);
    for (std::size_t i = 0; i < shares.size(); ++i) {
      for (std::size_t g = 0; g < 3; ++g) t.mean[i][g] += shares[i][g];
    }
  }
  t.samples = data.size();
  for (auto& m : t.mean) {
    for (double& v : m) v /= static_cast<double>(data.size());
  }
  return t;
}

HeadMask HeadAssignments::img_set() const { return to_mask(img_heads); }
HeadMask HeadAssignments::txt_set() const { return to_mask(txt_heads); }

std::vector<ScoredHead> rank_heads(const ShareTable& table, Group g) {
  std::vector<ScoredHead> all;
  for (std::size_t l = 0; l < table.n_layers; ++l) {
    for (std::size_t h = 0; h < table.n_heads; ++h) all.push_back({{l, h}, table.at({l, h}, g)});
  }
  std::stable_sort(all.begin(), all.end(), [](const ScoredHead& a, const ScoredHead& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  return all;
}

namespace {

HeadAssignments select(const ShareTable& table, std::size_t k, bool top) {
  const std::size_t total = table.n_layers * table.n_heads;
  if (k == 0 || k > total) {
    fail_usage("K=" + std::to_string(k) + " must lie in [1, " + std::to_string(total) + "]");
  }
  HeadAssignments a;
  a.k = k;
  for (Group g : {Group::kImg, Group::kText}) {
    std::vector<ScoredHead> ranked = rank_heads(table, g);
    if (!top) {
      std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredHead& x, const ScoredHead& y) {
        if (x.score != y.score) return x.score < y.score;
        return x.id < y.id;
      });
    }
    ranked.resize(k);
    (g == Group::kImg ? a.img_heads : a.txt_heads) = std::move(ranked);
  }
  return a;
}

}  // namespace

HeadAssignments select_top_k(const ShareTable& table, std::size_t k) {
  return select(table, k, true);
}

HeadAssignments select_bottom_k(const ShareTable& table, std::size_t k) {
  return select(table, k, false);
}

OverlapStats overlap_stats(const std::vector<ScoredHead>& a, const std::vector<ScoredHead>& b,
                           const std::map<HeadId, double>& scores_a,
                           const std::map<HeadId, double>& scores_b) {
  if (a.size() != b.size()) {
    fail_usage("overlap_stats: head lists of size " + std::to_string(a.size()) + " and " +
               std::to_string(b.size()));
  }
  if (a.empty()) fail_usage("overlap_stats: empty head lists");
  const HeadMask sa = to_mask(a);
  const HeadMask sb = to_mask(b);
  if (sa.size() != a.size() || sb.size() != b.size()) {
    fail_usage("overlap_stats: duplicate heads in a list");
  }
  OverlapStats st;
  st.k = a.size();
  for (const HeadId& h : sa) {
    if (!sb.count(h)) continue;
    ++st.intersection;
    const auto ia = scores_a.find(h);
    const auto ib = scores_b.find(h);
    if (ia == scores_a.end() || ib == scores_b.end()) {
      fail_data("overlap_stats: missing score for an overlapping head");
    }
    st.deltas.push_back(ib->second - ia->second);
  }
  st.union_size = sa.size() + sb.size() - st.intersection;
  st.overlap = static_cast<double>(st.intersection) / static_cast<double>(st.k);
  st.jaccard = static_cast<double>(st.intersection) / static_cast<double>(st.union_size);
  if (!st.deltas.empty()) {
    st.mean_delta = std::accumulate(st.deltas.begin(), st.deltas.end(), 0.0) /
                    static_cast<double>(st.deltas.size());
    std::vector<double> sorted = st.deltas;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    st.median_delta = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  }
  return st;
}

OverlapStats overlap_stats(const std::vector<ScoredHead>& a, const std::vector<ScoredHead>& b) {
  std::map<HeadId, double> sa, sb;
  for (const auto& s : a) sa[s.id] = s.score;
  for (const auto& s : b) sb[s.id] = s.score;
  return overlap_stats(a, b, sa, sb);
}

std::vector<SweepRow> mask_sweep(const Model& model, const std::vector<SyntheticSample>& test,
                                 const HeadAssignments& ranking, Setting setting,
                                 const SweepOptions& opts) {
  if (setting == Setting::kMulti) fail_usage("mask_sweep needs IMG_ONLY or TEXT_ONLY");
  if (!std::is_sorted(opts.ks.begin(), opts.ks.end())) fail_usage("mask_sweep: ks must ascend");
  const ModelConfig& c = model.config();
  const std::size_t total = c.total_heads();
  const auto& ranked = ranking.for_group(setting == Setting::kImgOnly ? Group::kImg : Group::kText);

  auto f1_with = [&](HeadMask mask) {
    const Model masked = model.with_mask(std::move(mask));
    const Predictions p = predict_setting(masked, test, setting);
    if (p.preds.empty()) fail_data("mask_sweep: no test sample carries the needed gold label");
    return macro_f1(p.preds, p.golds);
  };

  std::vector<HeadId> all;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (std::size_t h = 0; h < c.n_query_heads; ++h) all.push_back({l, h});
  }

  std::vector<SweepRow> rows;
  for (std::size_t k : opts.ks) {
    if (k > total) {
      fail_usage("mask_sweep: k=" + std::to_string(k) + " exceeds " + std::to_string(total) +
                 " heads");
    }
    if (k > ranked.size()) {
      fail_usage("mask_sweep: k=" + std::to_string(k) + " exceeds the " +
                 std::to_string(ranked.size()) + "-head ranking");
    }
    SweepRow row;
    row.k = k;
    HeadMask top;
    for (std::size_t i = 0; i < k; ++i) top.insert(ranked[i].id);
    row.ranked_f1 = f1_with(top);

    std::vector<double> draws;
    for (std::size_t d = 0; d < opts.n_random; ++d) {
      std::mt19937_64 rng(mix_seed(opts.seed, k, d));
      std::vector<HeadId> pool = all;
      std::shuffle(pool.begin(), pool.end(), rng);
      draws.push_back(f1_with(HeadMask(pool.begin(), pool.begin() + static_cast<long>(k))));
    }
    if (!draws.empty()) {
      const double n = static_cast<double>(draws.size());
      row.random_f1_mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
      double ss = 0.0;
      for (double v : draws) ss += (v - row.random_f1_mean) * (v - row.random_f1_mean);
      row.random_f1_std = draws.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

// ------------------------------------------------------------------ CSV

std::pair<std::string, std::vector<std::string>> split_csv(const std::string& text,
                                                           const std::string& source) {
  std::vector<std::string> lines;
  std::string fp;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# fingerprint=", 0) == 0) {
      fp = line.substr(14);
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    lines.push_back(line);
  }
  if (lines.empty()) fail_data(source + ": missing CSV header");
  return {fp, lines};
}

std::string format_assignments_csv(const HeadAssignments& a, const std::string& fingerprint) {
  std::string out = header_line(fingerprint) + "modality,rank,layer,head,score\n";
  for (const auto& [name, list] :
       {std::pair{"img", &a.img_heads}, std::pair{"text", &a.txt_heads}}) {
    for (std::size_t r = 0; r < list->size(); ++r) {
      const auto& s = (*list)[r];
      out += std::string(name) + "," + std::to_string(r + 1) + "," + std::to_string(s.id.layer) +
             "," + std::to_string(s.id.head) + "," + format_double(s.score) + "\n";
    }
  }
  return out;
}

HeadAssignments parse_assignments_csv(const std::string& text, const std::string& source) {
  auto [fp, lines] = split_csv(text, source);
  if (lines[0] != "modality,rank,layer,head,score") {
    fail_data(source + ": unexpected header '" + lines[0] + "'");
  }
  HeadAssignments a;
  a.source = source;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = source + ": row " + std::to_string(i);
    const auto f = split(lines[i], ',');
    if (f.size() != 5) fail_data(where + ": expected 5 fields");
    auto& list = f[0] == "img" ? a.img_heads : f[0] == "text" ? a.txt_heads
                                 : (fail_data(where + ": unknown modality '" + f[0] + "'"), a.img_heads);
    const std::size_t rank = to_size(f[1], where);
    if (rank != list.size() + 1) fail_data(where + ": ranks must be consecutive from 1");
    list.push_back({{to_size(f[2], where), to_size(f[3], where)}, to_double(f[4], where)});
  }
  if (a.img_heads.size() != a.txt_heads.size()) {
    fail_data(source + ": img and text lists differ in length");
  }
  a.k = a.img_heads.size();
  return a;
}

std::string format_share_table_csv(const ShareTable& t, const std::string& fingerprint) {
  std::string out = header_line(fingerprint) + "layer,head,ins,img,text,samples\n";
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    for (std::size_t h = 0; h < t.n_heads; ++h) {
      const auto& m = t.mean[l * t.n_heads + h];
      out += std::to_string(l) + "," + std::to_string(h) + "," + format_double(m[0]) + "," +
             format_double(m[1]) + "," + format_double(m[2]) + "," + std::to_string(t.samples) +
             "\n";
    }
  }
  return out;
}

ShareTable parse_share_table_csv(const std::string& text, const std::string& source) {
  auto [fp, lines] = split_csv(text, source);
  if (lines[0] != "layer,head,ins,img,text,samples") {
    fail_data(source + ": unexpected header '" + lines[0] + "'");
  }
  struct Row {
    HeadId id;
    GroupShares s;
    std::size_t n;
  };
  std::vector<Row> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = source + ": row " + std::to_string(i);
    const auto f = split(lines[i], ',');
    if (f.size() != 6) fail_data(where + ": expected 6 fields");
    rows.push_back({{to_size(f[0], where), to_size(f[1], where)},
                    {to_double(f[2], where), to_double(f[3], where), to_double(f[4], where)},
                    to_size(f[5], where)});
  }
  ShareTable t;
  for (const auto& r : rows) {
    t.n_layers = std::max(t.n_layers, r.id.layer + 1);
    t.n_heads = std::max(t.n_heads, r.id.head + 1);
  }
  if (rows.size() != t.n_layers * t.n_heads) fail_data(source + ": incomplete share table");
  t.mean.assign(rows.size(), GroupShares{});
  for (const auto& r : rows) {
    t.mean[r.id.layer * t.n_heads + r.id.head] = r.s;
    t.samples = r.n;
  }
  return t;
}

std::string format_heatmap_csv(const ShareTable& t, Group g, const std::string& fingerprint) {
  std::string out = header_line(fingerprint) + "layer";
  for (std::size_t h = 0; h < t.n_heads; ++h) out += ",h" + std::to_string(h);
  out += "\n";
  for (std::size_t l = 0; l < t.n_layers; ++l) {
    out += std::to_string(l);
    for (std::size_t h = 0; h < t.n_heads; ++h) out += "," + format_double(t.at({l, h}, g));
    out += "\n";
  }
  return out;
}

std::string format_ranked_curve_csv(const std::vector<std::pair<std::string, ShareTable>>& tables,
                                    Group g, std::size_t top_n, const std::string& fingerprint) {
  std::string out = header_line(fingerprint) + "setting,rank,share\n";
  for (const auto& [name, table] : tables) {
    const auto ranked = rank_heads(table, g);
    const std::size_t n = std::min(top_n, ranked.size());
    for (std::size_t r = 0; r < n; ++r) {
      out += name + "," + std::to_string(r + 1) + "," + format_double(ranked[r].score) + "\n";
    }
  }
  return out;
}

std::string format_sweep_csv(const std::vector<SweepRow>& rows, const std::string& fingerprint) {
  std::string out = header_line(fingerprint) + "k,ranked_f1,random_f1_mean,random_f1_std\n";
  for (const auto& r : rows) {
    out += std::to_string(r.k) + "," + format_double(r.ranked_f1) + "," +
           format_double(r.random_f1_mean) + "," + format_double(r.random_f1_std) + "\n";
  }
  return out;
}

std::string format_overlap_csv(const std::vector<std::pair<std::string, OverlapStats>>& rows,
                               const std::string& fingerprint) {
  std::string out = header_line(fingerprint) +
                    "modality,k,intersection,overlap,jaccard,mean_delta,median_delta\n";
  for (const auto& [name, s] : rows) {
    out += name + "," + std::to_string(s.k) + "," + std::to_string(s.intersection) + "," +
           format_double(s.overlap) + "," + format_double(s.jaccard) + "," +
           (s.mean_delta ? format_double(*s.mean_delta) : "undefined") + "," +
           (s.median_delta ? format_double(*s.median_delta) : "undefined") + "\n";
  }
  return out;
}

void export_heatmap(const ShareTable& t, Group g, const std::filesystem::path& path,
                    const std::string& fingerprint) {
  write_file(path, format_heatmap_csv(t, g, fingerprint));
}

void export_ranked_curve(const std::vector<std::pair<std::string, ShareTable>>& tables, Group g,
                         std::size_t top_n, const std::filesystem::path& path,
                         const std::string& fingerprint) {
  write_file(path, format_ranked_curve_csv(tables, g, top_n, fingerprint));
}

}  // namespace hmslab

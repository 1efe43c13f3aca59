#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hmslab/error.hpp"
#include "hmslab/eval.hpp"
#include "hmslab/heads.hpp"
#include "test_support.hpp"

using namespace hmslab;

namespace {

ShareTable table_from(std::size_t layers, std::size_t heads,
                      const std::vector<std::pair<HeadId, double>>& img) {
  ShareTable t;
  t.n_layers = layers;
  t.n_heads = heads;
  t.samples = 1;
  t.mean.assign(layers * heads, GroupShares{});
  for (const auto& [id, v] : img) t.mean[id.layer * heads + id.head][1] = v;
  return t;
}

std::vector<HeadId> ids(const std::vector<ScoredHead>& v) {
  std::vector<HeadId> out;
  for (const auto& s : v) out.push_back(s.id);
  return out;
}

std::vector<ScoredHead> scored(const std::vector<HeadId>& v, double base = 0.0) {
  std::vector<ScoredHead> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back({v[i], base + 0.1 * i});
  return out;
}

std::vector<double> row_values(const std::string& line) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(std::stod(f));
  return out;
}

}  // namespace

TEST_SUITE("heads") {

TEST_CASE("uniform attention share equals the tagged fraction") {
  TokenSequence seq;
  for (std::size_t i = 0; i < 10; ++i) {
    seq.token_ids.push_back(0);
    seq.position_ids.push_back(i);
    seq.group_tags.push_back(i >= 3 && i < 7 ? Group::kImg : Group::kIns);
  }
  ForwardTrace t;
  t.attention_rows = {std::vector<double>(10, 0.1)};
  const auto s = per_sample_shares(t, seq);
  CHECK(std::abs(s[0][1] - 0.4) < 1e-15);
  CHECK(s[0][2] == 0.0);
}

TEST_CASE("shares match a position-loop oracle on random rows") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CorpusSpec spec;
  spec.n_train = 50;
  spec.n_test = 1;
  const auto data = generate_corpus(spec).train;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const TokenSequence seq = build_sequence(data[i], kAllSettings[i % 3]);
    ForwardTrace t;
    for (int h = 0; h < 6; ++h) {
      std::vector<double> row(seq.size());
      double z = 0.0;
      for (double& v : row) z += (v = u(rng));
      for (double& v : row) v /= z;
      t.attention_rows.push_back(row);
    }
    const auto s = per_sample_shares(t, seq);
    for (std::size_t h = 0; h < 6; ++h) {
      for (Group g : {Group::kIns, Group::kImg, Group::kText}) {
        CHECK(std::abs(s[h][static_cast<std::size_t>(g)] -
                       testing::loop_share(t.attention_rows[h], seq, g)) < 1e-12);
      }
    }
  }
}

TEST_CASE("a row of the wrong length is an invariant violation") {
  const auto seq = build_sequence(generate_corpus(testing::tiny_corpus()).train[0], Setting::kMulti);
  ForwardTrace t;
  t.attention_rows = {std::vector<double>(seq.size() + 1, 0.0)};
  try {
    per_sample_shares(t, seq);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvariant);
  }
}

TEST_CASE("text-only inputs give zero image share") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 2);
  const ShareTable t = aggregate_shares(Model(w, nullptr), generate_corpus(testing::tiny_corpus()).train,
                                        Setting::kTextOnly);
  for (const auto& m : t.mean) CHECK(m[1] == 0.0);
}

TEST_CASE("aggregation over one sample and over duplicates") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 3);
  const Model m(w, nullptr);
  const auto x = generate_corpus(testing::tiny_corpus()).train[5];
  const ShareTable one = aggregate_shares(m, {x}, Setting::kMulti);
  const auto seq = build_sequence(x, Setting::kMulti);
  const auto direct = per_sample_shares(m.trace(seq), seq);
  CHECK(one.mean == direct);
  const ShareTable many = aggregate_shares(m, std::vector<SyntheticSample>(7, x), Setting::kMulti);
  for (std::size_t i = 0; i < one.mean.size(); ++i) {
    for (std::size_t g = 0; g < 3; ++g) CHECK(std::abs(many.mean[i][g] - one.mean[i][g]) < 1e-15);
  }
  CHECK_THROWS_AS(aggregate_shares(m, {}, Setting::kMulti), Error);
}

TEST_CASE("aggregation matches a two-pass long-double oracle") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 4);
  const Model m(w, nullptr);
  CorpusSpec spec = testing::tiny_corpus();
  spec.n_train = 200;
  const auto data = generate_corpus(spec).train;
  const ShareTable t = aggregate_shares(m, data, Setting::kMulti);
  std::vector<std::vector<std::vector<double>>> rows;
  std::vector<TokenSequence> seqs;
  for (const auto& x : data) {
    seqs.push_back(build_sequence(x, Setting::kMulti));
    rows.push_back(m.trace(seqs.back()).attention_rows);
  }
  for (std::size_t h = 0; h < c.total_heads(); ++h) {
    for (Group g : {Group::kIns, Group::kImg, Group::kText}) {
      long double total = 0.0L;
      for (std::size_t i = 0; i < data.size(); ++i) total += testing::loop_share(rows[i][h], seqs[i], g);
      const double mean = static_cast<double>(total / data.size());
      CHECK(std::abs(t.mean[h][static_cast<std::size_t>(g)] - mean) < 1e-12);
    }
  }
}

TEST_CASE("top-K selection examples") {
  const ShareTable t = table_from(2, 2, {{{0, 0}, 0.5}, {{0, 1}, 0.3}, {{1, 0}, 0.7}});
  const HeadAssignments a = select_top_k(t, 2);
  CHECK(ids(a.img_heads) == std::vector<HeadId>{{1, 0}, {0, 0}});
  CHECK(a.img_heads[0].score == 0.7);

  const ShareTable tied = table_from(2, 2, {});
  CHECK(ids(select_top_k(tied, 2).img_heads) == std::vector<HeadId>{{0, 0}, {0, 1}});
  CHECK(ids(select_bottom_k(t, 2).img_heads) == std::vector<HeadId>{{1, 1}, {0, 1}});

  const HeadAssignments all = select_top_k(t, 4);
  CHECK(all.img_set().size() == 4);
  CHECK(all.txt_set().size() == 4);
  CHECK_THROWS_AS(select_top_k(t, 5), Error);
  CHECK_THROWS_AS(select_top_k(t, 0), Error);
}

TEST_CASE("overlap statistics on the reported overlap") {
  const double ov = 0.42;
  CHECK(std::abs(ov / (2.0 - ov) - 0.266) < 0.001);
  CHECK(std::abs(ov / (2.0 - ov) - 0.27) <= 0.005);
  // 50 heads each, 21 shared: overlap 0.42.
  std::vector<HeadId> a, b;
  for (std::size_t i = 0; i < 50; ++i) a.push_back({0, i});
  for (std::size_t i = 29; i < 79; ++i) b.push_back({0, i});
  const OverlapStats st = overlap_stats(scored(a), scored(b));
  CHECK(st.intersection == 21);
  CHECK(st.overlap == 0.42);
  CHECK(st.jaccard == 21.0 / 79.0);
  CHECK(std::abs(st.jaccard - st.overlap / (2.0 - st.overlap)) < 1e-15);
}

TEST_CASE("identical and disjoint head sets") {
  const std::vector<HeadId> a = {{0, 0}, {0, 1}, {1, 2}};
  std::map<HeadId, double> sa = {{{0, 0}, 0.1}, {{0, 1}, 0.2}, {{1, 2}, 0.3}};
  std::map<HeadId, double> sb = {{{0, 0}, 0.4}, {{0, 1}, 0.1}, {{1, 2}, 0.5}};
  const OverlapStats same = overlap_stats(scored(a), scored(a), sa, sb);
  CHECK(same.overlap == 1.0);
  CHECK(same.jaccard == 1.0);
  REQUIRE(same.deltas.size() == 3);
  CHECK(same.deltas[0] == 0.4 - 0.1);
  CHECK(same.deltas[1] == 0.1 - 0.2);
  CHECK(same.deltas[2] == 0.5 - 0.3);
  CHECK(*same.median_delta == 0.5 - 0.3);

  const OverlapStats none = overlap_stats(scored({{0, 0}}), scored({{1, 1}}));
  CHECK(none.overlap == 0.0);
  CHECK(none.jaccard == 0.0);
  CHECK(none.deltas.empty());
  CHECK_FALSE(none.mean_delta.has_value());
  CHECK_FALSE(none.median_delta.has_value());
  const std::string csv = format_overlap_csv({{"img", none}}, "ff");
  CHECK(csv.find("undefined,undefined") != std::string::npos);

  CHECK_THROWS_AS(overlap_stats(scored({{0, 0}}), scored({{0, 0}, {0, 1}})), Error);
  CHECK_THROWS_AS(overlap_stats(scored({{0, 0}, {0, 0}}), scored({{0, 0}, {0, 1}})), Error);
}

TEST_CASE("heatmap cells equal the share table exactly") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 5);
  const ShareTable t = aggregate_shares(Model(w, nullptr), generate_corpus(testing::tiny_corpus()).train,
                                        Setting::kMulti);
  const auto [fp, lines] = split_csv(format_heatmap_csv(t, Group::kImg, "abc"), "heatmap");
  CHECK(fp == "abc");
  REQUIRE(lines.size() == c.n_layers + 1);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const auto v = row_values(lines[l + 1]);
    REQUIRE(v.size() == c.n_query_heads + 1);
    CHECK(v[0] == static_cast<double>(l));
    for (std::size_t h = 0; h < c.n_query_heads; ++h) CHECK(v[h + 1] == t.at({l, h}, Group::kImg));
  }
}

TEST_CASE("ranked curve is non-increasing") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 6);
  const auto data = generate_corpus(testing::tiny_corpus()).train;
  const ShareTable t = aggregate_shares(Model(w, nullptr), data, Setting::kMulti);
  const ShareTable u = aggregate_shares(Model(w, nullptr), data, Setting::kImgOnly);
  const auto [fp, lines] =
      split_csv(format_ranked_curve_csv({{"multi", t}, {"img_only", u}}, Group::kImg, 5, "x"), "c");
  CHECK(lines[0] == "setting,rank,share");
  REQUIRE(lines.size() == 11);
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto prev = lines[i - 1].substr(0, lines[i - 1].find(','));
    const auto cur = lines[i].substr(0, lines[i].find(','));
    if (prev != cur) continue;
    CHECK(std::stod(lines[i].substr(lines[i].rfind(',') + 1)) <=
          std::stod(lines[i - 1].substr(lines[i - 1].rfind(',') + 1)));
  }
}

TEST_CASE("mask sweep endpoints") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 7);
  const Model m(w, nullptr);
  CorpusSpec spec = testing::tiny_corpus();
  spec.n_test = 30;
  const auto test = generate_corpus(spec).test;
  const ShareTable t = aggregate_shares(m, test, Setting::kImgOnly);
  const HeadAssignments ranking = select_top_k(t, c.total_heads());
  SweepOptions opts;
  opts.ks = {0, c.total_heads()};
  opts.n_random = 3;
  const auto rows = mask_sweep(m, test, ranking, Setting::kImgOnly, opts);
  REQUIRE(rows.size() == 2);
  const auto p = predict_setting(m, test, Setting::kImgOnly);
  const double base = macro_f1(p.preds, p.golds);
  CHECK(rows[0].ranked_f1 == base);
  CHECK(rows[0].random_f1_mean == base);
  CHECK(rows[0].random_f1_std == 0.0);
  CHECK(rows[1].ranked_f1 == rows[1].random_f1_mean);
  CHECK(rows[1].random_f1_std == 0.0);

  opts.ks = {c.total_heads() + 1};
  CHECK_THROWS_AS(mask_sweep(m, test, ranking, Setting::kImgOnly, opts), Error);
  opts.ks = {2, 1};
  CHECK_THROWS_AS(mask_sweep(m, test, ranking, Setting::kImgOnly, opts), Error);
  opts.ks = {1};
  CHECK_THROWS_AS(mask_sweep(m, test, ranking, Setting::kMulti, opts), Error);
}

TEST_CASE("assignment and share-table CSVs round-trip") {
  const ModelConfig c = testing::tiny_config();
  const BaseWeights w = BaseWeights::init(c, 8);
  const ShareTable t = aggregate_shares(Model(w, nullptr), generate_corpus(testing::tiny_corpus()).train,
                                        Setting::kMulti);
  HeadAssignments a = select_top_k(t, 3);
  const HeadAssignments back = parse_assignments_csv(format_assignments_csv(a, "f1"), "heads.csv");
  CHECK(back.img_heads == a.img_heads);
  CHECK(back.txt_heads == a.txt_heads);
  CHECK(back.k == 3);

  const ShareTable t2 = parse_share_table_csv(format_share_table_csv(t, "f2"), "shares.csv");
  CHECK(t2.mean == t.mean);
  CHECK(t2.samples == t.samples);
  CHECK(t2.n_layers == t.n_layers);

  CHECK_THROWS_AS(parse_assignments_csv("# fingerprint=0\nwrong,header\n", "h.csv"), Error);
  CHECK_THROWS_AS(parse_assignments_csv("# fingerprint=0\nmodality,rank,layer,head,score\n"
                                        "img,2,0,0,0.5\ntext,1,0,0,0.5\n",
                                        "h.csv"),
                  Error);
}

}  // TEST_SUITE

#include "hmslab/hms_loss.hpp"

#include <algorithm>
#include <cmath>

#include "hmslab/error.hpp"

namespace hmslab {

namespace {

std::vector<Group> constrained_groups(Stage stage) {
  switch (stage) {
    case Stage::kImg: return {Group::kImg};
    case Stage::kText: return {Group::kText};
    case Stage::kMulti: return {Group::kImg, Group::kText};
  }
  return {};
}

void check_inputs(const TokenSequence& seq, const HeadAssignments& a, Stage stage,
                  const ModelConfig& model) {
  if (setting_of(seq) != setting_for(stage)) {
    fail_usage("stage " + to_string(stage) + " cannot constrain a " + to_string(setting_of(seq)) +
               " sequence");
  }
  for (Group g : constrained_groups(stage)) {
    const auto& heads = a.for_group(g);
    if (heads.empty()) fail_usage("no " + to_string(g) + " heads to constrain");
    HeadMask m;
    for (const auto& s : heads) m.insert(s.id);
    validate_heads(model, m);
  }
}

}  // namespace

void HMSConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) fail_usage("tau must lie strictly inside (0, 1)");
  if (!(lambda_lb >= 0.0) || !std::isfinite(lambda_lb)) {
    fail_usage("lambda_lb must be a finite nonnegative number");
  }
}

Setting setting_of(const TokenSequence& seq) {
  const bool img = seq.count(Group::kImg) > 0;
  const bool txt = seq.count(Group::kText) > 0;
  if (img && txt) return Setting::kMulti;
  if (img) return Setting::kImgOnly;
  if (txt) return Setting::kTextOnly;
  fail_invariant("sequence carries neither image nor text tokens");
}

ad::Var lower_bound_loss(ad::Graph& g, std::span<const TracedSample> batch,
                         const HeadAssignments& assignments, const HMSConfig& cfg, Stage stage,
                         const ModelConfig& model) {
  cfg.validate();
  if (batch.empty()) fail_usage("lower_bound_loss: empty batch");
  std::vector<ad::Var> terms;
  for (const TracedSample& s : batch) {
    check_inputs(*s.seq, assignments, stage, model);
    if (s.forward->attention_rows.size() != model.total_heads()) {
      fail_invariant("trace does not cover every head");
    }
    for (Group grp : constrained_groups(stage)) {
      const auto& heads = assignments.for_group(grp);
      ad::Tensor indicator(s.seq->size(), 1, 0.0);
      for (std::size_t j = 0; j < s.seq->size(); ++j) {
        if (s.seq->group_tags[j] == grp) indicator[j] = 1.0;
      }
      const ad::Var ind = g.constant(std::move(indicator));
      std::vector<ad::Var> shares;
      for (const ScoredHead& h : heads) {
        const ad::Var row = s.forward->attention_rows[h.id.layer * model.n_query_heads + h.id.head];
        if (row.value().cols() != s.seq->size()) {
          fail_invariant("attention row length differs from the sequence length");
        }
        shares.push_back(ad::matmul(row, ind));
      }
      terms.push_back(ad::mean(ad::hinge(ad::concat_cols(shares), cfg.tau)));
    }
  }
  // Group terms add within a sample; samples average.
  const ad::Var total = ad::sum(ad::concat_cols(terms));
  return ad::scale(total, 1.0 / static_cast<double>(batch.size()));
}

double lower_bound_value(std::span<const ForwardTrace> traces,
                         std::span<const TokenSequence> seqs, const HeadAssignments& assignments,
                         const HMSConfig& cfg, Stage stage, const ModelConfig& model) {
  cfg.validate();
  if (traces.size() != seqs.size()) fail_usage("lower_bound_value: traces and sequences differ");
  if (traces.empty()) fail_usage("lower_bound_value: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    check_inputs(seqs[i], assignments, stage, model);
    const auto shares = per_sample_shares(traces[i], seqs[i]);
    for (Group grp : constrained_groups(stage)) {
      const auto& heads = assignments.for_group(grp);
      double acc = 0.0;
      for (const ScoredHead& h : heads) {
        const double m =
            shares[h.id.layer * model.n_query_heads + h.id.head][static_cast<std::size_t>(grp)];
        acc += std::max(0.0, cfg.tau - m);
      }
      total += acc / static_cast<double>(heads.size());
    }
  }
  return total / static_cast<double>(traces.size());
}

}  // namespace hmslab

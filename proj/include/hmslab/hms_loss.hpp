#pragma once

// Lower-bound attention constraint on modality-critical heads.

#include <span>

#include "hmslab/autodiff.hpp"
#include "hmslab/heads.hpp"
#include "hmslab/model.hpp"

namespace hmslab {

struct HMSConfig {
  double tau = 0.4;
  double lambda_lb = 1.0;

  void validate() const;
};

// One recorded forward pass and the sequence it ran on.
struct TracedSample {
  const TracedForward* forward = nullptr;
  const TokenSequence* seq = nullptr;
};

// Stage IMG constrains the image heads' img share, TEXT the text heads' text
// share, MULTI both (summed). Per sample the hinge max(0, tau - share) is
// averaged over the constrained heads; the result is averaged over samples.
// Sequences must have the stage's setting (kUsage otherwise).
ad::Var lower_bound_loss(ad::Graph& g, std::span<const TracedSample> batch,
                         const HeadAssignments& assignments, const HMSConfig& cfg, Stage stage,
                         const ModelConfig& model);

// The same quantity from plain traces, without a graph.
double lower_bound_value(std::span<const ForwardTrace> traces,
                         std::span<const TokenSequence> seqs, const HeadAssignments& assignments,
                         const HMSConfig& cfg, Stage stage, const ModelConfig& model);

// Setting implied by which groups a sequence contains.
Setting setting_of(const TokenSequence& seq);

}  // namespace hmslab

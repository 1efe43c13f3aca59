#pragma once

// Base pretraining, the stage-wise adapter finetuning loop, gradient
// shrinking on protected heads, and the optimizer.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hmslab/data.hpp"
#include "hmslab/eval.hpp"
#include "hmslab/heads.hpp"
#include "hmslab/hms_loss.hpp"
#include "hmslab/model.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled

  void validate() const;
};

// AdamW over a fixed list of tensors. Elements whose gradient is exactly
// zero are left alone: no moment update, no decay, no step. A zeroed
// gradient block therefore freezes its parameters exactly.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, const std::vector<const ad::Tensor*>& params);

  void step(const std::vector<ad::Tensor*>& params, const std::vector<const ad::Tensor*>& grads);

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  const std::vector<ad::Tensor>& first_moments() const { return m_; }
  const std::vector<ad::Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<ad::Tensor> m_, v_;
};

std::vector<ad::Tensor*> tensors_of(AdapterSet& a);
std::vector<const ad::Tensor*> tensors_of(const AdapterSet& a);
std::vector<ad::Tensor*> tensors_of(BaseWeights& w);
std::vector<const ad::Tensor*> tensors_of(const BaseWeights& w);

struct UKRConfig {
  double gamma = 0.7;

  void validate() const;
};

// Heads whose adapter blocks are shrunk in `stage`: image heads outside the
// IMG stage, text heads outside the TEXT stage.
HeadMask protected_heads(const HeadAssignments& a, Stage stage);

// Scales the head blocks of protected heads by gamma in place: columns of
// q_up and rows of o_down. The rank-side factors are untouched.
void shrink_gradients(AdapterSet& grads, const HeadAssignments& a, Stage stage,
                      const UKRConfig& cfg);

// ---- pretraining ----

struct PretrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 16;
  AdamWConfig opt{3e-3, 0.9, 0.999, 1e-8, 0.0};
  std::uint64_t seed = 1;
};

// Pretraining input: the MULTI-layout sequence followed by the two cue
// tokens it contains, in random order. Loss is next-token cross-entropy on
// the two continuation targets.
struct PretrainExample {
  TokenSequence seq;
  std::array<std::size_t, 2> targets{};
};
PretrainExample make_pretrain_example(const SyntheticSample& s, const TokenLayout& layout,
                                      bool text_first);

struct PretrainLog {
  std::vector<double> losses;  // mean batch loss per step
};

BaseWeights pretrain_base(BaseWeights base, const std::vector<SyntheticSample>& corpus,
                          const PretrainConfig& cfg, PretrainLog* log = nullptr);

// ---- finetuning ----

struct StagePlan {
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
};

struct Ablation {
  bool no_hms = false;
  bool no_ukr = false;
  bool no_critical = false;  // constrain and protect the bottom-K heads instead

  static Ablation naive() { return {true, true, false}; }
};

struct TrainConfig {
  StagePlan plan;
  HMSConfig hms;
  UKRConfig ukr;
  AdamWConfig opt;
  Ablation ablation;
  std::size_t k = 4;
  std::uint64_t seed = 1;
  bool eval_each_epoch = true;

  void validate() const;
};

struct BatchLog {
  double task_loss = 0.0;
  double lb_loss = 0.0;
  double img_share = 0.0;  // mean over image heads; NaN when the setting has no image
  double txt_share = 0.0;
};

struct StageLog {
  std::size_t epoch = 0;
  Stage stage = Stage::kImg;
  std::size_t samples = 0;
  bool skipped = false;
  std::vector<BatchLog> batches;

  double mean_task() const;
  double mean_lb() const;
};

// Per-sample stage objective: full-vocabulary cross-entropy at the query
// position against the answer id, plus lambda_lb times the lower-bound term.
// With lambda_lb == 0 the lower-bound term is not built at all.
struct SampleLoss {
  ad::Var total;
  ad::Var task;
  std::optional<ad::Var> lb;
};
SampleLoss sample_objective(ad::Graph& g, const TracedForward& f, const TokenSequence& seq,
                            Label target, Stage stage, const HeadAssignments& assignments,
                            const HMSConfig& hms, const ModelConfig& config);

struct StageOptions {
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  std::size_t epoch = 0;
};

// One shuffled pass over `data` with the stage's target label. `ukr` null
// disables shrinking. Rejects data lacking the stage's label before any
// update.
StageLog train_stage(const BaseWeights& base, AdapterSet& adapters, Stage stage,
                     const std::vector<SyntheticSample>& data, const HMSConfig& hms,
                     const UKRConfig* ukr, const HeadAssignments& assignments, AdamW& opt,
                     const StageOptions& so);

struct EpochEval {
  std::size_t epoch = 0;
  EvalReport report;
};

struct TrainHistory {
  std::vector<StageLog> stages;
  std::vector<EpochEval> evals;
  std::vector<std::string> notices;
};

struct TrainResult {
  AdapterSet adapters;
  TrainHistory history;
  HeadAssignments assignments;  // the set actually constrained
};

// `train` already carries the budget (hidden unimodal labels). For
// no_critical, `shares` supplies the bottom-K ranking. `on_stage` receives
// each stage's log and the adapters after it; the assignments must not
// change across the run.
TrainResult train_full(const BaseWeights& base, const std::vector<SyntheticSample>& train,
                       const std::vector<SyntheticSample>& test,
                       const HeadAssignments& assignments, const TrainConfig& cfg,
                       const ShareTable* shares = nullptr,
                       const std::function<void(const StageLog&, const AdapterSet&)>& on_stage =
                           {});

// epoch,stage,batches,mean_task_loss,mean_lb_loss,multi_f1,img_only_f1,text_only_f1
// Stage rows leave the F1 columns empty; EVAL rows leave the loss columns empty.
std::string format_history_csv(const TrainHistory& h, const std::string& fingerprint);

struct RunConfig {
  std::string train_corpus;
  std::string test_corpus;
  Budget budget;
  TrainConfig train;

  static RunConfig from_config(const KeyValues& kv);
  static const std::vector<std::string>& keys();
};

}  // namespace hmslab

#pragma once

// Tiny decoder-only transformer with grouped-query attention, frozen base
// weights, and low-rank adapters on the query and output projections.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hmslab/autodiff.hpp"
#include "hmslab/types.hpp"

namespace hmslab {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_query_heads = 8;
  std::size_t n_kv_heads = 2;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 96;
  std::size_t max_seq_len = 64;
  std::size_t adapter_rank = 4;

  std::size_t d_model() const { return n_query_heads * head_dim; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim; }
  std::size_t total_heads() const { return n_layers * n_query_heads; }
  std::size_t kv_group(std::size_t head) const {
    return head / (n_query_heads / n_kv_heads);
  }
  // Throws kUsage on violated invariants.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Fixed vocabulary partition. Instruction and answer ids come first; the
// remainder is split between an image range and a text range. The first two
// ids of each modality range are that modality's REAL and FAKE cue tokens.
struct TokenLayout {
  static constexpr std::array<std::size_t, 3> kPrefix = {0, 1, 2};
  static constexpr std::array<std::size_t, 2> kSuffix = {3, 4};
  static constexpr std::size_t kRealAnswer = 5;
  static constexpr std::size_t kFakeAnswer = 6;
  static constexpr std::size_t kFirstContent = 7;

  std::size_t img_begin = 0, img_end = 0;
  std::size_t txt_begin = 0, txt_end = 0;

  static TokenLayout for_vocab(std::size_t vocab_size);

  std::size_t answer_id(Label l) const {
    return l == Label::kReal ? kRealAnswer : kFakeAnswer;
  }
  std::size_t img_cue(Label l) const { return img_begin + static_cast<std::size_t>(l); }
  std::size_t txt_cue(Label l) const { return txt_begin + static_cast<std::size_t>(l); }
  bool is_img(std::size_t id) const { return id >= img_begin && id < img_end; }
  bool is_txt(std::size_t id) const { return id >= txt_begin && id < txt_end; }
  // Distractor ranges exclude the two cue ids.
  std::size_t img_distractors() const { return img_end - img_begin - 2; }
  std::size_t txt_distractors() const { return txt_end - txt_begin - 2; }
};

// Instruction/image/text layout of one classifier input. Position ids follow
// the full multimodal slot layout, so an omitted block leaves a gap rather
// than shifting the instruction suffix.
struct TokenSequence {
  std::vector<std::size_t> token_ids;
  std::vector<Group> group_tags;
  std::vector<std::size_t> position_ids;
  std::size_t query_position = 0;

  std::size_t size() const { return token_ids.size(); }
  std::size_t count(Group g) const;
};

struct SyntheticSample;

// [INS prefix][IMG][TEXT][INS suffix]; the missing block is omitted.
TokenSequence build_sequence(const SyntheticSample& sample, Setting setting);

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;
  friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

using HeadMask = std::set<HeadId>;

// Base transformer weights. Shapes: projections are (in x out).
struct LayerWeights {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor wq, wk, wv, wo;
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor w1, b1, w2, b2;
};

struct BaseWeights {
  ModelConfig config;
  ad::Tensor tok_emb;  // vocab x d
  ad::Tensor pos_emb;  // max_seq_len x d
  std::vector<LayerWeights> layers;
  ad::Tensor lnf_gain, lnf_bias;
  ad::Tensor w_out;  // d x vocab

  static BaseWeights init(const ModelConfig& config, std::uint64_t seed);
  void for_each(const std::function<void(const std::string&, ad::Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const ad::Tensor&)>& fn) const;
};

// Low-rank factors. Query: x * q_down (d x r) * q_up (r x d), so q_up columns
// are grouped by head. Output: ctx * o_down (d x r) * o_up (r x d), so o_down
// rows are grouped by head.
struct LayerAdapter {
  ad::Tensor q_down, q_up;
  ad::Tensor o_down, o_up;
};

struct AdapterSet {
  ModelConfig config;
  std::vector<LayerAdapter> layers;

  // Down factors random, up factors zero: the initial update is zero.
  static AdapterSet init(const ModelConfig& config, std::uint64_t seed);
  static AdapterSet zeros(const ModelConfig& config);
  void for_each(const std::function<void(const std::string&, ad::Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const ad::Tensor&)>& fn) const;
};

struct ForwardOptions {
  bool grad_base = false;
  bool grad_adapters = false;
  // Compute logits for every position (language-model pretraining) instead
  // of only the query position.
  bool all_positions = false;
  const HeadMask* mask = nullptr;
  // Caller-bound parameter leaves (for_each order) used instead of fresh
  // leaves over the model's tensors; grad flags above are then ignored.
  const std::vector<ad::Var>* base_leaves = nullptr;
  const std::vector<ad::Var>* adapter_leaves = nullptr;
};

// Graph-level result of a forward pass.
struct TracedForward {
  ad::Var logits;  // 1 x vocab at the query position, or T x vocab
  // Query-position attention rows, index layer * n_query_heads + head; each 1 x T.
  std::vector<ad::Var> attention_rows;
  // Leaves bound to parameters, in for_each order.
  std::vector<ad::Var> base_leaves;
  std::vector<ad::Var> adapter_leaves;
};

struct ForwardTrace {
  std::array<double, 2> label_logits{};  // (REAL, FAKE)
  std::vector<std::vector<double>> attention_rows;

  const std::vector<double>& row(const ModelConfig& c, HeadId h) const {
    return attention_rows[h.layer * c.n_query_heads + h.head];
  }
};

class Model {
 public:
  // `base` (and `adapters`, if given) must outlive the model.
  Model(const BaseWeights& base, const AdapterSet* adapters);

  const ModelConfig& config() const { return base_->config; }
  const TokenLayout& layout() const { return layout_; }
  const BaseWeights& base() const { return *base_; }
  const AdapterSet* adapters() const { return adapters_; }

  // A copy of this model whose forward passes zero the listed heads'
  // context vectors before the output projection.
  Model with_mask(HeadMask mask) const;
  const HeadMask& mask() const { return mask_; }

  TracedForward forward(ad::Graph& g, const TokenSequence& seq,
                        const ForwardOptions& opts) const;
  // Inference-mode forward returning plain values.
  ForwardTrace trace(const TokenSequence& seq) const;

 private:
  const BaseWeights* base_;
  const AdapterSet* adapters_;
  TokenLayout layout_;
  HeadMask mask_;
};

ForwardTrace to_trace(const TracedForward& f);

// argmax over (REAL, FAKE); an exact tie goes to REAL.
Label predict_label(const ForwardTrace& trace);

void validate_heads(const ModelConfig& c, const HeadMask& heads);

}  // namespace hmslab

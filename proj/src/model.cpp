#include "hmslab/model.hpp"

#include <cmath>
#include <random>

#include "hmslab/data.hpp"
#include "hmslab/error.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

namespace {

ad::Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                         double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0 || n_query_heads == 0 || n_kv_heads == 0 || head_dim == 0 ||
      ffn_dim == 0 || vocab_size == 0 || max_seq_len == 0 || adapter_rank == 0) {
    fail_usage("model config dimensions must be positive");
  }
  if (n_query_heads % n_kv_heads != 0) {
    fail_usage("n_query_heads (" + std::to_string(n_query_heads) +
               ") must be a multiple of n_kv_heads (" + std::to_string(n_kv_heads) + ")");
  }
  (void)TokenLayout::for_vocab(vocab_size);
}

TokenLayout TokenLayout::for_vocab(std::size_t vocab_size) {
  // Each modality needs its two cue ids plus at least one distractor.
  if (vocab_size < kFirstContent + 6) {
    fail_usage("vocab_size " + std::to_string(vocab_size) + " too small for the token layout");
  }
  const std::size_t content = vocab_size - kFirstContent;
  TokenLayout l;
  l.img_begin = kFirstContent;
  l.img_end = kFirstContent + content / 2;
  l.txt_begin = l.img_end;
  l.txt_end = vocab_size;
  return l;
}

std::size_t TokenSequence::count(Group g) const {
  std::size_t n = 0;
  for (Group t : group_tags) n += (t == g);
  return n;
}

TokenSequence build_sequence(const SyntheticSample& sample, Setting setting) {
  const bool want_img = setting != Setting::kTextOnly;
  const bool want_txt = setting != Setting::kImgOnly;
  if (want_img && sample.img_tokens.empty()) {
    fail_data("sample " + std::to_string(sample.id) + " has no image segment for " +
              to_string(setting));
  }
  if (want_txt && sample.txt_tokens.empty()) {
    fail_data("sample " + std::to_string(sample.id) + " has no text segment for " +
              to_string(setting));
  }
  TokenSequence seq;
  std::size_t slot = 0;
  auto append = [&](std::size_t id, Group g) {
    seq.token_ids.push_back(id);
    seq.group_tags.push_back(g);
    seq.position_ids.push_back(slot++);
  };
  for (std::size_t id : TokenLayout::kPrefix) append(id, Group::kIns);
  if (want_img) {
    for (std::size_t id : sample.img_tokens) append(id, Group::kImg);
  } else {
    slot += sample.img_tokens.size();
  }
  if (want_txt) {
    for (std::size_t id : sample.txt_tokens) append(id, Group::kText);
  } else {
    slot += sample.txt_tokens.size();
  }
  for (std::size_t id : TokenLayout::kSuffix) append(id, Group::kIns);
  seq.query_position = seq.token_ids.size() - 1;
  return seq;
}

// ------------------------------------------------------------- weights

BaseWeights BaseWeights::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(mix_seed(seed, 0xba5e));
  const std::size_t d = c.d_model();
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid = proj / std::sqrt(2.0 * static_cast<double>(c.n_layers));
  BaseWeights w;
  w.config = c;
  w.tok_emb = random_tensor(rng, c.vocab_size, d, 0.5);
  w.pos_emb = random_tensor(rng, c.max_seq_len, d, 0.5);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerWeights lw;
    lw.ln1_gain = ad::Tensor(1, d, 1.0);
    lw.ln1_bias = ad::Tensor(1, d, 0.0);
    lw.wq = random_tensor(rng, d, d, proj);
    lw.wk = random_tensor(rng, d, c.kv_dim(), proj);
    lw.wv = random_tensor(rng, d, c.kv_dim(), proj);
    lw.wo = random_tensor(rng, d, d, resid);
    lw.ln2_gain = ad::Tensor(1, d, 1.0);
    lw.ln2_bias = ad::Tensor(1, d, 0.0);
    lw.w1 = random_tensor(rng, d, c.ffn_dim, proj);
    lw.b1 = ad::Tensor(1, c.ffn_dim, 0.0);
    lw.w2 = random_tensor(rng, c.ffn_dim, d,
                          resid * std::sqrt(static_cast<double>(d) / static_cast<double>(c.ffn_dim)));
    lw.b2 = ad::Tensor(1, d, 0.0);
    w.layers.push_back(std::move(lw));
  }
  w.lnf_gain = ad::Tensor(1, d, 1.0);
  w.lnf_bias = ad::Tensor(1, d, 0.0);
  w.w_out = random_tensor(rng, d, c.vocab_size, proj);
  return w;
}

namespace {

template <typename W, typename Fn>
void visit_base(W& w, Fn&& fn) {
  fn("tok_emb", w.tok_emb);
  fn("pos_emb", w.pos_emb);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& lw = w.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "ln1_gain", lw.ln1_gain);
    fn(p + "ln1_bias", lw.ln1_bias);
    fn(p + "wq", lw.wq);
    fn(p + "wk", lw.wk);
    fn(p + "wv", lw.wv);
    fn(p + "wo", lw.wo);
    fn(p + "ln2_gain", lw.ln2_gain);
    fn(p + "ln2_bias", lw.ln2_bias);
    fn(p + "w1", lw.w1);
    fn(p + "b1", lw.b1);
    fn(p + "w2", lw.w2);
    fn(p + "b2", lw.b2);
  }
  fn("lnf_gain", w.lnf_gain);
  fn("lnf_bias", w.lnf_bias);
  fn("w_out", w.w_out);
}

template <typename A, typename Fn>
void visit_adapters(A& a, Fn&& fn) {
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    auto& la = a.layers[l];
    const std::string p = "adapters." + std::to_string(l) + ".";
    fn(p + "q_down", la.q_down);
    fn(p + "q_up", la.q_up);
    fn(p + "o_down", la.o_down);
    fn(p + "o_up", la.o_up);
  }
}

}  // namespace

void BaseWeights::for_each(
    const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  visit_base(*this, fn);
}
void BaseWeights::for_each(
    const std::function<void(const std::string&, const ad::Tensor&)>& fn) const {
  visit_base(*this, fn);
}

AdapterSet AdapterSet::init(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  std::mt19937_64 rng(mix_seed(seed, 0xada));
  const std::size_t d = c.d_model();
  const std::size_t r = c.adapter_rank;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  AdapterSet a;
  a.config = c;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerAdapter la;
    la.q_down = random_tensor(rng, d, r, sd);
    la.q_up = ad::Tensor(r, d, 0.0);
    la.o_down = random_tensor(rng, d, r, sd);
    la.o_up = ad::Tensor(r, d, 0.0);
    a.layers.push_back(std::move(la));
  }
  return a;
}

AdapterSet AdapterSet::zeros(const ModelConfig& c) {
  AdapterSet a;
  a.config = c;
  const std::size_t d = c.d_model();
  const std::size_t r = c.adapter_rank;
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    a.layers.push_back({ad::Tensor(d, r), ad::Tensor(r, d), ad::Tensor(d, r), ad::Tensor(r, d)});
  }
  return a;
}

void AdapterSet::for_each(
    const std::function<void(const std::string&, ad::Tensor&)>& fn) {
  visit_adapters(*this, fn);
}
void AdapterSet::for_each(
    const std::function<void(const std::string&, const ad::Tensor&)>& fn) const {
  visit_adapters(*this, fn);
}

// --------------------------------------------------------------- model

void validate_heads(const ModelConfig& c, const HeadMask& heads) {
  for (const HeadId& h : heads) {
    if (h.layer >= c.n_layers || h.head >= c.n_query_heads) {
      fail_usage("head (" + std::to_string(h.layer) + "," + std::to_string(h.head) +
                 ") outside a " + std::to_string(c.n_layers) + "x" +
                 std::to_string(c.n_query_heads) + " model");
    }
  }
}

Model::Model(const BaseWeights& base, const AdapterSet* adapters)
    : base_(&base), adapters_(adapters), layout_(TokenLayout::for_vocab(base.config.vocab_size)) {
  base.config.validate();
  if (adapters && !(adapters->config == base.config)) {
    fail_usage("adapter config does not match the base model config");
  }
}

Model Model::with_mask(HeadMask mask) const {
  validate_heads(config(), mask);
  Model m = *this;
  m.mask_ = std::move(mask);
  return m;
}

TracedForward Model::forward(ad::Graph& g, const TokenSequence& seq,
                             const ForwardOptions& opts) const {
  using namespace ad;
  const ModelConfig& c = config();
  const std::size_t T = seq.size();
  if (T == 0 || seq.group_tags.size() != T || seq.position_ids.size() != T) {
    fail_invariant("malformed token sequence");
  }
  if (seq.query_position != T - 1) fail_invariant("query position must be the last index");
  for (std::size_t i = 0; i < T; ++i) {
    if (seq.token_ids[i] >= c.vocab_size) {
      fail_data("unknown token id " + std::to_string(seq.token_ids[i]));
    }
    if (seq.position_ids[i] >= c.max_seq_len) {
      fail_usage("sequence position " + std::to_string(seq.position_ids[i]) +
                 " exceeds max_seq_len " + std::to_string(c.max_seq_len));
    }
  }
  const HeadMask& mask = opts.mask ? *opts.mask : mask_;
  if (opts.mask) validate_heads(c, mask);

  TracedForward out;
  auto bind = [&](const auto& params, const std::vector<Var>* given, bool grad,
                  std::vector<Var>& dst) {
    std::size_t n = 0;
    params.for_each([&](const std::string& name, const Tensor& t) {
      if (!given) {
        dst.push_back(g.leaf(t, grad));
      } else if (n >= given->size() || !(*given)[n].value().same_shape(t)) {
        fail_invariant("supplied leaf for '" + name + "' is missing or misshaped");
      }
      ++n;
    });
    if (given) {
      if (given->size() != n) fail_invariant("supplied leaf count differs from the parameters");
      dst = *given;
    }
  };
  bind(*base_, opts.base_leaves, opts.grad_base, out.base_leaves);
  if (adapters_) bind(*adapters_, opts.adapter_leaves, opts.grad_adapters, out.adapter_leaves);
  const auto& bl = out.base_leaves;
  auto layer_leaf = [&](std::size_t l, std::size_t k) { return bl[2 + l * 12 + k]; };
  const std::size_t tail = 2 + c.n_layers * 12;

  Var x = add(gather_rows(bl[0], seq.token_ids), gather_rows(bl[1], seq.position_ids));

  Tensor causal(T, T);
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t j = i + 1; j < T; ++j) causal(i, j) = 1.0;
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(c.head_dim));
  const std::size_t hd = c.head_dim;

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    // The last layer only needs the query row unless every position's logits are wanted.
    const bool last_row_only = !opts.all_positions && l + 1 == c.n_layers;
    Var h = layer_norm_rows(x, layer_leaf(l, 0), layer_leaf(l, 1));
    Var hq = last_row_only ? slice_rows(h, T - 1, 1) : h;
    Var q = matmul(hq, layer_leaf(l, 2));
    if (adapters_) {
      const Var* al = &out.adapter_leaves[l * 4];
      q = add(q, matmul(matmul(hq, al[0]), al[1]));
    }
    Var k = matmul(h, layer_leaf(l, 3));
    Var v = matmul(h, layer_leaf(l, 4));
    std::vector<Var> k_heads, v_heads;
    for (std::size_t kv = 0; kv < c.n_kv_heads; ++kv) {
      k_heads.push_back(slice_cols(k, kv * hd, hd));
      v_heads.push_back(slice_cols(v, kv * hd, hd));
    }
    std::vector<Var> contexts;
    for (std::size_t head = 0; head < c.n_query_heads; ++head) {
      const std::size_t grp = c.kv_group(head);
      Var scores = scale(matmul_nt(slice_cols(q, head * hd, hd), k_heads[grp]), inv_sqrt);
      if (!last_row_only) scores = masked_fill(scores, causal, -1e30);
      Var attn = softmax_rows(scores);
      out.attention_rows.push_back(last_row_only ? attn : slice_rows(attn, T - 1, 1));
      if (mask.count(HeadId{l, head})) {
        contexts.push_back(g.constant(Tensor(attn.value().rows(), hd, 0.0)));
      } else {
        contexts.push_back(matmul(attn, v_heads[grp]));
      }
    }
    Var ctx = concat_cols(contexts);
    Var o = matmul(ctx, layer_leaf(l, 5));
    if (adapters_) {
      const Var* al = &out.adapter_leaves[l * 4];
      o = add(o, matmul(matmul(ctx, al[2]), al[3]));
    }
    Var resid = last_row_only ? slice_rows(x, T - 1, 1) : x;
    x = add(resid, o);
    Var h2 = layer_norm_rows(x, layer_leaf(l, 6), layer_leaf(l, 7));
    Var f = add_row(matmul(gelu(add_row(matmul(h2, layer_leaf(l, 8)), layer_leaf(l, 9))),
                           layer_leaf(l, 10)),
                    layer_leaf(l, 11));
    x = add(x, f);
  }
  Var xf = layer_norm_rows(x, bl[tail], bl[tail + 1]);
  if (!opts.all_positions && xf.value().rows() != 1) xf = slice_rows(xf, T - 1, 1);
  out.logits = matmul(xf, bl[tail + 2]);
  return out;
}

ForwardTrace to_trace(const TracedForward& f) {
  ForwardTrace t;
  const ad::Tensor& lv = f.logits.value();
  const std::size_t last = lv.rows() - 1;
  t.label_logits = {lv(last, TokenLayout::kRealAnswer), lv(last, TokenLayout::kFakeAnswer)};
  t.attention_rows.reserve(f.attention_rows.size());
  for (const ad::Var& r : f.attention_rows) {
    const auto vals = r.value().values();
    t.attention_rows.emplace_back(vals.begin(), vals.end());
  }
  return t;
}

ForwardTrace Model::trace(const TokenSequence& seq) const {
  ad::Graph g(false);
  return to_trace(forward(g, seq, {}));
}

Label predict_label(const ForwardTrace& trace) {
  return trace.label_logits[1] > trace.label_logits[0] ? Label::kFake : Label::kReal;
}

}  // namespace hmslab

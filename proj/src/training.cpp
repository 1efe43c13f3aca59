#include "hmslab/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hmslab/error.hpp"

namespace hmslab {

void AdamWConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) fail_usage("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail_usage("betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail_usage("eps must be positive");
  if (!(weight_decay >= 0.0)) fail_usage("weight decay must be nonnegative");
}

AdamW::AdamW(AdamWConfig cfg, const std::vector<const ad::Tensor*>& params) : cfg_(cfg) {
  cfg_.validate();
  for (const ad::Tensor* p : params) {
    m_.emplace_back(p->shape(), std::vector<double>(p->size(), 0.0));
    v_.emplace_back(p->shape(), std::vector<double>(p->size(), 0.0));
  }
}

void AdamW::step(const std::vector<ad::Tensor*>& params,
                 const std::vector<const ad::Tensor*>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    fail_invariant("optimizer tensor count changed");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor& p = *params[i];
    const ad::Tensor& g = *grads[i];
    if (!p.same_shape(m_[i]) || !g.same_shape(m_[i])) {
      fail_invariant("optimizer moment shape " + m_[i].shape_str() + " vs parameter " +
                     p.shape_str() + " / gradient " + g.shape_str());
    }
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      if (gj == 0.0) continue;
      double& m = m_[i][j];
      double& v = v_[i][j];
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * gj;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * gj * gj;
      p[j] -= cfg_.lr * cfg_.weight_decay * p[j];
      p[j] -= cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
    }
  }
}

std::vector<ad::Tensor*> tensors_of(AdapterSet& a) {
  std::vector<ad::Tensor*> out;
  a.for_each([&](const std::string&, ad::Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const ad::Tensor*> tensors_of(const AdapterSet& a) {
  std::vector<const ad::Tensor*> out;
  a.for_each([&](const std::string&, const ad::Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<ad::Tensor*> tensors_of(BaseWeights& w) {
  std::vector<ad::Tensor*> out;
  w.for_each([&](const std::string&, ad::Tensor& t) { out.push_back(&t); });
  return out;
}

std::vector<const ad::Tensor*> tensors_of(const BaseWeights& w) {
  std::vector<const ad::Tensor*> out;
  w.for_each([&](const std::string&, const ad::Tensor& t) { out.push_back(&t); });
  return out;
}

// ------------------------------------------------------------------ UKR

void UKRConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail_usage("gamma must lie in [0, 1]");
}

HeadMask protected_heads(const HeadAssignments& a, Stage stage) {
  HeadMask out;
  if (stage != Stage::kImg) {
    for (const auto& s : a.img_heads) out.insert(s.id);
  }
  if (stage != Stage::kText) {
    for (const auto& s : a.txt_heads) out.insert(s.id);
  }
  return out;
}

void shrink_gradients(AdapterSet& grads, const HeadAssignments& a, Stage stage,
                      const UKRConfig& cfg) {
  cfg.validate();
  const ModelConfig& c = grads.config;
  const std::size_t d = c.d_model();
  const std::size_t hd = c.head_dim;
  if (grads.layers.size() != c.n_layers) fail_usage("gradient set has the wrong layer count");
  for (const auto& layer : grads.layers) {
    if (layer.q_up.cols() != d || layer.q_up.cols() % c.n_query_heads != 0) {
      fail_usage("q_up gradient " + layer.q_up.shape_str() + " does not split into " +
                 std::to_string(c.n_query_heads) + " head blocks");
    }
    if (layer.o_down.rows() != d || layer.o_down.rows() % c.n_query_heads != 0) {
      fail_usage("o_down gradient " + layer.o_down.shape_str() + " does not split into " +
                 std::to_string(c.n_query_heads) + " head blocks");
    }
  }
  const HeadMask heads = protected_heads(a, stage);
  validate_heads(c, heads);
  if (cfg.gamma == 1.0) return;
  for (const HeadId& h : heads) {
    LayerAdapter& l = grads.layers[h.layer];
    for (std::size_t r = 0; r < l.q_up.rows(); ++r) {
      for (std::size_t j = h.head * hd; j < (h.head + 1) * hd; ++j) l.q_up(r, j) *= cfg.gamma;
    }
    for (std::size_t i = h.head * hd; i < (h.head + 1) * hd; ++i) {
      for (std::size_t r = 0; r < l.o_down.cols(); ++r) l.o_down(i, r) *= cfg.gamma;
    }
  }
}

// ------------------------------------------------------------------ pretraining

namespace {

std::size_t find_cue(const std::vector<std::size_t>& tokens, std::size_t begin) {
  for (std::size_t t : tokens) {
    if (t == begin || t == begin + 1) return t;
  }
  fail_data("segment carries no cue token");
}

void accumulate(std::vector<ad::Tensor>& acc, const std::vector<ad::Var>& leaves) {
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!leaves[i].graph->has_grad(leaves[i].id)) continue;
    const ad::Tensor& g = leaves[i].grad();
    for (std::size_t j = 0; j < g.size(); ++j) acc[i][j] += g[j];
  }
}

std::vector<ad::Tensor> zeros_like(const std::vector<const ad::Tensor*>& ts) {
  std::vector<ad::Tensor> out;
  for (const ad::Tensor* t : ts) out.emplace_back(t->shape(), std::vector<double>(t->size(), 0.0));
  return out;
}

std::vector<const ad::Tensor*> pointers(const std::vector<ad::Tensor>& ts) {
  std::vector<const ad::Tensor*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

}  // namespace

PretrainExample make_pretrain_example(const SyntheticSample& s, const TokenLayout& layout,
                                      bool text_first) {
  PretrainExample ex;
  ex.seq = build_sequence(s, Setting::kMulti);
  const std::size_t img_cue = find_cue(s.img_tokens, layout.img_begin);
  const std::size_t txt_cue = find_cue(s.txt_tokens, layout.txt_begin);
  ex.targets = text_first ? std::array{txt_cue, img_cue} : std::array{img_cue, txt_cue};
  // The first continuation token is fed back as input for the second target.
  ex.seq.token_ids.push_back(ex.targets[0]);
  ex.seq.group_tags.push_back(Group::kIns);
  ex.seq.position_ids.push_back(ex.seq.position_ids.back() + 1);
  ex.seq.query_position = ex.seq.size() - 1;
  return ex;
}

BaseWeights pretrain_base(BaseWeights base, const std::vector<SyntheticSample>& corpus,
                          const PretrainConfig& cfg, PretrainLog* log) {
  if (cfg.steps == 0) return base;
  if (corpus.empty()) fail_usage("pretraining needs a nonempty corpus");
  if (cfg.batch_size == 0) fail_usage("batch size must be positive");
  const TokenLayout layout = TokenLayout::for_vocab(base.config.vocab_size);
  AdamW opt(cfg.opt, tensors_of(std::as_const(base)));
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x9e7));
  std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
  const Model model(base, nullptr);
  ForwardOptions fo;
  fo.grad_base = true;
  fo.all_positions = true;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<ad::Tensor> grads = zeros_like(tensors_of(std::as_const(base)));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const SyntheticSample& s = corpus[pick(rng)];
      const PretrainExample ex = make_pretrain_example(s, layout, (rng() & 1) != 0);
      ad::Graph g;
      const TracedForward f = model.forward(g, ex.seq, fo);
      const ad::Var tail = ad::slice_rows(f.logits, ex.seq.size() - 2, 2);
      const ad::Var loss = ad::cross_entropy(tail, ex.targets);
      loss_sum += loss.value().item();
      g.backward(ad::scale(loss, 1.0 / static_cast<double>(cfg.batch_size)));
      accumulate(grads, f.base_leaves);
    }
    opt.step(tensors_of(base), pointers(grads));
    if (log) log->losses.push_back(loss_sum / static_cast<double>(cfg.batch_size));
  }
  return base;
}

// ------------------------------------------------------------------ finetuning

void TrainConfig::validate() const {
  hms.validate();
  ukr.validate();
  opt.validate();
  if (plan.batch_size == 0) fail_usage("batch size must be positive");
  if (k == 0) fail_usage("K must be positive");
}

double StageLog::mean_task() const {
  if (batches.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& b : batches) s += b.task_loss;
  return s / static_cast<double>(batches.size());
}

double StageLog::mean_lb() const {
  if (batches.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& b : batches) s += b.lb_loss;
  return s / static_cast<double>(batches.size());
}

namespace {

double mean_share(const TracedForward& f, const TokenSequence& seq,
                  const std::vector<ScoredHead>& heads, Group grp, const ModelConfig& c) {
  if (heads.empty() || seq.count(grp) == 0) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  for (const ScoredHead& h : heads) {
    const ad::Tensor& row = f.attention_rows[h.id.layer * c.n_query_heads + h.id.head].value();
    for (std::size_t j = 0; j < seq.size(); ++j) {
      if (seq.group_tags[j] == grp) acc += row[j];
    }
  }
  return acc / static_cast<double>(heads.size());
}

}  // namespace

SampleLoss sample_objective(ad::Graph& g, const TracedForward& f, const TokenSequence& seq,
                            Label target, Stage stage, const HeadAssignments& assignments,
                            const HMSConfig& hms, const ModelConfig& config) {
  const std::size_t answer = TokenLayout::for_vocab(config.vocab_size).answer_id(target);
  SampleLoss out;
  const std::size_t rows = f.logits.value().rows();
  const ad::Var q = rows == 1 ? f.logits : ad::slice_rows(f.logits, rows - 1, 1);
  out.task = ad::cross_entropy(q, std::span(&answer, 1));
  out.total = out.task;
  if (hms.lambda_lb > 0.0) {
    const TracedSample ts{&f, &seq};
    out.lb = lower_bound_loss(g, std::span(&ts, 1), assignments, hms, stage, config);
    out.total = ad::add(out.task, ad::scale(*out.lb, hms.lambda_lb));
  }
  return out;
}

StageLog train_stage(const BaseWeights& base, AdapterSet& adapters, Stage stage,
                     const std::vector<SyntheticSample>& data, const HMSConfig& hms,
                     const UKRConfig* ukr, const HeadAssignments& assignments, AdamW& opt,
                     const StageOptions& so) {
  hms.validate();
  if (ukr) ukr->validate();
  if (so.batch_size == 0) fail_usage("batch size must be positive");
  if (!(adapters.config == base.config)) fail_usage("adapters do not match the base model");
  const Setting setting = setting_for(stage);
  std::vector<Label> labels;
  labels.reserve(data.size());
  for (const SyntheticSample& s : data) {
    const auto gold = gold_label(s, setting);
    if (!gold) {
      fail_data("sample " + std::to_string(s.id) + " lacks the label stage " + to_string(stage) +
                " trains on");
    }
    labels.push_back(*gold);
  }

  StageLog log;
  log.epoch = so.epoch;
  log.stage = stage;
  log.samples = data.size();
  if (data.empty()) {
    log.skipped = true;
    return log;
  }

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(so.seed, so.epoch, static_cast<std::uint64_t>(stage) + 0x5a));
  std::shuffle(order.begin(), order.end(), rng);

  const ModelConfig& c = base.config;
  const Model model(base, &adapters);
  ForwardOptions fo;
  fo.grad_adapters = true;

  for (std::size_t start = 0; start < order.size(); start += so.batch_size) {
    const std::size_t end = std::min(order.size(), start + so.batch_size);
    const double inv_b = 1.0 / static_cast<double>(end - start);
    AdapterSet grads = AdapterSet::zeros(c);
    std::vector<ad::Tensor*> gslots = tensors_of(grads);
    BatchLog bl;
    for (std::size_t i = start; i < end; ++i) {
      const SyntheticSample& s = data[order[i]];
      const TokenSequence seq = build_sequence(s, setting);
      ad::Graph g;
      const TracedForward f = model.forward(g, seq, fo);
      const SampleLoss loss =
          sample_objective(g, f, seq, labels[order[i]], stage, assignments, hms, c);
      bl.task_loss += loss.task.value().item() * inv_b;
      if (loss.lb) bl.lb_loss += loss.lb->value().item() * inv_b;
      bl.img_share += mean_share(f, seq, assignments.img_heads, Group::kImg, c) * inv_b;
      bl.txt_share += mean_share(f, seq, assignments.txt_heads, Group::kText, c) * inv_b;
      g.backward(ad::scale(loss.total, inv_b));
      for (std::size_t k = 0; k < f.adapter_leaves.size(); ++k) {
        const ad::Var& leaf = f.adapter_leaves[k];
        if (!g.has_grad(leaf.id)) continue;
        const ad::Tensor& gr = leaf.grad();
        ad::Tensor& dst = *gslots[k];
        for (std::size_t j = 0; j < gr.size(); ++j) dst[j] += gr[j];
      }
    }
    if (ukr) shrink_gradients(grads, assignments, stage, *ukr);
    opt.step(tensors_of(adapters), tensors_of(std::as_const(grads)));
    log.batches.push_back(bl);
  }
  return log;
}

TrainResult train_full(const BaseWeights& base, const std::vector<SyntheticSample>& train,
                       const std::vector<SyntheticSample>& test,
                       const HeadAssignments& assignments, const TrainConfig& cfg,
                       const ShareTable* shares,
                       const std::function<void(const StageLog&, const AdapterSet&)>& on_stage) {
  cfg.validate();
  HeadAssignments used = assignments;
  if (cfg.ablation.no_critical) {
    if (!shares) fail_usage("the no_critical ablation needs the base share table");
    used = select_bottom_k(*shares, assignments.k);
    used.source = assignments.source + ":bottom";
  }
  if (used.img_heads.empty() || used.txt_heads.empty()) fail_usage("empty head assignments");
  {
    HeadMask all = used.img_set();
    for (const auto& h : used.txt_heads) all.insert(h.id);
    validate_heads(base.config, all);
  }
  const std::string frozen = format_assignments_csv(assignments, "");

  HMSConfig hms = cfg.hms;
  if (cfg.ablation.no_hms) hms.lambda_lb = 0.0;
  const UKRConfig* ukr = cfg.ablation.no_ukr ? nullptr : &cfg.ukr;

  std::array<std::vector<SyntheticSample>, 3> stage_data;
  for (const SyntheticSample& s : train) {
    if (s.y_img) stage_data[static_cast<std::size_t>(Stage::kImg)].push_back(s);
    if (s.y_txt) stage_data[static_cast<std::size_t>(Stage::kText)].push_back(s);
    stage_data[static_cast<std::size_t>(Stage::kMulti)].push_back(s);
  }

  TrainResult result{AdapterSet::init(base.config, mix_seed(cfg.seed, 0xada)), {}, used};
  AdamW opt(cfg.opt, tensors_of(std::as_const(result.adapters)));
  const Model model(base, &result.adapters);

  for (std::size_t epoch = 0; epoch < cfg.plan.epochs; ++epoch) {
    for (Stage stage : kStageOrder) {
      const auto& data = stage_data[static_cast<std::size_t>(stage)];
      StageLog log = train_stage(base, result.adapters, stage, data, hms, ukr, used, opt,
                                 {cfg.plan.batch_size, cfg.seed, epoch});
      if (log.skipped) {
        result.history.notices.push_back("epoch " + std::to_string(epoch) + ": stage " +
                                         to_string(stage) + " skipped, no revealed labels");
      }
      if (on_stage) on_stage(log, result.adapters);
      result.history.stages.push_back(std::move(log));
      if (format_assignments_csv(assignments, "") != frozen) {
        fail_invariant("head assignments changed during training");
      }
    }
    const bool last = epoch + 1 == cfg.plan.epochs;
    if (!test.empty() && (cfg.eval_each_epoch || last)) {
      result.history.evals.push_back({epoch, evaluate(model, test, kAllSettings)});
    }
  }
  return result;
}

std::string format_history_csv(const TrainHistory& h, const std::string& fingerprint) {
  std::string out = "# fingerprint=" + fingerprint + "\n" +
                    "epoch,stage,batches,mean_task_loss,mean_lb_loss,multi_f1,img_only_f1,"
                    "text_only_f1\n";
  auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  std::size_t next_eval = 0;
  for (std::size_t i = 0; i < h.stages.size(); ++i) {
    const StageLog& s = h.stages[i];
    out += std::to_string(s.epoch) + "," + to_string(s.stage) + "," +
           std::to_string(s.batches.size()) + "," + num(s.mean_task()) + "," + num(s.mean_lb()) +
           ",,,\n";
    const bool epoch_end = i + 1 == h.stages.size() || h.stages[i + 1].epoch != s.epoch;
    if (epoch_end && next_eval < h.evals.size() && h.evals[next_eval].epoch == s.epoch) {
      const EvalReport& r = h.evals[next_eval++].report;
      out += std::to_string(s.epoch) + ",EVAL,,,";
      for (Setting st : kAllSettings) {
        out += ",";
        out += r.at(st) ? format_double(r.macro_f1(st)) : std::string("absent");
      }
      out += "\n";
    }
  }
  return out;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "train_corpus", "test_corpus", "budget_img", "budget_txt", "tau",     "gamma",
      "lambda_lb",    "k",           "epochs",     "batch_size", "lr",      "weight_decay",
      "seed",         "no_hms",      "no_ukr",     "no_critical", "naive",  "eval_each_epoch"};
  return k;
}

RunConfig RunConfig::from_config(const KeyValues& kv) {
  kv.require_known(keys());
  RunConfig r;
  r.train_corpus = kv.get("train_corpus", "");
  r.test_corpus = kv.get("test_corpus", "");
  r.budget.fraction_img = kv.get_double("budget_img", r.budget.fraction_img);
  r.budget.fraction_txt = kv.get_double("budget_txt", r.budget.fraction_txt);
  for (double f : {r.budget.fraction_img, r.budget.fraction_txt}) {
    if (!(f >= 0.0 && f <= 1.0)) fail_data("budget fractions must lie in [0, 1]");
  }
  TrainConfig& t = r.train;
  t.hms.tau = kv.get_double("tau", t.hms.tau);
  t.hms.lambda_lb = kv.get_double("lambda_lb", t.hms.lambda_lb);
  t.ukr.gamma = kv.get_double("gamma", t.ukr.gamma);
  auto positive = [&](const char* key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) fail_data(std::string(key) + " must be nonnegative");
    return static_cast<std::size_t>(v);
  };
  t.k = positive("k", t.k);
  t.plan.epochs = positive("epochs", t.plan.epochs);
  t.plan.batch_size = positive("batch_size", t.plan.batch_size);
  t.opt.lr = kv.get_double("lr", t.opt.lr);
  t.opt.weight_decay = kv.get_double("weight_decay", t.opt.weight_decay);
  t.seed = static_cast<std::uint64_t>(positive("seed", t.seed));
  t.ablation.no_hms = kv.get_bool("no_hms", false);
  t.ablation.no_ukr = kv.get_bool("no_ukr", false);
  t.ablation.no_critical = kv.get_bool("no_critical", false);
  if (kv.get_bool("naive", false)) {
    t.ablation.no_hms = true;
    t.ablation.no_ukr = true;
  }
  t.eval_each_epoch = kv.get_bool("eval_each_epoch", t.eval_each_epoch);
  try {
    t.validate();
  } catch (const Error& e) {
    fail_data(std::string("run config: ") + e.what());
  }
  return r;
}

}  // namespace hmslab

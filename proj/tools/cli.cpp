#include "hmslab/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <map>
#include <sstream>

#include "hmslab/checkpoint.hpp"
#include "hmslab/data.hpp"
#include "hmslab/error.hpp"
#include "hmslab/eval.hpp"
#include "hmslab/heads.hpp"
#include "hmslab/training.hpp"
#include "hmslab/util.hpp"

namespace hmslab {

namespace {

namespace fs = std::filesystem;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return "usage";
    case ErrorKind::kData: return "data";
    case ErrorKind::kInvariant: return "invariant";
  }
  return "invariant";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Provenance record of one invocation: option values, with input files
// replaced by a hash of their contents. Output paths are left out so that
// reruns into other directories agree.
class Provenance {
 public:
  explicit Provenance(std::string command) { kv_.set("command", std::move(command)); }
  void value(const std::string& key, const std::string& v) { kv_.set(key, v); }
  void file(const std::string& key, const fs::path& p) { kv_.set(key, fingerprint(read_file(p))); }
  std::string fingerprint_hex() const { return fingerprint(kv_.canonical()); }

 private:
  KeyValues kv_;
};

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      fail_usage(std::string(what) + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) fail_usage(std::string(what) + " is empty");
  return out;
}

std::vector<double> parse_doubles(const std::string& s, const char* what) {
  KeyValues kv;
  kv.set("v", s);
  try {
    return kv.get_doubles("v", {});
  } catch (const Error& e) {
    fail_usage(std::string(what) + ": " + e.what());
  }
}

std::vector<Setting> parse_settings(const std::string& s) {
  std::vector<Setting> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(parse_setting(item));
    } catch (const Error& e) {
      fail_usage(e.what());
    }
  }
  if (out.empty()) fail_usage("no settings given");
  return out;
}

ModelConfig model_config_from(const KeyValues& kv) {
  kv.require_known({"n_layers", "n_query_heads", "n_kv_heads", "head_dim", "ffn_dim",
                    "vocab_size", "max_seq_len", "adapter_rank"});
  ModelConfig c;
  auto get = [&](const char* key, std::size_t& field) {
    const long long v = kv.get_int(key, static_cast<long long>(field));
    if (v <= 0) fail_data(std::string("model config: ") + key + " must be positive");
    field = static_cast<std::size_t>(v);
  };
  get("n_layers", c.n_layers);
  get("n_query_heads", c.n_query_heads);
  get("n_kv_heads", c.n_kv_heads);
  get("head_dim", c.head_dim);
  get("ffn_dim", c.ffn_dim);
  get("vocab_size", c.vocab_size);
  get("max_seq_len", c.max_seq_len);
  get("adapter_rank", c.adapter_rank);
  try {
    c.validate();
  } catch (const Error& e) {
    fail_data(std::string("model config: ") + e.what());
  }
  return c;
}

struct Loaded {
  BaseWeights base;
  std::optional<AdapterSet> adapters;
  Model model() const { return Model(base, adapters ? &*adapters : nullptr); }
};

Loaded load_model(const std::string& base_path, const std::string& adapter_path) {
  Loaded l{load_base(base_path), std::nullopt};
  if (!adapter_path.empty()) {
    l.adapters = load_adapters(adapter_path);
    if (!(l.adapters->config == l.base.config)) {
      fail_data("adapters '" + adapter_path + "' do not match the base model config");
    }
  }
  return l;
}

// Predictions file: id,setting,label rows.
std::map<std::pair<std::uint64_t, Setting>, Label> read_predictions(const fs::path& p) {
  auto [fp, lines] = split_csv(read_file(p), p.string());
  if (lines[0] != "id,setting,label") fail_data(p.string() + ": expected header id,setting,label");
  std::map<std::pair<std::uint64_t, Setting>, Label> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::string id, setting, label;
    if (!std::getline(ss, id, ',') || !std::getline(ss, setting, ',') ||
        !std::getline(ss, label)) {
      fail_data(p.string() + ": row " + std::to_string(i) + ": expected 3 fields");
    }
    std::uint64_t v = 0;
    try {
      v = std::stoull(id);
    } catch (const std::exception&) {
      fail_data(p.string() + ": row " + std::to_string(i) + ": bad id '" + id + "'");
    }
    out[{v, parse_setting(setting)}] = parse_label(label);
  }
  return out;
}

EvalReport evaluate_predictions(const std::vector<SyntheticSample>& test,
                                const std::map<std::pair<std::uint64_t, Setting>, Label>& preds,
                                const std::vector<Setting>& settings) {
  EvalReport report;
  for (Setting st : settings) {
    std::vector<Label> p, g;
    std::size_t excluded = 0;
    for (const SyntheticSample& s : test) {
      const auto gold = gold_label(s, st);
      if (!gold) {
        ++excluded;
        continue;
      }
      const auto it = preds.find({s.id, st});
      if (it == preds.end()) {
        fail_data("no prediction for sample " + std::to_string(s.id) + " in " + to_string(st));
      }
      p.push_back(it->second);
      g.push_back(*gold);
    }
    const auto idx = static_cast<std::size_t>(st);
    report.excluded[idx] = excluded;
    if (p.empty()) continue;
    SettingReport r = score_predictions(p, g);
    r.setting = st;
    report.settings[idx] = r;
  }
  return report;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file(path, text);
  }
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

// ------------------------------------------------------------------ commands

struct GenDataArgs {
  std::string spec, out_dir;
};

void cmd_gen_data(const GenDataArgs& a, Context& ctx) {
  const CorpusSpec spec =
      a.spec.empty() ? CorpusSpec{} : CorpusSpec::from_config(KeyValues::load(a.spec));
  spec.validate();
  const Corpus c = generate_corpus(spec);
  fs::create_directories(a.out_dir);
  write_corpus(fs::path(a.out_dir) / "train.jsonl", c.train);
  write_corpus(fs::path(a.out_dir) / "test.jsonl", c.test);
  write_file(fs::path(a.out_dir) / "corpus.cfg", spec.to_config().canonical());
  ctx.err << "wrote " << c.train.size() << " train and " << c.test.size() << " test samples to "
          << a.out_dir << "\n";
}

struct PretrainArgs {
  std::string train, out, model_config;
  std::size_t steps = PretrainConfig{}.steps;
  std::size_t batch = PretrainConfig{}.batch_size;
  double lr = PretrainConfig{}.opt.lr;
  std::uint64_t seed = 1;
  std::string loss_log;
};

void cmd_pretrain(const PretrainArgs& a, Context& ctx) {
  const ModelConfig mc =
      a.model_config.empty() ? ModelConfig{} : model_config_from(KeyValues::load(a.model_config));
  mc.validate();
  const auto train = read_corpus(a.train);
  PretrainConfig pc;
  pc.steps = a.steps;
  pc.batch_size = a.batch;
  pc.opt.lr = a.lr;
  pc.seed = a.seed;
  PretrainLog log;
  const BaseWeights base = pretrain_base(BaseWeights::init(mc, a.seed), train, pc, &log);
  save_base(a.out, base);
  if (!a.loss_log.empty()) {
    Provenance prov("pretrain");
    prov.file("train", a.train);
    prov.value("steps", std::to_string(a.steps));
    prov.value("batch", std::to_string(a.batch));
    prov.value("lr", format_double(a.lr));
    prov.value("seed", std::to_string(a.seed));
    std::string csv = "# fingerprint=" + prov.fingerprint_hex() + "\nstep,loss\n";
    for (std::size_t i = 0; i < log.losses.size(); ++i) {
      csv += std::to_string(i) + "," + format_double(log.losses[i]) + "\n";
    }
    write_file(a.loss_log, csv);
  }
  ctx.err << "pretrained " << a.steps << " steps";
  if (!log.losses.empty()) ctx.err << ", final loss " << format_double(log.losses.back());
  ctx.err << "\n";
}

struct IdentifyArgs {
  std::string base, adapters, corpus, out, shares_out;
  std::size_t k = 4;
  std::string setting = "MULTI";
};

void cmd_identify(const IdentifyArgs& a, Context& ctx) {
  const Loaded l = load_model(a.base, a.adapters);
  const auto data = read_corpus(a.corpus);
  const Setting st = parse_setting(a.setting);
  const ShareTable table = aggregate_shares(l.model(), data, st);
  HeadAssignments h = select_top_k(table, a.k);
  Provenance prov("identify-heads");
  prov.file("base", a.base);
  if (!a.adapters.empty()) prov.file("adapters", a.adapters);
  prov.file("corpus", a.corpus);
  prov.value("k", std::to_string(a.k));
  prov.value("setting", a.setting);
  const std::string fp = prov.fingerprint_hex();
  write_text(a.out, format_assignments_csv(h, fp), ctx.out);
  if (!a.shares_out.empty()) write_file(a.shares_out, format_share_table_csv(table, fp));
}

struct TrainArgs {
  std::string base, heads, config, train, test, adapters_out, history, shares;
};

void cmd_train(const TrainArgs& a, Context& ctx) {
  const KeyValues kv = KeyValues::load(a.config);
  RunConfig rc = RunConfig::from_config(kv);
  if (!a.train.empty()) rc.train_corpus = a.train;
  if (!a.test.empty()) rc.test_corpus = a.test;
  if (rc.train_corpus.empty()) fail_usage("no training corpus (set train_corpus or --train)");
  const BaseWeights base = load_base(a.base);
  HeadAssignments heads = parse_assignments_csv(read_file(a.heads), a.heads);
  if (heads.k != rc.train.k) {
    fail_usage("head file holds K=" + std::to_string(heads.k) + " but the run config asks for K=" +
               std::to_string(rc.train.k));
  }
  const auto full_train = read_corpus(rc.train_corpus);
  const auto train = apply_budget(full_train, rc.budget, rc.train.seed);
  const auto test = rc.test_corpus.empty() ? std::vector<SyntheticSample>{}
                                           : read_corpus(rc.test_corpus);
  std::optional<ShareTable> shares;
  if (rc.train.ablation.no_critical) {
    shares = a.shares.empty() ? aggregate_shares(Model(base, nullptr), full_train, Setting::kMulti)
                              : parse_share_table_csv(read_file(a.shares), a.shares);
  }
  const TrainResult r =
      train_full(base, train, test, heads, rc.train, shares ? &*shares : nullptr,
                 [&](const StageLog& s, const AdapterSet&) {
                   ctx.err << "epoch " << s.epoch << " " << to_string(s.stage);
                   if (s.skipped) {
                     ctx.err << " skipped (no revealed labels)\n";
                   } else {
                     ctx.err << " task=" << format_double(s.mean_task())
                             << " lb=" << format_double(s.mean_lb()) << "\n";
                   }
                 });
  save_adapters(a.adapters_out, r.adapters);
  Provenance prov("train");
  prov.file("base", a.base);
  prov.file("heads", a.heads);
  prov.file("train_corpus", rc.train_corpus);
  if (!rc.test_corpus.empty()) prov.file("test_corpus", rc.test_corpus);
  for (const std::string& key : RunConfig::keys()) {
    if (key != "train_corpus" && key != "test_corpus" && kv.has(key)) {
      prov.value("cfg." + key, kv.get(key, ""));
    }
  }
  if (!a.history.empty()) write_file(a.history, format_history_csv(r.history, prov.fingerprint_hex()));
}

struct EvalArgs {
  std::string base, adapters, test, predictions, out;
  std::string settings = "MULTI,IMG_ONLY,TEXT_ONLY";
};

void cmd_eval(const EvalArgs& a, Context& ctx) {
  const auto test = read_corpus(a.test);
  const auto settings = parse_settings(a.settings);
  EvalReport report;
  if (!a.predictions.empty()) {
    if (!a.base.empty()) fail_usage("give either --base or --predictions, not both");
    report = evaluate_predictions(test, read_predictions(a.predictions), settings);
  } else {
    if (a.base.empty()) fail_usage("eval needs --base or --predictions");
    const Loaded l = load_model(a.base, a.adapters);
    report = evaluate(l.model(), test, settings);
  }
  write_text(a.out, report.to_text(), ctx.out);
}

struct SweepMaskArgs {
  std::string base, adapters, heads, test, out;
  std::string setting = "IMG_ONLY";
  std::string ks = "0,2,4";
  std::size_t n_random = 5;
  std::uint64_t seed = 7;
};

void cmd_mask_sweep(const SweepMaskArgs& a, Context& ctx) {
  const Loaded l = load_model(a.base, a.adapters);
  const HeadAssignments heads = parse_assignments_csv(read_file(a.heads), a.heads);
  const auto test = read_corpus(a.test);
  SweepOptions opts;
  opts.ks = parse_sizes(a.ks, "--ks");
  opts.n_random = a.n_random;
  opts.seed = a.seed;
  const auto rows = mask_sweep(l.model(), test, heads, parse_setting(a.setting), opts);
  Provenance prov("mask-sweep");
  prov.file("base", a.base);
  if (!a.adapters.empty()) prov.file("adapters", a.adapters);
  prov.file("heads", a.heads);
  prov.file("test", a.test);
  prov.value("setting", a.setting);
  prov.value("ks", a.ks);
  prov.value("n_random", std::to_string(a.n_random));
  prov.value("seed", std::to_string(a.seed));
  write_text(a.out, format_sweep_csv(rows, prov.fingerprint_hex()), ctx.out);
}

struct ExportArgs {
  std::string base, adapters, corpus, out_dir;
  std::string setting = "MULTI";
  std::size_t top_n = 16;
};

void cmd_export(const ExportArgs& a, Context& ctx) {
  const Loaded l = load_model(a.base, a.adapters);
  const auto data = read_corpus(a.corpus);
  const ShareTable t = aggregate_shares(l.model(), data, parse_setting(a.setting));
  Provenance prov("export-shares");
  prov.file("base", a.base);
  if (!a.adapters.empty()) prov.file("adapters", a.adapters);
  prov.file("corpus", a.corpus);
  prov.value("setting", a.setting);
  prov.value("top_n", std::to_string(a.top_n));
  const std::string fp = prov.fingerprint_hex();
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  export_heatmap(t, Group::kImg, dir / "heatmap_img.csv", fp);
  export_heatmap(t, Group::kText, dir / "heatmap_text.csv", fp);
  const std::vector<std::pair<std::string, ShareTable>> named = {{a.setting, t}};
  export_ranked_curve(named, Group::kImg, a.top_n, dir / "ranked_img.csv", fp);
  export_ranked_curve(named, Group::kText, a.top_n, dir / "ranked_text.csv", fp);
  write_file(dir / "shares.csv", format_share_table_csv(t, fp));
  ctx.err << "wrote share exports to " << a.out_dir << "\n";
}

struct StatsArgs {
  std::string heads_a, heads_b, shares_a, shares_b, out;
};

void cmd_stats(const StatsArgs& a, Context& ctx) {
  const HeadAssignments ha = parse_assignments_csv(read_file(a.heads_a), a.heads_a);
  const HeadAssignments hb = parse_assignments_csv(read_file(a.heads_b), a.heads_b);
  const ShareTable sa = parse_share_table_csv(read_file(a.shares_a), a.shares_a);
  const ShareTable sb = parse_share_table_csv(read_file(a.shares_b), a.shares_b);
  std::vector<std::pair<std::string, OverlapStats>> rows;
  rows.emplace_back("img", overlap_stats(ha.img_heads, hb.img_heads, sa.scores(Group::kImg),
                                         sb.scores(Group::kImg)));
  rows.emplace_back("text", overlap_stats(ha.txt_heads, hb.txt_heads, sa.scores(Group::kText),
                                          sb.scores(Group::kText)));
  Provenance prov("stats");
  prov.file("heads_a", a.heads_a);
  prov.file("heads_b", a.heads_b);
  prov.file("shares_a", a.shares_a);
  prov.file("shares_b", a.shares_b);
  write_text(a.out, format_overlap_csv(rows, prov.fingerprint_hex()), ctx.out);
}

struct GridArgs {
  std::string base, heads, config, train, test, out;
  std::string taus = "0.2,0.4";
  std::string gammas = "0.2,0.4,0.6";
};

void cmd_sweep(const GridArgs& a, Context& ctx) {
  const KeyValues kv = KeyValues::load(a.config);
  RunConfig rc = RunConfig::from_config(kv);
  if (!a.train.empty()) rc.train_corpus = a.train;
  if (!a.test.empty()) rc.test_corpus = a.test;
  if (rc.train_corpus.empty() || rc.test_corpus.empty()) {
    fail_usage("sweep needs both a training and a test corpus");
  }
  const auto taus = parse_doubles(a.taus, "--taus");
  const auto gammas = parse_doubles(a.gammas, "--gammas");
  const BaseWeights base = load_base(a.base);
  const HeadAssignments heads = parse_assignments_csv(read_file(a.heads), a.heads);
  const auto full_train = read_corpus(rc.train_corpus);
  const auto train = apply_budget(full_train, rc.budget, rc.train.seed);
  const auto test = read_corpus(rc.test_corpus);
  std::optional<ShareTable> shares;
  if (rc.train.ablation.no_critical) {
    shares = aggregate_shares(Model(base, nullptr), full_train, Setting::kMulti);
  }
  Provenance prov("sweep");
  prov.file("base", a.base);
  prov.file("heads", a.heads);
  prov.file("train_corpus", rc.train_corpus);
  prov.file("test_corpus", rc.test_corpus);
  for (const std::string& key : RunConfig::keys()) {
    if (key != "train_corpus" && key != "test_corpus" && kv.has(key)) {
      prov.value("cfg." + key, kv.get(key, ""));
    }
  }
  prov.value("taus", join(taus));
  prov.value("gammas", join(gammas));
  std::string csv = "# fingerprint=" + prov.fingerprint_hex() +
                    "\ntau,gamma,multi_f1,img_only_f1,text_only_f1\n";
  for (double tau : taus) {
    for (double gamma : gammas) {
      TrainConfig tc = rc.train;
      tc.hms.tau = tau;
      tc.ukr.gamma = gamma;
      tc.eval_each_epoch = false;
      const TrainResult r = train_full(base, train, test, heads, tc, shares ? &*shares : nullptr);
      const EvalReport& rep = r.history.evals.back().report;
      csv += format_double(tau) + "," + format_double(gamma);
      for (Setting st : kAllSettings) {
        csv += ",";
        csv += rep.at(st) ? format_double(rep.macro_f1(st)) : std::string("absent");
      }
      csv += "\n";
      ctx.err << "tau=" << format_double(tau) << " gamma=" << format_double(gamma) << " done\n";
    }
  }
  write_text(a.out, csv, ctx.out);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"hmslab: head-wise modality specialization experiments", "hmslab"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  c_gen->add_option("--spec", gen.spec, "corpus spec (key=value); defaults if omitted");
  c_gen->add_option("--out", gen.out_dir, "output directory")->required();

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "pretrain base weights");
  c_pre->add_option("--train", pre.train, "training corpus (.jsonl)")->required();
  c_pre->add_option("--out", pre.out, "base checkpoint to write")->required();
  c_pre->add_option("--model-config", pre.model_config, "model config (key=value)");
  c_pre->add_option("--steps", pre.steps, "optimizer steps")->capture_default_str();
  c_pre->add_option("--batch", pre.batch, "sequences per step")->capture_default_str();
  c_pre->add_option("--lr", pre.lr, "learning rate")->capture_default_str();
  c_pre->add_option("--seed", pre.seed, "seed")->capture_default_str();
  c_pre->add_option("--loss-log", pre.loss_log, "per-step loss CSV");

  IdentifyArgs idf;
  auto* c_idf = app.add_subcommand("identify-heads", "rank heads and select the top K");
  c_idf->add_option("--base", idf.base, "base checkpoint")->required();
  c_idf->add_option("--adapters", idf.adapters, "adapter checkpoint");
  c_idf->add_option("--corpus", idf.corpus, "corpus to probe (.jsonl)")->required();
  c_idf->add_option("--k", idf.k, "heads per modality")->capture_default_str();
  c_idf->add_option("--setting", idf.setting, "input setting")->capture_default_str();
  c_idf->add_option("--out", idf.out, "assignment CSV (default stdout)");
  c_idf->add_option("--shares-out", idf.shares_out, "share table CSV");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "stage-wise adapter training");
  c_tr->add_option("--base", tr.base, "base checkpoint")->required();
  c_tr->add_option("--heads", tr.heads, "assignment CSV")->required();
  c_tr->add_option("--config", tr.config, "run config (key=value)")->required();
  c_tr->add_option("--train", tr.train, "training corpus, overrides train_corpus");
  c_tr->add_option("--test", tr.test, "test corpus, overrides test_corpus");
  c_tr->add_option("--shares", tr.shares, "base share table for no_critical");
  c_tr->add_option("--out", tr.adapters_out, "adapter checkpoint to write")->required();
  c_tr->add_option("--history", tr.history, "history CSV");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "three-setting evaluation");
  c_ev->add_option("--base", ev.base, "base checkpoint");
  c_ev->add_option("--adapters", ev.adapters, "adapter checkpoint");
  c_ev->add_option("--predictions", ev.predictions, "external predictions CSV (id,setting,label)");
  c_ev->add_option("--test", ev.test, "test corpus (.jsonl)")->required();
  c_ev->add_option("--settings", ev.settings, "comma-separated settings")->capture_default_str();
  c_ev->add_option("--out", ev.out, "report file (default stdout)");

  SweepMaskArgs ms;
  auto* c_ms = app.add_subcommand("mask-sweep", "ranked vs random head masking");
  c_ms->add_option("--base", ms.base, "base checkpoint")->required();
  c_ms->add_option("--adapters", ms.adapters, "adapter checkpoint");
  c_ms->add_option("--heads", ms.heads, "assignment CSV")->required();
  c_ms->add_option("--test", ms.test, "test corpus (.jsonl)")->required();
  c_ms->add_option("--setting", ms.setting, "IMG_ONLY or TEXT_ONLY")->capture_default_str();
  c_ms->add_option("--ks", ms.ks, "ascending mask sizes")->capture_default_str();
  c_ms->add_option("--n-random", ms.n_random, "random draws per k")->capture_default_str();
  c_ms->add_option("--seed", ms.seed, "seed")->capture_default_str();
  c_ms->add_option("--out", ms.out, "sweep CSV (default stdout)");

  ExportArgs ex;
  auto* c_ex = app.add_subcommand("export-shares", "heatmap and ranked-curve CSVs");
  c_ex->add_option("--base", ex.base, "base checkpoint")->required();
  c_ex->add_option("--adapters", ex.adapters, "adapter checkpoint");
  c_ex->add_option("--corpus", ex.corpus, "corpus to probe (.jsonl)")->required();
  c_ex->add_option("--setting", ex.setting, "input setting")->capture_default_str();
  c_ex->add_option("--top-n", ex.top_n, "ranks per curve")->capture_default_str();
  c_ex->add_option("--out-dir", ex.out_dir, "output directory")->required();

  StatsArgs stt;
  auto* c_st = app.add_subcommand("stats", "overlap statistics between two head sets");
  c_st->add_option("--heads-a", stt.heads_a, "earlier assignment CSV")->required();
  c_st->add_option("--heads-b", stt.heads_b, "later assignment CSV")->required();
  c_st->add_option("--shares-a", stt.shares_a, "earlier share table CSV")->required();
  c_st->add_option("--shares-b", stt.shares_b, "later share table CSV")->required();
  c_st->add_option("--out", stt.out, "overlap CSV (default stdout)");

  GridArgs gr;
  auto* c_gr = app.add_subcommand("sweep", "tau x gamma sensitivity grid");
  c_gr->add_option("--base", gr.base, "base checkpoint")->required();
  c_gr->add_option("--heads", gr.heads, "assignment CSV")->required();
  c_gr->add_option("--config", gr.config, "run config (key=value)")->required();
  c_gr->add_option("--train", gr.train, "training corpus");
  c_gr->add_option("--test", gr.test, "test corpus");
  c_gr->add_option("--taus", gr.taus, "comma-separated tau values")->capture_default_str();
  c_gr->add_option("--gammas", gr.gammas, "comma-separated gamma values")->capture_default_str();
  c_gr->add_option("--out", gr.out, "grid CSV (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    err << "error: code=1 kind=usage msg=" << one_line(e.what()) << "\n";
    return 1;
  }

  try {
    if (*c_gen) cmd_gen_data(gen, ctx);
    else if (*c_pre) cmd_pretrain(pre, ctx);
    else if (*c_idf) cmd_identify(idf, ctx);
    else if (*c_tr) cmd_train(tr, ctx);
    else if (*c_ev) cmd_eval(ev, ctx);
    else if (*c_ms) cmd_mask_sweep(ms, ctx);
    else if (*c_ex) cmd_export(ex, ctx);
    else if (*c_st) cmd_stats(stt, ctx);
    else if (*c_gr) cmd_sweep(gr, ctx);
  } catch (const Error& e) {
    err << "error: code=" << static_cast<int>(e.kind()) << " kind=" << kind_name(e.kind())
        << " msg=" << one_line(e.what()) << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: code=2 kind=data msg=" << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: code=3 kind=invariant msg=" << one_line(e.what()) << "\n";
    return 3;
  }
  return 0;
}

}  // namespace hmslab
